//! Tab-separated sidecar files. Every file starts with a fixed header row;
//! `#` lines are comments; `-` marks a missing value. Floats are written in
//! their shortest exact decimal form.

use std::collections::BTreeSet;
use std::path::Path;

use super::{fmt_f64, read_text, write_atomic};
use crate::error::{Error, Result};
use crate::grid::Aabb;
use crate::metrics::VertebraMetrics;
use crate::model::{
    AnatomicGroup, InconsistencyKind, InconsistencyReport, LocalPrediction, RecordFlag, VertebraLabel, VertebraRecord,
    PROBABILITY_SUM_TOLERANCE,
};
use crate::priors::{AnnotatedVertebra, ScanAnnotation};

pub(crate) const MISSING: &str = "-";

pub const LOCATION_COLUMNS: [&str; 5] = ["label", "x_mm", "y_mm", "z_mm", "flags"];
pub const LABEL_COLUMNS: [&str; 2] = ["index", "label"];
pub const REPORT_COLUMNS: [&str; 8] = ["kind", "x_min", "y_min", "z_min", "x_max", "y_max", "z_max", "detail"];
pub const ANNOTATION_COLUMNS: [&str; 6] = ["scan_id", "label", "volume_mm3", "x_mm", "y_mm", "z_mm"];
pub const METRIC_COLUMNS: [&str; 5] = ["label", "identified", "distance_mm", "dice", "hausdorff_mm"];

/// `p_cervical p_thoracic p_lumbar C1 … C7 T1 … T12 L1 … L5`.
pub fn probability_columns() -> Vec<String> {
    let mut cols: Vec<String> = AnatomicGroup::ALL.iter().map(|g| format!("p_{g}")).collect();
    for g in AnatomicGroup::ALL {
        cols.extend(g.labels().map(|l| l.name()));
    }
    cols
}

/// One data row: its fields.
pub(crate) type Row = Vec<String>;

/// Parsed rows with their 1-based file line numbers.
pub(crate) struct Table<'a> {
    origin: &'a str,
    pub(crate) header: Vec<String>,
    pub(crate) rows: Vec<(usize, Row)>,
}

impl<'a> Table<'a> {
    pub(crate) fn parse(text: &str, origin: &'a str, expected: &[&str]) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, h) = lines.next().ok_or_else(|| Error::schema(origin, 1, "header", "file is empty"))?;
        let header: Vec<String> = h.split('\t').map(str::to_string).collect();
        if header != expected {
            let first = header.iter().zip(expected).position(|(a, b)| a != b).unwrap_or(expected.len().min(header.len()));
            return Err(Error::schema(
                origin,
                hline,
                expected.get(first).copied().unwrap_or("header"),
                format!("header must be `{}`", expected.join("\\t")),
            ));
        }
        let mut rows = Vec::new();
        for (line, l) in lines {
            let fields: Row = l.split('\t').map(str::to_string).collect();
            if fields.len() != header.len() {
                let col = fields.len().min(header.len() - 1);
                return Err(Error::schema(
                    origin,
                    line,
                    header[col].clone(),
                    format!("expected {} fields, found {}", header.len(), fields.len()),
                ));
            }
            rows.push((line, fields));
        }
        Ok(Table { origin, header, rows })
    }

    pub(crate) fn err(&self, line: usize, col: usize, detail: impl Into<String>) -> Error {
        Error::schema(self.origin, line, self.header[col].clone(), detail)
    }

    pub(crate) fn f64_at(&self, line: usize, r: &Row, col: usize) -> Result<f64> {
        let s = &r[col];
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.err(line, col, format!("`{s}` is not a finite number"))),
        }
    }

    pub(crate) fn opt_f64_at(&self, line: usize, r: &Row, col: usize) -> Result<Option<f64>> {
        if r[col] == MISSING {
            Ok(None)
        } else {
            self.f64_at(line, r, col).map(Some)
        }
    }

    pub(crate) fn label_at(&self, line: usize, r: &Row, col: usize) -> Result<Option<VertebraLabel>> {
        match r[col].as_str() {
            MISSING => Ok(None),
            s => s.parse().map(Some).map_err(|e: Error| self.err(line, col, e.to_string())),
        }
    }
}

/// Tabs and line breaks inside free text would break the row structure.
fn clean(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

pub(crate) fn write_table(path: &Path, header: &[String], rows: Vec<Vec<String>>) -> Result<()> {
    let mut out = header.join("\t");
    out.push('\n');
    for r in rows {
        let r: Vec<String> = r.iter().map(|f| clean(f)).collect();
        out.push_str(&r.join("\t"));
        out.push('\n');
    }
    write_atomic(path, |w| w.write_all(out.as_bytes()))
}

pub(crate) fn owned(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

fn label_str(l: Option<VertebraLabel>) -> String {
    l.map_or_else(|| MISSING.to_string(), |l| l.name())
}

fn opt_str(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING.to_string(), fmt_f64)
}

fn flag_name(f: RecordFlag) -> &'static str {
    match f {
        RecordFlag::EmptySegmentation => "empty_segmentation",
        RecordFlag::DistanceAnomaly => "distance_anomaly",
        RecordFlag::VolumeAnomaly => "volume_anomaly",
        RecordFlag::LabelRepeat => "label_repeat",
    }
}

fn parse_flag(s: &str) -> Option<RecordFlag> {
    [
        RecordFlag::EmptySegmentation,
        RecordFlag::DistanceAnomaly,
        RecordFlag::VolumeAnomaly,
        RecordFlag::LabelRepeat,
    ]
    .into_iter()
    .find(|f| flag_name(*f) == s)
}

// ---- locations ----

pub fn write_locations(path: &Path, records: &[VertebraRecord]) -> Result<()> {
    let rows = records
        .iter()
        .map(|r| {
            let flags: Vec<&str> = r.flags.iter().map(|f| flag_name(*f)).collect();
            vec![
                label_str(r.label),
                fmt_f64(r.location[0]),
                fmt_f64(r.location[1]),
                fmt_f64(r.location[2]),
                if flags.is_empty() { MISSING.to_string() } else { flags.join(",") },
            ]
        })
        .collect();
    write_table(path, &owned(&LOCATION_COLUMNS), rows)
}

/// Records without masks, in file order.
pub fn parse_locations(text: &str, origin: &str) -> Result<Vec<VertebraRecord>> {
    let t = Table::parse(text, origin, &LOCATION_COLUMNS)?;
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, r) in &t.rows {
        let mut rec = VertebraRecord::at([t.f64_at(*line, r, 1)?, t.f64_at(*line, r, 2)?, t.f64_at(*line, r, 3)?]);
        rec.label = t.label_at(*line, r, 0)?;
        if r[4] != MISSING {
            let mut flags = BTreeSet::new();
            for f in r[4].split(',') {
                flags.insert(parse_flag(f).ok_or_else(|| t.err(*line, 4, format!("unknown flag `{f}`")))?);
            }
            rec.flags = flags;
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_locations(path: &Path) -> Result<Vec<VertebraRecord>> {
    parse_locations(&read_text(path)?, &path.display().to_string())
}

// ---- probabilities ----

pub fn write_probabilities(path: &Path, predictions: &[LocalPrediction]) -> Result<()> {
    let rows = predictions
        .iter()
        .map(|p| {
            let mut row: Vec<String> = p.group_probs().iter().map(|v| fmt_f64(*v)).collect();
            for g in AnatomicGroup::ALL {
                row.extend(p.within(g).iter().map(|v| fmt_f64(*v)));
            }
            row
        })
        .collect();
    write_table(path, &probability_columns(), rows)
}

/// Reads the 27 probability columns starting at `offset`.
pub(crate) fn prediction_at(t: &Table, line: usize, r: &Row, offset: usize) -> Result<LocalPrediction> {
    let n = 3 + AnatomicGroup::ALL.iter().map(|g| g.len()).sum::<usize>();
    let mut v = Vec::with_capacity(n);
    for c in offset..offset + n {
        let x = t.f64_at(line, r, c)?;
        if !(0.0..=1.0).contains(&x) {
            return Err(t.err(line, c, format!("{x} outside [0, 1]")));
        }
        v.push(x);
    }
    // vector spans: group probabilities, then one block per group
    let mut spans = vec![(0usize, 3usize)];
    let mut start = 3;
    for g in AnatomicGroup::ALL {
        spans.push((start, start + g.len()));
        start += g.len();
    }
    for &(a, b) in &spans {
        let sum: f64 = v[a..b].iter().sum();
        if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            return Err(t.err(
                line,
                offset + a,
                format!("`{}`..`{}` sum to {sum}, expected 1", t.header[offset + a], t.header[offset + b - 1]),
            ));
        }
    }
    LocalPrediction::new(
        [v[0], v[1], v[2]],
        &v[spans[1].0..spans[1].1],
        &v[spans[2].0..spans[2].1],
        &v[spans[3].0..spans[3].1],
    )
    .map_err(|e| t.err(line, offset, e.to_string()))
}

pub fn parse_probabilities(text: &str, origin: &str) -> Result<Vec<LocalPrediction>> {
    let cols = probability_columns();
    let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let t = Table::parse(text, origin, &refs)?;
    t.rows.iter().map(|(line, r)| prediction_at(&t, *line, r, 0)).collect()
}

pub fn read_probabilities(path: &Path) -> Result<Vec<LocalPrediction>> {
    parse_probabilities(&read_text(path)?, &path.display().to_string())
}

// ---- labels ----

pub fn write_labels(path: &Path, labels: &[Option<VertebraLabel>]) -> Result<()> {
    let rows = labels
        .iter()
        .enumerate()
        .map(|(i, l)| vec![i.to_string(), label_str(*l)])
        .collect();
    write_table(path, &owned(&LABEL_COLUMNS), rows)
}

pub fn parse_labels(text: &str, origin: &str) -> Result<Vec<Option<VertebraLabel>>> {
    let t = Table::parse(text, origin, &LABEL_COLUMNS)?;
    let mut out = Vec::with_capacity(t.rows.len());
    for (i, (line, r)) in t.rows.iter().enumerate() {
        if r[0].parse::<usize>().ok() != Some(i) {
            return Err(t.err(*line, 0, format!("expected index {i}, got `{}`", r[0])));
        }
        out.push(t.label_at(*line, r, 1)?);
    }
    Ok(out)
}

pub fn read_labels(path: &Path) -> Result<Vec<Option<VertebraLabel>>> {
    parse_labels(&read_text(path)?, &path.display().to_string())
}

// ---- report ----

pub fn write_report(path: &Path, report: &InconsistencyReport) -> Result<()> {
    let rows = report
        .entries
        .iter()
        .map(|e| {
            let mut row = vec![e.kind.as_str().to_string()];
            row.extend(e.region.min.iter().chain(&e.region.max).map(|v| fmt_f64(*v)));
            row.push(e.detail.clone());
            row
        })
        .collect();
    write_table(path, &owned(&REPORT_COLUMNS), rows)
}

pub fn parse_report(text: &str, origin: &str) -> Result<InconsistencyReport> {
    let t = Table::parse(text, origin, &REPORT_COLUMNS)?;
    let mut report = InconsistencyReport::default();
    for (line, r) in &t.rows {
        let kind: InconsistencyKind = r[0].parse().map_err(|e: Error| t.err(*line, 0, e.to_string()))?;
        let mut c = [0.0; 6];
        for (k, slot) in c.iter_mut().enumerate() {
            *slot = t.f64_at(*line, r, k + 1)?;
        }
        let region = Aabb {
            min: [c[0], c[1], c[2]],
            max: [c[3], c[4], c[5]],
        };
        report.push(region, kind, r[7].to_string());
    }
    Ok(report)
}

pub fn read_report(path: &Path) -> Result<InconsistencyReport> {
    parse_report(&read_text(path)?, &path.display().to_string())
}

// ---- annotations (fit-stats input) ----

pub fn write_annotations(path: &Path, scans: &[ScanAnnotation]) -> Result<()> {
    let rows = scans
        .iter()
        .flat_map(|s| {
            s.vertebrae.iter().map(move |v| {
                vec![
                    s.scan_id.clone(),
                    v.label.name(),
                    fmt_f64(v.volume_mm3),
                    fmt_f64(v.centroid[0]),
                    fmt_f64(v.centroid[1]),
                    fmt_f64(v.centroid[2]),
                ]
            })
        })
        .collect();
    write_table(path, &owned(&ANNOTATION_COLUMNS), rows)
}

/// Groups rows by scan id, keeping first-appearance order.
pub fn parse_annotations(text: &str, origin: &str) -> Result<Vec<ScanAnnotation>> {
    let t = Table::parse(text, origin, &ANNOTATION_COLUMNS)?;
    let mut scans: Vec<ScanAnnotation> = Vec::new();
    for (line, r) in &t.rows {
        let label = t.label_at(*line, r, 1)?.ok_or_else(|| t.err(*line, 1, "label is required"))?;
        let volume = t.f64_at(*line, r, 2)?;
        if volume <= 0.0 {
            return Err(t.err(*line, 2, "volume must be positive"));
        }
        let v = AnnotatedVertebra {
            label,
            volume_mm3: volume,
            centroid: [t.f64_at(*line, r, 3)?, t.f64_at(*line, r, 4)?, t.f64_at(*line, r, 5)?],
        };
        match scans.iter_mut().find(|s| s.scan_id == r[0]) {
            Some(s) => s.vertebrae.push(v),
            None => scans.push(ScanAnnotation {
                scan_id: r[0].to_string(),
                vertebrae: vec![v],
            }),
        }
    }
    Ok(scans)
}

pub fn read_annotations(path: &Path) -> Result<Vec<ScanAnnotation>> {
    parse_annotations(&read_text(path)?, &path.display().to_string())
}

// ---- metrics ----

pub fn write_metrics(path: &Path, rows: &[VertebraMetrics]) -> Result<()> {
    let rows = rows
        .iter()
        .map(|m| {
            vec![
                m.label.name(),
                m.identified.to_string(),
                opt_str(m.distance_mm),
                opt_str(m.dice),
                opt_str(m.hausdorff_mm),
            ]
        })
        .collect();
    write_table(path, &owned(&METRIC_COLUMNS), rows)
}

pub fn parse_metrics(text: &str, origin: &str) -> Result<Vec<VertebraMetrics>> {
    let t = Table::parse(text, origin, &METRIC_COLUMNS)?;
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, r) in &t.rows {
        out.push(VertebraMetrics {
            label: t.label_at(*line, r, 0)?.ok_or_else(|| t.err(*line, 0, "label is required"))?,
            identified: r[1].parse().map_err(|_| t.err(*line, 1, "expected true or false"))?,
            distance_mm: t.opt_f64_at(*line, r, 2)?,
            dice: t.opt_f64_at(*line, r, 3)?,
            hausdorff_mm: t.opt_f64_at(*line, r, 4)?,
        });
    }
    Ok(out)
}
