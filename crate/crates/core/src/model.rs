//! Label taxonomy, anatomic grouping, and the records shared by every stage.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Aabb, AxisCode, CompactMask, VolumeGrid};

/// Number of labels the identification graph works with (C1..L5).
pub const GRAPH_LABELS: usize = 24;

/// Probability vectors must sum to one within this tolerance before they are
/// renormalized.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-6;

/// Vertebra identity. Codes 1..=24 are C1..C7, T1..T12, L1..L5; 25 is T13 and
/// 26 is L6, which only appear after transitional post-processing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VertebraLabel(u8);

impl VertebraLabel {
    pub const C1: VertebraLabel = VertebraLabel(1);
    pub const C7: VertebraLabel = VertebraLabel(7);
    pub const T1: VertebraLabel = VertebraLabel(8);
    pub const T10: VertebraLabel = VertebraLabel(17);
    pub const T11: VertebraLabel = VertebraLabel(18);
    pub const T12: VertebraLabel = VertebraLabel(19);
    pub const L1: VertebraLabel = VertebraLabel(20);
    pub const L4: VertebraLabel = VertebraLabel(23);
    pub const L5: VertebraLabel = VertebraLabel(24);
    pub const T13: VertebraLabel = VertebraLabel(25);
    pub const L6: VertebraLabel = VertebraLabel(26);

    pub fn new(code: u8) -> Result<Self> {
        if (1..=26).contains(&code) {
            Ok(VertebraLabel(code))
        } else {
            Err(Error::Range(format!("vertebra code {code} outside 1..=26")))
        }
    }

    /// Label for a zero-based row of the identification graph.
    pub fn from_graph_index(row: usize) -> Result<Self> {
        if row < GRAPH_LABELS {
            Ok(VertebraLabel(row as u8 + 1))
        } else {
            Err(Error::Range(format!("graph row {row} outside 0..24")))
        }
    }

    pub fn code(self) -> u8 {
        self.0
    }

    pub fn is_graph_space(self) -> bool {
        self.0 <= GRAPH_LABELS as u8
    }

    /// Zero-based graph row; `None` for T13/L6.
    pub fn graph_index(self) -> Option<usize> {
        self.is_graph_space().then(|| self.0 as usize - 1)
    }

    pub fn group(self) -> AnatomicGroup {
        match self.0 {
            1..=7 => AnatomicGroup::Cervical,
            8..=19 | 25 => AnatomicGroup::Thoracic,
            _ => AnatomicGroup::Lumbar,
        }
    }

    /// Position inside the group's classifier output; `None` for T13/L6.
    pub fn within_group_index(self) -> Option<usize> {
        self.graph_index()
            .map(|row| row - self.group().first_graph_index())
    }

    /// Next label in graph space.
    pub fn successor(self) -> Result<Self> {
        if (1..GRAPH_LABELS as u8).contains(&self.0) {
            Ok(VertebraLabel(self.0 + 1))
        } else {
            Err(Error::Range(format!("{self} has no successor in graph space")))
        }
    }

    /// Graph-space label a transitional label is reported as by a classifier
    /// trained without transitional classes.
    pub fn merged(self) -> Self {
        match self {
            VertebraLabel::T13 => VertebraLabel::T12,
            VertebraLabel::L6 => VertebraLabel::L5,
            other => other,
        }
    }

    /// Continuous level along the column: T13 sits between T12 and L1, L6
    /// below L5.
    pub fn level(self) -> f64 {
        match self {
            VertebraLabel::T13 => 19.5,
            VertebraLabel::L6 => 25.0,
            other => other.0 as f64,
        }
    }

    pub fn name(self) -> String {
        match self.0 {
            c @ 1..=7 => format!("C{c}"),
            c @ 8..=19 => format!("T{}", c - 7),
            c @ 20..=24 => format!("L{}", c - 19),
            25 => "T13".to_string(),
            _ => "L6".to_string(),
        }
    }
}

impl fmt::Display for VertebraLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for VertebraLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Range(format!("unknown vertebra label `{s}`"));
        let (prefix, num) = s.split_at_checked(1).ok_or_else(bad)?;
        let n: u8 = num.parse().map_err(|_| bad())?;
        let code = match (prefix, n) {
            ("C", 1..=7) => n,
            ("T", 1..=12) => n + 7,
            ("T", 13) => 25,
            ("L", 1..=5) => n + 19,
            ("L", 6) => 26,
            _ => return Err(bad()),
        };
        Ok(VertebraLabel(code))
    }
}

impl Serialize for VertebraLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for VertebraLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnatomicGroup {
    Cervical,
    Thoracic,
    Lumbar,
}

impl AnatomicGroup {
    pub const ALL: [AnatomicGroup; 3] = [
        AnatomicGroup::Cervical,
        AnatomicGroup::Thoracic,
        AnatomicGroup::Lumbar,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Number of graph-space labels in the group (7/12/5).
    pub fn len(self) -> usize {
        match self {
            AnatomicGroup::Cervical => 7,
            AnatomicGroup::Thoracic => 12,
            AnatomicGroup::Lumbar => 5,
        }
    }

    pub fn first_graph_index(self) -> usize {
        match self {
            AnatomicGroup::Cervical => 0,
            AnatomicGroup::Thoracic => 7,
            AnatomicGroup::Lumbar => 19,
        }
    }

    pub fn label_at(self, within: usize) -> Result<VertebraLabel> {
        if within < self.len() {
            VertebraLabel::from_graph_index(self.first_graph_index() + within)
        } else {
            Err(Error::Range(format!("{self} has no label at position {within}")))
        }
    }

    pub fn labels(self) -> impl Iterator<Item = VertebraLabel> {
        let start = self.first_graph_index();
        (start..start + self.len()).map(|r| VertebraLabel(r as u8 + 1))
    }
}

impl fmt::Display for AnatomicGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnatomicGroup::Cervical => "cervical",
            AnatomicGroup::Thoracic => "thoracic",
            AnatomicGroup::Lumbar => "lumbar",
        })
    }
}

pub fn successor(label: VertebraLabel) -> Result<VertebraLabel> {
    label.successor()
}

pub fn group_of(label: VertebraLabel) -> AnatomicGroup {
    label.group()
}

fn normalized(name: &str, v: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = v.iter().find(|p| !(p.is_finite() && (0.0..=1.0).contains(*p))) {
        return Err(Error::Probability(format!("{name} entry {bad} outside [0, 1]")));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
        return Err(Error::Probability(format!("{name} sums to {sum}, expected 1")));
    }
    Ok(v.iter().map(|p| p / sum).collect())
}

/// Hierarchical classifier output: group probabilities, one distribution per
/// group over its members, and the fused 24-way distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalPrediction {
    group_probs: [f64; 3],
    within: [Vec<f64>; 3],
    fused: [f64; GRAPH_LABELS],
}

impl LocalPrediction {
    /// Validates and renormalizes each vector.
    pub fn new(group_probs: [f64; 3], cervical: &[f64], thoracic: &[f64], lumbar: &[f64]) -> Result<Self> {
        let parts = [cervical, thoracic, lumbar];
        for (g, p) in AnatomicGroup::ALL.iter().zip(parts) {
            if p.len() != g.len() {
                return Err(Error::Probability(format!(
                    "{g} vector has {} entries, expected {}",
                    p.len(),
                    g.len()
                )));
            }
        }
        let gp = normalized("group", &group_probs)?;
        let within = [
            normalized("cervical", cervical)?,
            normalized("thoracic", thoracic)?,
            normalized("lumbar", lumbar)?,
        ];
        Ok(Self::assemble([gp[0], gp[1], gp[2]], within))
    }

    fn assemble(group_probs: [f64; 3], within: [Vec<f64>; 3]) -> Self {
        let mut fused = [0.0; GRAPH_LABELS];
        for g in AnatomicGroup::ALL {
            for (w, p) in within[g.index()].iter().enumerate() {
                fused[g.first_graph_index() + w] = group_probs[g.index()] * p;
            }
        }
        LocalPrediction {
            group_probs,
            within,
            fused,
        }
    }

    /// Uniform over all 24 graph labels.
    pub fn uniform() -> Self {
        let gp = AnatomicGroup::ALL.map(|g| g.len() as f64 / GRAPH_LABELS as f64);
        let within = AnatomicGroup::ALL.map(|g| vec![1.0 / g.len() as f64; g.len()]);
        Self::assemble(gp, within)
    }

    /// All mass on a single graph-space label.
    pub fn certain(label: VertebraLabel) -> Result<Self> {
        let row = label
            .graph_index()
            .ok_or_else(|| Error::Range(format!("{label} is not a classifier output")))?;
        let g = label.group();
        let mut gp = [0.0; 3];
        gp[g.index()] = 1.0;
        let mut within = AnatomicGroup::ALL.map(|h| vec![1.0 / h.len() as f64; h.len()]);
        within[g.index()] = vec![0.0; g.len()];
        within[g.index()][row - g.first_graph_index()] = 1.0;
        Ok(Self::assemble(gp, within))
    }

    pub fn group_probs(&self) -> [f64; 3] {
        self.group_probs
    }

    pub fn within(&self, group: AnatomicGroup) -> &[f64] {
        &self.within[group.index()]
    }

    pub fn fused(&self) -> &[f64; GRAPH_LABELS] {
        &self.fused
    }

    /// Label with the highest fused probability (lowest code on ties).
    pub fn argmax(&self) -> VertebraLabel {
        let mut best = 0;
        for (i, &p) in self.fused.iter().enumerate() {
            if p > self.fused[best] {
                best = i;
            }
        }
        VertebraLabel(best as u8 + 1)
    }

    /// Elementwise mean of the hierarchical factors, renormalized.
    pub fn mean(a: &LocalPrediction, b: &LocalPrediction) -> Self {
        let avg = |x: &[f64], y: &[f64]| -> Vec<f64> {
            let v: Vec<f64> = x.iter().zip(y).map(|(p, q)| 0.5 * (p + q)).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|p| p / s).collect()
        };
        let gp = avg(&a.group_probs, &b.group_probs);
        let within = AnatomicGroup::ALL.map(|g| avg(a.within(g), b.within(g)));
        Self::assemble([gp[0], gp[1], gp[2]], within)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RecordFlag {
    EmptySegmentation,
    DistanceAnomaly,
    VolumeAnomaly,
    LabelRepeat,
}

/// One detected vertebra.
#[derive(Clone, Debug, PartialEq)]
pub struct VertebraRecord {
    pub location: [f64; 3],
    pub mask: Option<Arc<CompactMask>>,
    pub volume_mm3: f64,
    pub local: Option<LocalPrediction>,
    pub label: Option<VertebraLabel>,
    pub flags: BTreeSet<RecordFlag>,
}

impl VertebraRecord {
    /// Record without a segmentation.
    pub fn at(location: [f64; 3]) -> Self {
        VertebraRecord {
            location,
            mask: None,
            volume_mm3: 0.0,
            local: None,
            label: None,
            flags: BTreeSet::new(),
        }
    }

    pub fn with_mask(location: [f64; 3], mask: Arc<CompactMask>) -> Self {
        let volume_mm3 = mask.volume_mm3();
        VertebraRecord {
            mask: Some(mask),
            volume_mm3,
            ..VertebraRecord::at(location)
        }
    }

    pub fn labeled(mut self, label: VertebraLabel) -> Self {
        self.label = Some(label);
        self
    }

    pub fn mask_voxels(&self) -> usize {
        self.mask.as_ref().map_or(0, |m| m.voxel_count())
    }

    pub fn has_flag(&self, f: RecordFlag) -> bool {
        self.flags.contains(&f)
    }
}

/// Sorts cranial → caudal. `cranial` names the anatomic direction that
/// points toward the head (normally `S`). Ties keep input order.
pub fn sort_records(mut records: Vec<VertebraRecord>, cranial: AxisCode) -> Vec<VertebraRecord> {
    let (axis, sign) = (cranial.world_axis(), cranial.sign());
    records.sort_by(|a, b| (sign * b.location[axis]).total_cmp(&(sign * a.location[axis])));
    records
}

pub fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TransitionKind {
    ExtraT13,
    ExtraL6,
    AbsentT12,
}

/// A transitional configuration found by the identification graph; for
/// `AbsentT12` the position is the L1 that follows T11 directly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionEvent {
    pub position: usize,
    pub kind: TransitionKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InconsistencyKind {
    EmptySegmentation,
    DistanceAnomaly,
    VolumeAnomaly,
    LabelRepeat,
    IncompleteExtreme,
}

impl InconsistencyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InconsistencyKind::EmptySegmentation => "EmptySegmentation",
            InconsistencyKind::DistanceAnomaly => "DistanceAnomaly",
            InconsistencyKind::VolumeAnomaly => "VolumeAnomaly",
            InconsistencyKind::LabelRepeat => "LabelRepeat",
            InconsistencyKind::IncompleteExtreme => "IncompleteExtreme",
        }
    }
}

impl FromStr for InconsistencyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "EmptySegmentation" => InconsistencyKind::EmptySegmentation,
            "DistanceAnomaly" => InconsistencyKind::DistanceAnomaly,
            "VolumeAnomaly" => InconsistencyKind::VolumeAnomaly,
            "LabelRepeat" => InconsistencyKind::LabelRepeat,
            "IncompleteExtreme" => InconsistencyKind::IncompleteExtreme,
            other => return Err(Error::InvalidInput(format!("unknown inconsistency kind `{other}`"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub region: Aabb,
    pub kind: InconsistencyKind,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InconsistencyReport {
    pub entries: Vec<ReportEntry>,
}

impl InconsistencyReport {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, region: Aabb, kind: InconsistencyKind, detail: impl Into<String>) {
        self.entries.push(ReportEntry {
            region,
            kind,
            detail: detail.into(),
        });
    }

    pub fn count(&self, kind: InconsistencyKind) -> usize {
        self.entries.iter().filter(|e| e.kind == kind).count()
    }
}

/// Ordered detections plus cycle bookkeeping.
#[derive(Clone, Debug, Default)]
pub struct SpineState {
    pub records: Vec<VertebraRecord>,
    pub spine_mask: Option<Arc<VolumeGrid>>,
    pub iteration: usize,
    pub report: InconsistencyReport,
    pub transitions: Vec<TransitionEvent>,
}

impl SpineState {
    pub fn new(spine_mask: Arc<VolumeGrid>) -> Self {
        SpineState {
            spine_mask: Some(spine_mask),
            ..Default::default()
        }
    }

    pub fn labels(&self) -> Vec<Option<VertebraLabel>> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// True when no two records are closer than `min_mm`.
    pub fn separation_ok(&self, min_mm: f64) -> bool {
        self.records.iter().enumerate().all(|(i, a)| {
            self.records[i + 1..]
                .iter()
                .all(|b| distance(a.location, b.location) >= min_mm)
        })
    }

    pub fn sort(&mut self) {
        self.records = sort_records(std::mem::take(&mut self.records), AxisCode::S);
    }
}
