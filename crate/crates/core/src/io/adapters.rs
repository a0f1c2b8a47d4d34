//! Oracle adapters: precomputed results in a directory, an external process
//! over a line protocol, or the synthetic phantom.
//!
//! # Directory layout
//!
//! `segmentations.tsv` — `seed_x seed_y seed_z x_mm y_mm z_mm mask`: the
//! segmentor's answer for a seed, where `mask` is a uint8 NRRD path relative
//! to the directory, or `EMPTY` (with `-` coordinates).
//!
//! `classifications.tsv` — `x_mm y_mm z_mm` followed by the 27 probability
//! columns: the classifier's answer for a crop centred there.
//!
//! Lookups round the query to a `key_mm` lattice; misses mean "nothing
//! segmented" and "no opinion" (uniform) respectively.
//!
//! # Subprocess protocol
//!
//! One tab-separated request per line on the child's stdin, one response
//! line per request on its stdout, in request order:
//!
//! ```text
//! segment  <id> <ct.nrrd> <x> <y> <z>   →  <id> <mask.nrrd> <x> <y> <z>   |  <id> EMPTY
//! classify <id> <crop.nrrd>             →  <id> <probabilities.tsv>       |  <id> EMPTY
//! ```
//!
//! The probability file holds one row in the probability-table format. An
//! `EMPTY` classification means no opinion (uniform).

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};

use log::debug;

use super::manifest::{Manifest, OracleConfig};
use super::nrrd::{read_nrrd, write_nrrd, NrrdEncoding};
use super::tables::{owned, prediction_at, probability_columns, write_table, Table, MISSING};
use super::{fmt_f64, read_text, tables};
use crate::cycle::{ClassifierOracle, SegmentorOracle, Segmentation};
use crate::error::{Error, Result};
use crate::grid::{CompactMask, VolumeGrid};
use crate::model::LocalPrediction;
use crate::phantom::generate;

const EMPTY: &str = "EMPTY";

pub const SEGMENTATION_COLUMNS: [&str; 7] = ["seed_x", "seed_y", "seed_z", "x_mm", "y_mm", "z_mm", "mask"];

type Key = [i64; 3];

fn key(p: [f64; 3], key_mm: f64) -> Key {
    p.map(|c| (c / key_mm).round() as i64)
}

/// Precomputed oracle answers.
#[derive(Clone, Debug)]
pub struct DirectoryOracle {
    key_mm: f64,
    segmentations: HashMap<Key, Segmentation>,
    classifications: HashMap<Key, LocalPrediction>,
}

impl DirectoryOracle {
    pub fn load(dir: &Path, key_mm: f64) -> Result<Self> {
        let mut segmentations = HashMap::new();
        let seg_path = dir.join("segmentations.tsv");
        let origin = seg_path.display().to_string();
        let text = read_text(&seg_path)?;
        let t = Table::parse(&text, &origin, &SEGMENTATION_COLUMNS)?;
        for (line, r) in &t.rows {
            let seed = [t.f64_at(*line, r, 0)?, t.f64_at(*line, r, 1)?, t.f64_at(*line, r, 2)?];
            let answer = if r[6] == EMPTY {
                Segmentation::Empty
            } else {
                let location = [t.f64_at(*line, r, 3)?, t.f64_at(*line, r, 4)?, t.f64_at(*line, r, 5)?];
                let grid = read_nrrd(&dir.join(&r[6]))?;
                Segmentation::Found {
                    location,
                    mask: CompactMask::from_grid(&grid).map_err(|e| t.err(*line, 6, e.to_string()))?,
                }
            };
            if segmentations.insert(key(seed, key_mm), answer).is_some() {
                return Err(t.err(*line, 0, format!("duplicate seed key at {key_mm} mm resolution")));
            }
        }

        let mut classifications = HashMap::new();
        let cls_path = dir.join("classifications.tsv");
        let origin = cls_path.display().to_string();
        let text = read_text(&cls_path)?;
        let cols = classification_columns();
        let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
        let t = Table::parse(&text, &origin, &refs)?;
        for (line, r) in &t.rows {
            let at = [t.f64_at(*line, r, 0)?, t.f64_at(*line, r, 1)?, t.f64_at(*line, r, 2)?];
            let p = prediction_at(&t, *line, r, 3)?;
            if classifications.insert(key(at, key_mm), p).is_some() {
                return Err(t.err(*line, 0, format!("duplicate crop key at {key_mm} mm resolution")));
            }
        }
        Ok(DirectoryOracle {
            key_mm,
            segmentations,
            classifications,
        })
    }

    /// Writes answers in the directory layout (masks as `mask_<n>.nrrd`).
    pub fn write(
        dir: &Path,
        segmentations: &[([f64; 3], Segmentation)],
        classifications: &[([f64; 3], LocalPrediction)],
    ) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut rows = Vec::new();
        for (n, (seed, s)) in segmentations.iter().enumerate() {
            let mut row: Vec<String> = seed.iter().map(|v| fmt_f64(*v)).collect();
            match s {
                Segmentation::Found { location, mask } => {
                    let name = format!("mask_{n}.nrrd");
                    write_nrrd(&mask.to_grid(), &dir.join(&name), NrrdEncoding::Gzip)?;
                    row.extend(location.iter().map(|v| fmt_f64(*v)));
                    row.push(name);
                }
                Segmentation::Empty => {
                    row.extend([MISSING, MISSING, MISSING].map(String::from));
                    row.push(EMPTY.into());
                }
            }
            rows.push(row);
        }
        write_table(&dir.join("segmentations.tsv"), &owned(&SEGMENTATION_COLUMNS), rows)?;
        let rows = classifications
            .iter()
            .map(|(at, p)| {
                let mut row: Vec<String> = at.iter().map(|v| fmt_f64(*v)).collect();
                row.extend(p.group_probs().iter().map(|v| fmt_f64(*v)));
                for g in crate::model::AnatomicGroup::ALL {
                    row.extend(p.within(g).iter().map(|v| fmt_f64(*v)));
                }
                row
            })
            .collect();
        write_table(&dir.join("classifications.tsv"), &classification_columns(), rows)
    }
}

fn classification_columns() -> Vec<String> {
    let mut cols = owned(&["x_mm", "y_mm", "z_mm"]);
    cols.extend(probability_columns());
    cols
}

impl SegmentorOracle for DirectoryOracle {
    fn segment(&self, _ct: &VolumeGrid, seed: [f64; 3]) -> Result<Segmentation> {
        Ok(self
            .segmentations
            .get(&key(seed, self.key_mm))
            .cloned()
            .unwrap_or(Segmentation::Empty))
    }
}

impl ClassifierOracle for DirectoryOracle {
    fn classify(&self, crop: &VolumeGrid) -> Result<LocalPrediction> {
        let g = crop.geometry();
        let centre = g.world_of(g.sizes.map(|s| s / 2));
        match self.classifications.get(&key(centre, self.key_mm)) {
            Some(p) => Ok(p.clone()),
            None => {
                debug!("no stored classification near {centre:?}; using uniform");
                Ok(LocalPrediction::uniform())
            }
        }
    }
}

struct Channel {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    next_id: u64,
}

/// An external oracle process. Requests are serialized; each holds the
/// channel until its response arrives.
pub struct SubprocessOracle {
    channel: Mutex<Channel>,
    ct_path: PathBuf,
    scratch: tempfile::TempDir,
}

impl std::fmt::Debug for SubprocessOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubprocessOracle").field("ct_path", &self.ct_path).finish()
    }
}

impl SubprocessOracle {
    pub fn spawn(command: &[String], ct_path: &Path) -> Result<Self> {
        let (prog, args) = command
            .split_first()
            .ok_or_else(|| Error::InvalidInput("empty oracle command".into()))?;
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::io(prog, e))?;
        let stdin = child.stdin.take().expect("piped");
        let stdout = BufReader::new(child.stdout.take().expect("piped"));
        Ok(SubprocessOracle {
            channel: Mutex::new(Channel {
                child,
                stdin,
                stdout,
                next_id: 0,
            }),
            ct_path: ct_path.to_path_buf(),
            scratch: tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?,
        })
    }

    /// Sends one request and returns the response fields after the id.
    fn call(&self, build: impl FnOnce(u64) -> Result<String>) -> Result<Vec<String>> {
        let mut ch = self.channel.lock().map_err(|_| Error::Oracle("oracle channel poisoned".into()))?;
        let id = ch.next_id;
        ch.next_id += 1;
        let request = build(id)?;
        writeln!(ch.stdin, "{request}")
            .and_then(|_| ch.stdin.flush())
            .map_err(|e| Error::Oracle(format!("cannot write request {id}: {e}")))?;
        let mut line = String::new();
        let n = ch
            .stdout
            .read_line(&mut line)
            .map_err(|e| Error::Oracle(format!("cannot read response {id}: {e}")))?;
        if n == 0 {
            return Err(Error::Oracle(format!("process closed its output before answering request {id}")));
        }
        let mut fields: Vec<String> = line.trim_end_matches(['\n', '\r']).split('\t').map(String::from).collect();
        if fields.first().map(String::as_str) != Some(id.to_string().as_str()) {
            return Err(Error::Oracle(format!("expected a response to request {id}, got `{}`", line.trim_end())));
        }
        fields.remove(0);
        Ok(fields)
    }
}

impl Drop for SubprocessOracle {
    fn drop(&mut self) {
        if let Ok(ch) = self.channel.get_mut() {
            let _ = ch.child.kill();
            let _ = ch.child.wait();
        }
    }
}

fn protocol_error(id_fields: &[String], what: &str) -> Error {
    Error::Oracle(format!("malformed {what} response `{}`", id_fields.join("\t")))
}

impl SegmentorOracle for SubprocessOracle {
    fn segment(&self, _ct: &VolumeGrid, seed: [f64; 3]) -> Result<Segmentation> {
        let ct = self.ct_path.display().to_string();
        let f = self.call(|id| Ok(format!("segment\t{id}\t{ct}\t{}\t{}\t{}", fmt_f64(seed[0]), fmt_f64(seed[1]), fmt_f64(seed[2]))))?;
        match f.as_slice() {
            [e] if e == EMPTY => Ok(Segmentation::Empty),
            [path, x, y, z] => {
                let num = |s: &str| s.parse::<f64>().map_err(|_| protocol_error(&f, "segment"));
                let location = [num(x)?, num(y)?, num(z)?];
                let mask = CompactMask::from_grid(&read_nrrd(Path::new(path))?)?;
                Ok(Segmentation::Found { location, mask })
            }
            _ => Err(protocol_error(&f, "segment")),
        }
    }
}

impl ClassifierOracle for SubprocessOracle {
    fn classify(&self, crop: &VolumeGrid) -> Result<LocalPrediction> {
        let f = self.call(|id| {
            let path = self.scratch.path().join(format!("crop_{id}.nrrd"));
            write_nrrd(crop, &path, NrrdEncoding::Raw)?;
            Ok(format!("classify\t{id}\t{}", path.display()))
        })?;
        match f.as_slice() {
            [e] if e == EMPTY => Ok(LocalPrediction::uniform()),
            [path] => {
                let mut rows = tables::read_probabilities(Path::new(path))?;
                if rows.len() != 1 {
                    return Err(Error::Oracle(format!("{path} must hold exactly one prediction, found {}", rows.len())));
                }
                Ok(rows.remove(0))
            }
            _ => Err(protocol_error(&f, "classify")),
        }
    }
}

/// The oracle pair a manifest describes.
pub struct Oracles {
    pub segmentor: Box<dyn SegmentorOracle>,
    pub classifier: Box<dyn ClassifierOracle>,
}

impl Oracles {
    /// `ct` is the loaded CT (used to validate phantom lattices).
    pub fn from_manifest(m: &Manifest, ct: &VolumeGrid) -> Result<Self> {
        match &m.oracle {
            OracleConfig::Phantom { spec, corruptions } => {
                let mut p = generate(spec)?;
                if !p.ct.geometry().same_lattice(ct.geometry()) {
                    return Err(Error::GeometryMismatch("manifest CT does not match the phantom spec".into()));
                }
                for c in corruptions {
                    p.corrupt(c)?;
                }
                Ok(Oracles {
                    segmentor: Box::new(p.segmentor),
                    classifier: Box::new(p.classifier),
                })
            }
            OracleConfig::Directory { path, key_mm } => {
                let d = Arc::new(DirectoryOracle::load(path, *key_mm)?);
                Ok(Oracles {
                    segmentor: Box::new(d.clone()),
                    classifier: Box::new(d),
                })
            }
            OracleConfig::Subprocess { command } => {
                let s = Arc::new(SubprocessOracle::spawn(command, &m.ct)?);
                Ok(Oracles {
                    segmentor: Box::new(s.clone()),
                    classifier: Box::new(s),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cycle::{run_cycle, CycleConfig};
    use crate::grid::extract_crop;
    use crate::model::VertebraLabel;
    use crate::phantom::PhantomSpec;
    use crate::priors::AnatomyStats;

    #[test]
    fn directory_adapter_replays_phantom_answers() {
        let spec = PhantomSpec::range(VertebraLabel::L1, VertebraLabel::L5, 0.0, 2).unwrap();
        let p = generate(&spec).unwrap();
        let d = tempfile::tempdir().unwrap();
        // what the cycle will ask: component centroids, then crops at the refined locations
        let stats = AnatomyStats::default();
        let cfg = CycleConfig::default();
        let mut segs = Vec::new();
        let mut classes = Vec::new();
        for r in &p.truth.records {
            let mask = r.mask.as_ref().unwrap();
            segs.push((mask.centroid_mm().unwrap(), p.segmentor.segment(&p.ct, r.location).unwrap()));
            let crop = extract_crop(&p.spine_mask, r.location, cfg.crop_side_voxels).unwrap();
            let g = crop.geometry();
            classes.push((g.world_of(g.sizes.map(|s| s / 2)), p.classifier.classify(&crop).unwrap()));
        }
        DirectoryOracle::write(d.path(), &segs, &classes).unwrap();
        let o = DirectoryOracle::load(d.path(), 1.0).unwrap();
        for (seed, s) in &segs {
            assert_eq!(&o.segment(&p.ct, *seed).unwrap(), s);
        }
        assert_eq!(o.segment(&p.ct, [500.0, 0.0, 0.0]).unwrap(), Segmentation::Empty);
        let state = run_cycle(&p.ct, &p.spine_mask, &o, &o, &stats, &cfg).unwrap();
        assert_eq!(state.labels(), p.truth.labels());
        assert!(state.report.is_empty());
    }

    fn script(dir: &Path, body: &str) -> Vec<String> {
        let path = dir.join("oracle.sh");
        std::fs::write(&path, body).unwrap();
        vec!["sh".into(), path.display().to_string()]
    }

    #[test]
    fn subprocess_protocol() {
        let d = tempfile::tempdir().unwrap();
        let probs = d.path().join("p.tsv");
        tables::write_probabilities(&probs, &[LocalPrediction::certain(VertebraLabel::new(21).unwrap()).unwrap()]).unwrap();
        let body = format!(
            "while IFS=\"$(printf '\\t')\" read -r op id a b c d; do\n  if [ \"$op\" = segment ]; then printf '%s\\tEMPTY\\n' \"$id\"; else printf '%s\\t%s\\n' \"$id\" '{}'; fi\ndone\n",
            probs.display()
        );
        let cmd = script(d.path(), &body);
        let ct_path = d.path().join("ct.nrrd");
        let o = SubprocessOracle::spawn(&cmd, &ct_path).unwrap();
        let g = crate::grid::Geometry::ras([8, 8, 8], 1.0, [0.0; 3]).unwrap();
        let crop = VolumeGrid::mask_from_fn(g, |i, _, _| i > 3);
        assert_eq!(o.segment(&crop, [1.0, 2.0, 3.0]).unwrap(), Segmentation::Empty);
        assert_eq!(o.classify(&crop).unwrap().argmax(), VertebraLabel::new(21).unwrap());
        assert_eq!(o.segment(&crop, [1.0, 2.0, 3.0]).unwrap(), Segmentation::Empty);
    }

    #[test]
    fn subprocess_protocol_violations() {
        let d = tempfile::tempdir().unwrap();
        let g = crate::grid::Geometry::ras([4, 4, 4], 1.0, [0.0; 3]).unwrap();
        let ct = VolumeGrid::empty_mask(g);
        let wrong_id = script(d.path(), "while read -r line; do printf '99\\tEMPTY\\n'; done\n");
        let o = SubprocessOracle::spawn(&wrong_id, Path::new("ct.nrrd")).unwrap();
        assert!(matches!(o.segment(&ct, [0.0; 3]), Err(Error::Oracle(_))));
        let silent = script(d.path(), "exit 0\n");
        let o = SubprocessOracle::spawn(&silent, Path::new("ct.nrrd")).unwrap();
        assert!(matches!(o.segment(&ct, [0.0; 3]), Err(Error::Oracle(_))));
    }
}
