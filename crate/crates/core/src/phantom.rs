//! Synthetic spines: ellipsoidal vertebrae stacked along the superior axis,
//! with ground truth and stand-in segmentor/classifier oracles.
//!
//! Gaps follow a smooth profile over the column (growing from ~16 mm in the
//! neck to ~35 mm in the low back), scaled by one factor per phantom drawn
//! from the seed, so neighbouring gaps stay mutually predictable the way real
//! spines are.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cycle::{ClassifierOracle, SegmentorOracle, Segmentation};
use crate::error::{Error, Result};
use crate::grid::{CompactMask, Geometry, VolumeGrid, VoxelData};
use crate::metrics::EvalVertebra;
use crate::model::{distance, AnatomicGroup, LocalPrediction, SpineState, VertebraLabel, VertebraRecord};
use crate::priors::fit::consecutive;

/// Intensity of bone voxels in the synthetic CT.
pub const BONE_HU: i16 = 400;

/// Range of the per-phantom gap scale factor.
pub const GAP_SCALE_RANGE: (f64, f64) = (0.913, 1.087);

/// Gap length (mm) as a function of the caudal vertebra's level.
const GAP_PROFILE: [(f64, f64); 7] = [
    (2.0, 15.5),
    (7.0, 18.0),
    (8.0, 19.0),
    (19.0, 27.5),
    (20.0, 29.5),
    (24.0, 34.5),
    (25.0, 35.5),
];

/// Nominal gap above a vertebra, before scaling.
pub fn gap_profile(caudal: VertebraLabel) -> f64 {
    let x = caudal.level();
    let p = &GAP_PROFILE;
    if x <= p[0].0 {
        return p[0].1;
    }
    for w in p.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x <= x1 {
            return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        }
    }
    p[p.len() - 1].1
}

/// Ratio of the superior semi-axis to the smaller adjacent gap.
const HEIGHT_FRACTION: f64 = 0.35;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    /// Cranial to caudal; may contain T13, L6, or skip T12.
    pub labels: Vec<VertebraLabel>,
    /// `gaps_mm[i]` separates vertebra `i` and `i + 1`.
    pub gaps_mm: Vec<f64>,
    /// Ellipsoid semi-axes (right, anterior, superior), mm.
    pub semi_axes_mm: Vec<[f64; 3]>,
    /// Probability that the classifier confuses a vertebra with an
    /// in-group neighbour.
    pub noise: f64,
    pub seed: u64,
}

impl PhantomSpec {
    /// Profile gaps under a seeded scale factor, default shapes.
    pub fn standard(labels: Vec<VertebraLabel>, noise: f64, seed: u64) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidInput("phantom needs at least one vertebra".into()));
        }
        let scale = ChaCha8Rng::seed_from_u64(seed).random_range(GAP_SCALE_RANGE.0..=GAP_SCALE_RANGE.1);
        let gaps_mm: Vec<f64> = labels.windows(2).map(|w| scale * gap_profile(w[1])).collect();
        let semi_axes_mm = (0..labels.len())
            .map(|i| {
                let t = (labels[i].level() - 1.0) / 23.0;
                let local = match (i.checked_sub(1).map(|j| gaps_mm[j]), gaps_mm.get(i)) {
                    (Some(a), Some(&b)) => a.min(b),
                    (Some(a), None) => a,
                    (None, Some(&b)) => b,
                    (None, None) => scale * gap_profile(labels[i]),
                };
                [16.0 + 10.0 * t, 12.0 + 7.0 * t, HEIGHT_FRACTION * local]
            })
            .collect();
        let spec = PhantomSpec {
            labels,
            gaps_mm,
            semi_axes_mm,
            noise,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Consecutive labels from `first` to `last` (graph labels only).
    pub fn range(first: VertebraLabel, last: VertebraLabel, noise: f64, seed: u64) -> Result<Self> {
        let (a, b) = (
            first.graph_index().ok_or_else(|| Error::Range(format!("{first} cannot start a range")))?,
            last.graph_index().ok_or_else(|| Error::Range(format!("{last} cannot end a range")))?,
        );
        if a > b {
            return Err(Error::InvalidInput(format!("{first} is caudal to {last}")));
        }
        let labels = (a..=b).map(|r| VertebraLabel::from_graph_index(r).expect("row")).collect();
        Self::standard(labels, noise, seed)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if n == 0 {
            return Err(Error::InvalidInput("phantom needs at least one vertebra".into()));
        }
        if self.gaps_mm.len() + 1 != n || self.semi_axes_mm.len() != n {
            return Err(Error::InvalidInput("phantom gaps/semi-axes do not match the label count".into()));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::InvalidInput(format!("noise {} outside [0, 1)", self.noise)));
        }
        for w in self.labels.windows(2) {
            if !consecutive(w[0], w[1]) {
                return Err(Error::InvalidInput(format!("{} cannot follow {}", w[1], w[0])));
            }
        }
        if let Some(g) = self.gaps_mm.iter().find(|g| !(**g > 0.0)) {
            return Err(Error::InvalidInput(format!("gap {g} must be positive")));
        }
        if self.semi_axes_mm.iter().flatten().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidInput("semi-axes must be positive".into()));
        }
        for (i, g) in self.gaps_mm.iter().enumerate() {
            let reach = self.semi_axes_mm[i][2] + self.semi_axes_mm[i + 1][2];
            if reach >= *g {
                return Err(Error::InvalidInput(format!(
                    "vertebrae {} and {} overlap ({reach:.1} mm of height in a {g:.1} mm gap)",
                    self.labels[i],
                    self.labels[i + 1]
                )));
            }
        }
        Ok(())
    }

    /// Nominal centres, top vertebra highest, bottom at z = 0.
    pub fn centers(&self) -> Vec<[f64; 3]> {
        let total: f64 = self.gaps_mm.iter().sum();
        let mut z = total;
        let mut out = vec![[0.0, 0.0, z]];
        for g in &self.gaps_mm {
            z -= g;
            out.push([0.0, 0.0, z]);
        }
        out
    }

    /// Capture radius of each vertebra: half its larger adjacent gap.
    fn capture_radii(&self) -> Vec<f64> {
        (0..self.labels.len())
            .map(|i| {
                let above = i.checked_sub(1).map_or(0.0, |j| self.gaps_mm[j]);
                let below = self.gaps_mm.get(i).copied().unwrap_or(0.0);
                let g = above.max(below);
                if g > 0.0 {
                    0.5 * g
                } else {
                    self.semi_axes_mm[i][2]
                }
            })
            .collect()
    }
}

/// Labels the classifier will perceive, one per vertebra: the merged label
/// (T13→T12, L6→L5), moved to an in-group neighbour with probability `noise`.
pub fn perceived_labels(spec: &PhantomSpec) -> Vec<VertebraLabel> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    spec.labels
        .iter()
        .map(|&l| {
            let merged = l.merged();
            let flip: f64 = rng.random();
            let up: bool = rng.random();
            if flip >= spec.noise {
                return merged;
            }
            let g = merged.group();
            let w = merged.within_group_index().expect("graph label");
            let to = match (up, w) {
                (true, 0) => 1,
                (true, w) => w - 1,
                (false, w) if w + 1 == g.len() => w - 1,
                (false, w) => w + 1,
            };
            g.label_at(to).expect("within group")
        })
        .collect()
}

/// Peaked hierarchical prediction for a vertebra of group `group` seen as
/// `perceived`.
pub fn peaked_prediction(group: AnatomicGroup, perceived: VertebraLabel) -> LocalPrediction {
    let mut gp = [0.05; 3];
    gp[group.index()] = 0.9;
    let pg = perceived.group();
    let w = perceived.within_group_index().expect("graph label");
    let len = pg.len();
    let mut within = vec![0.0; len];
    within[w] = 0.7;
    match (w > 0, w + 1 < len) {
        (true, true) => {
            within[w - 1] = 0.15;
            within[w + 1] = 0.15;
        }
        (true, false) => within[w - 1] = 0.3,
        (false, true) => within[w + 1] = 0.3,
        (false, false) => within[w] = 1.0,
    }
    let parts = AnatomicGroup::ALL.map(|g| {
        if g == pg {
            within.clone()
        } else {
            vec![1.0 / g.len() as f64; g.len()]
        }
    });
    LocalPrediction::new(gp, &parts[0], &parts[1], &parts[2]).expect("valid by construction")
}

/// What the classifier reports for every vertebra, without rasterizing.
pub fn local_predictions(spec: &PhantomSpec) -> Vec<LocalPrediction> {
    spec.labels
        .iter()
        .zip(perceived_labels(spec))
        .map(|(l, p)| peaked_prediction(l.merged().group(), p))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    DropMask,
    ShiftLocation,
    BlankProbability,
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorruptionKind::DropMask => "drop_mask",
            CorruptionKind::ShiftLocation => "shift_location",
            CorruptionKind::BlankProbability => "blank_probability",
        })
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop_mask" => Ok(CorruptionKind::DropMask),
            "shift_location" => Ok(CorruptionKind::ShiftLocation),
            "blank_probability" => Ok(CorruptionKind::BlankProbability),
            other => Err(Error::InvalidInput(format!("unknown corruption `{other}`"))),
        }
    }
}

/// Default displacement of `shift_location`: 30 mm caudal.
pub const DEFAULT_SHIFT_MM: [f64; 3] = [0.0, 0.0, -30.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corruption {
    pub kind: CorruptionKind,
    pub vertebra: usize,
    /// Only used by `shift_location`.
    #[serde(default = "default_shift")]
    pub offset_mm: [f64; 3],
}

fn default_shift() -> [f64; 3] {
    DEFAULT_SHIFT_MM
}

impl Corruption {
    pub fn new(kind: CorruptionKind, vertebra: usize) -> Self {
        Corruption {
            kind,
            vertebra,
            offset_mm: DEFAULT_SHIFT_MM,
        }
    }

    /// Seeded choice of target: the last vertebra for shifts (so a single
    /// gap is disturbed), an interior one otherwise.
    pub fn seeded(kind: CorruptionKind, vertebrae: usize, seed: u64) -> Self {
        let vertebra = match kind {
            CorruptionKind::ShiftLocation => vertebrae.saturating_sub(1),
            _ if vertebrae >= 3 => 1 + ChaCha8Rng::seed_from_u64(seed).random_range(0..vertebrae - 2),
            _ => 0,
        };
        Corruption::new(kind, vertebra)
    }
}

/// Segmentor stand-in: locks onto the nearest vertebra within its capture
/// radius.
#[derive(Clone, Debug)]
pub struct PhantomSegmentor {
    centroids: Vec<[f64; 3]>,
    masks: Vec<Arc<CompactMask>>,
    capture: Vec<f64>,
    dropped: BTreeSet<usize>,
    shifts: BTreeMap<usize, [f64; 3]>,
}

impl SegmentorOracle for PhantomSegmentor {
    fn segment(&self, ct: &VolumeGrid, seed: [f64; 3]) -> Result<Segmentation> {
        if let Some(m) = self.masks.first() {
            if !m.geometry().same_lattice(ct.geometry()) {
                return Err(Error::GeometryMismatch("phantom segmentor used on a foreign CT".into()));
            }
        }
        let Some((k, d)) = nearest(&self.centroids, seed) else {
            return Ok(Segmentation::Empty);
        };
        if d > self.capture[k] || self.dropped.contains(&k) {
            return Ok(Segmentation::Empty);
        }
        let c = self.centroids[k];
        let s = self.shifts.get(&k).copied().unwrap_or([0.0; 3]);
        Ok(Segmentation::Found {
            location: [c[0] + s[0], c[1] + s[1], c[2] + s[2]],
            mask: (*self.masks[k]).clone(),
        })
    }
}

/// Classifier stand-in: reports the precomputed prediction of the vertebra
/// nearest to the crop centre.
#[derive(Clone, Debug)]
pub struct PhantomClassifier {
    centroids: Vec<[f64; 3]>,
    outputs: Vec<LocalPrediction>,
    blanked: BTreeSet<usize>,
}

impl ClassifierOracle for PhantomClassifier {
    fn classify(&self, crop: &VolumeGrid) -> Result<LocalPrediction> {
        if crop.foreground_count() == 0 {
            return Ok(LocalPrediction::uniform());
        }
        let g = crop.geometry();
        let centre = g.world_of(g.sizes.map(|s| s / 2));
        match nearest(&self.centroids, centre) {
            Some((k, _)) if !self.blanked.contains(&k) => Ok(self.outputs[k].clone()),
            _ => Ok(LocalPrediction::uniform()),
        }
    }
}

fn nearest(points: &[[f64; 3]], q: [f64; 3]) -> Option<(usize, f64)> {
    points
        .iter()
        .enumerate()
        .map(|(i, &p)| (i, distance(p, q)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

#[derive(Clone, Debug)]
pub struct Phantom {
    pub spec: PhantomSpec,
    pub ct: VolumeGrid,
    pub spine_mask: VolumeGrid,
    /// Ground-truth records (true labels, mask centroids).
    pub truth: SpineState,
    pub segmentor: PhantomSegmentor,
    pub classifier: PhantomClassifier,
}

pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let centers = spec.centers();
    let n = centers.len();
    let margin = 3.0;
    let half_x = spec.semi_axes_mm.iter().map(|s| s[0]).fold(0.0, f64::max).ceil() + margin;
    let half_y = spec.semi_axes_mm.iter().map(|s| s[1]).fold(0.0, f64::max).ceil() + margin;
    let z_lo = (centers[n - 1][2] - spec.semi_axes_mm[n - 1][2] - margin).floor();
    let z_hi = (centers[0][2] + spec.semi_axes_mm[0][2] + margin).ceil();
    let sizes = [
        2 * half_x as usize + 1,
        2 * half_y as usize + 1,
        (z_hi - z_lo) as usize + 1,
    ];
    let geometry = Geometry::ras(sizes, 1.0, [-half_x, -half_y, z_lo])?;

    let mut owner = vec![0u8; geometry.voxel_count()];
    for (v, (c, s)) in centers.iter().zip(&spec.semi_axes_mm).enumerate() {
        let lo = geometry.continuous_index([c[0] - s[0], c[1] - s[1], c[2] - s[2]]);
        let hi = geometry.continuous_index([c[0] + s[0], c[1] + s[1], c[2] + s[2]]);
        let range = |a: usize| {
            let from = lo[a].floor().max(0.0) as usize;
            let to = (hi[a].ceil() as usize).min(sizes[a] - 1);
            from..=to
        };
        for k in range(2) {
            for j in range(1) {
                for i in range(0) {
                    let p = geometry.world_of([i, j, k]);
                    let q: f64 = (0..3).map(|a| ((p[a] - c[a]) / s[a]).powi(2)).sum();
                    if q <= 1.0 {
                        let idx = geometry.linear(i, j, k);
                        if owner[idx] != 0 {
                            return Err(Error::InvalidInput(format!(
                                "vertebrae {} and {} overlap",
                                spec.labels[owner[idx] as usize - 1],
                                spec.labels[v]
                            )));
                        }
                        owner[idx] = v as u8 + 1;
                    }
                }
            }
        }
    }

    let ct_data: Vec<i16> = owner.iter().map(|&o| if o != 0 { BONE_HU } else { 0 }).collect();
    let ct = VolumeGrid::new(geometry, VoxelData::I16(ct_data))?;
    let spine_mask = VolumeGrid::new(geometry, VoxelData::U8(owner.iter().map(|&o| (o != 0) as u8).collect()))?;
    let owners = VolumeGrid::new(geometry, VoxelData::U8(owner))?;

    let mut masks = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    for (v, &label) in spec.labels.iter().enumerate() {
        let m = Arc::new(CompactMask::from_grid(&owners.select_label(v as i64 + 1)?)?);
        if m.is_empty() {
            return Err(Error::InvalidInput(format!("vertebra {label} is too small to rasterize")));
        }
        let centroid = m.centroid_mm()?;
        records.push(VertebraRecord::with_mask(centroid, m.clone()).labeled(label));
        masks.push(m);
    }
    let centroids: Vec<[f64; 3]> = records.iter().map(|r| r.location).collect();
    let mut truth = SpineState::new(Arc::new(spine_mask.clone()));
    truth.records = records;

    Ok(Phantom {
        spec: spec.clone(),
        ct,
        spine_mask,
        truth,
        segmentor: PhantomSegmentor {
            centroids: centroids.clone(),
            masks,
            capture: spec.capture_radii(),
            dropped: BTreeSet::new(),
            shifts: BTreeMap::new(),
        },
        classifier: PhantomClassifier {
            centroids,
            outputs: local_predictions(spec),
            blanked: BTreeSet::new(),
        },
    })
}

impl Phantom {
    pub fn len(&self) -> usize {
        self.spec.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spec.labels.is_empty()
    }

    /// Applies a failure mode to the oracles.
    pub fn corrupt(&mut self, c: &Corruption) -> Result<()> {
        if c.vertebra >= self.len() {
            return Err(Error::InvalidInput(format!(
                "corruption targets vertebra {} of {}",
                c.vertebra,
                self.len()
            )));
        }
        match c.kind {
            CorruptionKind::DropMask => {
                self.segmentor.dropped.insert(c.vertebra);
            }
            CorruptionKind::ShiftLocation => {
                self.segmentor.shifts.insert(c.vertebra, c.offset_mm);
            }
            CorruptionKind::BlankProbability => {
                self.classifier.blanked.insert(c.vertebra);
            }
        }
        Ok(())
    }

    /// Ground truth in evaluation form.
    pub fn truth_eval(&self) -> Vec<EvalVertebra> {
        self.truth
            .records
            .iter()
            .map(|r| EvalVertebra {
                label: r.label.expect("truth is labeled"),
                location: r.location,
                mask: r.mask.clone(),
            })
            .collect()
    }
}
