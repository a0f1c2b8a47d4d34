//! Statistical anatomy priors: per-group vertebra volume regressors,
//! inter-vertebral distance Gaussians and regressors, and relative-error
//! acceptance bands. Fitting lives in [`fit`]; candidate generation in
//! [`candidates`].

pub mod candidates;
pub mod fit;

pub use candidates::{analyze_gaps, candidate_count, extreme_candidates, gap_candidates, GapAssessment};
pub use fit::{fit_stats, AnnotatedVertebra, ScanAnnotation};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnatomicGroup, VertebraLabel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerGroup<T> {
    pub cervical: T,
    pub thoracic: T,
    pub lumbar: T,
}

impl<T> PerGroup<T> {
    pub fn get(&self, g: AnatomicGroup) -> &T {
        match g {
            AnatomicGroup::Cervical => &self.cervical,
            AnatomicGroup::Thoracic => &self.thoracic,
            AnatomicGroup::Lumbar => &self.lumbar,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> PerGroup<U> {
        PerGroup {
            cervical: f(&self.cervical),
            thoracic: f(&self.thoracic),
            lumbar: f(&self.lumbar),
        }
    }

    pub fn try_from_fn(mut f: impl FnMut(AnatomicGroup) -> Result<T>) -> Result<Self> {
        Ok(PerGroup {
            cervical: f(AnatomicGroup::Cervical)?,
            thoracic: f(AnatomicGroup::Thoracic)?,
            lumbar: f(AnatomicGroup::Lumbar)?,
        })
    }
}

/// `S_i = a·S_{i-1} + c1` (from the previous vertebra) and
/// `S_i = b·S_{i+1} + c2` (from the next one), volumes in mm³.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeRegressor {
    pub a: f64,
    pub c1: f64,
    pub b: f64,
    pub c2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceGaussian {
    pub mu: f64,
    pub sigma: f64,
}

/// Gap predicted from both neighbouring gaps (`m1, n1, k1`), from the
/// previous gap only (`m2, k2`) or from the next gap only (`n2, k3`), in mm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceRegressor {
    pub m1: f64,
    pub n1: f64,
    pub k1: f64,
    pub m2: f64,
    pub k2: f64,
    pub n2: f64,
    pub k3: f64,
}

/// Mean and standard deviation of the relative error, in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MreBand {
    pub mu: f64,
    pub sigma: f64,
}

impl MreBand {
    pub fn lower(&self) -> f64 {
        self.mu - 3.0 * self.sigma
    }

    pub fn upper(&self) -> f64 {
        self.mu + 3.0 * self.sigma
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MreBounds {
    pub both: MreBand,
    pub previous: MreBand,
    pub next: MreBand,
}

impl MreBounds {
    pub fn band(&self, mode: GapMode) -> &MreBand {
        match mode {
            GapMode::Both => &self.both,
            GapMode::Previous => &self.previous,
            GapMode::Next => &self.next,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnatomyStats {
    pub volume: PerGroup<VolumeRegressor>,
    pub gaussian: PerGroup<DistanceGaussian>,
    pub distance: PerGroup<DistanceRegressor>,
    pub mre: PerGroup<MreBounds>,
    /// Residual acceptance threshold when no neighbour identification exists.
    pub fallback_volume_mm3: f64,
    /// Missing-vertebra gap threshold when labels are unknown.
    pub fallback_gap_mm: f64,
    /// A residual is a vertebra when its volume reaches this fraction of the
    /// volume predicted from its neighbour.
    pub residual_fraction: f64,
}

impl Default for AnatomyStats {
    /// Coefficients learned on the VerSe20 training split.
    fn default() -> Self {
        let vol = |a, c1, b, c2| VolumeRegressor { a, c1, b, c2 };
        let gauss = |mu, sigma| DistanceGaussian { mu, sigma };
        let dist = |m1, n1, k1, m2, k2, n2, k3| DistanceRegressor { m1, n1, k1, m2, k2, n2, k3 };
        let band = |mu, sigma| MreBand { mu, sigma };
        AnatomyStats {
            volume: PerGroup {
                cervical: vol(1.03, 1471.0, 0.92, 497.0),
                thoracic: vol(1.03, 1354.0, 0.94, -140.0),
                lumbar: vol(1.05, 981.0, 0.94, -269.0),
            },
            gaussian: PerGroup {
                cervical: gauss(16.77, 2.18),
                thoracic: gauss(23.32, 3.55),
                lumbar: gauss(32.68, 2.84),
            },
            distance: PerGroup {
                cervical: dist(0.55, 0.45, -0.08, 0.92, 2.40, 0.98, -0.13),
                thoracic: dist(0.57, 0.44, -0.24, 0.93, 2.29, 0.97, -0.07),
                lumbar: dist(0.56, 0.46, -0.73, 0.95, 1.96, 0.96, 0.23),
            },
            mre: PerGroup {
                cervical: MreBounds {
                    both: band(9.13, 2.86),
                    previous: band(10.20, 2.05),
                    next: band(12.13, 3.36),
                },
                thoracic: MreBounds {
                    both: band(2.42, 1.43),
                    previous: band(3.96, 1.56),
                    next: band(4.17, 0.88),
                },
                lumbar: MreBounds {
                    both: band(2.04, 0.93),
                    previous: band(4.45, 1.55),
                    next: band(5.16, 1.71),
                },
            },
            // Half of the smallest training vertebra volume (7820 mm³).
            fallback_volume_mm3: 3910.0,
            fallback_gap_mm: 50.0,
            residual_fraction: 0.5,
        }
    }
}

impl AnatomyStats {
    /// Checks the sanity constraints every usable model satisfies.
    pub fn validate(&self) -> Result<()> {
        for g in AnatomicGroup::ALL {
            let v = self.volume.get(g);
            if !(v.a > 0.0 && v.b > 0.0) {
                return Err(Error::InvalidInput(format!("{g} volume slopes must be positive")));
            }
            if !(self.gaussian.get(g).sigma > 0.0) {
                return Err(Error::InvalidInput(format!("{g} gap sigma must be positive")));
            }
            let d = self.distance.get(g);
            let s = d.m1 + d.n1;
            if !(s > 0.5 && s < 1.5) {
                return Err(Error::InvalidInput(format!(
                    "{g} both-side distance weights sum to {s}, outside (0.5, 1.5)"
                )));
            }
            let m = self.mre.get(g);
            for (name, b) in [("both", m.both), ("previous", m.previous), ("next", m.next)] {
                if !(b.sigma > 0.0) {
                    return Err(Error::InvalidInput(format!("{g} {name} MRE sigma must be positive")));
                }
            }
        }
        if !(self.fallback_volume_mm3 >= 0.0 && self.fallback_gap_mm > 0.0) {
            return Err(Error::InvalidInput("fallback thresholds must be positive".into()));
        }
        if !(self.residual_fraction > 0.0 && self.residual_fraction <= 1.0) {
            return Err(Error::InvalidInput("residual fraction must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VolumeDirection {
    /// Predict a vertebra from the one above it.
    FromPrevious,
    /// Predict a vertebra from the one below it.
    FromNext,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GapMode {
    Both,
    Previous,
    Next,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GapCheck {
    Normal,
    Anomalous,
}

impl GapCheck {
    pub fn is_anomalous(self) -> bool {
        self == GapCheck::Anomalous
    }
}

pub fn predict_volume(
    stats: &AnatomyStats,
    group: AnatomicGroup,
    neighbor_volume_mm3: f64,
    direction: VolumeDirection,
) -> f64 {
    let r = stats.volume.get(group);
    match direction {
        VolumeDirection::FromPrevious => r.a * neighbor_volume_mm3 + r.c1,
        VolumeDirection::FromNext => r.b * neighbor_volume_mm3 + r.c2,
    }
}

/// Identified vertebra next to a residual, and where the residual lies
/// relative to it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeighborVolume {
    pub group: AnatomicGroup,
    pub volume_mm3: f64,
    pub direction: VolumeDirection,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ResidualDecision {
    Vertebra([f64; 3]),
    Noise,
}

/// Decides whether a residual connected component is a missed vertebra.
pub fn accept_residual(
    stats: &AnatomyStats,
    centroid_mm: [f64; 3],
    volume_mm3: f64,
    neighbor: Option<NeighborVolume>,
) -> ResidualDecision {
    let threshold = match neighbor {
        Some(n) => stats.residual_fraction * predict_volume(stats, n.group, n.volume_mm3, n.direction),
        None => stats.fallback_volume_mm3,
    };
    if volume_mm3 >= threshold {
        ResidualDecision::Vertebra(centroid_mm)
    } else {
        ResidualDecision::Noise
    }
}

/// Group whose statistics govern the gap between two vertebrae: the caudal
/// one's.
pub fn gap_group(_cranial: VertebraLabel, caudal: VertebraLabel) -> AnatomicGroup {
    caudal.group()
}

pub fn check_gap_gaussian(stats: &AnatomyStats, group: AnatomicGroup, gap_mm: f64) -> GapCheck {
    let g = stats.gaussian.get(group);
    if gap_mm > g.mu - 3.0 * g.sigma && gap_mm < g.mu + 3.0 * g.sigma {
        GapCheck::Normal
    } else {
        GapCheck::Anomalous
    }
}

/// Gap predicted from whichever neighbouring gaps are known.
pub fn predict_gap(
    stats: &AnatomyStats,
    group: AnatomicGroup,
    prev_gap: Option<f64>,
    next_gap: Option<f64>,
) -> Result<(f64, GapMode)> {
    let d = stats.distance.get(group);
    match (prev_gap, next_gap) {
        (Some(p), Some(n)) => Ok((d.m1 * p + d.n1 * n + d.k1, GapMode::Both)),
        (Some(p), None) => Ok((d.m2 * p + d.k2, GapMode::Previous)),
        (None, Some(n)) => Ok((d.n2 * n + d.k3, GapMode::Next)),
        (None, None) => Err(Error::InvalidInput(
            "gap prediction needs at least one neighbouring gap".into(),
        )),
    }
}

/// Relative error in percent.
pub fn relative_error_percent(observed: f64, predicted: f64) -> f64 {
    100.0 * (observed - predicted).abs() / predicted
}

/// A gap is anomalous when its relative error exceeds the upper end of the
/// group/mode band. Errors below the lower end mean the gap agrees with its
/// neighbours better than usual and are accepted.
pub fn check_gap_mre(
    stats: &AnatomyStats,
    group: AnatomicGroup,
    mode: GapMode,
    observed_gap: f64,
    predicted_gap: f64,
) -> GapCheck {
    let mre = relative_error_percent(observed_gap, predicted_gap);
    if mre < stats.mre.get(group).band(mode).upper() {
        GapCheck::Normal
    } else {
        GapCheck::Anomalous
    }
}
