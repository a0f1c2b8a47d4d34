//! Least-squares fitting of the priors from annotated scans.

use serde::{Deserialize, Serialize};

use super::{
    AnatomyStats, DistanceGaussian, DistanceRegressor, MreBand, MreBounds, PerGroup, VolumeRegressor,
};
use crate::error::{Error, Result};
use crate::model::{AnatomicGroup, VertebraLabel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedVertebra {
    pub label: VertebraLabel,
    pub volume_mm3: f64,
    pub centroid: [f64; 3],
}

/// Ground-truth vertebrae of one scan, ordered cranial to caudal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanAnnotation {
    pub scan_id: String,
    pub vertebrae: Vec<AnnotatedVertebra>,
}

/// `y = slope·x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Ordinary least squares on centred data. `None` with fewer than two samples
/// or no spread in `x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Option<LineFit> {
    assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
    }
    if !(sxx > 1e-12 * (1.0 + mx * mx) * x.len() as f64) {
        return None;
    }
    let slope = sxy / sxx;
    Some(LineFit {
        slope,
        intercept: my - slope * mx,
    })
}

/// `y = p·x1 + q·x2 + k`, returned as `(p, q, k)`. `None` when the design is
/// singular.
pub fn fit_plane(x1: &[f64], x2: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    assert!(x1.len() == x2.len() && x2.len() == y.len());
    if y.len() < 3 {
        return None;
    }
    let (m1, m2, my) = (mean(x1), mean(x2), mean(y));
    let (mut s11, mut s12, mut s22, mut s1y, mut s2y) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..y.len() {
        let (a, b, c) = (x1[i] - m1, x2[i] - m2, y[i] - my);
        s11 += a * a;
        s12 += a * b;
        s22 += b * b;
        s1y += a * c;
        s2y += b * c;
    }
    let det = s11 * s22 - s12 * s12;
    if !(det > 1e-10 * s11 * s22) {
        return None;
    }
    let p = (s1y * s22 - s2y * s12) / det;
    let q = (s2y * s11 - s1y * s12) / det;
    Some((p, q, my - p * m1 - q * m2))
}

/// Sample mean and (n−1) standard deviation.
pub fn fit_gaussian(samples: &[f64]) -> Option<DistanceGaussian> {
    if samples.len() < 2 {
        return None;
    }
    let mu = mean(samples);
    let var = samples.iter().map(|s| (s - mu) * (s - mu)).sum::<f64>() / (samples.len() - 1) as f64;
    Some(DistanceGaussian { mu, sigma: var.sqrt() })
}

/// Relative-error band from `(observed, predicted)` pairs.
pub fn fit_mre_band(pairs: &[(f64, f64)]) -> Option<MreBand> {
    let errs: Vec<f64> = pairs
        .iter()
        .map(|&(o, p)| super::relative_error_percent(o, p))
        .collect();
    fit_gaussian(&errs).map(|g| MreBand { mu: g.mu, sigma: g.sigma })
}

/// Whether two annotated neighbours are anatomically consecutive (allowing
/// for transitional vertebrae and an absent T12).
pub fn consecutive(a: VertebraLabel, b: VertebraLabel) -> bool {
    let d = b.level() - a.level();
    (d > 0.0 && d <= 1.0) || (a == VertebraLabel::T11 && b == VertebraLabel::L1)
}

/// Per-group training samples extracted from annotations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroupSamples {
    /// `(S_{i−1}, S_i)` with the previous vertebra in this group.
    pub volume_from_previous: Vec<(f64, f64)>,
    /// `(S_{i+1}, S_i)` with the next vertebra in this group.
    pub volume_from_next: Vec<(f64, f64)>,
    pub gaps: Vec<f64>,
    /// `(G_{i−1}, G_{i+1}, G_i)`.
    pub gap_both: Vec<(f64, f64, f64)>,
    /// `(G_{i−1}, G_i)`.
    pub gap_previous: Vec<(f64, f64)>,
    /// `(G_{i+1}, G_i)`.
    pub gap_next: Vec<(f64, f64)>,
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    crate::model::distance(a, b)
}

pub fn collect_samples(annotations: &[ScanAnnotation]) -> PerGroup<GroupSamples> {
    let mut out: PerGroup<GroupSamples> = PerGroup {
        cervical: GroupSamples::default(),
        thoracic: GroupSamples::default(),
        lumbar: GroupSamples::default(),
    };
    fn slot(p: &mut PerGroup<GroupSamples>, g: AnatomicGroup) -> &mut GroupSamples {
        match g {
            AnatomicGroup::Cervical => &mut p.cervical,
            AnatomicGroup::Thoracic => &mut p.thoracic,
            AnatomicGroup::Lumbar => &mut p.lumbar,
        }
    }
    for scan in annotations {
        let v = &scan.vertebrae;
        // gap i lies between v[i] and v[i+1]; None where not consecutive
        let gaps: Vec<Option<f64>> = v
            .windows(2)
            .map(|w| consecutive(w[0].label, w[1].label).then(|| dist(w[0].centroid, w[1].centroid)))
            .collect();
        for (i, w) in v.windows(2).enumerate() {
            if gaps[i].is_none() {
                continue;
            }
            let (prev, next) = (&w[0], &w[1]);
            slot(&mut out, prev.label.group())
                .volume_from_previous
                .push((prev.volume_mm3, next.volume_mm3));
            slot(&mut out, next.label.group())
                .volume_from_next
                .push((next.volume_mm3, prev.volume_mm3));
        }
        for i in 0..gaps.len() {
            let Some(g) = gaps[i] else { continue };
            let s = slot(&mut out, v[i + 1].label.group());
            s.gaps.push(g);
            let before = if i > 0 { gaps[i - 1] } else { None };
            let after = gaps.get(i + 1).copied().flatten();
            if let Some(p) = before {
                s.gap_previous.push((p, g));
            }
            if let Some(n) = after {
                s.gap_next.push((n, g));
            }
            if let (Some(p), Some(n)) = (before, after) {
                s.gap_both.push((p, n, g));
            }
        }
    }
    out
}

fn need<T>(v: Option<T>, group: AnatomicGroup, what: &str, n: usize) -> Result<T> {
    v.ok_or_else(|| Error::InsufficientSamples {
        group,
        detail: format!("{what}: {n} usable samples"),
    })
}

fn fit_line_pairs(pairs: &[(f64, f64)]) -> Option<LineFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    fit_line(&x, &y)
}

/// Fits every model of one group from its samples.
pub fn fit_group(
    group: AnatomicGroup,
    s: &GroupSamples,
) -> Result<(VolumeRegressor, DistanceGaussian, DistanceRegressor, MreBounds)> {
    let vp = need(fit_line_pairs(&s.volume_from_previous), group, "volume from previous", s.volume_from_previous.len())?;
    let vn = need(fit_line_pairs(&s.volume_from_next), group, "volume from next", s.volume_from_next.len())?;
    let gauss = need(fit_gaussian(&s.gaps), group, "gaps", s.gaps.len())?;
    let gp = need(fit_line_pairs(&s.gap_previous), group, "gap from previous", s.gap_previous.len())?;
    let gn = need(fit_line_pairs(&s.gap_next), group, "gap from next", s.gap_next.len())?;
    let (x1, x2, y): (Vec<f64>, Vec<f64>, Vec<f64>) = s.gap_both.iter().fold(
        (Vec::new(), Vec::new(), Vec::new()),
        |(mut a, mut b, mut c), &(p, n, g)| {
            a.push(p);
            b.push(n);
            c.push(g);
            (a, b, c)
        },
    );
    let (m1, n1, k1) = need(fit_plane(&x1, &x2, &y), group, "gap from both sides", y.len())?;
    let distance = DistanceRegressor {
        m1,
        n1,
        k1,
        m2: gp.slope,
        k2: gp.intercept,
        n2: gn.slope,
        k3: gn.intercept,
    };
    let both: Vec<(f64, f64)> = s
        .gap_both
        .iter()
        .map(|&(p, n, g)| (g, m1 * p + n1 * n + k1))
        .collect();
    let prev: Vec<(f64, f64)> = s.gap_previous.iter().map(|&(p, g)| (g, gp.slope * p + gp.intercept)).collect();
    let next: Vec<(f64, f64)> = s.gap_next.iter().map(|&(n, g)| (g, gn.slope * n + gn.intercept)).collect();
    let mre = MreBounds {
        both: need(fit_mre_band(&both), group, "both-side relative errors", both.len())?,
        previous: need(fit_mre_band(&prev), group, "previous relative errors", prev.len())?,
        next: need(fit_mre_band(&next), group, "next relative errors", next.len())?,
    };
    let volume = VolumeRegressor {
        a: vp.slope,
        c1: vp.intercept,
        b: vn.slope,
        c2: vn.intercept,
    };
    Ok((volume, gauss, distance, mre))
}

/// Fits all priors. Only anatomically consecutive annotated neighbours
/// contribute; gaps belong to the caudal vertebra's group, volume regressors
/// to the group of the vertebra they predict from. The volume fallback is
/// half the smallest annotated volume; the gap fallback keeps its default.
/// The result is not validated: noiseless data legitimately yields zero
/// spreads.
pub fn fit_stats(annotations: &[ScanAnnotation]) -> Result<AnatomyStats> {
    let samples = collect_samples(annotations);
    let fitted = PerGroup::try_from_fn(|g| fit_group(g, samples.get(g)))?;
    let min_volume = annotations
        .iter()
        .flat_map(|a| a.vertebrae.iter().map(|v| v.volume_mm3))
        .fold(f64::INFINITY, f64::min);
    let defaults = AnatomyStats::default();
    Ok(AnatomyStats {
        volume: fitted.map(|t| t.0),
        gaussian: fitted.map(|t| t.1),
        distance: fitted.map(|t| t.2),
        mre: fitted.map(|t| t.3),
        fallback_volume_mm3: min_volume / 2.0,
        fallback_gap_mm: defaults.fallback_gap_mm,
        residual_fraction: defaults.residual_fraction,
    })
}
