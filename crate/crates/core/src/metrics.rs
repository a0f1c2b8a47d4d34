//! Identification rate, localization distance, Dice and Hausdorff distance.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{boundary_voxels, CompactMask, VolumeGrid};
use crate::model::{distance, VertebraLabel};

/// A predicted location counts as an identification within this distance.
pub const DEFAULT_MATCH_TOLERANCE_MM: f64 = 20.0;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalVertebra {
    pub label: VertebraLabel,
    pub location: [f64; 3],
    pub mask: Option<Arc<CompactMask>>,
}

impl EvalVertebra {
    pub fn new(label: VertebraLabel, location: [f64; 3]) -> Self {
        EvalVertebra {
            label,
            location,
            mask: None,
        }
    }
}

/// For every ground-truth vertebra, the closest same-label prediction within
/// `tolerance_mm`, as `(prediction index, distance)`.
pub fn match_vertebrae(
    predicted: &[EvalVertebra],
    truth: &[EvalVertebra],
    tolerance_mm: f64,
) -> Vec<Option<(usize, f64)>> {
    truth
        .iter()
        .map(|t| {
            predicted
                .iter()
                .enumerate()
                .filter(|(_, p)| p.label == t.label)
                .map(|(i, p)| (i, distance(p.location, t.location)))
                .filter(|&(_, d)| d <= tolerance_mm)
                .min_by(|a, b| a.1.total_cmp(&b.1))
        })
        .collect()
}

/// Percentage of ground-truth vertebrae that are identified.
pub fn id_rate(predicted: &[EvalVertebra], truth: &[EvalVertebra], tolerance_mm: f64) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::InvalidInput("identification rate needs ground truth".into()));
    }
    let hits = match_vertebrae(predicted, truth, tolerance_mm).iter().flatten().count();
    Ok(100.0 * hits as f64 / truth.len() as f64)
}

/// Mean localization distance over identified vertebrae; `None` when nothing
/// was identified.
pub fn mld(predicted: &[EvalVertebra], truth: &[EvalVertebra], tolerance_mm: f64) -> Option<f64> {
    let d: Vec<f64> = match_vertebrae(predicted, truth, tolerance_mm)
        .into_iter()
        .flatten()
        .map(|m| m.1)
        .collect();
    (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
}

fn dice_counts(a: usize, b: usize, both: usize) -> f64 {
    if a + b == 0 {
        1.0
    } else {
        2.0 * both as f64 / (a + b) as f64
    }
}

/// `2|A∩B| / (|A|+|B|)`; two empty masks score 1.
pub fn dice(a: &VolumeGrid, b: &VolumeGrid) -> Result<f64> {
    a.geometry().ensure_same(b.geometry(), "dice")?;
    let (x, y) = (a.binary()?, b.binary()?);
    let mut counts = (0usize, 0usize, 0usize);
    for (&p, &q) in x.iter().zip(y) {
        counts.0 += (p != 0) as usize;
        counts.1 += (q != 0) as usize;
        counts.2 += (p != 0 && q != 0) as usize;
    }
    Ok(dice_counts(counts.0, counts.1, counts.2))
}

pub fn dice_compact(a: &CompactMask, b: &CompactMask) -> Result<f64> {
    a.geometry().ensure_same(b.geometry(), "dice")?;
    let both = a.voxel_indices().into_iter().filter(|&v| b.contains_index(v)).count();
    Ok(dice_counts(a.voxel_count(), b.voxel_count(), both))
}

/// Point set sorted along x for pruned nearest-neighbour queries.
struct SortedPoints(Vec<[f64; 3]>);

impl SortedPoints {
    fn new(mut p: Vec<[f64; 3]>) -> Self {
        p.sort_by(|a, b| a[0].total_cmp(&b[0]));
        SortedPoints(p)
    }

    fn nearest(&self, q: [f64; 3]) -> f64 {
        let p = &self.0;
        let start = p.partition_point(|a| a[0] < q[0]);
        let mut best = f64::INFINITY;
        let d2 = |a: &[f64; 3]| (a[0] - q[0]).powi(2) + (a[1] - q[1]).powi(2) + (a[2] - q[2]).powi(2);
        for a in &p[start..] {
            if (a[0] - q[0]).powi(2) > best {
                break;
            }
            best = best.min(d2(a));
        }
        for a in p[..start].iter().rev() {
            if (a[0] - q[0]).powi(2) > best {
                break;
            }
            best = best.min(d2(a));
        }
        best.sqrt()
    }
}

/// Nearest-rank percentile of `d` (`percentile` in (0, 100]).
fn percentile_of(mut d: Vec<f64>, percentile: f64) -> f64 {
    d.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0) * d.len() as f64).ceil() as usize;
    d[rank.clamp(1, d.len()) - 1]
}

/// Symmetric Hausdorff distance between two point sets: the larger of the two
/// directed percentiles of nearest-point distances. `None` if either set is
/// empty.
pub fn hausdorff_points(a: &[[f64; 3]], b: &[[f64; 3]], percentile: f64) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let directed = |from: &[[f64; 3]], to: &[[f64; 3]]| {
        let idx = SortedPoints::new(to.to_vec());
        percentile_of(from.iter().map(|&q| idx.nearest(q)).collect(), percentile)
    };
    Some(directed(a, b).max(directed(b, a)))
}

fn check_percentile(p: f64) -> Result<()> {
    if p > 0.0 && p <= 100.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("percentile {p} outside (0, 100]")))
    }
}

/// Hausdorff distance over boundary voxels in world mm; `None` when either
/// mask is empty. `percentile = 100` gives the exact maximum.
pub fn hausdorff(a: &VolumeGrid, b: &VolumeGrid, percentile: f64) -> Result<Option<f64>> {
    check_percentile(percentile)?;
    a.geometry().ensure_same(b.geometry(), "hausdorff")?;
    Ok(hausdorff_points(&boundary_voxels(a)?, &boundary_voxels(b)?, percentile))
}

pub fn hausdorff_compact(a: &CompactMask, b: &CompactMask, percentile: f64) -> Result<Option<f64>> {
    check_percentile(percentile)?;
    a.geometry().ensure_same(b.geometry(), "hausdorff")?;
    Ok(hausdorff_points(&a.boundary_mm(), &b.boundary_mm(), percentile))
}

#[derive(Clone, Debug, PartialEq)]
pub struct VertebraMetrics {
    pub label: VertebraLabel,
    pub identified: bool,
    pub distance_mm: Option<f64>,
    pub dice: Option<f64>,
    pub hausdorff_mm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<VertebraMetrics>,
    pub id_rate: f64,
    pub mld_mm: Option<f64>,
    pub mean_dice: Option<f64>,
    pub mean_hausdorff_mm: Option<f64>,
}

fn mean_of(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Per-vertebra and aggregate metrics. Segmentation scores are computed only
/// for identified vertebrae where both sides carry a mask.
pub fn evaluate(
    predicted: &[EvalVertebra],
    truth: &[EvalVertebra],
    tolerance_mm: f64,
    hd_percentile: f64,
) -> Result<EvalReport> {
    check_percentile(hd_percentile)?;
    let matches = match_vertebrae(predicted, truth, tolerance_mm);
    let mut rows = Vec::with_capacity(truth.len());
    for (t, m) in truth.iter().zip(&matches) {
        let mut row = VertebraMetrics {
            label: t.label,
            identified: m.is_some(),
            distance_mm: m.map(|m| m.1),
            dice: None,
            hausdorff_mm: None,
        };
        if let Some((pi, _)) = m {
            if let (Some(pm), Some(tm)) = (&predicted[*pi].mask, &t.mask) {
                row.dice = Some(dice_compact(pm, tm)?);
                row.hausdorff_mm = hausdorff_compact(pm, tm, hd_percentile)?;
            }
        }
        rows.push(row);
    }
    Ok(EvalReport {
        id_rate: id_rate(predicted, truth, tolerance_mm)?,
        mld_mm: mld(predicted, truth, tolerance_mm),
        mean_dice: mean_of(rows.iter().filter_map(|r| r.dice)),
        mean_hausdorff_mm: mean_of(rows.iter().filter_map(|r| r.hausdorff_mm)),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Geometry;
    use proptest::prelude::*;

    fn v(l: &str, z: f64) -> EvalVertebra {
        EvalVertebra::new(l.parse().unwrap(), [0.0, 0.0, z])
    }

    fn brute_hd(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
        let d = |p: &[f64; 3], q: &[f64; 3]| distance(*p, *q);
        let dir = |x: &[[f64; 3]], y: &[[f64; 3]]| {
            x.iter()
                .map(|p| y.iter().map(|q| d(p, q)).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
        };
        dir(a, b).max(dir(b, a))
    }

    #[test]
    fn identification_rate() {
        let gt = [v("L1", 0.0), v("L2", -30.0), v("L3", -60.0), v("L4", -90.0), v("L5", -120.0)];
        assert_eq!(id_rate(&gt, &gt, 20.0).unwrap(), 100.0);
        let mut p = gt.to_vec();
        p[4].label = "L4".parse().unwrap();
        assert_eq!(id_rate(&p, &gt, 20.0).unwrap(), 80.0);
        let far = [v("L1", 25.0)];
        assert_eq!(id_rate(&far, &gt[..1], 20.0).unwrap(), 0.0);
        assert!(id_rate(&gt, &[], 20.0).is_err());
    }

    #[test]
    fn localization_distance() {
        let gt = [v("T1", 0.0), v("T2", -20.0)];
        assert_eq!(mld(&gt, &gt, 20.0), Some(0.0));
        let shifted: Vec<_> = gt.iter().map(|g| v(&g.label.name(), g.location[2] + 3.0)).collect();
        assert!((mld(&shifted, &gt, 20.0).unwrap() - 3.0).abs() < 1e-12);
        let p = [v("T1", 2.0), v("T2", -24.0)];
        assert!((mld(&p, &gt, 20.0).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(mld(&[v("T5", 0.0)], &gt, 20.0), None);
    }

    fn cube(g: Geometry, lo: usize, side: usize) -> VolumeGrid {
        VolumeGrid::mask_from_fn(g, |i, j, k| [i, j, k].iter().all(|&c| c >= lo && c < lo + side))
    }

    #[test]
    fn dice_cases() {
        let g = Geometry::ras([12, 12, 12], 1.0, [0.0; 3]).unwrap();
        let a = cube(g, 0, 4);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &cube(g, 6, 4)).unwrap(), 0.0);
        let b = VolumeGrid::mask_from_fn(g, |i, j, k| (2..6).contains(&i) && j < 4 && k < 4);
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        let e = VolumeGrid::empty_mask(g);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        let ca = CompactMask::from_grid(&a).unwrap();
        let cb = CompactMask::from_grid(&b).unwrap();
        assert_eq!(dice_compact(&ca, &cb).unwrap(), 0.5);
        let other = Geometry::ras([12, 12, 13], 1.0, [0.0; 3]).unwrap();
        assert!(dice(&a, &VolumeGrid::empty_mask(other)).is_err());
    }

    #[test]
    fn hausdorff_cases() {
        let g = Geometry::ras([12, 12, 12], 1.0, [0.0; 3]).unwrap();
        let a = cube(g, 1, 4);
        assert_eq!(hausdorff(&a, &a, 100.0).unwrap(), Some(0.0));
        let p = VolumeGrid::mask_from_fn(g, |i, j, k| (i, j, k) == (1, 1, 1));
        let q = VolumeGrid::mask_from_fn(g, |i, j, k| (i, j, k) == (6, 1, 1));
        assert_eq!(hausdorff(&p, &q, 100.0).unwrap(), Some(5.0));
        assert_eq!(hausdorff(&p, &VolumeGrid::empty_mask(g), 100.0).unwrap(), None);
        assert!(hausdorff(&p, &q, 0.0).is_err());
    }

    /// Concentric cubes of side 10 and 6 on a 1 mm grid: the outer corner is
    /// √(2²+2²+2²) from the inner corner, the farthest boundary-to-boundary
    /// pairing.
    #[test]
    fn nested_cubes() {
        let g = Geometry::ras([14, 14, 14], 1.0, [0.0; 3]).unwrap();
        let outer = cube(g, 2, 10);
        let inner = cube(g, 4, 6);
        let hd = hausdorff(&outer, &inner, 100.0).unwrap().unwrap();
        let bo = boundary_voxels(&outer).unwrap();
        let bi = boundary_voxels(&inner).unwrap();
        assert!((hd - brute_hd(&bo, &bi)).abs() < 1e-9);
        assert!((hd - 12f64.sqrt()).abs() < 1e-12);
        let co = CompactMask::from_grid(&outer).unwrap();
        let ci = CompactMask::from_grid(&inner).unwrap();
        assert_eq!(hausdorff_compact(&co, &ci, 100.0).unwrap(), Some(hd));
    }

    #[test]
    fn percentile_ranks() {
        assert_eq!(percentile_of(vec![4.0, 1.0, 3.0, 2.0], 100.0), 4.0);
        assert_eq!(percentile_of(vec![4.0, 1.0, 3.0, 2.0], 50.0), 2.0);
        assert_eq!(percentile_of(vec![4.0, 1.0, 3.0, 2.0], 1.0), 1.0);
    }

    #[test]
    fn full_evaluation() {
        let g = Geometry::ras([20, 20, 40], 1.0, [0.0; 3]).unwrap();
        let m = |z0: usize| {
            Arc::new(CompactMask::from_grid(&VolumeGrid::mask_from_fn(g, |i, j, k| {
                (5..10).contains(&i) && (5..10).contains(&j) && (z0..z0 + 5).contains(&k)
            })).unwrap())
        };
        let gt = vec![
            EvalVertebra { mask: Some(m(30)), ..v("L1", 32.0) },
            EvalVertebra { mask: Some(m(20)), ..v("L2", 22.0) },
            EvalVertebra { mask: Some(m(10)), ..v("L3", 12.0) },
        ];
        let mut pred = gt.clone();
        pred[2].label = "L4".parse().unwrap();
        let r = evaluate(&pred, &gt, 20.0, 100.0).unwrap();
        assert!((r.id_rate - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.mld_mm, Some(0.0));
        assert_eq!(r.mean_dice, Some(1.0));
        assert_eq!(r.mean_hausdorff_mm, Some(0.0));
        assert!(!r.rows[2].identified && r.rows[2].dice.is_none());
    }

    fn point_set() -> impl Strategy<Value = Vec<[f64; 3]>> {
        prop::collection::vec(prop::array::uniform3(-20.0f64..20.0), 1..40)
    }

    proptest! {
        #[test]
        fn hausdorff_matches_brute_force(a in point_set(), b in point_set(), t in prop::array::uniform3(-50.0f64..50.0)) {
            let hd = hausdorff_points(&a, &b, 100.0).unwrap();
            prop_assert!((hd - brute_hd(&a, &b)).abs() < 1e-9);
            prop_assert_eq!(hd, hausdorff_points(&b, &a, 100.0).unwrap());
            let shift = |p: &Vec<[f64; 3]>| p.iter().map(|q| [q[0] + t[0], q[1] + t[1], q[2] + t[2]]).collect::<Vec<_>>();
            let moved = hausdorff_points(&shift(&a), &shift(&b), 100.0).unwrap();
            prop_assert!((moved - hd).abs() < 1e-9);
            prop_assert!(hausdorff_points(&a, &a, 100.0).unwrap() == 0.0);
        }

        #[test]
        fn dice_is_symmetric_and_bounded(bits_a in prop::collection::vec(any::<bool>(), 64), bits_b in prop::collection::vec(any::<bool>(), 64)) {
            let g = Geometry::ras([4, 4, 4], 1.0, [0.0; 3]).unwrap();
            let a = VolumeGrid::mask_from_fn(g, |i, j, k| bits_a[i + 4 * (j + 4 * k)]);
            let b = VolumeGrid::mask_from_fn(g, |i, j, k| bits_b[i + 4 * (j + 4 * k)]);
            let d = dice(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(d, dice(&b, &a).unwrap());
            prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn extra_correct_prediction_never_lowers_id_rate(zs in prop::collection::vec(-200.0f64..200.0, 1..10), k in 0usize..10, noise in prop::collection::vec(-30.0f64..30.0, 10)) {
            let labels = ["C3", "C4", "C5", "C6", "C7", "T1", "T2", "T3", "T4", "T5"];
            let gt: Vec<_> = zs.iter().enumerate().map(|(i, &z)| v(labels[i], z)).collect();
            let pred: Vec<_> = gt.iter().zip(&noise).map(|(g, n)| v(&g.label.name(), g.location[2] + n)).collect();
            let before = id_rate(&pred, &gt, 20.0).unwrap();
            let mut more = pred.clone();
            more.push(gt[k % gt.len()].clone());
            prop_assert!(id_rate(&more, &gt, 20.0).unwrap() >= before);
        }
    }
}
