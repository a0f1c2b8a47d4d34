use super::{check_gap_gaussian, check_gap_mre, gap_group, predict_gap, relative_error_percent, AnatomyStats, GapCheck, GapMode};
use crate::grid::Aabb;
use crate::model::{distance, AnatomicGroup, VertebraLabel, VertebraRecord};

/// Outcome of the distance checks for the gap between records `index` and
/// `index + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct GapAssessment {
    pub index: usize,
    pub length_mm: f64,
    /// `None` when either flanking record is unlabeled.
    pub group: Option<AnatomicGroup>,
    pub gaussian: Option<GapCheck>,
    /// Regressor mode, relative error (%) and decision, when a normal
    /// neighbouring gap was available to predict from.
    pub mre: Option<(GapMode, f64, GapCheck)>,
    pub predicted_mm: f64,
    pub anomalous: bool,
}

/// Runs the Gaussian and relative-error checks over every consecutive pair of
/// a sorted record list. Neighbouring gaps feed the regressors only when they
/// pass the Gaussian check themselves, so one displaced vertebra does not
/// spread anomalies to gaps further away. Unlabeled pairs fall back to the
/// fixed distance threshold.
pub fn analyze_gaps(stats: &AnatomyStats, records: &[VertebraRecord]) -> Vec<GapAssessment> {
    if records.len() < 2 {
        return Vec::new();
    }
    let lengths: Vec<f64> = records
        .windows(2)
        .map(|w| distance(w[0].location, w[1].location))
        .collect();
    let groups: Vec<Option<AnatomicGroup>> = records
        .windows(2)
        .map(|w| match (w[0].label, w[1].label) {
            (Some(a), Some(b)) => Some(gap_group(a, b)),
            _ => None,
        })
        .collect();
    let gaussian: Vec<Option<GapCheck>> = groups
        .iter()
        .zip(&lengths)
        .map(|(g, &len)| g.map(|g| check_gap_gaussian(stats, g, len)))
        .collect();
    let usable = |j: usize| gaussian[j] == Some(GapCheck::Normal);

    let fallback_normal: Vec<f64> = lengths
        .iter()
        .copied()
        .filter(|&l| l <= stats.fallback_gap_mm)
        .collect();

    (0..lengths.len())
        .map(|i| {
            let len = lengths[i];
            match groups[i] {
                Some(group) => {
                    let prev = (i > 0 && usable(i - 1)).then(|| lengths[i - 1]);
                    let next = (i + 1 < lengths.len() && usable(i + 1)).then(|| lengths[i + 1]);
                    let mre = predict_gap(stats, group, prev, next).ok().map(|(pred, mode)| {
                        let check = check_gap_mre(stats, group, mode, len, pred);
                        (mode, relative_error_percent(len, pred), check, pred)
                    });
                    let predicted_mm = mre.map_or(stats.gaussian.get(group).mu, |m| m.3);
                    let g = gaussian[i].expect("labeled gap has a gaussian decision");
                    let anomalous = g.is_anomalous() || mre.is_some_and(|m| m.2.is_anomalous());
                    GapAssessment {
                        index: i,
                        length_mm: len,
                        group: Some(group),
                        gaussian: Some(g),
                        mre: mre.map(|(mode, e, c, _)| (mode, e, c)),
                        predicted_mm,
                        anomalous,
                    }
                }
                None => {
                    let others: Vec<f64> = fallback_normal.iter().copied().filter(|&l| l != len).collect();
                    let predicted_mm = if others.is_empty() {
                        len / 2.0
                    } else {
                        others.iter().sum::<f64>() / others.len() as f64
                    };
                    GapAssessment {
                        index: i,
                        length_mm: len,
                        group: None,
                        gaussian: None,
                        mre: None,
                        predicted_mm,
                        anomalous: len > stats.fallback_gap_mm,
                    }
                }
            }
        })
        .collect()
}

/// Number of vertebrae presumed missing inside a gap.
pub fn candidate_count(gap_mm: f64, predicted_mm: f64) -> usize {
    let ratio = (gap_mm / predicted_mm).round() as i64;
    (ratio - 1).max(1) as usize
}

/// Evenly spaced candidate locations inside every anomalously large gap.
pub fn gap_candidates(stats: &AnatomyStats, records: &[VertebraRecord]) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    for gap in analyze_gaps(stats, records) {
        if !gap.anomalous || gap.length_mm <= gap.predicted_mm {
            continue;
        }
        let a = records[gap.index].location;
        let b = records[gap.index + 1].location;
        let n = candidate_count(gap.length_mm, gap.predicted_mm);
        for m in 1..=n {
            let t = m as f64 / (n + 1) as f64;
            out.push(std::array::from_fn(|ax| a[ax] + t * (b[ax] - a[ax])));
        }
    }
    out
}

/// Extrapolated locations above the top / below the bottom record when the
/// column is not known to end there, kept only inside the field of view.
pub fn extreme_candidates(records: &[VertebraRecord], field_of_view: &Aabb) -> Vec<[f64; 3]> {
    let n = records.len();
    if n < 2 {
        return Vec::new();
    }
    let extrapolate = |end: [f64; 3], inner: [f64; 3]| -> [f64; 3] {
        std::array::from_fn(|ax| end[ax] + (end[ax] - inner[ax]))
    };
    let mut out = Vec::new();
    if records[0].label.is_some_and(|l| l != VertebraLabel::C1) {
        let p = extrapolate(records[0].location, records[1].location);
        if field_of_view.strictly_contains(p) {
            out.push(p);
        }
    }
    if records[n - 1]
        .label
        .is_some_and(|l| l != VertebraLabel::L5 && l != VertebraLabel::L6)
    {
        let p = extrapolate(records[n - 1].location, records[n - 2].location);
        if field_of_view.strictly_contains(p) {
            out.push(p);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn column(labels: &[&str], zs: &[f64]) -> Vec<VertebraRecord> {
        labels
            .iter()
            .zip(zs)
            .map(|(l, &z)| VertebraRecord::at([0.0, 0.0, z]).labeled(l.parse().unwrap()))
            .collect()
    }

    /// z positions top-down from successive gaps.
    fn zs_from_gaps(top: f64, gaps: &[f64]) -> Vec<f64> {
        let mut z = vec![top];
        for g in gaps {
            z.push(z.last().unwrap() - g);
        }
        z
    }

    #[test]
    fn doubled_gap_gives_midpoint() {
        let s = AnatomyStats::default();
        let zs = zs_from_gaps(300.0, &[23.3, 46.0, 23.3]);
        let recs = column(&["T4", "T5", "T6", "T7"], &zs);
        let gaps = analyze_gaps(&s, &recs);
        assert!(gaps[1].anomalous);
        assert!((gaps[1].predicted_mm - 23.0).abs() < 0.5);
        let c = gap_candidates(&s, &recs);
        assert_eq!(c.len(), 1);
        assert!((c[0][2] - (zs[1] - 23.0)).abs() < 1e-9);
    }

    #[test]
    fn tripled_gap_gives_two_candidates() {
        let s = AnatomyStats::default();
        let zs = zs_from_gaps(300.0, &[23.3, 70.0, 23.3]);
        let recs = column(&["T4", "T5", "T6", "T7"], &zs);
        let c = gap_candidates(&s, &recs);
        assert_eq!(c.len(), 2);
        assert!((c[0][2] - (zs[1] - 70.0 / 3.0)).abs() < 1e-9);
        assert!((c[1][2] - (zs[1] - 140.0 / 3.0)).abs() < 1e-9);
    }

    #[test]
    fn normal_gaps_give_nothing() {
        let s = AnatomyStats::default();
        let zs = zs_from_gaps(300.0, &[23.0, 23.5, 24.0]);
        let recs = column(&["T4", "T5", "T6", "T7"], &zs);
        assert!(gap_candidates(&s, &recs).is_empty());
    }

    #[test]
    fn unlabeled_gaps_use_fixed_threshold() {
        let s = AnatomyStats::default();
        let recs: Vec<_> = [100.0, 51.0].iter().map(|&z| VertebraRecord::at([0.0, 0.0, z])).collect();
        assert!(gap_candidates(&s, &recs).is_empty());
        let recs: Vec<_> = [100.0, 40.0].iter().map(|&z| VertebraRecord::at([0.0, 0.0, z])).collect();
        let c = gap_candidates(&s, &recs);
        assert_eq!(c, vec![[0.0, 0.0, 70.0]]);
    }

    #[test]
    fn small_gaps_are_anomalous_but_produce_no_candidates() {
        let s = AnatomyStats::default();
        let zs = zs_from_gaps(300.0, &[33.0, 12.0, 33.0]);
        let recs = column(&["L1", "L2", "L3", "L4"], &zs);
        let gaps = analyze_gaps(&s, &recs);
        assert!(gaps[1].anomalous);
        assert!(gap_candidates(&s, &recs).is_empty());
    }

    #[test]
    fn caudal_group_governs_junction_gaps() {
        let s = AnatomyStats::default();
        // 22 mm is abnormal for a lumbar gap (lower bound 24.16) but fine for
        // a thoracic one.
        let recs = column(&["T11", "T12", "L1"], &[100.0, 78.0, 56.0]);
        let gaps = analyze_gaps(&s, &recs);
        assert_eq!(gaps[0].group, Some(AnatomicGroup::Thoracic));
        assert_eq!(gaps[0].gaussian, Some(GapCheck::Normal));
        assert_eq!(gaps[1].group, Some(AnatomicGroup::Lumbar));
        assert_eq!(gaps[1].gaussian, Some(GapCheck::Anomalous));
    }

    #[test]
    fn extremes() {
        let fov = Aabb {
            min: [-50.0, -50.0, 0.0],
            max: [50.0, 50.0, 200.0],
        };
        let recs = column(&["C1", "C2"], &[100.0, 80.0]);
        let c = extreme_candidates(&recs, &fov);
        assert_eq!(c, vec![[0.0, 0.0, 60.0]]);

        let recs = column(&["C3", "C4"], &[100.0, 80.0]);
        assert_eq!(extreme_candidates(&recs, &fov), vec![[0.0, 0.0, 120.0], [0.0, 0.0, 60.0]]);

        let recs = column(&["C3", "C4"], &[190.0, 170.0]);
        assert_eq!(extreme_candidates(&recs, &fov), vec![[0.0, 0.0, 150.0]]);

        let recs = column(&["L4", "L5"], &[40.0, 10.0]);
        // top is L4, so only the cranial side is extrapolated
        assert_eq!(extreme_candidates(&recs, &fov), vec![[0.0, 0.0, 70.0]]);
        let recs = column(&["L5", "L6"], &[199.0, 170.0]);
        assert!(extreme_candidates(&recs, &fov).is_empty());
        assert!(extreme_candidates(&recs[..1], &fov).is_empty());
    }

    proptest! {
        #[test]
        fn passing_gaps_produce_no_candidates(gaps in prop::collection::vec(20.0f64..27.0, 1..10)) {
            let s = AnatomyStats::default();
            let labels: Vec<String> = (0..=gaps.len()).map(|i| format!("T{}", i + 1)).collect();
            let zs = zs_from_gaps(500.0, &gaps);
            let recs: Vec<_> = labels.iter().zip(&zs)
                .map(|(l, &z)| VertebraRecord::at([0.0, 0.0, z]).labeled(l.parse().unwrap()))
                .collect();
            let assessed = analyze_gaps(&s, &recs);
            if assessed.iter().all(|g| !g.anomalous) {
                prop_assert!(gap_candidates(&s, &recs).is_empty());
            }
        }
    }
}
