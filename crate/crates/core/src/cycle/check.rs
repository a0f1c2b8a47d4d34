use std::fmt;

use sha2::{Digest, Sha256};

use super::CycleConfig;
use crate::error::{Error, Result};
use crate::grid::{connected_components, Aabb, ComponentSet, VolumeGrid, VoxelData};
use crate::model::{distance, InconsistencyKind, InconsistencyReport, RecordFlag, SpineState, VertebraRecord};
use crate::priors::{
    accept_residual, analyze_gaps, extreme_candidates, AnatomyStats, NeighborVolume, ResidualDecision,
    VolumeDirection,
};

/// Half-width of the report region around a point-like finding, mm.
const POINT_REGION_MM: f64 = 5.0;

/// Spine voxels not covered by any record mask.
pub fn residual_mask(spine: &VolumeGrid, records: &[VertebraRecord]) -> Result<VolumeGrid> {
    let g = *spine.geometry();
    let mut covered = VolumeGrid::empty_mask(g);
    for r in records {
        if let Some(m) = &r.mask {
            m.paint_into(&mut covered, 1)?;
        }
    }
    let cov = covered.as_u8().expect("u8 mask");
    let data = spine.binary()?.iter().zip(cov).map(|(&s, &c)| s & (1 - c)).collect();
    VolumeGrid::new(g, VoxelData::U8(data))
}

/// Records that bound the column: no extrapolation beyond an end already
/// kept on anatomical grounds without a segmentation.
pub(crate) fn extremes_for(records: &[VertebraRecord], fov: &Aabb) -> Vec<[f64; 3]> {
    if records.len() < 2 {
        return Vec::new();
    }
    let n = records.len();
    let mut out = Vec::new();
    for p in extreme_candidates(records, fov) {
        let top = distance(p, records[0].location) < distance(p, records[n - 1].location);
        let end = if top { &records[0] } else { &records[n - 1] };
        if !end.has_flag(RecordFlag::EmptySegmentation) {
            out.push(p);
        }
    }
    out
}

/// Volume context for a residual component: the nearest labeled, segmented
/// record, provided it is close enough to be the component's anatomical
/// neighbour. Farther components are judged with the fixed threshold.
pub fn neighbor_context(stats: &AnatomyStats, records: &[VertebraRecord], centroid: [f64; 3]) -> Option<NeighborVolume> {
    let (r, d) = records
        .iter()
        .filter(|r| r.label.is_some() && r.volume_mm3 > 0.0)
        .map(|r| (r, distance(r.location, centroid)))
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    let group = r.label.expect("filtered").group();
    if d > 1.5 * stats.gaussian.get(group).mu {
        return None;
    }
    // z is superior in world coordinates
    let direction = if centroid[2] < r.location[2] {
        VolumeDirection::FromPrevious
    } else {
        VolumeDirection::FromNext
    };
    Some(NeighborVolume {
        group,
        volume_mm3: r.volume_mm3,
        direction,
    })
}

fn point_region(p: [f64; 3]) -> Aabb {
    Aabb::from_point(p).padded(POINT_REGION_MM)
}

fn record_region(r: &VertebraRecord) -> Aabb {
    r.mask
        .as_ref()
        .and_then(|m| m.bbox())
        .unwrap_or_else(|| point_region(r.location))
}

fn name(r: &VertebraRecord) -> String {
    r.label.map_or_else(|| "unlabeled".to_string(), |l| l.name())
}

/// Evaluates the four consistency criteria on a sorted, labeled state:
/// distances (C1), residual volume (C2), label repeats (C3) and extremes
/// (C4). Each failing instance yields exactly one report entry.
pub fn check_consistency(state: &SpineState, stats: &AnatomyStats, cfg: &CycleConfig) -> Result<(bool, InconsistencyReport)> {
    let spine = state
        .spine_mask
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("state has no spine mask".into()))?;
    let residual = residual_mask(spine, &state.records)?;
    let comps = connected_components(&residual, cfg.connectivity)?;
    Ok(check_with_components(state, stats, cfg, spine, &comps))
}

pub(crate) fn check_with_components(
    state: &SpineState,
    stats: &AnatomyStats,
    cfg: &CycleConfig,
    spine: &VolumeGrid,
    comps: &ComponentSet,
) -> (bool, InconsistencyReport) {
    let records = &state.records;
    let mut report = InconsistencyReport::default();

    // C1
    for gap in analyze_gaps(stats, records) {
        if !gap.anomalous {
            continue;
        }
        let (a, b) = (&records[gap.index], &records[gap.index + 1]);
        let region = Aabb::from_points([a.location, b.location]).expect("two points");
        let mut detail = format!("gap {:.2} mm between {} and {}", gap.length_mm, name(a), name(b));
        match (gap.group, gap.mre) {
            (Some(g), Some((mode, err, _))) => {
                detail += &format!(" ({g}; predicted {:.2} mm, relative error {err:.2}% [{mode:?}])", gap.predicted_mm)
            }
            (Some(g), None) => detail += &format!(" ({g}; outside the group's distance band)"),
            (None, _) => detail += &format!(" (unlabeled; above {} mm)", stats.fallback_gap_mm),
        }
        report.push(region, InconsistencyKind::DistanceAnomaly, detail);
    }

    // C2
    let voxel_volume = spine.geometry().voxel_volume();
    let empties: Vec<&VertebraRecord> = records
        .iter()
        .filter(|r| r.has_flag(RecordFlag::EmptySegmentation))
        .collect();
    let mut explained = vec![false; empties.len()];
    for c in &comps.components {
        let volume = c.volume_mm3(voxel_volume);
        let ctx = neighbor_context(stats, records, c.centroid_mm);
        if accept_residual(stats, c.centroid_mm, volume, ctx) == ResidualDecision::Noise {
            continue;
        }
        let near = c.bbox.padded(cfg.min_separation_mm);
        let owner = empties.iter().position(|r| near.contains(r.location));
        match owner {
            Some(i) => {
                explained[i] = true;
                report.push(
                    c.bbox,
                    InconsistencyKind::EmptySegmentation,
                    format!("{} kept without a segmentation; {volume:.0} mm³ of spine uncovered", name(empties[i])),
                );
            }
            None => report.push(
                c.bbox,
                InconsistencyKind::VolumeAnomaly,
                format!("{volume:.0} mm³ of spine mask not covered by any vertebra"),
            ),
        }
    }
    for (r, done) in empties.iter().zip(&explained) {
        if !done {
            report.push(
                point_region(r.location),
                InconsistencyKind::EmptySegmentation,
                format!("{} kept without a segmentation", name(r)),
            );
        }
    }

    // C3
    for r in records.iter().filter(|r| r.has_flag(RecordFlag::LabelRepeat)) {
        report.push(
            record_region(r),
            InconsistencyKind::LabelRepeat,
            format!("{} repeats a transitional configuration", name(r)),
        );
    }

    // C4
    for p in extremes_for(records, &spine.geometry().field_of_view()) {
        report.push(
            point_region(p),
            InconsistencyKind::IncompleteExtreme,
            format!("column end not reached; expected a vertebra near ({:.1}, {:.1}, {:.1})", p[0], p[1], p[2]),
        );
    }

    (report.is_empty(), report)
}

/// Digest of the detection state: locations rounded to 0.1 mm, mask voxel
/// counts and labels, independent of record order.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fingerprint(pub [u8; 32]);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({self})")
    }
}

pub fn state_fingerprint(state: &SpineState) -> Fingerprint {
    let mut rows: Vec<([i64; 3], usize, u8)> = state
        .records
        .iter()
        .map(|r| {
            (
                r.location.map(|c| (c * 10.0).round() as i64),
                r.mask_voxels(),
                r.label.map_or(0, |l| l.code()),
            )
        })
        .collect();
    rows.sort_unstable();
    let mut h = Sha256::new();
    for (loc, count, label) in rows {
        for c in loc {
            h.update(c.to_le_bytes());
        }
        h.update((count as u64).to_le_bytes());
        h.update([label]);
    }
    Fingerprint(h.finalize().into())
}
