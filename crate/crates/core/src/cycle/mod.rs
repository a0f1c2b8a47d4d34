//! The anatomic consistency cycle: localize, segment and identify, check the
//! result against the anatomy priors, add whatever the priors say is
//! missing, and repeat until the state is consistent or stops changing.

mod check;
mod oracle;

pub use check::{check_consistency, neighbor_context, residual_mask, state_fingerprint, Fingerprint};
pub use oracle::{ClassifierOracle, SegmentorOracle, Segmentation};

use std::sync::Arc;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_graph, fuse_predictions, postprocess_transitional, shortest_path, GraphWeights, NodeEvidence};
use crate::grid::{connected_components, extract_crop, CompactMask, Connectivity, VolumeGrid};
use crate::model::{distance, LocalPrediction, RecordFlag, SpineState, VertebraRecord};
use crate::priors::{accept_residual, gap_candidates, AnatomyStats, ResidualDecision};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CycleConfig {
    pub max_iterations: usize,
    /// Candidates closer than this to an existing detection are duplicates.
    pub min_separation_mm: f64,
    /// Side of the cubic classifier crops, voxels at 1 mm.
    pub crop_side_voxels: usize,
    pub weights: GraphWeights,
    pub connectivity: Connectivity,
}

impl Default for CycleConfig {
    fn default() -> Self {
        CycleConfig {
            max_iterations: 10,
            min_separation_mm: 10.0,
            crop_side_voxels: 128,
            weights: GraphWeights::default(),
            connectivity: Connectivity::default(),
        }
    }
}

impl CycleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be at least 1".into()));
        }
        if !(self.min_separation_mm >= 0.0) {
            return Err(Error::InvalidInput("min_separation_mm must be ≥ 0".into()));
        }
        if self.crop_side_voxels == 0 {
            return Err(Error::InvalidInput("crop_side_voxels must be positive".into()));
        }
        self.weights.validate()
    }
}

/// What one iteration did, for logging and tests.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationTrace {
    pub iteration: usize,
    /// Residual voxels before the iteration added anything.
    pub residual_voxels: usize,
    pub candidates: usize,
    pub added: usize,
    pub records: usize,
    pub fingerprint: Fingerprint,
    pub consistent: bool,
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    location: [f64; 3],
    /// Required by the anatomy (gap or extreme) rather than by the residual.
    mandated: bool,
}

pub fn run_cycle(
    ct: &VolumeGrid,
    spine_mask: &VolumeGrid,
    seg: &dyn SegmentorOracle,
    cls: &dyn ClassifierOracle,
    stats: &AnatomyStats,
    cfg: &CycleConfig,
) -> Result<SpineState> {
    run_cycle_traced(ct, spine_mask, seg, cls, stats, cfg).map(|(s, _)| s)
}

pub fn run_cycle_traced(
    ct: &VolumeGrid,
    spine_mask: &VolumeGrid,
    seg: &dyn SegmentorOracle,
    cls: &dyn ClassifierOracle,
    stats: &AnatomyStats,
    cfg: &CycleConfig,
) -> Result<(SpineState, Vec<IterationTrace>)> {
    ct.geometry().ensure_same(spine_mask.geometry(), "CT and spine mask")?;
    if spine_mask.binary()?.iter().all(|&v| v == 0) {
        return Err(Error::EmptyMask);
    }
    let state = SpineState::new(Arc::new(spine_mask.clone()));
    resume_cycle(state, ct, seg, cls, stats, cfg)
}

/// Continues the cycle from an existing state (e.g. a converged one).
pub fn resume_cycle(
    mut state: SpineState,
    ct: &VolumeGrid,
    seg: &dyn SegmentorOracle,
    cls: &dyn ClassifierOracle,
    stats: &AnatomyStats,
    cfg: &CycleConfig,
) -> Result<(SpineState, Vec<IterationTrace>)> {
    cfg.validate()?;
    let spine = state
        .spine_mask
        .clone()
        .ok_or_else(|| Error::InvalidInput("state has no spine mask".into()))?;
    ct.geometry().ensure_same(spine.geometry(), "CT and spine mask")?;
    let fov = spine.geometry().field_of_view();
    let voxel_volume = spine.geometry().voxel_volume();
    let mut trace = Vec::new();
    let mut previous = state_fingerprint(&state);

    for iteration in 1..=cfg.max_iterations {
        state.iteration = iteration;

        // residual components, then anatomy-driven candidates
        let residual = residual_mask(&spine, &state.records)?;
        let comps = connected_components(&residual, cfg.connectivity)?;
        let residual_voxels: usize = comps.components.iter().map(|c| c.voxel_count).sum();
        let mut candidates: Vec<Candidate> = Vec::new();
        for c in &comps.components {
            let ctx = neighbor_context(stats, &state.records, c.centroid_mm);
            if let ResidualDecision::Vertebra(p) = accept_residual(stats, c.centroid_mm, c.volume_mm3(voxel_volume), ctx) {
                candidates.push(Candidate {
                    location: p,
                    mandated: false,
                });
            }
        }
        for location in gap_candidates(stats, &state.records)
            .into_iter()
            .chain(check::extremes_for(&state.records, &fov))
        {
            candidates.push(Candidate {
                location,
                mandated: true,
            });
        }
        let candidates = dedup(candidates, &state.records, cfg.min_separation_mm);
        debug!("iteration {iteration}: {} candidates", candidates.len());

        // segmentation of new candidates
        let results: Vec<Result<Segmentation>> = candidates
            .par_iter()
            .map(|c| seg.segment(ct, c.location))
            .collect();
        let mut added = 0usize;
        for (c, r) in candidates.iter().zip(results) {
            let record = match r? {
                Segmentation::Found { location, mask } if !mask.is_empty() => {
                    if !mask.geometry().same_lattice(ct.geometry()) {
                        return Err(Error::Oracle("segmentor returned a mask on a different lattice".into()));
                    }
                    VertebraRecord::with_mask(location, Arc::new(mask))
                }
                _ if c.mandated => {
                    let mut r = VertebraRecord::at(c.location);
                    r.flags.insert(RecordFlag::EmptySegmentation);
                    r
                }
                _ => continue,
            };
            let duplicate = state
                .records
                .iter()
                .any(|r| distance(r.location, record.location) < cfg.min_separation_mm);
            if !duplicate {
                state.records.push(record);
                added += 1;
            }
        }
        state.sort();

        identify(&mut state, &spine, cls, cfg)?;

        let (consistent, report) = check::check_with_components(
            &state,
            stats,
            cfg,
            &spine,
            &connected_components(&residual_mask(&spine, &state.records)?, cfg.connectivity)?,
        );
        mark_distance_flags(&mut state, stats);
        state.report = report;
        let fingerprint = state_fingerprint(&state);
        trace.push(IterationTrace {
            iteration,
            residual_voxels,
            candidates: candidates.len(),
            added,
            records: state.records.len(),
            fingerprint,
            consistent,
        });
        info!(
            "iteration {iteration}: {} records (+{added}), {} report entries",
            state.records.len(),
            state.report.entries.len()
        );
        if consistent || fingerprint == previous {
            break;
        }
        previous = fingerprint;
    }
    Ok((state, trace))
}

/// Drops candidates near an existing record or an earlier candidate; a
/// merged candidate stays mandated if any of its sources was.
fn dedup(candidates: Vec<Candidate>, records: &[VertebraRecord], min_mm: f64) -> Vec<Candidate> {
    let mut out: Vec<Candidate> = Vec::new();
    for c in candidates {
        if records.iter().any(|r| distance(r.location, c.location) < min_mm) {
            continue;
        }
        match out.iter_mut().find(|o| distance(o.location, c.location) < min_mm) {
            Some(o) => o.mandated |= c.mandated,
            None => out.push(c),
        }
    }
    out
}

/// Classifies every record on the spine-mask crop and the union-of-masks
/// crop, fuses both, and labels the column through the graph.
fn identify(state: &mut SpineState, spine: &VolumeGrid, cls: &dyn ClassifierOracle, cfg: &CycleConfig) -> Result<()> {
    if state.records.is_empty() {
        state.transitions.clear();
        return Ok(());
    }
    let g = *spine.geometry();
    let mut union = VolumeGrid::empty_mask(g);
    for r in &state.records {
        if let Some(m) = &r.mask {
            m.paint_into(&mut union, 1)?;
        }
    }
    let side = cfg.crop_side_voxels;
    let classify = |mask: &VolumeGrid, at: [f64; 3]| -> Result<Option<LocalPrediction>> {
        let crop = extract_crop(mask, at, side)?;
        if crop.foreground_count() == 0 {
            return Ok(None);
        }
        cls.classify(&crop).map(Some)
    };
    let locals: Vec<Result<LocalPrediction>> = state
        .records
        .par_iter()
        .map(|r| {
            let a = classify(spine, r.location)?;
            let b = match r.mask {
                Some(_) => classify(&union, r.location)?,
                None => None,
            };
            Ok(match (a, b) {
                (None, None) => LocalPrediction::uniform(),
                (a, b) => fuse_predictions(a.as_ref(), b.as_ref())?,
            })
        })
        .collect();
    for (r, p) in state.records.iter_mut().zip(locals) {
        r.local = Some(p?);
    }
    let evidence: Vec<NodeEvidence> = state
        .records
        .iter()
        .map(|r| NodeEvidence::from(r.local.as_ref().expect("classified above")))
        .collect();
    let path = shortest_path(&build_graph(&evidence, cfg.weights)?);
    let id = postprocess_transitional(&path);
    for (i, r) in state.records.iter_mut().enumerate() {
        r.label = Some(id.labels[i]);
        r.flags.remove(&RecordFlag::LabelRepeat);
        if id.repeats.contains(&i) {
            r.flags.insert(RecordFlag::LabelRepeat);
        }
    }
    state.transitions = id.transitions;
    Ok(())
}

fn mark_distance_flags(state: &mut SpineState, stats: &AnatomyStats) {
    for r in &mut state.records {
        r.flags.remove(&RecordFlag::DistanceAnomaly);
    }
    for gap in crate::priors::analyze_gaps(stats, &state.records) {
        if gap.anomalous {
            state.records[gap.index].flags.insert(RecordFlag::DistanceAnomaly);
            state.records[gap.index + 1].flags.insert(RecordFlag::DistanceAnomaly);
        }
    }
}

/// Convenience for callers holding a record mask as a full grid.
pub fn record_from_grid(location: [f64; 3], mask: &VolumeGrid) -> Result<VertebraRecord> {
    Ok(VertebraRecord::with_mask(location, Arc::new(CompactMask::from_grid(mask)?)))
}
