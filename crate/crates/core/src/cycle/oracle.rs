use std::sync::Arc;

use crate::error::Result;
use crate::grid::{CompactMask, VolumeGrid};
use crate::model::LocalPrediction;

/// Result of asking the segmentor to lock onto a vertebra near a seed.
#[derive(Clone, Debug, PartialEq)]
pub enum Segmentation {
    Found {
        /// Refined location, world mm.
        location: [f64; 3],
        /// Mask on the CT lattice.
        mask: CompactMask,
    },
    /// Nothing could be segmented (e.g. metal artefacts).
    Empty,
}

/// Individual-vertebra segmentation network (or a stand-in).
pub trait SegmentorOracle: Sync {
    fn segment(&self, ct: &VolumeGrid, seed: [f64; 3]) -> Result<Segmentation>;
}

/// Per-vertebra hierarchical classifier. Receives a binary crop at 1 mm
/// spacing centred on the vertebra.
pub trait ClassifierOracle: Sync {
    fn classify(&self, crop: &VolumeGrid) -> Result<LocalPrediction>;
}

impl<T: SegmentorOracle + ?Sized> SegmentorOracle for &T {
    fn segment(&self, ct: &VolumeGrid, seed: [f64; 3]) -> Result<Segmentation> {
        (**self).segment(ct, seed)
    }
}

impl<T: ClassifierOracle + ?Sized> ClassifierOracle for &T {
    fn classify(&self, crop: &VolumeGrid) -> Result<LocalPrediction> {
        (**self).classify(crop)
    }
}

impl<T: SegmentorOracle + Send + ?Sized> SegmentorOracle for Arc<T> {
    fn segment(&self, ct: &VolumeGrid, seed: [f64; 3]) -> Result<Segmentation> {
        (**self).segment(ct, seed)
    }
}

impl<T: ClassifierOracle + Send + ?Sized> ClassifierOracle for Arc<T> {
    fn classify(&self, crop: &VolumeGrid) -> Result<LocalPrediction> {
        (**self).classify(crop)
    }
}
