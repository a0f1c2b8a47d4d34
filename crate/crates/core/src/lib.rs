//! Vertebra localization, ordering and identification.
//!
//! Segmentation and classification networks are external oracles; this crate
//! supplies the anatomic priors, the transitional-aware identification graph,
//! the consistency cycle that ties them together, evaluation metrics, a
//! synthetic phantom generator, and file formats.

pub mod cycle;
pub mod error;
pub mod graph;
pub mod io;
pub mod grid;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod priors;

pub use error::{Error, Result};
