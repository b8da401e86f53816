//! Reverse-mode differentiation core and the segmentation network built
//! on it.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod tape;
pub mod train;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("non-finite activation in stage {stage}")]
    NonFinite { stage: &'static str },
    #[error("training diverged at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error("training mesh has no face labels")]
    MissingLabels,
    #[error("training set is empty")]
    EmptyDataset,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Augment(#[from] crate::augment::AugmentError),
    #[error(transparent)]
    Tape(#[from] tape::TapeError),
}
