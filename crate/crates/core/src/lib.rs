//! Aircraft surface-mesh segmentation with conformal guarantees and
//! expert-rule CFD mesh settings.
//!
//! The pipeline: load or generate a labeled triangle mesh, segment its
//! faces with a hybrid point/graph neural network, wrap per-face
//! predictions in conformal prediction sets, project those sets onto
//! discretized CAD surfaces by conservative voting, and emit per-surface
//! meshing settings from an expert rule database.

pub mod augment;
pub mod cli;
pub mod config;
pub mod conformal;
pub mod datagen;
pub mod geometry;
pub mod nn;
pub mod projection;
pub mod rules;
