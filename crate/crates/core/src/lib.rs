//! Lifting, denoising and filtering of world-space 3D point tracks derived
//! from rectified stereo video.
//!
//! The crate is organised as a chain of stages that mirror the clip pipeline:
//!
//! - [`geometry`]: camera models, projection, rig rectification, image reprojection.
//! - [`depth`]: stereo flow to disparity to metric depth with outlier rejection.
//! - [`tracks`]: 2D track ingestion, query deduplication and lifting to 3D.
//! - [`trackopt`]: per-track ray-offset optimisation that removes depth jitter.
//! - [`filters`]: semantic drift pruning, cross-fade detection and clip statistics.
//! - [`synth`]: seeded synthetic scenes with exact ground truth.
//! - [`pipeline`]: clip orchestration, configuration, metrics and export.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled (the default) and plain iterators otherwise.
//! Results never depend on the degree of parallelism.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod depth;
pub mod filters;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod par;
pub mod pipeline;
pub mod synth;
pub mod trackopt;
pub mod tracks;

pub use geometry::{CameraModel, CameraPose, PixelPoint, PoseSet, ProjectionKind, RigCalibration};
pub use grid::Grid;
pub use par::Parallelism;
pub use tracks::{Track2D, Track3D};
