//! Depth-consistent multiview human modeling and label-free pedestrian
//! localization.

// Validation uses `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod compensation;
pub mod depthfilter;
pub mod depthmodel;
pub mod error;
pub mod image;
pub mod io;
pub mod localization;
pub mod matching;
pub mod metrics;
pub mod gaussians;
pub mod optimizer;
pub mod pipeline;
pub mod renderer;
pub mod simulator;
pub mod superpixel;
pub mod view;

pub use error::{Error, Result};
