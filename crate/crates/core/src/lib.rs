//! Geometric stereo visual odometry with learnable per-pixel weights.

pub mod camera;
pub mod ddn;
pub mod error;
pub mod fields;
pub mod gradcheck;
pub mod io;
pub mod lie;
pub mod pipeline;
pub mod residuals;
pub mod solver;
pub mod synth;
pub mod trajeval;

pub use error::{Error, ErrorClass, Result};
