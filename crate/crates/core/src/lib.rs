//! Gaze-conditioned spatio-temporal transformer for detecting and
//! anticipating human-object interactions in video.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod geometry;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
