//! Per-pair input features and per-human gaze heatmaps.
//!
//! Real backbones are out of reach here, so features come either from a
//! deterministic synthetic generator or from a binary feature store
//! produced elsewhere. Spatial masks are never stored; they are always
//! rasterized from the boxes.

mod gaze;
mod source;
mod store;
mod synthetic;

pub use gaze::{mirror_gaze, synth_gaze, GAZE_CELLS, GAZE_SIZE};
pub use source::FeatureSource;
pub use store::{FeatureKind, FeatureStore, FeatureStoreWriter, RecordKey};
pub use synthetic::{stream_seed, SemanticTable, SyntheticFeatures};

use serde::{Deserialize, Serialize};

use crate::geometry::SpatialMask;

/// Dimensions and generator settings of the input features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Length of the subject, object and union-region visual vectors.
    pub visual_dim: usize,
    pub semantic_dim: usize,
    /// Standard deviation of the track/time perturbation around the class base.
    pub perturbation: f64,
    /// Gaussian width of synthetic gaze bumps, in heatmap cells.
    pub gaze_sigma: f64,
    pub gaze_peak: f64,
    /// Seed of the synthetic generator; part of the dataset, not the run.
    pub seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            visual_dim: 2048,
            semantic_dim: 200,
            perturbation: 0.1,
            gaze_sigma: 3.0,
            gaze_peak: 1.0,
            seed: 0,
        }
    }
}

/// Everything the model consumes for one ordered pair in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub v_s: Vec<f64>,
    pub v_o: Vec<f64>,
    pub v_rel: Vec<f64>,
    pub mask: SpatialMask,
    pub semantic: Vec<f64>,
    /// The subject's `64 x 64` gaze heatmap, row-major.
    pub gaze: Vec<f64>,
}

impl FeatureBundle {
    pub fn is_valid(&self) -> bool {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        finite(&self.v_s)
            && finite(&self.v_o)
            && finite(&self.v_rel)
            && finite(&self.semantic)
            && self.gaze.iter().all(|g| g.is_finite() && *g >= 0.0)
            && self.mask.cells().iter().all(|&c| c <= 1)
    }
}
