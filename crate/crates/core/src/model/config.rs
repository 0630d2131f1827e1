use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How gaze enters the temporal encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GazeMode {
    /// Context window built from the frame-global token alone.
    None,
    /// Gaze embedding appended to every pair representation; no context window.
    Concat,
    /// Context window `[c_t | g']` consumed through cross-attention.
    Cross,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeMode {
    Sine,
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// One pair's representations over the window.
    Pairwise,
    /// Every pair of every window frame in one sequence.
    Framewise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Gelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadActivation {
    Sigmoid,
    Softmax,
}

/// Which projection embeds a person standing in the object slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HumanTarget {
    Object,
    Subject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub name: String,
    pub classes: usize,
    pub activation: HeadActivation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub visual_dim: usize,
    pub semantic_dim: usize,
    pub subject_dim: usize,
    pub object_dim: usize,
    pub relation_dim: usize,
    pub mask_dim: usize,
    pub gaze_dim: usize,
    /// Channels of the two convolutions of the mask network.
    pub mask_channels: [usize; 2],
    pub gaze_channels: [usize; 2],
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub ffn_dim: usize,
    pub heads: usize,
    pub spatial_layers: usize,
    pub temporal_layers: usize,
    /// Window length `L`.
    pub window: usize,
    pub dropout: f64,
    pub activation: Activation,
    pub gaze_mode: GazeMode,
    pub pe_mode: PeMode,
    pub window_mode: WindowMode,
    pub global_token: bool,
    pub human_target: HumanTarget,
    pub heads_spec: Vec<HeadSpec>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            visual_dim: 2048,
            semantic_dim: 200,
            subject_dim: 512,
            object_dim: 512,
            relation_dim: 256,
            mask_dim: 256,
            gaze_dim: 512,
            mask_channels: [32, 64],
            gaze_channels: [32, 64],
            conv_kernel: 5,
            conv_stride: 2,
            ffn_dim: 2048,
            heads: 8,
            spatial_layers: 1,
            temporal_layers: 3,
            window: 6,
            dropout: 0.1,
            activation: Activation::Relu,
            gaze_mode: GazeMode::Cross,
            pe_mode: PeMode::Sine,
            window_mode: WindowMode::Pairwise,
            global_token: true,
            human_target: HumanTarget::Object,
            heads_spec: vec![
                HeadSpec {
                    name: "spatial".into(),
                    classes: 8,
                    activation: HeadActivation::Sigmoid,
                },
                HeadSpec {
                    name: "action".into(),
                    classes: 42,
                    activation: HeadActivation::Sigmoid,
                },
            ],
        }
    }
}

impl ModelConfig {
    /// Width of the five concatenated pair components.
    pub fn base_pair_dim(&self) -> usize {
        self.subject_dim + self.object_dim + self.relation_dim + self.mask_dim + self.semantic_dim
    }

    /// Width of the pair representation fed to the encoders.
    pub fn pair_dim(&self) -> usize {
        match self.gaze_mode {
            GazeMode::Concat => self.base_pair_dim() + self.gaze_dim,
            _ => self.base_pair_dim(),
        }
    }

    /// Per-head width `ceil(d / heads)`.
    pub fn head_dim(&self) -> usize {
        self.pair_dim().div_ceil(self.heads)
    }

    pub fn n_outputs(&self) -> usize {
        self.heads_spec.iter().map(|h| h.classes).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let dims = [
            self.visual_dim,
            self.subject_dim,
            self.object_dim,
            self.relation_dim,
            self.mask_dim,
            self.gaze_dim,
            self.ffn_dim,
            self.mask_channels[0],
            self.mask_channels[1],
            self.gaze_channels[0],
            self.gaze_channels[1],
            self.conv_stride,
        ];
        if dims.contains(&0) || self.semantic_dim == 0 {
            return bad("model dimensions must be positive");
        }
        if self.heads == 0 || self.window == 0 || self.temporal_layers == 0 {
            return bad("heads, window and temporal_layers must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.heads_spec.is_empty() || self.heads_spec.iter().any(|h| h.classes == 0) {
            return bad("at least one prediction head with classes is required");
        }
        // two unpadded convolutions must fit in the 27x27 mask grid
        let after = |n: usize| (n >= self.conv_kernel).then(|| (n - self.conv_kernel) / self.conv_stride + 1);
        if self.conv_kernel == 0 || after(crate::geometry::MASK_SIZE).and_then(after).is_none() {
            return bad("convolution kernel too large for the mask grid");
        }
        if self.human_target == HumanTarget::Subject && self.subject_dim != self.object_dim {
            return bad("human_target = subject needs subject_dim == object_dim");
        }
        Ok(())
    }
}
