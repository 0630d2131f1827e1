//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use gazehoi::data::{ScenarioSpec, WindowConfig};
use gazehoi::evaluation::{EvalConfig, EvalMode};
use gazehoi::features::FeatureConfig;
use gazehoi::model::ModelConfig;
use gazehoi::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Where the dataset lives and which split commands score.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Directory written by `gen-data`.
    pub dir: Option<PathBuf>,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    #[default]
    Val,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.json",
            Split::Val => "val.json",
        }
    }
}

/// Prediction task shared by training and evaluation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    /// Anticipation gap in keyframes; 0 is detection.
    pub tau_a: usize,
    pub full_history_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub mode: EvalMode,
    pub k: usize,
    pub threshold: f64,
    pub rare_threshold: usize,
    /// Thresholds of `sweep`; empty means 0.05 to 0.95 in steps of 0.05.
    pub thresholds: Vec<f64>,
    /// Windows scored per forward pass.
    pub batch_windows: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            mode: e.mode,
            k: e.k,
            threshold: e.threshold,
            rare_threshold: e.rare_threshold,
            thresholds: Vec::new(),
            batch_windows: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Write a checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Score the validation split after every epoch.
    pub validate: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            checkpoint_every: 5,
            validate: true,
        }
    }
}

/// Grid of the `ablate` command: axis name to the values it takes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    pub axes: Vec<AxisSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub name: String,
    pub values: Vec<toml::Value>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub task: TaskSection,
    pub scenario: ScenarioSpec,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub output: OutputSection,
    pub ablate: AblateSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    /// Bring derived fields in line: the schedule spans the training epochs.
    pub fn normalize(&mut self) {
        self.train.schedule.epochs = self.train.epochs;
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run config serializes")
    }

    pub fn windows(&self) -> WindowConfig {
        WindowConfig {
            length: self.model.window,
            tau_a: self.task.tau_a,
            full_history_only: self.task.full_history_only,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            mode: self.eval.mode,
            tau_a: self.task.tau_a,
            k: self.eval.k,
            threshold: self.eval.threshold,
            rare_threshold: self.eval.rare_threshold,
        }
    }

    pub fn data_dir(&self) -> Result<&Path, CliError> {
        self.data
            .dir
            .as_deref()
            .ok_or_else(|| CliError::Usage("no dataset directory: set data.dir or pass --data".into()))
    }
}

/// Ablation axes and the configuration key each one sets.
pub const AXES: [(&str, &str); 9] = [
    ("loss", "train.loss.kind"),
    ("sampling", "train.sampling"),
    ("flip", "train.flip"),
    ("window_mode", "model.window_mode"),
    ("window", "model.window"),
    ("gaze_mode", "model.gaze_mode"),
    ("global_token", "model.global_token"),
    ("pe_mode", "model.pe_mode"),
    ("weight_decay", "train.optimizer.weight_decay"),
];

/// Return a copy of `cfg` with the ablation axis `axis` set to `value`.
pub fn with_axis(cfg: &RunConfig, axis: &str, value: &toml::Value) -> Result<RunConfig, CliError> {
    let key = AXES
        .iter()
        .find(|(name, _)| *name == axis)
        .map(|(_, key)| *key)
        .ok_or_else(|| {
            let names: Vec<_> = AXES.iter().map(|a| a.0).collect();
            CliError::Usage(format!("unknown ablation axis '{axis}' (expected one of {})", names.join(", ")))
        })?;
    let mut doc = toml::Value::try_from(cfg).expect("run config serializes");
    let mut node = &mut doc;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        node = node.get_mut(*part).expect("axis keys name existing sections");
    }
    let table = node.as_table_mut().expect("axis parents are tables");
    table.insert(parts[parts.len() - 1].to_string(), value.clone());
    doc.try_into()
        .map_err(|e: toml::de::Error| CliError::Usage(format!("ablation axis {axis} = {value}: {e}")))
}

/// Parse `name=v1,v2,...` from the command line. Values are read as TOML
/// scalars, falling back to bare strings.
pub fn parse_axis(arg: &str) -> Result<AxisSpec, CliError> {
    let (name, values) = arg
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("axis '{arg}' is not of the form name=v1,v2")))?;
    let values = values
        .split(',')
        .filter(|v| !v.is_empty())
        .map(|v| {
            let v = v.trim();
            toml::from_str::<toml::Table>(&format!("x = {v}"))
                .ok()
                .and_then(|mut t| t.remove("x"))
                .unwrap_or_else(|| toml::Value::String(v.to_string()))
        })
        .collect::<Vec<_>>();
    if values.is_empty() {
        return Err(CliError::Usage(format!("axis '{name}' has no values")));
    }
    Ok(AxisSpec {
        name: name.trim().to_string(),
        values,
    })
}

/// Render an axis value for the CSV table.
pub fn axis_label(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}
