//! Losses, optimizer, learning-rate schedule and the epoch loop.

mod losses;
mod optim;
mod schedule;
#[cfg(test)]
mod tests;

pub use losses::{batch_loss, cb_focal_loss, class_weights, mlm_loss, LossConfig, LossKind};
pub use optim::{AdamW, AdamWConfig};
pub use schedule::LrSchedule;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    build_windows, class_statistics, random_flips, sample_epoch, sample_epoch_shuffled, Video, WindowConfig,
    WindowSample, WindowSampling,
};
use crate::error::{Error, Result};
use crate::features::{stream_seed, FeatureSource};
use crate::model::{BatchInput, Model, Pass};
use crate::tensor::Graph;

const TAG_STEP: u64 = 0x5354_4550;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Videos per batch under per-video sampling, windows per batch otherwise.
    pub batch_size: usize,
    pub sampling: WindowSampling,
    pub flip: bool,
    pub flip_prob: f64,
    pub loss: LossConfig,
    pub optimizer: AdamWConfig,
    pub schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            batch_size: 4,
            sampling: WindowSampling::PerVideo,
            flip: true,
            flip_prob: 0.5,
            loss: LossConfig::default(),
            optimizer: AdamWConfig::default(),
            schedule: LrSchedule::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config("flip_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val: Option<serde_json::Value>,
}

/// Callbacks run at the end of each epoch.
pub trait EpochHook {
    /// Validation metrics to log for the epoch.
    fn validate(&mut self, _model: &Model, _epoch: usize) -> Result<Option<serde_json::Value>> {
        Ok(None)
    }

    fn end_epoch(&mut self, _model: &Model, _record: &EpochRecord) -> Result<()> {
        Ok(())
    }
}

impl EpochHook for () {}

/// Training split and the features to read it with.
pub struct TrainData<'a> {
    pub videos: &'a [Video],
    pub features: &'a FeatureSource,
    pub windows: WindowConfig,
}

/// Windows per video, videos in input order.
pub fn video_windows(videos: &[Video], cfg: &WindowConfig, n_predicates: usize) -> Vec<Vec<WindowSample>> {
    videos.iter().map(|v| build_windows(v, cfg, n_predicates)).collect()
}

/// Run the configured number of epochs from the model's current weights.
///
/// Class counts for the balanced loss come from the training split once.
/// Batches, flips and dropout masks are drawn from streams keyed by
/// `(seed, epoch, step)`, so a run is reproducible bit for bit.
pub fn train(
    model: &mut Model,
    data: &TrainData,
    cfg: &TrainConfig,
    seed: u64,
    hook: &mut dyn EpochHook,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if data.windows.length != model.config().window {
        return Err(Error::Config(format!(
            "window length {} differs from the model's {}",
            data.windows.length,
            model.config().window
        )));
    }
    let n_out = model.config().n_outputs();
    let counts = class_statistics(data.videos, n_out).predicate_counts;
    let weights = cfg.loss.weights(&counts);
    let per_video = video_windows(data.videos, &data.windows, n_out);
    let ids: Vec<u32> = data.videos.iter().map(|v| v.id).collect();
    let widths: HashMap<u32, f64> = data.videos.iter().map(|v| (v.id, v.width)).collect();
    if per_video.iter().all(Vec::is_empty) {
        return Err(Error::Integrity("the training split yields no windows".into()));
    }

    let mut opt = AdamW::new(model.params(), cfg.optimizer.clone());
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut global_step = 0;
    for epoch in 0..cfg.epochs {
        let epoch_seed = stream_seed(&[seed, epoch as u64]);
        let batches = match cfg.sampling {
            WindowSampling::PerVideo => sample_epoch(&per_video, &ids, cfg.batch_size, epoch_seed),
            WindowSampling::Shuffled => sample_epoch_shuffled(&per_video, cfg.batch_size, epoch_seed),
        };
        let batches: Vec<_> = batches.into_iter().filter(|b| !b.windows.is_empty()).collect();
        let spe = batches.len();
        let (mut loss_sum, mut lr) = (0.0, 0.0);
        for (step, mut batch) in batches.into_iter().enumerate() {
            if cfg.flip {
                random_flips(&mut batch.windows, |v| widths[&v], cfg.flip_prob, epoch_seed, step);
            }
            lr = cfg.schedule.lr(epoch, spe, step);
            let input = BatchInput::build(model.config(), &batch.windows, data.videos, data.features)?;
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[seed, epoch as u64, step as u64, TAG_STEP]));
            let (loss, grads) = {
                let mut g = Graph::new(model.params());
                let mut pass = Pass::train(&mut rng, model.config().dropout);
                let out = model.forward(&mut g, &input, &mut pass).map_err(|e| e.at_step(global_step))?;
                let l = batch_loss(&mut g, &out.heads, &model.config().heads_spec, &input.targets, &cfg.loss, &weights)?;
                let value = g.value(l).data()[0];
                (value, g.backward(l).map_err(|e| e.at_step(global_step))?)
            };
            opt.step(model.params_mut(), &grads, lr).map_err(|e| e.at_step(global_step))?;
            loss_sum += loss;
            global_step += 1;
        }
        let mut record = EpochRecord {
            epoch,
            mean_loss: loss_sum / spe.max(1) as f64,
            lr,
            steps: spe,
            val: None,
        };
        record.val = hook.validate(model, epoch)?;
        hook.end_epoch(model, &record)?;
        log.push(record);
    }
    Ok(log)
}

/// Serialize records as JSON lines.
pub fn log_to_jsonl(records: &[EpochRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}
