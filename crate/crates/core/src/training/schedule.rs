use serde::{Deserialize, Serialize};

/// Linear warmup by optimizer step, then per-epoch exponential decay that
/// reaches `peak * decay` at the final epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    pub peak: f64,
    pub warmup_epochs: usize,
    pub decay: f64,
    pub epochs: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial: 1e-8,
            peak: 1e-4,
            warmup_epochs: 3,
            decay: 0.1,
            epochs: 25,
        }
    }
}

impl LrSchedule {
    /// Learning rate for `step` (0-based, within the epoch) of 0-based `epoch`.
    pub fn lr(&self, epoch: usize, steps_per_epoch: usize, step: usize) -> f64 {
        let spe = steps_per_epoch.max(1);
        if epoch < self.warmup_epochs {
            let total = (self.warmup_epochs * spe) as f64;
            let s = (epoch * spe + step) as f64;
            return self.initial + (self.peak - self.initial) * s / total;
        }
        let span = self.epochs.saturating_sub(self.warmup_epochs + 1).max(1) as f64;
        let k = (epoch - self.warmup_epochs) as f64 / span;
        self.peak * self.decay.powf(k.min(1.0))
    }
}
