use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{horizontal_flip, WindowSample};
use crate::features::stream_seed;

const TAG_EPOCH: u64 = 0x5a3;
const TAG_FLIP: u64 = 0xf11;

/// How training windows are grouped into batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowSampling {
    /// Each batch holds every window of `batch_size` distinct videos; each
    /// video is visited once per epoch.
    #[default]
    PerVideo,
    /// All windows pooled, shuffled and cut into as many batches as the
    /// per-video scheme would produce.
    Shuffled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Videos contributing to this batch.
    pub videos: Vec<u32>,
    pub windows: Vec<WindowSample>,
}

/// Batches for one epoch. `per_video[i]` holds the windows of video `i`;
/// the order is a deterministic function of `seed`.
pub fn sample_epoch(per_video: &[Vec<WindowSample>], video_ids: &[u32], batch_size: usize, seed: u64) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch size must be positive");
    assert_eq!(per_video.len(), video_ids.len());
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[seed, TAG_EPOCH]));
    let mut order: Vec<usize> = (0..per_video.len()).collect();
    order.shuffle(&mut rng);
    order
        .chunks(batch_size)
        .map(|chunk| {
            let mut windows: Vec<WindowSample> = chunk.iter().flat_map(|&i| per_video[i].iter().cloned()).collect();
            windows.shuffle(&mut rng);
            Batch {
                videos: chunk.iter().map(|&i| video_ids[i]).collect(),
                windows,
            }
        })
        .collect()
}

/// The alternative scheme: windows shuffled across videos.
pub fn sample_epoch_shuffled(per_video: &[Vec<WindowSample>], batch_size: usize, seed: u64) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[seed, TAG_EPOCH, 1]));
    let mut all: Vec<WindowSample> = per_video.iter().flatten().cloned().collect();
    all.shuffle(&mut rng);
    let n_batches = per_video.len().div_ceil(batch_size).max(1);
    let per = all.len().div_ceil(n_batches).max(1);
    all.chunks(per)
        .map(|c| {
            let mut videos: Vec<u32> = c.iter().map(|w| w.video).collect();
            videos.sort_unstable();
            videos.dedup();
            Batch {
                videos,
                windows: c.to_vec(),
            }
        })
        .collect()
}

/// Flip each window with probability `p`, driven by `(seed, batch_index)`.
pub fn random_flips(windows: &mut [WindowSample], width_of: impl Fn(u32) -> f64, p: f64, seed: u64, batch_index: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[seed, TAG_FLIP, batch_index as u64]));
    for w in windows.iter_mut() {
        if rng.random::<f64>() < p {
            *w = horizontal_flip(w, width_of(w.video));
        }
    }
}
