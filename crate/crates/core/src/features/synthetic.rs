use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{FeatureConfig, FeatureStore, RecordKey};
use crate::error::{Error, Result};

const TAG_CLASS: u64 = 1;
const TAG_TRACK: u64 = 2;
const TAG_REL_BASE: u64 = 3;
const TAG_REL_TRACK: u64 = 4;
const TAG_SEMANTIC: u64 = 5;

/// Fold a tuple of integers into one seed (splitmix64 finalizer per part).
pub fn stream_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243f_6a88_85a3_08d3;
    for &p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

fn gaussian(parts: &[u64], dim: usize, scale: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(parts));
    (0..dim)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect()
}

/// Class-conditioned visual feature: a per-class `N(0, I)` base plus a
/// `perturbation`-scaled Gaussian that depends on track and time.
pub fn synth_visual(track_id: u32, class_id: usize, t: u32, seed: u64, dim: usize, perturbation: f64) -> Vec<f64> {
    let mut v = gaussian(&[seed, TAG_CLASS, class_id as u64], dim, 1.0);
    if perturbation != 0.0 {
        let noise = gaussian(&[seed, TAG_TRACK, track_id as u64, class_id as u64, t as u64], dim, perturbation);
        v.iter_mut().zip(noise).for_each(|(a, b)| *a += b);
    }
    v
}

/// Deterministic stand-in for backbone features.
#[derive(Debug, Clone)]
pub struct SyntheticFeatures {
    config: FeatureConfig,
}

impl SyntheticFeatures {
    pub fn new(config: FeatureConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn visual(&self, track_id: u32, class_id: usize, t: u32) -> Vec<f64> {
        let c = &self.config;
        synth_visual(track_id, class_id, t, c.seed, c.visual_dim, c.perturbation)
    }

    /// Union-region feature, built from the unordered pair so that both
    /// directions of a pair see the same vector.
    pub fn relation(&self, a: (u32, usize), b: (u32, usize), t: u32) -> Vec<f64> {
        let c = &self.config;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let mut v = gaussian(&[c.seed, TAG_REL_BASE, lo.1 as u64, hi.1 as u64], c.visual_dim, 1.0);
        if c.perturbation != 0.0 {
            let parts = [c.seed, TAG_REL_TRACK, lo.0 as u64, hi.0 as u64, t as u64];
            let noise = gaussian(&parts, c.visual_dim, c.perturbation);
            v.iter_mut().zip(noise).for_each(|(x, n)| *x += n);
        }
        v
    }
}

/// Fixed lookup table of per-class semantic vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticTable {
    rows: Vec<Vec<f64>>,
}

impl SemanticTable {
    /// Random rows with `N(0, 1/dim)` entries, nearly orthogonal for large `dim`.
    pub fn seeded(classes: usize, dim: usize, seed: u64) -> Self {
        let scale = 1.0 / (dim as f64).sqrt();
        let rows = (0..classes)
            .map(|c| gaussian(&[seed, TAG_SEMANTIC, c as u64], dim, scale))
            .collect();
        Self { rows }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        Self { rows }
    }

    /// Rows stored as semantic records keyed by `id_a = class id`.
    pub fn from_store(store: &FeatureStore, classes: usize) -> Result<Self> {
        let rows = (0..classes)
            .map(|c| {
                store
                    .get(&RecordKey::semantic(c as u32))?
                    .ok_or_else(|| Error::Schema(format!("feature store lacks a semantic row for class {c}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }

    pub fn get(&self, class_id: usize) -> Result<&[f64]> {
        self.rows
            .get(class_id)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownClass(class_id))
    }

    pub fn classes(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}
