//! Multi-label losses on per-head probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HeadActivation, HeadOutput, HeadSpec};
use crate::tensor::{Graph, Tensor, Var};

const CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Class-balanced focal loss.
    #[default]
    CbFocal,
    /// Unweighted binary cross-entropy.
    Bce,
    /// Unweighted focal loss.
    Focal,
    /// Multi-label margin loss on the head logits.
    Mlm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    pub gamma: f64,
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::CbFocal,
            gamma: 0.5,
            beta: 0.9999,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta) || !(self.gamma >= 0.0) {
            return Err(Error::Config("loss needs beta in [0, 1) and gamma >= 0".into()));
        }
        Ok(())
    }

    /// Per-class weights for the configured loss kind.
    pub fn weights(&self, counts: &[usize]) -> Vec<f64> {
        match self.kind {
            LossKind::CbFocal => class_weights(counts, self.beta),
            _ => vec![1.0; counts.len()],
        }
    }

    fn focusing(&self) -> f64 {
        match self.kind {
            LossKind::Bce => 0.0,
            _ => self.gamma,
        }
    }
}

/// Inverse effective number of samples, `(1 - beta) / (1 - beta^n)`.
/// A class with no samples gets the large-`n` limit `1 - beta`.
pub fn class_weights(counts: &[usize], beta: f64) -> Vec<f64> {
    counts
        .iter()
        .map(|&n| {
            if n == 0 {
                1.0 - beta
            } else {
                (1.0 - beta) / (1.0 - beta.powf(n as f64))
            }
        })
        .collect()
}

/// Class-balanced focal loss of one sample, averaged over classes.
pub fn cb_focal_loss(p: &[f64], y: &[bool], counts: &[usize], beta: f64, gamma: f64) -> f64 {
    assert!(p.len() == y.len() && p.len() == counts.len(), "length mismatch");
    let w = class_weights(counts, beta);
    let total: f64 = p
        .iter()
        .zip(y)
        .zip(&w)
        .map(|((&pi, &yi), wi)| {
            let pi = pi.clamp(CLAMP, 1.0 - CLAMP);
            let pt = if yi { pi } else { 1.0 - pi };
            -wi * (1.0 - pt).powf(gamma) * pt.ln()
        })
        .sum();
    total / p.len() as f64
}

/// Multi-label margin loss of one sample: the mean of
/// `max(0, 1 - s_pos + s_neg)` over all (positive, negative) pairs.
pub fn mlm_loss(scores: &[f64], positive: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), positive.len(), "length mismatch");
    let pos: Vec<f64> = scores.iter().zip(positive).filter(|(_, &y)| y).map(|(s, _)| *s).collect();
    if pos.is_empty() {
        return Err(Error::NoPositiveLabel);
    }
    let neg: Vec<f64> = scores.iter().zip(positive).filter(|(_, &y)| !y).map(|(s, _)| *s).collect();
    if neg.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = pos.iter().flat_map(|sp| neg.iter().map(move |sn| (1.0 - sp + sn).max(0.0))).sum();
    Ok(total / (pos.len() * neg.len()) as f64)
}

fn columns(t: &Tensor, start: usize, len: usize) -> Tensor {
    let mut data = Vec::with_capacity(t.rows() * len);
    for r in 0..t.rows() {
        data.extend_from_slice(&t.row(r)[start..start + len]);
    }
    Tensor::new(vec![t.rows(), len], data).expect("shape matches")
}

/// Sum over heads of each head's loss on `[N, n_outputs]` targets.
///
/// Sigmoid heads average over every (sample, class) entry. Softmax heads
/// use the first positive class of each row as the target and skip rows
/// without one. `weights` has one entry per output column.
pub fn batch_loss(
    g: &mut Graph,
    heads: &[HeadOutput],
    spec: &[HeadSpec],
    targets: &Tensor,
    cfg: &LossConfig,
    weights: &[f64],
) -> Result<Var> {
    let mut parts = Vec::with_capacity(heads.len());
    for (h, s) in heads.iter().zip(spec) {
        let y = columns(targets, h.offset, s.classes);
        let w = &weights[h.offset..h.offset + s.classes];
        let loss = match (cfg.kind, s.activation) {
            (LossKind::Mlm, _) => g.margin_rank(h.logits, y)?,
            (_, HeadActivation::Sigmoid) => g.binary_focal(h.probs, y, w, cfg.focusing())?,
            (_, HeadActivation::Softmax) => {
                let mut rows = Vec::new();
                let mut target = Vec::new();
                for r in 0..y.rows() {
                    if let Some(c) = y.row(r).iter().position(|&v| v > 0.5) {
                        rows.push(r);
                        target.push(c);
                    }
                }
                if rows.is_empty() {
                    continue;
                }
                let p = g.gather_rows(h.probs, &rows)?;
                g.categorical_focal(p, &target, w, cfg.focusing())?
            }
        };
        parts.push(loss);
    }
    let mut total = match parts.first() {
        Some(&v) => v,
        None => g.input(Tensor::scalar(0.0)),
    };
    for &p in &parts[1.min(parts.len())..] {
        total = g.add(total, p)?;
    }
    Ok(total)
}
