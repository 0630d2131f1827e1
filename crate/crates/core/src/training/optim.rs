use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamW {
    pub fn new(params: &ParamStore, cfg: AdamWConfig) -> Self {
        let zeros = || params.ids().map(|id| Tensor::zeros(params.get(id).shape())).collect();
        Self {
            cfg,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. Parameters without a gradient are left untouched,
    /// including their decay.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Shape("optimizer state does not match the parameters".into()));
        }
        for (id, g) in grads.iter() {
            if !g.is_finite() {
                return Err(Error::non_finite(format!("gradient of {}", params.name(id))));
            }
        }
        self.step += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let decay = 1.0 - lr * c.weight_decay;
        for (id, g) in grads.iter() {
            let i = id.index();
            let p = params.get_mut(id);
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!("gradient shape {:?} for {:?}", g.shape(), p.shape())));
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((pj, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *pj *= decay;
                *mj = c.beta1 * *mj + (1.0 - c.beta1) * gj;
                *vj = c.beta2 * *vj + (1.0 - c.beta2) * gj * gj;
                let mhat = *mj / bc1;
                let vhat = *vj / bc2;
                *pj -= lr * mhat / (vhat.sqrt() + c.eps);
            }
            if !p.is_finite() {
                return Err(Error::non_finite(format!("updated parameter {}", params.name(id))));
            }
        }
        Ok(())
    }
}
