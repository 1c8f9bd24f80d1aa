use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use super::params::{NamedTensor, ParamSnapshot, ParamStore};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

/// Adam with bias correction. State is kept per parameter in store order so
/// it can be checkpointed alongside the weights.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    vars: Vec<Var>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: ParamSnapshot,
    pub v: ParamSnapshot,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Result<Self> {
        let vars: Vec<Var> = store.vars().cloned().collect();
        let m = vars
            .iter()
            .map(|v| v.as_tensor().zeros_like())
            .collect::<candle_core::Result<Vec<_>>>()?;
        let v = m.clone();
        Ok(Adam {
            config,
            vars,
            m,
            v,
            step: 0,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Applies one update from `grads`; parameters without a gradient are
    /// treated as having a zero gradient.
    pub fn step(&mut self, grads: &candle_core::backprop::GradStore) -> Result<()> {
        self.step += 1;
        let cfg = self.config;
        let gs = self
            .vars
            .iter()
            .map(|var| match grads.get(var.as_tensor()) {
                Some(g) => Ok(g.clone()),
                None => var.as_tensor().zeros_like(),
            })
            .collect::<candle_core::Result<Vec<_>>>()?;
        let scale = match cfg.clip_norm {
            Some(max) => {
                let mut sq = 0.0f64;
                for g in &gs {
                    sq += g.sqr()?.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
                }
                let norm = sq.sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        for (i, var) in self.vars.iter().enumerate() {
            let g = (&gs[i] * scale)?;
            self.m[i] = ((&self.m[i] * cfg.beta1)? + (&g * (1.0 - cfg.beta1))?)?;
            self.v[i] = ((&self.v[i] * cfg.beta2)? + (g.sqr()? * (1.0 - cfg.beta2))?)?;
            let mhat = (&self.m[i] / bc1)?;
            let vhat = (&self.v[i] / bc2)?;
            let update = (mhat / (vhat.sqrt()? + cfg.eps)?)?;
            let next = (var.as_tensor() - (update * cfg.lr)?)?;
            var.set(&next)?;
        }
        Ok(())
    }

    pub fn state(&self, store: &ParamStore) -> Result<AdamState> {
        let snap = |ts: &[Tensor]| -> Result<ParamSnapshot> {
            let tensors = store
                .named()
                .zip(ts)
                .map(|((name, _), t)| {
                    Ok(NamedTensor {
                        name: name.to_string(),
                        shape: t.dims().to_vec(),
                        values: t.to_dtype(candle_core::DType::F64)?.flatten_all()?.to_vec1()?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ParamSnapshot { tensors })
        };
        Ok(AdamState {
            step: self.step,
            m: snap(&self.m)?,
            v: snap(&self.v)?,
        })
    }

    pub fn restore(&mut self, state: &AdamState) -> Result<()> {
        let load = |snap: &ParamSnapshot, like: &[Tensor]| -> Result<Vec<Tensor>> {
            snap.tensors
                .iter()
                .zip(like)
                .map(|(t, l)| {
                    Ok(Tensor::from_vec(t.values.clone(), t.shape.as_slice(), l.device())?
                        .to_dtype(l.dtype())?)
                })
                .collect()
        };
        self.m = load(&state.m, &self.m)?;
        self.v = load(&state.v, &self.v)?;
        self.step = state.step;
        Ok(())
    }
}
