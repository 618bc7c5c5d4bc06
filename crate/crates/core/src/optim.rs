//! AdamW, NAdam and RMSprop.
//!
//! AdamW applies decoupled weight decay, `θ ← θ - l·(m̂/(√v̂+ε) + λθ)`.
//! NAdam and RMSprop treat `weight_decay` as a coupled L2 term added to the
//! gradient, and default it to zero.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    AdamW,
    NAdam,
    RmsProp,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 3] = [
        OptimizerKind::AdamW,
        OptimizerKind::NAdam,
        OptimizerKind::RmsProp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::AdamW => "adamw",
            OptimizerKind::NAdam => "nadam",
            OptimizerKind::RmsProp => "rmsprop",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// RMSprop smoothing constant.
    pub rho: f64,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        OptimizerConfig {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: if kind == OptimizerKind::AdamW {
                0.01
            } else {
                0.0
            },
            rho: 0.9,
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && (0.0..1.0).contains(&self.rho)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// One AdamW update of a single tensor at step `t` (1-based).
pub fn adamw_update(
    cfg: &OptimizerConfig,
    t: u64,
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
) {
    let bc1 = 1.0 - math::powi(cfg.beta1, t as i32);
    let bc2 = 1.0 - math::powi(cfg.beta2, t as i32);
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= cfg.lr * (m_hat / (math::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * theta[i]);
    }
}

/// One NAdam update: Adam with a Nesterov look-ahead in the first moment.
pub fn nadam_update(
    cfg: &OptimizerConfig,
    t: u64,
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
) {
    let b1 = cfg.beta1;
    let bc1_next = 1.0 - math::powi(b1, t as i32 + 1);
    let bc1 = 1.0 - math::powi(b1, t as i32);
    let bc2 = 1.0 - math::powi(cfg.beta2, t as i32);
    for i in 0..theta.len() {
        let g = grad[i] + cfg.weight_decay * theta[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = b1 * m[i] / bc1_next + (1.0 - b1) * g / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= cfg.lr * m_hat / (math::sqrt(v_hat) + cfg.eps);
    }
}

/// One RMSprop update: `v ← ρv + (1-ρ)g²`, `θ ← θ - l·g/(√v+ε)`.
pub fn rmsprop_update(cfg: &OptimizerConfig, theta: &mut [f64], grad: &[f64], v: &mut [f64]) {
    for i in 0..theta.len() {
        let g = grad[i] + cfg.weight_decay * theta[i];
        v[i] = cfg.rho * v[i] + (1.0 - cfg.rho) * g * g;
        theta[i] -= cfg.lr * g / (math::sqrt(v[i]) + cfg.eps);
    }
}

/// Moment accumulators for every tensor of a parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    config: OptimizerConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, sizes: impl IntoIterator<Item = usize>) -> Result<Self> {
        config.validate()?;
        let sizes: Vec<usize> = sizes.into_iter().collect();
        let first = match config.kind {
            OptimizerKind::RmsProp => Vec::new(),
            _ => sizes.iter().map(|&n| vec![0.0; n]).collect(),
        };
        Ok(OptimizerState {
            config,
            step: 0,
            first,
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    pub fn for_store(config: OptimizerConfig, store: &ParamStore) -> Result<Self> {
        Self::new(config, store.tensors().iter().map(|t| t.len()))
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates tensor `i` of `params` with `grads[i]` wherever `trainable[i]`
    /// holds. Fails without touching anything if any used gradient is not
    /// finite.
    pub fn step_slices(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &[&[f64]],
        trainable: &[bool],
    ) -> Result<()> {
        if params.len() != self.second.len()
            || grads.len() != params.len()
            || trainable.len() != params.len()
        {
            return Err(Error::dim(
                "optimizer step",
                &[self.second.len()],
                &[params.len(), grads.len(), trainable.len()],
            ));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.len() != params[i].len() || g.len() != self.second[i].len() {
                return Err(Error::dim(
                    "optimizer step",
                    &[self.second[i].len()],
                    &[g.len()],
                ));
            }
            if trainable[i] && !g.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for parameter {i}"
                )));
            }
        }
        self.step += 1;
        let t = self.step;
        let cfg = self.config;
        for i in 0..params.len() {
            if !trainable[i] {
                continue;
            }
            match cfg.kind {
                OptimizerKind::AdamW => adamw_update(
                    &cfg,
                    t,
                    params[i],
                    grads[i],
                    &mut self.first[i],
                    &mut self.second[i],
                ),
                OptimizerKind::NAdam => nadam_update(
                    &cfg,
                    t,
                    params[i],
                    grads[i],
                    &mut self.first[i],
                    &mut self.second[i],
                ),
                OptimizerKind::RmsProp => {
                    rmsprop_update(&cfg, params[i], grads[i], &mut self.second[i])
                }
            }
        }
        Ok(())
    }

    /// Store-level step; errors name the offending parameter.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[Vec<f64>],
        trainable: &[bool],
    ) -> Result<()> {
        for (i, (_, name, _)) in store.iter().enumerate() {
            if trainable.get(i).copied().unwrap_or(false)
                && grads
                    .get(i)
                    .is_some_and(|g| !g.iter().all(|v| v.is_finite()))
            {
                return Err(Error::Numeric(format!("non-finite gradient for `{name}`")));
            }
        }
        let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        let mut slices: Vec<&mut [f64]> = store
            .tensors_mut()
            .iter_mut()
            .map(|t| t.data_mut())
            .collect();
        self.step_slices(&mut slices, &grad_refs, trainable)
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = math::sqrt(grads.iter().flatten().map(|g| g * g).sum());
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}
