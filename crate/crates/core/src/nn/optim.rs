//! AdamW: adaptive moments with bias correction and decoupled weight decay.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::Params;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators keyed by parameter name, so results do not depend on
/// the order in which tensors were registered.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Applies one AdamW update to `params` using `grads` (matched by name).
pub fn optimizer_step(
    params: &mut Params,
    grads: &Params,
    state: &mut OptimizerState,
) -> Result<()> {
    for (name, g) in grads.iter() {
        if let Some(bad) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow(format!(
                "non-finite gradient in {name}[{bad}]; training aborted"
            )));
        }
    }
    let cfg = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Shape(format!("no gradient for parameter {name}")))?;
        if g.shape() != p.shape() {
            return Err(Error::Shape(format!(
                "gradient {:?} for parameter {name} {:?}",
                g.shape(),
                p.shape()
            )));
        }
        let (m, v) = state
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; p.len()], vec![0.0; p.len()]));
        if m.len() != p.len() {
            return Err(Error::Shape(format!(
                "optimizer moments for {name} have wrong size"
            )));
        }
        for (((w, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *w -= cfg.lr * cfg.weight_decay * *w;
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / bias1;
            let v_hat = *vi / bias2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
