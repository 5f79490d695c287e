use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Heavy-ball SGD hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(
                    format!("optimizer.{name}"),
                    format!("must be finite and >= 0, got {v}"),
                ))
            }
        };
        check("lr", self.lr)?;
        check("momentum", self.momentum)?;
        if self.momentum >= 1.0 {
            return Err(Error::config(
                "optimizer.momentum",
                format!("must be < 1, got {}", self.momentum),
            ));
        }
        check("weight_decay", self.weight_decay)
    }
}

/// Optimizer hyperparameters plus one velocity entry per trainable parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub velocity: Vec<f64>,
}

impl OptimizerState {
    /// Fresh state with zero velocity. Build a new one whenever the trainable
    /// selection changes.
    pub fn new(config: OptimizerConfig, n_params: usize) -> Self {
        Self {
            config,
            velocity: vec![0.0; n_params],
        }
    }
}

/// `v ← μ·v + g + λ·θ`, then `θ ← θ − η·v`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], state: &mut OptimizerState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::Contract(format!(
            "sgd_step: {} params, {} grads, {} velocity entries",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    let OptimizerConfig {
        lr,
        momentum,
        weight_decay,
    } = state.config;
    for ((theta, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *theta;
        *theta -= lr * *v;
    }
    Ok(())
}
