//! SGD, sign descent and Adam step rules.
//!
//! With β₁ = β₂ = 0 and ε_Adam = 0, Adam's bias-corrected direction is
//! g/√(g²) = sign(g) exactly, which is what ties the laws in
//! [`crate::laws`] to Adam-style training.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Sign,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps_adam")]
    pub eps_adam: f64,
    /// Overridden per cell by grid searches.
    #[serde(default = "default_lr")]
    pub lr: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps_adam() -> f64 {
    1e-8
}
fn default_lr() -> f64 {
    1e-3
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            ..Self::adam(lr)
        }
    }

    pub fn sign(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sign,
            ..Self::adam(lr)
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps_adam: default_eps_adam(),
            lr,
        }
    }

    /// Adam with β₁ = β₂ = 0 and ε_Adam = 0.
    pub fn adam_as_sign(lr: f64) -> Self {
        OptimizerConfig {
            beta1: 0.0,
            beta2: 0.0,
            eps_adam: 0.0,
            ..Self::adam(lr)
        }
    }

    pub fn with_lr(self, lr: f64) -> Self {
        OptimizerConfig { lr, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr = {} must be positive", self.lr)));
        }
        if self.kind == OptimizerKind::Adam {
            for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
                if !(0.0..1.0).contains(&b) {
                    return Err(Error::invalid(format!("{name} = {b} must lie in [0, 1)")));
                }
            }
            if !(self.eps_adam >= 0.0 && self.eps_adam.is_finite()) {
                return Err(Error::invalid("eps_adam must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// Adam moments; untouched by SGD and sign steps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(dim: usize) -> Self {
        OptimizerState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }
}

/// sign with sign(0) = 0.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Advances the moments by one step and writes the unscaled update direction
/// into `dir` (θ' = θ − lr·dir).
fn advance(config: &OptimizerConfig, state: &mut OptimizerState, g: &[f64], dir: &mut [f64]) {
    match config.kind {
        OptimizerKind::Sgd => dir.copy_from_slice(g),
        OptimizerKind::Sign => {
            for (d, gi) in dir.iter_mut().zip(g) {
                *d = sign(*gi);
            }
        }
        OptimizerKind::Adam => {
            state.t += 1;
            let (b1, b2) = (config.beta1, config.beta2);
            let t = i32::try_from(state.t).unwrap_or(i32::MAX);
            let c1 = 1.0 - b1.powi(t);
            let c2 = 1.0 - b2.powi(t);
            for i in 0..g.len() {
                state.m[i] = b1 * state.m[i] + (1.0 - b1) * g[i];
                state.v[i] = b2 * state.v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = state.m[i] / c1;
                let v_hat = state.v[i] / c2;
                let denom = v_hat.sqrt() + config.eps_adam;
                dir[i] = if m_hat == 0.0 { 0.0 } else { m_hat / denom };
            }
        }
    }
}

fn check_shapes(
    config: &OptimizerConfig,
    state: &OptimizerState,
    theta: &[f64],
    g: &[f64],
) -> Result<()> {
    check_dim(theta.len(), g.len())?;
    if config.kind == OptimizerKind::Adam {
        check_dim(theta.len(), state.m.len())?;
        check_dim(theta.len(), state.v.len())?;
    }
    Ok(())
}

/// One in-place update of `theta` with gradient `g`.
pub fn step(
    config: &OptimizerConfig,
    state: &mut OptimizerState,
    theta: &mut [f64],
    g: &[f64],
) -> Result<()> {
    check_shapes(config, state, theta, g)?;
    let mut dir = vec![0.0; g.len()];
    advance(config, state, g, &mut dir);
    for (t, d) in theta.iter_mut().zip(&dir) {
        *t -= config.lr * d;
    }
    Ok(())
}

/// Reusable stepper that avoids a per-step allocation.
#[derive(Debug, Clone)]
pub struct Stepper {
    pub config: OptimizerConfig,
    pub state: OptimizerState,
    dir: Vec<f64>,
}

impl Stepper {
    pub fn new(config: OptimizerConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        Ok(Stepper {
            config,
            state: OptimizerState::new(dim),
            dir: vec![0.0; dim],
        })
    }

    pub fn step(&mut self, theta: &mut [f64], g: &[f64]) -> Result<()> {
        check_shapes(&self.config, &self.state, theta, g)?;
        check_dim(self.dir.len(), g.len())?;
        advance(&self.config, &mut self.state, g, &mut self.dir);
        for (t, d) in theta.iter_mut().zip(&self.dir) {
            *t -= self.config.lr * d;
        }
        Ok(())
    }
}

/// Largest |Adam direction − sign(m̂)| over all steps and coordinates of a
/// gradient stream, m̂ being the bias-corrected first moment.
pub fn adam_sign_deviation(config: &OptimizerConfig, stream: &[Vec<f64>]) -> Result<f64> {
    let first = stream
        .first()
        .ok_or_else(|| Error::invalid("empty gradient stream"))?;
    let adam = OptimizerConfig {
        kind: OptimizerKind::Adam,
        ..*config
    };
    adam.validate()?;
    let d = first.len();
    let mut state = OptimizerState::new(d);
    let mut dir = vec![0.0; d];
    let mut worst: f64 = 0.0;
    for g in stream {
        check_dim(d, g.len())?;
        advance(&adam, &mut state, g, &mut dir);
        let c1 = 1.0 - adam.beta1.powi(i32::try_from(state.t).unwrap_or(i32::MAX));
        for (u, m) in dir.iter().zip(&state.m) {
            worst = worst.max((u - sign(m / c1)).abs());
        }
    }
    Ok(worst)
}
