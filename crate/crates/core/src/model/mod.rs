//! Desk-scale workloads: a noisy quadratic with analytic ground truth and a
//! tiny tanh MLP with exact backprop.

pub mod hessian;
pub mod mlp;
pub mod quadratic;

use serde::{Deserialize, Serialize};

pub use hessian::HessianSpec;
pub use mlp::{BlobSpec, MlpSpec, MlpWorkload};
pub use quadratic::QuadraticWorkload;

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::signstats::GradientStats;

/// A loss with a per-sample stochastic gradient.
///
/// Workloads are immutable; all randomness comes from the caller's stream.
pub trait Workload: Send + Sync {
    fn dim(&self) -> usize;

    /// Full-data loss.
    fn loss(&self, theta: &[f64]) -> Result<f64>;

    /// Full-data gradient.
    fn true_gradient(&self, theta: &[f64]) -> Result<Vec<f64>>;

    /// One per-sample gradient.
    fn sample_gradient(&self, theta: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>>;

    /// Mean of `batch` independent per-sample gradients.
    fn sample_batch_gradient(
        &self,
        theta: &[f64],
        batch: usize,
        rng: &mut StreamRng,
    ) -> Result<Vec<f64>>;

    fn initial_theta(
        &self,
        init: &InitSpec,
        target_loss: f64,
        rng: &mut StreamRng,
    ) -> Result<Vec<f64>>;

    /// Analytic gradient statistics, where the workload has them.
    fn exact_stats(&self, _theta: &[f64]) -> Option<GradientStats> {
        None
    }
}

/// How a training run picks θ₀.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSpec {
    /// Quadratic: seeded Gaussian offset from θ*, scaled so the initial loss is
    /// `loss_ratio` × target. MLP: seeded Gaussian weights with variance 1/fan_in.
    Gaussian {
        loss_ratio: f64,
    },
    /// Quadratic: every coordinate displaced equally from θ*, scaled as above.
    Aligned {
        loss_ratio: f64,
    },
    /// Quadratic: displaced along `direction`, scaled as above.
    Direction {
        direction: Vec<f64>,
        loss_ratio: f64,
    },
    Point {
        theta: Vec<f64>,
    },
    /// Quadratic: the point θ* + H⁻¹μ whose true gradient is `mu`.
    AtGradient {
        mu: PerCoordinate,
    },
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec::Gaussian { loss_ratio: 10.0 }
    }
}

/// A scalar broadcast to every coordinate, or one value per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerCoordinate {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl PerCoordinate {
    pub fn expand(&self, dim: usize) -> Result<Vec<f64>> {
        match self {
            PerCoordinate::Scalar(v) => Ok(vec![*v; dim]),
            PerCoordinate::Vector(v) => {
                crate::error::check_dim(dim, v.len())?;
                Ok(v.clone())
            }
        }
    }
}

/// The workload file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkloadSpec {
    Quadratic {
        hessian: HessianSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta_star: Option<PerCoordinate>,
        noise_sigma: PerCoordinate,
    },
    Mlp(MlpSpec),
}

impl WorkloadSpec {
    pub fn build(&self) -> Result<Box<dyn Workload>> {
        Ok(match self {
            WorkloadSpec::Quadratic { .. } => Box::new(self.build_quadratic()?),
            WorkloadSpec::Mlp(spec) => Box::new(MlpWorkload::new(spec)?),
        })
    }

    pub fn build_quadratic(&self) -> Result<QuadraticWorkload> {
        match self {
            WorkloadSpec::Quadratic {
                hessian,
                theta_star,
                noise_sigma,
            } => {
                let d = hessian.dim();
                let star = match theta_star {
                    Some(s) => s.expand(d)?,
                    None => vec![0.0; d],
                };
                QuadraticWorkload::new(hessian.clone(), star, noise_sigma.expand(d)?)
            }
            WorkloadSpec::Mlp(_) => Err(Error::invalid("not a quadratic workload")),
        }
    }
}

/// Empirical per-coordinate gradient statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub mu: Vec<f64>,
    /// Unbiased sample standard deviation.
    pub sigma: Vec<f64>,
    pub n_samples: usize,
    /// Coordinates whose estimated σ is zero.
    pub degenerate: Vec<usize>,
}

impl GradientEstimate {
    pub fn is_degenerate(&self) -> bool {
        !self.degenerate.is_empty()
    }

    /// Usable by the law functions only when no coordinate is degenerate.
    pub fn stats(&self) -> Result<GradientStats> {
        if self.is_degenerate() {
            return Err(Error::invalid(format!(
                "{} coordinates have zero estimated sigma",
                self.degenerate.len()
            )));
        }
        GradientStats::new(self.mu.clone(), self.sigma.clone())
    }
}

pub fn estimate_gradient_stats(
    workload: &dyn Workload,
    theta: &[f64],
    n_samples: usize,
    rng: &mut StreamRng,
) -> Result<GradientEstimate> {
    if n_samples < 2 {
        return Err(Error::invalid(
            "need at least 2 samples to estimate a variance",
        ));
    }
    let d = workload.dim();
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    for k in 0..n_samples {
        let g = workload.sample_gradient(theta, rng)?;
        let n = (k + 1) as f64;
        for ((m, s), x) in mean.iter_mut().zip(m2.iter_mut()).zip(&g) {
            let delta = x - *m;
            *m += delta / n;
            *s += delta * (x - *m);
        }
    }
    let sigma: Vec<f64> = m2
        .iter()
        .map(|s| (s / (n_samples - 1) as f64).max(0.0).sqrt())
        .collect();
    let degenerate = sigma
        .iter()
        .enumerate()
        .filter(|(_, s)| **s == 0.0)
        .map(|(i, _)| i)
        .collect();
    Ok(GradientEstimate {
        mu: mean,
        sigma,
        n_samples,
        degenerate,
    })
}

/// Per-coordinate validity bound πσ_i²/(2μ_i²) with summary percentiles.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSizeBound {
    /// +∞ where μ_i = 0.
    pub per_coordinate: Vec<f64>,
    pub min: f64,
    pub p10: f64,
    pub median: f64,
    pub p90: f64,
    pub max: f64,
}

impl BatchSizeBound {
    /// Linear-interpolated percentile, `q` in [0, 1].
    pub fn percentile(&self, q: f64) -> f64 {
        percentile(&self.per_coordinate, q)
    }
}

fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    if lo == hi || v[lo] == v[hi] {
        return v[lo];
    }
    let f = pos - lo as f64;
    v[lo] + f * (v[hi] - v[lo])
}

pub fn batch_size_bound(stats: &GradientStats) -> Result<BatchSizeBound> {
    stats.validate()?;
    let per_coordinate: Vec<f64> = stats
        .mu
        .iter()
        .zip(&stats.sigma)
        .map(|(m, s)| {
            if *m == 0.0 {
                f64::INFINITY
            } else {
                std::f64::consts::PI * s * s / (2.0 * m * m)
            }
        })
        .collect();
    let p = |q| percentile(&per_coordinate, q);
    Ok(BatchSizeBound {
        min: p(0.0),
        p10: p(0.1),
        median: p(0.5),
        p90: p(0.9),
        max: p(1.0),
        per_coordinate,
    })
}
