//! Brute-force Monte Carlo counterparts of the closed forms.
//!
//! Every learning rate on a grid sees the same batch-gradient draws, so the
//! argmax over the grid is not blurred by independent noise per lr.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::model::Workload;
use crate::optim::sign;
use crate::rng::StreamRng;
use crate::signstats::GradientStats;

pub const MIN_TRIALS: usize = 1000;

fn check_trials(trials: usize) -> Result<()> {
    if trials < MIN_TRIALS {
        return Err(Error::invalid(format!(
            "need at least {MIN_TRIALS} trials, got {trials}"
        )));
    }
    Ok(())
}

/// Empirical sign moments of a batch-mean Gaussian gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct McSignMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Standard error of `mean`.
    pub stderr: Vec<f64>,
}

pub fn mc_sign_moments(
    stats: &GradientStats,
    batch: f64,
    trials: usize,
    rng: &mut StreamRng,
) -> Result<McSignMoments> {
    stats.validate()?;
    check_trials(trials)?;
    if !(batch > 0.0) {
        return Err(Error::invalid("batch size must be positive"));
    }
    let d = stats.dim();
    let scale = 1.0 / batch.sqrt();
    let mut sum = vec![0.0; d];
    let mut nonzero = vec![0usize; d];
    for _ in 0..trials {
        for i in 0..d {
            let z: f64 = StandardNormal.sample(rng);
            let s = sign(stats.mu[i] + stats.sigma[i] * scale * z);
            sum[i] += s;
            nonzero[i] += usize::from(s != 0.0);
        }
    }
    let n = trials as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    // s² ∈ {0, 1}, so the second moment is the nonzero fraction
    let var: Vec<f64> = mean
        .iter()
        .zip(&nonzero)
        .map(|(m, k)| ((*k as f64 / n - m * m) * n / (n - 1.0)).max(0.0))
        .collect();
    let stderr = var.iter().map(|v| (v / n).sqrt()).collect();
    Ok(McSignMoments { mean, var, stderr })
}

/// Mean one-step loss decrease at one lr.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrEstimate {
    pub lr: f64,
    pub mean_dl: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneStepOptimum {
    /// argmax of `mean_dl`; ties go to the smaller lr.
    pub lr_star: f64,
    pub curve: Vec<LrEstimate>,
}

/// Estimates E[L(θ) − L(θ − lr·sign(g_B))] for each lr on the grid.
pub fn mc_optimal_lr_onestep(
    workload: &dyn Workload,
    theta: &[f64],
    batch: usize,
    lr_grid: &[f64],
    trials: usize,
    rng: &mut StreamRng,
) -> Result<OneStepOptimum> {
    check_trials(trials)?;
    check_dim(workload.dim(), theta.len())?;
    if lr_grid.is_empty() {
        return Err(Error::invalid("empty lr grid"));
    }
    if lr_grid.windows(2).any(|w| !(w[1] > w[0])) || lr_grid[0] < 0.0 {
        return Err(Error::invalid(
            "lr grid must be nonnegative and strictly increasing",
        ));
    }
    let base = workload.loss(theta)?;
    let k = lr_grid.len();
    let mut sum = vec![0.0; k];
    let mut sum_sq = vec![0.0; k];
    let mut moved = theta.to_vec();
    for _ in 0..trials {
        let g = workload.sample_batch_gradient(theta, batch, rng)?;
        let s: Vec<f64> = g.iter().map(|x| sign(*x)).collect();
        for (j, lr) in lr_grid.iter().enumerate() {
            let dl = if *lr == 0.0 {
                0.0
            } else {
                for ((m, t), si) in moved.iter_mut().zip(theta).zip(&s) {
                    *m = t - lr * si;
                }
                base - workload.loss(&moved)?
            };
            sum[j] += dl;
            sum_sq[j] += dl * dl;
        }
    }
    let n = trials as f64;
    let curve: Vec<LrEstimate> = lr_grid
        .iter()
        .enumerate()
        .map(|(j, lr)| {
            let mean = sum[j] / n;
            let var = ((sum_sq[j] / n - mean * mean) * n / (n - 1.0)).max(0.0);
            LrEstimate {
                lr: *lr,
                mean_dl: mean,
                stderr: (var / n).sqrt(),
            }
        })
        .collect();
    let lr_star = curve
        .iter()
        .fold(None::<&LrEstimate>, |best, c| match best {
            Some(b) if b.mean_dl >= c.mean_dl => Some(b),
            _ => Some(c),
        })
        .map(|c| c.lr)
        .expect("grid is nonempty");
    Ok(OneStepOptimum { lr_star, curve })
}

/// Single-lr variant of [`mc_optimal_lr_onestep`]; returns (mean, stderr).
pub fn mc_loss_improvement(
    workload: &dyn Workload,
    theta: &[f64],
    batch: usize,
    lr: f64,
    trials: usize,
    rng: &mut StreamRng,
) -> Result<(f64, f64)> {
    let r = mc_optimal_lr_onestep(workload, theta, batch, &[lr], trials, rng)?;
    Ok((r.curve[0].mean_dl, r.curve[0].stderr))
}
