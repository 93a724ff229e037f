//! Agreement suite between the closed forms and the Monte Carlo oracles.
//!
//! The laws under test are injected through [`LawSet`], so a deliberately
//! wrong law can be plugged in to check that the suite notices.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::laws::{self, log_grid, LawInputs};
use crate::model::{HessianSpec, QuadraticWorkload};
use crate::optim::{sign, step, OptimizerConfig, OptimizerState};
use crate::oracle::{mc_loss_improvement, mc_optimal_lr_onestep, mc_sign_moments};
use crate::rng::{stream, tag, StreamRng};
use crate::signstats::{self, GradientStats};

/// The closed forms checked by the suite.
#[derive(Clone, Copy)]
pub struct LawSet {
    pub optimal_lr: fn(&LawInputs, f64) -> Result<f64>,
    pub loss_improvement: fn(&LawInputs, f64) -> Result<f64>,
    /// 𝓔(μ, σ, B)
    pub sign_mean: fn(f64, f64, f64) -> Result<f64>,
    pub large_batch_lr: fn(&LawInputs) -> Result<f64>,
    pub erf: fn(f64) -> Result<f64>,
}

impl Default for LawSet {
    fn default() -> Self {
        LawSet {
            optimal_lr: laws::optimal_lr_sign_exact,
            loss_improvement: laws::loss_improvement_sign_exact,
            sign_mean: signstats::e_exact,
            large_batch_lr: laws::large_batch_lr,
            erf: signstats::erf,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub n_models: usize,
    pub max_dim: usize,
    pub batches: Vec<usize>,
    pub moment_trials: usize,
    pub lr_trials: usize,
    pub lr_grid_points: usize,
    /// Relative tolerance of the one-step lr check.
    pub lr_rtol: f64,
    pub adam_gradients: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            n_models: 4,
            max_dim: 8,
            batches: vec![1, 4, 16, 64],
            moment_trials: 20_000,
            lr_trials: 20_000,
            lr_grid_points: 60,
            lr_rtol: 0.10,
            adam_gradients: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub cases: usize,
    /// Worst observed discrepancy, in the unit of `tolerance`.
    pub worst: f64,
    pub tolerance: f64,
    pub unit: &'static str,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Plain-text table; identical bytes for identical seeds.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "surge verify  seed={}", self.seed);
        let _ = writeln!(
            s,
            "{:<22} {:>6} {:>12} {:>12}  {:<7} result",
            "check", "cases", "worst", "tolerance", "unit"
        );
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{:<22} {:>6} {:>12.4e} {:>12.4e}  {:<7} {}",
                c.name,
                c.cases,
                c.worst,
                c.tolerance,
                c.unit,
                if c.passed { "PASS" } else { "FAIL" }
            );
        }
        let n_pass = self.checks.iter().filter(|c| c.passed).count();
        let _ = writeln!(
            s,
            "overall: {} ({}/{})",
            if self.passed() { "PASS" } else { "FAIL" },
            n_pass,
            self.checks.len()
        );
        s
    }
}

/// A random quadratic at a point with known gradient statistics.
#[derive(Debug, Clone)]
pub struct RandomModel {
    pub workload: QuadraticWorkload,
    pub theta: Vec<f64>,
    pub inputs: LawInputs,
}

/// d ∈ [2, max_dim]; H = AAᵀ/d + I/2; σ_i log-uniform in [½, 2];
/// μ_i/σ_i = ±U(0.1, 1).
pub fn random_model(rng: &mut StreamRng, max_dim: usize) -> Result<RandomModel> {
    let d = rng.random_range(2..=max_dim.max(2));
    let a: Vec<Vec<f64>> = (0..d)
        .map(|_| {
            (0..d)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let mut h = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            let dot: f64 = (0..d).map(|k| a[i][k] * a[j][k]).sum();
            h[i][j] = dot / d as f64 + if i == j { 0.5 } else { 0.0 };
        }
    }
    for i in 0..d {
        for j in 0..i {
            h[j][i] = h[i][j];
        }
    }
    let sigma: Vec<f64> = (0..d)
        .map(|_| 2f64.powf(rng.random_range(-1.0..1.0)))
        .collect();
    let mu: Vec<f64> = sigma
        .iter()
        .map(|s| {
            let snr = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                snr * s
            } else {
                -snr * s
            }
        })
        .collect();
    let hessian = HessianSpec::dense(h)?;
    let workload = QuadraticWorkload::centered(hessian.clone(), sigma.clone())?;
    let theta = workload.theta_for_gradient(&mu)?;
    let stats = workload.gradient_stats(&theta)?;
    let inputs = LawInputs::new(stats, hessian)?;
    Ok(RandomModel {
        workload,
        theta,
        inputs,
    })
}

/// erf(x) = (2/√π)·e^{−x²}·Σ_n 2ⁿ x^{2n+1} / (1·3·…·(2n+1)); every term is
/// positive, so the sum has no cancellation.
pub fn erf_series(x: f64, terms: usize) -> f64 {
    let x2 = x * x;
    let mut term = x.abs();
    let mut sum = 0.0;
    let mut comp = 0.0;
    for n in 0..terms {
        let y = term - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        term *= 2.0 * x2 / (2 * n + 3) as f64;
    }
    let v = 2.0 / std::f64::consts::PI.sqrt() * (-x2).exp() * sum;
    v.min(1.0).copysign(x)
}

fn check(
    name: &'static str,
    cases: usize,
    worst: f64,
    tolerance: f64,
    unit: &'static str,
) -> CheckResult {
    CheckResult {
        name,
        cases,
        worst,
        tolerance,
        unit,
        passed: worst <= tolerance,
    }
}

pub fn run_verify(seed: u64, opts: &VerifyOptions, laws: &LawSet) -> Result<VerifyReport> {
    let mut model_rng = stream(seed, &[tag("verify"), tag("models")]);
    let models: Vec<RandomModel> = (0..opts.n_models)
        .map(|_| random_model(&mut model_rng, opts.max_dim))
        .collect::<Result<_>>()?;
    let mut checks = Vec::new();

    // erf against the positive series
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for k in 0..=1200 {
        let x = -6.0 + k as f64 * 0.01;
        worst = worst.max(((laws.erf)(x)? - erf_series(x, 200)).abs());
        n += 1;
    }
    checks.push(check("erf_series", n, worst, 1e-7, "abs"));

    // sign moments, in standard errors
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for (m, model) in models.iter().enumerate() {
        let s: &GradientStats = &model.inputs.stats;
        for &b in &opts.batches {
            let mut rng = stream(seed, &[tag("verify"), tag("moments"), m as u64, b as u64]);
            let mc = mc_sign_moments(s, b as f64, opts.moment_trials, &mut rng)?;
            for i in 0..s.dim() {
                let law = (laws.sign_mean)(s.mu[i], s.sigma[i], b as f64)?;
                let se = mc.stderr[i].max(1.0 / opts.moment_trials as f64);
                worst = worst.max((mc.mean[i] - law).abs() / se);
                n += 1;
            }
        }
    }
    checks.push(check("sign_moments", n, worst, 5.0, "stderr"));

    // one-step optimal lr and loss improvement
    let mut worst_lr: f64 = 0.0;
    let mut worst_dl: f64 = 0.0;
    let mut n = 0;
    for (m, model) in models.iter().enumerate() {
        for &b in &opts.batches {
            let pred = (laws.optimal_lr)(&model.inputs, b as f64)?;
            let grid = log_grid(pred / 10.0, pred * 10.0, opts.lr_grid_points)?;
            let mut rng = stream(seed, &[tag("verify"), tag("lr"), m as u64, b as u64]);
            let opt = mc_optimal_lr_onestep(
                &model.workload,
                &model.theta,
                b,
                &grid,
                opts.lr_trials,
                &mut rng,
            )?;
            worst_lr = worst_lr.max((opt.lr_star / pred - 1.0).abs());

            let mut rng = stream(seed, &[tag("verify"), tag("dl"), m as u64, b as u64]);
            let (mean, se) = mc_loss_improvement(
                &model.workload,
                &model.theta,
                b,
                pred,
                opts.lr_trials,
                &mut rng,
            )?;
            let law = (laws.loss_improvement)(&model.inputs, b as f64)?;
            worst_dl = worst_dl.max((mean - law).abs() / se.max(f64::MIN_POSITIVE));
            n += 1;
        }
    }
    checks.push(check(
        "optimal_lr_onestep",
        n,
        worst_lr,
        opts.lr_rtol,
        "rel",
    ));
    checks.push(check("loss_improvement", n, worst_dl, 5.0, "stderr"));

    // saturation
    let mut worst: f64 = 0.0;
    for model in &models {
        let b = 1e6 * model.inputs.batch_size_bound().median;
        let exact = (laws.optimal_lr)(&model.inputs, b)?;
        let lim = (laws.large_batch_lr)(&model.inputs)?;
        worst = worst.max((exact / lim - 1.0).abs());
    }
    checks.push(check(
        "large_batch_plateau",
        models.len(),
        worst,
        0.01,
        "rel",
    ));

    // Adam with zero betas against sign steps
    let mut rng = stream(seed, &[tag("verify"), tag("adam")]);
    let d = 8;
    let mut adam_state = OptimizerState::new(d);
    let adam = OptimizerConfig::adam_as_sign(1.0);
    let mut mismatches = 0usize;
    let mut theta = vec![0.0; d];
    for _ in 0..opts.adam_gradients {
        let g: Vec<f64> = (0..d)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let before = theta.clone();
        step(&adam, &mut adam_state, &mut theta, &g)?;
        for i in 0..d {
            if before[i] - theta[i] != sign(g[i]) {
                mismatches += 1;
            }
        }
        theta.iter_mut().for_each(|t| *t = 0.0);
    }
    checks.push(check(
        "adam_sign_reduction",
        opts.adam_gradients * d,
        mismatches as f64,
        0.0,
        "count",
    ));

    Ok(VerifyReport { seed, checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Workload;

    fn quick() -> VerifyOptions {
        VerifyOptions {
            n_models: 2,
            batches: vec![1, 16],
            moment_trials: 5_000,
            lr_trials: 20_000,
            adam_gradients: 1000,
            ..VerifyOptions::default()
        }
    }

    #[test]
    fn real_laws_pass_and_report_is_stable() {
        let a = run_verify(1, &quick(), &LawSet::default()).unwrap();
        assert!(a.passed(), "{}", a.render());
        let b = run_verify(1, &quick(), &LawSet::default()).unwrap();
        assert_eq!(a.render(), b.render());
    }

    #[test]
    fn corrupted_lr_is_caught() {
        fn doubled(inputs: &LawInputs, b: f64) -> Result<f64> {
            Ok(2.0 * laws::optimal_lr_sign_exact(inputs, b)?)
        }
        let laws = LawSet {
            optimal_lr: doubled,
            ..LawSet::default()
        };
        let r = run_verify(1, &quick(), &laws).unwrap();
        assert!(!r.passed());
        let failed: Vec<_> = r
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name)
            .collect();
        assert!(failed.contains(&"optimal_lr_onestep"), "{failed:?}");
    }

    #[test]
    fn series_oracle_values() {
        assert!((erf_series(1.0, 200) - 0.842_700_792_949_714_9).abs() < 1e-15);
        assert!((erf_series(-2.0, 200) + 0.995_322_265_018_952_7).abs() < 1e-15);
        assert_eq!(erf_series(0.0, 200), 0.0);
        assert!((erf_series(6.0, 200) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn random_models_are_valid() {
        let mut rng = stream(3, &[]);
        for _ in 0..20 {
            let m = random_model(&mut rng, 8).unwrap();
            let d = m.inputs.dim();
            assert!((2..=8).contains(&d));
            let g = m.workload.true_gradient(&m.theta).unwrap();
            for i in 0..d {
                assert!((g[i] - m.inputs.stats.mu[i]).abs() < 1e-10);
            }
        }
    }
}
