//! Browser bindings: law curves, a small surge simulation and the
//! steps/examples trade-off, each returning a JSON string.
//!
//! The `*_json` functions hold the logic and run natively; the exported
//! wrappers only convert errors.

use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use surge::fit::fit_bnoise;
use surge::harness::{empirical_optimal_lr, grid_search, Axis, GridConfig, NoiseSharing};
use surge::laws::{
    curve, log_grid, optimal_lr_sign_exact, tradeoff_curve, CurveSource, LawInputs, LawParams,
    Variant,
};
use surge::model::{HessianSpec, InitSpec, PerCoordinate, QuadraticWorkload, Workload};
use surge::optim::OptimizerConfig;
use surge::rng::{stream, tag};

const VARIANTS: [Variant; 5] = [
    Variant::Exact,
    Variant::Surge,
    Variant::SgdAlpha(0.5),
    Variant::SgdAlpha(1.0),
    Variant::LargeBatch,
];

/// Uniform model: `diag` on the Hessian diagonal, `offdiag` elsewhere, equal
/// gradient mean and noise in every coordinate.
#[derive(Debug, Clone, Copy)]
pub struct Uniform {
    pub dim: usize,
    pub diag: f64,
    pub offdiag: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl Uniform {
    fn build(&self) -> surge::Result<(QuadraticWorkload, Vec<f64>, LawInputs)> {
        let h = HessianSpec::uniform(self.diag, self.offdiag, self.dim)?;
        let w = QuadraticWorkload::centered(h.clone(), vec![self.sigma; self.dim])?;
        let probe = w.theta_for_gradient(&vec![self.mu; self.dim])?;
        let inputs = LawInputs::new(w.gradient_stats(&probe)?, h)?;
        Ok((w, probe, inputs))
    }
}

fn text<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

pub fn predict_json(m: Uniform, b_min: f64, b_max: f64, points: usize) -> Result<String, String> {
    let (_, _, inputs) = m.build().map_err(text)?;
    let params = LawParams::from_inputs(&inputs).map_err(text)?;
    let grid = log_grid(b_min, b_max, points).map_err(text)?;
    let curves: Vec<Value> = VARIANTS
        .iter()
        .filter_map(|v| curve(CurveSource::Inputs(&inputs), *v, &grid).ok())
        .map(|c| json!({ "variant": c.variant.to_string(), "points": c.points }))
        .collect();
    Ok(json!({
        "b_noise": params.b_noise,
        "eps_max": params.eps_max,
        "large_batch_lr": params.large_batch_lr,
        "bound_median": inputs.batch_size_bound().median,
        "curves": curves,
    })
    .to_string())
}

/// One sign step from the probe point per (B, lr, round); the lr with the
/// lowest mean loss afterwards is the empirical optimum for that B.
pub fn simulate_json(m: Uniform, seed: u64, rounds: usize) -> Result<String, String> {
    let (w, probe, inputs) = m.build().map_err(text)?;
    let batches = Axis::Geometric {
        start: 4.0,
        stop: 512.0,
        count: 12,
    };
    let theory: Vec<f64> = batches
        .batch_sizes()
        .map_err(text)?
        .iter()
        .map(|b| optimal_lr_sign_exact(&inputs, *b as f64))
        .collect::<surge::Result<_>>()
        .map_err(text)?;
    let lo = theory.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = theory.iter().copied().fold(0.0, f64::max);
    let cfg = GridConfig {
        workload: None,
        optimizer: OptimizerConfig::sign(lo),
        batch_sizes: batches,
        lrs: Axis::Geometric {
            start: 0.8 * lo,
            stop: 1.25 * hi,
            count: 12,
        },
        rounds,
        target_loss: w.loss(&probe).map_err(text)?,
        extra_steps: 1,
        max_steps: 1,
        init: InitSpec::AtGradient {
            mu: PerCoordinate::Scalar(m.mu),
        },
        noise: NoiseSharing::AcrossRound,
        seed: None,
    };
    let grid = cfg.resolve().map_err(text)?;
    let out = grid_search(&w, &grid, seed, 1);
    let empirical: Vec<Option<f64>> = grid
        .batch_sizes
        .iter()
        .map(|b| empirical_optimal_lr(&out.records, *b).ok().map(|o| o.0))
        .collect();
    Ok(json!({
        "b_noise": surge::laws::b_noise(&inputs).ok(),
        "batches": grid.batch_sizes,
        "lrs": grid.lrs,
        "empirical": empirical,
        "theory": theory,
    })
    .to_string())
}

/// The trade-off hyperbola, plus `samples` noisy (S, E) points drawn from it
/// and the line fit that recovers B_noise and S_min from them.
pub fn tradeoff_json(
    s_min: f64,
    e_min: f64,
    noise: f64,
    samples: usize,
    seed: u64,
) -> Result<String, String> {
    let t = tradeoff_curve(s_min, e_min, 60).map_err(text)?;
    if noise.is_nan() || noise < 0.0 {
        return Err("noise must be nonnegative".into());
    }
    let batches = log_grid(t.b_crit / 20.0, t.b_crit * 20.0, samples.max(2)).map_err(text)?;
    let mut rng = stream(seed, &[tag("tradeoff")]);
    let noisy: Vec<(f64, f64, f64)> = batches
        .iter()
        .map(|b| {
            let z: f64 = StandardNormal.sample(&mut rng);
            let s = s_min * (1.0 + t.b_crit / b) * (1.0 + noise * z).max(0.05);
            (*b, s, s * b)
        })
        .collect();
    let inv: Vec<(f64, f64)> = noisy.iter().map(|(_, s, e)| (1.0 / e, 1.0 / s)).collect();
    let fit = fit_bnoise(&inv).ok();
    Ok(json!({
        "b_crit": t.b_crit,
        "curve": t.points.iter().map(|p| json!({"batch": p.batch, "steps": p.steps, "examples": p.examples})).collect::<Vec<_>>(),
        "samples": noisy.iter().map(|(b, s, e)| json!({"batch": b, "steps": s, "examples": e})).collect::<Vec<_>>(),
        "fit": fit.map(|f| json!({"b_noise": f.b_noise, "s_min": f.s_min, "e_min": f.b_noise * f.s_min})),
    })
    .to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn predict(
    dim: usize,
    diag: f64,
    offdiag: f64,
    mu: f64,
    sigma: f64,
    b_min: f64,
    b_max: f64,
    points: usize,
) -> Result<String, JsError> {
    let m = Uniform {
        dim,
        diag,
        offdiag,
        mu,
        sigma,
    };
    js(predict_json(m, b_min, b_max, points))
}

#[wasm_bindgen]
pub fn simulate(
    dim: usize,
    diag: f64,
    offdiag: f64,
    mu: f64,
    sigma: f64,
    seed: u32,
    rounds: usize,
) -> Result<String, JsError> {
    let m = Uniform {
        dim,
        diag,
        offdiag,
        mu,
        sigma,
    };
    js(simulate_json(m, seed as u64, rounds))
}

#[wasm_bindgen]
pub fn tradeoff(
    s_min: f64,
    e_min: f64,
    noise: f64,
    samples: usize,
    seed: u32,
) -> Result<String, JsError> {
    js(tradeoff_json(s_min, e_min, noise, samples, seed as u64))
}
