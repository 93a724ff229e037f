//! Closed-form batch size / learning rate laws.
//!
//! Notation: μ_i and σ_i are the per-coordinate gradient mean and per-sample
//! standard deviation, H the Hessian, 𝓔_i(B) the expected sign of the batch
//! gradient (see [`crate::signstats`]). Two sums appear everywhere:
//!
//! * `trace` = Σ_i H_ii
//! * `cross` = Σ_{i≠j} (μ_i μ_j / σ_i σ_j) H_ij
//!
//! Both must be positive for the noise scale and the peak learning rate to
//! exist; when they are not, the laws return [`Error::LawViolation`] carrying
//! the offending sums instead of a NaN.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{check_dim, Error, LawDiagnostic, Result};
use crate::model::{batch_size_bound, BatchSizeBound, HessianSpec};
use crate::signstats::{sign_batch_moments_with, GradientStats, SignModel};

/// Gradient statistics and Hessian at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct LawInputs {
    pub stats: GradientStats,
    pub hessian: HessianSpec,
}

impl LawInputs {
    pub fn new(stats: GradientStats, hessian: HessianSpec) -> Result<Self> {
        stats.validate()?;
        hessian.validate()?;
        check_dim(hessian.dim(), stats.dim())?;
        Ok(LawInputs { stats, hessian })
    }

    pub fn dim(&self) -> usize {
        self.stats.dim()
    }

    pub fn trace(&self) -> f64 {
        self.hessian.trace()
    }

    /// Σ_{i≠j} (μ_i μ_j / σ_i σ_j) H_ij
    pub fn cross_sum(&self) -> f64 {
        self.hessian
            .off_diagonal_form(&self.stats.snr())
            .expect("dimensions checked at construction")
    }

    /// Σ_i μ_i² / σ_i
    pub fn signal_sum(&self) -> f64 {
        self.stats
            .mu
            .iter()
            .zip(&self.stats.sigma)
            .map(|(m, s)| m * m / s)
            .sum()
    }

    /// Checks trace > 0 and cross > 0.
    pub fn check_positivity(&self, law: &'static str) -> Result<(f64, f64)> {
        let trace = self.trace();
        let cross = self.cross_sum();
        if trace > 0.0 && cross > 0.0 {
            Ok((trace, cross))
        } else {
            Err(Error::LawViolation(LawDiagnostic {
                law,
                trace,
                cross_sum: Some(cross),
                denominator: if trace > 0.0 { 2.0 * cross } else { trace },
            }))
        }
    }

    pub fn batch_size_bound(&self) -> BatchSizeBound {
        batch_size_bound(&self.stats).expect("stats validated at construction")
    }

    pub fn scale_mu(&self, t: f64) -> Self {
        LawInputs {
            stats: self.stats.scale_mu(t),
            hessian: self.hessian.clone(),
        }
    }

    pub fn scale_hessian(&self, t: f64) -> Self {
        LawInputs {
            stats: self.stats.clone(),
            hessian: self.hessian.scaled(t),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{name} = {v} must be positive and finite"
        )))
    }
}

/// Optimal step size for an update direction V with mean `ev` and diagonal
/// covariance `cov_diag`, under a quadratic loss with gradient `g`:
/// GᵀE[V] / (tr[H·cov(V)] + E[V]ᵀ H E[V]).
pub fn optimal_lr_general(g: &[f64], ev: &[f64], cov_diag: &[f64], h: &HessianSpec) -> Result<f64> {
    let d = h.dim();
    check_dim(d, g.len())?;
    check_dim(d, ev.len())?;
    check_dim(d, cov_diag.len())?;
    let denominator = h.weighted_trace(cov_diag)? + h.quad_form(ev)?;
    if !(denominator > 0.0) {
        return Err(Error::LawViolation(LawDiagnostic {
            law: "optimal_lr_general",
            trace: h.trace(),
            cross_sum: None,
            denominator,
        }));
    }
    Ok(dot(g, ev) / denominator)
}

/// (GᵀE[V] / 2) · lr
pub fn loss_improvement_general(g: &[f64], ev: &[f64], lr_opt: f64) -> Result<f64> {
    check_dim(g.len(), ev.len())?;
    Ok(0.5 * dot(g, ev) * lr_opt)
}

fn sign_lr_parts(inputs: &LawInputs, batch: f64, model: SignModel) -> Result<(f64, f64)> {
    let m = sign_batch_moments_with(&inputs.stats, batch, model)?;
    let numerator = dot(&m.mean, &inputs.stats.mu);
    // Σ(1 − 𝓔_i²)H_ii + ΣΣ 𝓔_i 𝓔_j H_ij
    let denominator =
        inputs.hessian.weighted_trace(&m.var_diag)? + inputs.hessian.quad_form(&m.mean)?;
    if !(denominator > 0.0) {
        return Err(Error::LawViolation(LawDiagnostic {
            law: "optimal_lr_sign",
            trace: inputs.trace(),
            cross_sum: Some(inputs.cross_sum()),
            denominator,
        }));
    }
    Ok((numerator, denominator))
}

/// Optimal learning rate of sign descent at batch size `batch`.
pub fn optimal_lr_sign(inputs: &LawInputs, batch: f64, model: SignModel) -> Result<f64> {
    let (n, d) = sign_lr_parts(inputs, batch, model)?;
    Ok(n / d)
}

pub fn optimal_lr_sign_exact(inputs: &LawInputs, batch: f64) -> Result<f64> {
    optimal_lr_sign(inputs, batch, SignModel::Exact)
}

/// Expected loss improvement of one sign step at the optimal learning rate.
pub fn loss_improvement_sign(inputs: &LawInputs, batch: f64, model: SignModel) -> Result<f64> {
    let (n, d) = sign_lr_parts(inputs, batch, model)?;
    Ok(0.5 * n * n / d)
}

pub fn loss_improvement_sign_exact(inputs: &LawInputs, batch: f64) -> Result<f64> {
    loss_improvement_sign(inputs, batch, SignModel::Exact)
}

/// Gradient noise scale: π·Σ H_ii / (2·cross). Also the batch size at which
/// the small-batch learning rate peaks.
pub fn b_noise(inputs: &LawInputs) -> Result<f64> {
    let (trace, cross) = inputs.check_positivity("b_noise")?;
    Ok(PI * trace / (2.0 * cross))
}

/// Peak learning rate √(B_noise/2π)·Σ(μ_i²/σ_i) / Σ H_ii.
pub fn eps_max(inputs: &LawInputs) -> Result<f64> {
    let bn = b_noise(inputs)?;
    let value = (bn / (2.0 * PI)).sqrt() * inputs.signal_sum() / inputs.trace();
    debug_assert!({
        let alt = eps_max_without_noise_scale(inputs)?;
        (value - alt).abs() <= 1e-9 * value.abs().max(alt.abs())
    });
    Ok(value)
}

/// The same peak written without B_noise:
/// Σ(μ_i²/σ_i) / (2·√cross·√Σ H_ii).
pub fn eps_max_without_noise_scale(inputs: &LawInputs) -> Result<f64> {
    let (trace, cross) = inputs.check_positivity("eps_max")?;
    Ok(inputs.signal_sum() / (2.0 * cross.sqrt() * trace.sqrt()))
}

/// AM–GM lower bound Σ(μ_i²/σ_i) / (cross + Σ H_ii) on the peak.
pub fn eps_max_lower_bound(inputs: &LawInputs) -> Result<f64> {
    let (trace, cross) = inputs.check_positivity("eps_max_lower_bound")?;
    Ok(inputs.signal_sum() / (cross + trace))
}

/// ε_max / (½(√(B_noise/B) + √(B/B_noise)))
pub fn surge_lr(batch: f64, b_noise: f64, eps_max: f64) -> Result<f64> {
    positive("batch", batch)?;
    positive("b_noise", b_noise)?;
    positive("eps_max", eps_max)?;
    Ok(eps_max / (0.5 * ((b_noise / batch).sqrt() + (batch / b_noise).sqrt())))
}

/// ε_max / (1 + B_noise/B)^α
pub fn sgd_lr(batch: f64, b_noise: f64, eps_max: f64, alpha: f64) -> Result<f64> {
    positive("batch", batch)?;
    positive("b_noise", b_noise)?;
    positive("eps_max", eps_max)?;
    positive("alpha", alpha)?;
    Ok(eps_max / (1.0 + b_noise / batch).powf(alpha))
}

/// Small-batch asymptotes of the surge law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallBatch {
    /// ε_max · B / B_noise
    pub linear: f64,
    /// 2 ε_max √(B / B_noise)
    pub sqrt: f64,
}

pub fn small_batch_approximations(batch: f64, b_noise: f64, eps_max: f64) -> Result<SmallBatch> {
    positive("batch", batch)?;
    positive("b_noise", b_noise)?;
    positive("eps_max", eps_max)?;
    Ok(SmallBatch {
        linear: eps_max * batch / b_noise,
        sqrt: 2.0 * eps_max * (batch / b_noise).sqrt(),
    })
}

/// Saturated learning rate Σ|μ_i| / ΣΣ sign(μ_i) sign(μ_j) H_ij.
pub fn large_batch_lr(inputs: &LawInputs) -> Result<f64> {
    let signs: Vec<f64> = inputs
        .stats
        .mu
        .iter()
        .map(|m| if *m == 0.0 { 0.0 } else { m.signum() })
        .collect();
    let denominator = inputs.hessian.quad_form(&signs)?;
    if !(denominator > 0.0) {
        return Err(Error::LawViolation(LawDiagnostic {
            law: "large_batch_lr",
            trace: inputs.trace(),
            cross_sum: None,
            denominator,
        }));
    }
    Ok(inputs.stats.mu.iter().map(|m| m.abs()).sum::<f64>() / denominator)
}

/// ΔL_max / (1 + B_noise/B)
pub fn loss_improvement_law(batch: f64, b_noise: f64, dl_max: f64) -> Result<f64> {
    positive("batch", batch)?;
    positive("b_noise", b_noise)?;
    positive("dl_max", dl_max)?;
    Ok(dl_max / (1.0 + b_noise / batch))
}

/// ΔL_max = (Σ μ_i²/σ_i)² / (2·cross)
pub fn dl_max(inputs: &LawInputs) -> Result<f64> {
    let (_, cross) = inputs.check_positivity("dl_max")?;
    let s = inputs.signal_sum();
    if s == 0.0 {
        return Err(Error::invalid("dl_max undefined for zero gradient mean"));
    }
    Ok(s * s / (2.0 * cross))
}

/// One point on the steps/examples trade-off hyperbola.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradeoffPoint {
    pub batch: f64,
    pub steps: f64,
    pub examples: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tradeoff {
    pub s_min: f64,
    pub e_min: f64,
    /// E_min / S_min
    pub b_crit: f64,
    pub points: Vec<TradeoffPoint>,
}

/// Samples (S/S_min − 1)(E/E_min − 1) = 1 at batch sizes log-spaced over
/// [B_crit/100, 100·B_crit], where S = S_min(1 + B_crit/B) and E = S·B.
pub fn tradeoff_curve(s_min: f64, e_min: f64, n_points: usize) -> Result<Tradeoff> {
    positive("s_min", s_min)?;
    positive("e_min", e_min)?;
    if n_points < 2 {
        return Err(Error::invalid("tradeoff curve needs at least 2 points"));
    }
    let b_crit = e_min / s_min;
    let points = log_grid(b_crit / 100.0, b_crit * 100.0, n_points)?
        .into_iter()
        .map(|batch| {
            let r = b_crit / batch;
            TradeoffPoint {
                batch,
                steps: s_min * (1.0 + r),
                examples: e_min * (1.0 + 1.0 / r),
            }
        })
        .collect();
    Ok(Tradeoff {
        s_min,
        e_min,
        b_crit,
        points,
    })
}

/// `n` points geometrically spaced from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    positive("lo", lo)?;
    positive("hi", hi)?;
    if !(hi > lo) || n < 2 {
        return Err(Error::invalid("log grid needs lo < hi and n >= 2"));
    }
    let step = (hi / lo).ln() / (n - 1) as f64;
    let mut g: Vec<f64> = (0..n).map(|k| lo * (step * k as f64).exp()).collect();
    g[n - 1] = hi;
    Ok(g)
}

/// Which law a curve evaluates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    /// Exact sign-descent optimum with the erf form.
    Exact,
    Surge,
    SgdAlpha(f64),
    Linear,
    Sqrt,
    LargeBatch,
    LossImprovement,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Exact => write!(f, "exact"),
            Variant::Surge => write!(f, "surge"),
            Variant::SgdAlpha(a) => write!(f, "sgd_alpha_{a}"),
            Variant::Linear => write!(f, "linear"),
            Variant::Sqrt => write!(f, "sqrt"),
            Variant::LargeBatch => write!(f, "large_batch"),
            Variant::LossImprovement => write!(f, "loss_improvement"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "exact" => Variant::Exact,
            "surge" => Variant::Surge,
            "linear" => Variant::Linear,
            "sqrt" => Variant::Sqrt,
            "large_batch" => Variant::LargeBatch,
            "loss_improvement" => Variant::LossImprovement,
            "sgd" => Variant::SgdAlpha(1.0),
            other => {
                let alpha = other
                    .strip_prefix("sgd_alpha_")
                    .and_then(|a| a.parse::<f64>().ok())
                    .filter(|a| *a > 0.0)
                    .ok_or_else(|| Error::invalid(format!("unknown law variant {other:?}")))?;
                Variant::SgdAlpha(alpha)
            }
        })
    }
}

/// Fitted or derived law constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LawParams {
    pub b_noise: f64,
    pub eps_max: f64,
    pub dl_max: Option<f64>,
    pub large_batch_lr: Option<f64>,
}

impl LawParams {
    pub fn from_inputs(inputs: &LawInputs) -> Result<Self> {
        Ok(LawParams {
            b_noise: b_noise(inputs)?,
            eps_max: eps_max(inputs)?,
            dl_max: Some(dl_max(inputs)?),
            large_batch_lr: large_batch_lr(inputs).ok(),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub enum CurveSource<'a> {
    Inputs(&'a LawInputs),
    Params(LawParams),
}

/// A sequence of (B, value) points for one law.
#[derive(Debug, Clone, PartialEq)]
pub struct LawCurve {
    pub variant: Variant,
    pub points: Vec<(f64, f64)>,
}

impl LawCurve {
    /// Batch size of the largest value; first on ties.
    pub fn argmax(&self) -> Option<(f64, f64)> {
        self.points
            .iter()
            .copied()
            .fold(None, |best: Option<(f64, f64)>, p| match best {
                Some(b) if b.1 >= p.1 => Some(b),
                _ => Some(p),
            })
    }
}

pub fn curve(source: CurveSource<'_>, variant: Variant, grid: &[f64]) -> Result<LawCurve> {
    if grid.is_empty() {
        return Err(Error::invalid("empty batch grid"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("batch grid must be strictly increasing"));
    }
    if let Some(b) = grid.iter().find(|b| !(**b > 0.0)) {
        return Err(Error::invalid(format!("batch size {b} must be positive")));
    }

    let params = || match source {
        CurveSource::Inputs(inputs) => LawParams::from_inputs(inputs),
        CurveSource::Params(p) => Ok(p),
    };
    let eval: Box<dyn Fn(f64) -> Result<f64>> = match variant {
        Variant::Exact => match source {
            CurveSource::Inputs(inputs) => Box::new(move |b| optimal_lr_sign_exact(inputs, b)),
            CurveSource::Params(_) => {
                return Err(Error::invalid(
                    "the exact law needs gradient statistics and a hessian",
                ))
            }
        },
        Variant::LargeBatch => {
            let v = match source {
                CurveSource::Inputs(inputs) => large_batch_lr(inputs)?,
                CurveSource::Params(p) => p
                    .large_batch_lr
                    .ok_or_else(|| Error::invalid("no large-batch learning rate supplied"))?,
            };
            Box::new(move |_| Ok(v))
        }
        Variant::Surge => {
            let p = params()?;
            Box::new(move |b| surge_lr(b, p.b_noise, p.eps_max))
        }
        Variant::SgdAlpha(alpha) => {
            let p = params()?;
            Box::new(move |b| sgd_lr(b, p.b_noise, p.eps_max, alpha))
        }
        Variant::Linear => {
            let p = params()?;
            Box::new(move |b| Ok(small_batch_approximations(b, p.b_noise, p.eps_max)?.linear))
        }
        Variant::Sqrt => {
            let p = params()?;
            Box::new(move |b| Ok(small_batch_approximations(b, p.b_noise, p.eps_max)?.sqrt))
        }
        Variant::LossImprovement => {
            let p = params()?;
            let dl = p
                .dl_max
                .ok_or_else(|| Error::invalid("no dl_max supplied"))?;
            Box::new(move |b| loss_improvement_law(b, p.b_noise, dl))
        }
    };
    let points = grid
        .iter()
        .map(|&b| Ok((b, eval(b)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(LawCurve { variant, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    pub(crate) fn pair_model() -> LawInputs {
        LawInputs::new(
            GradientStats::new(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap(),
            HessianSpec::dense(vec![vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap(),
        )
        .unwrap()
    }

    pub(crate) fn uniform32() -> LawInputs {
        LawInputs::new(
            GradientStats::new(vec![0.1; 32], vec![1.0; 32]).unwrap(),
            HessianSpec::uniform(1.0, 0.1, 32).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn general_examples() {
        let g = [0.3, -1.2, 2.0];
        let h = HessianSpec::identity(3);
        assert_abs_diff_eq!(
            optimal_lr_general(&g, &g, &[0.0; 3], &h).unwrap(),
            1.0,
            epsilon = 1e-15
        );

        // d = 1 collapses to e·μ/h
        let (mu, e, hh) = (0.7, 0.4, 2.5);
        let h1 = HessianSpec::diagonal(vec![hh]).unwrap();
        assert_abs_diff_eq!(
            optimal_lr_general(&[mu], &[e], &[1.0 - e * e], &h1).unwrap(),
            e * mu / hh,
            epsilon = 1e-15
        );

        assert_eq!(loss_improvement_general(&g, &g, 0.0).unwrap(), 0.0);
        assert_eq!(
            loss_improvement_general(&[1.0, 0.0], &[0.0, 1.0], 0.7).unwrap(),
            0.0
        );
        let err =
            optimal_lr_general(&[1.0], &[0.0], &[0.0], &HessianSpec::identity(1)).unwrap_err();
        assert!(matches!(err, Error::LawViolation(_)));
    }

    #[test]
    fn pair_model_values() {
        let m = pair_model();
        // numerator 2·erf(1) = 1.68540, denominator 0.57972 + 2.13042
        assert_abs_diff_eq!(
            optimal_lr_sign_exact(&m, 2.0).unwrap(),
            0.62189,
            epsilon = 1e-5
        );
        assert_abs_diff_eq!(
            loss_improvement_sign_exact(&m, 2.0).unwrap(),
            0.524064007,
            epsilon = 1e-8
        );
        assert_abs_diff_eq!(b_noise(&m).unwrap(), PI, epsilon = 1e-14);
        assert_abs_diff_eq!(eps_max(&m).unwrap(), 0.5f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(large_batch_lr(&m).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dl_max(&m).unwrap(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn d1_collapse() {
        let m = LawInputs::new(
            GradientStats::new(vec![1.0], vec![1.0]).unwrap(),
            HessianSpec::identity(1),
        )
        .unwrap();
        assert_abs_diff_eq!(
            optimal_lr_sign_exact(&m, 2.0).unwrap(),
            0.842_700_793,
            epsilon = 1e-9
        );
        let m = LawInputs::new(
            GradientStats::new(vec![0.3], vec![2.0]).unwrap(),
            HessianSpec::diagonal(vec![1.5]).unwrap(),
        )
        .unwrap();
        assert_abs_diff_eq!(large_batch_lr(&m).unwrap(), 0.2, epsilon = 1e-15);
        // no off-diagonal terms: the noise scale is undefined
        assert!(matches!(b_noise(&m), Err(Error::LawViolation(_))));
    }

    #[test]
    fn uniform_noise_scale() {
        let m = uniform32();
        let expected = PI / (2.0 * 0.01 * 0.1 * 31.0);
        assert_abs_diff_eq!(b_noise(&m).unwrap(), expected, epsilon = 1e-10);
        assert_abs_diff_eq!(b_noise(&m).unwrap(), 50.67, epsilon = 5e-3);
        let bn = b_noise(&m).unwrap();
        assert_abs_diff_eq!(
            b_noise(&m.scale_mu(3.0)).unwrap(),
            bn / 9.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn zero_gradient() {
        let m = LawInputs::new(
            GradientStats::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
            HessianSpec::dense(vec![vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(loss_improvement_sign_exact(&m, 4.0).unwrap(), 0.0);
        assert_eq!(optimal_lr_sign_exact(&m, 4.0).unwrap(), 0.0);
        assert!(dl_max(&m).is_err());
        let err = b_noise(&m).unwrap_err();
        match err {
            Error::LawViolation(d) => {
                assert_eq!(d.cross_sum, Some(0.0));
                assert_eq!(d.trace, 2.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn eps_max_scaling() {
        let m = pair_model();
        let e = eps_max(&m).unwrap();
        assert_abs_diff_eq!(
            eps_max(&m.scale_hessian(4.0)).unwrap(),
            e / 4.0,
            epsilon = 1e-14
        );
        assert!(eps_max_lower_bound(&m).unwrap() <= e);
        assert_abs_diff_eq!(
            dl_max(&m.scale_mu(2.0)).unwrap(),
            4.0 * dl_max(&m).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn surge_and_sgd_examples() {
        let (bn, em) = (50.0, 0.7);
        assert_eq!(surge_lr(bn, bn, em).unwrap(), em);
        assert_abs_diff_eq!(
            surge_lr(4.0 * bn, bn, em).unwrap(),
            0.8 * em,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(sgd_lr(bn, bn, em, 1.0).unwrap(), em / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            sgd_lr(bn, bn, em, 0.5).unwrap(),
            em / 2f64.sqrt(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(sgd_lr(1e15, bn, em, 1.0).unwrap(), em, epsilon = 1e-12);
        let sb = small_batch_approximations(bn, bn, em).unwrap();
        assert_eq!((sb.linear, sb.sqrt), (em, 2.0 * em));
        assert_abs_diff_eq!(
            small_batch_approximations(bn / 100.0, bn, em)
                .unwrap()
                .linear,
            em / 100.0,
            epsilon = 1e-15
        );
        let tiny = bn * 1e-8;
        let ratio = small_batch_approximations(tiny, bn, em).unwrap().sqrt
            / surge_lr(tiny, bn, em).unwrap();
        assert_abs_diff_eq!(ratio, 1.0, epsilon = 1e-7);
        assert!(surge_lr(0.0, bn, em).is_err());
        assert!(sgd_lr(1.0, -1.0, em, 1.0).is_err());
        assert!(small_batch_approximations(1.0, bn, 0.0).is_err());
        assert_abs_diff_eq!(
            loss_improvement_law(bn, bn, 3.0).unwrap(),
            1.5,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            loss_improvement_law(1e15, bn, 3.0).unwrap(),
            3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn tradeoff_examples() {
        let t = tradeoff_curve(100.0, 500.0, 41).unwrap();
        assert_eq!(t.b_crit, 5.0);
        let mid = t.points[20];
        assert_abs_diff_eq!(mid.steps, 200.0, epsilon = 1e-10);
        assert_abs_diff_eq!(mid.examples, 1000.0, epsilon = 1e-9);
        for p in &t.points {
            let id = (p.steps / 100.0 - 1.0) * (p.examples / 500.0 - 1.0);
            assert_abs_diff_eq!(id, 1.0, epsilon = 1e-12);
        }
        assert!(tradeoff_curve(0.0, 1.0, 5).is_err());
        assert!(tradeoff_curve(1.0, 1.0, 1).is_err());
    }

    #[test]
    fn exact_curve_shape_on_uniform_model() {
        let m = uniform32();
        let bn = b_noise(&m).unwrap();
        let grid: Vec<f64> = (1..=1024).map(|b| b as f64).collect();
        let c = curve(CurveSource::Inputs(&m), Variant::Exact, &grid).unwrap();
        let (peak, _) = c.argmax().unwrap();
        assert!(peak >= bn / 2.0 && peak <= 2.0 * bn, "peak {peak}");
        // rises to the peak, then falls toward the plateau
        let vals: Vec<f64> = c.points.iter().map(|p| p.1).collect();
        let k = peak as usize - 1;
        assert!(vals[..=k].windows(2).all(|w| w[1] >= w[0]));
        assert!(vals[k..].windows(2).all(|w| w[1] <= w[0]));
        assert!(vals[1023] > large_batch_lr(&m).unwrap());

        let s = curve(
            CurveSource::Inputs(&m),
            Variant::Surge,
            &log_grid(1.0, 1e4, 4001).unwrap(),
        )
        .unwrap();
        let (speak, _) = s.argmax().unwrap();
        assert!((speak / bn - 1.0).abs() < 3e-3);
        let sgd = curve(CurveSource::Inputs(&m), Variant::SgdAlpha(1.0), &grid).unwrap();
        assert!(sgd.points.windows(2).all(|w| w[1].1 > w[0].1));
    }

    #[test]
    fn small_batch_agreement_on_uniform_model() {
        let m = uniform32();
        let p = LawParams::from_inputs(&m).unwrap();
        let mut b = 1.0;
        while b <= p.b_noise {
            let exact = optimal_lr_sign_exact(&m, b).unwrap();
            let surge = surge_lr(b, p.b_noise, p.eps_max).unwrap();
            assert!(
                (exact - surge).abs() / surge <= 0.10,
                "B = {b}: {exact} vs {surge}"
            );
            b += 1.0;
        }
    }

    #[test]
    fn loss_improvement_law_tracks_exact() {
        // worst relative gap over B in [1, B_noise] is 0.0809 at B = 50
        let m = uniform32();
        let p = LawParams::from_inputs(&m).unwrap();
        let mut prev_exact = 0.0;
        let mut prev_gap = 0.0;
        for b in 1..=10_000 {
            let exact = loss_improvement_sign_exact(&m, b as f64).unwrap();
            assert!(exact >= prev_exact * (1.0 - 1e-12));
            prev_exact = exact;
            if (b as f64) <= p.b_noise {
                let law = loss_improvement_law(b as f64, p.b_noise, p.dl_max.unwrap()).unwrap();
                let gap = (exact - law).abs() / law;
                assert!(gap >= prev_gap, "gap shrinks at B = {b}");
                prev_gap = gap;
                if b <= 20 {
                    assert!(gap <= 0.05, "B = {b}: {exact} vs {law}");
                }
            }
        }
        assert_abs_diff_eq!(prev_gap, 0.0809, epsilon = 5e-4);
    }

    #[test]
    fn large_batch_limit() {
        let m = uniform32();
        let bound = m.batch_size_bound().median;
        let exact = optimal_lr_sign_exact(&m, 1e6 * bound).unwrap();
        let lim = large_batch_lr(&m).unwrap();
        assert!((exact - lim).abs() / lim <= 0.01);
    }

    #[test]
    fn curve_rejects_bad_grids_and_sources() {
        let m = pair_model();
        assert!(curve(CurveSource::Inputs(&m), Variant::Surge, &[]).is_err());
        assert!(curve(CurveSource::Inputs(&m), Variant::Surge, &[2.0, 2.0]).is_err());
        assert!(curve(CurveSource::Inputs(&m), Variant::Surge, &[0.0, 2.0]).is_err());
        let p = LawParams {
            b_noise: 10.0,
            eps_max: 1.0,
            dl_max: None,
            large_batch_lr: None,
        };
        assert!(curve(CurveSource::Params(p), Variant::Exact, &[1.0]).is_err());
        assert!(curve(CurveSource::Params(p), Variant::LossImprovement, &[1.0]).is_err());
        assert!(curve(CurveSource::Params(p), Variant::Surge, &[1.0, 10.0]).is_ok());
    }

    #[test]
    fn variant_labels_round_trip() {
        for v in [
            Variant::Exact,
            Variant::Surge,
            Variant::SgdAlpha(1.0),
            Variant::SgdAlpha(0.5),
            Variant::Linear,
            Variant::Sqrt,
            Variant::LargeBatch,
            Variant::LossImprovement,
        ] {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("bogus".parse::<Variant>().is_err());
        assert!("sgd_alpha_-1".parse::<Variant>().is_err());
    }

    fn uniform_ratio_model(snr: f64, a: f64, c: f64, d: usize) -> LawInputs {
        LawInputs::new(
            GradientStats::new(vec![snr; d], vec![1.0; d]).unwrap(),
            HessianSpec::uniform(a, c, d).unwrap(),
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn surge_symmetry(bn in 1.0f64..1e4, em in 1e-4f64..10.0, k in prop::sample::select(vec![2.0, 5.0, 10.0, 100.0])) {
            let up = surge_lr(k * bn, bn, em).unwrap();
            let down = surge_lr(bn / k, bn, em).unwrap();
            prop_assert!((up - down).abs() <= 1e-12 * em);
        }

        #[test]
        fn eps_max_forms_agree(
            mu in prop::collection::vec(0.05f64..2.0, 2..6),
            sigma_scale in 0.2f64..3.0,
            a in 0.5f64..3.0,
            c in 0.01f64..0.4,
        ) {
            let d = mu.len();
            let m = LawInputs::new(
                GradientStats::new(mu, vec![sigma_scale; d]).unwrap(),
                HessianSpec::uniform(a, c, d).unwrap(),
            ).unwrap();
            let e1 = eps_max(&m).unwrap();
            let e2 = eps_max_without_noise_scale(&m).unwrap();
            prop_assert!((e1 - e2).abs() <= 1e-12 * e1.max(1.0));
        }

        #[test]
        fn denominator_has_second_order_form(
            snr in 0.01f64..1.0,
            c in 0.01f64..0.5,
            b in 1.0f64..1e4,
        ) {
            // with equal 𝓔_i = f, ε(B) = β f / (f² + γ)
            let d = 8;
            let m = uniform_ratio_model(snr, 1.0, c, d);
            let f = crate::signstats::e_exact(snr, 1.0, b).unwrap();
            let off = c * (d * (d - 1)) as f64;
            let beta = snr * d as f64 / off;
            let gamma = d as f64 / off;
            let lr = optimal_lr_sign_exact(&m, b).unwrap();
            prop_assert!((lr - beta * f / (f * f + gamma)).abs() <= 1e-12 * lr.max(1e-3));
        }
    }
}
