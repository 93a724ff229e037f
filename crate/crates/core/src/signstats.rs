//! Moments of the sign of a Gaussian mini-batch gradient.
//!
//! If a per-sample gradient coordinate is Normal(μ, σ²), the mean of `B` such
//! samples is Normal(μ, σ²/B), and the sign of that mean has expectation
//! `erf(√(B/2)·μ/σ)` and variance one minus its square. Coordinates are
//! treated as independent, so the covariance of the sign vector is diagonal.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Per-coordinate mean and per-sample standard deviation of the gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GradientStats {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let stats = GradientStats { mu, sigma };
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.is_empty() {
            return Err(Error::invalid(
                "gradient stats must have at least one coordinate",
            ));
        }
        check_dim(self.mu.len(), self.sigma.len())?;
        if let Some(i) = self.mu.iter().position(|m| !m.is_finite()) {
            return Err(Error::invalid(format!("mu[{i}] is not finite")));
        }
        if let Some(i) = self.sigma.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!(
                "sigma[{i}] = {} must be positive and finite",
                self.sigma[i]
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Signal-to-noise ratio μ_i/σ_i per coordinate.
    pub fn snr(&self) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.sigma)
            .map(|(m, s)| m / s)
            .collect()
    }

    /// Scale every μ_i by `t`.
    pub fn scale_mu(&self, t: f64) -> Self {
        GradientStats {
            mu: self.mu.iter().map(|m| m * t).collect(),
            sigma: self.sigma.clone(),
        }
    }
}

/// Which form of 𝓔_i(B) a law evaluation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignModel {
    /// The erf form; the reference.
    #[default]
    Exact,
    /// The sigmoid-like closed form used for the analytic simplifications.
    Approx,
}

// Rational approximations from FreeBSD msun s_erf.c:
// Copyright (C) 1993 by Sun Microsystems, Inc. All rights reserved.
// Developed at SunPro, a Sun Microsystems, Inc. business.
// Permission to use, copy, modify, and distribute this software is freely
// granted, provided that this notice is preserved.
const ERX: f64 = 8.45062911510467529297e-01;
const EFX: f64 = 1.28379167095512586316e-01;
const PP: [f64; 5] = [
    1.28379167095512558561e-01,
    -3.25042107247001499370e-01,
    -2.84817495755985104766e-02,
    -5.77027029648944159157e-03,
    -2.37630166566501626084e-05,
];
const QQ: [f64; 5] = [
    3.97917223959155352819e-01,
    6.50222499887672944485e-02,
    5.08130628187576562776e-03,
    1.32494738004321644526e-04,
    -3.96022827877536812320e-06,
];
const PA: [f64; 7] = [
    -2.36211856075265944077e-03,
    4.14856118683748331666e-01,
    -3.72207876035701323847e-01,
    3.18346619901161753674e-01,
    -1.10894694282396677476e-01,
    3.54783043256182359371e-02,
    -2.16637559486879084300e-03,
];
const QA: [f64; 6] = [
    1.06420880400844228286e-01,
    5.40397917702171048937e-01,
    7.18286544141962662868e-02,
    1.26171219808761642112e-01,
    1.36370839120290507362e-02,
    1.19844998467991074170e-02,
];
const RA: [f64; 8] = [
    -9.86494403484714822705e-03,
    -6.93858572707181764372e-01,
    -1.05586262253232909814e+01,
    -6.23753324503260060396e+01,
    -1.62396669462573470355e+02,
    -1.84605092906711035994e+02,
    -8.12874355063065934246e+01,
    -9.81432934416914548592e+00,
];
const SA: [f64; 8] = [
    1.96512716674392571292e+01,
    1.37657754143519042600e+02,
    4.34565877475229228821e+02,
    6.45387271733267880336e+02,
    4.29008140027567833386e+02,
    1.08635005541779435134e+02,
    6.57024977031928170135e+00,
    -6.04244152148580987438e-02,
];
const RB: [f64; 7] = [
    -9.86494292470009928597e-03,
    -7.99283237680523006574e-01,
    -1.77579549177547519889e+01,
    -1.60636384855821916062e+02,
    -6.37566443368389627722e+02,
    -1.02509513161107724954e+03,
    -4.83519191608651397019e+02,
];
const SB: [f64; 7] = [
    3.03380607434824582924e+01,
    3.25792512996573918826e+02,
    1.53672958608443695994e+03,
    3.19985821950859553908e+03,
    2.55305040643316442583e+03,
    4.74528541206955367215e+02,
    -2.24409524465858183362e+01,
];

/// Above this magnitude erf is ±1 to double precision.
const ERF_SATURATION: f64 = 6.0;

fn horner(coeffs: &[f64], z: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * z + c)
}

/// `1 + z·(c0 + z·(c1 + …))`
fn horner1(coeffs: &[f64], z: f64) -> f64 {
    1.0 + z * horner(coeffs, z)
}

fn erf_unchecked(x: f64) -> f64 {
    let ax = x.abs();
    let magnitude = if ax < 0.84375 {
        if ax < 3.725_290_298_461_914e-9 {
            ax + EFX * ax
        } else {
            let z = ax * ax;
            ax + ax * (horner(&PP, z) / horner1(&QQ, z))
        }
    } else if ax < 1.25 {
        let s = ax - 1.0;
        ERX + horner(&PA, s) / horner1(&QA, s)
    } else if ax >= ERF_SATURATION {
        1.0
    } else {
        let s = 1.0 / (ax * ax);
        let (r, q) = if ax < 1.0 / 0.35 {
            (horner(&RA, s), horner1(&SA, s))
        } else {
            (horner(&RB, s), horner1(&SB, s))
        };
        // split ax so that exp(-ax²) keeps its low-order bits
        let hi = f64::from_bits(ax.to_bits() & 0xffff_ffff_0000_0000);
        let e = (-hi * hi - 0.5625).exp() * ((hi - ax) * (hi + ax) + r / q).exp();
        1.0 - e / ax
    };
    magnitude.copysign(x)
}

/// The Gauss error function, accurate to about one ulp.
pub fn erf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::invalid(format!("erf of non-finite {x}")));
    }
    Ok(erf_unchecked(x))
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("sigma = {sigma} must be positive")))
    }
}

fn check_batch(batch: f64) -> Result<()> {
    if batch > 0.0 && batch.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "batch size {batch} must be positive"
        )))
    }
}

/// E[sign(x)] for x ~ Normal(μ, σ²).
pub fn sign_mean(mu: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    erf(mu / (std::f64::consts::SQRT_2 * sigma))
}

/// var[sign(x)] for x ~ Normal(μ, σ²).
pub fn sign_variance(mu: f64, sigma: f64) -> Result<f64> {
    let m = sign_mean(mu, sigma)?;
    Ok((1.0 - m * m).clamp(0.0, 1.0))
}

/// 𝓔_i(B) = erf(√(B/2)·μ/σ), the expected sign of a batch-mean gradient.
///
/// `batch` is real-valued so that law curves can be evaluated smoothly; the
/// harness only ever passes integers.
pub fn e_exact(mu: f64, sigma: f64, batch: f64) -> Result<f64> {
    check_sigma(sigma)?;
    check_batch(batch)?;
    if mu == 0.0 {
        return Ok(0.0);
    }
    let arg = (batch / 2.0).sqrt() * mu / sigma;
    if arg.abs() > ERF_SATURATION || !arg.is_finite() {
        return Ok(1.0f64.copysign(mu));
    }
    Ok(erf_unchecked(arg))
}

/// The closed form (μ/σ)/√(π/(2B) + (μ/σ)²).
pub fn e_approx(mu: f64, sigma: f64, batch: f64) -> Result<f64> {
    check_sigma(sigma)?;
    check_batch(batch)?;
    if mu == 0.0 {
        return Ok(0.0);
    }
    let r = mu / sigma;
    if !r.is_finite() || r.abs() > 1e150 {
        return Ok(1.0f64.copysign(mu));
    }
    Ok(r / (std::f64::consts::PI / (2.0 * batch) + r * r).sqrt())
}

pub fn e_value(model: SignModel, mu: f64, sigma: f64, batch: f64) -> Result<f64> {
    match model {
        SignModel::Exact => e_exact(mu, sigma, batch),
        SignModel::Approx => e_approx(mu, sigma, batch),
    }
}

/// Mean and diagonal covariance of sign(G_est) at batch size `batch`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignMoments {
    pub mean: Vec<f64>,
    pub var_diag: Vec<f64>,
}

pub fn sign_batch_moments(stats: &GradientStats, batch: f64) -> Result<SignMoments> {
    sign_batch_moments_with(stats, batch, SignModel::Exact)
}

pub fn sign_batch_moments_with(
    stats: &GradientStats,
    batch: f64,
    model: SignModel,
) -> Result<SignMoments> {
    stats.validate()?;
    let mean = stats
        .mu
        .iter()
        .zip(&stats.sigma)
        .map(|(&m, &s)| e_value(model, m, s, batch))
        .collect::<Result<Vec<_>>>()?;
    let var_diag = mean.iter().map(|e| (1.0 - e * e).max(0.0)).collect();
    Ok(SignMoments { mean, var_diag })
}
