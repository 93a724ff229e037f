use rand_distr::{Distribution, StandardNormal};

use super::{InitSpec, Workload};
use crate::error::{check_dim, Error, Result};
use crate::model::hessian::HessianSpec;
use crate::rng::StreamRng;
use crate::signstats::GradientStats;

/// L(θ) = ½(θ−θ*)ᵀH(θ−θ*) with per-sample gradients H(θ−θ*) + η,
/// η ~ Normal(0, diag(σ²)).
///
/// σ is constant while μ = H(θ−θ*) shrinks during training, so the gradient
/// noise scale grows as the loss falls.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticWorkload {
    hessian: HessianSpec,
    theta_star: Vec<f64>,
    noise_sigma: Vec<f64>,
}

impl QuadraticWorkload {
    /// `noise_sigma` may contain zeros; a fully zero vector gives a
    /// deterministic workload.
    pub fn new(hessian: HessianSpec, theta_star: Vec<f64>, noise_sigma: Vec<f64>) -> Result<Self> {
        hessian.validate()?;
        let d = hessian.dim();
        check_dim(d, theta_star.len())?;
        check_dim(d, noise_sigma.len())?;
        if theta_star.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("theta_star must be finite"));
        }
        if noise_sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::invalid("noise_sigma must be nonnegative and finite"));
        }
        Ok(QuadraticWorkload {
            hessian,
            theta_star,
            noise_sigma,
        })
    }

    pub fn centered(hessian: HessianSpec, noise_sigma: Vec<f64>) -> Result<Self> {
        let d = hessian.dim();
        Self::new(hessian, vec![0.0; d], noise_sigma)
    }

    pub fn hessian(&self) -> &HessianSpec {
        &self.hessian
    }

    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    pub fn noise_sigma(&self) -> &[f64] {
        &self.noise_sigma
    }

    fn offset(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), theta.len())?;
        Ok(theta
            .iter()
            .zip(&self.theta_star)
            .map(|(t, s)| t - s)
            .collect())
    }

    /// The point θ* + H⁻¹μ at which the true gradient equals `mu`.
    pub fn theta_for_gradient(&self, mu: &[f64]) -> Result<Vec<f64>> {
        let delta = self.hessian.solve(mu)?;
        Ok(delta
            .iter()
            .zip(&self.theta_star)
            .map(|(d, s)| s + d)
            .collect())
    }

    /// Exact gradient statistics at θ; fails if any σ_i is zero.
    pub fn gradient_stats(&self, theta: &[f64]) -> Result<GradientStats> {
        GradientStats::new(self.true_gradient(theta)?, self.noise_sigma.clone())
    }

    fn point_at_loss(&self, direction: &[f64], loss: f64) -> Result<Vec<f64>> {
        let curvature = self.hessian.quad_form(direction)?;
        if !(curvature > 0.0) {
            return Err(Error::invalid("init direction has no curvature"));
        }
        let s = (2.0 * loss / curvature).sqrt();
        Ok(direction
            .iter()
            .zip(&self.theta_star)
            .map(|(u, t)| t + s * u)
            .collect())
    }
}

impl Workload for QuadraticWorkload {
    fn dim(&self) -> usize {
        self.hessian.dim()
    }

    fn loss(&self, theta: &[f64]) -> Result<f64> {
        let delta = self.offset(theta)?;
        Ok(0.5 * self.hessian.quad_form(&delta)?)
    }

    fn true_gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.hessian.mat_vec(&self.offset(theta)?)
    }

    fn sample_gradient(&self, theta: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>> {
        self.sample_batch_gradient(theta, 1, rng)
    }

    /// The mean of `batch` per-sample gradients is exactly
    /// Normal(μ, diag(σ²)/B), so it is drawn in one shot.
    fn sample_batch_gradient(
        &self,
        theta: &[f64],
        batch: usize,
        rng: &mut StreamRng,
    ) -> Result<Vec<f64>> {
        if batch == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        let mut g = self.true_gradient(theta)?;
        let scale = 1.0 / (batch as f64).sqrt();
        for (gi, s) in g.iter_mut().zip(&self.noise_sigma) {
            let z: f64 = StandardNormal.sample(rng);
            *gi += s * scale * z;
        }
        Ok(g)
    }

    fn initial_theta(
        &self,
        init: &InitSpec,
        target_loss: f64,
        rng: &mut StreamRng,
    ) -> Result<Vec<f64>> {
        let d = self.dim();
        match init {
            InitSpec::Point { theta } => {
                check_dim(d, theta.len())?;
                Ok(theta.clone())
            }
            InitSpec::Gaussian { loss_ratio } => {
                let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                self.point_at_loss(&dir, loss_ratio * target_loss)
            }
            InitSpec::Aligned { loss_ratio } => {
                self.point_at_loss(&vec![1.0; d], loss_ratio * target_loss)
            }
            InitSpec::Direction {
                direction,
                loss_ratio,
            } => {
                check_dim(d, direction.len())?;
                self.point_at_loss(direction, loss_ratio * target_loss)
            }
            InitSpec::AtGradient { mu } => self.theta_for_gradient(&mu.expand(d)?),
        }
    }

    fn exact_stats(&self, theta: &[f64]) -> Option<GradientStats> {
        self.gradient_stats(theta).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use approx::assert_abs_diff_eq;

    #[test]
    fn loss_and_gradient_examples() {
        let q = QuadraticWorkload::centered(HessianSpec::identity(1), vec![1.0]).unwrap();
        assert_eq!(q.loss(&[0.0]).unwrap(), 0.0);
        assert_eq!(q.loss(&[1.0]).unwrap(), 0.5);

        let q = QuadraticWorkload::centered(HessianSpec::diagonal(vec![2.0]).unwrap(), vec![0.0])
            .unwrap();
        assert_eq!(q.true_gradient(&[3.0]).unwrap(), vec![6.0]);

        let h = HessianSpec::uniform(1.0, 0.1, 32).unwrap();
        let star: Vec<f64> = (0..32).map(|i| i as f64 * 0.1).collect();
        let q = QuadraticWorkload::new(h, star.clone(), vec![1.0; 32]).unwrap();
        let mut theta = star.clone();
        theta[0] += 1.0;
        assert_abs_diff_eq!(q.loss(&theta).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(q.loss(&star).unwrap(), 0.0);
        assert!(q.true_gradient(&star).unwrap().iter().all(|g| *g == 0.0));
        assert!(q.loss(&[1.0]).is_err());
    }

    #[test]
    fn noiseless_batches_are_exact() {
        let h = HessianSpec::dense(vec![vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let q = QuadraticWorkload::centered(h, vec![0.0, 0.0]).unwrap();
        let theta = [0.7, -1.1];
        let g = q.true_gradient(&theta).unwrap();
        let mut rng = seeded(3);
        for b in [1, 4, 100] {
            assert_eq!(q.sample_batch_gradient(&theta, b, &mut rng).unwrap(), g);
        }
        assert!(q.sample_batch_gradient(&theta, 0, &mut rng).is_err());
    }

    #[test]
    fn init_hits_requested_loss() {
        let h = HessianSpec::uniform(1.0, 0.1, 32).unwrap();
        let q = QuadraticWorkload::centered(h, vec![1.0; 32]).unwrap();
        let mut rng = seeded(9);
        for init in [
            InitSpec::Gaussian { loss_ratio: 10.0 },
            InitSpec::Aligned { loss_ratio: 10.0 },
        ] {
            let theta = q.initial_theta(&init, 0.04, &mut rng).unwrap();
            assert_abs_diff_eq!(q.loss(&theta).unwrap(), 0.4, epsilon = 1e-12);
        }
    }

    #[test]
    fn theta_for_gradient_round_trips() {
        let h = HessianSpec::dense(vec![vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let q = QuadraticWorkload::centered(h, vec![1.0, 1.0]).unwrap();
        let theta = q.theta_for_gradient(&[1.0, 1.0]).unwrap();
        let g = q.true_gradient(&theta).unwrap();
        assert_abs_diff_eq!(g[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g[1], 1.0, epsilon = 1e-14);
        let init = InitSpec::AtGradient {
            mu: crate::model::PerCoordinate::Scalar(1.0),
        };
        assert_eq!(q.initial_theta(&init, 1.0, &mut seeded(0)).unwrap(), theta);
    }
}
