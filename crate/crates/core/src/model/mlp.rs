//! One-hidden-layer tanh classifier on a Gaussian-blob dataset.
//!
//! Parameters are flattened as `[W1 (hidden×input), b1, W2 (classes×hidden), b2]`,
//! row-major. Gradients are computed sample by sample with exact backprop.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{InitSpec, Workload};
use crate::error::{check_dim, Error, Result};
use crate::rng::{seeded, StreamRng};

/// Parameter budget for the desk-scale network.
pub const MAX_PARAMS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobSpec {
    pub n_samples: usize,
    pub n_classes: usize,
    pub input_dim: usize,
    pub blob_std: f64,
    /// Radius of the circle (in the first two input dims) the centers sit on.
    pub center_radius: f64,
    /// Explicit centers; overrides `center_radius` when present.
    pub centers: Option<Vec<Vec<f64>>>,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        BlobSpec {
            n_samples: 2000,
            n_classes: 4,
            input_dim: 2,
            blob_std: 0.5,
            center_radius: 1.5,
            centers: None,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl BlobSpec {
    pub fn centers(&self) -> Vec<Vec<f64>> {
        if let Some(c) = &self.centers {
            return c.clone();
        }
        (0..self.n_classes)
            .map(|k| {
                let angle = std::f64::consts::TAU * k as f64 / self.n_classes as f64;
                let mut c = vec![0.0; self.input_dim];
                c[0] = self.center_radius * angle.cos();
                if self.input_dim > 1 {
                    c[1] = self.center_radius * angle.sin();
                }
                c
            })
            .collect()
    }

    /// Pure function of the spec, including its seed.
    pub fn generate(&self) -> Result<Dataset> {
        if self.n_samples == 0 || self.n_classes < 2 || self.input_dim == 0 {
            return Err(Error::invalid(
                "blob dataset needs samples, at least two classes and one input dim",
            ));
        }
        if !(self.blob_std >= 0.0 && self.blob_std.is_finite()) {
            return Err(Error::invalid("blob_std must be nonnegative"));
        }
        let centers = self.centers();
        check_dim(self.n_classes, centers.len())?;
        for c in &centers {
            check_dim(self.input_dim, c.len())?;
        }
        let mut rng = seeded(self.seed);
        let mut inputs = Vec::with_capacity(self.n_samples);
        let mut labels = Vec::with_capacity(self.n_samples);
        for i in 0..self.n_samples {
            let k = i % self.n_classes;
            let x = centers[k]
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c + self.blob_std * z
                })
                .collect();
            inputs.push(x);
            labels.push(k);
        }
        Ok(Dataset {
            inputs,
            labels,
            n_classes: self.n_classes,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub hidden: usize,
    #[serde(default)]
    pub dataset: BlobSpec,
}

#[derive(Debug, Clone)]
pub struct MlpWorkload {
    input: usize,
    hidden: usize,
    output: usize,
    data: Dataset,
}

struct Forward {
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

impl MlpWorkload {
    pub fn new(spec: &MlpSpec) -> Result<Self> {
        let data = spec.dataset.generate()?;
        let w = MlpWorkload {
            input: spec.dataset.input_dim,
            hidden: spec.hidden,
            output: spec.dataset.n_classes,
            data,
        };
        if w.hidden == 0 {
            return Err(Error::invalid("hidden width must be positive"));
        }
        if w.dim() > MAX_PARAMS {
            return Err(Error::invalid(format!(
                "{} parameters exceeds the {MAX_PARAMS} budget",
                w.dim()
            )));
        }
        Ok(w)
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn widths(&self) -> (usize, usize, usize) {
        (self.input, self.hidden, self.output)
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let w1 = self.hidden * self.input;
        let b1 = w1 + self.hidden;
        let w2 = b1 + self.output * self.hidden;
        (w1, b1, w2)
    }

    fn forward(&self, theta: &[f64], x: &[f64]) -> Forward {
        let (o_b1, o_w2, o_b2) = self.offsets();
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|h| {
                let row = &theta[h * self.input..(h + 1) * self.input];
                let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + theta[o_b1 + h];
                z.tanh()
            })
            .collect();
        let logits: Vec<f64> = (0..self.output)
            .map(|k| {
                let row = &theta[o_w2 + k * self.hidden..o_w2 + (k + 1) * self.hidden];
                row.iter().zip(&hidden).map(|(w, a)| w * a).sum::<f64>() + theta[o_b2 + k]
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Forward {
            hidden,
            probs: exps.into_iter().map(|e| e / total).collect(),
        }
    }

    fn sample_loss(&self, theta: &[f64], idx: usize) -> f64 {
        let f = self.forward(theta, &self.data.inputs[idx]);
        -f.probs[self.data.labels[idx]].max(f64::MIN_POSITIVE).ln()
    }

    /// Gradient of the cross-entropy of sample `idx`, accumulated into `out`
    /// with weight `w`.
    fn accumulate_sample_gradient(&self, theta: &[f64], idx: usize, w: f64, out: &mut [f64]) {
        let x = &self.data.inputs[idx];
        let label = self.data.labels[idx];
        let f = self.forward(theta, x);
        let (o_b1, o_w2, o_b2) = self.offsets();

        // dL/dlogits = p − onehot
        let dlogits: Vec<f64> = f
            .probs
            .iter()
            .enumerate()
            .map(|(k, p)| if k == label { p - 1.0 } else { *p })
            .collect();
        let mut dhidden = vec![0.0; self.hidden];
        for (k, dl) in dlogits.iter().enumerate() {
            out[o_b2 + k] += w * dl;
            let row = o_w2 + k * self.hidden;
            for h in 0..self.hidden {
                out[row + h] += w * dl * f.hidden[h];
                dhidden[h] += dl * theta[row + h];
            }
        }
        for h in 0..self.hidden {
            let dz = dhidden[h] * (1.0 - f.hidden[h] * f.hidden[h]);
            out[o_b1 + h] += w * dz;
            let row = h * self.input;
            for (i, xi) in x.iter().enumerate() {
                out[row + i] += w * dz * xi;
            }
        }
    }

    pub fn per_sample_gradient(&self, theta: &[f64], idx: usize) -> Result<Vec<f64>> {
        check_dim(self.dim(), theta.len())?;
        if idx >= self.data.inputs.len() {
            return Err(Error::invalid(format!("sample index {idx} out of range")));
        }
        let mut g = vec![0.0; self.dim()];
        self.accumulate_sample_gradient(theta, idx, 1.0, &mut g);
        Ok(g)
    }

    /// Seeded Gaussian weights with variance 1/fan_in, zero biases.
    pub fn scaled_gaussian_init(&self, rng: &mut StreamRng) -> Vec<f64> {
        let (o_b1, o_w2, o_b2) = self.offsets();
        let mut theta = vec![0.0; self.dim()];
        let s1 = 1.0 / (self.input as f64).sqrt();
        let s2 = 1.0 / (self.hidden as f64).sqrt();
        for v in &mut theta[..o_b1] {
            let z: f64 = StandardNormal.sample(rng);
            *v = s1 * z;
        }
        for v in &mut theta[o_w2..o_b2] {
            let z: f64 = StandardNormal.sample(rng);
            *v = s2 * z;
        }
        theta
    }
}

impl Workload for MlpWorkload {
    fn dim(&self) -> usize {
        self.hidden * self.input + self.hidden + self.output * self.hidden + self.output
    }

    fn loss(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim(), theta.len())?;
        let n = self.data.inputs.len();
        Ok((0..n).map(|i| self.sample_loss(theta, i)).sum::<f64>() / n as f64)
    }

    fn true_gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), theta.len())?;
        let n = self.data.inputs.len();
        let mut g = vec![0.0; self.dim()];
        for i in 0..n {
            self.accumulate_sample_gradient(theta, i, 1.0 / n as f64, &mut g);
        }
        Ok(g)
    }

    fn sample_gradient(&self, theta: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>> {
        let idx = rng.random_range(0..self.data.inputs.len());
        self.per_sample_gradient(theta, idx)
    }

    /// Samples are drawn with replacement.
    fn sample_batch_gradient(
        &self,
        theta: &[f64],
        batch: usize,
        rng: &mut StreamRng,
    ) -> Result<Vec<f64>> {
        check_dim(self.dim(), theta.len())?;
        if batch == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        let n = self.data.inputs.len();
        let mut g = vec![0.0; self.dim()];
        let w = 1.0 / batch as f64;
        for _ in 0..batch {
            let idx = rng.random_range(0..n);
            self.accumulate_sample_gradient(theta, idx, w, &mut g);
        }
        Ok(g)
    }

    fn initial_theta(
        &self,
        init: &InitSpec,
        _target_loss: f64,
        rng: &mut StreamRng,
    ) -> Result<Vec<f64>> {
        match init {
            InitSpec::Point { theta } => {
                check_dim(self.dim(), theta.len())?;
                Ok(theta.clone())
            }
            InitSpec::Gaussian { .. } => Ok(self.scaled_gaussian_init(rng)),
            other => Err(Error::invalid(format!(
                "init {other:?} applies to quadratic workloads only"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> MlpWorkload {
        MlpWorkload::new(&MlpSpec {
            hidden: 5,
            dataset: BlobSpec {
                n_samples: 40,
                n_classes: 3,
                ..BlobSpec::default()
            },
        })
        .unwrap()
    }

    #[test]
    fn dataset_is_pure_function_of_seed() {
        let spec = BlobSpec::default();
        assert_eq!(spec.generate().unwrap(), spec.generate().unwrap());
        let other = BlobSpec {
            seed: 8,
            ..BlobSpec::default()
        };
        assert_ne!(spec.generate().unwrap(), other.generate().unwrap());
    }

    #[test]
    fn parameter_layout() {
        let w = small();
        assert_eq!(w.dim(), 5 * 2 + 5 + 3 * 5 + 3);
        assert!(MlpWorkload::new(&MlpSpec {
            hidden: 5000,
            dataset: BlobSpec::default()
        })
        .is_err());
    }

    #[test]
    fn full_gradient_is_mean_of_per_sample() {
        let w = small();
        let theta = w.scaled_gaussian_init(&mut seeded(1));
        let full = w.true_gradient(&theta).unwrap();
        let mut mean = vec![0.0; w.dim()];
        for i in 0..40 {
            for (m, g) in mean
                .iter_mut()
                .zip(w.per_sample_gradient(&theta, i).unwrap())
            {
                *m += g / 40.0;
            }
        }
        for (a, b) in full.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_starts_near_log_classes() {
        let w = small();
        let theta = vec![0.0; w.dim()];
        assert!((w.loss(&theta).unwrap() - (3.0f64).ln()).abs() < 1e-12);
    }
}
