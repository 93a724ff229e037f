use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Largest dimension for which a dense matrix is materialized.
pub const MAX_DENSE_DIM: usize = 4096;

/// A symmetric Hessian.
///
/// The uniform form `a` on the diagonal and `c` everywhere else evaluates all
/// law sums in O(d) without materializing the matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HessianSpec {
    Dense { matrix: Vec<Vec<f64>> },
    Diagonal { diag: Vec<f64> },
    Uniform { diag: f64, offdiag: f64, dim: usize },
}

impl HessianSpec {
    pub fn dense(matrix: Vec<Vec<f64>>) -> Result<Self> {
        let h = HessianSpec::Dense { matrix };
        h.validate()?;
        Ok(h)
    }

    pub fn diagonal(diag: Vec<f64>) -> Result<Self> {
        let h = HessianSpec::Diagonal { diag };
        h.validate()?;
        Ok(h)
    }

    pub fn uniform(diag: f64, offdiag: f64, dim: usize) -> Result<Self> {
        let h = HessianSpec::Uniform { diag, offdiag, dim };
        h.validate()?;
        Ok(h)
    }

    pub fn identity(dim: usize) -> Self {
        HessianSpec::Uniform {
            diag: 1.0,
            offdiag: 0.0,
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            HessianSpec::Dense { matrix } => matrix.len(),
            HessianSpec::Diagonal { diag } => diag.len(),
            HessianSpec::Uniform { dim, .. } => *dim,
        }
    }

    /// Shape, finiteness, symmetry and positive trace.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::invalid("hessian must have at least one row"));
        }
        match self {
            HessianSpec::Dense { matrix } => {
                if d > MAX_DENSE_DIM {
                    return Err(Error::invalid(format!(
                        "dense hessian of dim {d} exceeds {MAX_DENSE_DIM}"
                    )));
                }
                for row in matrix {
                    check_dim(d, row.len())?;
                    if row.iter().any(|v| !v.is_finite()) {
                        return Err(Error::invalid("hessian entries must be finite"));
                    }
                }
                for i in 0..d {
                    for j in (i + 1)..d {
                        let (a, b) = (matrix[i][j], matrix[j][i]);
                        let scale = a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
                        if (a - b).abs() > 1e-12 * scale {
                            return Err(Error::invalid(format!(
                                "hessian is not symmetric at ({i}, {j}): {a} vs {b}"
                            )));
                        }
                    }
                }
            }
            HessianSpec::Diagonal { diag } => {
                if diag.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("hessian entries must be finite"));
                }
            }
            HessianSpec::Uniform { diag, offdiag, .. } => {
                if !diag.is_finite() || !offdiag.is_finite() {
                    return Err(Error::invalid("hessian entries must be finite"));
                }
            }
        }
        let tr = self.trace();
        if tr <= 0.0 {
            return Err(Error::invalid(format!(
                "hessian trace {tr} must be positive"
            )));
        }
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            HessianSpec::Dense { matrix } => matrix[i][j],
            HessianSpec::Diagonal { diag } => {
                if i == j {
                    diag[i]
                } else {
                    0.0
                }
            }
            HessianSpec::Uniform { diag, offdiag, .. } => {
                if i == j {
                    *diag
                } else {
                    *offdiag
                }
            }
        }
    }

    pub fn diag_entry(&self, i: usize) -> f64 {
        self.get(i, i)
    }

    pub fn trace(&self) -> f64 {
        match self {
            HessianSpec::Dense { matrix } => (0..matrix.len()).map(|i| matrix[i][i]).sum(),
            HessianSpec::Diagonal { diag } => diag.iter().sum(),
            HessianSpec::Uniform { diag, dim, .. } => diag * *dim as f64,
        }
    }

    /// Σ_i H_ii w_i
    pub fn weighted_trace(&self, w: &[f64]) -> Result<f64> {
        check_dim(self.dim(), w.len())?;
        Ok(match self {
            HessianSpec::Uniform { diag, .. } => diag * w.iter().sum::<f64>(),
            _ => w
                .iter()
                .enumerate()
                .map(|(i, wi)| self.diag_entry(i) * wi)
                .sum(),
        })
    }

    pub fn mat_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(match self {
            HessianSpec::Dense { matrix } => matrix
                .iter()
                .map(|row| row.iter().zip(x).map(|(h, v)| h * v).sum())
                .collect(),
            HessianSpec::Diagonal { diag } => diag.iter().zip(x).map(|(h, v)| h * v).collect(),
            HessianSpec::Uniform { diag, offdiag, .. } => {
                let total: f64 = x.iter().sum();
                x.iter()
                    .map(|v| (diag - offdiag) * v + offdiag * total)
                    .collect()
            }
        })
    }

    /// xᵀ H x
    pub fn quad_form(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(match self {
            HessianSpec::Uniform { diag, offdiag, .. } => {
                let total: f64 = x.iter().sum();
                let sq: f64 = x.iter().map(|v| v * v).sum();
                (diag - offdiag) * sq + offdiag * total * total
            }
            _ => self.mat_vec(x)?.iter().zip(x).map(|(hx, v)| hx * v).sum(),
        })
    }

    /// Σ_{i≠j} x_i x_j H_ij
    pub fn off_diagonal_form(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(match self {
            HessianSpec::Diagonal { .. } => 0.0,
            HessianSpec::Uniform { offdiag, .. } => {
                let total: f64 = x.iter().sum();
                let sq: f64 = x.iter().map(|v| v * v).sum();
                offdiag * (total * total - sq)
            }
            HessianSpec::Dense { matrix } => {
                let mut s = 0.0;
                for (i, row) in matrix.iter().enumerate() {
                    for (j, h) in row.iter().enumerate() {
                        if i != j {
                            s += x[i] * x[j] * h;
                        }
                    }
                }
                s
            }
        })
    }

    pub fn to_dense(&self) -> Result<Vec<Vec<f64>>> {
        let d = self.dim();
        if d > MAX_DENSE_DIM {
            return Err(Error::invalid(format!("cannot materialize dim {d}")));
        }
        Ok((0..d)
            .map(|i| (0..d).map(|j| self.get(i, j)).collect())
            .collect())
    }

    /// Solves H x = b.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), b.len())?;
        let singular = || Error::invalid("hessian is singular");
        match self {
            HessianSpec::Diagonal { diag } => diag
                .iter()
                .zip(b)
                .map(|(h, v)| {
                    if *h == 0.0 {
                        Err(singular())
                    } else {
                        Ok(v / h)
                    }
                })
                .collect(),
            HessianSpec::Uniform { diag, offdiag, dim } => {
                // H = (a − c) I + c 11ᵀ; Sherman–Morrison
                let base = diag - offdiag;
                let denom = base + offdiag * *dim as f64;
                if base == 0.0 || denom == 0.0 {
                    return Err(singular());
                }
                let total: f64 = b.iter().sum();
                let shift = offdiag * total / (base * denom);
                Ok(b.iter().map(|v| v / base - shift).collect())
            }
            HessianSpec::Dense { matrix } => {
                let d = matrix.len();
                let mut a: Vec<Vec<f64>> = matrix
                    .iter()
                    .zip(b)
                    .map(|(row, v)| {
                        let mut r = row.clone();
                        r.push(*v);
                        r
                    })
                    .collect();
                for col in 0..d {
                    let pivot = (col..d)
                        .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
                        .unwrap();
                    if a[pivot][col].abs() < 1e-300 {
                        return Err(singular());
                    }
                    a.swap(col, pivot);
                    for row in (col + 1)..d {
                        let f = a[row][col] / a[col][col];
                        if f != 0.0 {
                            for k in col..=d {
                                a[row][k] -= f * a[col][k];
                            }
                        }
                    }
                }
                let mut x = vec![0.0; d];
                for row in (0..d).rev() {
                    let s: f64 = ((row + 1)..d).map(|k| a[row][k] * x[k]).sum();
                    x[row] = (a[row][d] - s) / a[row][row];
                }
                Ok(x)
            }
        }
    }

    pub fn scaled(&self, t: f64) -> Self {
        match self {
            HessianSpec::Dense { matrix } => HessianSpec::Dense {
                matrix: matrix
                    .iter()
                    .map(|r| r.iter().map(|v| v * t).collect())
                    .collect(),
            },
            HessianSpec::Diagonal { diag } => HessianSpec::Diagonal {
                diag: diag.iter().map(|v| v * t).collect(),
            },
            HessianSpec::Uniform { diag, offdiag, dim } => HessianSpec::Uniform {
                diag: diag * t,
                offdiag: offdiag * t,
                dim: *dim,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pair() -> HessianSpec {
        HessianSpec::dense(vec![vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap()
    }

    #[test]
    fn uniform_matches_dense() {
        let u = HessianSpec::uniform(1.0, 0.1, 6).unwrap();
        let d = HessianSpec::dense(u.to_dense().unwrap()).unwrap();
        let x = [0.3, -1.0, 2.0, 0.5, 0.0, 1.5];
        assert_abs_diff_eq!(u.trace(), d.trace(), epsilon = 1e-12);
        assert_abs_diff_eq!(
            u.quad_form(&x).unwrap(),
            d.quad_form(&x).unwrap(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            u.off_diagonal_form(&x).unwrap(),
            d.off_diagonal_form(&x).unwrap(),
            epsilon = 1e-12
        );
        for (a, b) in u.mat_vec(&x).unwrap().iter().zip(d.mat_vec(&x).unwrap()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        for (a, b) in u.solve(&x).unwrap().iter().zip(d.solve(&x).unwrap()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn solve_inverts() {
        let h = pair();
        let x = h.solve(&[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(x[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], 2.0 / 3.0, epsilon = 1e-15);
        assert!(HessianSpec::diagonal(vec![1.0, 0.0])
            .unwrap()
            .solve(&[1.0, 1.0])
            .is_err());
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(HessianSpec::dense(vec![vec![1.0, 0.2], vec![0.3, 1.0]]).is_err());
        assert!(HessianSpec::dense(vec![vec![1.0, 0.2]]).is_err());
        assert!(HessianSpec::diagonal(vec![-1.0, 0.5]).is_err());
        assert!(HessianSpec::uniform(0.0, 1.0, 3).is_err());
        assert!(HessianSpec::diagonal(vec![]).is_err());
    }

    #[test]
    fn json_shape() {
        let h: HessianSpec =
            serde_json::from_str(r#"{"kind":"uniform","diag":1.0,"offdiag":0.1,"dim":32}"#)
                .unwrap();
        assert_eq!(h.dim(), 32);
        assert_abs_diff_eq!(h.trace(), 32.0);
    }
}
