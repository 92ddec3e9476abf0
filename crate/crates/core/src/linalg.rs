//! Dense linear algebra for symmetric positive-definite matrices.
//!
//! Everything here is sized for feature dimensions of at most a few hundred:
//! matrices are dense and row-major, and quadratic forms go through the
//! cached Cholesky factor rather than an explicit inverse.

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a `dim × dim` row-major matrix.
///
/// Only the lower triangle of `a` is read. The returned factor has an exact
/// zero upper triangle.
pub fn cholesky(dim: usize, a: &[f64]) -> Result<Vec<f64>> {
    if a.len() != dim * dim {
        return Err(Error::DimensionMismatch {
            expected: dim * dim,
            found: a.len(),
        });
    }
    let mut l = vec![0.0; dim * dim];
    for j in 0..dim {
        let mut diag = a[j * dim + j];
        for k in 0..j {
            diag -= l[j * dim + k] * l[j * dim + k];
        }
        if diag.is_nan() || diag <= 0.0 {
            return Err(Error::NotPositiveDefinite {
                pivot: j,
                value: diag,
            });
        }
        let ljj = diag.sqrt();
        l[j * dim + j] = ljj;
        for i in (j + 1)..dim {
            let mut s = a[i * dim + j];
            for k in 0..j {
                s -= l[i * dim + k] * l[j * dim + k];
            }
            l[i * dim + j] = s / ljj;
        }
    }
    Ok(l)
}

/// A symmetric positive-definite matrix with its Cholesky factor and
/// log-determinant computed once at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    dim: usize,
    data: Vec<f64>,
    chol: Vec<f64>,
    log_det: f64,
}

impl SpdMatrix {
    /// Builds from row-major data. The lower triangle is mirrored over the
    /// upper one, so the stored matrix is exactly symmetric.
    pub fn new(dim: usize, mut data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries".into()));
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                data[i * dim + j] = data[j * dim + i];
            }
        }
        let chol = cholesky(dim, &data)?;
        let log_det = 2.0 * (0..dim).map(|i| chol[i * dim + i].ln()).sum::<f64>();
        Ok(SpdMatrix {
            dim,
            data,
            chol,
            log_det,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data)
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::scaled_identity(dim, 1.0)
    }

    /// `variance · I`.
    pub fn scaled_identity(dim: usize, variance: f64) -> Result<Self> {
        Self::from_diagonal(&vec![variance; dim])
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        let dim = diag.len();
        let mut data = vec![0.0; dim * dim];
        for (i, &v) in diag.iter().enumerate() {
            data[i * dim + i] = v;
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Row-major lower-triangular factor `L` with `L·Lᵀ = self`.
    pub fn cholesky_factor(&self) -> &[f64] {
        &self.chol
    }

    /// `log |Σ|`, from the factor's diagonal.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    /// Solves `L·w = b` by forward substitution.
    pub fn solve_lower(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(b.len())?;
        let n = self.dim;
        let mut w = vec![0.0; n];
        for i in 0..n {
            let row = &self.chol[i * n..i * n + i];
            let s: f64 = row.iter().zip(&w).map(|(l, w)| l * w).sum();
            w[i] = (b[i] - s) / self.chol[i * n + i];
        }
        Ok(w)
    }

    /// `L·z`, which maps standard normal draws onto this covariance.
    pub fn mul_lower(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(z.len())?;
        let n = self.dim;
        Ok((0..n)
            .map(|i| {
                self.chol[i * n..=i * n + i]
                    .iter()
                    .zip(z)
                    .map(|(l, z)| l * z)
                    .sum()
            })
            .collect())
    }

    /// `(x − μ)ᵀ Σ⁻¹ (x − μ)` via `‖L⁻¹(x − μ)‖²`.
    pub fn mahalanobis_sq(&self, x: &[f64], mu: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        self.check_dim(mu.len())?;
        let diff: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
        let w = self.solve_lower(&diff)?;
        Ok(w.iter().map(|v| v * v).sum())
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found,
            });
        }
        Ok(())
    }
}

pub fn mahalanobis_sq(x: &[f64], mu: &[f64], sigma: &SpdMatrix) -> Result<f64> {
    sigma.mahalanobis_sq(x, mu)
}

/// Block-diagonal matrix with the given blocks in order and exact zeros
/// everywhere else.
pub fn block_diag(blocks: &[SpdMatrix]) -> Result<SpdMatrix> {
    if blocks.is_empty() {
        return Err(Error::InvalidModel(
            "block-diagonal matrix needs at least one block".into(),
        ));
    }
    let dim: usize = blocks.iter().map(SpdMatrix::dim).sum();
    let mut data = vec![0.0; dim * dim];
    let mut offset = 0;
    for b in blocks {
        let d = b.dim();
        for i in 0..d {
            let src = &b.as_slice()[i * d..(i + 1) * d];
            let start = (offset + i) * dim + offset;
            data[start..start + d].copy_from_slice(src);
        }
        offset += d;
    }
    SpdMatrix::new(dim, data)
}
