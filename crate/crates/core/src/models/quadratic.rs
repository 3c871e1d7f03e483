use super::{Objective, ParamVector};
use crate::error::{Error, Result};
use crate::matrix::{dot, sub, Matrix};
use crate::rng::SplitMix64;

/// `L(p) = ½ (p − c)ᵀ A (p − c)` with symmetric `A`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    a: Matrix,
    center: Vec<f64>,
}

impl Quadratic {
    pub fn new(a: Matrix) -> Result<Self> {
        let n = a.rows();
        Self::with_center(a, vec![0.0; n])
    }

    pub fn with_center(a: Matrix, center: Vec<f64>) -> Result<Self> {
        if !a.is_symmetric(1e-12) {
            return Err(Error::validation("quadratic form must be symmetric"));
        }
        if center.len() != a.rows() {
            return Err(Error::validation("center length does not match the matrix"));
        }
        Ok(Self { a, center })
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        Self {
            a: Matrix::from_diag(diag),
            center: vec![0.0; diag.len()],
        }
    }

    /// Random SPD quadratic with spectrum in `[1, kappa]`.
    ///
    /// Both extremes are always present so the condition number is exactly
    /// `kappa` up to rounding; interior eigenvalues are log-uniform. The
    /// eigenbasis is a random orthogonal matrix.
    pub fn random_spd(n: usize, kappa: f64, rng: &mut SplitMix64) -> Self {
        let mut spectrum = vec![1.0; n];
        if n > 1 {
            spectrum[n - 1] = kappa;
            for s in spectrum.iter_mut().take(n - 1).skip(1) {
                *s = kappa.powf(rng.uniform());
            }
        }
        let q = random_orthogonal(n, rng);
        let a = q
            .matmul(&Matrix::from_diag(&spectrum))
            .and_then(|m| m.matmul(&q.transpose()))
            .expect("square factors")
            .symmetrized();
        Self {
            a,
            center: vec![0.0; n],
        }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }
}

/// Orthogonal factor of Gram-Schmidt applied to a Gaussian matrix.
pub(crate) fn random_orthogonal(n: usize, rng: &mut SplitMix64) -> Matrix {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v = rng.normal_vec(n);
        // Two passes of modified Gram-Schmidt.
        for _ in 0..2 {
            for c in &cols {
                let proj = dot(&v, c);
                for (vi, ci) in v.iter_mut().zip(c) {
                    *vi -= proj * ci;
                }
            }
        }
        let len = dot(&v, &v).sqrt();
        if len > 1e-8 {
            cols.push(v.into_iter().map(|x| x / len).collect());
        }
    }
    Matrix::from_fn(n, n, |i, j| cols[j][i])
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.a.rows()
    }

    fn loss(&self, p: &[f64]) -> Result<f64> {
        self.check_dim(p)?;
        let d = sub(p, &self.center);
        Ok(0.5 * dot(&d, &self.a.matvec(&d)?))
    }

    fn gradient(&self, p: &[f64]) -> Result<ParamVector> {
        self.check_dim(p)?;
        self.a.matvec(&sub(p, &self.center))
    }

    fn hessian(&self, p: &[f64]) -> Result<Matrix> {
        self.check_dim(p)?;
        Ok(self.a.clone())
    }

    fn exact_hvp(&self, p: &[f64], v: &[f64]) -> Option<Result<Vec<f64>>> {
        Some(self.check_dim(p).and_then(|_| self.a.matvec(v)))
    }

    fn optimum(&self) -> Option<ParamVector> {
        Some(self.center.clone())
    }
}
