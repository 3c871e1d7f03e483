use super::{Objective, ParamVector};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Base step for gradient checks; scaled by `1 + |p_i|`.
pub const FD_GRADIENT_STEP: f64 = 1e-5;
/// Base step for Hessians from gradient differences; scaled by `1 + |p_i|`.
pub const FD_HESSIAN_STEP: f64 = 1e-4;

/// Central-difference gradient of the loss.
pub fn fd_gradient<M: Objective + ?Sized>(model: &M, p: &[f64], h: f64) -> Result<ParamVector> {
    model.check_dim(p)?;
    let mut q = p.to_vec();
    let mut g = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let step = h * (1.0 + p[i].abs());
        q[i] = p[i] + step;
        let up = model.loss(&q)?;
        q[i] = p[i] - step;
        let down = model.loss(&q)?;
        q[i] = p[i];
        g.push((up - down) / (2.0 * step));
    }
    finite(g)
}

/// Hessian from central differences of the analytic gradient, symmetrized.
pub fn fd_hessian<M: Objective + ?Sized>(model: &M, p: &[f64], h: f64) -> Result<Matrix> {
    model.check_dim(p)?;
    let n = p.len();
    let mut q = p.to_vec();
    let mut h_mat = Matrix::zeros(n, n);
    for j in 0..n {
        let step = h * (1.0 + p[j].abs());
        q[j] = p[j] + step;
        let up = model.gradient(&q)?;
        q[j] = p[j] - step;
        let down = model.gradient(&q)?;
        q[j] = p[j];
        for i in 0..n {
            h_mat[(i, j)] = (up[i] - down[i]) / (2.0 * step);
        }
    }
    if h_mat.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::numerical("finite-difference Hessian is not finite"));
    }
    Ok(h_mat.symmetrized())
}

fn finite(v: Vec<f64>) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::numerical("finite-difference gradient is not finite"));
    }
    Ok(v)
}
