//! Differentiable loss models.
//!
//! Every model flattens its parameters into one vector. Layered models store,
//! layer by layer, the weight matrix row-major followed by the bias vector.

mod fd;
mod mlp;
mod proxy;
mod quadratic;
mod regression;

pub use fd::{fd_gradient, fd_hessian, FD_GRADIENT_STEP, FD_HESSIAN_STEP};
pub use mlp::{Activation, LayerHessianParts, LossKind, Mlp, MlpSpec};
pub use proxy::{grad_hessian_row_proxy, pearson_correlation, GradientProxy};
pub use quadratic::Quadratic;
pub use regression::{LinearRegression, LogisticRegression};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Flat vector of all trainable parameters.
pub type ParamVector = Vec<f64>;

/// Labeled samples stored column-wise: `inputs` is `n × N`, `targets` is `m × N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Matrix,
    targets: Matrix,
}

impl Dataset {
    pub fn new(inputs: Matrix, targets: Matrix) -> Result<Self> {
        if inputs.cols() != targets.cols() {
            return Err(Error::validation(format!(
                "inputs have {} samples but targets have {}",
                inputs.cols(),
                targets.cols()
            )));
        }
        if inputs.cols() == 0 {
            return Err(Error::validation("dataset has no samples"));
        }
        Ok(Self { inputs, targets })
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn targets(&self) -> &Matrix {
        &self.targets
    }

    pub fn samples(&self) -> usize {
        self.inputs.cols()
    }

    pub fn features(&self) -> usize {
        self.inputs.rows()
    }

    pub fn outputs(&self) -> usize {
        self.targets.rows()
    }

    pub fn input(&self, j: usize) -> Vec<f64> {
        self.inputs.column(j)
    }

    pub fn target(&self, j: usize) -> Vec<f64> {
        self.targets.column(j)
    }

    /// Subset of samples, in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let pick = |m: &Matrix| Matrix::from_fn(m.rows(), idx.len(), |i, k| m[(i, idx[k])]);
        Self::new(pick(&self.inputs), pick(&self.targets))
    }

    /// Same targets with replaced inputs.
    pub fn with_inputs(&self, inputs: Matrix) -> Result<Self> {
        Self::new(inputs, self.targets.clone())
    }
}

/// A loss `L(p)` with analytic gradient.
pub trait Objective: Send + Sync {
    /// Number of parameters.
    fn dim(&self) -> usize;

    fn loss(&self, p: &[f64]) -> Result<f64>;

    fn gradient(&self, p: &[f64]) -> Result<ParamVector>;

    /// Hessian at `p`. Models without a closed form fall back to central
    /// differences of the analytic gradient.
    fn hessian(&self, p: &[f64]) -> Result<Matrix> {
        fd_hessian(self, p, FD_HESSIAN_STEP)
    }

    /// Closed-form `∇²L(p)·v`, for models where it is available.
    fn exact_hvp(&self, _p: &[f64], _v: &[f64]) -> Option<Result<Vec<f64>>> {
        None
    }

    /// Known minimizer, when one is available in closed form.
    fn optimum(&self) -> Option<ParamVector> {
        None
    }

    fn check_dim(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim() {
            return Err(Error::validation(format!(
                "parameter vector has length {}, model expects {}",
                p.len(),
                self.dim()
            )));
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("parameter vector has non-finite entries"));
        }
        Ok(())
    }
}

/// Full Hessian at `p`: exact where the model has a closed form, finite
/// differences otherwise.
pub fn hessian_full(model: &dyn Objective, p: &[f64]) -> Result<Matrix> {
    model.check_dim(p)?;
    model.hessian(p)
}

pub(crate) fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˢ)` without overflow.
pub(crate) fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}
