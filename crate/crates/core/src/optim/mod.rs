//! Gradient descent and the adaptive optimizers, each read as preconditioned
//! gradient descent `p ← p − α M_t g`.

mod run;

pub use run::{empirical_rate, run, RunRecord, RunSummary, StepRow, Stepper, DIVERGENCE_LIMIT};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{kappa_from_eigs, sym_eigvals};
use crate::matrix::{axpy, Matrix};
use crate::models::{Objective, ParamVector};

/// How Adam seeds its moving averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitConvention {
    /// `m_0 = r_0 = 0` followed by division by `1 − ρ^t`.
    ZeroInitBiasCorrected,
    /// `m_1 = g_1`, `r_1 = g_1²`; the averages are unbiased from the start.
    FirstGradientInit,
}

impl FromStr for InitConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero_init_bias_corrected" | "zero" => Ok(Self::ZeroInitBiasCorrected),
            "first_gradient_init" | "first_gradient" => Ok(Self::FirstGradientInit),
            other => Err(Error::validation(format!(
                "unknown init convention '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    /// Learning rate.
    pub alpha: f64,
    /// Decay of the squared-gradient average.
    pub rho: f64,
    /// Decay of the momentum average.
    pub rho_hat: f64,
    /// Added to `√r` in every adaptive denominator.
    pub epsilon: f64,
    pub init: InitConvention,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            rho: 0.999,
            rho_hat: 0.9,
            epsilon: 1e-8,
            init: InitConvention::FirstGradientInit,
        }
    }
}

impl OptimizerConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::validation(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::validation(format!(
                "rho must lie in [0, 1), got {}",
                self.rho
            )));
        }
        if !(0.0..1.0).contains(&self.rho_hat) {
            return Err(Error::validation(format!(
                "rho_hat must lie in [0, 1), got {}",
                self.rho_hat
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::validation("epsilon must be >= 0"));
        }
        Ok(())
    }
}

/// Accumulators of the adaptive optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// Completed steps.
    pub t: u64,
    /// Squared-gradient accumulator.
    pub r: Vec<f64>,
    /// Momentum.
    pub m: Vec<f64>,
}

impl OptimizerState {
    pub fn new(dim: usize) -> Self {
        Self {
            t: 0,
            r: vec![0.0; dim],
            m: vec![0.0; dim],
        }
    }
}

/// A fixed symmetric positive definite `M`, stored with a lower-triangular
/// factor `P` such that `M = P Pᵀ`.
#[derive(Debug, Clone)]
pub struct FixedPreconditioner {
    m: Matrix,
    factor: Matrix,
}

impl FixedPreconditioner {
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_symmetric(1e-12) {
            return Err(Error::validation("preconditioner must be symmetric"));
        }
        let m = m.symmetrized();
        let factor = m.cholesky().map_err(|_| {
            let eig = sym_eigvals(&m).ok();
            Error::Singular {
                lambda_min: eig.as_ref().map_or(f64::NAN, |e| e.min()),
                lambda_max: eig.as_ref().map_or(f64::NAN, |e| e.max()),
            }
        })?;
        Ok(Self { m, factor })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            m: Matrix::identity(n),
            factor: Matrix::identity(n),
        }
    }

    pub fn diagonal(d: &[f64]) -> Result<Self> {
        Self::new(Matrix::from_diag(d))
    }

    /// `M = H⁻¹`, the Newton preconditioner.
    pub fn inverse_of(h: &Matrix) -> Result<Self> {
        Self::new(h.spd_inverse()?)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.m
    }

    /// Lower-triangular `P` with `M = P Pᵀ`.
    pub fn factor(&self) -> &Matrix {
        &self.factor
    }

    pub fn dim(&self) -> usize {
        self.m.rows()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.m.matvec(v)
    }
}

/// `p − α g`.
pub fn gd_step(p: &[f64], g: &[f64], alpha: f64) -> ParamVector {
    axpy(p, -alpha, g)
}

/// `p − α M g`.
pub fn precond_gd_step(
    p: &[f64],
    g: &[f64],
    alpha: f64,
    m: &FixedPreconditioner,
) -> Result<ParamVector> {
    Ok(axpy(p, -alpha, &m.apply(g)?))
}

/// Condition number of `M ∇²L`, computed from the similar symmetric matrix
/// `Pᵀ ∇²L P`.
pub fn precond_kappa(m: &FixedPreconditioner, hessian: &Matrix) -> Result<f64> {
    let p = m.factor();
    let sym = p.transpose().matmul(hessian)?.matmul(p)?.symmetrized();
    let eig = sym_eigvals(&sym)?;
    kappa_from_eigs(eig.min(), eig.max())
}

/// Learning rate `2 / (λ_min + λ_max)` that minimizes the contraction factor.
pub fn optimal_lr(lambda_min: f64, lambda_max: f64) -> f64 {
    2.0 / (lambda_min + lambda_max)
}

/// Contraction factor `(κ − 1)/(κ + 1)` of gradient descent at the optimal rate.
pub fn theoretical_rate(kappa: f64) -> Result<f64> {
    if !(kappa >= 1.0) {
        return Err(Error::validation(format!(
            "condition number must be >= 1, got {kappa}"
        )));
    }
    if kappa.is_infinite() {
        return Ok(1.0);
    }
    Ok((kappa - 1.0) / (kappa + 1.0))
}

/// `p − α · num / (√den + ε)`, with `0/0` read as a zero step.
fn scaled_update(p: &[f64], num: &[f64], den: &[f64], alpha: f64, eps: f64) -> ParamVector {
    p.iter()
        .zip(num)
        .zip(den)
        .map(|((&pi, &ni), &di)| {
            let d = di.sqrt() + eps;
            if d == 0.0 {
                pi
            } else {
                pi - alpha * ni / d
            }
        })
        .collect()
}

fn check_lengths(state: &OptimizerState, p: &[f64], g: &[f64]) -> Result<()> {
    if p.len() != g.len() || state.r.len() != p.len() || state.m.len() != p.len() {
        return Err(Error::validation(format!(
            "length mismatch: p {}, g {}, state {}",
            p.len(),
            g.len(),
            state.r.len()
        )));
    }
    Ok(())
}

/// AdaGrad: `r ← r + g²`, then `p ← p − α g / (√r + ε)` with the updated `r`.
pub fn adagrad_step(
    state: &mut OptimizerState,
    p: &[f64],
    g: &[f64],
    config: &OptimizerConfig,
) -> Result<ParamVector> {
    check_lengths(state, p, g)?;
    for (r, gi) in state.r.iter_mut().zip(g) {
        *r += gi * gi;
    }
    state.t = state.t.saturating_add(1);
    Ok(scaled_update(p, g, &state.r, config.alpha, config.epsilon))
}

/// RMSProp with `r_1 = g_1²` and `r ← ρ r + (1 − ρ) g²` afterwards.
pub fn rmsprop_step(
    state: &mut OptimizerState,
    p: &[f64],
    g: &[f64],
    config: &OptimizerConfig,
) -> Result<ParamVector> {
    check_lengths(state, p, g)?;
    let rho = config.rho;
    for (r, gi) in state.r.iter_mut().zip(g) {
        *r = if state.t == 0 {
            gi * gi
        } else {
            rho * *r + (1.0 - rho) * gi * gi
        };
    }
    state.t = state.t.saturating_add(1);
    Ok(scaled_update(p, g, &state.r, config.alpha, config.epsilon))
}

/// `r_t` in closed form for first-gradient initialization:
/// `ρ^{t−1} g_1² + (1 − ρ^{t−1}) Σ_{i≥2} ρ^{t−i} g_i² / Σ_{i≥2} ρ^{t−i}`.
pub fn rmsprop_closed_form(gradients: &[Vec<f64>], rho: f64) -> Result<Vec<f64>> {
    let Some(first) = gradients.first() else {
        return Err(Error::validation("need at least one gradient"));
    };
    let t = gradients.len();
    let head = rho.powi(t as i32 - 1);
    let mut out: Vec<f64> = first.iter().map(|g| head * g * g).collect();
    if t == 1 {
        return Ok(out);
    }
    let weight_sum: f64 = (2..=t).map(|i| rho.powi((t - i) as i32)).sum();
    let mut avg = vec![0.0; first.len()];
    for (i, g) in gradients.iter().enumerate().skip(1) {
        if g.len() != first.len() {
            return Err(Error::validation("gradients have different lengths"));
        }
        let w = rho.powi((t - (i + 1)) as i32);
        for (a, gi) in avg.iter_mut().zip(g) {
            *a += w * gi * gi;
        }
    }
    for (o, a) in out.iter_mut().zip(avg) {
        *o += (1.0 - head) * a / weight_sum;
    }
    Ok(out)
}

/// Adam: momentum `m` and squared-gradient average `r`, seeded per
/// `config.init`, then `p ← p − α m̂ / (√r̂ + ε)`.
pub fn adam_step(
    state: &mut OptimizerState,
    p: &[f64],
    g: &[f64],
    config: &OptimizerConfig,
) -> Result<ParamVector> {
    check_lengths(state, p, g)?;
    let (rho, rho_hat) = (config.rho, config.rho_hat);
    let first = state.t == 0;
    let seed = first && config.init == InitConvention::FirstGradientInit;
    for ((m, r), &gi) in state.m.iter_mut().zip(state.r.iter_mut()).zip(g) {
        if seed {
            *m = gi;
            *r = gi * gi;
        } else {
            *m = rho_hat * *m + (1.0 - rho_hat) * gi;
            *r = rho * *r + (1.0 - rho) * gi * gi;
        }
    }
    state.t = state.t.saturating_add(1);
    match config.init {
        InitConvention::FirstGradientInit => Ok(scaled_update(
            p,
            &state.m,
            &state.r,
            config.alpha,
            config.epsilon,
        )),
        InitConvention::ZeroInitBiasCorrected => {
            let m_hat: Vec<f64> = state
                .m
                .iter()
                .map(|m| m / bias_factor(rho_hat, state.t))
                .collect();
            let r_hat: Vec<f64> = state
                .r
                .iter()
                .map(|r| r / bias_factor(rho, state.t))
                .collect();
            Ok(scaled_update(
                p,
                &m_hat,
                &r_hat,
                config.alpha,
                config.epsilon,
            ))
        }
    }
}

/// `1 − ρ^t`; saturates at 1 once `ρ^t` underflows.
fn bias_factor(rho: f64, t: u64) -> f64 {
    1.0 - rho.powf(t as f64)
}

/// Which update rule an [`Optimizer`] applies.
#[derive(Debug, Clone)]
pub enum Method {
    Gd,
    Preconditioned(FixedPreconditioner),
    AdaGrad,
    RmsProp,
    Adam,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Gd => "gd",
            Method::Preconditioned(_) => "precond",
            Method::AdaGrad => "adagrad",
            Method::RmsProp => "rmsprop",
            Method::Adam => "adam",
        }
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self, Method::AdaGrad | Method::RmsProp | Method::Adam)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An update rule together with its configuration and accumulators.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub method: Method,
    pub config: OptimizerConfig,
    pub state: OptimizerState,
}

impl Optimizer {
    pub fn new(method: Method, config: OptimizerConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        if let Method::Preconditioned(m) = &method {
            if m.dim() != dim {
                return Err(Error::validation(format!(
                    "preconditioner is {0}x{0}, model has {dim} parameters",
                    m.dim()
                )));
            }
        }
        Ok(Self {
            method,
            config,
            state: OptimizerState::new(dim),
        })
    }

    /// One update from gradient `g`.
    pub fn update(&mut self, p: &[f64], g: &[f64]) -> Result<ParamVector> {
        let cfg = self.config;
        match &self.method {
            Method::Gd => {
                self.state.t = self.state.t.saturating_add(1);
                Ok(gd_step(p, g, cfg.alpha))
            }
            Method::Preconditioned(m) => {
                self.state.t = self.state.t.saturating_add(1);
                precond_gd_step(p, g, cfg.alpha, m)
            }
            Method::AdaGrad => adagrad_step(&mut self.state, p, g, &cfg),
            Method::RmsProp => rmsprop_step(&mut self.state, p, g, &cfg),
            Method::Adam => adam_step(&mut self.state, p, g, &cfg),
        }
    }
}

impl Stepper for Optimizer {
    fn step(&mut self, _model: &dyn Objective, p: &[f64], g: &[f64]) -> Result<ParamVector> {
        self.update(p, g)
    }
}
