//! Regularization under preconditioning.
//!
//! With `M = P Pᵀ` and `p = P z`, a penalty can be placed on the original
//! parameters `p` or on the implicit coordinates `z`. The two choices give
//! different updates whenever `M ≠ I`:
//!
//! | scheme          | update                                   |
//! |-----------------|------------------------------------------|
//! | L2 in `p`       | `p − α M (g + 2λp)`                      |
//! | L2 in `z`       | `p − α M g − 2αλ p` (weight decay)       |
//! | grad-reg in `p` | `p − α M (g + 2λ ∇²L g)`                 |
//! | grad-reg in `z` | `p − α M g − 2αλ M ∇²L M g`              |

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::{axpy, distance, norm};
use crate::models::{Objective, ParamVector};
use crate::optim::{
    adam_step, precond_gd_step, FixedPreconditioner, Method, Optimizer, OptimizerConfig,
    OptimizerState, Stepper,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegKind {
    None,
    L2InP,
    L2InZ,
    GradRegInP,
    GradRegInZ,
    DecoupledWeightDecay,
}

impl RegKind {
    pub fn name(self) -> &'static str {
        match self {
            RegKind::None => "none",
            RegKind::L2InP => "l2_in_p",
            RegKind::L2InZ => "l2_in_z",
            RegKind::GradRegInP => "grad_reg_in_p",
            RegKind::GradRegInZ => "grad_reg_in_z",
            RegKind::DecoupledWeightDecay => "decoupled_weight_decay",
        }
    }
}

impl FromStr for RegKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => RegKind::None,
            "l2_in_p" => RegKind::L2InP,
            "l2_in_z" => RegKind::L2InZ,
            "grad_reg_in_p" => RegKind::GradRegInP,
            "grad_reg_in_z" => RegKind::GradRegInZ,
            "decoupled_weight_decay" | "weight_decay" => RegKind::DecoupledWeightDecay,
            other => {
                return Err(Error::validation(format!(
                    "unknown regularization '{other}'"
                )))
            }
        })
    }
}

impl fmt::Display for RegKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegMode {
    kind: RegKind,
    lambda: f64,
}

impl RegMode {
    pub fn new(kind: RegKind, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::validation(format!(
                "lambda must be >= 0, got {lambda}"
            )));
        }
        if kind == RegKind::None && lambda != 0.0 {
            return Err(Error::validation(
                "regularization 'none' requires lambda = 0",
            ));
        }
        Ok(Self { kind, lambda })
    }

    pub fn none() -> Self {
        Self {
            kind: RegKind::None,
            lambda: 0.0,
        }
    }

    pub fn kind(&self) -> RegKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// `∇²L(p) v`: the model's closed form when it has one, central differences
/// of the gradient otherwise.
pub fn hvp(model: &dyn Objective, p: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != p.len() {
        return Err(Error::validation("hvp direction length mismatch"));
    }
    if v.iter().all(|&x| x == 0.0) {
        return Ok(vec![0.0; v.len()]);
    }
    match model.exact_hvp(p, v) {
        Some(r) => r,
        None => fd_hvp(model, p, v),
    }
}

/// `(∇L(p + hv) − ∇L(p − hv)) / 2h` with `h = 1e-5 / (1 + ‖v‖)`.
pub fn fd_hvp(model: &dyn Objective, p: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().all(|&x| x == 0.0) {
        return Ok(vec![0.0; v.len()]);
    }
    let h = 1e-5 / (1.0 + norm(v));
    let up = model.gradient(&axpy(p, h, v))?;
    let down = model.gradient(&axpy(p, -h, v))?;
    let out: Vec<f64> = up
        .iter()
        .zip(&down)
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::numerical(
            "gradient is not finite at a perturbed point",
        ));
    }
    Ok(out)
}

/// L2 penalty on `z = P⁻¹p`: `p − α M g − 2αλ p`.
pub fn step_l2_in_z(
    p: &[f64],
    g: &[f64],
    alpha: f64,
    lambda: f64,
    m: &FixedPreconditioner,
) -> Result<ParamVector> {
    let base = precond_gd_step(p, g, alpha, m)?;
    Ok(axpy(&base, -2.0 * alpha * lambda, p))
}

/// L2 penalty on `p`, preconditioned as a whole: `p − α M (g + 2λ p)`.
pub fn step_l2_in_p(
    p: &[f64],
    g: &[f64],
    alpha: f64,
    lambda: f64,
    m: &FixedPreconditioner,
) -> Result<ParamVector> {
    precond_gd_step(p, &axpy(g, 2.0 * lambda, p), alpha, m)
}

/// Penalty `λ‖∇L‖²` in `p`: `p − α M (g + 2λ ∇²L g)`.
pub fn step_grad_reg_in_p(
    model: &dyn Objective,
    p: &[f64],
    alpha: f64,
    lambda: f64,
    m: &FixedPreconditioner,
) -> Result<ParamVector> {
    let g = model.gradient(p)?;
    let hg = if lambda == 0.0 {
        vec![0.0; g.len()]
    } else {
        hvp(model, p, &g)?
    };
    precond_gd_step(p, &axpy(&g, 2.0 * lambda, &hg), alpha, m)
}

/// Penalty `λ‖∇_z L(Pz)‖²` in `z`: `p − α M g − 2αλ M ∇²L M g`.
pub fn step_grad_reg_in_z(
    model: &dyn Objective,
    p: &[f64],
    alpha: f64,
    lambda: f64,
    m: &FixedPreconditioner,
) -> Result<ParamVector> {
    let g = model.gradient(p)?;
    let base = precond_gd_step(p, &g, alpha, m)?;
    if lambda == 0.0 {
        return Ok(base);
    }
    let mg = m.apply(&g)?;
    let correction = m.apply(&hvp(model, p, &mg)?)?;
    Ok(axpy(&base, -2.0 * alpha * lambda, &correction))
}

/// Adam followed by decay outside the preconditioner: `adam(p) − α λ_w p`.
pub fn adamw_step(
    state: &mut OptimizerState,
    p: &[f64],
    g: &[f64],
    lambda_w: f64,
    config: &OptimizerConfig,
) -> Result<ParamVector> {
    let next = adam_step(state, p, g, config)?;
    Ok(axpy(&next, -config.alpha * lambda_w, p))
}

/// An optimizer combined with a regularization scheme.
///
/// Gradient regularization needs an explicit `M`, so it is only available
/// with gradient descent (`M = I`) and fixed preconditioners.
#[derive(Debug, Clone)]
pub struct Regularized {
    optimizer: Optimizer,
    mode: RegMode,
    /// `M` for the non-adaptive methods.
    fixed: Option<FixedPreconditioner>,
}

impl Regularized {
    pub fn new(optimizer: Optimizer, mode: RegMode) -> Result<Self> {
        let dim = optimizer.state.r.len();
        let fixed = match &optimizer.method {
            Method::Gd => Some(FixedPreconditioner::identity(dim)),
            Method::Preconditioned(m) => Some(m.clone()),
            _ => None,
        };
        if fixed.is_none() && matches!(mode.kind, RegKind::GradRegInP | RegKind::GradRegInZ) {
            return Err(Error::validation(format!(
                "{} needs gd or a fixed preconditioner, not {}",
                mode.kind, optimizer.method
            )));
        }
        Ok(Self {
            optimizer,
            mode,
            fixed,
        })
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.optimizer
    }

    pub fn mode(&self) -> RegMode {
        self.mode
    }
}

impl Stepper for Regularized {
    fn step(&mut self, model: &dyn Objective, p: &[f64], g: &[f64]) -> Result<ParamVector> {
        let alpha = self.optimizer.config.alpha;
        let lambda = self.mode.lambda;
        match (self.mode.kind, &self.fixed) {
            (RegKind::None, _) => self.optimizer.update(p, g),
            (RegKind::L2InP, _) => self.optimizer.update(p, &axpy(g, 2.0 * lambda, p)),
            (RegKind::L2InZ, _) => {
                let next = self.optimizer.update(p, g)?;
                Ok(axpy(&next, -2.0 * alpha * lambda, p))
            }
            (RegKind::DecoupledWeightDecay, _) => {
                let next = self.optimizer.update(p, g)?;
                Ok(axpy(&next, -alpha * lambda, p))
            }
            (RegKind::GradRegInP, Some(m)) => {
                self.optimizer.state.t += 1;
                step_grad_reg_in_p(model, p, alpha, lambda, m)
            }
            (RegKind::GradRegInZ, Some(m)) => {
                self.optimizer.state.t += 1;
                step_grad_reg_in_z(model, p, alpha, lambda, m)
            }
            (kind, None) => Err(Error::validation(format!(
                "{kind} is not available for adaptive optimizers"
            ))),
        }
    }
}

/// Trajectory distances between decoupled decay and an L2 penalty, per penalty weight.
#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    /// `(λ, max_t ‖p_t^decay − p_t^L2(λ)‖)` for every grid point.
    pub distances: Vec<(f64, f64)>,
    pub min_distance: f64,
    pub best_lambda: f64,
}

/// Runs `base` with decoupled decay `λ_w` and, for each `λ` in the grid,
/// `base` on `L + λ‖p‖²`, from the same start. Reports how close the closest
/// L2 trajectory comes.
#[allow(clippy::too_many_arguments)]
pub fn verify_no_equivalence(
    model: &dyn Objective,
    p0: &[f64],
    base: &Method,
    config: &OptimizerConfig,
    lambda_w: f64,
    lambda_grid: &[f64],
    steps: usize,
) -> Result<EquivalenceReport> {
    if lambda_grid.is_empty() {
        return Err(Error::validation("lambda grid is empty"));
    }
    let dim = model.dim();
    let decay_mode = RegMode::new(RegKind::DecoupledWeightDecay, lambda_w)?;
    let decayed = trajectory(
        model,
        p0,
        Regularized::new(Optimizer::new(base.clone(), *config, dim)?, decay_mode)?,
        steps,
    )?;
    let mut distances = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let mode = RegMode::new(RegKind::L2InP, lambda)?;
        let l2 = trajectory(
            model,
            p0,
            Regularized::new(Optimizer::new(base.clone(), *config, dim)?, mode)?,
            steps,
        )?;
        let d = decayed
            .iter()
            .zip(&l2)
            .map(|(a, b)| distance(a, b))
            .fold(0.0, f64::max);
        distances.push((lambda, d));
    }
    let (best_lambda, min_distance) = distances
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("grid is nonempty");
    Ok(EquivalenceReport {
        distances,
        min_distance,
        best_lambda,
    })
}

fn trajectory(
    model: &dyn Objective,
    p0: &[f64],
    mut stepper: Regularized,
    steps: usize,
) -> Result<Vec<ParamVector>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(p0.to_vec());
    for _ in 0..steps {
        let p = out.last().expect("nonempty");
        let g = model.gradient(p)?;
        let next = stepper.step(model, p, &g)?;
        out.push(next);
    }
    Ok(out)
}
