//! Batch normalization and batch normalization preconditioning.
//!
//! For a unit with parameters `ŵ = [b; w]` fed by activations with batch mean
//! `μ` and std `σ`, normalizing the inputs is the same as training in
//! coordinates `ŵ = P z` with
//!
//! ```text
//! P = U D,  U = [[1, −μᵀ], [0, I]],  D = diag(1, σ)⁻¹
//! ```
//!
//! so the network keeps its architecture and only the gradient changes:
//! `ŵ ← ŵ − α P Pᵀ ∇_ŵ L`. [`bnp_apply`] computes `P Pᵀ g` with vector
//! operations only.

use crate::error::{Error, Result};
use crate::linalg::{condition_number, VARIANCE_FLOOR};
use crate::matrix::Matrix;
use crate::models::{Dataset, Mlp, MlpSpec, Objective, ParamVector};
use crate::optim::{gd_step, Stepper};

pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-3;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Per-unit population mean and standard deviation of a layer's inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub count: usize,
}

impl BatchStats {
    /// `μ = 0, σ = 1`: the preconditioner becomes the identity.
    pub fn neutral(width: usize) -> Self {
        Self {
            mu: vec![0.0; width],
            sigma: vec![1.0; width],
            count: 0,
        }
    }

    pub fn width(&self) -> usize {
        self.mu.len()
    }

    fn effective_sigma(&self, floor: f64) -> Vec<f64> {
        self.sigma.iter().map(|&s| s.max(floor)).collect()
    }

    fn check(&self, width: usize) -> Result<()> {
        if self.mu.len() != width || self.sigma.len() != width {
            return Err(Error::validation(format!(
                "statistics have width {}, layer expects {width}",
                self.mu.len()
            )));
        }
        if self.sigma.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::validation("sigma must be nonnegative"));
        }
        Ok(())
    }
}

/// Row means and population standard deviations of `H` (width × N).
pub fn batch_stats(h: &Matrix) -> Result<BatchStats> {
    if h.cols() == 0 {
        return Err(Error::validation("batch is empty"));
    }
    let n = h.cols() as f64;
    let mut mu = Vec::with_capacity(h.rows());
    let mut sigma = Vec::with_capacity(h.rows());
    for i in 0..h.rows() {
        let row = h.row(i);
        let m = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        mu.push(m);
        sigma.push(var.sqrt());
    }
    Ok(BatchStats {
        mu,
        sigma,
        count: h.cols(),
    })
}

/// Trainable re-scaling `γ` and re-centering `β`.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BnParams {
    pub fn identity(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
        }
    }
}

/// `γ ⊙ (h − μ) / σ + β`, with `σ` floored at [`DEFAULT_SIGMA_FLOOR`].
pub fn bn_forward(h: &[f64], stats: &BatchStats, params: &BnParams) -> Result<Vec<f64>> {
    let width = h.len();
    stats.check(width)?;
    if params.gamma.len() != width || params.beta.len() != width {
        return Err(Error::validation(
            "BN parameters do not match the layer width",
        ));
    }
    let sigma = stats.effective_sigma(DEFAULT_SIGMA_FLOOR);
    Ok((0..width)
        .map(|k| params.gamma[k] * (h[k] - stats.mu[k]) / sigma[k] + params.beta[k])
        .collect())
}

/// Folds `γ, β` into the next affine layer: `Ŵ = W diag(γ)`, `b̂ = Wβ + b`.
pub fn bn_reparameterize(w: &Matrix, b: &[f64], params: &BnParams) -> Result<(Matrix, Vec<f64>)> {
    if params.gamma.len() != w.cols() || params.beta.len() != w.cols() {
        return Err(Error::validation(
            "BN parameters do not match the weight columns",
        ));
    }
    if b.len() != w.rows() {
        return Err(Error::validation(
            "bias length does not match the weight rows",
        ));
    }
    let w_hat = Matrix::from_fn(w.rows(), w.cols(), |i, k| w[(i, k)] * params.gamma[k]);
    let shift = w.matvec(&params.beta)?;
    let b_hat = shift.iter().zip(b).map(|(s, b)| s + b).collect();
    Ok((w_hat, b_hat))
}

/// Dense `U`, `D` and `P = U D`, each `(width + 1)²`. Reference path only.
pub fn bnp_matrices(stats: &BatchStats, sigma_floor: f64) -> Result<(Matrix, Matrix, Matrix)> {
    check_floor(sigma_floor)?;
    stats.check(stats.width())?;
    let n = stats.width() + 1;
    let sigma = stats.effective_sigma(sigma_floor);
    let u = Matrix::from_fn(n, n, |i, j| match (i, j) {
        (0, 0) => 1.0,
        (0, j) => -stats.mu[j - 1],
        (i, j) if i == j => 1.0,
        _ => 0.0,
    });
    let d = Matrix::from_diag(
        &std::iter::once(1.0)
            .chain(sigma.iter().map(|s| 1.0 / s))
            .collect::<Vec<_>>(),
    );
    let p = u.matmul(&d)?;
    Ok((u, d, p))
}

/// `P Pᵀ [g_b; g_w]` in `O(width)`.
pub fn bnp_apply(
    g_b: f64,
    g_w: &[f64],
    stats: &BatchStats,
    sigma_floor: f64,
) -> Result<(f64, Vec<f64>)> {
    check_floor(sigma_floor)?;
    stats.check(g_w.len())?;
    Ok(apply_unchecked(
        g_b,
        g_w,
        &stats.mu,
        &stats.effective_sigma(sigma_floor),
    ))
}

fn apply_unchecked(g_b: f64, g_w: &[f64], mu: &[f64], sigma: &[f64]) -> (f64, Vec<f64>) {
    // Pᵀ g
    let u_w: Vec<f64> = g_w
        .iter()
        .zip(mu)
        .zip(sigma)
        .map(|((g, m), s)| (g - m * g_b) / s)
        .collect();
    // P (Pᵀ g)
    let shift: f64 = u_w
        .iter()
        .zip(mu)
        .zip(sigma)
        .map(|((u, m), s)| m * u / s)
        .sum();
    let out_w = u_w.iter().zip(sigma).map(|(u, s)| u / s).collect();
    (g_b - shift, out_w)
}

fn check_floor(sigma_floor: f64) -> Result<()> {
    if !(sigma_floor > 0.0 && sigma_floor.is_finite()) {
        return Err(Error::validation(format!(
            "sigma floor must be positive, got {sigma_floor}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Averaging {
    /// Statistics of the current batch only.
    PerBatch,
    /// Exponential moving average with the given momentum.
    Running(f64),
}

/// Statistics and settings for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnpPreconditioner {
    pub stats: BatchStats,
    pub sigma_floor: f64,
    pub averaging: Averaging,
}

impl BnpPreconditioner {
    pub fn new(stats: BatchStats, sigma_floor: f64, averaging: Averaging) -> Result<Self> {
        check_floor(sigma_floor)?;
        stats.check(stats.width())?;
        if let Averaging::Running(m) = averaging {
            if !(m > 0.0 && m < 1.0) {
                return Err(Error::validation(format!(
                    "running momentum must lie in (0, 1), got {m}"
                )));
            }
        }
        Ok(Self {
            stats,
            sigma_floor,
            averaging,
        })
    }

    pub fn neutral(width: usize) -> Self {
        Self {
            stats: BatchStats::neutral(width),
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            averaging: Averaging::PerBatch,
        }
    }

    /// Folds in a new batch according to the averaging mode.
    pub fn observe(&self, batch: &BatchStats) -> Result<Self> {
        match self.averaging {
            Averaging::PerBatch => {
                batch.check(self.stats.width())?;
                Ok(Self {
                    stats: batch.clone(),
                    ..self.clone()
                })
            }
            Averaging::Running(m) => update_running_stats(self, batch, m),
        }
    }
}

/// `μ ← mμ + (1−m)μ_B`, `σ² ← mσ² + (1−m)σ_B²`.
pub fn update_running_stats(
    precond: &BnpPreconditioner,
    batch: &BatchStats,
    momentum: f64,
) -> Result<BnpPreconditioner> {
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::validation(format!(
            "momentum must lie in [0, 1], got {momentum}"
        )));
    }
    batch.check(precond.stats.width())?;
    let stats = if momentum == 0.0 {
        batch.clone()
    } else if momentum == 1.0 {
        precond.stats.clone()
    } else {
        let old = &precond.stats;
        BatchStats {
            mu: old
                .mu
                .iter()
                .zip(&batch.mu)
                .map(|(a, b)| momentum * a + (1.0 - momentum) * b)
                .collect(),
            sigma: old
                .sigma
                .iter()
                .zip(&batch.sigma)
                .map(|(a, b)| (momentum * a * a + (1.0 - momentum) * b * b).sqrt())
                .collect(),
            count: old.count + batch.count,
        }
    };
    Ok(BnpPreconditioner {
        stats,
        ..precond.clone()
    })
}

/// Statistics of every layer's inputs on `data`, layer 1 first.
pub fn layer_stats(spec: &MlpSpec, p: &[f64], data: &Dataset) -> Result<Vec<BatchStats>> {
    (1..=spec.layers())
        .map(|layer| batch_stats(&spec.layer_inputs(p, data, layer)?))
        .collect()
}

/// Applies `P Pᵀ` of each layer's stored statistics to every unit's slice of `g`.
pub fn bnp_precondition(
    spec: &MlpSpec,
    g: &[f64],
    preconds: &[BnpPreconditioner],
) -> Result<Vec<f64>> {
    if g.len() != spec.param_count() {
        return Err(Error::validation(
            "gradient length does not match the network",
        ));
    }
    if preconds.len() != spec.layers() {
        return Err(Error::validation(format!(
            "{} preconditioners for {} layers",
            preconds.len(),
            spec.layers()
        )));
    }
    let mut out = vec![0.0; g.len()];
    for (layer, pc) in (1..=spec.layers()).zip(preconds) {
        check_floor(pc.sigma_floor)?;
        pc.stats.check(spec.widths()[layer - 1])?;
        let sigma = pc.stats.effective_sigma(pc.sigma_floor);
        for unit in 0..spec.widths()[layer] {
            let idx = spec.unit_param_indices(layer, unit)?;
            let g_w: Vec<f64> = idx[1..].iter().map(|&k| g[k]).collect();
            let (b, w) = apply_unchecked(g[idx[0]], &g_w, &pc.stats.mu, &sigma);
            out[idx[0]] = b;
            for (&k, v) in idx[1..].iter().zip(w) {
                out[k] = v;
            }
        }
    }
    Ok(out)
}

/// One BNP step on `batch` using the statistics stored in `preconds`.
pub fn bnp_step(
    spec: &MlpSpec,
    p: &[f64],
    batch: &Dataset,
    alpha: f64,
    preconds: &[BnpPreconditioner],
) -> Result<ParamVector> {
    if batch.samples() < 2
        && preconds
            .iter()
            .any(|pc| pc.averaging == Averaging::PerBatch)
    {
        return Err(Error::validation(
            "per-batch statistics need at least 2 samples",
        ));
    }
    let g = spec.gradient_on(p, batch)?;
    Ok(gd_step(p, &bnp_precondition(spec, &g, preconds)?, alpha))
}

/// Full-batch BNP training: refreshes every layer's statistics from the
/// current parameters, then steps.
#[derive(Debug, Clone)]
pub struct BnpTrainer {
    mlp: Mlp,
    alpha: f64,
    preconds: Vec<BnpPreconditioner>,
}

impl BnpTrainer {
    pub fn new(mlp: Mlp, alpha: f64, sigma_floor: f64, averaging: Averaging) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::validation(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if averaging == Averaging::PerBatch && mlp.data().samples() < 2 {
            return Err(Error::validation(
                "per-batch statistics need at least 2 samples",
            ));
        }
        let preconds = mlp.spec().widths()[..mlp.spec().layers()]
            .iter()
            .map(|&w| BnpPreconditioner::new(BatchStats::neutral(w), sigma_floor, averaging))
            .collect::<Result<_>>()?;
        Ok(Self {
            mlp,
            alpha,
            preconds,
        })
    }

    pub fn preconditioners(&self) -> &[BnpPreconditioner] {
        &self.preconds
    }

    fn refresh(&mut self, p: &[f64]) -> Result<()> {
        let stats = layer_stats(self.mlp.spec(), p, self.mlp.data())?;
        let first = self.preconds.iter().all(|pc| pc.stats.count == 0);
        for (pc, s) in self.preconds.iter_mut().zip(&stats) {
            // The first batch seeds running averages instead of being blended
            // into the neutral placeholder.
            *pc = if first {
                BnpPreconditioner {
                    stats: s.clone(),
                    ..pc.clone()
                }
            } else {
                pc.observe(s)?
            };
        }
        Ok(())
    }
}

impl Stepper for BnpTrainer {
    fn step(&mut self, _model: &dyn Objective, p: &[f64], g: &[f64]) -> Result<ParamVector> {
        self.refresh(p)?;
        let direction = bnp_precondition(self.mlp.spec(), g, &self.preconds)?;
        Ok(gd_step(p, &direction, self.alpha))
    }
}

/// `κ` of one unit's Hessian block before and after BNP preconditioning with
/// the statistics of that layer's inputs on the model's data.
pub fn layer_conditioning_report(
    mlp: &Mlp,
    p: &[f64],
    layer: usize,
    unit: usize,
    sigma_floor: f64,
) -> Result<(f64, f64)> {
    let parts = mlp.layer_hessian(p, layer, unit)?;
    let stats = batch_stats(&mlp.spec().layer_inputs(p, mlp.data(), layer)?)?;
    let (_, _, pm) = bnp_matrices(&stats, sigma_floor)?;
    let raw = condition_number(&parts.hessian)?;
    let pre = pm
        .transpose()
        .matmul(&parts.hessian)?
        .matmul(&pm)?
        .symmetrized();
    Ok((raw, condition_number(&pre)?))
}

/// `G = diag(σ⁻¹)(H − μeᵀ)` with the same floor as the preconditioner.
pub fn standardized_inputs(h: &Matrix, stats: &BatchStats, sigma_floor: f64) -> Result<Matrix> {
    stats.check(h.rows())?;
    let sigma = stats.effective_sigma(sigma_floor);
    Ok(Matrix::from_fn(h.rows(), h.cols(), |i, j| {
        (h[(i, j)] - stats.mu[i]) / sigma[i]
    }))
}

/// Whether any unit's variance is at or below the floor used elsewhere for
/// degenerate features.
pub fn has_degenerate_unit(stats: &BatchStats) -> bool {
    stats.sigma.iter().any(|s| s * s <= VARIANCE_FLOOR)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::extend;
    use crate::models::{Activation, LinearRegression, LossKind};
    use crate::rng::SplitMix64;

    fn random_stats(rng: &mut SplitMix64, width: usize) -> BatchStats {
        BatchStats {
            mu: (0..width).map(|_| rng.uniform_range(-5.0, 5.0)).collect(),
            sigma: (0..width).map(|_| rng.log_uniform(-2.0, 2.0)).collect(),
            count: 10,
        }
    }

    #[test]
    fn batch_stats_examples() {
        let s = batch_stats(&Matrix::from_rows(&[[1.0, 3.0]]).unwrap()).unwrap();
        assert_eq!((s.mu[0], s.sigma[0], s.count), (2.0, 1.0, 2));
        let c = batch_stats(&Matrix::from_rows(&[[4.0, 4.0, 4.0]]).unwrap()).unwrap();
        assert_eq!(c.sigma[0], 0.0);
        assert!(has_degenerate_unit(&c));
        assert!(batch_stats(&Matrix::zeros(2, 0)).is_err());
    }

    #[test]
    fn centered_rows_sum_to_zero() {
        let mut rng = SplitMix64::new(1);
        let h = Matrix::from_fn(4, 30, |_, _| 3.0 + 2.0 * rng.normal());
        let s = batch_stats(&h).unwrap();
        for i in 0..4 {
            let sum: f64 = h.row(i).iter().map(|x| x - s.mu[i]).sum();
            assert!(sum.abs() < 1e-12);
        }
    }

    #[test]
    fn bn_forward_examples() {
        let mut rng = SplitMix64::new(2);
        let h = Matrix::from_fn(3, 50, |i, _| i as f64 + (i + 1) as f64 * rng.normal());
        let s = batch_stats(&h).unwrap();
        let out: Vec<Vec<f64>> = (0..50)
            .map(|j| bn_forward(&h.column(j), &s, &BnParams::identity(3)).unwrap())
            .collect();
        let m = Matrix::from_fn(3, 50, |i, j| out[j][i]);
        let t = batch_stats(&m).unwrap();
        for k in 0..3 {
            assert!(t.mu[k].abs() < 1e-12);
            assert!((t.sigma[k] - 1.0).abs() < 1e-12);
        }
        let params = BnParams {
            gamma: vec![0.0; 3],
            beta: vec![1.0, 2.0, 3.0],
        };
        assert_eq!(bn_forward(&h.column(0), &s, &params).unwrap(), params.beta);
        let params = BnParams {
            gamma: vec![2.0; 3],
            beta: vec![1.0, 2.0, 3.0],
        };
        assert_eq!(bn_forward(&s.mu, &s, &params).unwrap(), params.beta);
    }

    #[test]
    fn reparameterize_example() {
        let w = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let params = BnParams {
            gamma: vec![2.0, 3.0],
            beta: vec![1.0, 1.0],
        };
        let (w_hat, b_hat) = bn_reparameterize(&w, &[0.0], &params).unwrap();
        assert_eq!(w_hat.as_slice(), &[2.0, 6.0]);
        assert_eq!(b_hat, vec![3.0]);
        let (w_id, b_id) = bn_reparameterize(&w, &[0.5], &BnParams::identity(2)).unwrap();
        assert_eq!(w_id, w);
        assert_eq!(b_id, vec![0.5]);
    }

    #[test]
    fn reparameterized_forward_passes_agree() {
        let mut rng = SplitMix64::new(3);
        for _ in 0..100 {
            let (n, m) = (1 + rng.index(5), 1 + rng.index(4));
            let w = Matrix::from_fn(m, n, |_, _| rng.normal());
            let b = rng.normal_vec(m);
            let params = BnParams {
                gamma: rng.normal_vec(n),
                beta: rng.normal_vec(n),
            };
            let stats = random_stats(&mut rng, n);
            let h = rng.normal_vec(n);
            let (w_hat, b_hat) = bn_reparameterize(&w, &b, &params).unwrap();
            let g = |s: f64| s.tanh();
            let with_bn = w.matvec(&bn_forward(&h, &stats, &params).unwrap()).unwrap();
            let folded = w_hat
                .matvec(&bn_forward(&h, &stats, &BnParams::identity(n)).unwrap())
                .unwrap();
            for i in 0..m {
                let a = g(with_bn[i] + b[i]);
                let c = g(folded[i] + b_hat[i]);
                assert!((a - c).abs() <= 1e-12, "{a} vs {c}");
            }
        }
    }

    #[test]
    fn bnp_matrices_examples() {
        let (_, _, p) = bnp_matrices(&BatchStats::neutral(3), DEFAULT_SIGMA_FLOOR).unwrap();
        assert_eq!(p, Matrix::identity(4));
        let s = BatchStats {
            mu: vec![2.0],
            sigma: vec![4.0],
            count: 2,
        };
        let (_, _, p) = bnp_matrices(&s, DEFAULT_SIGMA_FLOOR).unwrap();
        assert_eq!(p.as_slice(), &[1.0, -0.5, 0.0, 0.25]);
    }

    #[test]
    fn p_transpose_maps_extended_inputs_to_standardized() {
        let mut rng = SplitMix64::new(4);
        let h = Matrix::from_fn(5, 20, |i, _| (i as f64 - 2.0) + 3.0 * rng.normal());
        let s = batch_stats(&h).unwrap();
        let (_, _, p) = bnp_matrices(&s, DEFAULT_SIGMA_FLOOR).unwrap();
        let lhs = p.transpose().matmul(&extend(&h).unwrap()).unwrap();
        let g = standardized_inputs(&h, &s, DEFAULT_SIGMA_FLOOR).unwrap();
        let rhs = extend(&g).unwrap();
        assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn vector_form_matches_dense() {
        let mut rng = SplitMix64::new(5);
        for _ in 0..500 {
            let s = random_stats(&mut rng, 7);
            let g_b = rng.normal();
            let g_w = rng.normal_vec(7);
            let (b, w) = bnp_apply(g_b, &g_w, &s, DEFAULT_SIGMA_FLOOR).unwrap();
            let (_, _, p) = bnp_matrices(&s, DEFAULT_SIGMA_FLOOR).unwrap();
            let full: Vec<f64> = std::iter::once(g_b).chain(g_w).collect();
            let dense = p.matmul(&p.transpose()).unwrap().matvec(&full).unwrap();
            let scale = dense.iter().fold(1.0f64, |a, x| a.max(x.abs()));
            assert!((b - dense[0]).abs() <= 1e-12 * scale);
            for k in 0..7 {
                assert!((w[k] - dense[k + 1]).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn apply_trivial_cases() {
        let (b, w) = bnp_apply(0.3, &[1.0, -2.0], &BatchStats::neutral(2), 1e-3).unwrap();
        assert_eq!((b, w), (0.3, vec![1.0, -2.0]));
        let mut rng = SplitMix64::new(6);
        let s = random_stats(&mut rng, 3);
        let (b, w) = bnp_apply(0.0, &[0.0; 3], &s, 1e-3).unwrap();
        assert_eq!((b, w), (0.0, vec![0.0; 3]));
        assert!(bnp_apply(0.0, &[0.0; 2], &s, 1e-3).is_err());
        assert!(bnp_apply(0.0, &[0.0; 3], &s, 0.0).is_err());
    }

    fn small_mlp(rng: &mut SplitMix64, samples: usize) -> Mlp {
        let spec = MlpSpec::new(vec![3, 4, 2], Activation::Tanh, LossKind::SquaredError).unwrap();
        let x = Matrix::from_fn(3, samples, |i, _| {
            5.0 * i as f64 + (i + 1) as f64 * rng.normal()
        });
        let y = Matrix::from_fn(2, samples, |_, _| rng.normal());
        Mlp::new(spec, Dataset::new(x, y).unwrap()).unwrap()
    }

    #[test]
    fn neutral_stats_reduce_to_gd() {
        let mut rng = SplitMix64::new(7);
        let mlp = small_mlp(&mut rng, 12);
        let p = mlp.spec().init_params(&mut rng);
        let neutral: Vec<_> = [3, 4]
            .iter()
            .map(|&w| BnpPreconditioner::neutral(w))
            .collect();
        let bnp = bnp_step(mlp.spec(), &p, mlp.data(), 0.1, &neutral).unwrap();
        let gd = gd_step(&p, &mlp.gradient(&p).unwrap(), 0.1);
        assert_eq!(bnp, gd);
    }

    #[test]
    fn standardized_regression_step_equals_gd() {
        let mut rng = SplitMix64::new(8);
        let raw = Matrix::from_fn(2, 40, |_, _| rng.normal());
        let s = batch_stats(&raw).unwrap();
        let x = standardized_inputs(&raw, &s, DEFAULT_SIGMA_FLOOR).unwrap();
        let y = Matrix::from_fn(1, 40, |_, _| rng.normal());
        let lr = LinearRegression::new(Dataset::new(x, y).unwrap());
        let mlp = lr.as_mlp();
        let p = rng.normal_vec(3);
        let stats = layer_stats(mlp.spec(), &p, mlp.data()).unwrap();
        let pcs: Vec<_> = stats
            .into_iter()
            .map(|s| BnpPreconditioner::new(s, DEFAULT_SIGMA_FLOOR, Averaging::PerBatch).unwrap())
            .collect();
        let bnp = bnp_step(mlp.spec(), &p, mlp.data(), 0.1, &pcs).unwrap();
        let gd = gd_step(&p, &lr.gradient(&p).unwrap(), 0.1);
        for (a, b) in bnp.iter().zip(&gd) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn small_batches_are_rejected_per_batch() {
        let mut rng = SplitMix64::new(9);
        let mlp = small_mlp(&mut rng, 1);
        let p = mlp.spec().init_params(&mut rng);
        let pcs: Vec<_> = [3, 4]
            .iter()
            .map(|&w| BnpPreconditioner::neutral(w))
            .collect();
        assert!(matches!(
            bnp_step(mlp.spec(), &p, mlp.data(), 0.1, &pcs),
            Err(Error::Validation(_))
        ));
        assert!(BnpTrainer::new(mlp, 0.1, 1e-3, Averaging::PerBatch).is_err());
    }

    #[test]
    fn running_stats_examples() {
        let mut rng = SplitMix64::new(10);
        let start =
            BnpPreconditioner::new(random_stats(&mut rng, 3), 1e-3, Averaging::Running(0.9))
                .unwrap();
        let batch = random_stats(&mut rng, 3);
        assert_eq!(
            update_running_stats(&start, &batch, 0.0).unwrap().stats,
            batch
        );
        assert_eq!(
            update_running_stats(&start, &batch, 1.0).unwrap().stats,
            start.stats
        );
        let mut pc = start.clone();
        let mut prev = f64::INFINITY;
        for _ in 0..30 {
            pc = pc.observe(&batch).unwrap();
            let gap: f64 = pc
                .stats
                .mu
                .iter()
                .zip(&batch.mu)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if prev.is_finite() && prev > 1e-12 {
                assert!((gap / prev - 0.9).abs() < 1e-6);
            }
            prev = gap;
        }
        assert!(BnpPreconditioner::new(batch, 1e-3, Averaging::Running(1.0)).is_err());
    }

    #[test]
    fn bnp_improves_ill_scaled_regression() {
        let mut rng = SplitMix64::new(11);
        let x = Matrix::from_fn(2, 50, |i, _| {
            let scale = if i == 0 { 1.0 } else { 100.0 };
            3.0 + scale * rng.normal()
        });
        let y = Matrix::from_fn(1, 50, |_, _| rng.normal());
        let lr = LinearRegression::new(Dataset::new(x, y).unwrap());
        let mlp = lr.as_mlp();
        let p = rng.normal_vec(3);
        let (raw, pre) = layer_conditioning_report(&mlp, &p, 1, 0, DEFAULT_SIGMA_FLOOR).unwrap();
        assert!(pre < raw, "{pre} vs {raw}");
    }

    #[test]
    fn standardized_inputs_leave_kappa_unchanged() {
        let mut rng = SplitMix64::new(12);
        let raw = Matrix::from_fn(3, 30, |_, _| rng.normal());
        let s = batch_stats(&raw).unwrap();
        let x = standardized_inputs(&raw, &s, DEFAULT_SIGMA_FLOOR).unwrap();
        let y = Matrix::from_fn(1, 30, |_, _| rng.normal());
        let mlp = LinearRegression::new(Dataset::new(x, y).unwrap()).as_mlp();
        let p = rng.normal_vec(4);
        let (raw_k, bnp_k) =
            layer_conditioning_report(&mlp, &p, 1, 0, DEFAULT_SIGMA_FLOOR).unwrap();
        assert!((raw_k - bnp_k).abs() <= 1e-8 * raw_k);
    }

    #[test]
    fn dead_units_surface_as_singular() {
        // Constant inputs make H_e rank one.
        let x = Matrix::from_fn(2, 10, |_, _| 1.0);
        let y = Matrix::from_fn(1, 10, |_, j| j as f64);
        let mlp = LinearRegression::new(Dataset::new(x, y).unwrap()).as_mlp();
        let err = layer_conditioning_report(&mlp, &[0.0; 3], 1, 0, DEFAULT_SIGMA_FLOOR);
        assert!(matches!(err, Err(Error::Singular { .. })), "{err:?}");
    }

    #[test]
    fn trainer_seeds_then_tracks_stats() {
        let mut rng = SplitMix64::new(13);
        let mlp = small_mlp(&mut rng, 20);
        let p = mlp.spec().init_params(&mut rng);
        let mut trainer = BnpTrainer::new(mlp.clone(), 0.05, 1e-3, Averaging::PerBatch).unwrap();
        let g = mlp.gradient(&p).unwrap();
        let next = trainer.step(&mlp, &p, &g).unwrap();
        let stats = layer_stats(mlp.spec(), &p, mlp.data()).unwrap();
        let pcs: Vec<_> = stats
            .into_iter()
            .map(|s| BnpPreconditioner::new(s, 1e-3, Averaging::PerBatch).unwrap())
            .collect();
        assert_eq!(
            next,
            bnp_step(mlp.spec(), &p, mlp.data(), 0.05, &pcs).unwrap()
        );
    }
}
