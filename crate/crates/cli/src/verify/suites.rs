use std::time::Instant;

use rayon::prelude::*;

use precond_core::bnp::{
    batch_stats, bnp_apply, bnp_matrices, bnp_step, layer_conditioning_report, standardized_inputs,
    Averaging, BatchStats, BnpPreconditioner, BnpTrainer, DEFAULT_SIGMA_FLOOR,
};
use precond_core::linalg::{
    centering_inequality_check, condition_number, extend, feature_moments, rect_condition_number,
    row_equilibrate, standardize, sym_eigvals,
};
use precond_core::matrix::{axpy, distance, norm};
use precond_core::models::{
    fd_hessian, grad_hessian_row_proxy, Activation, LinearRegression, LogisticRegression, LossKind,
    Mlp, MlpSpec, Quadratic, FD_HESSIAN_STEP,
};
use precond_core::optim::{
    empirical_rate, gd_step, optimal_lr, precond_gd_step, rmsprop_closed_form as rmsprop_reference,
    rmsprop_step, run, theoretical_rate, FixedPreconditioner, Method, Optimizer, OptimizerConfig,
    OptimizerState,
};
use precond_core::regularize::{
    step_grad_reg_in_p, step_grad_reg_in_z, step_l2_in_p, step_l2_in_z, verify_no_equivalence,
};
use precond_core::{Dataset, Error, Matrix, Objective, SplitMix64};

use super::Case;
use crate::data::{generate_synthetic, SyntheticSpec};
use crate::error::CliResult;

type Cases = CliResult<Vec<Case>>;

fn stream(seed: u64, k: u64) -> SplitMix64 {
    SplitMix64::new(seed ^ (k + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn rel_frobenius(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).expect("same shape").frobenius_norm() / b.frobenius_norm().max(1e-300)
}

/// Features with random offsets and scales, full row rank in practice.
fn random_data_matrix(rng: &mut SplitMix64) -> Matrix {
    let n = 2 + rng.index(5);
    let big_n = 10 + rng.index(41);
    let shift: Vec<f64> = (0..n).map(|_| rng.uniform_range(-10.0, 10.0)).collect();
    let scale: Vec<f64> = (0..n).map(|_| rng.log_uniform(-1.0, 1.0)).collect();
    Matrix::from_fn(n, big_n, |i, _| shift[i] + scale[i] * rng.normal())
}

/// A network with at most 60 parameters on a small random dataset.
fn random_mlp(rng: &mut SplitMix64) -> CliResult<Mlp> {
    loop {
        let mut widths = vec![1 + rng.index(3)];
        for _ in 0..rng.index(3) {
            widths.push(2 + rng.index(3));
        }
        widths.push(1 + rng.index(2));
        let activation = [
            Activation::Tanh,
            Activation::Sigmoid,
            Activation::Softplus,
            Activation::Identity,
        ][rng.index(4)];
        let loss = if rng.index(2) == 0 {
            LossKind::SquaredError
        } else {
            LossKind::CrossEntropy
        };
        let spec = MlpSpec::new(widths.clone(), activation, loss)?;
        if spec.param_count() > 60 {
            continue;
        }
        let big_n = 8 + rng.index(8);
        let x = Matrix::from_fn(widths[0], big_n, |_, _| rng.normal());
        let out = *widths.last().expect("nonempty");
        let y = Matrix::from_fn(out, big_n, |_, _| match loss {
            LossKind::SquaredError => rng.normal(),
            LossKind::CrossEntropy => rng.uniform(),
        });
        return Ok(Mlp::new(spec, Dataset::new(x, y)?)?);
    }
}

fn describe(mlp: &Mlp) -> String {
    let s = mlp.spec();
    format!(
        "widths {:?}, {}, {}",
        s.widths(),
        s.activation(),
        s.loss_kind().name()
    )
}

pub(super) fn rate_law(seed: u64) -> Cases {
    let start = Instant::now();
    let mut rng = SplitMix64::new(seed);
    let dim = 10;
    let mut cases = Vec::new();
    for kappa in [2.0, 9.0, 100.0, 1e4] {
        let q = Quadratic::random_spd(dim, kappa, &mut rng);
        let eig = sym_eigvals(q.matrix())?;
        let alpha = optimal_lr(eig.min(), eig.max());
        let theory = theoretical_rate(eig.max() / eig.min())?;
        let steps = ((10.0 * kappa) as usize).clamp(200, 20_000);
        let p0 = rng.normal_vec(dim);
        let mut gd = Optimizer::new(Method::Gd, OptimizerConfig::with_alpha(alpha), dim)?;
        let rate = empirical_rate(&run(&q, &mut gd, steps, &p0)?, 0.5)?;
        cases.push(Case::at_most(
            format!("kappa {kappa}: relative rate error (empirical {rate:.6}, theory {theory:.6})"),
            ((rate - theory) / theory).abs(),
            0.02,
        ));
        if kappa == 100.0 {
            let target = 99.0 / 101.0;
            cases.push(Case::at_most(
                "kappa 100: relative distance to 99/101",
                ((rate - target) / target).abs(),
                0.01,
            ));
        }
    }
    cases.push(Case::at_most(
        "runtime in seconds",
        start.elapsed().as_secs_f64(),
        1.0,
    ));
    Ok(cases)
}

pub(super) fn perfect_preconditioning(seed: u64) -> Cases {
    let mut rng = SplitMix64::new(seed);
    let mut cases = Vec::new();
    for kappa in [1.0, 10.0, 1e2, 1e3, 1e4] {
        let mut worst = 0.0f64;
        for dim in [2, 5, 8] {
            let a = Quadratic::random_spd(dim, kappa, &mut rng).matrix().clone();
            let q = Quadratic::with_center(a, rng.normal_vec(dim))?;
            let m = FixedPreconditioner::inverse_of(q.matrix())?;
            let cfg = OptimizerConfig::with_alpha(1.0);
            let mut opt = Optimizer::new(Method::Preconditioned(m), cfg, dim)?;
            let rec = run(&q, &mut opt, 2, &rng.normal_vec(dim))?;
            worst = worst.max(rec.summary.final_dist_to_opt.unwrap_or(f64::INFINITY));
        }
        cases.push(Case::at_most(
            format!("kappa {kappa}, dims 2/5/8: distance to p* after 2 steps"),
            worst,
            1e-10,
        ));
    }
    Ok(cases)
}

const SLUIS_MATRICES: u64 = 200;
const SLUIS_DIAGONALS: usize = 10_000;

/// `κ(diag(d) A)` through the `n × n` Gram matrix `Aᵀ diag(d²) A`.
fn scaled_kappa(a: &Matrix, d: &[f64]) -> Option<f64> {
    let n = a.cols();
    let mut g = vec![0.0; n * n];
    for (i, &di) in d.iter().enumerate() {
        let row = a.row(i);
        let w = di * di;
        for j in 0..n {
            let rj = w * row[j];
            for k in j..n {
                g[j * n + k] += rj * row[k];
            }
        }
    }
    for j in 0..n {
        for k in 0..j {
            g[j * n + k] = g[k * n + j];
        }
    }
    let g = Matrix::new(n, n, g).ok()?;
    condition_number(&g).ok().map(f64::sqrt)
}

/// `κ(DA) / (√m · min κ(D₀A))` for one random matrix.
fn sluis_trial(seed: u64, k: u64) -> CliResult<f64> {
    let mut rng = stream(seed, k);
    let m = 2 + rng.index(5);
    let n = 1 + rng.index(m);
    let a = loop {
        let row_scale: Vec<f64> = (0..m).map(|_| rng.log_uniform(-2.0, 2.0)).collect();
        let a = Matrix::from_fn(m, n, |i, _| row_scale[i] * rng.normal());
        if rect_condition_number(&a).is_ok() {
            break a;
        }
    };
    let d = row_equilibrate(&a, 1.0)?;
    let kappa_eq = rect_condition_number(&d.matmul(&a)?)?;
    let row_norms: Vec<f64> = (0..m).map(|i| norm(a.row(i))).collect();
    let mut best = f64::INFINITY;
    for s in 0..SLUIS_DIAGONALS {
        // Half the draws span six decades, half perturb the equilibrating
        // scaling by up to a decade so the sampled minimum is close to the true one.
        let d0: Vec<f64> = if s % 2 == 0 {
            (0..m).map(|_| rng.log_uniform(-3.0, 3.0)).collect()
        } else {
            row_norms
                .iter()
                .map(|r| rng.log_uniform(-1.0, 1.0) / r)
                .collect()
        };
        if let Some(kappa) = scaled_kappa(&a, &d0) {
            best = best.min(kappa);
        }
    }
    Ok(kappa_eq / ((m as f64).sqrt() * best))
}

pub(super) fn van_der_sluis(seed: u64) -> Cases {
    let ratios: Vec<f64> = (0..SLUIS_MATRICES)
        .into_par_iter()
        .map(|k| sluis_trial(seed, k))
        .collect::<CliResult<_>>()?;
    let violations = ratios.iter().filter(|&&r| r > 1.0).count();
    let worst = ratios.iter().cloned().fold(0.0, f64::max);
    Ok(vec![
        Case::at_most(
            format!("{SLUIS_MATRICES} matrices x {SLUIS_DIAGONALS} diagonals: violations"),
            violations as f64,
            0.0,
        ),
        Case::at_most("worst kappa(DA) / (sqrt(m) * sampled min)", worst, 1.0),
    ])
}

pub(super) fn theorem3_hessian(seed: u64) -> Cases {
    let mut rng = SplitMix64::new(seed);
    let mut cases = Vec::new();
    for trial in 0..20 {
        let mlp = random_mlp(&mut rng)?;
        let spec = mlp.spec();
        let p = spec.init_params(&mut rng);
        let fd = fd_hessian(&mlp, &p, FD_HESSIAN_STEP)?;
        let mut worst = 0.0f64;
        for layer in 1..=spec.layers() {
            for unit in 0..spec.widths()[layer] {
                let parts = mlp.layer_hessian(&p, layer, unit)?;
                let block = fd.submatrix(&spec.unit_param_indices(layer, unit)?);
                worst = worst.max(rel_frobenius(&parts.hessian, &block));
            }
        }
        cases.push(Case::at_most(
            format!(
                "mlp {trial} ({}, {} params): worst block error vs fd",
                describe(&mlp),
                spec.param_count()
            ),
            worst,
            1e-4,
        ));
    }

    let mut worst_linear = 0.0f64;
    for _ in 0..5 {
        let x = random_data_matrix(&mut rng);
        let big_n = x.cols();
        let y = Matrix::from_fn(2, big_n, |_, _| rng.normal());
        let mlp = LinearRegression::new(Dataset::new(x.clone(), y)?).as_mlp();
        let p = rng.normal_vec(mlp.dim());
        let oracle = extend(&x)?.gram_rows().scaled(1.0 / big_n as f64);
        for unit in 0..2 {
            let parts = mlp.layer_hessian(&p, 1, unit)?;
            worst_linear = worst_linear.max(rel_frobenius(&parts.hessian, &oracle));
        }
    }
    cases.push(Case::at_most(
        "linear regression vs (1/N) X_e X_e^T",
        worst_linear,
        1e-10,
    ));

    let mut worst_logistic = 0.0f64;
    for _ in 0..5 {
        let x = random_data_matrix(&mut rng);
        let (n, big_n) = (x.rows(), x.cols());
        let y = Matrix::from_fn(1, big_n, |_, _| if rng.uniform() < 0.5 { 0.0 } else { 1.0 });
        let mlp = LogisticRegression::new(Dataset::new(x.clone(), y)?)?.as_mlp();
        // Parameters are [w, b]. Uncentered features still push some datasets deep
        // into saturation, where curvature is tiny.
        let mut p: Vec<f64> = rng.normal_vec(n + 1);
        let (_, std) = feature_moments(&x);
        for (w, s) in p.iter_mut().zip(&std) {
            *w *= 0.3 / s;
        }
        let (b, w) = (p[n], &p[..n]);
        let xe = extend(&x)?;
        let mut oracle = Matrix::zeros(n + 1, n + 1);
        for j in 0..big_n {
            let col = xe.column(j);
            let z = b + (0..n).map(|i| w[i] * x[(i, j)]).sum::<f64>();
            let s = 1.0 / (1.0 + (-z).exp());
            let c = s * (1.0 - s) / big_n as f64;
            oracle = oracle.add(&Matrix::from_fn(n + 1, n + 1, |r, k| c * col[r] * col[k]))?;
        }
        let parts = mlp.layer_hessian(&p, 1, 0)?;
        worst_logistic = worst_logistic.max(rel_frobenius(&parts.hessian, &oracle));
    }
    cases.push(Case::at_most(
        "logistic regression vs analytic Hessian",
        worst_logistic,
        1e-6,
    ));
    Ok(cases)
}

pub(super) fn theorem4_centering(seed: u64) -> Cases {
    let mut rng = SplitMix64::new(seed);
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_equal = 0.0f64;
    for _ in 0..100 {
        let x = random_data_matrix(&mut rng);
        let (kc, kr) = centering_inequality_check(&x)?;
        worst_gap = worst_gap.max(kc - kr);
        let (mean, _) = feature_moments(&x);
        let centered = Matrix::from_fn(x.rows(), x.cols(), |i, j| x[(i, j)] - mean[i]);
        let (kc, kr) = centering_inequality_check(&centered)?;
        worst_equal = worst_equal.max((kc - kr).abs() / kr);
    }
    Ok(vec![
        Case::at_most(
            "100 random X: max kappa(centered) - kappa(raw)",
            worst_gap,
            1e-10,
        ),
        Case::at_most(
            "pre-centered X: relative |kappa(centered) - kappa(raw)|",
            worst_equal,
            1e-10,
        ),
    ])
}

pub(super) fn standardization(seed: u64) -> Cases {
    let mut rng = SplitMix64::new(seed);
    let mut worst_norm = 0.0f64;
    let mut worst_sum = 0.0f64;
    for _ in 0..100 {
        let x = random_data_matrix(&mut rng);
        let root_n = (x.cols() as f64).sqrt();
        let z = standardize(&x).data;
        let ze = extend(&z)?;
        for i in 0..ze.rows() {
            worst_norm = worst_norm.max((norm(ze.row(i)) - root_n).abs());
        }
        for i in 0..z.rows() {
            worst_sum = worst_sum.max(z.row(i).iter().sum::<f64>().abs());
        }
    }
    Ok(vec![
        Case::at_most("100 random X: max | ||row|| - sqrt(N) |", worst_norm, 1e-10),
        Case::at_most(
            "100 random X: max |row sum| of standardized X",
            worst_sum,
            1e-10,
        ),
    ])
}

fn random_diag_preconditioner(
    rng: &mut SplitMix64,
    dim: usize,
    decades: f64,
) -> CliResult<FixedPreconditioner> {
    let d: Vec<f64> = (0..dim)
        .map(|_| rng.log_uniform(-decades, decades))
        .collect();
    Ok(FixedPreconditioner::diagonal(&d)?)
}

/// One gradient step in `z = P⁻¹p` on `L(Pz) + λ‖Pᵀ∇L(Pz)‖²`, given the
/// Hessian at `p`, mapped back to `p`.
fn grad_reg_z_oracle(
    model: &dyn Objective,
    hessian: &Matrix,
    p: &[f64],
    alpha: f64,
    lambda: f64,
    factor: &Matrix,
) -> CliResult<Vec<f64>> {
    let z = factor.lower_triangular_inverse()?.matvec(p)?;
    let gz = factor.tr_matvec(&model.gradient(p)?)?;
    let hz = factor.transpose().matmul(hessian)?.matmul(factor)?;
    let grad = axpy(&gz, 2.0 * lambda, &hz.matvec(&gz)?);
    Ok(factor.matvec(&axpy(&z, -alpha, &grad))?)
}

pub(super) fn reg_equivalence(seed: u64) -> Cases {
    let mut rng = SplitMix64::new(seed);
    let mut cases = Vec::new();

    // L2 in z: the weight-decay form against an explicit z-space run.
    let dim = 4;
    let q = Quadratic::random_spd(dim, 50.0, &mut rng);
    let m = random_diag_preconditioner(&mut rng, dim, 1.0)?;
    let factor = m.factor().clone();
    let lambda = 0.1;
    let hz = factor.transpose().matmul(q.matrix())?.matmul(&factor)?;
    let alpha = 1.0 / (sym_eigvals(&hz)?.max() + 2.0 * lambda);
    let p0 = rng.normal_vec(dim);
    let inv = factor.lower_triangular_inverse()?;
    let mut p = p0.clone();
    let mut z = inv.matvec(&p0)?;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        p = step_l2_in_z(&p, &q.gradient(&p)?, alpha, lambda, &m)?;
        let grad_z = axpy(
            &factor.tr_matvec(&q.gradient(&factor.matvec(&z)?)?)?,
            2.0 * lambda,
            &z,
        );
        z = axpy(&z, -alpha, &grad_z);
        worst = worst.max(distance(&p, &factor.matvec(&z)?));
    }
    cases.push(Case::at_most(
        "l2_in_z vs z-space GD, 100 steps",
        worst,
        1e-12,
    ));

    // Gradient regularization in z on quadratics, exact Hessian-vector products.
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let dim = 3 + rng.index(4);
        let q = Quadratic::random_spd(dim, 50.0, &mut rng);
        let m = random_diag_preconditioner(&mut rng, dim, 0.5)?;
        let mut p = rng.normal_vec(dim);
        for _ in 0..20 {
            let next = step_grad_reg_in_z(&q, &p, 0.002, 0.01, &m)?;
            let oracle = grad_reg_z_oracle(&q, q.matrix(), &p, 0.002, 0.01, m.factor())?;
            worst = worst.max(distance(&next, &oracle));
            p = next;
        }
    }
    cases.push(Case::at_most(
        "grad_reg_in_z vs z-space oracle, quadratics",
        worst,
        1e-10,
    ));

    // The same on networks, finite-difference products against a dense fd Hessian.
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let mlp = random_mlp(&mut rng)?;
        let p = mlp.spec().init_params(&mut rng);
        let m = random_diag_preconditioner(&mut rng, mlp.dim(), 0.5)?;
        let (alpha, lambda) = (0.1, 0.5);
        let next = step_grad_reg_in_z(&mlp, &p, alpha, lambda, &m)?;
        let h = fd_hessian(&mlp, &p, FD_HESSIAN_STEP)?;
        let oracle = grad_reg_z_oracle(&mlp, &h, &p, alpha, lambda, m.factor())?;
        worst = worst.max(distance(&next, &oracle) / distance(&oracle, &p).max(1e-300));
    }
    cases.push(Case::at_most(
        "grad_reg_in_z vs z-space oracle, MLPs (relative to step)",
        worst,
        1e-4,
    ));

    // At λ = 0 every scheme is plain preconditioned GD.
    let q = Quadratic::random_spd(5, 20.0, &mut rng);
    let m = random_diag_preconditioner(&mut rng, 5, 1.0)?;
    let p = rng.normal_vec(5);
    let g = q.gradient(&p)?;
    let plain = precond_gd_step(&p, &g, 0.01, &m)?;
    let worst = [
        step_l2_in_p(&p, &g, 0.01, 0.0, &m)?,
        step_l2_in_z(&p, &g, 0.01, 0.0, &m)?,
        step_grad_reg_in_p(&q, &p, 0.01, 0.0, &m)?,
        step_grad_reg_in_z(&q, &p, 0.01, 0.0, &m)?,
    ]
    .iter()
    .map(|s| distance(s, &plain))
    .fold(0.0, f64::max);
    cases.push(Case::at_most(
        "lambda 0: every scheme equals preconditioned GD",
        worst,
        0.0,
    ));
    Ok(cases)
}

pub(super) fn adamw_inequivalence(seed: u64) -> Cases {
    let mut rng = SplitMix64::new(seed);
    let dim = 5;
    let q = Quadratic::random_spd(dim, 100.0, &mut rng);
    let p0: Vec<f64> = (0..dim).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
    let grid: Vec<f64> = (0..13).map(|k| 10f64.powf(-6.0 + 0.5 * k as f64)).collect();

    let adam = verify_no_equivalence(
        &q,
        &p0,
        &Method::Adam,
        &OptimizerConfig::with_alpha(0.05),
        0.1,
        &grid,
        50,
    )?;
    let gd = verify_no_equivalence(
        &q,
        &p0,
        &Method::Gd,
        &OptimizerConfig::with_alpha(0.01),
        2e-3,
        &grid,
        50,
    )?;
    let matched = gd
        .distances
        .iter()
        .min_by(|a, b| (a.0 - 1e-3).abs().total_cmp(&(b.0 - 1e-3).abs()))
        .map(|d| d.1)
        .unwrap_or(f64::INFINITY);
    Ok(vec![
        Case::above(
            format!(
                "Adam: min over 13 lambdas of trajectory distance to AdamW (closest lambda {:.0e})",
                adam.best_lambda
            ),
            adam.min_distance,
            1e-3,
        ),
        Case::at_most(
            "GD: distance at matched lambda = lambda_w / 2",
            matched,
            1e-10,
        ),
    ])
}

pub(super) fn rmsprop_closed_form(seed: u64) -> Cases {
    let mut rng = SplitMix64::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let dim = 1 + rng.index(5);
        let t = 1 + rng.index(20);
        let rho = rng.uniform_range(0.5, 0.999);
        let grads: Vec<Vec<f64>> = (0..t)
            .map(|_| {
                let s = rng.log_uniform(-2.0, 2.0);
                rng.normal_vec(dim).into_iter().map(|g| s * g).collect()
            })
            .collect();
        let cfg = OptimizerConfig {
            rho,
            ..OptimizerConfig::with_alpha(0.01)
        };
        let mut state = OptimizerState::new(dim);
        let mut p = vec![0.0; dim];
        for g in &grads {
            p = rmsprop_step(&mut state, &p, g, &cfg)?;
        }
        let closed = rmsprop_reference(&grads, rho)?;
        for (r, c) in state.r.iter().zip(&closed) {
            worst = worst.max((r - c).abs() / c.abs().max(f64::MIN_POSITIVE));
        }
    }
    Ok(vec![Case::at_most(
        "100 sequences, t <= 20: relative |recursion - closed form|",
        worst,
        1e-12,
    )])
}

fn random_stats(rng: &mut SplitMix64, width: usize) -> BatchStats {
    BatchStats {
        mu: (0..width).map(|_| rng.uniform_range(-5.0, 5.0)).collect(),
        sigma: (0..width).map(|_| rng.log_uniform(-2.0, 2.0)).collect(),
        count: 16,
    }
}

pub(super) fn bnp_vector_form(seed: u64) -> Cases {
    let mut rng = SplitMix64::new(seed);
    let mut cases = Vec::new();

    let mut worst = 0.0f64;
    for _ in 0..500 {
        let width = 1 + rng.index(12);
        let stats = random_stats(&mut rng, width);
        let g_b = rng.normal();
        let g_w = rng.normal_vec(width);
        let (b, w) = bnp_apply(g_b, &g_w, &stats, DEFAULT_SIGMA_FLOOR)?;
        let (_, _, p) = bnp_matrices(&stats, DEFAULT_SIGMA_FLOOR)?;
        let ppt = p.matmul(&p.transpose())?;
        let full: Vec<f64> = std::iter::once(g_b).chain(g_w).collect();
        let dense = ppt.matvec(&full)?;
        let scale = ppt.max_abs() * full.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let err = std::iter::once(b)
            .chain(w)
            .zip(&dense)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        worst = worst.max(err / scale);
    }
    cases.push(Case::at_most(
        "500 trials: |bnp_apply - dense PP^T g| / (|PP^T|max |g|max)",
        worst,
        1e-12,
    ));

    let mut worst = 0.0f64;
    for _ in 0..10 {
        let mlp = random_mlp(&mut rng)?;
        let spec = mlp.spec();
        let p = spec.init_params(&mut rng);
        let neutral: Vec<_> = spec.widths()[..spec.layers()]
            .iter()
            .map(|&w| BnpPreconditioner::neutral(w))
            .collect();
        let bnp = bnp_step(spec, &p, mlp.data(), 0.1, &neutral)?;
        let gd = gd_step(&p, &mlp.gradient(&p)?, 0.1);
        worst = worst.max(distance(&bnp, &gd));
    }
    cases.push(Case::at_most(
        "stats (0, 1): bnp_step - gd_step, 10 networks",
        worst,
        0.0,
    ));

    let (mut worst_mean, mut worst_norm, mut worst_pt) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let width = 1 + rng.index(6);
        let big_n = 5 + rng.index(40);
        let mu: Vec<f64> = (0..width).map(|_| rng.uniform_range(-5.0, 5.0)).collect();
        let sd: Vec<f64> = (0..width).map(|_| rng.log_uniform(-1.0, 2.0)).collect();
        let h = Matrix::from_fn(width, big_n, |i, _| mu[i] + sd[i] * rng.normal());
        let stats = batch_stats(&h)?;
        let g = standardized_inputs(&h, &stats, DEFAULT_SIGMA_FLOOR)?;
        for i in 0..width {
            let row = g.row(i);
            worst_mean = worst_mean.max((row.iter().sum::<f64>() / big_n as f64).abs());
            worst_norm = worst_norm.max((norm(row) - (big_n as f64).sqrt()).abs());
        }
        let (_, _, p) = bnp_matrices(&stats, DEFAULT_SIGMA_FLOOR)?;
        let lhs = p.transpose().matmul(&extend(&h)?)?;
        let rhs = extend(&g)?;
        worst_pt = worst_pt.max(lhs.sub(&rhs)?.max_abs() / rhs.max_abs());
    }
    cases.push(Case::at_most(
        "standardized inputs G: max |row mean|",
        worst_mean,
        1e-10,
    ));
    cases.push(Case::at_most(
        "standardized inputs G: max | ||row|| - sqrt(N) |",
        worst_norm,
        1e-10,
    ));
    cases.push(Case::at_most("P^T H_e vs G_e, relative", worst_pt, 1e-12));
    Ok(cases)
}

/// Synthetic regression with feature stds log-spaced over `[1, 10³]` and means in `[1, 10]`.
pub fn ill_scaled_regression(seed: u64) -> CliResult<LinearRegression> {
    let n = 5;
    let mut spec = SyntheticSpec::new(n, 200, seed);
    spec.scales = (0..n)
        .map(|i| 10f64.powf(3.0 * i as f64 / (n - 1) as f64))
        .collect();
    let mut rng = stream(seed, 0xB9);
    spec.means = (0..n).map(|_| rng.uniform_range(1.0, 10.0)).collect();
    Ok(LinearRegression::new(generate_synthetic(&spec)?))
}

fn final_loss_or_inf(outcome: precond_core::Result<f64>) -> CliResult<f64> {
    match outcome {
        Ok(loss) => Ok(loss),
        Err(Error::Diverged { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e.into()),
    }
}

pub(super) fn bnp_conditioning(seed: u64) -> Cases {
    let lr = ill_scaled_regression(seed)?;
    let mlp = lr.as_mlp();
    let p0 = vec![0.0; lr.dim()];
    let (raw, bnp) = layer_conditioning_report(&mlp, &p0, 1, 0, DEFAULT_SIGMA_FLOOR)?;

    let alphas: Vec<f64> = (-40..=4).map(|k| 10f64.powf(k as f64 / 4.0)).collect();
    let gd: Vec<f64> = alphas
        .par_iter()
        .map(|&alpha| {
            let outcome = Optimizer::new(Method::Gd, OptimizerConfig::with_alpha(alpha), lr.dim())
                .and_then(|mut opt| run(&lr, &mut opt, 100, &p0))
                .map(|r| r.summary.final_loss);
            final_loss_or_inf(outcome)
        })
        .collect::<CliResult<_>>()?;
    let bnp_losses: Vec<f64> = alphas
        .par_iter()
        .map(|&alpha| {
            let outcome =
                BnpTrainer::new(mlp.clone(), alpha, DEFAULT_SIGMA_FLOOR, Averaging::PerBatch)
                    .and_then(|mut t| run(&mlp, &mut t, 100, &p0))
                    .map(|r| r.summary.final_loss);
            final_loss_or_inf(outcome)
        })
        .collect::<CliResult<_>>()?;
    let best = |losses: &[f64]| {
        losses
            .iter()
            .zip(&alphas)
            .min_by(|a, b| a.0.total_cmp(b.0))
            .map(|(l, a)| (*l, *a))
            .expect("nonempty grid")
    };
    let (gd_loss, gd_alpha) = best(&gd);
    let (bnp_loss, bnp_alpha) = best(&bnp_losses);
    Ok(vec![
        Case::at_most(
            format!("input layer kappa ratio bnp/raw (raw {raw:.3e}, bnp {bnp:.3e})"),
            bnp / raw,
            0.1,
        ),
        Case::at_most(
            format!("100-step loss: BNP (alpha {bnp_alpha:.1e}) vs best GD {gd_loss:.6e} (alpha {gd_alpha:.1e})"),
            bnp_loss,
            gd_loss,
        ),
    ])
}

pub(super) fn gradient_proxy(seed: u64) -> Cases {
    let mut cases = Vec::new();
    for spectrum in [[1.0, 10.0, 100.0], [100.0, 1.0, 10.0], [10.0, 100.0, 1.0]] {
        let q = Quadratic::diagonal(&spectrum);
        let proxy = grad_hessian_row_proxy(&q, &[0.0; 3], 1000, 1e-3, seed)?;
        cases.push(Case::at_least(
            format!("diag{spectrum:?}: correlation of averaged |g_i| with ||h_i||"),
            proxy.correlation(),
            0.95,
        ));
    }
    // A single iterate whose offset from p* is orthogonal to the largest row.
    let mut rng = SplitMix64::new(seed);
    let q = Quadratic::random_spd(5, 100.0, &mut rng);
    let a = q.matrix();
    let i = (0..5)
        .max_by(|&x, &y| norm(a.row(x)).total_cmp(&norm(a.row(y))))
        .expect("nonempty");
    let h = a.row(i).to_vec();
    let d = rng.normal_vec(5);
    let d = axpy(
        &d,
        -precond_core::matrix::dot(&d, &h) / norm(&h).powi(2),
        &h,
    );
    let g = q.gradient(&d)?;
    cases.push(Case::below(
        format!("orthogonal iterate: |g_{i}| / ||h_{i}||"),
        g[i].abs() / norm(&h),
        1e-6,
    ));
    cases.push(Case::above("orthogonal iterate: ||g||", norm(&g), 1e-3));
    Ok(cases)
}
