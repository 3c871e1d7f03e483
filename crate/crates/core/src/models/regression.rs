use super::mlp::{Activation, LossKind, Mlp, MlpSpec};
use super::{sigmoid, softplus, Dataset, Objective, ParamVector};
use crate::error::{Error, Result};
use crate::linalg::extend;
use crate::matrix::{dot, Matrix};

/// Least squares `L = (1/N) Σ ½‖W x_j + b − y_j‖²`.
///
/// Parameters are `W` (`m × n`, row-major) followed by `b` (`m`).
#[derive(Debug, Clone)]
pub struct LinearRegression {
    data: Dataset,
}

impl LinearRegression {
    pub fn new(data: Dataset) -> Self {
        Self { data }
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    /// The same model as a network with no hidden layer.
    pub fn as_mlp(&self) -> Mlp {
        let spec = MlpSpec::new(
            vec![self.data.features(), self.data.outputs()],
            Activation::Identity,
            LossKind::SquaredError,
        )
        .expect("widths are positive");
        Mlp::new(spec, self.data.clone()).expect("dataset matches widths")
    }

    fn residuals(&self, p: &[f64]) -> Result<Matrix> {
        self.check_dim(p)?;
        let (n, m) = (self.data.features(), self.data.outputs());
        let x = self.data.inputs();
        let y = self.data.targets();
        Ok(Matrix::from_fn(m, self.data.samples(), |k, j| {
            let w = &p[k * n..(k + 1) * n];
            let mut s = p[m * n + k];
            for (i, wi) in w.iter().enumerate() {
                s += wi * x[(i, j)];
            }
            s - y[(k, j)]
        }))
    }
}

impl Objective for LinearRegression {
    fn dim(&self) -> usize {
        (self.data.features() + 1) * self.data.outputs()
    }

    fn loss(&self, p: &[f64]) -> Result<f64> {
        let r = self.residuals(p)?;
        Ok(0.5 * r.frobenius_norm().powi(2) / self.data.samples() as f64)
    }

    fn gradient(&self, p: &[f64]) -> Result<ParamVector> {
        let r = self.residuals(p)?;
        let (n, m, big_n) = (
            self.data.features(),
            self.data.outputs(),
            self.data.samples(),
        );
        let x = self.data.inputs();
        let mut g = vec![0.0; self.dim()];
        for k in 0..m {
            for j in 0..big_n {
                let rk = r[(k, j)] / big_n as f64;
                for i in 0..n {
                    g[k * n + i] += rk * x[(i, j)];
                }
                g[m * n + k] += rk;
            }
        }
        Ok(g)
    }

    /// Block diagonal with one `(1/N) X_e X_eᵀ` block per output.
    fn hessian(&self, p: &[f64]) -> Result<Matrix> {
        self.check_dim(p)?;
        let (n, m) = (self.data.features(), self.data.outputs());
        let xe = extend(self.data.inputs())?;
        let block = xe.gram_rows().scaled(1.0 / self.data.samples() as f64);
        Ok(scatter_unit_blocks(&block, n, m))
    }

    fn exact_hvp(&self, p: &[f64], v: &[f64]) -> Option<Result<Vec<f64>>> {
        Some(self.hessian(p).and_then(|h| h.matvec(v)))
    }

    /// Solves the normal equations per output; `None` if `X_e X_eᵀ` is singular.
    fn optimum(&self) -> Option<ParamVector> {
        let (n, m) = (self.data.features(), self.data.outputs());
        let xe = extend(self.data.inputs()).ok()?;
        let gram = xe.gram_rows();
        let mut p = vec![0.0; self.dim()];
        for k in 0..m {
            let rhs = xe.matvec(self.data.targets().row(k)).ok()?;
            let sol = gram.spd_solve(&rhs).ok()?;
            p[m * n + k] = sol[0];
            p[k * n..(k + 1) * n].copy_from_slice(&sol[1..]);
        }
        Some(p)
    }
}

/// Places a `(n+1) × (n+1)` block in `[b, w]` order into every unit's slot of
/// a `[W row-major, b]` parameter layout.
fn scatter_unit_blocks(block: &Matrix, n: usize, m: usize) -> Matrix {
    let dim = (n + 1) * m;
    let mut h = Matrix::zeros(dim, dim);
    for k in 0..m {
        let idx: Vec<usize> = std::iter::once(m * n + k)
            .chain((0..n).map(|i| k * n + i))
            .collect();
        for (a, &ia) in idx.iter().enumerate() {
            for (b, &ib) in idx.iter().enumerate() {
                h[(ia, ib)] = block[(a, b)];
            }
        }
    }
    h
}

/// Binary logistic regression with cross-entropy,
/// `L = (1/N) Σ [ln(1 + e^{z_j}) − y_j z_j]`, `z_j = wᵀx_j + b`.
///
/// Parameters are `w` (`n`) followed by `b`. Targets are a single row with
/// entries in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    data: Dataset,
}

impl LogisticRegression {
    pub fn new(data: Dataset) -> Result<Self> {
        if data.outputs() != 1 {
            return Err(Error::validation(format!(
                "logistic regression needs one target row, got {}",
                data.outputs()
            )));
        }
        if data
            .targets()
            .row(0)
            .iter()
            .any(|&y| !(0.0..=1.0).contains(&y))
        {
            return Err(Error::validation("logistic targets must lie in [0, 1]"));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn as_mlp(&self) -> Mlp {
        let spec = MlpSpec::new(
            vec![self.data.features(), 1],
            Activation::Identity,
            LossKind::CrossEntropy,
        )
        .expect("widths are positive");
        Mlp::new(spec, self.data.clone()).expect("dataset matches widths")
    }

    fn logits(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(p)?;
        let n = self.data.features();
        Ok((0..self.data.samples())
            .map(|j| dot(&p[..n], &self.data.input(j)) + p[n])
            .collect())
    }

    /// Predicted probabilities `ŷ_j = σ(z_j)`.
    pub fn predictions(&self, p: &[f64]) -> Result<Vec<f64>> {
        Ok(self.logits(p)?.into_iter().map(sigmoid).collect())
    }
}

impl Objective for LogisticRegression {
    fn dim(&self) -> usize {
        self.data.features() + 1
    }

    fn loss(&self, p: &[f64]) -> Result<f64> {
        let z = self.logits(p)?;
        let y = self.data.targets().row(0);
        let total: f64 = z.iter().zip(y).map(|(&z, &y)| softplus(z) - y * z).sum();
        Ok(total / self.data.samples() as f64)
    }

    fn gradient(&self, p: &[f64]) -> Result<ParamVector> {
        let yhat = self.predictions(p)?;
        let y = self.data.targets().row(0);
        let n = self.data.features();
        let big_n = self.data.samples() as f64;
        let mut g = vec![0.0; n + 1];
        for (j, (&yh, &yj)) in yhat.iter().zip(y).enumerate() {
            let r = (yh - yj) / big_n;
            for i in 0..n {
                g[i] += r * self.data.inputs()[(i, j)];
            }
            g[n] += r;
        }
        Ok(g)
    }

    /// `X_e diag{ŷ_j(1 − ŷ_j)/N} X_eᵀ`, permuted into `[w, b]` order.
    fn hessian(&self, p: &[f64]) -> Result<Matrix> {
        let yhat = self.predictions(p)?;
        let n = self.data.features();
        let big_n = self.data.samples() as f64;
        let xe = extend(self.data.inputs())?;
        let weights: Vec<f64> = yhat.iter().map(|y| y * (1.0 - y) / big_n).collect();
        let block = weighted_gram(&xe, &weights);
        Ok(scatter_unit_blocks(&block, n, 1))
    }

    fn exact_hvp(&self, p: &[f64], v: &[f64]) -> Option<Result<Vec<f64>>> {
        Some(self.hessian(p).and_then(|h| h.matvec(v)))
    }
}

/// `A diag(s) Aᵀ`.
pub(crate) fn weighted_gram(a: &Matrix, s: &[f64]) -> Matrix {
    let r = a.rows();
    let mut g = Matrix::zeros(r, r);
    for i in 0..r {
        for k in i..r {
            let v: f64 = a
                .row(i)
                .iter()
                .zip(a.row(k))
                .zip(s)
                .map(|((x, y), w)| x * y * w)
                .sum();
            g[(i, k)] = v;
            g[(k, i)] = v;
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{distance, norm};
    use crate::models::{fd_gradient, fd_hessian, FD_GRADIENT_STEP, FD_HESSIAN_STEP};
    use crate::rng::SplitMix64;

    fn regression_data(rng: &mut SplitMix64, n: usize, m: usize, big_n: usize) -> Dataset {
        let x = Matrix::from_fn(n, big_n, |i, _| (1.0 + i as f64) * rng.normal() + 0.5);
        let y = Matrix::from_fn(m, big_n, |_, _| rng.normal());
        Dataset::new(x, y).unwrap()
    }

    fn labels(rng: &mut SplitMix64, n: usize, big_n: usize) -> Dataset {
        let x = Matrix::from_fn(n, big_n, |_, _| rng.normal());
        let y = Matrix::from_fn(1, big_n, |_, _| if rng.uniform() < 0.5 { 0.0 } else { 1.0 });
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn least_squares_loss_matches_normal_equations() {
        let mut rng = SplitMix64::new(1);
        let data = regression_data(&mut rng, 3, 1, 40);
        let model = LinearRegression::new(data.clone());
        let p = model.optimum().unwrap();
        assert!(norm(&model.gradient(&p).unwrap()) <= 1e-8);

        // Independent route: solve the 4x4 normal equations by Gaussian
        // elimination on [X; 1].
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|j| {
                let mut r = data.input(j);
                r.push(1.0);
                r
            })
            .collect();
        let y = data.targets().row(0).to_vec();
        let mut ata = [[0.0; 4]; 4];
        let mut aty = [0.0; 4];
        for (r, yj) in rows.iter().zip(&y) {
            for a in 0..4 {
                aty[a] += r[a] * yj;
                for b in 0..4 {
                    ata[a][b] += r[a] * r[b];
                }
            }
        }
        let sol = gauss_solve(ata, aty);
        let rss: f64 = rows
            .iter()
            .zip(&y)
            .map(|(r, yj)| (dot(r, &sol) - yj).powi(2))
            .sum();
        let expected = rss / (2.0 * 40.0);
        assert!((model.loss(&p).unwrap() - expected).abs() < 1e-12);
    }

    fn gauss_solve(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Vec<f64> {
        for c in 0..4 {
            let piv = (c..4)
                .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
                .unwrap();
            a.swap(c, piv);
            b.swap(c, piv);
            for r in c + 1..4 {
                let f = a[r][c] / a[c][c];
                for k in c..4 {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; 4];
        for r in (0..4).rev() {
            let s: f64 = (r + 1..4).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    #[test]
    fn logistic_at_zero_with_balanced_labels_is_ln2() {
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.0, 0.5]]).unwrap();
        let y = Matrix::from_rows(&[[0.0, 1.0, 1.0, 0.0]]).unwrap();
        let model = LogisticRegression::new(Dataset::new(x, y).unwrap()).unwrap();
        assert!((model.loss(&[0.0, 0.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn logistic_hessian_at_zero_is_quarter_gram() {
        let mut rng = SplitMix64::new(2);
        let data = labels(&mut rng, 3, 25);
        let model = LogisticRegression::new(data.clone()).unwrap();
        let h = model.hessian(&[0.0; 4]).unwrap();
        let xe = extend(data.inputs()).unwrap();
        let expected = scatter_unit_blocks(&xe.gram_rows().scaled(0.25 / 25.0), 3, 1);
        assert!(h.sub(&expected).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn gradients_match_fd() {
        let mut rng = SplitMix64::new(3);
        for _ in 0..20 {
            let lin = LinearRegression::new(regression_data(&mut rng, 3, 2, 15));
            let p = rng.normal_vec(lin.dim());
            let g = lin.gradient(&p).unwrap();
            let fd = fd_gradient(&lin, &p, FD_GRADIENT_STEP).unwrap();
            assert!(distance(&g, &fd) <= 1e-6 * norm(&g));

            let log = LogisticRegression::new(labels(&mut rng, 4, 15)).unwrap();
            let p = rng.normal_vec(log.dim());
            let g = log.gradient(&p).unwrap();
            let fd = fd_gradient(&log, &p, FD_GRADIENT_STEP).unwrap();
            assert!(distance(&g, &fd) <= 1e-6 * norm(&g));
        }
    }

    #[test]
    fn hessians_match_fd() {
        let mut rng = SplitMix64::new(4);
        let lin = LinearRegression::new(regression_data(&mut rng, 3, 2, 15));
        let p = rng.normal_vec(lin.dim());
        let h = lin.hessian(&p).unwrap();
        let fd = fd_hessian(&lin, &p, FD_HESSIAN_STEP).unwrap();
        assert!(h.sub(&fd).unwrap().frobenius_norm() <= 1e-6 * h.frobenius_norm());

        let log = LogisticRegression::new(labels(&mut rng, 3, 30)).unwrap();
        let p = rng.normal_vec(log.dim());
        let h = log.hessian(&p).unwrap();
        let fd = fd_hessian(&log, &p, FD_HESSIAN_STEP).unwrap();
        assert!(h.sub(&fd).unwrap().frobenius_norm() <= 1e-6 * h.frobenius_norm());
    }

    #[test]
    fn mlp_views_agree() {
        let mut rng = SplitMix64::new(5);
        let lin = LinearRegression::new(regression_data(&mut rng, 2, 3, 10));
        let mlp = lin.as_mlp();
        let p = rng.normal_vec(lin.dim());
        assert!((lin.loss(&p).unwrap() - mlp.loss(&p).unwrap()).abs() < 1e-13);
        assert!(distance(&lin.gradient(&p).unwrap(), &mlp.gradient(&p).unwrap()) < 1e-13);

        let log = LogisticRegression::new(labels(&mut rng, 3, 10)).unwrap();
        let mlp = log.as_mlp();
        let p = rng.normal_vec(log.dim());
        assert!((log.loss(&p).unwrap() - mlp.loss(&p).unwrap()).abs() < 1e-13);
        assert!(distance(&log.gradient(&p).unwrap(), &mlp.gradient(&p).unwrap()) < 1e-13);
    }

    #[test]
    fn rejects_bad_targets() {
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let y = Matrix::from_rows(&[[0.0, 2.0]]).unwrap();
        assert!(LogisticRegression::new(Dataset::new(x, y).unwrap()).is_err());
    }
}
