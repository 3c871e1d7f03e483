//! Dense symmetric eigenvalues and the conditioning utilities built on them.
//!
//! Data matrices follow the column-per-sample convention: an `n × N` matrix
//! holds `N` samples of `n` features, so a feature is a row.

use crate::error::{Error, Result};
use crate::matrix::{norm, Matrix};

const MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-12;
/// `λ_min ≤ SINGULAR_RATIO · λ_max` is treated as singular.
const SINGULAR_RATIO: f64 = 1e-14;
/// Feature variances at or below this are treated as constant.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
///
/// When present, column `k` of `eigenvectors` pairs with `eigenvalues[k]`.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Option<Matrix>,
}

impl SymEig {
    pub fn min(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn sym_eigvals(a: &Matrix) -> Result<SymEig> {
    jacobi(a, false)
}

/// Eigenvalues and orthonormal eigenvectors of a symmetric matrix.
pub fn sym_eig(a: &Matrix) -> Result<SymEig> {
    jacobi(a, true)
}

fn jacobi(a: &Matrix, want_vectors: bool) -> Result<SymEig> {
    if !a.is_square() {
        return Err(Error::validation(format!(
            "eigenvalues need a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_symmetric(SYMMETRY_TOL) {
        return Err(Error::validation("matrix is not symmetric"));
    }
    let n = a.rows();
    let mut m = a.symmetrized();
    let mut v = want_vectors.then(|| Matrix::identity(n));
    let tol = 1e-12 * a.frobenius_norm();

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&m) <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                if let Some(v) = v.as_mut() {
                    for k in 0..n {
                        let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    if !converged && off_diagonal_norm(&m) > tol {
        return Err(Error::numerical(format!(
            "Jacobi iteration did not converge in {MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let eigenvalues = order.iter().map(|&i| m[(i, i)]).collect();
    let eigenvectors = v.map(|v| Matrix::from_fn(n, n, |i, k| v[(i, order[k])]));
    Ok(SymEig {
        eigenvalues,
        eigenvectors,
    })
}

fn off_diagonal_norm(m: &Matrix) -> f64 {
    let n = m.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += m[(i, j)] * m[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Spectral condition number `λ_max / λ_min` of a symmetric positive definite matrix.
pub fn condition_number(a: &Matrix) -> Result<f64> {
    let eig = sym_eigvals(a)?;
    kappa_from_eigs(eig.min(), eig.max())
}

pub(crate) fn kappa_from_eigs(lambda_min: f64, lambda_max: f64) -> Result<f64> {
    if lambda_max <= 0.0 || lambda_min <= SINGULAR_RATIO * lambda_max {
        return Err(Error::Singular {
            lambda_min,
            lambda_max,
        });
    }
    Ok(lambda_max / lambda_min)
}

/// Ratio of largest to smallest singular value of a rectangular matrix,
/// taken through the eigenvalues of the smaller Gram matrix.
pub fn rect_condition_number(a: &Matrix) -> Result<f64> {
    let gram = if a.rows() <= a.cols() {
        a.gram_rows()
    } else {
        a.gram_cols()
    };
    Ok(condition_number(&gram)?.sqrt())
}

/// Diagonal `D = t · diag(1/‖a_i‖)` that scales every row of `A` to norm `t`.
pub fn row_equilibrate(a: &Matrix, t: f64) -> Result<Matrix> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::validation(format!(
            "scale t must be positive, got {t}"
        )));
    }
    let mut d = Vec::with_capacity(a.rows());
    for i in 0..a.rows() {
        let r = norm(a.row(i));
        if r == 0.0 {
            return Err(Error::validation(format!("row {i} is zero")));
        }
        d.push(t / r);
    }
    Ok(Matrix::from_diag(&d))
}

/// Prepends a row of ones: `X_e = [eᵀ; X]`.
pub fn extend(x: &Matrix) -> Result<Matrix> {
    if x.cols() == 0 {
        return Err(Error::validation(
            "cannot extend a data matrix with no samples",
        ));
    }
    let mut data = vec![1.0; x.cols()];
    data.extend_from_slice(x.as_slice());
    Matrix::new(x.rows() + 1, x.cols(), data)
}

/// Per-feature population mean and standard deviation.
pub fn feature_moments(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = x.cols() as f64;
    let mut mean = Vec::with_capacity(x.rows());
    let mut std = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = x.row(i);
        let mu = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        mean.push(mu);
        std.push(var.sqrt());
    }
    (mean, std)
}

#[derive(Debug, Clone)]
pub struct Standardized {
    pub data: Matrix,
    pub mean: Vec<f64>,
    /// Divisors actually applied; constant features report 1.
    pub std: Vec<f64>,
}

/// Centers every feature and divides by its population standard deviation.
pub fn standardize(x: &Matrix) -> Standardized {
    let (mean, raw_std) = feature_moments(x);
    let std: Vec<f64> = raw_std
        .iter()
        .map(|&s| if s * s <= VARIANCE_FLOOR { 1.0 } else { s })
        .collect();
    let data = Matrix::from_fn(x.rows(), x.cols(), |i, j| (x[(i, j)] - mean[i]) / std[i]);
    Standardized { data, mean, std }
}

/// Maps each feature affinely onto `[0, 1]`; constant features become 0.
pub fn min_max_normalize(x: &Matrix) -> Matrix {
    let bounds: Vec<(f64, f64)> = (0..x.rows())
        .map(|i| {
            x.row(i)
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                })
        })
        .collect();
    Matrix::from_fn(x.rows(), x.cols(), |i, j| {
        let (lo, hi) = bounds[i];
        if hi > lo {
            (x[(i, j)] - lo) / (hi - lo)
        } else {
            0.0
        }
    })
}

/// Condition numbers of `[eᵀ; X − μeᵀ]` and `[eᵀ; X]`, in that order.
///
/// Both stacked matrices must have full row rank.
pub fn centering_inequality_check(x: &Matrix) -> Result<(f64, f64)> {
    let raw = extend(x)?;
    let (mean, _) = feature_moments(x);
    let centered = Matrix::from_fn(x.rows(), x.cols(), |i, j| x[(i, j)] - mean[i]);
    let centered = extend(&centered)?;
    let kappa_centered = condition_number(&centered.gram_rows())?.sqrt();
    let kappa_raw = condition_number(&raw.gram_rows())?.sqrt();
    Ok((kappa_centered, kappa_raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_symmetric(n: usize, rng: &mut SplitMix64) -> Matrix {
        let b = Matrix::from_fn(n, n, |_, _| rng.normal());
        b.add(&b.transpose()).unwrap().scaled(0.5)
    }

    #[test]
    fn identity_eigenvalues() {
        let eig = sym_eigvals(&Matrix::identity(3)).unwrap();
        assert_eq!(eig.eigenvalues, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn two_by_two_eigenvalues() {
        let a = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let eig = sym_eigvals(&a).unwrap();
        assert!((eig.eigenvalues[0] - 1.0).abs() < 1e-14);
        assert!((eig.eigenvalues[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn eigen_decomposition_reconstructs() {
        let mut rng = SplitMix64::new(11);
        for n in 1..9 {
            let a = random_symmetric(n, &mut rng);
            let eig = sym_eig(&a).unwrap();
            let q = eig.eigenvectors.clone().unwrap();
            let qlq = q
                .matmul(&Matrix::from_diag(&eig.eigenvalues))
                .unwrap()
                .matmul(&q.transpose())
                .unwrap();
            let err = qlq.sub(&a).unwrap().frobenius_norm();
            assert!(err <= 1e-10 * a.frobenius_norm(), "n={n} err={err}");
            let qtq = q.transpose().matmul(&q).unwrap();
            assert!(qtq.sub(&Matrix::identity(n)).unwrap().max_abs() < 1e-12);
            assert!(eig.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn rejects_non_square_and_asymmetric() {
        let rect = Matrix::zeros(2, 3);
        assert!(matches!(sym_eigvals(&rect), Err(Error::Validation(_))));
        let asym = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eigvals(&asym), Err(Error::Validation(_))));
    }

    #[test]
    fn zero_matrix_has_zero_spectrum() {
        let eig = sym_eigvals(&Matrix::zeros(3, 3)).unwrap();
        assert_eq!(eig.eigenvalues, vec![0.0; 3]);
    }

    #[test]
    fn condition_number_examples() {
        assert_eq!(condition_number(&Matrix::identity(4)).unwrap(), 1.0);
        assert_eq!(
            condition_number(&Matrix::from_diag(&[1.0, 4.0])).unwrap(),
            4.0
        );
        let a = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        assert!((condition_number(&a).unwrap() - 3.0).abs() < 1e-13);
    }

    #[test]
    fn condition_number_singular() {
        let a = Matrix::from_diag(&[0.0, 2.0]);
        match condition_number(&a) {
            Err(Error::Singular {
                lambda_min,
                lambda_max,
            }) => {
                assert_eq!(lambda_min, 0.0);
                assert_eq!(lambda_max, 2.0);
            }
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn row_equilibrate_examples() {
        let a = Matrix::from_diag(&[1.0, 100.0]);
        let d = row_equilibrate(&a, 1.0).unwrap();
        assert_eq!(d.diagonal(), vec![1.0, 0.01]);
        let da = d.matmul(&a).unwrap();
        assert!((condition_number(&da).unwrap() - 1.0).abs() < 1e-14);

        let b = Matrix::from_rows(&[[3.0, 4.0], [0.0, 5.0], [5.0, 0.0]]).unwrap();
        let d = row_equilibrate(&b, 1.0).unwrap();
        assert_eq!(d.diagonal(), vec![0.2; 3]);
    }

    #[test]
    fn row_equilibrate_zero_row_names_index() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [0.0, 0.0]]).unwrap();
        match row_equilibrate(&a, 1.0) {
            Err(Error::Validation(msg)) => assert!(msg.contains("row 1")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn extend_examples() {
        let x = Matrix::from_rows(&[[2.0, 3.0]]).unwrap();
        let xe = extend(&x).unwrap();
        assert_eq!(xe.as_slice(), &[1.0, 1.0, 2.0, 3.0]);
        assert_eq!(xe.without_first_row(), x);
        assert!(extend(&Matrix::zeros(2, 0)).is_err());
    }

    #[test]
    fn standardize_examples() {
        let x = Matrix::from_rows(&[[1.0, 3.0]]).unwrap();
        let s = standardize(&x);
        assert_eq!(s.data.as_slice(), &[-1.0, 1.0]);
        assert_eq!(s.mean, vec![2.0]);
        assert_eq!(s.std, vec![1.0]);

        let again = standardize(&s.data);
        assert!(again.data.sub(&s.data).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn standardize_constant_feature_uses_unit_divisor() {
        let x = Matrix::from_rows(&[[5.0, 5.0, 5.0], [1.0, 2.0, 3.0]]).unwrap();
        let s = standardize(&x);
        assert_eq!(s.std[0], 1.0);
        assert_eq!(s.data.row(0), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn standardized_rows_have_norm_sqrt_n() {
        let mut rng = SplitMix64::new(5);
        let x = Matrix::from_fn(5, 50, |i, _| {
            3.0 * i as f64 + (1.0 + i as f64) * rng.normal()
        });
        let xe = extend(&standardize(&x).data).unwrap();
        for i in 0..xe.rows() {
            assert!((norm(xe.row(i)) - 50f64.sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn min_max_examples() {
        let x = Matrix::from_rows(&[[2.0, 4.0, 6.0], [7.0, 7.0, 7.0]]).unwrap();
        let y = min_max_normalize(&x);
        assert_eq!(y.row(0), &[0.0, 0.5, 1.0]);
        assert_eq!(y.row(1), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn min_max_row_one_norms_bounded_by_n() {
        let mut rng = SplitMix64::new(8);
        let x = Matrix::from_fn(4, 30, |i, _| 10f64.powi(i as i32) * rng.normal());
        let xe = extend(&min_max_normalize(&x)).unwrap();
        for i in 0..xe.rows() {
            let l1: f64 = xe.row(i).iter().map(|v| v.abs()).sum();
            assert!(l1 <= 30.0 + 1e-12);
        }
    }

    #[test]
    fn centering_no_op_on_centered_data() {
        let x = Matrix::from_rows(&[[1.0, -1.0, 2.0, -2.0], [0.5, 0.5, -1.0, 0.0]]).unwrap();
        let (kc, kr) = centering_inequality_check(&x).unwrap();
        assert!((kc - kr).abs() <= 1e-12 * kr);
    }

    #[test]
    fn centering_improves_shifted_data() {
        let mut rng = SplitMix64::new(21);
        let x = Matrix::from_fn(3, 20, |_, _| 10.0 + rng.normal());
        let (kc, kr) = centering_inequality_check(&x).unwrap();
        assert!(kc < kr, "{kc} vs {kr}");
    }

    #[test]
    fn centering_single_sample_is_rank_deficient() {
        let x = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert!(matches!(
            centering_inequality_check(&x),
            Err(Error::Singular { .. })
        ));
    }
}
