use super::Objective;
use crate::error::{Error, Result};
use crate::matrix::{axpy, norm};
use crate::rng::SplitMix64;

/// Averaged gradient magnitudes near a minimizer next to the true Hessian row norms.
#[derive(Debug, Clone)]
pub struct GradientProxy {
    pub avg_abs_grad: Vec<f64>,
    pub hessian_row_norms: Vec<f64>,
}

impl GradientProxy {
    pub fn correlation(&self) -> f64 {
        pearson_correlation(&self.avg_abs_grad, &self.hessian_row_norms)
    }
}

/// Averages `|∇L(p* + δ)|` over `num_samples` perturbations `δ` drawn
/// uniformly from the sphere of the given radius.
pub fn grad_hessian_row_proxy(
    model: &dyn Objective,
    p_star: &[f64],
    num_samples: usize,
    radius: f64,
    seed: u64,
) -> Result<GradientProxy> {
    let g0 = model.gradient(p_star)?;
    if norm(&g0) > 1e-6 {
        return Err(Error::validation(format!(
            "p* is not stationary: gradient norm {:e}",
            norm(&g0)
        )));
    }
    if num_samples == 0 {
        return Err(Error::validation("need at least one sample"));
    }
    let mut rng = SplitMix64::new(seed);
    let mut acc = vec![0.0; p_star.len()];
    for _ in 0..num_samples {
        let dir = rng.unit_vector(p_star.len());
        let g = model.gradient(&axpy(p_star, radius, &dir))?;
        for (a, gi) in acc.iter_mut().zip(&g) {
            *a += gi.abs();
        }
    }
    let avg_abs_grad = acc.into_iter().map(|a| a / num_samples as f64).collect();
    let h = model.hessian(p_star)?;
    let hessian_row_norms = (0..h.rows()).map(|i| norm(h.row(i))).collect();
    Ok(GradientProxy {
        avg_abs_grad,
        hessian_row_norms,
    })
}

/// Sample Pearson correlation; 0 when either input is constant.
pub fn pearson_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Quadratic;

    #[test]
    fn averaged_gradient_tracks_hessian_rows() {
        let q = Quadratic::diagonal(&[1.0, 10.0, 100.0]);
        let proxy = grad_hessian_row_proxy(&q, &[0.0; 3], 500, 1e-3, 42).unwrap();
        assert_eq!(proxy.hessian_row_norms, vec![1.0, 10.0, 100.0]);
        assert!(proxy.correlation() >= 0.99, "{}", proxy.correlation());
    }

    #[test]
    fn single_orthogonal_iterate_hides_a_row() {
        let q = Quadratic::diagonal(&[1.0, 10.0, 100.0]);
        // p - p* orthogonal to the third Hessian row.
        let g = q.gradient(&[1e-3, 1e-3, 0.0]).unwrap();
        assert!(g[2].abs() < 1e-6 * 100.0);
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn output_is_linear_in_radius() {
        let q = Quadratic::diagonal(&[1.0, 10.0, 100.0]);
        let a = grad_hessian_row_proxy(&q, &[0.0; 3], 20, 1e-3, 7).unwrap();
        let b = grad_hessian_row_proxy(&q, &[0.0; 3], 20, 1e-6, 7).unwrap();
        for (x, y) in a.avg_abs_grad.iter().zip(&b.avg_abs_grad) {
            assert!((x * 1e-3 - y).abs() <= 1e-12 * x);
        }
    }

    #[test]
    fn rejects_non_stationary_point() {
        let q = Quadratic::diagonal(&[1.0, 2.0]);
        assert!(matches!(
            grad_hessian_row_proxy(&q, &[1.0, 0.0], 10, 1e-3, 1),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn pearson_basics() {
        assert!((pearson_correlation(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-15);
        assert!((pearson_correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert_eq!(pearson_correlation(&[1.0, 1.0], &[1.0, 2.0]), 0.0);
    }
}
