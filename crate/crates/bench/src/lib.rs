//! Fixtures shared by the benchmarks.

use precond_core::bnp::BatchStats;
use precond_core::models::{Activation, LossKind, Mlp, MlpSpec};
use precond_core::{Dataset, Matrix, SplitMix64};

pub fn random_spd(n: usize, seed: u64) -> Matrix {
    let mut rng = SplitMix64::new(seed);
    let b = Matrix::from_fn(n, n, |_, _| rng.normal());
    b.gram_rows().add(&Matrix::identity(n)).expect("square")
}

pub fn random_stats(width: usize, seed: u64) -> BatchStats {
    let mut rng = SplitMix64::new(seed);
    BatchStats {
        mu: (0..width).map(|_| rng.uniform_range(-5.0, 5.0)).collect(),
        sigma: (0..width).map(|_| rng.log_uniform(-1.0, 1.0)).collect(),
        count: 64,
    }
}

/// A tanh network on Gaussian inputs with parameters drawn alongside.
pub fn random_mlp(widths: Vec<usize>, samples: usize, seed: u64) -> (Mlp, Vec<f64>) {
    let mut rng = SplitMix64::new(seed);
    let x = Matrix::from_fn(widths[0], samples, |_, _| rng.normal());
    let y = Matrix::from_fn(*widths.last().expect("nonempty"), samples, |_, _| {
        rng.normal()
    });
    let spec =
        MlpSpec::new(widths, Activation::Tanh, LossKind::SquaredError).expect("valid widths");
    let mlp = Mlp::new(spec, Dataset::new(x, y).expect("matching columns")).expect("valid data");
    let p = rng.normal_vec(mlp.spec().param_count());
    (mlp, p)
}
