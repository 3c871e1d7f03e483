//! Preconditioned gradient descent at desk scale.
//!
//! Adaptive optimizers, regularization schemes and batch-normalization
//! preconditioning are expressed through one lens: an update
//! `p ← p − α M ∇L(p)` with a symmetric positive definite `M = P Pᵀ`, which is
//! plain gradient descent on `z` where `p = P z`.

pub mod bnp;
pub mod error;
pub mod linalg;
pub mod matrix;
pub mod models;
pub mod optim;
pub mod regularize;
pub mod rng;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use models::{Dataset, Objective, ParamVector};
pub use rng::SplitMix64;
