//! Minimal dense real linear algebra: matrices, solves, eigenvalues,
//! spectral radius, numerical rank and a seeded RNG.

mod eigen;
mod matrix;
mod rng;
mod solve;

use thiserror::Error;

pub use eigen::{
    eigenvalues, gelfand_spectral_radius, operator_norm, spectral_radius, DEFAULT_SPECTRAL_TOL,
    QR_MAX_ORDER,
};
pub use matrix::DenseMatrix;
pub use num_complex::Complex64;
pub use rng::Rng;
pub use solve::{inverse, rank, resolvent_apply, solve, Lu, DEFAULT_RANK_TOL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("iteration did not converge (best estimate {best_estimate})")]
    NoConvergence { best_estimate: f64 },
}
