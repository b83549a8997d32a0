//! Special functions and small-matrix complex linear algebra shared by every
//! other module.

mod linalg;
mod special;

pub use linalg::{hermitian_solve, norm_sqr, CMatrix, Cholesky, HermitianPsdMatrix, InverseQuadForm};
pub use special::{bessel_j0, chi2_cdf, chi2_pdf, chi2_quantile, chi2_sf, ln_gamma, regularized_gamma};

pub type C64 = num_complex::Complex64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    Singular { pivot: usize, value: f64 },
    #[error("matrix is not Hermitian at ({row}, {col})")]
    NotHermitian { row: usize, col: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("did not converge: {0}")]
    Convergence(String),
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_phase(theta: f64) -> f64 {
    use std::f64::consts::PI;
    let two_pi = 2.0 * PI;
    let mut w = (theta + PI).rem_euclid(two_pi) - PI;
    if w >= PI {
        w -= two_pi;
    }
    w
}
