//! Dense double-precision linear algebra kernels: products, Cholesky
//! factorization and SPD solves, log-determinants, power iteration, and
//! seeded Gaussian sampling.
//!
//! Everything here is pure given its inputs plus an owned [`Rng`]; values are
//! immutable after construction and safe to share read-only.

mod chol;
mod matrix;
mod power;
mod rng;

pub use chol::{
    chol_solve, cholesky, logdet_from_chol, logdet_spd, solve_lower, solve_lower_t, solve_spd,
    solve_spd_mat,
};
pub use matrix::{DenseMatrix, DenseVector};
pub use power::power_topk;
pub use rng::{sample_standard_normal, Rng};
