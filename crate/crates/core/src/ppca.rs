//! Exact posterior and marginal likelihood for the linear Gaussian generator
//! `p(x|z) = N(W z + b, sigma^2 I)`, `p(z) = N(0, I)`.
//!
//! This model admits everything in closed form, which makes it both a usable
//! generator and the correctness oracle for the iterative inference in
//! [`crate::laplace`]: a globally linear decoder must reproduce these answers
//! exactly.

use crate::laplace::GaussianPosterior;
use crate::linalg::{cholesky, logdet_from_chol, solve_lower, DenseMatrix, DenseVector};

/// Linear Gaussian generator parameters.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub w: DenseMatrix,
    pub b: DenseVector,
    pub sigma2: f64,
}

impl LinearModel {
    pub fn new(w: DenseMatrix, b: DenseVector, sigma2: f64) -> Self {
        assert_eq!(w.rows(), b.dim(), "bias width mismatch");
        assert!(sigma2 > 0.0, "sigma2 must be positive");
        LinearModel { w, b, sigma2 }
    }

    pub fn data_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.w.cols()
    }
}

/// Closed-form posterior `p(z|x) = N(sigma^-2 S W^T (x - b), S)` with
/// `S = (sigma^-2 W^T W + I)^-1`, applied via Cholesky solves.
///
/// The precision is `I` plus a PSD term, so this never fails.
pub fn exact_posterior(m: &LinearModel, x: &DenseVector) -> GaussianPosterior {
    assert_eq!(x.dim(), m.data_dim(), "data dimension mismatch");
    let inv_s2 = 1.0 / m.sigma2;
    let mut precision = m.w.matmul_tn(&m.w).scaled(inv_s2);
    precision.add_diag(1.0);
    let rhs = m.w.matvec_t(&x.sub(&m.b)).scaled(inv_s2);
    GaussianPosterior::from_precision_and_rhs(&precision.symmetrized(), &rhs)
        .expect("precision bounded below by the identity")
}

/// `ln N(x; b, W W^T + sigma^2 I)` via Cholesky of the data-space covariance.
pub fn marginal_loglik(m: &LinearModel, x: &DenseVector) -> f64 {
    assert_eq!(x.dim(), m.data_dim(), "data dimension mismatch");
    let n = m.data_dim();
    let mut cov = m.w.matmul(&m.w.transpose());
    cov.add_diag(m.sigma2);
    let l = cholesky(&cov.symmetrized()).expect("marginal covariance is SPD");
    let r = x.sub(&m.b);
    let half = solve_lower(&l, &r);
    let quad = half.dot(&half);
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet_from_chol(&l) + quad)
}
