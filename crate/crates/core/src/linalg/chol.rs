//! Cholesky factorization and SPD solves.
//!
//! Cholesky is the only SPD factorization in this crate; downstream code
//! applies inverses exclusively through `solve_*` (never by forming an
//! explicit inverse of a general matrix).

use super::matrix::{DenseMatrix, DenseVector};
use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `L L^T = a`.
///
/// `a` must be symmetric positive definite; only its lower triangle is read.
/// Fails with [`Error::NotPositiveDefinite`] on the first non-positive pivot,
/// in which case the caller may retry with diagonal jitter.
pub fn cholesky(a: &DenseMatrix) -> Result<DenseMatrix> {
    assert!(a.is_square(), "cholesky requires a square matrix");
    debug_assert!(
        a.is_symmetric_within(1e-9),
        "cholesky input is not symmetric within 1e-9"
    );
    let n = a.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::NotPositiveDefinite { index: i, pivot: s });
                }
                l[(i, j)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Solve `L y = b` by forward substitution (`L` lower triangular).
pub fn solve_lower(l: &DenseMatrix, b: &DenseVector) -> DenseVector {
    let n = l.rows();
    assert_eq!(b.dim(), n);
    let mut y = DenseVector::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        let row = l.row(i);
        for k in 0..i {
            s -= row[k] * y[k];
        }
        y[i] = s / row[i];
    }
    y
}

/// Solve `L^T x = b` by back substitution (`L` lower triangular).
pub fn solve_lower_t(l: &DenseMatrix, b: &DenseVector) -> DenseVector {
    let n = l.rows();
    assert_eq!(b.dim(), n);
    let mut x = DenseVector::zeros(n);
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solve `L L^T x = b` given the factor `L`.
pub fn chol_solve(l: &DenseMatrix, b: &DenseVector) -> DenseVector {
    solve_lower_t(l, &solve_lower(l, b))
}

/// Solve `a x = b` for SPD `a`.
pub fn solve_spd(a: &DenseMatrix, b: &DenseVector) -> Result<DenseVector> {
    let l = cholesky(a)?;
    Ok(chol_solve(&l, b))
}

/// Solve `a X = B` column-wise for SPD `a`.
pub fn solve_spd_mat(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    assert_eq!(a.rows(), b.rows(), "solve_spd_mat dimension mismatch");
    let l = cholesky(a)?;
    let n = b.rows();
    let mut out = DenseMatrix::zeros(n, b.cols());
    let mut col = DenseVector::zeros(n);
    for j in 0..b.cols() {
        for i in 0..n {
            col[i] = b[(i, j)];
        }
        let x = chol_solve(&l, &col);
        for i in 0..n {
            out[(i, j)] = x[i];
        }
    }
    Ok(out)
}

/// `ln det a` for SPD `a`, via `2 * sum_i ln L_ii`.
pub fn logdet_spd(a: &DenseMatrix) -> Result<f64> {
    let l = cholesky(a)?;
    Ok(logdet_from_chol(&l))
}

/// `ln det (L L^T)` given the Cholesky factor `L`.
pub fn logdet_from_chol(l: &DenseMatrix) -> f64 {
    let mut s = 0.0;
    for i in 0..l.rows() {
        s += l[(i, i)].ln();
    }
    2.0 * s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rng::Rng;

    fn random_spd(d: usize, rng: &mut Rng) -> DenseMatrix {
        // B B^T + I is SPD with eigenvalues >= 1.
        let b = DenseMatrix::from_fn(d, d, |_, _| rng.normal());
        let mut a = b.matmul(&b.transpose());
        a.add_diag(1.0);
        a.symmetrized()
    }

    #[test]
    fn diagonal_case_is_elementwise_sqrt() {
        let a = DenseMatrix::diag(&[4.0, 9.0]);
        let l = cholesky(&a).unwrap();
        assert_eq!(l, DenseMatrix::diag(&[2.0, 3.0]));
    }

    #[test]
    fn identity_is_its_own_factor() {
        let a = DenseMatrix::identity(5);
        assert_eq!(cholesky(&a).unwrap(), a);
    }

    #[test]
    fn reconstruction_error_is_tiny_on_random_spd() {
        let mut rng = Rng::new(7);
        let a = random_spd(8, &mut rng);
        let l = cholesky(&a).unwrap();
        let rec = l.matmul(&l.transpose());
        let err = rec.sub(&a).frob_norm() / a.frob_norm();
        assert!(err < 1e-10, "relative reconstruction error {err}");
        // factor is lower-plus-diagonal with positive diagonal
        for i in 0..8 {
            assert!(l[(i, i)] > 0.0);
            for j in (i + 1)..8 {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn not_positive_definite_is_reported() {
        let a = DenseMatrix::diag(&[1.0, -2.0]);
        match cholesky(&a) {
            Err(Error::NotPositiveDefinite { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn solve_identity_returns_rhs() {
        let a = DenseMatrix::identity(4);
        let b = DenseVector::from_slice(&[1.0, -2.0, 3.0, 0.5]);
        let x = solve_spd(&a, &b).unwrap();
        assert_eq!(x.as_slice(), b.as_slice());
    }

    #[test]
    fn solve_diagonal_analytic() {
        let a = DenseMatrix::diag(&[2.0, 4.0]);
        let b = DenseVector::from_slice(&[2.0, 4.0]);
        let x = solve_spd(&a, &b).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15);
        assert!((x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn solve_residual_on_random_spd() {
        let mut rng = Rng::new(11);
        let a = random_spd(16, &mut rng);
        let b = DenseVector::new((0..16).map(|_| rng.normal()).collect());
        let x = solve_spd(&a, &b).unwrap();
        let r = a.matvec(&x).sub(&b);
        assert!(r.inf_norm() < 1e-8 * (1.0 + b.inf_norm()));
    }

    #[test]
    fn logdet_matches_analytic_diagonal() {
        assert_eq!(logdet_spd(&DenseMatrix::identity(6)).unwrap(), 0.0);
        let ld = logdet_spd(&DenseMatrix::diag(&[4.0, 9.0])).unwrap();
        assert!((ld - 36.0f64.ln()).abs() < 1e-12);
    }
}
