//! Power iteration with deflation for the top-k spectrum of a symmetric PSD
//! operator given only matrix-vector products.

use super::matrix::{DenseMatrix, DenseVector};
use super::rng::{sample_standard_normal, Rng};

/// Top-`k` eigenpairs of the symmetric PSD operator `v -> apply(v)` on R^d.
///
/// Components are extracted one at a time; each candidate is deflated against
/// the converged eigenvectors (subtracting `lambda_j (v_j^T v) v_j` actions)
/// and re-orthogonalized every iteration, so the returned columns are
/// orthonormal. Eigenvalues are Rayleigh quotients, returned sorted
/// descending. Best-effort after `iters` iterations per component; never
/// errors.
pub fn power_topk<F>(
    apply: F,
    d: usize,
    k: usize,
    iters: usize,
    rng: &mut Rng,
) -> (Vec<f64>, DenseMatrix)
where
    F: Fn(&DenseVector) -> DenseVector,
{
    assert!(k <= d, "requested more eigenpairs than the dimension");
    let mut values: Vec<f64> = Vec::with_capacity(k);
    let mut vectors: Vec<DenseVector> = Vec::with_capacity(k);

    for _ in 0..k {
        let mut v = sample_standard_normal(rng, d);
        orthonormalize(&mut v, &vectors, rng);
        let mut lambda = 0.0;
        for _ in 0..iters {
            let mut w = apply(&v);
            // Deflate: remove components along converged eigenvectors.
            for (val, vec) in values.iter().zip(&vectors) {
                let c = vec.dot(&v) * *val;
                w.add_scaled(-c, vec);
            }
            lambda = v.dot(&w);
            orthonormalize(&mut w, &vectors, rng);
            v = w;
        }
        // Final Rayleigh quotient against the undeflated operator.
        let av = apply(&v);
        let mut rq = v.dot(&av);
        for (val, vec) in values.iter().zip(&vectors) {
            let c = vec.dot(&v);
            rq -= *val * c * c;
        }
        lambda = lambda.max(rq.max(0.0));
        values.push(lambda.max(0.0));
        vectors.push(v);
    }

    // Sort descending by eigenvalue (deflation usually already yields this).
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
    let sorted_values: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let mut mat = DenseMatrix::zeros(d, k);
    for (col, &i) in order.iter().enumerate() {
        for r in 0..d {
            mat[(r, col)] = vectors[i][r];
        }
    }
    (sorted_values, mat)
}

/// Project out `basis` components and normalize; re-randomize on collapse.
fn orthonormalize(v: &mut DenseVector, basis: &[DenseVector], rng: &mut Rng) {
    for _ in 0..32 {
        // Two Gram-Schmidt sweeps keep orthogonality near machine precision.
        for _ in 0..2 {
            for b in basis {
                let c = b.dot(v);
                v.add_scaled(-c, b);
            }
        }
        let n = v.norm2();
        if n > 1e-12 {
            let d = v.dim();
            for i in 0..d {
                v[i] /= n;
            }
            return;
        }
        *v = sample_standard_normal(rng, v.dim());
    }
    panic!("could not draw a vector independent of the deflation basis");
}
