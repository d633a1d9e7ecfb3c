//! Property tests of the numeric kernels against independent oracles.

use proptest::prelude::*;
use vlae_core::linalg::{
    cholesky, logdet_spd, power_topk, sample_standard_normal, solve_spd, solve_spd_mat,
    DenseMatrix, DenseVector, Rng,
};

/// Brute-force cyclic Jacobi eigensolver for symmetric matrices; test-only
/// oracle, independent of the Cholesky/power-iteration paths it checks.
fn jacobi_eigenvalues(a: &DenseMatrix) -> Vec<f64> {
    assert!(a.is_square());
    let n = a.rows();
    let mut m = a.clone();
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[(p, q)].abs() < 1e-14 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    ev.sort_by(|x, y| y.partial_cmp(x).unwrap());
    ev
}

fn random_spd(d: usize, seed: u64) -> DenseMatrix {
    let mut rng = Rng::new(seed);
    let b = DenseMatrix::from_fn(d, d, |_, _| rng.normal());
    let mut a = b.matmul(&b.transpose());
    a.add_diag(1.0);
    a.symmetrized()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cholesky_reconstructs_spd(d in 1usize..32, seed in 0u64..1_000_000) {
        let a = random_spd(d, seed);
        let l = cholesky(&a).unwrap();
        let err = l.matmul(&l.transpose()).sub(&a).frob_norm() / a.frob_norm();
        prop_assert!(err < 1e-8, "reconstruction error {}", err);
    }

    #[test]
    fn solve_round_trips(d in 1usize..24, seed in 0u64..1_000_000) {
        let a = random_spd(d, seed);
        let mut rng = Rng::new(seed ^ 0xABCD);
        let b = sample_standard_normal(&mut rng, d);
        let x = solve_spd(&a, &b).unwrap();
        let r = a.matvec(&x).sub(&b);
        prop_assert!(r.inf_norm() < 1e-8 * (1.0 + b.inf_norm()));
    }

    #[test]
    fn logdet_of_inverse_negates(d in 1usize..16, seed in 0u64..1_000_000) {
        let a = random_spd(d, seed);
        let inv = solve_spd_mat(&a, &DenseMatrix::identity(d)).unwrap().symmetrized();
        let ld = logdet_spd(&a).unwrap();
        let ldi = logdet_spd(&inv).unwrap();
        prop_assert!((ld + ldi).abs() < 1e-7, "logdet {} vs inverse {}", ld, ldi);
    }

    #[test]
    fn logdet_matches_eigenvalue_product(d in 1usize..10, seed in 0u64..1_000_000) {
        let a = random_spd(d, seed);
        let ld = logdet_spd(&a).unwrap();
        let sum_log: f64 = jacobi_eigenvalues(&a).iter().map(|v| v.ln()).sum();
        prop_assert!((ld - sum_log).abs() < 1e-8, "{} vs {}", ld, sum_log);
    }

    #[test]
    fn power_full_spectrum_matches_jacobi(d in 2usize..8, seed in 0u64..1_000_000) {
        let a = random_spd(d, seed);
        let mut rng = Rng::new(seed ^ 0x77);
        let (vals, _) = power_topk(|v: &DenseVector| a.matvec(v), d, d, 800, &mut rng);
        let oracle = jacobi_eigenvalues(&a);
        for (got, want) in vals.iter().zip(&oracle) {
            prop_assert!((got - want).abs() < 1e-4, "eigenvalue {} vs {}", got, want);
        }
    }
}
