//! Shared fixtures for the benchmark targets.

use vlae_core::linalg::{sample_standard_normal, DenseMatrix, DenseVector, Rng};
use vlae_core::network::{forward, he_init, Head, MlpParams};

/// Rectifier decoder plus an observation drawn from its own manifold.
pub struct InferenceFixture {
    pub decoder: MlpParams,
    pub x: DenseVector,
    pub mu0: DenseVector,
}

pub fn inference_fixture(latent: usize, hidden: usize, data: usize, seed: u64) -> InferenceFixture {
    let mut rng = Rng::new(seed);
    let mut decoder = he_init(
        &[latent, hidden, data],
        Head::Gaussian { log_sigma2: 0.0 },
        &mut rng,
    );
    decoder.set_log_sigma2(-2.0);
    let z_true = sample_standard_normal(&mut rng, latent);
    let (mut x, _) = forward(&decoder, &z_true);
    x.add_scaled(0.05, &sample_standard_normal(&mut rng, data));
    let mu0 = sample_standard_normal(&mut rng, latent);
    InferenceFixture { decoder, x, mu0 }
}

pub fn random_spd(d: usize, seed: u64) -> DenseMatrix {
    let mut rng = Rng::new(seed);
    let b = DenseMatrix::from_fn(d, d, |_, _| rng.normal());
    let mut a = b.matmul(&b.transpose());
    a.add_diag(1.0);
    a.symmetrized()
}
