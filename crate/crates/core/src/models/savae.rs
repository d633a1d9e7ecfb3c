//! Semi-amortized refinement: single-sample SGD ascent on the
//! diagonal-Gaussian ELBO starting from the encoder's prediction, with
//! global gradient-norm clipping.

use super::VariationalParams;
use crate::laplace::logp_joint_grad_z;
use crate::linalg::{sample_standard_normal, DenseVector, Rng};
use crate::network::MlpParams;

/// Single-sample pathwise gradient of `E_q[ln p(x,z) - ln q(z; lambda)]`
/// with respect to `lambda = (mu, ln sigma)` at the draw `z = mu + sigma.*eps`.
///
/// The score terms of `ln q` cancel against the density's own dependence on
/// `lambda` along the reparameterized path, leaving
/// `d/dmu = grad_z ln p(x,z)` and
/// `d/dln sigma_i = grad_z ln p(x,z)_i * sigma_i * eps_i + 1`.
pub fn lambda_gradient_single_sample(
    decoder: &MlpParams,
    x: &DenseVector,
    lambda: &VariationalParams,
    eps: &DenseVector,
) -> (DenseVector, DenseVector) {
    let z = lambda.sample(eps);
    let (_, gz) = logp_joint_grad_z(decoder, x, &z);
    let sigma = lambda.sigma();
    let d = lambda.dim();
    let mut dls = DenseVector::zeros(d);
    for i in 0..d {
        dls[i] = gz[i] * sigma[i] * eps[i] + 1.0;
    }
    (gz, dls)
}

/// `steps` refinement updates `lambda += alpha * clip(grad)`, the decoder
/// held fixed. The gradient is estimated from a single draw per step and its
/// global norm (over both halves of `lambda`) is clipped to `clip`.
pub fn savae_refine(
    decoder: &MlpParams,
    x: &DenseVector,
    lambda0: &VariationalParams,
    steps: usize,
    alpha: f64,
    clip: f64,
    rng: &mut Rng,
) -> VariationalParams {
    assert!(alpha > 0.0 && clip > 0.0);
    let mut lambda = lambda0.clone();
    let d = lambda.dim();
    for _ in 0..steps {
        let eps = sample_standard_normal(rng, d);
        let (mut dmu, mut dls) = lambda_gradient_single_sample(decoder, x, &lambda, &eps);
        let norm = (dmu.dot(&dmu) + dls.dot(&dls)).sqrt();
        if norm > clip {
            let s = clip / norm;
            dmu = dmu.scaled(s);
            dls = dls.scaled(s);
        }
        let mut mu = lambda.mu.clone();
        mu.add_scaled(alpha, &dmu);
        let mut ls = lambda.log_sigma_diag.clone();
        ls.add_scaled(alpha, &dls);
        lambda = VariationalParams::new(mu, ls);
    }
    lambda
}
