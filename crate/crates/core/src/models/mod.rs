//! ELBO estimators, importance-weighted likelihood evaluation, diagonal
//! variational parameters with single-sample gradients, and the per-batch
//! training steps for the four model kinds.

mod savae;
mod train;

pub use savae::{lambda_gradient_single_sample, savae_refine};
pub use train::{
    eval_posterior, eval_stream, evaluate, init_models, init_stream, train_epoch, train_step,
    train_stream, DecayKind, EvalSummary, HeadKind, Metrics, ModelKind, TrainConfig, TrainState,
};

use crate::laplace::{logp_joint, reparam_sample, GaussianPosterior};
use crate::linalg::{logdet_from_chol, sample_standard_normal, solve_lower, DenseVector, Rng};
use crate::network::MlpParams;

pub const LOG_SIGMA_DIAG_MIN: f64 = -7.0;
pub const LOG_SIGMA_DIAG_MAX: f64 = 3.0;

/// Diagonal-Gaussian variational parameters `(mu, ln sigma)`; the object of
/// gradient refinement in the semi-amortized baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalParams {
    pub mu: DenseVector,
    pub log_sigma_diag: DenseVector,
}

impl VariationalParams {
    /// Clamps `ln sigma` into its stability range; gradients are passed
    /// straight through the clamp.
    pub fn new(mu: DenseVector, log_sigma_diag: DenseVector) -> Self {
        assert_eq!(mu.dim(), log_sigma_diag.dim());
        let clamped = DenseVector::new(
            log_sigma_diag
                .as_slice()
                .iter()
                .map(|v| v.clamp(LOG_SIGMA_DIAG_MIN, LOG_SIGMA_DIAG_MAX))
                .collect(),
        );
        VariationalParams {
            mu,
            log_sigma_diag: clamped,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.dim()
    }

    pub fn sigma(&self) -> DenseVector {
        DenseVector::new(self.log_sigma_diag.as_slice().iter().map(|v| v.exp()).collect())
    }

    /// `z = mu + sigma .* eps`
    pub fn sample(&self, eps: &DenseVector) -> DenseVector {
        assert_eq!(eps.dim(), self.dim());
        let mut z = self.mu.clone();
        let s = self.sigma();
        for i in 0..z.dim() {
            z[i] += s[i] * eps[i];
        }
        z
    }

    /// `ln q(z)` of the diagonal Gaussian.
    pub fn log_density(&self, z: &DenseVector) -> f64 {
        assert_eq!(z.dim(), self.dim());
        let mut acc = -0.5 * self.dim() as f64 * (2.0 * std::f64::consts::PI).ln();
        for i in 0..self.dim() {
            let ls = self.log_sigma_diag[i];
            let r = (z[i] - self.mu[i]) * (-ls).exp();
            acc -= ls + 0.5 * r * r;
        }
        acc
    }

    /// Embed as a full-covariance posterior with diagonal `sigma`.
    pub fn to_posterior(&self) -> GaussianPosterior {
        let var = DenseVector::new(
            self.log_sigma_diag
                .as_slice()
                .iter()
                .map(|v| (2.0 * v).exp())
                .collect(),
        );
        GaussianPosterior::from_diag(self.mu.clone(), &var)
    }
}

/// `ln N(z; mu, sigma)` with the quadratic form taken through triangular
/// solves against the stored Cholesky factor.
pub fn log_density_full_gaussian(q: &GaussianPosterior, z: &DenseVector) -> f64 {
    assert_eq!(z.dim(), q.dim());
    let r = z.sub(&q.mu);
    let half = solve_lower(&q.chol, &r);
    let quad = half.dot(&half);
    -0.5 * (q.dim() as f64 * (2.0 * std::f64::consts::PI).ln() + logdet_from_chol(&q.chol) + quad)
}

/// One reparameterized ELBO draw.
#[derive(Debug, Clone)]
pub struct ElboSample {
    /// `ln p(x, z) - ln q(z|x)` at the drawn `z`.
    pub value: f64,
    pub z: DenseVector,
}

/// Single-sample ELBO `ln p(x|z) + ln p(z) - ln q(z|x)` at `z = mu + L eps`.
///
/// Parameter gradients are taken separately: the decoder side via
/// [`crate::network::decoder_logp_grad_params`] at `z`, the encoder side via
/// the damping-product chain rule of [`crate::laplace::ModeSchedule`].
pub fn elbo_single_sample(
    decoder: &MlpParams,
    q: &GaussianPosterior,
    x: &DenseVector,
    eps: &DenseVector,
) -> ElboSample {
    let z = reparam_sample(q, eps);
    let value = logp_joint(decoder, x, &z) - log_density_full_gaussian(q, &z);
    ElboSample { value, z }
}

/// `KL(N(mu, diag(sigma^2)) || N(0, I)) = 1/2 sum(sigma^2 + mu^2 - 1 - ln sigma^2)`.
pub fn kl_diag_gaussian_prior(mu: &DenseVector, log_sigma_diag: &DenseVector) -> f64 {
    assert_eq!(mu.dim(), log_sigma_diag.dim());
    let mut acc = 0.0;
    for i in 0..mu.dim() {
        let ls2 = 2.0 * log_sigma_diag[i];
        acc += ls2.exp() + mu[i] * mu[i] - 1.0 - ls2;
    }
    0.5 * acc
}

/// Per-draw importance log-weights `ln p(x, z_i) - ln q(z_i|x)`.
pub fn iwae_terms(
    decoder: &MlpParams,
    q: &GaussianPosterior,
    x: &DenseVector,
    k: usize,
    rng: &mut Rng,
) -> Vec<f64> {
    assert!(k >= 1);
    (0..k)
        .map(|_| {
            let eps = sample_standard_normal(rng, q.dim());
            elbo_single_sample(decoder, q, x, &eps).value
        })
        .collect()
}

/// Importance-weighted likelihood bound: log-mean-exp over `k` draws of
/// `ln p(x, z_i) - ln q(z_i|x)`, stabilized by max subtraction.
pub fn iwae_loglik(
    decoder: &MlpParams,
    q: &GaussianPosterior,
    x: &DenseVector,
    k: usize,
    rng: &mut Rng,
) -> f64 {
    log_mean_exp(&iwae_terms(decoder, q, x, k, rng))
}

pub fn log_mean_exp(logs: &[f64]) -> f64 {
    assert!(!logs.is_empty());
    let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    let mean: f64 = logs.iter().map(|l| (l - mx).exp()).sum::<f64>() / logs.len() as f64;
    mx + mean.ln()
}

/// `ln p(x, z) - ln q(z; lambda)` for the diagonal family.
pub fn elbo_single_sample_diag(
    decoder: &MlpParams,
    lambda: &VariationalParams,
    x: &DenseVector,
    eps: &DenseVector,
) -> ElboSample {
    let z = lambda.sample(eps);
    let value = logp_joint(decoder, x, &z) - lambda.log_density(&z);
    ElboSample { value, z }
}

pub use crate::laplace::logp_prior as prior_log_density;
