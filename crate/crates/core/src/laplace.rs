//! Full-covariance Gaussian posterior approximation at an iteratively
//! refined mode of `ln p(x, z)`.
//!
//! For rectifier decoders the generative network is exactly affine within
//! each activation region, so the mode update solves the local linear
//! Gaussian model in closed form instead of taking a gradient step, and the
//! posterior covariance is the inverse of the local curvature
//! `sigma^-2 W^T W + I` (Gaussian head) or `W^T S W + I` (Bernoulli head,
//! `S = diag(y (1 - y))`). Both precisions are the identity plus a PSD term,
//! so the covariance never exceeds the prior.
//!
//! Mode seeking is also available as plain gradient ascent and as nonlinear
//! conjugate gradient with Polak-Ribiere directions, which needs only
//! matrix-vector products with the local affine map.

use crate::error::Result;
use crate::linalg::{
    chol_solve, cholesky, power_topk, DenseMatrix, DenseVector, Rng,
};
use crate::network::{
    decoder_logp, decoder_logp_grad_z, forward, linearize, masked_jvp, masked_vjp, sigmoid, Head,
    Linearization, MlpParams,
};

/// Default diagonal jitter added on a failed Cholesky before the single retry.
pub const DEFAULT_JITTER: f64 = 1e-8;

/// Full-covariance Gaussian `N(mu, sigma)` with the lower Cholesky factor of
/// `sigma` attached for sampling and density evaluation.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mu: DenseVector,
    pub sigma: DenseMatrix,
    pub chol: DenseMatrix,
}

impl GaussianPosterior {
    pub fn dim(&self) -> usize {
        self.mu.dim()
    }

    /// `N(0, I)`.
    pub fn standard(d: usize) -> Self {
        GaussianPosterior {
            mu: DenseVector::zeros(d),
            sigma: DenseMatrix::identity(d),
            chol: DenseMatrix::identity(d),
        }
    }

    /// Diagonal Gaussian from per-dimension variances.
    pub fn from_diag(mu: DenseVector, var_diag: &DenseVector) -> Self {
        assert_eq!(mu.dim(), var_diag.dim());
        assert!(var_diag.as_slice().iter().all(|&v| v > 0.0));
        let sigma = DenseMatrix::diag(var_diag.as_slice());
        let std: Vec<f64> = var_diag.as_slice().iter().map(|v| v.sqrt()).collect();
        GaussianPosterior {
            mu,
            sigma,
            chol: DenseMatrix::diag(&std),
        }
    }

    /// Build from a precision matrix: `sigma = precision^-1`, applied through
    /// Cholesky solves against the identity (no explicit inversion routine).
    pub fn from_precision(mu: DenseVector, precision: &DenseMatrix) -> Result<Self> {
        Self::from_precision_with_jitter(mu, precision, DEFAULT_JITTER)
    }

    pub fn from_precision_with_jitter(
        mu: DenseVector,
        precision: &DenseMatrix,
        jitter: f64,
    ) -> Result<Self> {
        let (sigma, chol) = sigma_from_precision(precision, jitter)?;
        assert_eq!(mu.dim(), sigma.rows());
        Ok(GaussianPosterior { mu, sigma, chol })
    }

    /// Build from a precision matrix and the right-hand side of the mode
    /// equation `precision * mu = rhs`, sharing one factorization.
    pub fn from_precision_and_rhs(precision: &DenseMatrix, rhs: &DenseVector) -> Result<Self> {
        let l = chol_with_jitter(precision, DEFAULT_JITTER)?;
        let mu = chol_solve(&l, rhs);
        let (sigma, chol) = sigma_from_factor(&l, DEFAULT_JITTER)?;
        Ok(GaussianPosterior { mu, sigma, chol })
    }
}

fn chol_with_jitter(a: &DenseMatrix, jitter: f64) -> Result<DenseMatrix> {
    match cholesky(a) {
        Ok(l) => Ok(l),
        Err(first) => {
            if jitter > 0.0 {
                let mut aj = a.clone();
                aj.add_diag(jitter);
                cholesky(&aj).map_err(|_| first)
            } else {
                Err(first)
            }
        }
    }
}

fn sigma_from_precision(precision: &DenseMatrix, jitter: f64) -> Result<(DenseMatrix, DenseMatrix)> {
    let l = chol_with_jitter(precision, jitter)?;
    sigma_from_factor(&l, jitter)
}

fn sigma_from_factor(l: &DenseMatrix, jitter: f64) -> Result<(DenseMatrix, DenseMatrix)> {
    let d = l.rows();
    let mut sigma = DenseMatrix::zeros(d, d);
    let mut e = DenseVector::zeros(d);
    for j in 0..d {
        e[j] = 1.0;
        let col = chol_solve(l, &e);
        e[j] = 0.0;
        for i in 0..d {
            sigma[(i, j)] = col[i];
        }
    }
    let sigma = sigma.symmetrized();
    let chol = chol_with_jitter(&sigma, jitter)?;
    Ok((sigma, chol))
}

/// Damping schedule for the mode iteration.
#[derive(Debug, Clone)]
pub struct ModeSchedule {
    pub steps: usize,
    pub decay: Decay,
    pub jitter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decay {
    /// `alpha_t = 0.5 / (t + 1)` (the default).
    Harmonic,
    /// Fixed `alpha_t = a`; `Constant(1.0)` gives the undamped update.
    Constant(f64),
}

impl ModeSchedule {
    pub fn new(steps: usize) -> Self {
        ModeSchedule {
            steps,
            decay: Decay::Harmonic,
            jitter: DEFAULT_JITTER,
        }
    }

    /// Undamped schedule (`alpha_t = 1`), used by the exactness oracles.
    pub fn undamped(steps: usize) -> Self {
        ModeSchedule {
            steps,
            decay: Decay::Constant(1.0),
            jitter: DEFAULT_JITTER,
        }
    }

    pub fn alpha(&self, t: usize) -> f64 {
        let a = match self.decay {
            Decay::Harmonic => 0.5 / (t as f64 + 1.0),
            Decay::Constant(a) => a,
        };
        debug_assert!(a > 0.0 && a <= 1.0, "decay must lie in (0, 1]");
        a
    }

    /// `prod_t (1 - alpha_t)`: the almost-everywhere-exact derivative of the
    /// final mode with respect to its initialization, used to route the
    /// encoder gradient through the iteration.
    pub fn damping_factor(&self) -> f64 {
        (0..self.steps).map(|t| 1.0 - self.alpha(t)).product()
    }
}

/// Mode iterates and their joint log-density, for diagnostics.
#[derive(Debug, Clone)]
pub struct ModeTrace {
    pub modes: Vec<DenseVector>,
    pub objectives: Vec<f64>,
}

/// `ln N(z; 0, I)`.
pub fn logp_prior(z: &DenseVector) -> f64 {
    -0.5 * (z.dim() as f64 * (2.0 * std::f64::consts::PI).ln() + z.dot(z))
}

/// `ln p(x, z) = ln p(x|z) + ln p(z)` with a full decoder forward pass.
pub fn logp_joint(decoder: &MlpParams, x: &DenseVector, z: &DenseVector) -> f64 {
    decoder_logp(decoder, x, z) + logp_prior(z)
}

/// `(ln p(x, z), grad_z ln p(x, z))`.
pub fn logp_joint_grad_z(
    decoder: &MlpParams,
    x: &DenseVector,
    z: &DenseVector,
) -> (f64, DenseVector) {
    let (logp, mut g) = decoder_logp_grad_z(decoder, x, z);
    g.add_scaled(-1.0, z);
    (logp + logp_prior(z), g)
}

fn gaussian_precision(lin: &Linearization, sigma2: f64) -> DenseMatrix {
    let inv_s2 = 1.0 / sigma2;
    let mut precision = lin.weight.matmul_tn(&lin.weight).scaled(inv_s2);
    precision.add_diag(1.0);
    precision.symmetrized()
}

/// Closed-form mode target under the local linear model:
/// solves `(sigma^-2 W^T W + I) mu' = sigma^-2 W^T (x - b)`.
pub fn gaussian_mode_step(x: &DenseVector, lin: &Linearization, sigma2: f64) -> DenseVector {
    let inv_s2 = 1.0 / sigma2;
    let precision = gaussian_precision(lin, sigma2);
    let rhs = lin.weight.matvec_t(&x.sub(&lin.bias)).scaled(inv_s2);
    let l = chol_with_jitter(&precision, DEFAULT_JITTER)
        .expect("precision bounded below by the identity");
    chol_solve(&l, &rhs)
}

/// Iterative posterior inference for a Gaussian-head rectifier decoder.
///
/// Runs `mu_{t+1} = (1 - alpha_t) mu_t + alpha_t * step(mu_t)` for
/// `sched.steps` iterations, re-linearizing the decoder at every iterate,
/// then reads the posterior covariance off the linearization at the final
/// mode.
pub fn infer_gaussian(
    decoder: &MlpParams,
    x: &DenseVector,
    mu0: &DenseVector,
    sched: &ModeSchedule,
) -> Result<(GaussianPosterior, ModeTrace)> {
    assert!(
        matches!(decoder.head, Head::Gaussian { .. }),
        "infer_gaussian requires a Gaussian head"
    );
    let sigma2 = decoder.sigma2();
    let mut mu = mu0.clone();
    let mut trace = ModeTrace {
        modes: vec![mu.clone()],
        objectives: vec![logp_joint(decoder, x, &mu)],
    };
    for t in 0..sched.steps {
        let lin = linearize(decoder, &mu);
        let target = gaussian_mode_step(x, &lin, sigma2);
        mu = damped_update(&mu, &target, sched.alpha(t));
        trace.modes.push(mu.clone());
        trace.objectives.push(logp_joint(decoder, x, &mu));
    }
    let lin = linearize(decoder, &mu);
    let precision = gaussian_precision(&lin, sigma2);
    let q = GaussianPosterior::from_precision_with_jitter(mu, &precision, sched.jitter)?;
    Ok((q, trace))
}

fn damped_update(mu: &DenseVector, target: &DenseVector, alpha: f64) -> DenseVector {
    let mut next = DenseVector::zeros(mu.dim());
    for i in 0..mu.dim() {
        next[i] = (1.0 - alpha) * mu[i] + alpha * target[i];
    }
    next
}

fn bernoulli_precision_rhs(
    x: &DenseVector,
    lin: &Linearization,
    mu_t: &DenseVector,
) -> (DenseMatrix, DenseVector) {
    let mut logits = lin.weight.matvec(mu_t);
    logits.add_scaled(1.0, &lin.bias);
    let y = DenseVector::new(logits.as_slice().iter().map(|&t| sigmoid(t)).collect());
    let s = DenseVector::new(y.as_slice().iter().map(|&p| p * (1.0 - p)).collect());
    // rows of W scaled by the logistic variances: S W
    let n = lin.weight.rows();
    let d = lin.weight.cols();
    let mut sw = DenseMatrix::zeros(n, d);
    for i in 0..n {
        let si = s[i];
        let src = lin.weight.row(i);
        let dst = sw.row_mut(i);
        for j in 0..d {
            dst[j] = si * src[j];
        }
    }
    let mut precision = lin.weight.matmul_tn(&sw);
    precision.add_diag(1.0);
    // rhs = W^T (x - b~) with b~ = y - S W mu_t
    let mut resid = x.sub(&y);
    resid.add_scaled(1.0, &sw.matvec(mu_t));
    let rhs = lin.weight.matvec_t(&resid);
    (precision.symmetrized(), rhs)
}

/// Newton-style mode target for a Bernoulli-head decoder under the local
/// linear model: solves `(W^T S W + I) mu' = W^T (x - y + S W mu_t)`.
pub fn bernoulli_mode_step(x: &DenseVector, lin: &Linearization, mu_t: &DenseVector) -> DenseVector {
    let (precision, rhs) = bernoulli_precision_rhs(x, lin, mu_t);
    let l = chol_with_jitter(&precision, DEFAULT_JITTER)
        .expect("precision bounded below by the identity");
    chol_solve(&l, &rhs)
}

/// Iterative posterior inference for a Bernoulli-head rectifier decoder.
/// One Newton-style step per re-linearization, damped like the Gaussian case.
pub fn infer_bernoulli(
    decoder: &MlpParams,
    x: &DenseVector,
    mu0: &DenseVector,
    sched: &ModeSchedule,
) -> Result<(GaussianPosterior, ModeTrace)> {
    assert!(
        matches!(decoder.head, Head::Bernoulli),
        "infer_bernoulli requires a Bernoulli head"
    );
    debug_assert!(x.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
    let mut mu = mu0.clone();
    let mut trace = ModeTrace {
        modes: vec![mu.clone()],
        objectives: vec![logp_joint(decoder, x, &mu)],
    };
    for t in 0..sched.steps {
        let lin = linearize(decoder, &mu);
        let target = bernoulli_mode_step(x, &lin, &mu);
        mu = damped_update(&mu, &target, sched.alpha(t));
        trace.modes.push(mu.clone());
        trace.objectives.push(logp_joint(decoder, x, &mu));
    }
    let lin = linearize(decoder, &mu);
    let (precision, _) = bernoulli_precision_rhs(x, &lin, &mu);
    let q = GaussianPosterior::from_precision_with_jitter(mu, &precision, sched.jitter)?;
    Ok((q, trace))
}

/// Head dispatch over [`infer_gaussian`] / [`infer_bernoulli`].
pub fn infer(
    decoder: &MlpParams,
    x: &DenseVector,
    mu0: &DenseVector,
    sched: &ModeSchedule,
) -> Result<(GaussianPosterior, ModeTrace)> {
    match decoder.head {
        Head::Gaussian { .. } => infer_gaussian(decoder, x, mu0, sched),
        Head::Bernoulli => infer_bernoulli(decoder, x, mu0, sched),
        Head::Linear => panic!("inference requires a likelihood head"),
    }
}

/// Plain gradient ascent on a differentiable objective; returns the final
/// iterate. The generic mode-seeking path for non-piecewise-linear models,
/// and the comparator for the conjugate-gradient variant.
pub fn gradient_mode_seek<F>(objective: F, z0: &DenseVector, steps: usize, lr: f64) -> DenseVector
where
    F: Fn(&DenseVector) -> (f64, DenseVector),
{
    let mut z = z0.clone();
    for _ in 0..steps {
        let (_, g) = objective(&z);
        z.add_scaled(lr, &g);
    }
    z
}

const ARMIJO_C: f64 = 1e-4;
const ARMIJO_MAX_TRIALS: usize = 30;

/// Nonlinear conjugate gradient ascent on `ln p(x, z)` for a Gaussian-head
/// decoder (Polak-Ribiere with restarts).
///
/// The trial step comes from the exact curvature of the local affine model
/// along the search direction (two matrix-vector products), then Armijo
/// backtracking on the exact objective guards against region crossings.
/// On a globally linear decoder the trial step is the exact line maximizer,
/// so the method terminates in at most `dim` iterations. Directions restart
/// every `dim` iterations and whenever they stop being ascent directions.
/// Returns the best iterate seen.
pub fn cg_mode_seek(
    decoder: &MlpParams,
    x: &DenseVector,
    z0: &DenseVector,
    max_iters: usize,
    tol: f64,
) -> DenseVector {
    assert!(
        matches!(decoder.head, Head::Gaussian { .. }),
        "cg_mode_seek requires a Gaussian head"
    );
    let sigma2 = decoder.sigma2();
    let d = z0.dim();
    let mut z = z0.clone();
    let (mut f, mut g) = logp_joint_grad_z(decoder, x, &z);
    let mut best_f = f;
    let mut best_z = z.clone();
    let mut dir = g.clone();
    for it in 0..max_iters {
        if g.norm2() < tol {
            break;
        }
        let mut slope = g.dot(&dir);
        if slope <= 0.0 {
            dir = g.clone();
            slope = g.dot(&dir);
        }
        // Exact step under the local affine model:
        // curvature = dir^T (sigma^-2 W^T W + I) dir via masked products.
        let (_, masks) = forward(decoder, &z);
        let wd = masked_jvp(decoder, &masks, &dir);
        let curv = wd.dot(&wd) / sigma2 + dir.dot(&dir);
        let mut step = slope / curv;
        let mut accepted = false;
        for _ in 0..ARMIJO_MAX_TRIALS {
            let mut zt = z.clone();
            zt.add_scaled(step, &dir);
            let ft = logp_joint(decoder, x, &zt);
            if ft >= f + ARMIJO_C * step * slope {
                z = zt;
                f = ft;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no acceptable step even along this direction: restart once
            // along the gradient, then give up if that fails too
            if dir.as_slice() != g.as_slice() {
                dir = g.clone();
                continue;
            }
            break;
        }
        let g_new = logp_joint_grad_z(decoder, x, &z).1;
        if f > best_f {
            best_f = f;
            best_z = z.clone();
        }
        // Polak-Ribiere+ with periodic restart
        let denom = g.dot(&g);
        let beta = if (it + 1) % d == 0 || denom == 0.0 {
            0.0
        } else {
            (g_new.dot(&g_new.sub(&g)) / denom).max(0.0)
        };
        let mut new_dir = g_new.clone();
        new_dir.add_scaled(beta, &dir);
        dir = new_dir;
        g = g_new;
    }
    if f > best_f {
        best_z = z;
    }
    best_z
}

/// Truncated eigendecomposition of the Gaussian-head precision.
#[derive(Debug, Clone)]
pub struct PrecisionApprox {
    /// Top eigenvalues of `sigma^-2 W^T W` (the PSD part of the precision).
    pub eigenvalues: Vec<f64>,
    /// Corresponding orthonormal eigenvectors, one per column.
    pub eigenvectors: DenseMatrix,
}

impl PrecisionApprox {
    /// Assembled `I + sum_k lambda_k v_k v_k^T`.
    pub fn to_matrix(&self) -> DenseMatrix {
        let d = self.eigenvectors.rows();
        let mut m = DenseMatrix::identity(d);
        for (k, &val) in self.eigenvalues.iter().enumerate() {
            let col = DenseVector::new((0..d).map(|r| self.eigenvectors[(r, k)]).collect());
            m.add_outer(val, &col, &col);
        }
        m
    }
}

/// Rank-`k` approximation of the precision `sigma^-2 W^T W + I` by power
/// iteration, touching the local affine map only through matrix-vector
/// products `W v` and `W^T u`.
pub fn precision_power_approx(
    decoder: &MlpParams,
    lin: &Linearization,
    sigma2: f64,
    k: usize,
    iters: usize,
    rng: &mut Rng,
) -> PrecisionApprox {
    let d = lin.weight.cols();
    assert!(k <= d);
    let inv_s2 = 1.0 / sigma2;
    let apply = |v: &DenseVector| {
        let wv = masked_jvp(decoder, &lin.masks, v);
        masked_vjp(decoder, &lin.masks, &wv).scaled(inv_s2)
    };
    let (eigenvalues, eigenvectors) = power_topk(apply, d, k, iters, rng);
    PrecisionApprox {
        eigenvalues,
        eigenvectors,
    }
}

/// Reparameterized draw `z = mu + L eps` with `L L^T = sigma`.
pub fn reparam_sample(q: &GaussianPosterior, eps: &DenseVector) -> DenseVector {
    assert_eq!(eps.dim(), q.dim(), "noise dimension mismatch");
    let mut z = q.chol.matvec(eps);
    z.add_scaled(1.0, &q.mu);
    z
}
