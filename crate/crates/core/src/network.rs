//! ReLU multilayer perceptron with a Gaussian, Bernoulli, or raw linear
//! output head.
//!
//! The forward pass records which rectifier units fired (the activation
//! masks). Within the input region sharing a mask pattern the network is
//! exactly affine, and [`linearize`] extracts that affine map by folding the
//! masks into the layer weights; its matrix equals the network Jacobian
//! wherever the anchor is interior to its region. Parameter gradients are
//! reverse-accumulated by hand; there is no autodiff tape.

use crate::linalg::{DenseMatrix, DenseVector, Rng};

/// Output head of a network.
///
/// Decoders carry a likelihood head; encoder networks use [`Head::Linear`]
/// and emit their pre-head output unchanged.
#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    /// `p(x|z) = N(g(z), sigma^2 I)` with a single learned global scalar
    /// stored as `ln sigma^2`, clamped to [-10, 5].
    Gaussian { log_sigma2: f64 },
    /// `p(x|z) = Bernoulli(sigmoid(g(z)))`, elementwise on logits.
    Bernoulli,
    /// No likelihood; raw affine output (encoders).
    Linear,
}

pub const LOG_SIGMA2_MIN: f64 = -10.0;
pub const LOG_SIGMA2_MAX: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DenseMatrix,
    pub bias: DenseVector,
}

/// Layered affine weights plus the output-head descriptor.
///
/// Layer `l` maps activations of width `dims[l]` to `dims[l+1]`; every layer
/// except the last is followed by a ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub head: Head,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>, head: Head) -> Self {
        assert!(!layers.is_empty(), "a network needs at least one layer");
        for w in layers.windows(2) {
            assert_eq!(
                w[0].weight.rows(),
                w[1].weight.cols(),
                "adjacent layer dimensions must chain"
            );
        }
        for l in &layers {
            assert_eq!(l.weight.rows(), l.bias.dim(), "bias width mismatch");
        }
        MlpParams { layers, head }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.rows()
    }

    pub fn num_hidden(&self) -> usize {
        self.layers.len() - 1
    }

    /// `sigma^2` of the Gaussian head. Panics on other heads.
    pub fn sigma2(&self) -> f64 {
        match self.head {
            Head::Gaussian { log_sigma2 } => log_sigma2.exp(),
            _ => panic!("sigma2 requested from a non-Gaussian head"),
        }
    }

    pub fn set_log_sigma2(&mut self, v: f64) {
        match &mut self.head {
            Head::Gaussian { log_sigma2 } => {
                *log_sigma2 = v.clamp(LOG_SIGMA2_MIN, LOG_SIGMA2_MAX)
            }
            _ => panic!("set_log_sigma2 on a non-Gaussian head"),
        }
    }
}

/// Per-hidden-layer 0/1 rectifier activation pattern.
///
/// Entry `i` is `true` iff the unit's pre-activation was strictly positive;
/// a pre-activation of exactly zero counts as inactive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationMasks(pub Vec<Vec<bool>>);

impl ActivationMasks {
    pub fn num_layers(&self) -> usize {
        self.0.len()
    }
}

/// Exact local affine map `z -> weight * z + bias` of a network at `anchor`,
/// valid on the activation region containing `anchor`.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub weight: DenseMatrix,
    pub bias: DenseVector,
    pub masks: ActivationMasks,
    pub anchor: DenseVector,
}

/// Forward pass intermediates kept for reverse accumulation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Post-activation values per hidden layer (inputs excluded).
    pub hidden: Vec<DenseVector>,
    pub output: DenseVector,
    pub masks: ActivationMasks,
}

/// Pre-head output `W_L h_L + b_L` and the activation masks along the way.
pub fn forward(params: &MlpParams, z: &DenseVector) -> (DenseVector, ActivationMasks) {
    let t = forward_trace(params, z);
    (t.output, t.masks)
}

pub fn forward_trace(params: &MlpParams, z: &DenseVector) -> ForwardTrace {
    assert_eq!(z.dim(), params.input_dim(), "input dimension mismatch");
    let n_layers = params.layers.len();
    let mut hidden = Vec::with_capacity(n_layers - 1);
    let mut masks = Vec::with_capacity(n_layers - 1);
    let mut h = z.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let mut pre = layer.weight.matvec(&h);
        pre.add_scaled(1.0, &layer.bias);
        if l + 1 < n_layers {
            let mask: Vec<bool> = pre.as_slice().iter().map(|&v| v > 0.0).collect();
            for (v, &m) in pre.as_mut_slice().iter_mut().zip(&mask) {
                if !m {
                    *v = 0.0;
                }
            }
            masks.push(mask);
            hidden.push(pre.clone());
            h = pre;
        } else {
            return ForwardTrace {
                hidden,
                output: pre,
                masks: ActivationMasks(masks),
            };
        }
    }
    unreachable!()
}

/// Exact affine map of the region containing `z`, built by folding the
/// activation masks into the layer weights bottom-up.
pub fn linearize(params: &MlpParams, z: &DenseVector) -> Linearization {
    assert_eq!(z.dim(), params.input_dim(), "input dimension mismatch");
    let (_, masks) = forward(params, z);
    let (weight, bias) = affine_for_masks(params, &masks);
    Linearization {
        weight,
        bias,
        masks,
        anchor: z.clone(),
    }
}

/// The affine map determined by a fixed mask pattern.
pub fn affine_for_masks(params: &MlpParams, masks: &ActivationMasks) -> (DenseMatrix, DenseVector) {
    let n_layers = params.layers.len();
    assert_eq!(masks.0.len(), n_layers - 1, "mask count mismatch");
    let mut w = params.layers[0].weight.clone();
    let mut b = params.layers[0].bias.clone();
    for l in 0..n_layers - 1 {
        // Zero out rows of inactive units, then push through the next layer.
        for (i, &active) in masks.0[l].iter().enumerate() {
            if !active {
                for v in w.row_mut(i) {
                    *v = 0.0;
                }
                b[i] = 0.0;
            }
        }
        let next = &params.layers[l + 1];
        w = next.weight.matmul(&w);
        let mut nb = next.weight.matvec(&b);
        nb.add_scaled(1.0, &next.bias);
        b = nb;
    }
    (w, b)
}

/// `weight * v` of the local affine map, via masked forward products only.
pub fn masked_jvp(params: &MlpParams, masks: &ActivationMasks, v: &DenseVector) -> DenseVector {
    let n_layers = params.layers.len();
    let mut u = v.clone();
    for l in 0..n_layers {
        u = params.layers[l].weight.matvec(&u);
        if l + 1 < n_layers {
            for (x, &m) in u.as_mut_slice().iter_mut().zip(&masks.0[l]) {
                if !m {
                    *x = 0.0;
                }
            }
        }
    }
    u
}

/// `weight^T * v` of the local affine map, via masked backward products only.
pub fn masked_vjp(params: &MlpParams, masks: &ActivationMasks, v: &DenseVector) -> DenseVector {
    let n_layers = params.layers.len();
    let mut u = params.layers[n_layers - 1].weight.matvec_t(v);
    for l in (0..n_layers - 1).rev() {
        for (x, &m) in u.as_mut_slice().iter_mut().zip(&masks.0[l]) {
            if !m {
                *x = 0.0;
            }
        }
        u = params.layers[l].weight.matvec_t(&u);
    }
    u
}

/// Parameter gradients mirroring [`MlpParams`].
#[derive(Debug, Clone)]
pub struct GradBundle {
    pub layers: Vec<Layer>,
    pub log_sigma2: f64,
}

impl GradBundle {
    pub fn zeros_like(params: &MlpParams) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|l| Layer {
                weight: DenseMatrix::zeros(l.weight.rows(), l.weight.cols()),
                bias: DenseVector::zeros(l.bias.dim()),
            })
            .collect();
        GradBundle {
            layers,
            log_sigma2: 0.0,
        }
    }

    /// `self += other`
    pub fn accumulate(&mut self, other: &GradBundle) {
        assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.as_mut_slice().iter_mut().zip(b.weight.as_slice()) {
                *x += y;
            }
            for (x, y) in a.bias.as_mut_slice().iter_mut().zip(b.bias.as_slice()) {
                *x += y;
            }
        }
        self.log_sigma2 += other.log_sigma2;
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            for x in l.weight.as_mut_slice() {
                *x *= s;
            }
            for x in l.bias.as_mut_slice() {
                *x *= s;
            }
        }
        self.log_sigma2 *= s;
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.as_slice().iter().all(|v| v.is_finite())
                && l.bias.as_slice().iter().all(|v| v.is_finite())
        }) && self.log_sigma2.is_finite()
    }
}

/// Reverse sweep from an output gradient: returns parameter gradients and
/// the gradient with respect to the network input.
pub fn backprop(
    params: &MlpParams,
    input: &DenseVector,
    trace: &ForwardTrace,
    out_grad: &DenseVector,
) -> (GradBundle, DenseVector) {
    let n_layers = params.layers.len();
    assert_eq!(out_grad.dim(), params.output_dim());
    let mut grads = GradBundle::zeros_like(params);
    let mut g = out_grad.clone();
    for l in (0..n_layers).rev() {
        let h_in = if l == 0 { input } else { &trace.hidden[l - 1] };
        grads.layers[l].weight.add_outer(1.0, &g, h_in);
        grads.layers[l].bias.add_scaled(1.0, &g);
        g = params.layers[l].weight.matvec_t(&g);
        if l > 0 {
            for (x, &m) in g.as_mut_slice().iter_mut().zip(&trace.masks.0[l - 1]) {
                if !m {
                    *x = 0.0;
                }
            }
        }
    }
    (grads, g)
}

#[inline]
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln p(x | z)` under the decoder's likelihood head.
pub fn decoder_logp(params: &MlpParams, x: &DenseVector, z: &DenseVector) -> f64 {
    let (y, _) = forward(params, z);
    decoder_logp_at_output(params, x, &y)
}

/// `ln p(x | z)` given an already-computed pre-head output.
pub fn decoder_logp_at_output(params: &MlpParams, x: &DenseVector, y: &DenseVector) -> f64 {
    assert_eq!(x.dim(), y.dim(), "data dimension mismatch");
    let n = x.dim() as f64;
    match params.head {
        Head::Gaussian { log_sigma2 } => {
            let sigma2 = log_sigma2.exp();
            let r = x.sub(y);
            let ss = r.dot(&r);
            -0.5 * n * ((2.0 * std::f64::consts::PI).ln() + log_sigma2) - 0.5 * ss / sigma2
        }
        Head::Bernoulli => {
            let mut s = 0.0;
            for i in 0..x.dim() {
                let t = y[i];
                s += x[i] * t - softplus(t);
            }
            s
        }
        Head::Linear => panic!("decoder_logp requires a likelihood head"),
    }
}

/// Gradient of `ln p(x|z)` with respect to the pre-head output.
fn head_output_grad(params: &MlpParams, x: &DenseVector, y: &DenseVector) -> DenseVector {
    match params.head {
        Head::Gaussian { log_sigma2 } => x.sub(y).scaled((-log_sigma2).exp()),
        Head::Bernoulli => {
            DenseVector::new((0..x.dim()).map(|i| x[i] - sigmoid(y[i])).collect())
        }
        Head::Linear => panic!("likelihood gradient requires a likelihood head"),
    }
}

/// `grad_theta ln p(x|z)` by reverse accumulation, including the
/// `d/d ln sigma^2` component for the Gaussian head.
pub fn decoder_logp_grad_params(params: &MlpParams, x: &DenseVector, z: &DenseVector) -> GradBundle {
    let trace = forward_trace(params, z);
    let g = head_output_grad(params, x, &trace.output);
    let (mut grads, _) = backprop(params, z, &trace, &g);
    if let Head::Gaussian { log_sigma2 } = params.head {
        let n = x.dim() as f64;
        let r = x.sub(&trace.output);
        grads.log_sigma2 = -0.5 * n + 0.5 * r.dot(&r) * (-log_sigma2).exp();
    }
    grads
}

/// `(ln p(x|z), grad_z ln p(x|z))` in one pass.
pub fn decoder_logp_grad_z(
    params: &MlpParams,
    x: &DenseVector,
    z: &DenseVector,
) -> (f64, DenseVector) {
    let trace = forward_trace(params, z);
    let logp = decoder_logp_at_output(params, x, &trace.output);
    let g = head_output_grad(params, x, &trace.output);
    let gz = masked_vjp(params, &trace.masks, &g);
    (logp, gz)
}

/// Deterministic encoder forward pass: the raw pre-head output.
pub fn encoder_forward(params: &MlpParams, x: &DenseVector) -> DenseVector {
    forward(params, x).0
}

/// Amortized diagonal-Gaussian encoder: splits a `2d`-wide output into the
/// mean and per-dimension log standard deviation halves.
pub fn encoder_forward_vae(params: &MlpParams, x: &DenseVector) -> (DenseVector, DenseVector) {
    let out = encoder_forward(params, x);
    let d2 = out.dim();
    assert!(d2 % 2 == 0, "VAE encoder output width must be even");
    let d = d2 / 2;
    let mu = DenseVector::from_slice(&out.as_slice()[..d]);
    let log_sigma = DenseVector::from_slice(&out.as_slice()[d..]);
    (mu, log_sigma)
}

/// Gain used by [`he_init`]: preserves backward-pass variance through the
/// two-rectifier-plus-linear stacks used here.
pub fn he_gain() -> f64 {
    2f64.cbrt()
}

/// He initialization: weight entries `~ N(0, gain^2 * 2 / fan_in)` with
/// gain `2^(1/3)`, biases zero.
pub fn he_init(dims: &[usize], head: Head, rng: &mut Rng) -> MlpParams {
    assert!(dims.len() >= 2, "need at least input and output dims");
    let gain = he_gain();
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let std = gain * (2.0 / fan_in as f64).sqrt();
        let weight = DenseMatrix::from_fn(fan_out, fan_in, |_, _| std * rng.normal());
        layers.push(Layer {
            weight,
            bias: DenseVector::zeros(fan_out),
        });
    }
    MlpParams::new(layers, head)
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First/second moment accumulators mirroring an [`MlpParams`].
#[derive(Debug, Clone)]
pub struct AdamState {
    m: GradBundle,
    v: GradBundle,
    step: u64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        AdamState {
            m: GradBundle::zeros_like(params),
            v: GradBundle::zeros_like(params),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Internal buffers, exposed for checkpointing.
    pub fn raw(&self) -> (&GradBundle, &GradBundle, u64) {
        (&self.m, &self.v, self.step)
    }

    pub fn restore(m: GradBundle, v: GradBundle, step: u64) -> Self {
        AdamState { m, v, step }
    }
}

/// One bias-corrected ADAM step, ascending along `grads` (callers maximizing
/// an objective pass its gradient; descent passes the negated gradient).
pub fn adam_step(state: &mut AdamState, params: &mut MlpParams, grads: &GradBundle, lr: f64) {
    assert_eq!(state.m.layers.len(), params.layers.len(), "state shape mismatch");
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let mhat = *m / bc1;
        let vhat = *v / bc2;
        *p += lr * mhat / (vhat.sqrt() + ADAM_EPS);
    };
    assert_eq!(grads.layers.len(), params.layers.len(), "grad shape mismatch");
    for (idx, l) in params.layers.iter_mut().enumerate() {
        let gl = &grads.layers[idx];
        let gm = &mut state.m.layers[idx];
        let gv = &mut state.v.layers[idx];
        assert_eq!(
            (gl.weight.rows(), gl.weight.cols()),
            (l.weight.rows(), l.weight.cols())
        );
        for ((p, m), (v, g)) in l
            .weight
            .as_mut_slice()
            .iter_mut()
            .zip(gm.weight.as_mut_slice())
            .zip(gv.weight.as_mut_slice().iter_mut().zip(gl.weight.as_slice()))
        {
            update(p, m, v, *g);
        }
        for ((p, m), (v, g)) in l
            .bias
            .as_mut_slice()
            .iter_mut()
            .zip(gm.bias.as_mut_slice())
            .zip(gv.bias.as_mut_slice().iter_mut().zip(gl.bias.as_slice()))
        {
            update(p, m, v, *g);
        }
    }
    if let Head::Gaussian { log_sigma2 } = &mut params.head {
        let mut ls = *log_sigma2;
        update(
            &mut ls,
            &mut state.m.log_sigma2,
            &mut state.v.log_sigma2,
            grads.log_sigma2,
        );
        *log_sigma2 = ls.clamp(LOG_SIGMA2_MIN, LOG_SIGMA2_MAX);
    }
}
