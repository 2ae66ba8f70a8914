//! Minimal fully-connected network with analytic forward/backward passes,
//! softmax utilities, and plain SGD. This one substrate backs the cloud
//! teacher, the per-node students, and the scheduler's critic and actor.
//!
//! The layer graph is fixed (dense layers, elementwise activations), so
//! gradients are hand-derived and checked against finite differences in
//! the test suites.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::NnError;

/// Floor applied inside logarithms so a zero probability never produces
/// an infinite loss. The single numerical fudge in this crate.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed via the pre-activation value.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

// ============================================================================
// Layers and network
// ============================================================================

/// Dense layer; weights stored row-major as `[output][input]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Layer {
    pub input_dim: usize,
    pub output_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn forward_into(&self, input: &[f64], pre: &mut Vec<f64>, out: &mut Vec<f64>) {
        pre.clear();
        out.clear();
        for o in 0..self.output_dim {
            let row = &self.weights[o * self.input_dim..(o + 1) * self.input_dim];
            let mut acc = self.biases[o];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            pre.push(acc);
            out.push(self.activation.apply(acc));
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Cached activations from one forward pass, consumed by `backward`.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: Vec<f64>,
    pre_activations: Vec<Vec<f64>>,
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache from a non-empty net")
    }
}

/// Per-layer parameter gradients, same shapes as the corresponding layers.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            for x in layer.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        let mut acc = 0.0;
        for layer in self.weights.iter().chain(self.biases.iter()) {
            for x in layer {
                acc += x * x;
            }
        }
        acc.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .all(|layer| layer.iter().all(|x| x.is_finite()))
    }
}

impl Mlp {
    /// Build a network with the given layer sizes (`sizes[0]` is the input
    /// dimension). Hidden layers use `hidden_activation`; the output layer
    /// is linear. Weights init uniform in `±1/sqrt(fan_in)` from `rng`.
    pub fn new(sizes: &[usize], hidden_activation: Activation, rng: &mut ChaCha12Rng) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (input_dim, output_dim) = (w[0], w[1]);
                let bound = 1.0 / (input_dim as f64).sqrt();
                let weights = (0..input_dim * output_dim)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect();
                Layer {
                    input_dim,
                    output_dim,
                    weights,
                    biases: vec![0.0; output_dim],
                    activation: if i + 2 == sizes.len() {
                        Activation::Identity
                    } else {
                        hidden_activation
                    },
                }
            })
            .collect();
        Self { layers }
    }

    /// All-zero parameters; gives a uniform policy through a softmax head.
    pub fn zeros(sizes: &[usize], hidden_activation: Activation) -> Self {
        let mut rng = <ChaCha12Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut net = Self::new(sizes, hidden_activation, &mut rng);
        for layer in &mut net.layers {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output_dim)
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_cached(input).activations.pop().unwrap()
    }

    pub fn forward_cached(&self, input: &[f64]) -> ForwardCache {
        assert_eq!(input.len(), self.input_dim(), "input width mismatch");
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut current = input.to_vec();
        for layer in &self.layers {
            let mut pre = Vec::with_capacity(layer.output_dim);
            let mut out = Vec::with_capacity(layer.output_dim);
            layer.forward_into(&current, &mut pre, &mut out);
            current = out.clone();
            pre_activations.push(pre);
            activations.push(out);
        }
        ForwardCache { input: input.to_vec(), pre_activations, activations }
    }

    /// Backpropagate a loss gradient at the output through the cached pass.
    pub fn backward(&self, cache: &ForwardCache, dloss_doutput: &[f64]) -> Gradients {
        assert_eq!(dloss_doutput.len(), self.output_dim());
        let mut grads = Gradients::zeros_like(self);
        let mut upstream = dloss_doutput.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre_activations[li];
            let below: &[f64] =
                if li == 0 { &cache.input } else { &cache.activations[li - 1] };
            let mut next_upstream = vec![0.0; layer.input_dim];
            for o in 0..layer.output_dim {
                let dz = upstream[o] * layer.activation.derivative(pre[o]);
                grads.biases[li][o] += dz;
                let row = o * layer.input_dim;
                for i in 0..layer.input_dim {
                    grads.weights[li][row + i] += dz * below[i];
                    next_upstream[i] += dz * layer.weights[row + i];
                }
            }
            upstream = next_upstream;
        }
        grads
    }

    /// One SGD step: `params += step_sign * lr * grads`, after optional
    /// global-norm clipping. Pass `step_sign = -1.0` for descent, `+1.0`
    /// for ascent.
    pub fn apply_step(&mut self, grads: &Gradients, lr: f64, clip_norm: Option<f64>, step_sign: f64) {
        let mut scaled = grads.clone();
        if let Some(clip) = clip_norm {
            let norm = scaled.l2_norm();
            if norm > clip {
                scaled.scale(clip / norm);
            }
        }
        for (li, layer) in self.layers.iter_mut().enumerate() {
            for (w, g) in layer.weights.iter_mut().zip(&scaled.weights[li]) {
                *w += step_sign * lr * g;
            }
            for (b, g) in layer.biases.iter_mut().zip(&scaled.biases[li]) {
                *b += step_sign * lr * g;
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.biases);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count());
        let mut offset = 0;
        for layer in &mut self.layers {
            let wn = layer.weights.len();
            layer.weights.copy_from_slice(&params[offset..offset + wn]);
            offset += wn;
            let bn = layer.biases.len();
            layer.biases.copy_from_slice(&params[offset..offset + bn]);
            offset += bn;
        }
    }

    pub fn all_params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.biases.iter()).all(|x| x.is_finite()))
    }

    /// Flat-array snapshot with a shape header; `byte_size` approximates
    /// what shipping the full model over the air would cost (f32 per
    /// parameter plus one u32 per shape entry).
    pub fn snapshot(&self) -> ModelSnapshot {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(|l| l.output_dim));
        ModelSnapshot { layer_sizes: sizes, params: self.params_flat().iter().map(|&p| p as f32).collect() }
    }
}

/// Serialized model: shape header plus flat f32 parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub layer_sizes: Vec<usize>,
    pub params: Vec<f32>,
}

impl ModelSnapshot {
    pub fn byte_size(&self) -> usize {
        self.layer_sizes.len() * 4 + self.params.len() * 4
    }
}

// ============================================================================
// Softmax and divergence utilities
// ============================================================================

/// Numerically stabilized softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Softmax with a temperature divisor; errors on nonpositive temperature.
pub fn softmax_temp(logits: &[f64], temperature: f64) -> Result<Vec<f64>, NnError> {
    if temperature <= 0.0 {
        return Err(NnError::NonPositiveTemperature(temperature));
    }
    let scaled: Vec<f64> = logits.iter().map(|&x| x / temperature).collect();
    Ok(softmax(&scaled))
}

/// KL divergence `sum p log(p/q)`; zero `q` components are floored at
/// `LOG_EPS` so the result stays finite.
pub fn kl_div(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            if pi <= 0.0 {
                0.0
            } else {
                pi * (pi / qi.max(LOG_EPS)).ln()
            }
        })
        .sum()
}

/// Central-finite-difference gradient of `loss` with respect to every
/// parameter of `net`, in `params_flat` order. Verification helper: it
/// only ever calls the forward pass, so it stays independent of the
/// analytic backward path it is used to check.
pub fn finite_diff_params(net: &Mlp, loss: &dyn Fn(&Mlp) -> f64, h: f64) -> Vec<f64> {
    let base = net.params_flat();
    let mut out = vec![0.0; base.len()];
    let mut probe = net.clone();
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        probe.set_params_flat(&plus);
        let f_plus = loss(&probe);
        let mut minus = base.clone();
        minus[i] -= h;
        probe.set_params_flat(&minus);
        let f_minus = loss(&probe);
        out[i] = (f_plus - f_minus) / (2.0 * h);
    }
    out
}

/// Flatten a `Gradients` into `params_flat` order for comparisons.
pub fn flatten_gradients(net: &Mlp, grads: &Gradients) -> Vec<f64> {
    let mut flat = Vec::with_capacity(net.param_count());
    for li in 0..net.layers.len() {
        flat.extend_from_slice(&grads.weights[li]);
        flat.extend_from_slice(&grads.biases[li]);
    }
    flat
}

/// Softmax over the subset of positions where `mask` is true; masked
/// positions get probability zero.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    assert_eq!(logits.len(), mask.len());
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&x, _)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&x, &m)| if m { (x - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}
