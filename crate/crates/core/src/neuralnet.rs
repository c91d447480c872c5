//! Dense feed-forward network: forward pass, binary cross-entropy and exact
//! backpropagation.
//!
//! Hidden layers use ReLU (subgradient 0 at 0), the output layer uses a
//! sigmoid. Weights are stored per layer as row-major `out x in` matrices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{chunked_reduce, Execution};
use crate::EncodedSample;

/// Clamp applied to probabilities before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("expected input of length {expected}, got {found}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("trace does not belong to this model")]
    TraceMismatch,
    #[error("invalid layer dimensions {0:?}")]
    BadDims(Vec<usize>),
    #[error("empty batch")]
    EmptyBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
}

pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Relu => a.max(0.0),
            Activation::Sigmoid => sigmoid(a),
        }
    }

    // derivative expressed through pre-activation `a` and output `y`
    fn derivative(self, a: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layer_dims: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    /// `weights[l]` has `layer_dims[l + 1] * layer_dims[l]` entries, row-major.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

fn check_dims(dims: &[usize]) -> Result<(), NetError> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(NetError::BadDims(dims.to_vec()));
    }
    Ok(())
}

/// Layer sizes `[input, hidden x n_hidden, output]`.
pub fn layer_dims(input: usize, hidden_width: usize, n_hidden: usize, output: usize) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend(std::iter::repeat_n(hidden_width, n_hidden));
    dims.push(output);
    dims
}

impl MlpModel {
    /// All parameters zero.
    pub fn zeros(layer_dims: &[usize]) -> Result<Self, NetError> {
        check_dims(layer_dims)?;
        let weights = layer_dims.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect();
        let biases = layer_dims[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            hidden_activation: Activation::Relu,
            output_activation: Activation::Sigmoid,
            weights,
            biases,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// Shapes agree with `layer_dims` and every parameter is finite.
    pub fn is_valid(&self) -> bool {
        check_dims(&self.layer_dims).is_ok()
            && self.weights.len() == self.n_layers()
            && self.biases.len() == self.n_layers()
            && self.layer_dims.windows(2).zip(&self.weights).all(|(d, w)| w.len() == d[0] * d[1])
            && self.layer_dims[1..].iter().zip(&self.biases).all(|(&n, b)| b.len() == n)
            && self.weights.iter().chain(&self.biases).flatten().all(|v| v.is_finite())
    }

    /// Parameters flattened layer by layer: weights then biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length");
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            b.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
    }

    /// Output of the network only.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>, NetError> {
        forward(self, x).map(|(y, _)| y)
    }
}

/// Cached pre-activations and activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `pre[l]` is the pre-activation of layer `l`.
    pub pre: Vec<Vec<f64>>,
    /// `act[0]` is the input; `act[l + 1]` is the output of layer `l`.
    pub act: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.act.last().unwrap()
    }

    /// Output pre-activations.
    pub fn logits(&self) -> &[f64] {
        self.pre.last().unwrap()
    }

    fn matches(&self, model: &MlpModel) -> bool {
        self.act.len() == model.layer_dims.len()
            && self.pre.len() == model.n_layers()
            && self.act.iter().zip(&model.layer_dims).all(|(a, &n)| a.len() == n)
    }
}

pub fn forward(model: &MlpModel, x: &[f64]) -> Result<(Vec<f64>, ForwardTrace), NetError> {
    if x.len() != model.input_dim() {
        return Err(NetError::ArityMismatch { expected: model.input_dim(), found: x.len() });
    }
    let n = model.n_layers();
    let mut pre = Vec::with_capacity(n);
    let mut act = Vec::with_capacity(n + 1);
    act.push(x.to_vec());
    for l in 0..n {
        let (n_in, n_out) = (model.layer_dims[l], model.layer_dims[l + 1]);
        let w = &model.weights[l];
        let input = &act[l];
        let z: Vec<f64> = (0..n_out)
            .map(|o| {
                let row = &w[o * n_in..(o + 1) * n_in];
                model.biases[l][o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        let f = if l + 1 == n { model.output_activation } else { model.hidden_activation };
        act.push(z.iter().map(|&a| f.apply(a)).collect());
        pre.push(z);
    }
    let y = act[n].clone();
    Ok((y, ForwardTrace { pre, act }))
}

/// `-[y ln p + (1 - y) ln(1 - p)]` with `p` clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub fn bce_loss(y_pred: f64, y_true: f64) -> f64 {
    let p = y_pred.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(y_true * p.ln() + (1.0 - y_true) * (1.0 - p).ln())
}

/// Binary cross-entropy of `sigmoid(logit)`, evaluated without forming the
/// probability. Its derivative in `logit` is exactly `sigmoid(logit) - y`.
pub fn bce_with_logit(logit: f64, y_true: f64) -> f64 {
    // softplus(a) - y a
    let softplus = if logit > 0.0 { logit + (-logit).exp().ln_1p() } else { logit.exp().ln_1p() };
    softplus - y_true * logit
}

/// Parameter gradient, shaped like the model it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradient {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            weights: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn add_assign(&mut self, other: &Gradient) {
        for (a, b) in self.weights.iter_mut().chain(self.biases.iter_mut()).zip(other.weights.iter().chain(&other.biases)) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()).flatten() {
            *v *= k;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).flatten().all(|v| v.is_finite())
    }
}

/// Backpropagates `d_logits` (the loss gradient with respect to the output
/// pre-activations). Returns the parameter gradient and the gradient with
/// respect to the network input.
pub fn backward_logits(model: &MlpModel, trace: &ForwardTrace, d_logits: &[f64]) -> Result<(Gradient, Vec<f64>), NetError> {
    if !trace.matches(model) || d_logits.len() != model.output_dim() {
        return Err(NetError::TraceMismatch);
    }
    let mut grad = Gradient::zeros_like(model);
    let mut delta = d_logits.to_vec();
    for l in (0..model.n_layers()).rev() {
        let n_in = model.layer_dims[l];
        let input = &trace.act[l];
        let gw = &mut grad.weights[l];
        for (o, &d) in delta.iter().enumerate() {
            if d != 0.0 {
                for (g, &x) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                    *g = d * x;
                }
            }
        }
        grad.biases[l].copy_from_slice(&delta);

        let w = &model.weights[l];
        let mut d_input = vec![0.0; n_in];
        for (o, &d) in delta.iter().enumerate() {
            if d != 0.0 {
                for (di, &wv) in d_input.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *di += d * wv;
                }
            }
        }
        if l > 0 {
            // input of layer l is the hidden activation of layer l - 1
            let f = model.hidden_activation;
            for ((di, &a), &y) in d_input.iter_mut().zip(&trace.pre[l - 1]).zip(&trace.act[l]) {
                *di *= f.derivative(a, y);
            }
        }
        delta = d_input;
    }
    Ok((grad, delta))
}

/// Gradient of [`bce_with_logit`] for a single-output network.
pub fn backward(model: &MlpModel, trace: &ForwardTrace, y_true: f64) -> Result<Gradient, NetError> {
    if model.output_dim() != 1 || !trace.matches(model) {
        return Err(NetError::TraceMismatch);
    }
    let d = match model.output_activation {
        Activation::Sigmoid => trace.output()[0] - y_true,
        // generic chain rule for a non-sigmoid output
        f => {
            let p = trace.output()[0].clamp(PROB_EPS, 1.0 - PROB_EPS);
            let dl_dp = (p - y_true) / (p * (1.0 - p));
            dl_dp * f.derivative(trace.logits()[0], trace.output()[0])
        }
    };
    backward_logits(model, trace, &[d]).map(|(g, _)| g)
}

/// Glorot-uniform weights, zero biases; deterministic per seed.
pub fn init_params(layer_dims: &[usize], seed: u64) -> Result<MlpModel, NetError> {
    let mut model = MlpModel::zeros(layer_dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (l, w) in model.weights.iter_mut().enumerate() {
        let (fan_in, fan_out) = (layer_dims[l] as f64, layer_dims[l + 1] as f64);
        let limit = (6.0 / (fan_in + fan_out)).sqrt();
        for v in w.iter_mut() {
            *v = rng.random_range(-limit..=limit);
        }
    }
    Ok(model)
}

/// Mean [`bce_with_logit`] loss and mean gradient over a labelled batch.
pub fn batch_loss_grad(model: &MlpModel, samples: &[EncodedSample], exec: Execution) -> Result<(f64, Gradient), NetError> {
    if samples.is_empty() {
        return Err(NetError::EmptyBatch);
    }
    let partial = |chunk: &[EncodedSample]| -> Result<(f64, Gradient), NetError> {
        let mut loss = 0.0;
        let mut grad = Gradient::zeros_like(model);
        for s in chunk {
            let (_, trace) = forward(model, &s.features)?;
            let y = s.label.target();
            loss += bce_with_logit(trace.logits()[0], y);
            grad.add_assign(&backward(model, &trace, y)?);
        }
        Ok((loss, grad))
    };
    let merge = |a: Result<(f64, Gradient), NetError>, b: Result<(f64, Gradient), NetError>| {
        let (la, mut ga) = a?;
        let (lb, gb) = b?;
        ga.add_assign(&gb);
        Ok((la + lb, ga))
    };
    let (loss, mut grad) = chunked_reduce(exec, samples, partial, merge).unwrap()?;
    let n = samples.len() as f64;
    grad.scale(1.0 / n);
    Ok((loss / n, grad))
}

/// Mean loss only (no gradient).
pub fn batch_loss(model: &MlpModel, samples: &[EncodedSample], exec: Execution) -> Result<f64, NetError> {
    if samples.is_empty() {
        return Err(NetError::EmptyBatch);
    }
    let partial = |chunk: &[EncodedSample]| -> Result<f64, NetError> {
        chunk.iter().try_fold(0.0, |acc, s| {
            let (_, trace) = forward(model, &s.features)?;
            Ok(acc + bce_with_logit(trace.logits()[0], s.label.target()))
        })
    };
    let total = chunked_reduce(exec, samples, partial, |a, b| Ok(a? + b?)).unwrap()?;
    Ok(total / samples.len() as f64)
}
