//! Feedforward DNN: sigmoid hidden layers, softmax output, cross-entropy
//! training by minibatch gradient descent.
//!
//! Layer `ℓ` maps `v^ℓ` to `z^ℓ = (W^ℓ)ᵀ v^ℓ + a^ℓ`; hidden layers emit
//! `v^{ℓ+1} = σ(z^ℓ)` and the last layer emits `softmax(z^L)`. Weights are
//! stored `fan_in × fan_out`, row-major.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Matrix};

/// Posteriors are clamped to this before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;

/// Default half-width of the uniform weight initialisation.
pub const DEFAULT_INIT_SCALE: f64 = 0.05;

/// Largest double strictly below one.
const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    let v = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    // keep activations in the open interval even when σ rounds to 0 or 1
    v.clamp(f64::MIN_POSITIVE, ONE_MINUS_ULP)
}

/// Numerically safe softmax (max-subtraction).
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// Index of the largest entry, ties to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `fan_in × fan_out`
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl LayerParams {
    pub fn new(weights: Matrix, biases: Vec<f64>) -> Result<Self> {
        if weights.cols() != biases.len() {
            return Err(Error::shape(format!(
                "weights are {}x{} but bias has length {}",
                weights.rows(),
                weights.cols(),
                biases.len()
            )));
        }
        if !weights.is_finite() || biases.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidInput("non-finite layer parameter".into()));
        }
        Ok(LayerParams { weights, biases })
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        LayerParams {
            weights: Matrix::zeros(fan_in, fan_out),
            biases: vec![0.0; fan_out],
        }
    }

    #[inline]
    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    #[inline]
    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }

    /// `z = Wᵀ v + a`
    fn affine(&self, v: &[f64]) -> Vec<f64> {
        let mut z = self.biases.clone();
        for (row, &vi) in self.weights.row_iter().zip(v) {
            if vi != 0.0 {
                axpy(vi, row, &mut z);
            }
        }
        z
    }
}

/// Stack of `L` sigmoid layers followed by one softmax layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<LayerParams>,
    seed: Option<u64>,
}

/// Everything one forward pass computed.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    /// `z^0 … z^L`
    pub pre_activations: Vec<Vec<f64>>,
    /// `v^0 = x, v^1 … v^L`
    pub activations: Vec<Vec<f64>>,
    pub posteriors: Vec<f64>,
}

impl ActivationTrace {
    /// Hidden-layer outputs `v^1 … v^L`.
    pub fn hidden(&self) -> &[Vec<f64>] {
        &self.activations[1..]
    }
}

/// Gradients of the loss, one entry per layer, plus the gradient with
/// respect to the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerParams>,
    pub input: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerParams::zeros(l.fan_in(), l.fan_out()))
                .collect(),
            input: vec![0.0; net.input_dim()],
        }
    }

    fn clear(&mut self) {
        for l in &mut self.layers {
            l.weights.as_mut_slice().fill(0.0);
            l.biases.fill(0.0);
        }
        self.input.fill(0.0);
    }
}

impl Network {
    pub fn new(layers: Vec<LayerParams>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network needs at least the softmax layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::shape(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].fan_out(),
                    i + 1,
                    pair[1].fan_in()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.fan_in() == 0 || l.fan_out() == 0 {
                return Err(Error::config(format!("layer {i} has a zero dimension")));
            }
            if l.weights.cols() != l.biases.len() {
                return Err(Error::shape(format!("layer {i} bias length mismatch")));
            }
        }
        Ok(Network { layers, seed: None })
    }

    /// Uniform `[-init_scale, init_scale]` weights, zero biases.
    pub fn init(layer_sizes: &[usize], seed: u64, init_scale: f64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::config(
                "layer_sizes needs at least the input dimension and the class count",
            ));
        }
        if let Some(pos) = layer_sizes.iter().position(|&n| n == 0) {
            return Err(Error::config(format!("layer size at position {pos} is zero")));
        }
        if !(init_scale.is_finite() && init_scale >= 0.0) {
            return Err(Error::config(format!("init_scale must be finite and >= 0, got {init_scale}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let weights = Matrix::from_fn(w[0], w[1], |_, _| {
                    if init_scale > 0.0 {
                        rng.random_range(-init_scale..=init_scale)
                    } else {
                        0.0
                    }
                });
                LayerParams {
                    weights,
                    biases: vec![0.0; w[1]],
                }
            })
            .collect();
        Ok(Network {
            layers,
            seed: Some(seed),
        })
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    /// Seed the network was initialised from, if any.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn class_count(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn hidden_layer_count(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(LayerParams::fan_out))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.fan_in() * l.fan_out() + l.fan_out())
            .sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite input value".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<ActivationTrace> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut pre_activations = Vec::with_capacity(n);
        let mut activations = Vec::with_capacity(n);
        activations.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&activations[i]);
            if i + 1 < n {
                activations.push(z.iter().map(|&v| sigmoid(v)).collect());
            }
            pre_activations.push(z);
        }
        let posteriors = softmax(&pre_activations[n - 1]);
        Ok(ActivationTrace {
            pre_activations,
            activations,
            posteriors,
        })
    }

    pub fn posteriors(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.posteriors)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?.posteriors))
    }

    fn check_trace(&self, trace: &ActivationTrace) -> Result<()> {
        let n = self.layers.len();
        let ok = trace.activations.len() == n
            && trace.pre_activations.len() == n
            && trace.posteriors.len() == self.class_count()
            && self
                .layers
                .iter()
                .zip(&trace.activations)
                .all(|(l, v)| l.fan_in() == v.len());
        if ok {
            Ok(())
        } else {
            Err(Error::shape("activation trace does not match network"))
        }
    }

    /// Exact gradient of `cross_entropy(trace, label)`.
    pub fn backward(&self, trace: &ActivationTrace, label: usize) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.accumulate_gradients(trace, label, 1.0, true, &mut grads)?;
        Ok(grads)
    }

    /// Adds `scale · ∇` into `acc`. The input gradient is only formed when
    /// `with_input` is set.
    pub(crate) fn accumulate_gradients(
        &self,
        trace: &ActivationTrace,
        label: usize,
        scale: f64,
        with_input: bool,
        acc: &mut Gradients,
    ) -> Result<()> {
        self.check_trace(trace)?;
        let classes = self.class_count();
        if label >= classes {
            return Err(Error::InvalidLabel { label, classes });
        }
        // output delta: p - onehot(label)
        let mut delta = trace.posteriors.clone();
        delta[label] -= 1.0;

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let v = &trace.activations[l];
            let g = &mut acc.layers[l];
            for (i, &vi) in v.iter().enumerate() {
                if vi != 0.0 {
                    axpy(scale * vi, &delta, g.weights.row_mut(i));
                }
            }
            axpy(scale, &delta, &mut g.biases);

            if l == 0 && !with_input {
                break;
            }
            // back through Wᵀ, then σ' = v(1-v) for hidden outputs
            let mut prev: Vec<f64> = layer.weights.row_iter().map(|r| dot(r, &delta)).collect();
            if l == 0 {
                axpy(scale, &prev, &mut acc.input);
                break;
            }
            for (d, &vi) in prev.iter_mut().zip(v) {
                *d *= vi * (1.0 - vi);
            }
            delta = prev;
        }
        Ok(())
    }

    /// Gradient of `cross_entropy(trace, label)` with respect to the input
    /// only; cheaper than [`Network::backward`].
    pub fn input_gradient(&self, trace: &ActivationTrace, label: usize) -> Result<Vec<f64>> {
        self.check_trace(trace)?;
        let classes = self.class_count();
        if label >= classes {
            return Err(Error::InvalidLabel { label, classes });
        }
        let mut delta = trace.posteriors.clone();
        delta[label] -= 1.0;
        for l in (0..self.layers.len()).rev() {
            let mut prev: Vec<f64> = self.layers[l].weights.row_iter().map(|r| dot(r, &delta)).collect();
            if l > 0 {
                for (d, &vi) in prev.iter_mut().zip(&trace.activations[l]) {
                    *d *= vi * (1.0 - vi);
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// Serialize as a single JSON document.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&NetworkFile::from(self)).expect("network serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(s)?;
        file.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk form of a [`Network`].
#[derive(Debug, Serialize, Deserialize)]
struct NetworkFile {
    layer_sizes: Vec<usize>,
    seed: Option<u64>,
    /// Per layer, `fan_in × fan_out` row-major.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl From<&Network> for NetworkFile {
    fn from(net: &Network) -> Self {
        NetworkFile {
            layer_sizes: net.layer_sizes(),
            seed: net.seed,
            weights: net
                .layers
                .iter()
                .map(|l| l.weights.as_slice().to_vec())
                .collect(),
            biases: net.layers.iter().map(|l| l.biases.clone()).collect(),
        }
    }
}

impl TryFrom<NetworkFile> for Network {
    type Error = Error;

    fn try_from(f: NetworkFile) -> Result<Network> {
        let n = f.layer_sizes.len();
        if n < 2 || f.weights.len() != n - 1 || f.biases.len() != n - 1 {
            return Err(Error::shape(
                "layer_sizes, weights and biases disagree on the layer count",
            ));
        }
        let layers = f
            .layer_sizes
            .windows(2)
            .zip(f.weights)
            .zip(f.biases)
            .map(|((dims, w), b)| LayerParams::new(Matrix::from_row_major(dims[0], dims[1], w)?, b))
            .collect::<Result<Vec<_>>>()?;
        let mut net = Network::new(layers)?;
        net.seed = f.seed;
        Ok(net)
    }
}

/// `-ln p[label]`, with `p` clamped at [`PROB_FLOOR`].
pub fn cross_entropy(trace: &ActivationTrace, label: usize) -> Result<f64> {
    let classes = trace.posteriors.len();
    if label >= classes {
        return Err(Error::InvalidLabel { label, classes });
    }
    let p = trace.posteriors[label];
    // NaN must survive so divergence is visible
    Ok(if p.is_nan() { p } else { -p.max(PROB_FLOOR).ln() })
}

/// Labeled network inputs, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrames {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl LabeledFrames {
    pub fn new(inputs: Matrix, labels: Vec<usize>) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} frames but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        Ok(LabeledFrames { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.inputs.row_iter().zip(self.labels.iter().copied())
    }

    /// Concatenate frame sets of equal width.
    pub fn concat(parts: &[LabeledFrames]) -> Result<Self> {
        let dim = parts.first().map_or(0, LabeledFrames::dim);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.dim() != dim && !p.is_empty() {
                return Err(Error::shape("frame sets differ in width"));
            }
            data.extend_from_slice(p.inputs.as_slice());
            labels.extend_from_slice(&p.labels);
        }
        LabeledFrames::new(Matrix::from_row_major(labels.len(), dim, data)?, labels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            minibatch_size: 32,
            epochs: 10,
            seed: 0,
            init_scale: DEFAULT_INIT_SCALE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.minibatch_size == 0 {
            return Err(Error::config("minibatch_size must be at least 1"));
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(Error::config("init_scale must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    /// Mean training cross-entropy of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Minibatch gradient descent on mean cross-entropy. The input network is
/// left untouched; a trained copy is returned.
pub fn train(net: &Network, data: &LabeledFrames, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    if data.dim() != net.input_dim() {
        return Err(Error::shape(format!(
            "frames have width {}, network expects {}",
            data.dim(),
            net.input_dim()
        )));
    }
    let classes = net.class_count();
    if let Some(&label) = data.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidLabel { label, classes });
    }

    let mut model = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = Gradients::zeros_like(&model);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.minibatch_size) {
            grads.clear();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let trace = model.forward(data.frame(i))?;
                total += cross_entropy(&trace, data.labels[i])?;
                model.accumulate_gradients(&trace, data.labels[i], scale, false, &mut grads)?;
            }
            for (layer, g) in model.layers.iter_mut().zip(&grads.layers) {
                axpy(-cfg.learning_rate, g.weights.as_slice(), layer.weights.as_mut_slice());
                axpy(-cfg.learning_rate, &g.biases, &mut layer.biases);
            }
        }
        let loss = total / data.len() as f64;
        let params_finite = model
            .layers
            .iter()
            .all(|l| l.weights.is_finite() && l.biases.iter().all(|b| b.is_finite()));
        if !loss.is_finite() || !params_finite {
            return Err(Error::TrainingDiverged { epoch, loss });
        }
        epoch_losses.push(loss);
    }
    Ok(TrainOutcome {
        network: model,
        epoch_losses,
    })
}

/// Predicted class of every frame.
pub fn predict_all(net: &Network, data: &LabeledFrames) -> Result<Vec<usize>> {
    if data.dim() != net.input_dim() && !data.is_empty() {
        return Err(Error::shape(format!(
            "frames have width {}, network expects {}",
            data.dim(),
            net.input_dim()
        )));
    }
    data.inputs.row_iter().map(|x| net.predict(x)).collect()
}

/// Fraction of misclassified frames; 0 for an empty set.
pub fn frame_error_rate(net: &Network, data: &LabeledFrames) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let predictions = predict_all(net, data)?;
    let wrong = predictions
        .iter()
        .zip(&data.labels)
        .filter(|(p, l)| p != l)
        .count();
    Ok(wrong as f64 / data.len() as f64)
}

pub fn frame_accuracy(net: &Network, data: &LabeledFrames) -> Result<f64> {
    Ok(1.0 - frame_error_rate(net, data)?)
}
