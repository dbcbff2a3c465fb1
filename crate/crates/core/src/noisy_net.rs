//! Noisy feedforward networks `T_ℓ = φ(W_ℓ T_{ℓ-1} + b_ℓ) + Z_ℓ`,
//! `Z_ℓ ~ N(0, β_ℓ² I)`, with plain (S)GD training, the Parseval step, the
//! toy networks and dataset generators.
//!
//! Layers are numbered from 1. `S_ℓ` is the pre-noise output and `T_ℓ` the
//! noisy one.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, substream, StreamRng, TAG_DATA, TAG_INIT, TAG_TRAIN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Activation {
    Tanh,
    Relu,
    LeakyRelu { slope: f64 },
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => a.tanh(),
            Activation::Relu => a.max(0.0),
            Activation::LeakyRelu { slope } => {
                if a >= 0.0 {
                    a
                } else {
                    slope * a
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-a).exp()),
            Activation::Linear => a,
        }
    }

    /// dφ/da given the pre-activation `a` and output `s = φ(a)`.
    fn derivative(self, a: f64, s: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - s * s,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if a >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Sigmoid => s * (1.0 - s),
            Activation::Linear => 1.0,
        }
    }

    pub fn name(self) -> String {
        match self {
            Activation::Tanh => "tanh".into(),
            Activation::Relu => "relu".into(),
            Activation::LeakyRelu { slope } => format!("leaky_relu({slope})"),
            Activation::Sigmoid => "sigmoid".into(),
            Activation::Linear => "linear".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `d_ℓ × d_{ℓ-1}`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
    pub beta: f64,
}

impl Layer {
    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyNet {
    layers: Vec<Layer>,
}

/// Noise handling for a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Noisy(u64),
    Deterministic,
}

impl NoisyNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter("network needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::DimensionMismatch {
                    context: "layer bias",
                    expected: l.out_dim(),
                    got: l.bias.len(),
                });
            }
            if k > 0 && l.in_dim() != layers[k - 1].out_dim() {
                return Err(Error::DimensionMismatch {
                    context: "adjacent layer widths",
                    expected: layers[k - 1].out_dim(),
                    got: l.in_dim(),
                });
            }
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("network parameters"));
            }
            if !(l.beta.is_finite() && l.beta >= 0.0) {
                return Err(Error::InvalidParameter(format!("layer {} beta must be >= 0", k + 1)));
            }
            if let Activation::LeakyRelu { slope } = l.activation {
                if !slope.is_finite() {
                    return Err(Error::NonFinite("leaky relu slope"));
                }
            }
        }
        Ok(Self { layers })
    }

    /// Fan-in uniform initialization `U[-1/√fan_in, 1/√fan_in]` for weights
    /// and biases. `betas[k]` is the noise of layer `k + 1`.
    pub fn init(dims: &[usize], activations: &[Activation], betas: &[f64], seed: u64) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 || betas.len() != dims.len() - 1 {
            return Err(Error::InvalidParameter(format!(
                "need dims of length L+1 and L activations/betas, got {}, {}, {}",
                dims.len(),
                activations.len(),
                betas.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidParameter("layer widths must be positive".into()));
        }
        let init_seed = derive_seed(seed, TAG_INIT);
        let layers = (0..dims.len() - 1)
            .map(|k| {
                let mut rng = substream(init_seed, k as u64);
                let bound = 1.0 / (dims[k] as f64).sqrt();
                let weights = Array2::from_shape_simple_fn((dims[k + 1], dims[k]), || rng.random_range(-bound..=bound));
                let bias = Array1::from_shape_simple_fn(dims[k + 1], || rng.random_range(-bound..=bound));
                Layer {
                    weights,
                    bias,
                    activation: activations[k],
                    beta: betas[k],
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// `[d_0, d_1, ..., d_L]`
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    /// β of layer `l` (1-based).
    pub fn beta(&self, l: usize) -> f64 {
        self.layers[l - 1].beta
    }

    pub fn with_betas(mut self, beta: f64, include_output: bool) -> Self {
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter_mut().enumerate() {
            if k < last || include_output {
                l.beta = beta;
            }
        }
        self
    }

    fn check_layer(&self, l: usize) -> Result<()> {
        if l == 0 || l > self.depth() {
            return Err(Error::InvalidParameter(format!(
                "layer index {l} out of range 1..={}",
                self.depth()
            )));
        }
        Ok(())
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                got: len,
            });
        }
        Ok(())
    }

    /// `S_ℓ` for one input. Layers below `upto` are noised from `rng` when
    /// given.
    fn propagate(&self, x: ArrayView1<f64>, upto: usize, mut rng: Option<&mut StreamRng>) -> Array1<f64> {
        let mut t = x.to_owned();
        for (k, layer) in self.layers[..upto].iter().enumerate() {
            let mut s = layer.weights.dot(&t) + &layer.bias;
            s.mapv_inplace(|a| layer.activation.apply(a));
            if k + 1 == upto {
                return s;
            }
            if let Some(r) = rng.as_deref_mut() {
                add_noise(s.view_mut().into_slice().expect("contiguous"), layer.beta, r);
            }
            t = s;
        }
        unreachable!("upto >= 1")
    }

    /// Per-layer `(S_ℓ, T_ℓ)` for one input.
    pub fn forward(&self, x: &[f64], mode: Mode) -> Result<Vec<(Array1<f64>, Array1<f64>)>> {
        self.check_input(x.len())?;
        let mut rng = match mode {
            Mode::Noisy(seed) => Some(substream(seed, 0)),
            Mode::Deterministic => None,
        };
        let mut out = Vec::with_capacity(self.depth());
        let mut t = Array1::from(x.to_vec());
        for layer in &self.layers {
            let mut s = layer.weights.dot(&t) + &layer.bias;
            s.mapv_inplace(|a| layer.activation.apply(a));
            let mut next = s.clone();
            if let Some(r) = rng.as_mut() {
                add_noise(next.as_slice_mut().expect("contiguous"), layer.beta, r);
            }
            out.push((s, next.clone()));
            t = next;
        }
        Ok(out)
    }

    /// Batch forward pass with explicit noise matrices (one per layer, rows
    /// matching `x`). `None` means no noise anywhere.
    pub fn forward_batch(&self, x: ArrayView2<f64>, noise: Option<&[Array2<f64>]>) -> Result<BatchTrace> {
        self.check_input(x.ncols())?;
        if let Some(z) = noise {
            if z.len() != self.depth() {
                return Err(Error::DimensionMismatch {
                    context: "noise layers",
                    expected: self.depth(),
                    got: z.len(),
                });
            }
        }
        let mut pre = Vec::with_capacity(self.depth());
        let mut post = Vec::with_capacity(self.depth());
        let mut outputs = Vec::with_capacity(self.depth());
        let mut t = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let a = t.dot(&layer.weights.t()) + &layer.bias;
            let s = a.mapv(|v| layer.activation.apply(v));
            let mut next = s.clone();
            if let Some(z) = noise {
                if z[k].dim() != next.dim() {
                    return Err(Error::DimensionMismatch {
                        context: "noise matrix rows",
                        expected: next.nrows(),
                        got: z[k].nrows(),
                    });
                }
                next += &z[k];
            }
            pre.push(a);
            post.push(s);
            outputs.push(t);
            t = next;
        }
        Ok(BatchTrace {
            inputs: outputs,
            pre,
            post,
            output: t,
        })
    }

    /// Fresh noise matrices for a batch of `rows`.
    pub fn draw_noise(&self, rows: usize, rng: &mut StreamRng) -> Vec<Array2<f64>> {
        self.layers
            .iter()
            .map(|l| {
                let mut z = Array2::zeros((rows, l.out_dim()));
                if l.beta > 0.0 {
                    add_noise(z.as_slice_mut().expect("contiguous"), l.beta, rng);
                }
                z
            })
            .collect()
    }

    /// Loss and parameter gradients. Noise enters additively, so it passes
    /// gradients unchanged.
    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<f64>,
        targets: &Targets,
        loss: Loss,
        noise: Option<&[Array2<f64>]>,
    ) -> Result<(f64, Vec<(Array2<f64>, Array1<f64>)>)> {
        let trace = self.forward_batch(x, noise)?;
        let (value, mut delta_t) = loss.evaluate(trace.output.view(), targets)?;
        let mut grads = Vec::with_capacity(self.depth());
        for k in (0..self.depth()).rev() {
            let layer = &self.layers[k];
            let mut delta = delta_t;
            ndarray::Zip::from(&mut delta)
                .and(&trace.pre[k])
                .and(&trace.post[k])
                .for_each(|g, &a, &s| *g *= layer.activation.derivative(a, s));
            let gw = delta.t().dot(&trace.inputs[k]);
            let gb = delta.sum_axis(Axis(0));
            delta_t = delta.dot(&layer.weights);
            grads.push((gw, gb));
        }
        grads.reverse();
        Ok((value, grads))
    }

    /// Deterministic-mode loss on a dataset.
    pub fn evaluate(&self, data: &LabeledDataset, loss: Loss) -> Result<f64> {
        let targets = Targets::from_labels(&data.labels, loss, self.output_dim())?;
        let trace = self.forward_batch(data.inputs.view(), None)?;
        Ok(loss.evaluate(trace.output.view(), &targets)?.0)
    }

    /// Fraction of inputs whose deterministic output picks the right class.
    pub fn accuracy(&self, data: &LabeledDataset) -> Result<f64> {
        let Labels::Class(labels) = &data.labels else {
            return Err(Error::MissingLabels);
        };
        let trace = self.forward_batch(data.inputs.view(), None)?;
        let out = trace.output;
        let hits = out
            .outer_iter()
            .zip(labels)
            .filter(|(row, &y)| {
                let pred = if row.len() == 1 {
                    (row[0] > 0.5) as i32
                } else {
                    argmax(row.as_slice().expect("contiguous")) as i32
                };
                pred == y
            })
            .count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = k;
        }
    }
    best
}

fn add_noise(v: &mut [f64], beta: f64, rng: &mut StreamRng) {
    if beta == 0.0 {
        return;
    }
    for x in v {
        let e: f64 = rng.sample(StandardNormal);
        *x += beta * e;
    }
}

/// Intermediate values of a batch forward pass.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    /// `T_{ℓ-1}` fed into layer ℓ
    pub inputs: Vec<Array2<f64>>,
    /// `W_ℓ T_{ℓ-1} + b_ℓ`
    pub pre: Vec<Array2<f64>>,
    /// `S_ℓ`
    pub post: Vec<Array2<f64>>,
    /// `T_L`
    pub output: Array2<f64>,
}

/// `W - α(WWᵀ - I)W`
pub fn orthonormal_step(w: &Array2<f64>, alpha: f64) -> Array2<f64> {
    let mut gram = w.dot(&w.t());
    for k in 0..gram.nrows() {
        gram[[k, k]] -= 1.0;
    }
    w - &(gram.dot(w) * alpha)
}

/// `‖WWᵀ - I‖_F`
pub fn orthonormality_defect(w: &Array2<f64>) -> f64 {
    let mut gram = w.dot(&w.t());
    for k in 0..gram.nrows() {
        gram[[k, k]] -= 1.0;
    }
    gram.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Softmax over the outputs, in nats.
    CrossEntropy,
    /// `mean_i ‖T_L - y‖²`, no ½ factor.
    MeanSquared,
}

/// Loss targets in matrix form.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Array2<f64>),
}

impl Targets {
    pub fn from_labels(labels: &Labels, loss: Loss, out_dim: usize) -> Result<Self> {
        match (loss, labels) {
            (Loss::CrossEntropy, Labels::Class(c)) => {
                let mut v = Vec::with_capacity(c.len());
                for &y in c {
                    if y < 0 || y as usize >= out_dim {
                        return Err(Error::InvalidParameter(format!(
                            "class label {y} does not fit {out_dim} outputs"
                        )));
                    }
                    v.push(y as usize);
                }
                Ok(Targets::Classes(v))
            }
            (Loss::CrossEntropy, Labels::Scalar(_)) => Err(Error::InvalidParameter(
                "cross-entropy needs class labels".into(),
            )),
            (Loss::MeanSquared, Labels::Scalar(y)) => {
                if out_dim != 1 {
                    return Err(Error::InvalidParameter(format!(
                        "scalar targets need a 1-dimensional output, got {out_dim}"
                    )));
                }
                Ok(Targets::Values(Array2::from_shape_vec((y.len(), 1), y.clone()).expect("shape")))
            }
            (Loss::MeanSquared, Labels::Class(c)) => {
                if out_dim == 1 {
                    let v = c.iter().map(|&y| y as f64).collect();
                    return Ok(Targets::Values(Array2::from_shape_vec((c.len(), 1), v).expect("shape")));
                }
                let mut m = Array2::zeros((c.len(), out_dim));
                for (r, &y) in c.iter().enumerate() {
                    if y < 0 || y as usize >= out_dim {
                        return Err(Error::InvalidParameter(format!(
                            "class label {y} does not fit {out_dim} outputs"
                        )));
                    }
                    m[[r, y as usize]] = 1.0;
                }
                Ok(Targets::Values(m))
            }
        }
    }

    fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.nrows(),
        }
    }

    fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
            Targets::Values(v) => Targets::Values(v.select(Axis(0), idx)),
        }
    }
}

impl Loss {
    /// Mean loss over rows and its gradient with respect to the outputs.
    fn evaluate(self, out: ArrayView2<f64>, targets: &Targets) -> Result<(f64, Array2<f64>)> {
        let m = out.nrows();
        if targets.len() != m {
            return Err(Error::DimensionMismatch {
                context: "loss targets",
                expected: m,
                got: targets.len(),
            });
        }
        let mf = m as f64;
        match (self, targets) {
            (Loss::MeanSquared, Targets::Values(y)) => {
                if y.dim() != out.dim() {
                    return Err(Error::DimensionMismatch {
                        context: "target width",
                        expected: out.ncols(),
                        got: y.ncols(),
                    });
                }
                let diff = &out - y;
                let value = diff.iter().map(|v| v * v).sum::<f64>() / mf;
                Ok((value, diff * (2.0 / mf)))
            }
            (Loss::CrossEntropy, Targets::Classes(c)) => {
                let mut grad = Array2::zeros(out.dim());
                let mut value = 0.0;
                for (r, row) in out.outer_iter().enumerate() {
                    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
                    let lse = mx + z.ln();
                    value += lse - row[c[r]];
                    for (k, v) in row.iter().enumerate() {
                        grad[[r, k]] = (v - lse).exp() / mf;
                    }
                    grad[[r, c[r]]] -= 1.0 / mf;
                }
                Ok((value / mf, grad))
            }
            _ => Err(Error::InvalidParameter("loss and target kind disagree".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Class(Vec<i32>),
    Scalar(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Class(c) => c.len(),
            Labels::Scalar(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> Option<&[i32]> {
        match self {
            Labels::Class(c) => Some(c),
            Labels::Scalar(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Array2<f64>,
    pub labels: Labels,
    pub name: String,
}

impl LabeledDataset {
    pub fn new(inputs: Array2<f64>, labels: Labels, name: impl Into<String>) -> Result<Self> {
        if inputs.nrows() == 0 || inputs.ncols() == 0 {
            return Err(Error::InvalidParameter("dataset must have m >= 1 rows and d0 >= 1 columns".into()));
        }
        if labels.len() != inputs.nrows() {
            return Err(Error::DimensionMismatch {
                context: "dataset labels",
                expected: inputs.nrows(),
                got: labels.len(),
            });
        }
        let labels_finite = match &labels {
            Labels::Scalar(s) => s.iter().all(|v| v.is_finite()),
            Labels::Class(_) => true,
        };
        if !labels_finite || inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset"));
        }
        Ok(Self {
            inputs,
            labels,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }
}

/// Samples of one layer's activations.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    pub values: Array2<f64>,
    pub labels: Option<Vec<i32>>,
    pub layer: usize,
    pub epoch: usize,
    pub noisy: bool,
}

impl ActivationSet {
    pub fn new(values: Array2<f64>, labels: Option<Vec<i32>>, layer: usize, epoch: usize, noisy: bool) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("activation values"));
        }
        if let Some(l) = &labels {
            if l.len() != values.nrows() {
                return Err(Error::DimensionMismatch {
                    context: "activation labels",
                    expected: values.nrows(),
                    got: l.len(),
                });
            }
        }
        Ok(Self {
            values,
            labels,
            layer,
            epoch,
            noisy,
        })
    }
}

/// `S_ℓ` for each dataset input. In noisy mode input `i` draws its upstream
/// noise from its own substream, so the result does not depend on threads.
pub fn collect_activations(net: &NoisyNet, data: &LabeledDataset, layer: usize, mode: Mode) -> Result<ActivationSet> {
    let rows: Vec<usize> = (0..data.len()).collect();
    let values = sample_layer(net, data.inputs.view(), &rows, layer, mode)?;
    let noisy = matches!(mode, Mode::Noisy(_));
    ActivationSet::new(values, data.labels.classes().map(<[i32]>::to_vec), layer, 0, noisy)
}

/// `S_ℓ` for the inputs `rows[k]`; draw `k` uses noise stream `k`.
pub fn sample_layer(net: &NoisyNet, inputs: ArrayView2<f64>, rows: &[usize], layer: usize, mode: Mode) -> Result<Array2<f64>> {
    net.check_layer(layer)?;
    net.check_input(inputs.ncols())?;
    let width = net.layers[layer - 1].out_dim();
    let flat: Vec<f64> = rows
        .par_iter()
        .enumerate()
        .flat_map_iter(|(k, &r)| {
            let x = inputs.row(r);
            let s = match mode {
                Mode::Noisy(seed) => {
                    let mut rng = substream(seed, k as u64);
                    net.propagate(x, layer, Some(&mut rng))
                }
                Mode::Deterministic => net.propagate(x, layer, None),
            };
            s.into_iter()
        })
        .collect();
    Ok(Array2::from_shape_vec((rows.len(), width), flat).expect("row widths agree"))
}

/// `n_x` draws of `S_ℓ` given `X = x`, from independent noise in layers
/// `1..ℓ-1`.
pub fn conditional_activations(net: &NoisyNet, x: &[f64], layer: usize, n_x: usize, seed: u64) -> Result<ActivationSet> {
    net.check_layer(layer)?;
    if layer == 1 {
        return Err(Error::ConditionalFirstLayer);
    }
    net.check_input(x.len())?;
    let input = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("shape");
    let rows = vec![0; n_x];
    let values = sample_layer(net, input.view(), &rows, layer, Mode::Noisy(seed))?;
    ActivationSet::new(values, None, layer, 0, true)
}

/// Epochs at which training snapshots parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckpointSchedule {
    List(Vec<usize>),
    Every(usize),
    /// Roughly log-spaced epochs from 0 to the last, `count` of them.
    Geometric(usize),
}

impl CheckpointSchedule {
    pub fn epochs(&self, total: usize) -> Vec<usize> {
        let mut out: Vec<usize> = match self {
            CheckpointSchedule::List(v) => v.iter().copied().filter(|&e| e <= total).collect(),
            CheckpointSchedule::Every(k) => {
                let k = (*k).max(1);
                let mut v: Vec<usize> = (0..=total).step_by(k).collect();
                v.push(total);
                v
            }
            CheckpointSchedule::Geometric(count) => {
                let count = (*count).max(1);
                let mut v = vec![0];
                if count > 1 && total > 0 {
                    let last = (total as f64 + 1.0).ln();
                    for k in 1..count {
                        let e = (last * k as f64 / (count - 1) as f64).exp() - 1.0;
                        v.push((e.round() as usize).min(total));
                    }
                }
                v.push(total);
                v
            }
        };
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: Loss,
    pub learning_rate: f64,
    pub epochs: usize,
    /// `None` is full batch.
    pub batch_size: Option<usize>,
    pub ortho_alpha: f64,
    pub noise_during_training: bool,
    pub seed: u64,
    pub checkpoints: CheckpointSchedule,
}

impl TrainConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            errs.push(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(self.ortho_alpha.is_finite() && self.ortho_alpha >= 0.0) {
            errs.push(format!("ortho_alpha must be finite and >= 0, got {}", self.ortho_alpha));
        }
        if self.batch_size == Some(0) {
            errs.push("batch_size must be positive".into());
        }
        errs
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// One entry per epoch `1..=epochs`; losses are deterministic-mode
    /// evaluations after the epoch.
    pub losses: Vec<EpochLoss>,
    pub checkpoints: Vec<(usize, NoisyNet)>,
    pub net: NoisyNet,
}

/// Plain (S)GD. Each step draws fresh noise when `noise_during_training`
/// and, with `ortho_alpha > 0`, applies [`orthonormal_step`] to every weight
/// matrix after the gradient update.
pub fn train(net: &NoisyNet, data: &LabeledDataset, test: Option<&LabeledDataset>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    net.check_input(data.input_dim())?;
    let targets = Targets::from_labels(&data.labels, cfg.loss, net.output_dim())?;
    let schedule = cfg.checkpoints.epochs(cfg.epochs);
    let mut net = net.clone();
    let mut rng = substream(derive_seed(cfg.seed, TAG_TRAIN), 0);
    let m = data.len();
    let batch = cfg.batch_size.unwrap_or(m).min(m);
    let mut order: Vec<usize> = (0..m).collect();
    let mut checkpoints = Vec::new();
    let mut losses = Vec::with_capacity(cfg.epochs);
    if schedule.first() == Some(&0) {
        checkpoints.push((0, net.clone()));
    }
    for epoch in 1..=cfg.epochs {
        if batch < m {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            let (x, y) = if batch < m {
                (data.inputs.select(Axis(0), chunk), targets.select(chunk))
            } else {
                (data.inputs.clone(), targets.clone())
            };
            let noise = cfg.noise_during_training.then(|| net.draw_noise(chunk.len(), &mut rng));
            let (value, grads) = net.loss_and_gradients(x.view(), &y, cfg.loss, noise.as_deref())?;
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, loss: value });
            }
            for (layer, (gw, gb)) in net.layers.iter_mut().zip(grads) {
                layer.weights.scaled_add(-cfg.learning_rate, &gw);
                layer.bias.scaled_add(-cfg.learning_rate, &gb);
                if cfg.ortho_alpha > 0.0 {
                    layer.weights = orthonormal_step(&layer.weights, cfg.ortho_alpha);
                }
            }
        }
        let train_loss = net.evaluate(data, cfg.loss)?;
        if !train_loss.is_finite() || net.layers.iter().any(|l| l.weights.iter().any(|v| !v.is_finite())) {
            return Err(Error::Diverged { epoch, loss: train_loss });
        }
        let test_loss = test.map(|t| net.evaluate(t, cfg.loss)).transpose()?;
        losses.push(EpochLoss {
            epoch,
            train_loss,
            test_loss,
        });
        if schedule.binary_search(&epoch).is_ok() {
            checkpoints.push((epoch, net.clone()));
        }
    }
    Ok(TrainOutcome {
        losses,
        checkpoints,
        net,
    })
}

/// Layer widths of the 12-10-7-5-4-3-2 network.
pub const SZT_DIMS: [usize; 7] = [12, 10, 7, 5, 4, 3, 2];

/// 12-10-7-5-4-3-2 stack: noisy hidden layers with `activation` and noise
/// `beta`, then a noiseless linear 2-logit layer for softmax cross-entropy.
pub fn szt_net(activation: Activation, beta: f64, seed: u64) -> Result<NoisyNet> {
    stacked_net(&SZT_DIMS, activation, beta, seed)
}

/// Hidden layers share `activation` and `beta`; the last layer is linear
/// logits without noise.
pub fn stacked_net(dims: &[usize], activation: Activation, beta: f64, seed: u64) -> Result<NoisyNet> {
    let l = dims.len().saturating_sub(1);
    let mut acts = vec![activation; l];
    let mut betas = vec![beta; l];
    if l > 0 {
        acts[l - 1] = Activation::Linear;
        betas[l - 1] = 0.0;
    }
    NoisyNet::init(dims, &acts, &betas, seed)
}

/// Default parameters of the single-neuron tanh toy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TanhToy {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub weight: f64,
    pub bias: f64,
    pub beta: f64,
}

impl Default for TanhToy {
    fn default() -> Self {
        Self {
            inputs: vec![-3.0, -1.0, 1.0, 3.0],
            targets: vec![-1.0, -1.0, 1.0, 1.0],
            weight: 0.1,
            bias: 0.0,
            beta: 0.05,
        }
    }
}

impl TanhToy {
    /// `T = tanh(w x + b) + Z`
    pub fn net(&self) -> Result<NoisyNet> {
        NoisyNet::new(vec![Layer {
            weights: Array2::from_elem((1, 1), self.weight),
            bias: Array1::from_elem(1, self.bias),
            activation: Activation::Tanh,
            beta: self.beta,
        }])
    }

    pub fn dataset(&self) -> Result<LabeledDataset> {
        let x = Array2::from_shape_vec((self.inputs.len(), 1), self.inputs.clone())
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        LabeledDataset::new(x, Labels::Scalar(self.targets.clone()), "tanh1")
    }
}

/// Leaky-ReLU slope of the two-neuron toy: `max(x, x/10)`.
pub const TOY_LEAKY_SLOPE: f64 = 0.1;

/// Default parameters of the two-neuron leaky-ReLU toy. The weights are
/// declared values, chosen so both neurons start in their linear regime
/// for part of the inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeakyReluToy {
    pub weights: [f64; 2],
    pub biases: [f64; 2],
    pub beta: f64,
}

impl Default for LeakyReluToy {
    fn default() -> Self {
        Self {
            weights: [0.6, 0.5],
            biases: [-1.5, -0.3],
            beta: 0.1,
        }
    }
}

impl LeakyReluToy {
    /// `T_1 = R(w_1 x + b_1) + Z_1`, `T_2 = R(w_2 T_1 + b_2) + Z_2`.
    pub fn net(&self) -> Result<NoisyNet> {
        let act = Activation::LeakyRelu {
            slope: TOY_LEAKY_SLOPE,
        };
        NoisyNet::new(
            (0..2)
                .map(|k| Layer {
                    weights: Array2::from_elem((1, 1), self.weights[k]),
                    bias: Array1::from_elem(1, self.biases[k]),
                    activation: act,
                    beta: self.beta,
                })
                .collect(),
        )
    }

    /// Inputs 1..4 labelled 0 and 5..8 labelled 1/4.
    pub fn dataset() -> LabeledDataset {
        let x = Array2::from_shape_fn((8, 1), |(i, _)| (i + 1) as f64);
        let y = (0..8).map(|i| if i < 4 { 0.0 } else { 0.25 }).collect();
        LabeledDataset::new(x, Labels::Scalar(y), "leaky_relu2").expect("valid toy data")
    }
}

/// Two interleaved Archimedean spiral arms, `r = θ / (2π·turns)` for
/// `θ ∈ [0, 2π·turns]`, the second arm rotated by π, plus Gaussian jitter.
/// Labels are 0 and 1 by arm.
pub fn spiral_dataset(n_per_class: usize, noise_std: f64, turns: f64, seed: u64) -> Result<LabeledDataset> {
    if n_per_class == 0 {
        return Err(Error::InvalidParameter("n_per_class must be >= 1".into()));
    }
    if !(turns.is_finite() && turns > 0.0 && noise_std.is_finite() && noise_std >= 0.0) {
        return Err(Error::InvalidParameter("turns must be > 0 and noise_std >= 0".into()));
    }
    let mut rng = substream(derive_seed(seed, TAG_DATA), 0);
    let theta_max = 2.0 * PI * turns;
    let mut x = Array2::zeros((2 * n_per_class, 2));
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for arm in 0..2 {
        for k in 0..n_per_class {
            let frac = if n_per_class == 1 {
                0.0
            } else {
                k as f64 / (n_per_class - 1) as f64
            };
            let theta = frac * theta_max;
            let r = theta / theta_max;
            let phase = theta + PI * arm as f64;
            let row = arm * n_per_class + k;
            let e0: f64 = rng.sample(StandardNormal);
            let e1: f64 = rng.sample(StandardNormal);
            x[[row, 0]] = r * phase.cos() + noise_std * e0;
            x[[row, 1]] = r * phase.sin() + noise_std * e1;
            labels.push(arm as i32);
        }
    }
    LabeledDataset::new(x, Labels::Class(labels), "spiral")
}

/// Stand-in for 12-bit classification data: all 4096 inputs in `{-1, 1}^12`
/// labelled by thresholding a seeded random quadratic form
/// `Σ a_k x_k + Σ_{k<l} b_kl x_k x_l` (`a, b ~ N(0,1)`) at its median, which
/// gives balanced classes.
pub fn synthetic_binary12(seed: u64) -> LabeledDataset {
    const D: usize = 12;
    let mut rng = substream(derive_seed(seed, TAG_DATA), 1);
    let a: Vec<f64> = (0..D).map(|_| rng.sample(StandardNormal)).collect();
    let b: Vec<f64> = (0..D * D).map(|_| rng.sample(StandardNormal)).collect();
    let m = 1usize << D;
    let x = Array2::from_shape_fn((m, D), |(i, k)| if (i >> k) & 1 == 1 { 1.0 } else { -1.0 });
    let score: Vec<f64> = x
        .outer_iter()
        .map(|row| {
            let mut s = 0.0;
            for k in 0..D {
                s += a[k] * row[k];
                for l in k + 1..D {
                    s += b[k * D + l] * row[k] * row[l];
                }
            }
            s
        })
        .collect();
    let mut sorted = score.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[m / 2];
    let labels = score.iter().map(|&s| (s >= median) as i32).collect();
    LabeledDataset::new(x, Labels::Class(labels), "synthetic_binary12").expect("valid synthetic data")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn identity_net(d: usize, beta: f64) -> NoisyNet {
        NoisyNet::new(vec![Layer {
            weights: Array2::eye(d),
            bias: Array1::zeros(d),
            activation: Activation::Linear,
            beta,
        }])
        .unwrap()
    }

    #[test]
    fn identity_forward() {
        let net = identity_net(3, 0.0);
        let out = net.forward(&[1.0, -2.0, 0.5], Mode::Deterministic).unwrap();
        assert_eq!(out[0].0, array![1.0, -2.0, 0.5]);
        assert_eq!(out[0].1, array![1.0, -2.0, 0.5]);
        assert!(matches!(net.forward(&[1.0], Mode::Deterministic), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_beta_equals_deterministic() {
        let net = szt_net(Activation::Tanh, 0.0, 3).unwrap();
        let x = [0.5; 12];
        assert_eq!(net.forward(&x, Mode::Noisy(1)).unwrap(), net.forward(&x, Mode::Deterministic).unwrap());
    }

    #[test]
    fn leaky_toy_by_hand() {
        let net = LeakyReluToy::default().net().unwrap();
        let out = net.forward(&[5.0], Mode::Deterministic).unwrap();
        // a1 = 0.6*5 - 1.5 = 1.5 -> 1.5; a2 = 0.5*1.5 - 0.3 = 0.45 -> 0.45
        assert!((out[0].1[0] - 1.5).abs() < 1e-15);
        assert!((out[1].1[0] - 0.45).abs() < 1e-15);
        let out = net.forward(&[1.0], Mode::Deterministic).unwrap();
        // a1 = -0.9 -> -0.09; a2 = -0.045 - 0.3 = -0.345 -> -0.0345
        assert!((out[0].1[0] + 0.09).abs() < 1e-15);
        assert!((out[1].1[0] + 0.0345).abs() < 1e-15);
        assert_eq!(net.layers()[0].activation, Activation::LeakyRelu { slope: 0.1 });
    }

    #[test]
    fn szt_dims() {
        let net = szt_net(Activation::Tanh, 0.005, 0).unwrap();
        assert_eq!(net.dims(), vec![12, 10, 7, 5, 4, 3, 2]);
        assert_eq!(net.beta(6), 0.0);
        assert_eq!(net.beta(5), 0.005);
    }

    #[test]
    fn one_step_mse() {
        let net = NoisyNet::new(vec![Layer {
            weights: array![[1.0]],
            bias: array![0.0],
            activation: Activation::Linear,
            beta: 0.0,
        }])
        .unwrap();
        let data = LabeledDataset::new(array![[1.0]], Labels::Scalar(vec![0.0]), "one").unwrap();
        let cfg = TrainConfig {
            loss: Loss::MeanSquared,
            learning_rate: 0.1,
            epochs: 1,
            batch_size: None,
            ortho_alpha: 0.0,
            noise_during_training: true,
            seed: 0,
            checkpoints: CheckpointSchedule::List(vec![1]),
        };
        let out = train(&net, &data, None, &cfg).unwrap();
        assert!((out.net.layers()[0].weights[[0, 0]] - 0.8).abs() < 1e-15);
        assert!((out.net.layers()[0].bias[0] + 0.2).abs() < 1e-15);
        assert_eq!(out.checkpoints.len(), 1);
        assert_eq!(out.losses.len(), 1);
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let net = szt_net(Activation::Tanh, 0.01, 1).unwrap();
        let data = synthetic_binary12(2);
        let cfg = TrainConfig {
            loss: Loss::CrossEntropy,
            learning_rate: 0.0,
            epochs: 3,
            batch_size: Some(256),
            ortho_alpha: 0.0,
            noise_during_training: true,
            seed: 5,
            checkpoints: CheckpointSchedule::Every(1),
        };
        let out = train(&net, &data, None, &cfg).unwrap();
        assert_eq!(out.checkpoints.len(), 4);
        for (_, c) in &out.checkpoints {
            assert_eq!(c, &net);
        }
    }

    #[test]
    fn leaky_toy_loss_decreases() {
        let toy = LeakyReluToy::default();
        let cfg = TrainConfig {
            loss: Loss::MeanSquared,
            learning_rate: 0.001,
            epochs: 100,
            batch_size: None,
            ortho_alpha: 0.0,
            noise_during_training: false,
            seed: 0,
            checkpoints: CheckpointSchedule::List(vec![]),
        };
        let out = train(&toy.net().unwrap(), &LeakyReluToy::dataset(), None, &cfg).unwrap();
        for w in out.losses.windows(2) {
            assert!(w[1].train_loss < w[0].train_loss, "{w:?}");
        }
    }

    #[test]
    fn zero_beta_training_matches_noise_free_training() {
        let toy = TanhToy {
            beta: 0.0,
            ..TanhToy::default()
        };
        let mut cfg = TrainConfig {
            loss: Loss::MeanSquared,
            learning_rate: 0.05,
            epochs: 50,
            batch_size: None,
            ortho_alpha: 0.0,
            noise_during_training: true,
            seed: 1,
            checkpoints: CheckpointSchedule::List(vec![]),
        };
        let a = train(&toy.net().unwrap(), &toy.dataset().unwrap(), None, &cfg).unwrap();
        cfg.noise_during_training = false;
        let b = train(&toy.net().unwrap(), &toy.dataset().unwrap(), None, &cfg).unwrap();
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let net = NoisyNet::init(&[3, 4, 3, 2], &[Activation::Tanh; 3], &[0.1; 3], 7).unwrap();
        let x = Array2::from_shape_fn((8, 3), |(i, k)| ((i * 3 + k) as f64 * 0.37).sin());
        let t = Targets::Values(Array2::from_shape_fn((8, 2), |(i, k)| ((i + k) as f64 * 0.5).cos()));
        let noise = net.draw_noise(8, &mut substream(1, 0));
        let (_, grads) = net.loss_and_gradients(x.view(), &t, Loss::MeanSquared, Some(&noise)).unwrap();
        let h = 1e-6;
        for l in 0..3 {
            for idx in 0..net.layers[l].weights.len() {
                let (r, c) = (idx / net.layers[l].in_dim(), idx % net.layers[l].in_dim());
                let mut plus = net.clone();
                plus.layers[l].weights[[r, c]] += h;
                let mut minus = net.clone();
                minus.layers[l].weights[[r, c]] -= h;
                let fp = plus.loss_and_gradients(x.view(), &t, Loss::MeanSquared, Some(&noise)).unwrap().0;
                let fm = minus.loss_and_gradients(x.view(), &t, Loss::MeanSquared, Some(&noise)).unwrap().0;
                let fd = (fp - fm) / (2.0 * h);
                let g = grads[l].0[[r, c]];
                assert!((fd - g).abs() <= 1e-5 * fd.abs().max(g.abs()).max(1e-3), "{l} {r} {c}: {fd} {g}");
            }
        }
    }

    #[test]
    fn cross_entropy_gradient_matches() {
        let net = NoisyNet::init(&[2, 3, 2], &[Activation::Sigmoid, Activation::Linear], &[0.0, 0.0], 2).unwrap();
        let x = array![[0.3, -0.2], [1.0, 0.5], [-0.7, 0.1]];
        let t = Targets::Classes(vec![0, 1, 1]);
        let (_, grads) = net.loss_and_gradients(x.view(), &t, Loss::CrossEntropy, None).unwrap();
        let h = 1e-6;
        for l in 0..2 {
            for k in 0..net.layers[l].bias.len() {
                let mut p = net.clone();
                p.layers[l].bias[k] += h;
                let mut m = net.clone();
                m.layers[l].bias[k] -= h;
                let fd = (p.loss_and_gradients(x.view(), &t, Loss::CrossEntropy, None).unwrap().0
                    - m.loss_and_gradients(x.view(), &t, Loss::CrossEntropy, None).unwrap().0)
                    / (2.0 * h);
                assert!((fd - grads[l].1[k]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn orthonormal_step_examples() {
        let w = array![[0.0, 1.0], [1.0, 0.0]];
        assert_eq!(orthonormal_step(&w, 0.3), w);
        let w = 2.0 * Array2::<f64>::eye(2);
        let out = orthonormal_step(&w, 0.1);
        assert!((&out - &(1.4 * Array2::<f64>::eye(2))).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn noise_covariance_is_beta_squared() {
        let net = identity_net(2, 0.3);
        let n = 10_000;
        let mut rng = substream(4, 0);
        let z = net.draw_noise(n, &mut rng);
        let cov = z[0].t().dot(&z[0]) / n as f64;
        let b2 = 0.09;
        assert!((cov[[0, 0]] - b2).abs() < 0.05 * b2);
        assert!((cov[[1, 1]] - b2).abs() < 0.05 * b2);
        assert!(cov[[0, 1]].abs() < 0.05 * b2);
    }

    #[test]
    fn forward_noise_is_t_minus_s() {
        let net = NoisyNet::init(&[2, 2, 2], &[Activation::Tanh; 2], &[0.2, 0.2], 3).unwrap();
        let n = 10_000;
        let mut acc = Array2::<f64>::zeros((2, 2));
        for s in 0..n {
            let out = net.forward(&[0.3, -0.1], Mode::Noisy(s as u64)).unwrap();
            let z = &out[1].1 - &out[1].0;
            for p in 0..2 {
                for q in 0..2 {
                    acc[[p, q]] += z[p] * z[q] / n as f64;
                }
            }
        }
        assert!((acc[[0, 0]] - 0.04).abs() < 0.002 && (acc[[1, 1]] - 0.04).abs() < 0.002);
        assert!(acc[[0, 1]].abs() < 0.002);
    }

    #[test]
    fn collect_and_conditional() {
        let data = spiral_dataset(20, 0.05, 1.0, 3).unwrap();
        let id = identity_net(2, 0.1);
        let acts = collect_activations(&id, &data, 1, Mode::Noisy(1)).unwrap();
        assert_eq!(acts.values, data.inputs);

        let net = NoisyNet::init(&[2, 3, 3], &[Activation::Tanh; 2], &[0.1, 0.1], 1).unwrap();
        let a = collect_activations(&net, &data, 2, Mode::Noisy(4)).unwrap();
        let b = collect_activations(&net, &data, 2, Mode::Noisy(4)).unwrap();
        let c = collect_activations(&net, &data, 2, Mode::Noisy(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values, c.values);
        let d1 = collect_activations(&net, &data, 2, Mode::Deterministic).unwrap();
        let d2 = collect_activations(&net, &data, 2, Mode::Deterministic).unwrap();
        assert_eq!(d1, d2);

        assert!(matches!(
            conditional_activations(&net, &[0.1, 0.2], 1, 5, 0),
            Err(Error::ConditionalFirstLayer)
        ));
        let one = conditional_activations(&net, &[0.1, 0.2], 2, 1, 0).unwrap();
        assert_eq!(one.values.dim(), (1, 3));
        let frozen = net.clone().with_betas(0.0, true);
        let rows = conditional_activations(&frozen, &[0.1, 0.2], 2, 6, 0).unwrap();
        for r in rows.values.outer_iter() {
            assert_eq!(r, rows.values.row(0));
        }
        let many = conditional_activations(&net, &[0.1, 0.2], 2, 20_000, 9).unwrap();
        let mean = many.values.mean_axis(Axis(0)).unwrap();
        let det = frozen.forward(&[0.1, 0.2], Mode::Deterministic).unwrap()[1].0.clone();
        assert!(many.values.var_axis(Axis(0), 1.0).iter().all(|v| *v > 0.0));
        // tanh is nearly linear at this scale; the noise average sits close
        // to the noiseless value
        assert!((&mean - &det).iter().all(|v| v.abs() < 0.02));
    }

    #[test]
    fn spiral_properties() {
        let a = spiral_dataset(1, 0.0, 1.0, 0).unwrap();
        assert_eq!(a.inputs, array![[0.0, 0.0], [0.0, 0.0]]);
        let b = spiral_dataset(50, 0.0, 1.5, 1).unwrap();
        for row in b.inputs.outer_iter() {
            assert!(row.dot(&row).sqrt() <= 1.0 + 1e-12);
        }
        assert_eq!(spiral_dataset(30, 0.05, 1.0, 8).unwrap(), spiral_dataset(30, 0.05, 1.0, 8).unwrap());
    }

    #[test]
    fn synthetic_binary_is_balanced() {
        let d = synthetic_binary12(0);
        assert_eq!(d.inputs.dim(), (4096, 12));
        let ones = d.labels.classes().unwrap().iter().filter(|&&y| y == 1).count();
        assert!((ones as i64 - 2048).abs() < 64);
        assert_eq!(d, synthetic_binary12(0));
    }

    #[test]
    fn geometric_schedule() {
        let e = CheckpointSchedule::Geometric(10).epochs(2000);
        assert_eq!(e.first(), Some(&0));
        assert_eq!(e.last(), Some(&2000));
        assert!(e.len() >= 9);
        assert_eq!(CheckpointSchedule::Every(5).epochs(12), vec![0, 5, 10, 12]);
        assert_eq!(CheckpointSchedule::List(vec![3, 1, 30]).epochs(10), vec![1, 3]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn parseval_contracts(seed in 0u64..10_000, d_out in 1usize..6, d_in in 1usize..6, alpha in 1e-5f64..1e-2) {
            let mut rng = substream(seed, 0);
            let w = Array2::from_shape_fn((d_out, d_in), |(r, c)| {
                let base = if r == c { 1.0 } else { 0.0 };
                base + rng.random_range(-0.15..0.15)
            });
            let before = orthonormality_defect(&w);
            prop_assert!(before.is_finite());
            if before > 0.0 && before <= 1.0 {
                let after = orthonormality_defect(&orthonormal_step(&w, alpha));
                prop_assert!(after < before, "{} -> {}", before, after);
            }
        }
    }
}
