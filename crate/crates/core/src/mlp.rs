//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! The same small network type backs the forward surrogate, the reverse
//! recommender and the final-accuracy regressor. Besides parameter gradients,
//! [`MlpModel::backward`] returns the gradient with respect to the input,
//! which is what lets one network be trained through another.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::seeded;

const FORMAT_HEADER: &str = "moarr-mlp v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Rectifier,
    Sigmoid,
    Identity,
    /// Softmax applied independently to each block of the model's
    /// `block_layout`; only valid on the output layer.
    BlockSoftmax,
}

impl Activation {
    fn name(self) -> &'static str {
        match self {
            Activation::Rectifier => "rectifier",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
            Activation::BlockSoftmax => "block_softmax",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "rectifier" => Activation::Rectifier,
            "sigmoid" => Activation::Sigmoid,
            "identity" => Activation::Identity,
            "block_softmax" => Activation::BlockSoftmax,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub input_width: usize,
    pub output_width: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    /// Row-major `output_width x input_width`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(spec: LayerSpec) -> Self {
        Layer {
            spec,
            weights: vec![0.0; spec.input_width * spec.output_width],
            biases: vec![0.0; spec.output_width],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
    block_layout: Option<Vec<usize>>,
}

/// Per-layer activations of one forward pass; `activations[0]` is the input.
#[derive(Debug, Clone)]
pub struct Trace {
    pub activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace holds the input at least")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: model.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
            input: vec![0.0; model.input_width()],
        }
    }

    /// Parameter gradients in the order of [`MlpModel::flat_parameters`].
    pub fn flat_parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    fn clear(&mut self) {
        self.weights.iter_mut().chain(self.biases.iter_mut()).for_each(|v| v.fill(0.0));
        self.input.fill(0.0);
    }
}

impl MlpModel {
    pub fn from_layers(layers: Vec<Layer>, block_layout: Option<Vec<usize>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("a model needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            let s = l.spec;
            if s.input_width == 0 || s.output_width == 0 {
                return Err(Error::InvalidInput(format!("layer {i} has a zero width")));
            }
            if l.weights.len() != s.input_width * s.output_width || l.biases.len() != s.output_width {
                return Err(Error::ShapeMismatch {
                    expected: s.input_width * s.output_width,
                    found: l.weights.len(),
                });
            }
            if i > 0 && layers[i - 1].spec.output_width != s.input_width {
                return Err(Error::InvalidInput(format!(
                    "layer {i} expects width {} but layer {} emits {}",
                    s.input_width,
                    i - 1,
                    layers[i - 1].spec.output_width
                )));
            }
            let last = i + 1 == layers.len();
            if s.activation == Activation::BlockSoftmax {
                let Some(blocks) = &block_layout else {
                    return Err(Error::InvalidInput("block_softmax needs a block layout".into()));
                };
                if !last {
                    return Err(Error::InvalidInput("block_softmax is only valid on the output layer".into()));
                }
                if blocks.contains(&0) || blocks.iter().sum::<usize>() != s.output_width {
                    return Err(Error::InvalidInput(format!(
                        "block layout {blocks:?} does not partition {} outputs",
                        s.output_width
                    )));
                }
            }
        }
        if layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases)).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite parameter".into()));
        }
        Ok(MlpModel { layers, block_layout })
    }

    /// Glorot-uniform initialized network with the given layer widths.
    pub fn new(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        block_layout: Option<Vec<usize>>,
        seed: u64,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidInput("need input and output widths".into()));
        }
        let mut rng = seeded(seed);
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (widths[i], widths[i + 1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut layer = Layer::zeros(LayerSpec {
                    input_width: fan_in,
                    output_width: fan_out,
                    activation: if i + 1 == n { output } else { hidden },
                });
                for w in &mut layer.weights {
                    *w = rng.random_range(-limit..limit);
                }
                layer
            })
            .collect();
        Self::from_layers(layers, block_layout)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn block_layout(&self) -> Option<&[usize]> {
        self.block_layout.as_deref()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].spec.input_width
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").spec.output_width
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Weights then biases, layer by layer.
    pub fn flat_parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_flat_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::ShapeMismatch {
                expected: self.parameter_count(),
                found: values.len(),
            });
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let (w, b) = (l.weights.len(), l.biases.len());
            l.weights.copy_from_slice(&values[offset..offset + w]);
            l.biases.copy_from_slice(&values[offset + w..offset + w + b]);
            offset += w + b;
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut trace = self.forward_trace(input)?;
        Ok(trace.activations.pop().expect("non-empty"))
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        if input.len() != self.input_width() {
            return Err(Error::ShapeMismatch {
                expected: self.input_width(),
                found: input.len(),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for layer in &self.layers {
            let x = activations.last().expect("non-empty");
            let out = self.apply_layer(layer, x);
            activations.push(out);
        }
        Ok(Trace { activations })
    }

    fn apply_layer(&self, layer: &Layer, x: &[f64]) -> Vec<f64> {
        let n_in = layer.spec.input_width;
        let mut z: Vec<f64> = layer
            .weights
            .chunks_exact(n_in)
            .zip(&layer.biases)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        match layer.spec.activation {
            Activation::Identity => {}
            Activation::Rectifier => z.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Sigmoid => z.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp())),
            Activation::BlockSoftmax => {
                let mut offset = 0;
                for &w in self.block_layout.as_deref().expect("validated") {
                    softmax_in_place(&mut z[offset..offset + w]);
                    offset += w;
                }
            }
        }
        z
    }

    /// Reverse-mode gradients of `upstream · output` for one input.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<Gradients> {
        let trace = self.forward_trace(input)?;
        let mut grads = Gradients::zeros_like(self);
        self.accumulate_gradients(&trace, upstream, &mut grads)?;
        Ok(grads)
    }

    /// Adds the parameter gradients of `upstream · output` into `grads` and
    /// overwrites `grads.input`.
    pub fn accumulate_gradients(&self, trace: &Trace, upstream: &[f64], grads: &mut Gradients) -> Result<()> {
        if upstream.len() != self.output_width() {
            return Err(Error::ShapeMismatch {
                expected: self.output_width(),
                found: upstream.len(),
            });
        }
        let mut delta = upstream.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let out = &trace.activations[li + 1];
            let x = &trace.activations[li];
            // delta becomes dL/dz
            match layer.spec.activation {
                Activation::Identity => {}
                Activation::Rectifier => {
                    for (d, &o) in delta.iter_mut().zip(out) {
                        if o <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                Activation::Sigmoid => {
                    for (d, &o) in delta.iter_mut().zip(out) {
                        *d *= o * (1.0 - o);
                    }
                }
                Activation::BlockSoftmax => {
                    let mut offset = 0;
                    for &w in self.block_layout.as_deref().expect("validated") {
                        let s = &out[offset..offset + w];
                        let d = &mut delta[offset..offset + w];
                        let dot: f64 = s.iter().zip(d.iter()).map(|(a, b)| a * b).sum();
                        for (di, &si) in d.iter_mut().zip(s) {
                            *di = si * (*di - dot);
                        }
                        offset += w;
                    }
                }
            }
            let n_in = layer.spec.input_width;
            let gw = &mut grads.weights[li];
            let gb = &mut grads.biases[li];
            let mut next = vec![0.0; n_in];
            for (o, &d) in delta.iter().enumerate() {
                gb[o] += d;
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * n_in..(o + 1) * n_in];
                let grow = &mut gw[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    grow[i] += d * x[i];
                    next[i] += d * row[i];
                }
            }
            delta = next;
        }
        grads.input = delta;
        Ok(())
    }

    pub fn save(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{FORMAT_HEADER}");
        let _ = writeln!(out, "layers {}", self.layers.len());
        match &self.block_layout {
            Some(b) => {
                let joined: Vec<String> = b.iter().map(|w| w.to_string()).collect();
                let _ = writeln!(out, "blocks {}", joined.join(" "));
            }
            None => {
                let _ = writeln!(out, "blocks none");
            }
        }
        for l in &self.layers {
            let s = l.spec;
            let _ = writeln!(out, "layer {} {} {}", s.input_width, s.output_width, s.activation.name());
            let _ = writeln!(out, "weights {}", join_floats(&l.weights));
            let _ = writeln!(out, "biases {}", join_floats(&l.biases));
        }
        out
    }

    pub fn load(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut next = |what: &str| -> Result<(usize, &str)> {
            lines
                .next()
                .map(|(i, l)| (i + 1, l))
                .ok_or_else(|| Error::parse(None, format!("unexpected end of model, wanted {what}")))
        };
        let (n, header) = next("header")?;
        if header.trim() != FORMAT_HEADER {
            return Err(Error::parse(Some(n), format!("expected `{FORMAT_HEADER}`")));
        }
        let (n, l) = next("layer count")?;
        let count: usize = keyed(l, "layers", n)?
            .parse()
            .map_err(|_| Error::parse(Some(n), "bad layer count"))?;
        let (n, l) = next("blocks")?;
        let blocks_raw = keyed(l, "blocks", n)?;
        let block_layout = if blocks_raw == "none" {
            None
        } else {
            Some(
                blocks_raw
                    .split_whitespace()
                    .map(|w| w.parse::<usize>().map_err(|_| Error::parse(Some(n), "bad block width")))
                    .collect::<Result<Vec<_>>>()?,
            )
        };
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, l) = next("layer")?;
            let parts: Vec<&str> = keyed(l, "layer", n)?.split_whitespace().collect();
            let [i, o, a] = parts[..] else {
                return Err(Error::parse(Some(n), "expected `layer <in> <out> <activation>`"));
            };
            let spec = LayerSpec {
                input_width: i.parse().map_err(|_| Error::parse(Some(n), "bad input width"))?,
                output_width: o.parse().map_err(|_| Error::parse(Some(n), "bad output width"))?,
                activation: Activation::from_name(a)
                    .ok_or_else(|| Error::parse(Some(n), format!("unknown activation `{a}`")))?,
            };
            let (n, l) = next("weights")?;
            let weights = parse_floats(keyed(l, "weights", n)?, n)?;
            let (n, l) = next("biases")?;
            let biases = parse_floats(keyed(l, "biases", n)?, n)?;
            layers.push(Layer { spec, weights, biases });
        }
        Self::from_layers(layers, block_layout)
    }
}

fn keyed<'a>(line: &'a str, key: &str, n: usize) -> Result<&'a str> {
    line.trim()
        .strip_prefix(key)
        .map(str::trim)
        .ok_or_else(|| Error::parse(Some(n), format!("expected `{key}`")))
}

fn join_floats(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| v.to_string()).collect();
    parts.join(" ")
}

fn parse_floats(s: &str, n: usize) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|v| v.parse::<f64>().map_err(|_| Error::parse(Some(n), format!("bad number `{v}`"))))
        .collect()
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub l2_penalty: f64,
    /// Epochs without improvement of the epoch loss before stopping; 0 disables.
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            batch_size: 32,
            max_epochs: 200,
            seed: 0,
            l2_penalty: 0.0,
            early_stop_patience: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(Error::Config(format!("l2_penalty must be >= 0, got {}", self.l2_penalty)));
        }
        Ok(())
    }
}

/// Per-example loss and its gradient with respect to the model output,
/// given `(input, target, output)`.
pub type ExternalLoss<'a> = dyn Fn(&[f64], &[f64], &[f64]) -> (f64, Vec<f64>) + 'a;

pub enum Loss<'a> {
    /// `||output - target||²` per example.
    SquaredError,
    External(&'a ExternalLoss<'a>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-example loss of each epoch, measured during the pass.
    pub loss_trace: Vec<f64>,
}

pub type Sample = (Vec<f64>, Vec<f64>);

/// Mini-batch gradient descent on a copy of `model`.
pub fn train(model: &MlpModel, data: &[Sample], loss: &Loss<'_>, config: &TrainConfig) -> Result<(MlpModel, TrainReport)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData { needed: 1, found: 0 });
    }
    for (x, _) in data {
        if x.len() != model.input_width() {
            return Err(Error::ShapeMismatch {
                expected: model.input_width(),
                found: x.len(),
            });
        }
    }
    let mut model = model.clone();
    let mut rng = seeded(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = Gradients::zeros_like(&model);
    let mut trace_out = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(f64, MlpModel)> = None;
    let mut stale = 0;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.clear();
            for &i in batch {
                let (x, target) = &data[i];
                let trace = model.forward_trace(x)?;
                let (l, g) = match loss {
                    Loss::SquaredError => squared_error(trace.output(), target)?,
                    Loss::External(f) => f(x, target, trace.output()),
                };
                if !l.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch });
                }
                epoch_loss += l;
                model.accumulate_gradients(&trace, &g, &mut grads)?;
            }
            let scale = config.learning_rate / batch.len() as f64;
            let decay = config.learning_rate * config.l2_penalty;
            for (li, layer) in model.layers.iter_mut().enumerate() {
                for (w, g) in layer.weights.iter_mut().zip(&grads.weights[li]) {
                    *w -= scale * g + decay * *w;
                }
                for (b, g) in layer.biases.iter_mut().zip(&grads.biases[li]) {
                    *b -= scale * g;
                }
            }
        }
        let mean = epoch_loss / data.len() as f64;
        trace_out.push(mean);
        if config.early_stop_patience > 0 {
            match &best {
                Some((b, _)) if mean >= *b => {
                    stale += 1;
                    if stale >= config.early_stop_patience {
                        break;
                    }
                }
                _ => {
                    best = Some((mean, model.clone()));
                    stale = 0;
                }
            }
        }
    }
    if model.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases)).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss { epoch: trace_out.len() });
    }
    if let Some((_, best_model)) = best {
        if stale > 0 {
            model = best_model;
        }
    }
    Ok((model, TrainReport { loss_trace: trace_out }))
}

fn squared_error(output: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if output.len() != target.len() {
        return Err(Error::ShapeMismatch {
            expected: output.len(),
            found: target.len(),
        });
    }
    let mut loss = 0.0;
    let grad = output
        .iter()
        .zip(target)
        .map(|(o, t)| {
            let d = o - t;
            loss += d * d;
            2.0 * d
        })
        .collect();
    Ok((loss, grad))
}

/// Mean squared error over a dataset.
pub fn mean_squared_error(model: &MlpModel, data: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    for (x, t) in data {
        total += squared_error(&model.forward(x)?, t)?.0;
    }
    Ok(total / data.len().max(1) as f64)
}
