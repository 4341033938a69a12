use serde::{Deserialize, Serialize};

use super::{cosine_lr, sigmoid, softmax_into, LogitVector, ProbVector, PROB_FLOOR};
use crate::error::{invalid, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// One output head. A sigmoid head owns a single logit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    Sigmoid,
    Softmax(usize),
}

impl HeadKind {
    pub fn width(self) -> usize {
        match self {
            HeadKind::Sigmoid => 1,
            HeadKind::Softmax(k) => k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadLayout {
    heads: Vec<HeadKind>,
}

impl HeadLayout {
    pub fn new(heads: Vec<HeadKind>) -> Result<Self> {
        if heads.is_empty() {
            return Err(invalid("head layout needs at least one head"));
        }
        if heads.iter().any(|h| h.width() == 0) {
            return Err(invalid("softmax head of width 0"));
        }
        Ok(HeadLayout { heads })
    }

    /// A single softmax head over `classes` labels.
    pub fn unified(classes: usize) -> Result<Self> {
        HeadLayout::new(vec![HeadKind::Softmax(classes)])
    }

    pub fn heads(&self) -> &[HeadKind] {
        &self.heads
    }

    pub fn total_width(&self) -> usize {
        self.heads.iter().map(|h| h.width()).sum()
    }

    /// `(offset, kind)` of every head inside the logit vector.
    pub fn spans(&self) -> impl Iterator<Item = (usize, HeadKind)> + '_ {
        self.heads.iter().scan(0usize, |offset, h| {
            let start = *offset;
            *offset += h.width();
            Some((start, *h))
        })
    }

    pub fn is_unified(&self) -> bool {
        matches!(self.heads.as_slice(), [HeadKind::Softmax(_)])
    }
}

/// Per-head supervision for one example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadTarget {
    /// Class index local to a softmax head.
    Class(usize),
    Binary(bool),
    /// The head contributes no loss for this example.
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub targets: Vec<HeadTarget>,
}

/// Fully connected layer, weights row-major `(outputs, inputs)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.inputs).zip(&self.bias) {
            let dot: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            out.push(dot + b);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_hidden() -> Vec<usize> {
    vec![64]
}

fn default_activation() -> Activation {
    Activation::Tanh
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            base_lr: 2e-3,
            min_lr: 0.0,
            weight_decay: 5e-4,
            epochs: 60,
            seed: 0,
            hidden: default_hidden(),
            activation: default_activation(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        if !self.base_lr.is_finite() || self.base_lr <= 0.0 {
            return Err(invalid("base_lr must be positive"));
        }
        if self.min_lr.is_nan() || self.min_lr < 0.0 || self.min_lr > self.base_lr {
            return Err(invalid("min_lr must lie in [0, base_lr]"));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(invalid("weight_decay must be nonnegative"));
        }
        if self.hidden.contains(&0) {
            return Err(invalid("hidden layer of width 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layers: Vec<Dense>,
    activation: Activation,
    heads: HeadLayout,
}

/// Gradient of the mean batch loss, shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }
}

impl MlpModel {
    /// Seeded initialisation: Glorot-uniform for tanh, He-uniform for
    /// rectifiers, zero biases.
    pub fn new(input: usize, hidden: &[usize], heads: HeadLayout, activation: Activation, seed: u64) -> Result<Self> {
        if input == 0 {
            return Err(invalid("input width must be positive"));
        }
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(heads.total_width());
        let mut rng = Rng::derive(seed, 0x1417);
        let layers = sizes
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let limit = match activation {
                    Activation::Tanh => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                    Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                };
                let mut layer = Dense::zeros(fan_in, fan_out);
                for w in &mut layer.weights {
                    *w = rng.uniform_range(-limit, limit);
                }
                layer
            })
            .collect();
        MlpModel::from_parts(layers, activation, heads)
    }

    pub fn from_parts(layers: Vec<Dense>, activation: Activation, heads: HeadLayout) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("model needs at least one layer"));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.inputs == 0 || layer.outputs == 0 {
                return Err(invalid(format!("layer {i} has a zero dimension")));
            }
            if layer.weights.len() != layer.inputs * layer.outputs || layer.bias.len() != layer.outputs {
                return Err(invalid(format!("layer {i} buffers do not match its shape")));
            }
            if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(invalid(format!("layer {i} holds non-finite parameters")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(invalid(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].outputs,
                    i + 1,
                    pair[1].inputs
                )));
            }
        }
        let out = layers.last().map(|l| l.outputs).unwrap_or(0);
        if out != heads.total_width() {
            return Err(invalid(format!(
                "output width {out} does not match head widths summing to {}",
                heads.total_width()
            )));
        }
        Ok(MlpModel {
            layers,
            activation,
            heads,
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn heads(&self) -> &HeadLayout {
        &self.heads
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.heads.total_width()
    }

    /// `[input, hidden..., output]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_width()];
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_width() {
            return Err(invalid(format!(
                "feature width {} does not match model input {}",
                x.len(),
                self.input_width()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite feature value"));
        }
        Ok(())
    }

    /// Activations of every layer; the last entry holds the logits.
    fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        trace.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.forward(trace.last().expect("trace starts non-empty"), &mut out);
            if i != last {
                for v in &mut out {
                    *v = self.activation.apply(*v);
                }
            }
            trace.push(out);
        }
        trace
    }

    pub fn forward(&self, x: &[f64]) -> Result<LogitVector> {
        self.check_input(x)?;
        let logits = self.forward_trace(x).pop().expect("trace has logits");
        LogitVector::new(logits)
    }

    /// Normalised output of every head: softmax heads as-is, sigmoid heads
    /// expanded to `[p, 1 - p]`.
    pub fn head_distributions(&self, logits: &LogitVector) -> Result<Vec<ProbVector>> {
        let z = logits.as_slice();
        if z.len() != self.output_width() {
            return Err(invalid("logit width does not match head layout"));
        }
        self.heads
            .spans()
            .map(|(offset, kind)| match kind {
                HeadKind::Sigmoid => ProbVector::binary(sigmoid(z[offset])),
                HeadKind::Softmax(k) => {
                    let mut p = vec![0.0; k];
                    softmax_into(&z[offset..offset + k], &mut p);
                    ProbVector::new(p)
                }
            })
            .collect()
    }

    fn check_example(&self, ex: &Example) -> Result<()> {
        self.check_input(&ex.features)?;
        if ex.targets.len() != self.heads.heads().len() {
            return Err(invalid(format!(
                "{} targets supplied for {} heads",
                ex.targets.len(),
                self.heads.heads().len()
            )));
        }
        for (target, kind) in ex.targets.iter().zip(self.heads.heads()) {
            match (target, kind) {
                (HeadTarget::Ignore, _) => {}
                (HeadTarget::Binary(_), HeadKind::Sigmoid) => {}
                (HeadTarget::Class(c), HeadKind::Softmax(k)) if c < k => {}
                _ => return Err(invalid(format!("target {target:?} does not fit head {kind:?}"))),
            }
        }
        Ok(())
    }

    /// Summed head losses for one example and their gradient w.r.t. the logits.
    fn loss_and_logit_grad(&self, logits: &[f64], targets: &[HeadTarget]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; logits.len()];
        let mut loss = 0.0;
        for ((offset, kind), target) in self.heads.spans().zip(targets) {
            match (kind, *target) {
                (HeadKind::Softmax(k), HeadTarget::Class(c)) => {
                    let z = &logits[offset..offset + k];
                    let g = &mut grad[offset..offset + k];
                    softmax_into(z, g);
                    let p = g[c];
                    loss += -p.max(PROB_FLOOR).ln();
                    if p < PROB_FLOOR {
                        g.iter_mut().for_each(|v| *v = 0.0);
                    } else {
                        g[c] -= 1.0;
                    }
                }
                (HeadKind::Sigmoid, HeadTarget::Binary(y)) => {
                    let p = sigmoid(logits[offset]);
                    loss += super::binary_cross_entropy(p, y);
                    let clamped = !(PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&p);
                    grad[offset] = if clamped { 0.0 } else { p - if y { 1.0 } else { 0.0 } };
                }
                _ => {}
            }
        }
        (loss, grad)
    }

    pub fn sample_loss(&self, ex: &Example) -> Result<f64> {
        self.check_example(ex)?;
        let logits = self.forward_trace(&ex.features).pop().expect("logits");
        Ok(self.loss_and_logit_grad(&logits, &ex.targets).0)
    }

    /// Per-head losses for one example, in head order.
    pub fn head_losses(&self, ex: &Example) -> Result<Vec<f64>> {
        self.check_example(ex)?;
        let logits = self.forward_trace(&ex.features).pop().expect("logits");
        Ok(self
            .heads
            .spans()
            .zip(&ex.targets)
            .map(|((offset, kind), target)| match (kind, *target) {
                (HeadKind::Softmax(k), HeadTarget::Class(c)) => {
                    let mut p = vec![0.0; k];
                    softmax_into(&logits[offset..offset + k], &mut p);
                    -p[c].max(PROB_FLOOR).ln()
                }
                (HeadKind::Sigmoid, HeadTarget::Binary(y)) => super::binary_cross_entropy(sigmoid(logits[offset]), y),
                _ => 0.0,
            })
            .collect())
    }

    /// Mean over the batch of the summed head losses (no weight-decay term).
    pub fn batch_loss(&self, batch: &[&Example]) -> Result<f64> {
        if batch.is_empty() {
            return Err(invalid("empty batch"));
        }
        let mut total = 0.0;
        for ex in batch {
            total += self.sample_loss(ex)?;
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean batch loss and its analytic gradient.
    pub fn gradients(&self, batch: &[&Example]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(invalid("empty batch"));
        }
        for ex in batch {
            self.check_example(ex)?;
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grads: Vec<Dense> = self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect();
        let mut total = 0.0;
        for ex in batch {
            let trace = self.forward_trace(&ex.features);
            let (loss, mut delta) = self.loss_and_logit_grad(trace.last().expect("logits"), &ex.targets);
            total += loss;
            delta.iter_mut().for_each(|d| *d *= scale);
            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                let input = &trace[li];
                let g = &mut grads[li];
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    g.bias[o] += d;
                    let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (gw, a) in row.iter_mut().zip(input) {
                        *gw += d * a;
                    }
                }
                if li > 0 {
                    let mut prev = vec![0.0; layer.inputs];
                    for (o, d) in delta.iter().enumerate() {
                        if *d == 0.0 {
                            continue;
                        }
                        let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                        for (p, w) in prev.iter_mut().zip(row) {
                            *p += w * d;
                        }
                    }
                    for (p, a) in prev.iter_mut().zip(input) {
                        *p *= self.activation.derivative_from_output(*a);
                    }
                    delta = prev;
                }
            }
        }
        Ok((total * scale, Gradients { layers: grads }))
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Weights then biases, layer by layer.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn with_parameters(&self, params: &[f64]) -> Result<Self> {
        if params.len() != self.parameter_count() {
            return Err(invalid("parameter vector length mismatch"));
        }
        let mut model = self.clone();
        let mut rest = params;
        for layer in &mut model.layers {
            let (w, tail) = rest.split_at(layer.weights.len());
            layer.weights.copy_from_slice(w);
            let (b, tail) = tail.split_at(layer.bias.len());
            layer.bias.copy_from_slice(b);
            rest = tail;
        }
        Ok(model)
    }
}

/// One SGD update: `w <- w - lr * (grad + weight_decay * w)`, applied to
/// weights and biases alike. Returns the new model and the mean batch loss
/// measured before the update.
pub fn train_step(model: &MlpModel, batch: &[&Example], cfg: &TrainConfig, lr: f64) -> Result<(MlpModel, f64)> {
    if !lr.is_finite() || lr < 0.0 {
        return Err(invalid("learning rate must be finite and nonnegative"));
    }
    let (loss, grads) = model.gradients(batch)?;
    let mut next = model.clone();
    for (layer, g) in next.layers.iter_mut().zip(&grads.layers) {
        for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
            *w -= lr * (gw + cfg.weight_decay * *w);
        }
        for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
            *b -= lr * (gb + cfg.weight_decay * *b);
        }
    }
    Ok((next, loss))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean pre-update sample loss over each epoch.
    pub epoch_losses: Vec<f64>,
    /// Learning rate used at every optimisation step.
    pub lr_trace: Vec<f64>,
    /// How many times each example was used in a gradient step.
    pub visits: Vec<u32>,
}

/// Mini-batch SGD over `epochs` passes with a fresh seeded shuffle per epoch
/// and a per-step cosine schedule running from `base_lr` on the first step to
/// `min_lr` on the last.
pub fn fit(model: MlpModel, examples: &[Example], cfg: &TrainConfig) -> Result<(MlpModel, TrainLog)> {
    cfg.validate()?;
    let mut log = TrainLog {
        visits: vec![0; examples.len()],
        ..TrainLog::default()
    };
    if cfg.epochs == 0 {
        return Ok((model, log));
    }
    if examples.is_empty() {
        return Err(invalid("no training examples"));
    }
    for ex in examples {
        model.check_example(ex)?;
    }
    let steps_per_epoch = examples.len().div_ceil(cfg.batch_size);
    let total_steps = (steps_per_epoch * cfg.epochs) as u64;
    let mut model = model;
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        Rng::derive(cfg.seed, epoch as u64 + 1).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let lr = if total_steps > 1 {
                cosine_lr(step, total_steps - 1, cfg.base_lr, cfg.min_lr)?
            } else {
                cfg.base_lr
            };
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let (next, loss) = train_step(&model, &batch, cfg, lr)?;
            model = next;
            epoch_loss += loss * chunk.len() as f64;
            for &i in chunk {
                log.visits[i] += 1;
            }
            log.lr_trace.push(lr);
            step += 1;
        }
        log.epoch_losses.push(epoch_loss / examples.len() as f64);
    }
    Ok((model, log))
}
