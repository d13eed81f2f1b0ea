//! Dense feed-forward classifier with hand-written reverse-mode gradients.
//!
//! The network is a stack of affine layers. Hidden layers apply a rectifier,
//! the last layer emits logits that are turned into a [`PredictionDist`] by a
//! softmax. Gradients are computed by walking a recorded forward trace
//! backwards, which gives both parameter gradients (for training) and the
//! gradient with respect to the input (for adversarial directions).
//!
//! The tap layer is the layer whose *input* is exposed as the sample
//! representation. Tap layer `0` is the raw feature vector; tap layer `i > 0`
//! is the activation produced by hidden layer `i - 1`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Floor applied to the second argument of [`kl_divergence`].
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Probability vector over the classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PredictionDist(Vec<f64>);

impl PredictionDist {
    /// Allowed deviation of the entry sum from one.
    pub const TOLERANCE: f64 = 1e-6;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Shape("empty probability vector".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Usage(format!("probability {p} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::Usage(format!("probabilities sum to {sum}, expected 1")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(classes: usize) -> Self {
        Self(vec![1.0 / classes as f64; classes])
    }

    pub fn one_hot(classes: usize, class: usize) -> Self {
        let mut p = vec![0.0; classes];
        p[class] = 1.0;
        Self(p)
    }

    /// Wraps a vector already known to be a simplex (softmax output, convex mix).
    pub(crate) fn from_simplex_unchecked(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest probability; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for PredictionDist {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> PredictionDist {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    PredictionDist(out)
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// `KL(p || q)` in nats, with `0 ln 0 = 0` and `q` floored at [`PROB_FLOOR`].
pub fn kl_divergence(p: &PredictionDist, q: &PredictionDist) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "KL divergence of distributions with {} and {} classes",
            p.len(),
            q.len()
        )));
    }
    let kl: f64 = p
        .probs()
        .iter()
        .zip(q.probs())
        .filter(|(&pc, _)| pc > 0.0)
        .map(|(&pc, &qc)| pc * (pc / qc.max(PROB_FLOOR)).ln())
        .sum();
    Ok(kl.max(0.0))
}

/// Affine layer `activation(W x + b)` with a row-major `(out_dim, in_dim)` weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Shape("layer dimensions must be positive".into()));
        }
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Shape(format!(
                "layer {in_dim}->{out_dim} given {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    /// He-normal weights, zero biases.
    fn he<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (2.0 / in_dim as f64).sqrt()).expect("finite std");
        let weights = (0..in_dim * out_dim).map(|_| normal.sample(rng)).collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>())
            .collect()
    }
}

/// Activations recorded during a forward pass starting at some layer.
#[derive(Debug, Clone)]
struct Trace {
    start: usize,
    /// `inputs[i]` feeds layer `start + i`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of layer `start + i`.
    pre: Vec<Vec<f64>>,
}

impl Trace {
    fn logits(&self) -> &[f64] {
        self.pre.last().expect("at least one layer")
    }
}

/// Accumulated parameter gradients, laid out like the layers.
#[derive(Debug, Clone)]
struct Gradients {
    weights: Vec<Vec<f64>>,
    bias: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &Classifier) -> Self {
        Self {
            weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: model.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }
}

/// Output of [`Classifier::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    /// Input of the tap layer.
    pub hidden: Vec<f64>,
    pub probs: PredictionDist,
}

/// Inputs of the two mixed samples, needed to push gradients below the tap layer.
#[derive(Debug, Clone, Copy)]
pub struct MixSources<'a> {
    pub first: &'a [f64],
    pub second: &'a [f64],
    pub lambda: f64,
}

/// One training example expressed at the tap layer.
#[derive(Debug, Clone, Copy)]
pub struct TrainingPair<'a> {
    pub representation: &'a [f64],
    pub target: &'a [f64],
    /// When `None` and the tap layer is above the input, layers below the tap are frozen.
    pub sources: Option<MixSources<'a>>,
}

/// Loss terms of a training batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub supervised: f64,
    pub consistency: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    layers: Vec<DenseLayer>,
    tap_layer: usize,
}

impl Classifier {
    /// He-initialised rectifier network `input -> hidden.. -> classes`.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        classes: usize,
        tap_layer: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let dims = Self::dims(input_dim, hidden, classes)?;
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { Activation::Identity } else { Activation::Relu };
                DenseLayer::he(w[0], w[1], act, rng)
            })
            .collect();
        Self::from_layers(layers, tap_layer)
    }

    /// All-zero network; its prediction is uniform everywhere.
    pub fn zeros(input_dim: usize, hidden: &[usize], classes: usize, tap_layer: usize) -> Result<Self> {
        let dims = Self::dims(input_dim, hidden, classes)?;
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { Activation::Identity } else { Activation::Relu };
                DenseLayer::zeros(w[0], w[1], act)
            })
            .collect();
        Self::from_layers(layers, tap_layer)
    }

    fn dims(input_dim: usize, hidden: &[usize], classes: usize) -> Result<Vec<usize>> {
        if classes < 2 {
            return Err(Error::Shape(format!("need at least 2 classes, got {classes}")));
        }
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(classes);
        if dims.contains(&0) {
            return Err(Error::Shape(format!("zero-width layer in {dims:?}")));
        }
        Ok(dims)
    }

    pub fn from_layers(layers: Vec<DenseLayer>, tap_layer: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("classifier needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Shape(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].out_dim,
                    i + 1,
                    pair[1].in_dim
                )));
            }
        }
        if layers.last().map(|l| l.out_dim).unwrap_or(0) < 2 {
            return Err(Error::Shape("final layer must have at least 2 classes".into()));
        }
        if tap_layer >= layers.len() {
            return Err(Error::Shape(format!(
                "tap layer {tap_layer} out of range for {} layers",
                layers.len()
            )));
        }
        Ok(Self { layers, tap_layer })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn class_count(&self) -> usize {
        self.layers.last().expect("nonempty").out_dim
    }

    pub fn tap_layer(&self) -> usize {
        self.tap_layer
    }

    /// Width of the tap-layer representation.
    pub fn representation_dim(&self) -> usize {
        self.layers[self.tap_layer].in_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Flattened parameters, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (w, tail) = rest.split_at(l.weights.len());
            let (b, tail) = tail.split_at(l.bias.len());
            l.weights.copy_from_slice(w);
            l.bias.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    fn check_dim(&self, layer: usize, x: &[f64]) -> Result<()> {
        let expected = self.layers[layer].in_dim;
        if x.len() != expected {
            return Err(Error::Shape(format!(
                "layer {layer} expects {expected} inputs, got {}",
                x.len()
            )));
        }
        Ok(())
    }

    fn trace(&self, start: usize, x: &[f64]) -> Trace {
        self.trace_range(start, self.layers.len(), x)
    }

    fn trace_range(&self, start: usize, end: usize, x: &[f64]) -> Trace {
        let depth = end - start;
        let mut inputs = Vec::with_capacity(depth);
        let mut pre = Vec::with_capacity(depth);
        let mut current = x.to_vec();
        for layer in &self.layers[start..end] {
            let z = layer.pre_activation(&current);
            let next = z.iter().map(|&v| layer.activation.apply(v)).collect();
            inputs.push(std::mem::replace(&mut current, next));
            pre.push(z);
        }
        Trace { start, inputs, pre }
    }

    /// Runs layers `[start, end)` and returns the input of layer `end`.
    fn propagate(&self, start: usize, end: usize, x: &[f64]) -> Vec<f64> {
        let mut current = x.to_vec();
        for layer in &self.layers[start..end] {
            current = layer
                .pre_activation(&current)
                .into_iter()
                .map(|v| layer.activation.apply(v))
                .collect();
        }
        current
    }

    /// Back-propagates `grad_out` (gradient w.r.t. the last recorded layer output)
    /// and returns the gradient w.r.t. the trace input.
    fn backward(&self, trace: &Trace, grad_out: Vec<f64>, mut grads: Option<&mut Gradients>) -> Vec<f64> {
        let mut g = grad_out;
        for i in (0..trace.pre.len()).rev() {
            let idx = trace.start + i;
            let layer = &self.layers[idx];
            for (gj, &zj) in g.iter_mut().zip(&trace.pre[i]) {
                *gj *= layer.activation.derivative(zj);
            }
            if let Some(grads) = grads.as_deref_mut() {
                let input = &trace.inputs[i];
                for (row, &gj) in grads.weights[idx].chunks_exact_mut(layer.in_dim).zip(&g) {
                    if gj != 0.0 {
                        for (w, &a) in row.iter_mut().zip(input) {
                            *w += gj * a;
                        }
                    }
                }
                for (b, &gj) in grads.bias[idx].iter_mut().zip(&g) {
                    *b += gj;
                }
            }
            let mut g_in = vec![0.0; layer.in_dim];
            for (row, &gj) in layer.weights.chunks_exact(layer.in_dim).zip(&g) {
                if gj != 0.0 {
                    for (gi, &w) in g_in.iter_mut().zip(row) {
                        *gi += gj * w;
                    }
                }
            }
            g = g_in;
        }
        g
    }

    /// Tap-layer representation and class probabilities for `x`. Pure.
    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        self.check_dim(0, x)?;
        let hidden = self.propagate(0, self.tap_layer, x);
        let probs = self.predict_from(self.tap_layer, &hidden);
        Ok(Forward { hidden, probs })
    }

    pub fn predict(&self, x: &[f64]) -> Result<PredictionDist> {
        self.check_dim(0, x)?;
        Ok(self.predict_from(0, x))
    }

    /// Tap-layer representation of `x`.
    pub fn represent(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(0, x)?;
        Ok(self.propagate(0, self.tap_layer, x))
    }

    /// Prediction for a vector that enters the network at `layer`.
    pub fn forward_from(&self, layer: usize, h: &[f64]) -> Result<PredictionDist> {
        if layer >= self.layers.len() {
            return Err(Error::Shape(format!("no layer {layer}")));
        }
        self.check_dim(layer, h)?;
        Ok(self.predict_from(layer, h))
    }

    fn predict_from(&self, layer: usize, h: &[f64]) -> PredictionDist {
        let logits = self.propagate(layer, self.layers.len(), h);
        softmax(&logits)
    }

    /// Gradient of `KL(reference || p(. | base + offset))` with respect to `offset`.
    pub fn grad_wrt_input(&self, base: &[f64], reference: &PredictionDist, offset: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(0, base)?;
        if offset.len() != base.len() {
            return Err(Error::Shape(format!(
                "offset has {} entries, base point has {}",
                offset.len(),
                base.len()
            )));
        }
        if reference.len() != self.class_count() {
            return Err(Error::Shape(format!(
                "reference has {} classes, model has {}",
                reference.len(),
                self.class_count()
            )));
        }
        let x: Vec<f64> = base.iter().zip(offset).map(|(b, o)| b + o).collect();
        let trace = self.trace(0, &x);
        let q = softmax(trace.logits());
        let grad_logits = q
            .probs()
            .iter()
            .zip(reference.probs())
            .map(|(qc, rc)| qc - rc)
            .collect();
        Ok(self.backward(&trace, grad_logits, None))
    }

    fn validate_pairs(&self, pairs: &[TrainingPair<'_>]) -> Result<()> {
        let dim = self.representation_dim();
        let classes = self.class_count();
        for p in pairs {
            if p.representation.len() != dim {
                return Err(Error::Shape(format!(
                    "training representation has {} entries, tap layer expects {dim}",
                    p.representation.len()
                )));
            }
            if p.target.len() != classes {
                return Err(Error::Shape(format!(
                    "training target has {} classes, model has {classes}",
                    p.target.len()
                )));
            }
            if let Some(src) = p.sources {
                self.check_dim(0, src.first)?;
                self.check_dim(0, src.second)?;
            }
        }
        Ok(())
    }

    /// Loss terms for a batch without touching the parameters.
    pub fn loss(
        &self,
        supervised: &[TrainingPair<'_>],
        consistency: &[TrainingPair<'_>],
        lambda_u: f64,
    ) -> Result<LossBreakdown> {
        self.validate_pairs(supervised)?;
        self.validate_pairs(consistency)?;
        self.accumulate(supervised, consistency, lambda_u, None)
    }

    fn accumulate(
        &self,
        supervised: &[TrainingPair<'_>],
        consistency: &[TrainingPair<'_>],
        lambda_u: f64,
        mut grads: Option<&mut Gradients>,
    ) -> Result<LossBreakdown> {
        let tap = self.tap_layer;
        let mut l_sup = 0.0;
        let mut l_con = 0.0;

        let n_sup = supervised.len().max(1) as f64;
        for pair in supervised {
            let trace = self.trace(tap, pair.representation);
            let log_q = log_softmax(trace.logits());
            l_sup -= pair.target.iter().zip(&log_q).map(|(y, lq)| y * lq).sum::<f64>();
            if let Some(g) = grads.as_deref_mut() {
                let grad: Vec<f64> = log_q
                    .iter()
                    .zip(pair.target)
                    .map(|(lq, y)| (lq.exp() - y) / n_sup)
                    .collect();
                self.backward_pair(&trace, grad, pair, g);
            }
        }
        l_sup /= n_sup;

        let n_con = consistency.len().max(1) as f64;
        for pair in consistency {
            let trace = self.trace(tap, pair.representation);
            let q = softmax(trace.logits());
            let diff: Vec<f64> = q.probs().iter().zip(pair.target).map(|(qc, y)| qc - y).collect();
            l_con += diff.iter().map(|d| d * d).sum::<f64>();
            if let Some(g) = grads.as_deref_mut() {
                // d/dz of sum_c (q_c - y_c)^2 through the softmax Jacobian
                let gq: Vec<f64> = diff.iter().map(|d| 2.0 * lambda_u * d / n_con).collect();
                let dot: f64 = gq.iter().zip(q.probs()).map(|(a, b)| a * b).sum();
                let grad = q.probs().iter().zip(&gq).map(|(qc, g)| qc * (g - dot)).collect();
                self.backward_pair(&trace, grad, pair, g);
            }
        }
        l_con /= n_con;

        let total = l_sup + lambda_u * l_con;
        if !total.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite training loss (supervised {l_sup}, consistency {l_con})"
            )));
        }
        Ok(LossBreakdown {
            supervised: l_sup,
            consistency: l_con,
            total,
        })
    }

    fn backward_pair(&self, trace: &Trace, grad_logits: Vec<f64>, pair: &TrainingPair<'_>, grads: &mut Gradients) {
        let g_rep = self.backward(trace, grad_logits, Some(grads));
        if self.tap_layer == 0 {
            return;
        }
        if let Some(src) = pair.sources {
            for (x, w) in [(src.first, src.lambda), (src.second, 1.0 - src.lambda)] {
                if w == 0.0 {
                    continue;
                }
                let t = self.trace_range(0, self.tap_layer, x);
                let g: Vec<f64> = g_rep.iter().map(|v| v * w).collect();
                // layers below the tap end in an activation; backward applies its derivative
                self.backward(&t, g, Some(grads));
            }
        }
    }

    /// One SGD step on `L_l + lambda_u * L_u`.
    ///
    /// `supervised` pairs use cross-entropy against their (mixed) targets,
    /// `consistency` pairs use the squared distance between the predicted
    /// simplex and the target. Each term is averaged over its own pairs.
    pub fn train_step(
        &mut self,
        supervised: &[TrainingPair<'_>],
        consistency: &[TrainingPair<'_>],
        learning_rate: f64,
        lambda_u: f64,
    ) -> Result<LossBreakdown> {
        if supervised.is_empty() && consistency.is_empty() {
            return Err(Error::Usage("train_step called with an empty batch".into()));
        }
        if !(learning_rate >= 0.0) || !learning_rate.is_finite() {
            return Err(Error::Usage(format!("learning rate {learning_rate} must be finite and >= 0")));
        }
        if !(lambda_u >= 0.0) {
            return Err(Error::Usage(format!("lambda_u {lambda_u} must be >= 0")));
        }
        self.validate_pairs(supervised)?;
        self.validate_pairs(consistency)?;
        let mut grads = Gradients::zeros_like(self);
        let loss = self.accumulate(supervised, consistency, lambda_u, Some(&mut grads))?;
        if learning_rate == 0.0 {
            return Ok(loss);
        }
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(grads.weights.iter().zip(&grads.bias)) {
            for (w, g) in layer.weights.iter_mut().zip(gw) {
                *w -= learning_rate * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(gb) {
                *b -= learning_rate * g;
            }
        }
        Ok(loss)
    }
}
