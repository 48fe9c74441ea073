//! Feedforward network over `(latent, given)` inputs with per-element
//! backpropagation and the gradient with respect to the latent inputs.
//!
//! Only the output unit of the user being presented is ever evaluated. Its
//! error term is the only non-zero one in the output layer, so gradients on
//! edges into every other output unit are zero and are never materialised.
//!
//! Error terms follow the usual sign convention `delta = -dE/dnet` for
//! `E = 0.5 * (target - prediction)^2`. Gradients are `g = -delta * input`,
//! so descent is `w -= eta * (g + lambda * w)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Logistic,
}

impl Activation {
    #[inline]
    pub fn apply(self, net: f64) -> f64 {
        match self {
            Activation::Identity => net,
            Activation::Tanh => net.tanh(),
            Activation::Logistic => 1.0 / (1.0 + (-net).exp()),
        }
    }

    /// Derivative at `net`, given `out = apply(net)`.
    #[inline]
    pub fn derivative(self, _net: f64, out: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - out * out,
            Activation::Logistic => out * (1.0 - out),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Logistic => "logistic",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(Activation::Identity),
            "tanh" => Some(Activation::Tanh),
            "logistic" => Some(Activation::Logistic),
            _ => None,
        }
    }
}

/// Shape of a network: `latent + attributes` inputs, hidden layers, one output per user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub latent: usize,
    pub attributes: usize,
    pub hidden: Vec<usize>,
    pub outputs: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl Topology {
    /// Tanh hidden units and an identity output.
    pub fn new(latent: usize, attributes: usize, hidden: Vec<usize>, outputs: usize) -> Result<Self> {
        let topology = Topology {
            latent,
            attributes,
            hidden,
            outputs,
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Identity,
        };
        topology.validate()?;
        Ok(topology)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_width() == 0 {
            return Err(Error::Config("network has no inputs".into()));
        }
        if self.outputs == 0 {
            return Err(Error::Config("network has no outputs".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layers must have at least one unit".into()));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.latent + self.attributes
    }

    /// Number of hidden layers.
    pub fn depth(&self) -> usize {
        self.hidden.len()
    }

    /// `(fan_in, fan_out)` of every weight layer, output layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden.len() + 1);
        let mut fan_in = self.input_width();
        for &h in &self.hidden {
            shapes.push((fan_in, h));
            fan_in = h;
        }
        shapes.push((fan_in, self.outputs));
        shapes
    }
}

/// One fully connected layer. Row `j` of `weights` holds the edges into unit `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    pub fn from_parts(inputs: usize, outputs: usize, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self> {
        if weights.len() != inputs * outputs || biases.len() != outputs {
            return Err(Error::Shape(format!(
                "layer {inputs}x{outputs} given {} weights and {} biases",
                weights.len(),
                biases.len()
            )));
        }
        Ok(Layer {
            inputs,
            outputs,
            weights,
            biases,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    /// Weight on the edge from input `from` to unit `to`.
    #[inline]
    pub fn weight(&self, from: usize, to: usize) -> f64 {
        self.weights[to * self.inputs + from]
    }

    pub fn set_weight(&mut self, from: usize, to: usize, value: f64) {
        self.weights[to * self.inputs + from] = value;
    }

    #[inline]
    pub fn incoming(&self, to: usize) -> &[f64] {
        &self.weights[to * self.inputs..(to + 1) * self.inputs]
    }

    pub fn bias(&self, to: usize) -> f64 {
        self.biases[to]
    }

    pub fn set_bias(&mut self, to: usize, value: f64) {
        self.biases[to] = value;
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).all(|v| v.is_finite())
    }
}

/// The ragged weight set: hidden layers in forward order, then the output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSet {
    layers: Vec<Layer>,
}

impl WeightSet {
    pub fn zeros(topology: &Topology) -> Self {
        WeightSet {
            layers: topology
                .layer_shapes()
                .into_iter()
                .map(|(i, o)| Layer::zeros(i, o))
                .collect(),
        }
    }

    /// Every weight and bias drawn from `Normal(0, deviation)`.
    pub fn random<R: Rng + ?Sized>(topology: &Topology, deviation: f64, rng: &mut R) -> Result<Self> {
        let normal =
            Normal::new(0.0, deviation).map_err(|e| Error::Config(format!("initial deviation {deviation}: {e}")))?;
        let mut set = Self::zeros(topology);
        for layer in &mut set.layers {
            for w in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *w = normal.sample(rng);
            }
        }
        Ok(set)
    }

    pub fn from_layers(topology: &Topology, layers: Vec<Layer>) -> Result<Self> {
        let shapes = topology.layer_shapes();
        let matches = shapes.len() == layers.len()
            && shapes
                .iter()
                .zip(&layers)
                .all(|(&(i, o), l)| l.inputs == i && l.outputs == o);
        if !matches {
            return Err(Error::Shape("layers do not match topology".into()));
        }
        Ok(WeightSet { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn output_layer(&self) -> &Layer {
        self.layers.last().expect("weight set always has an output layer")
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Layer::is_finite)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct HiddenTrace {
    pub net: Vec<f64>,
    pub activation: Vec<f64>,
    pub delta: Vec<f64>,
}

/// Net inputs, activations and error terms from presenting one element.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ActivationTrace {
    pub input: Vec<f64>,
    pub hidden: Vec<HiddenTrace>,
    pub output_unit: usize,
    pub output_net: f64,
    pub output_activation: f64,
    pub output_delta: f64,
}

impl ActivationTrace {
    pub fn prediction(&self) -> f64 {
        self.output_activation
    }

    /// Activations feeding the output layer.
    fn last_activation(&self) -> &[f64] {
        self.hidden.last().map_or(&self.input[..], |h| &h.activation[..])
    }
}

/// Gradient with respect to the weights for one presented element.
///
/// Hidden layers are dense; of the output layer only the row of the
/// presented unit is stored because every other row is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightGradient {
    hidden: Vec<Layer>,
    output_unit: usize,
    output_units: usize,
    output_weights: Vec<f64>,
    output_bias: f64,
}

impl WeightGradient {
    /// Component for the edge `from -> to` in weight layer `layer`.
    pub fn weight(&self, layer: usize, from: usize, to: usize) -> f64 {
        if layer < self.hidden.len() {
            self.hidden[layer].weight(from, to)
        } else if to == self.output_unit {
            self.output_weights[from]
        } else {
            0.0
        }
    }

    pub fn bias(&self, layer: usize, to: usize) -> f64 {
        if layer < self.hidden.len() {
            self.hidden[layer].bias(to)
        } else if to == self.output_unit {
            self.output_bias
        } else {
            0.0
        }
    }

    pub fn output_unit(&self) -> usize {
        self.output_unit
    }

    /// Expand to the full shape of the weight set.
    pub fn to_dense(&self) -> Vec<Layer> {
        let mut layers = self.hidden.clone();
        let mut out = Layer::zeros(self.output_weights.len(), self.output_units);
        let fan_in = out.inputs;
        out.weights[self.output_unit * fan_in..(self.output_unit + 1) * fan_in].copy_from_slice(&self.output_weights);
        out.biases[self.output_unit] = self.output_bias;
        layers.push(out);
        layers
    }
}

/// Gradient with respect to the latent inputs of the presented item.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGradient(pub Vec<f64>);

impl LatentGradient {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `q_r = (v_r, a_r)`, latent part first.
pub fn assemble_input(latent: &[f64], profile: &[f64], topology: &Topology) -> Result<Vec<f64>> {
    if latent.len() != topology.latent || profile.len() != topology.attributes {
        return Err(Error::Shape(format!(
            "input ({}, {}) for a network expecting ({}, {})",
            latent.len(),
            profile.len(),
            topology.latent,
            topology.attributes
        )));
    }
    let mut q = Vec::with_capacity(latent.len() + profile.len());
    q.extend_from_slice(latent);
    q.extend_from_slice(profile);
    Ok(q)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    topology: Topology,
    weights: WeightSet,
}

impl Network {
    pub fn new(topology: Topology, weights: WeightSet) -> Result<Self> {
        topology.validate()?;
        let weights = WeightSet::from_layers(&topology, weights.layers)?;
        Ok(Network { topology, weights })
    }

    pub fn zeros(topology: Topology) -> Result<Self> {
        topology.validate()?;
        let weights = WeightSet::zeros(&topology);
        Ok(Network { topology, weights })
    }

    pub fn random<R: Rng + ?Sized>(topology: Topology, deviation: f64, rng: &mut R) -> Result<Self> {
        topology.validate()?;
        let weights = WeightSet::random(&topology, deviation, rng)?;
        Ok(Network { topology, weights })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn weights(&self) -> &WeightSet {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut WeightSet {
        &mut self.weights
    }

    pub fn new_trace(&self) -> ActivationTrace {
        ActivationTrace {
            input: Vec::with_capacity(self.topology.input_width()),
            hidden: self
                .topology
                .hidden
                .iter()
                .map(|&h| HiddenTrace {
                    net: vec![0.0; h],
                    activation: vec![0.0; h],
                    delta: vec![0.0; h],
                })
                .collect(),
            ..ActivationTrace::default()
        }
    }

    /// Forward pass computing every hidden unit and only output unit `user`.
    pub fn forward(&self, input: &[f64], user: usize) -> Result<(f64, ActivationTrace)> {
        let mut trace = self.new_trace();
        let prediction = self.forward_into(input, user, &mut trace)?;
        Ok((prediction, trace))
    }

    /// [`forward`](Self::forward) reusing the buffers of `trace`.
    pub fn forward_into(&self, input: &[f64], user: usize, trace: &mut ActivationTrace) -> Result<f64> {
        if input.len() != self.topology.input_width() {
            return Err(Error::Shape(format!(
                "input of width {} for a network of width {}",
                input.len(),
                self.topology.input_width()
            )));
        }
        if user >= self.topology.outputs {
            return Err(Error::IndexOutOfRange {
                what: "user",
                index: user,
                limit: self.topology.outputs,
            });
        }
        trace.input.clear();
        trace.input.extend_from_slice(input);
        let act = self.topology.hidden_activation;
        let depth = self.topology.depth();
        for k in 0..depth {
            let layer = &self.weights.layers[k];
            let (before, rest) = trace.hidden.split_at_mut(k);
            let source: &[f64] = if k == 0 {
                &trace.input
            } else {
                &before[k - 1].activation
            };
            let unit = &mut rest[0];
            for j in 0..layer.outputs {
                let net = layer.biases[j] + dot(layer.incoming(j), source);
                let out = act.apply(net);
                if !out.is_finite() {
                    return Err(Error::NonFinite);
                }
                unit.net[j] = net;
                unit.activation[j] = out;
                unit.delta[j] = 0.0;
            }
        }
        let out_layer = self.weights.output_layer();
        let net = out_layer.biases[user] + dot(out_layer.incoming(user), trace.last_activation());
        let out = self.topology.output_activation.apply(net);
        if !out.is_finite() {
            return Err(Error::NonFinite);
        }
        trace.output_unit = user;
        trace.output_net = net;
        trace.output_activation = out;
        trace.output_delta = 0.0;
        Ok(out)
    }

    /// Fill error terms for the output unit of the trace and every hidden unit.
    pub fn error_terms(&self, target: f64, trace: &mut ActivationTrace) -> Result<()> {
        let c = trace.output_unit;
        let out_act = self.topology.output_activation;
        trace.output_delta =
            (target - trace.output_activation) * out_act.derivative(trace.output_net, trace.output_activation);
        if !trace.output_delta.is_finite() {
            return Err(Error::NonFinite);
        }
        let act = self.topology.hidden_activation;
        let depth = self.topology.depth();
        if depth == 0 {
            return Ok(());
        }
        let out_layer = self.weights.output_layer();
        let last = &mut trace.hidden[depth - 1];
        let into_c = out_layer.incoming(c);
        for (i, (d, w)) in last.delta.iter_mut().zip(into_c).enumerate() {
            *d = w * trace.output_delta * act.derivative(last.net[i], last.activation[i]);
        }
        for k in (0..depth - 1).rev() {
            let next = &self.weights.layers[k + 1];
            let (lower, upper) = trace.hidden.split_at_mut(k + 1);
            let unit = &mut lower[k];
            let downstream = &upper[0].delta;
            for j in 0..unit.delta.len() {
                let mut sum = 0.0;
                for (m, d) in downstream.iter().enumerate() {
                    sum += next.weight(j, m) * d;
                }
                unit.delta[j] = sum * act.derivative(unit.net[j], unit.activation[j]);
            }
        }
        Ok(())
    }

    /// `g_ij = -delta_j * alpha_i`; bias components are `-delta_j`.
    pub fn weight_gradient(&self, trace: &ActivationTrace) -> WeightGradient {
        let mut hidden = Vec::with_capacity(trace.hidden.len());
        for (k, unit) in trace.hidden.iter().enumerate() {
            let source: &[f64] = if k == 0 {
                &trace.input
            } else {
                &trace.hidden[k - 1].activation
            };
            let mut g = Layer::zeros(source.len(), unit.delta.len());
            for (j, &d) in unit.delta.iter().enumerate() {
                for (i, &a) in source.iter().enumerate() {
                    g.set_weight(i, j, -d * a);
                }
                g.set_bias(j, -d);
            }
            hidden.push(g);
        }
        let d = trace.output_delta;
        WeightGradient {
            hidden,
            output_unit: trace.output_unit,
            output_units: self.topology.outputs,
            output_weights: trace.last_activation().iter().map(|&a| -d * a).collect(),
            output_bias: -d,
        }
    }

    /// Gradient for the latent inputs: `-w_ic * delta_c` without hidden
    /// layers, `-sum_j w_ij * delta_j` over the first hidden layer otherwise.
    pub fn latent_gradient(&self, trace: &ActivationTrace) -> LatentGradient {
        let mut h = vec![0.0; self.topology.latent];
        self.latent_gradient_into(trace, &mut h);
        LatentGradient(h)
    }

    fn latent_gradient_into(&self, trace: &ActivationTrace, h: &mut [f64]) {
        let first = &self.weights.layers[0];
        if self.topology.depth() == 0 {
            let into_c = first.incoming(trace.output_unit);
            for (i, hi) in h.iter_mut().enumerate() {
                *hi = -into_c[i] * trace.output_delta;
            }
        } else {
            let deltas = &trace.hidden[0].delta;
            h.iter_mut().for_each(|x| *x = 0.0);
            for (j, &d) in deltas.iter().enumerate() {
                let row = first.incoming(j);
                for (i, hi) in h.iter_mut().enumerate() {
                    *hi -= row[i] * d;
                }
            }
        }
    }

    /// The summed form applied uniformly: the sum runs over whatever units of
    /// the first weight layer carry an error term. Without hidden layers that
    /// is the single presented output unit.
    pub fn latent_gradient_generic(&self, trace: &ActivationTrace) -> LatentGradient {
        let first = &self.weights.layers[0];
        let units: Vec<(usize, f64)> = match trace.hidden.first() {
            Some(unit) => unit.delta.iter().copied().enumerate().collect(),
            None => vec![(trace.output_unit, trace.output_delta)],
        };
        let h = (0..self.topology.latent)
            .map(|i| -units.iter().map(|&(j, d)| first.weight(i, j) * d).sum::<f64>())
            .collect();
        LatentGradient(h)
    }

    /// `W -= eta * (g + lambda * W)` on the weights the gradient covers (biases
    /// are not decayed); `v_r -= eta * (h + lambda * v_r)` when `update_latents`.
    ///
    /// Output rows of users other than the presented one are left untouched.
    pub fn apply_updates(
        &mut self,
        gradient: &WeightGradient,
        latent: &mut [f64],
        latent_gradient: &LatentGradient,
        eta: f64,
        lambda: f64,
        update_latents: bool,
    ) -> Result<()> {
        let depth = self.topology.depth();
        if gradient.hidden.len() != depth || gradient.output_units != self.topology.outputs {
            return Err(Error::Shape("gradient does not match network".into()));
        }
        if update_latents && (latent.len() != self.topology.latent || latent_gradient.0.len() != latent.len()) {
            return Err(Error::Shape("latent row or gradient has the wrong length".into()));
        }
        for (layer, g) in self.weights.layers.iter_mut().zip(&gradient.hidden) {
            for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
                *w -= eta * (gw + lambda * *w);
            }
            for (b, gb) in layer.biases.iter_mut().zip(&g.biases) {
                *b -= eta * gb;
            }
            if !layer.is_finite() {
                return Err(Error::NonFinite);
            }
        }
        let c = gradient.output_unit;
        let out = &mut self.weights.layers[depth];
        let fan_in = out.inputs;
        let row = &mut out.weights[c * fan_in..(c + 1) * fan_in];
        for (w, gw) in row.iter_mut().zip(&gradient.output_weights) {
            *w -= eta * (gw + lambda * *w);
        }
        out.biases[c] -= eta * gradient.output_bias;
        if !row.iter().all(|v| v.is_finite()) || !out.biases[c].is_finite() {
            return Err(Error::NonFinite);
        }
        if update_latents {
            for (v, h) in latent.iter_mut().zip(&latent_gradient.0) {
                *v -= eta * (h + lambda * *v);
            }
            if !latent.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        Ok(())
    }

    /// One stochastic gradient step for a single known element.
    ///
    /// Equivalent to `forward`, `error_terms`, `weight_gradient`,
    /// `latent_gradient` and `apply_updates` in sequence, without allocating.
    /// Both gradients come from the same pre-update trace. Returns the
    /// residual `target - prediction` before the update.
    #[allow(clippy::too_many_arguments)]
    pub fn sgd_step(
        &mut self,
        latent: &mut [f64],
        profile: &[f64],
        user: usize,
        target: f64,
        eta: f64,
        lambda: f64,
        update_latents: bool,
        scratch: &mut StepScratch,
    ) -> Result<f64> {
        scratch.input.clear();
        scratch.input.extend_from_slice(latent);
        scratch.input.extend_from_slice(profile);
        let prediction = self.forward_into(&scratch.input, user, &mut scratch.trace)?;
        self.error_terms(target, &mut scratch.trace)?;
        let trace = &scratch.trace;
        if update_latents {
            scratch.latent_gradient.resize(self.topology.latent, 0.0);
            self.latent_gradient_into(trace, &mut scratch.latent_gradient);
        }

        let depth = self.topology.depth();
        for k in 0..depth {
            let source: &[f64] = if k == 0 {
                &trace.input
            } else {
                &trace.hidden[k - 1].activation
            };
            let layer = &mut self.weights.layers[k];
            let fan_in = layer.inputs;
            for (j, &d) in trace.hidden[k].delta.iter().enumerate() {
                let row = &mut layer.weights[j * fan_in..(j + 1) * fan_in];
                for (w, &a) in row.iter_mut().zip(source) {
                    *w -= eta * (-d * a + lambda * *w);
                }
                layer.biases[j] -= eta * -d;
            }
        }
        let d = trace.output_delta;
        let source = trace.last_activation();
        let out = &mut self.weights.layers[depth];
        let fan_in = out.inputs;
        let row = &mut out.weights[user * fan_in..(user + 1) * fan_in];
        for (w, &a) in row.iter_mut().zip(source) {
            *w -= eta * (-d * a + lambda * *w);
        }
        out.biases[user] -= eta * -d;
        if !out.biases[user].is_finite() {
            return Err(Error::NonFinite);
        }

        if update_latents {
            for (v, h) in latent.iter_mut().zip(&scratch.latent_gradient) {
                *v -= eta * (h + lambda * *v);
            }
            if !latent.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        Ok(target - prediction)
    }
}

/// Reusable buffers for [`Network::sgd_step`].
#[derive(Clone, Debug, Default)]
pub struct StepScratch {
    input: Vec<f64>,
    trace: ActivationTrace,
    latent_gradient: Vec<f64>,
}

impl StepScratch {
    pub fn new(network: &Network) -> Self {
        StepScratch {
            input: Vec::with_capacity(network.topology.input_width()),
            trace: network.new_trace(),
            latent_gradient: vec![0.0; network.topology.latent],
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
