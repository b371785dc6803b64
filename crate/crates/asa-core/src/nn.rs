//! Feed-forward network substrate: dense layers, backpropagation, plain SGD
//! and the gradient reversal step used for adversarial training.
//!
//! Networks are stacks of dense layers, each an affine transform followed by
//! an activation. Softmax is a row-wise head activation; its backward pass is
//! the full Jacobian-vector product so arbitrary upstream gradients (not just
//! fused cross-entropy) can flow through a posterior output.

use std::hash::{Hash, Hasher};

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

/// Lower clamp for probabilities that feed a logarithm, and the matching
/// upper clamp `1 - PROB_EPS` for sigmoid outputs.
pub const PROB_EPS: f64 = 1e-12;

/// Per-unit activation applied after the affine transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    /// Logistic sigmoid, output clamped to `[PROB_EPS, 1 - PROB_EPS]`.
    Sigmoid,
    /// Row-wise softmax with max subtraction.
    Softmax,
}

impl Activation {
    /// Stable numeric code used by the checkpoint format.
    pub fn code(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
            Activation::Relu => 2,
            Activation::Sigmoid => 3,
            Activation::Softmax => 4,
        }
    }

    pub fn from_code(code: u32) -> Option<Activation> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Relu),
            3 => Some(Activation::Sigmoid),
            4 => Some(Activation::Softmax),
            _ => None,
        }
    }

    /// Applies the activation to one row of pre-activations in place.
    fn apply_row(self, z: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Tanh => {
                for v in z.iter_mut() {
                    *v = v.tanh();
                }
            }
            Activation::Relu => {
                for v in z.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            Activation::Sigmoid => {
                for v in z.iter_mut() {
                    let s = 1.0 / (1.0 + (-*v).exp());
                    *v = s.clamp(PROB_EPS, 1.0 - PROB_EPS);
                }
            }
            Activation::Softmax => {
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in z.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in z.iter_mut() {
                    *v /= sum;
                }
            }
        }
    }

    /// Converts a gradient w.r.t. the post-activation row into the delta
    /// w.r.t. the pre-activation row.
    fn preact_delta_row(self, pre: &[f64], post: &[f64], grad: &[f64], delta: &mut [f64]) {
        match self {
            Activation::Identity => delta.copy_from_slice(grad),
            Activation::Tanh => {
                for i in 0..grad.len() {
                    delta[i] = grad[i] * (1.0 - post[i] * post[i]);
                }
            }
            Activation::Relu => {
                for i in 0..grad.len() {
                    delta[i] = if pre[i] > 0.0 { grad[i] } else { 0.0 };
                }
            }
            Activation::Sigmoid => {
                for i in 0..grad.len() {
                    delta[i] = grad[i] * post[i] * (1.0 - post[i]);
                }
            }
            Activation::Softmax => {
                // delta_i = p_i * (g_i - sum_j g_j p_j)
                let dot: f64 = grad.iter().zip(post).map(|(g, p)| g * p).sum();
                for i in 0..grad.len() {
                    delta[i] = post[i] * (grad[i] - dot);
                }
            }
        }
    }
}

/// One dense layer: `y = activation(W x + b)` with `W` of shape
/// `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weight: Tensor2D,
    bias: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(weight: Tensor2D, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::invalid(format!(
                "bias length {} does not match weight rows {}",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(DenseLayer {
            weight,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weight(&self) -> &Tensor2D {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight_mut(&mut self) -> &mut Tensor2D {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }
}

/// An ordered stack of dense layers with chained dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<DenseLayer>,
}

impl Network {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a network needs at least one layer"));
        }
        for i in 1..layers.len() {
            if layers[i].in_dim() != layers[i - 1].out_dim() {
                return Err(Error::invalid(format!(
                    "layer {} expects input dim {} but layer {} outputs {}",
                    i,
                    layers[i].in_dim(),
                    i - 1,
                    layers[i - 1].out_dim()
                )));
            }
        }
        Ok(Network { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<DenseLayer> {
        self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// Total number of parameters: sum over layers of `out * (in + 1)`.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.out_dim() * (l.in_dim() + 1))
            .sum()
    }

    /// Order- and bit-exact hash of every parameter. Two networks with the
    /// same checksum after the same operations hold identical parameters.
    pub fn checksum(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for layer in &self.layers {
            for &w in layer.weight.data() {
                w.to_bits().hash(&mut h);
            }
            for &b in &layer.bias {
                b.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Flattens all parameters into one vector (weights then bias per layer).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.data());
            out.extend_from_slice(&layer.bias);
        }
        out
    }
}

/// Per-layer intermediates recorded during `forward`, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Tensor2D,
    pre: Vec<Tensor2D>,
    post: Vec<Tensor2D>,
}

impl ForwardCache {
    pub fn batch_rows(&self) -> usize {
        self.input.rows()
    }

    /// Post-activation output of the final layer.
    pub fn output(&self) -> &Tensor2D {
        self.post.last().unwrap()
    }
}

/// Per-layer parameter gradients, shape-congruent with a `Network`.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Tensor2D>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Gradients {
        Gradients {
            weights: net
                .layers
                .iter()
                .map(|l| Tensor2D::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }

    pub fn matches(&self, net: &Network) -> bool {
        self.weights.len() == net.layers.len()
            && self.biases.len() == net.layers.len()
            && net.layers.iter().enumerate().all(|(i, l)| {
                self.weights[i].rows() == l.out_dim()
                    && self.weights[i].cols() == l.in_dim()
                    && self.biases[i].len() == l.out_dim()
            })
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
            && self
                .biases
                .iter()
                .all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Accumulates `other` into `self`. Shapes must match.
    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.weights.len() != other.weights.len() {
            return Err(Error::invalid("gradient layer counts differ"));
        }
        for (w, ow) in self.weights.iter_mut().zip(&other.weights) {
            if w.rows() != ow.rows() || w.cols() != ow.cols() {
                return Err(Error::invalid("gradient weight shapes differ"));
            }
            for (a, b) in w.data_mut().iter_mut().zip(ow.data()) {
                *a += b;
            }
        }
        for (b, ob) in self.biases.iter_mut().zip(&other.biases) {
            if b.len() != ob.len() {
                return Err(Error::invalid("gradient bias shapes differ"));
            }
            for (a, v) in b.iter_mut().zip(ob) {
                *a += v;
            }
        }
        Ok(())
    }

    pub fn l2_norm(&self) -> f64 {
        let mut sum = 0.0;
        for w in &self.weights {
            sum += w.data().iter().map(|v| v * v).sum::<f64>();
        }
        for b in &self.biases {
            sum += b.iter().map(|v| v * v).sum::<f64>();
        }
        sum.sqrt()
    }

    /// Flattens all gradients in the same order as `Network::flat_params`.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }
}

/// A deterministic RNG stream derived from `(seed, stream)`. Distinct
/// streams never overlap, so independent draws (init vs shuffling) can share
/// one run seed.
pub(crate) fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Builds a network from a dimension chain and one activation per layer.
///
/// Weights are uniform in `[-limit, limit]` with
/// `limit = sqrt(6 / (fan_in + fan_out))`; biases start at zero. The same
/// `(spec, seed)` always yields bitwise-identical parameters.
pub fn init_network(dims: &[usize], activations: &[Activation], seed: u64) -> Result<Network> {
    if dims.len() < 2 {
        return Err(Error::invalid(
            "network spec needs an input dim and at least one layer",
        ));
    }
    if activations.len() != dims.len() - 1 {
        return Err(Error::invalid(format!(
            "got {} activations for {} layers",
            activations.len(),
            dims.len() - 1
        )));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::invalid("layer dimensions must be positive"));
    }
    let mut rng = rng_stream(seed, 0);
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for (i, &act) in activations.iter().enumerate() {
        layers.push(init_dense_layer(dims[i], dims[i + 1], act, &mut rng)?);
    }
    Network::new(layers)
}

pub(crate) fn init_dense_layer<R: Rng>(
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    rng: &mut R,
) -> Result<DenseLayer> {
    if in_dim == 0 || out_dim == 0 {
        return Err(Error::invalid("layer dimensions must be positive"));
    }
    let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit);
    let mut data = vec![0.0; in_dim * out_dim];
    for w in &mut data {
        *w = dist.sample(rng);
    }
    DenseLayer::new(
        Tensor2D::from_data(out_dim, in_dim, data)?,
        vec![0.0; out_dim],
        activation,
    )
}

/// Runs the batch through the network, returning the output and the cache
/// needed by `backward`. A zero-row batch yields a zero-row output.
pub fn forward(net: &Network, batch: &Tensor2D) -> Result<(Tensor2D, ForwardCache)> {
    if batch.cols() != net.input_dim() {
        return Err(Error::invalid(format!(
            "batch has {} columns but the network expects {}",
            batch.cols(),
            net.input_dim()
        )));
    }
    let rows = batch.rows();
    let mut pre = Vec::with_capacity(net.layers.len());
    let mut post = Vec::with_capacity(net.layers.len());
    let mut current = batch.clone();
    for layer in &net.layers {
        let mut z = Tensor2D::zeros(rows, layer.out_dim());
        for t in 0..rows {
            let x = current.row(t);
            let zr = z.row_mut(t);
            for o in 0..layer.out_dim() {
                let wrow = layer.weight.row(o);
                let mut acc = layer.bias[o];
                for (w, xv) in wrow.iter().zip(x) {
                    acc += w * xv;
                }
                zr[o] = acc;
            }
        }
        pre.push(z.clone());
        let mut a = z;
        for t in 0..rows {
            layer.activation.apply_row(a.row_mut(t));
        }
        post.push(a.clone());
        current = a;
    }
    let cache = ForwardCache {
        input: batch.clone(),
        pre,
        post,
    };
    Ok((current, cache))
}

/// Backpropagates `grad_out` (gradient w.r.t. the network output) through the
/// whole stack. Returns parameter gradients and the gradient w.r.t. the batch
/// input.
pub fn backward(
    net: &Network,
    cache: &ForwardCache,
    grad_out: &Tensor2D,
) -> Result<(Gradients, Tensor2D)> {
    let out = cache.output();
    if grad_out.rows() != out.rows() || grad_out.cols() != out.cols() {
        return Err(Error::invalid(format!(
            "grad_out is {}x{} but the cached output is {}x{}",
            grad_out.rows(),
            grad_out.cols(),
            out.rows(),
            out.cols()
        )));
    }
    let last = net.layers.len() - 1;
    let delta = output_grad_to_preact_delta(
        net.layers[last].activation(),
        &cache.pre[last],
        &cache.post[last],
        grad_out,
    );
    backprop_from_delta(net, cache, delta)
}

/// Like `backward`, but `delta_last` is already the gradient w.r.t. the final
/// layer's pre-activations. Used by the fused softmax cross-entropy path.
pub fn backward_from_preact(
    net: &Network,
    cache: &ForwardCache,
    delta_last: &Tensor2D,
) -> Result<(Gradients, Tensor2D)> {
    let out = cache.output();
    if delta_last.rows() != out.rows() || delta_last.cols() != out.cols() {
        return Err(Error::invalid(format!(
            "delta is {}x{} but the cached output is {}x{}",
            delta_last.rows(),
            delta_last.cols(),
            out.rows(),
            out.cols()
        )));
    }
    backprop_from_delta(net, cache, delta_last.clone())
}

/// Maps a gradient at a layer's post-activation output to the delta at its
/// pre-activations.
pub(crate) fn output_grad_to_preact_delta(
    activation: Activation,
    pre: &Tensor2D,
    post: &Tensor2D,
    grad_out: &Tensor2D,
) -> Tensor2D {
    let mut delta = Tensor2D::zeros(grad_out.rows(), grad_out.cols());
    for t in 0..grad_out.rows() {
        let mut row = vec![0.0; grad_out.cols()];
        activation.preact_delta_row(pre.row(t), post.row(t), grad_out.row(t), &mut row);
        delta.row_mut(t).copy_from_slice(&row);
    }
    delta
}

fn backprop_from_delta(
    net: &Network,
    cache: &ForwardCache,
    mut delta: Tensor2D,
) -> Result<(Gradients, Tensor2D)> {
    let rows = cache.batch_rows();
    let mut grads = Gradients::zeros_like(net);
    for l in (0..net.layers.len()).rev() {
        let layer = &net.layers[l];
        let input = if l == 0 { &cache.input } else { &cache.post[l - 1] };
        let gw = &mut grads.weights[l];
        let gb = &mut grads.biases[l];
        for t in 0..rows {
            let d = delta.row(t);
            let x = input.row(t);
            for o in 0..layer.out_dim() {
                let dv = d[o];
                gb[o] += dv;
                let grow = gw.row_mut(o);
                for (g, xv) in grow.iter_mut().zip(x) {
                    *g += dv * xv;
                }
            }
        }
        // Gradient w.r.t. this layer's input.
        let mut grad_in = Tensor2D::zeros(rows, layer.in_dim());
        for t in 0..rows {
            let d = delta.row(t);
            let gi = grad_in.row_mut(t);
            for o in 0..layer.out_dim() {
                let dv = d[o];
                let wrow = layer.weight.row(o);
                for (g, w) in gi.iter_mut().zip(wrow) {
                    *g += dv * w;
                }
            }
        }
        if l == 0 {
            return Ok((grads, grad_in));
        }
        delta = output_grad_to_preact_delta(
            net.layers[l - 1].activation(),
            &cache.pre[l - 1],
            &cache.post[l - 1],
            &grad_in,
        );
    }
    unreachable!("network has at least one layer");
}

/// One plain SGD step: `p <- p - mu * g` for every parameter.
///
/// Rejects non-finite gradients with a divergence error so a blown-up run
/// stops at the step that produced it.
pub fn sgd_step(net: &mut Network, grads: &Gradients, mu: f64) -> Result<()> {
    if !grads.matches(net) {
        return Err(Error::invalid(
            "gradients are not shape-congruent with the network",
        ));
    }
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(Error::invalid(format!(
            "learning rate must be finite and nonnegative, got {mu}"
        )));
    }
    if !grads.is_finite() {
        return Err(Error::TrainingDiverged(
            "non-finite gradient entries in sgd_step".into(),
        ));
    }
    for (layer, (gw, gb)) in net
        .layers
        .iter_mut()
        .zip(grads.weights.iter().zip(&grads.biases))
    {
        for (w, g) in layer.weight.data_mut().iter_mut().zip(gw.data()) {
            *w -= mu * g;
        }
        for (b, g) in layer.bias.iter_mut().zip(gb) {
            *b -= mu * g;
        }
    }
    Ok(())
}

/// Backward half of the gradient reversal layer: returns `-lambda * grad_out`
/// elementwise. The forward half is the identity, so no forward op exists.
pub fn grl_backward(grad_out: &Tensor2D, lambda: f64) -> Tensor2D {
    debug_assert!(lambda >= 0.0, "GRL weight must be nonnegative");
    let mut out = grad_out.clone();
    for v in out.data_mut() {
        *v = -lambda * *v;
    }
    out
}
