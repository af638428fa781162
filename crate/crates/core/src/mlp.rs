//! Dense ReLU network with batched reverse-mode gradients and Adam.
//!
//! The network maps the concatenated input `[t, y, x]` to a `d_Y`-vector:
//! affine layers with a rectifier on every hidden layer and the identity on
//! the output. Weights are row-major with shape `(outputs, inputs)`.
//!
//! Batched inputs/outputs are flat row-major buffers of shape
//! `(batch, width)`. The batched entry points ([`MlpScoreNet::forward_batch`],
//! [`MlpScoreNet::backward_batch`]) assert on shape misuse; the per-sample
//! entry points validate and return [`Result`].
//!
//! The sparsity level and weight bound that appear in the theoretical
//! function class are not enforced here.

use rand_distr::{Distribution, Normal};

use crate::error::{config_err, shape_err, Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl DenseLayer {
    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    /// Row-major `(outputs, inputs)`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }
}

/// ReLU feedforward network `b(t, y, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpScoreNet {
    layer_sizes: Vec<usize>,
    layers: Vec<DenseLayer>,
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(config_err("a network needs at least an input and an output size"));
    }
    if layer_sizes.contains(&0) {
        return Err(config_err("layer sizes must be positive"));
    }
    Ok(())
}

impl MlpScoreNet {
    /// He fan-in initialization: weights `N(0, 2/fan_in)`, zero biases.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut rng = rng::stream(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let std = (2.0 / inputs as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("finite positive std");
                DenseLayer {
                    inputs,
                    outputs,
                    weights: (0..inputs * outputs).map(|_| normal.sample(&mut rng)).collect(),
                    biases: vec![0.0; outputs],
                }
            })
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            layers,
        })
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| DenseLayer {
                inputs: w[0],
                outputs: w[1],
                weights: vec![0.0; w[0] * w[1]],
                biases: vec![0.0; w[1]],
            })
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            layers,
        })
    }

    /// Builds a network from explicit per-layer `(weights, biases)`.
    pub fn from_parameters(layer_sizes: &[usize], params: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        if params.len() != layer_sizes.len() - 1 {
            return Err(shape_err(format!(
                "{} parameter blocks for {} layers",
                params.len(),
                layer_sizes.len() - 1
            )));
        }
        let mut layers = Vec::with_capacity(params.len());
        for (i, (weights, biases)) in params.into_iter().enumerate() {
            let (inputs, outputs) = (layer_sizes[i], layer_sizes[i + 1]);
            if weights.len() != inputs * outputs || biases.len() != outputs {
                return Err(shape_err(format!("layer {i} parameter shape mismatch")));
            }
            if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
                return Err(config_err(format!("layer {i} has non-finite parameters")));
            }
            layers.push(DenseLayer {
                inputs,
                outputs,
                weights,
                biases,
            });
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            layers,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// All parameters flattened layer by layer (weights, then biases).
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(shape_err("parameter vector length mismatch"));
        }
        let slots = self
            .layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()));
        for (p, &v) in slots.zip(values) {
            *p = v;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(shape_err(format!(
                "input length {} but network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut cache = ForwardCache::default();
        Ok(self.forward_batch(input, 1, &mut cache).to_vec())
    }

    /// Gradient of `output_grad · forward(input)` with respect to every
    /// parameter.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<Gradients> {
        if input.len() != self.input_dim() || output_grad.len() != self.output_dim() {
            return Err(shape_err("input or output gradient length mismatch"));
        }
        let mut cache = ForwardCache::default();
        self.forward_batch(input, 1, &mut cache);
        let mut grads = Gradients::zeros_like(self);
        self.backward_batch(input, output_grad, &mut cache, &mut grads);
        Ok(grads)
    }

    /// Evaluates a `(batch, input_dim)` buffer; the returned slice is
    /// `(batch, output_dim)` and lives in `cache`.
    pub fn forward_batch<'c>(&self, inputs: &[f64], batch: usize, cache: &'c mut ForwardCache) -> &'c [f64] {
        assert_eq!(inputs.len(), batch * self.input_dim(), "forward_batch input shape");
        cache.prepare(self, batch);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (done, rest) = cache.acts.split_at_mut(l);
            let a_prev: &[f64] = if l == 0 { inputs } else { &done[l - 1] };
            let z = &mut cache.pre[l];
            for row in z.chunks_exact_mut(layer.outputs) {
                row.copy_from_slice(&layer.biases);
            }
            gemm_abt(a_prev, batch, layer.inputs, &layer.weights, layer.outputs, z, 1.0);
            if l < last {
                for (a, &zv) in rest[0].iter_mut().zip(z.iter()) {
                    *a = if zv > 0.0 { zv } else { 0.0 };
                }
            }
        }
        &cache.pre[last]
    }

    /// Accumulates `∂(Σ_rows output_grads · forward)/∂θ` into `grads`.
    ///
    /// `cache` must hold the activations from the matching
    /// [`forward_batch`](Self::forward_batch) call. The rectifier's
    /// subgradient at zero is taken as zero.
    pub fn backward_batch(&self, inputs: &[f64], output_grads: &[f64], cache: &mut ForwardCache, grads: &mut Gradients) {
        let batch = cache.batch;
        assert_eq!(inputs.len(), batch * self.input_dim(), "backward_batch input shape");
        assert_eq!(output_grads.len(), batch * self.output_dim(), "backward_batch grad shape");
        let mut delta = std::mem::take(&mut cache.delta);
        let mut dprev = std::mem::take(&mut cache.dprev);
        delta.clear();
        delta.extend_from_slice(output_grads);
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let a_prev: &[f64] = if l == 0 { inputs } else { &cache.acts[l - 1] };
            let g = &mut grads.layers[l];
            gemm_atb(&delta, batch, layer.outputs, a_prev, layer.inputs, &mut g.weights, 1.0);
            for row in delta.chunks_exact(layer.outputs) {
                for (gb, d) in g.biases.iter_mut().zip(row) {
                    *gb += d;
                }
            }
            if l > 0 {
                dprev.clear();
                dprev.resize(batch * layer.inputs, 0.0);
                gemm_ab(&delta, batch, layer.outputs, &layer.weights, layer.inputs, &mut dprev, 0.0);
                for (d, &z) in dprev.iter_mut().zip(&cache.pre[l - 1]) {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                }
                std::mem::swap(&mut delta, &mut dprev);
            }
        }
        cache.delta = delta;
        cache.dprev = dprev;
    }
}

/// Reusable activation buffers for batched evaluation.
#[derive(Debug, Default, Clone)]
pub struct ForwardCache {
    batch: usize,
    pre: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    dprev: Vec<f64>,
}

impl ForwardCache {
    fn prepare(&mut self, net: &MlpScoreNet, batch: usize) {
        let n = net.layers.len();
        self.batch = batch;
        self.pre.resize_with(n, Vec::new);
        self.acts.resize_with(n.saturating_sub(1), Vec::new);
        for (l, layer) in net.layers.iter().enumerate() {
            self.pre[l].resize(batch * layer.outputs, 0.0);
            if l + 1 < n {
                self.acts[l].resize(batch * layer.outputs, 0.0);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Parameter-shaped buffer: gradients or optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &MlpScoreNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for l in &mut self.layers {
            l.weights.fill(0.0);
            l.biases.fill(0.0);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in self.iter_mut() {
            *v *= c;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    fn matches(&self, net: &MlpScoreNet) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.len() == l.weights.len() && g.biases.len() == l.biases.len())
    }
}

/// Adam optimizer state.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Gradients,
    second: Gradients,
}

impl AdamState {
    /// Defaults: `β1 = 0.9`, `β2 = 0.999`, `ε = 1e-8`.
    pub fn new(net: &MlpScoreNet, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: Gradients::zeros_like(net),
            second: Gradients::zeros_like(net),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. Non-finite gradients are rejected before
/// anything is modified.
pub fn adam_step(net: &mut MlpScoreNet, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if !grads.matches(net) || !state.first.matches(net) {
        return Err(shape_err("gradient shapes do not match the network"));
    }
    if !grads.all_finite() {
        return Err(Error::Training("non-finite gradient".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = state.learning_rate;
    let eps = state.epsilon;
    for (l, layer) in net.layers.iter_mut().enumerate() {
        let g = &grads.layers[l];
        let m = &mut state.first.layers[l];
        let v = &mut state.second.layers[l];
        let params = layer.weights.iter_mut().chain(layer.biases.iter_mut());
        let gs = g.weights.iter().chain(&g.biases);
        let ms = m.weights.iter_mut().chain(m.biases.iter_mut());
        let vs = v.weights.iter_mut().chain(v.biases.iter_mut());
        for (((p, &gi), mi), vi) in params.zip(gs).zip(ms).zip(vs) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

// c (m×n) = beta·c + a (m×k) · wᵀ, with w stored (n×k).
fn gemm_abt(a: &[f64], m: usize, k: usize, w: &[f64], n: usize, c: &mut [f64], beta: f64) {
    assert!(a.len() >= m * k && w.len() >= n * k && c.len() >= m * n);
    // SAFETY: bounds asserted above; strides describe the row-major layouts.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            w.as_ptr(), 1, k as isize,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

// c (m×n) = beta·c + aᵀ b, with a stored (k×m) and b stored (k×n).
fn gemm_atb(a: &[f64], k: usize, m: usize, b: &[f64], n: usize, c: &mut [f64], beta: f64) {
    assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: bounds asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), 1, m as isize,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

// c (m×n) = beta·c + a (m×k) · b (k×n).
fn gemm_ab(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, c: &mut [f64], beta: f64) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: bounds asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Central finite difference of `g · forward(x)` for every parameter.
    fn fd_gradients(net: &MlpScoreNet, x: &[f64], g: &[f64], h: f64) -> Vec<f64> {
        let objective = |n: &MlpScoreNet| -> f64 {
            n.forward(x).unwrap().iter().zip(g).map(|(a, b)| a * b).sum()
        };
        let theta = net.parameters();
        let mut probe = net.clone();
        (0..theta.len())
            .map(|i| {
                let mut p = theta.clone();
                p[i] = theta[i] + h;
                probe.set_parameters(&p).unwrap();
                let up = objective(&probe);
                p[i] = theta[i] - h;
                probe.set_parameters(&p).unwrap();
                let down = objective(&probe);
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    fn flat(g: &Gradients) -> Vec<f64> {
        g.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    #[test]
    fn init_zero_biases_and_deterministic() {
        let a = MlpScoreNet::init(&[3, 1], 11).unwrap();
        assert!(a.layers()[0].biases().iter().all(|&b| b == 0.0));
        let b = MlpScoreNet::init(&[3, 1], 11).unwrap();
        assert_eq!(a, b);
        let c = MlpScoreNet::init(&[3, 1], 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_rejects_bad_sizes() {
        assert!(MlpScoreNet::init(&[], 0).is_err());
        assert!(MlpScoreNet::init(&[3], 0).is_err());
        assert!(MlpScoreNet::init(&[3, 0, 1], 0).is_err());
    }

    #[test]
    fn init_weight_variance_matches_fan_in() {
        let sizes = [4, 48, 48, 1];
        let mut sums = [0.0f64; 3];
        let mut counts = [0usize; 3];
        for seed in 0..200 {
            let net = MlpScoreNet::init(&sizes, seed).unwrap();
            for (l, layer) in net.layers().iter().enumerate() {
                sums[l] += layer.weights().iter().map(|w| w * w).sum::<f64>();
                counts[l] += layer.weights().len();
            }
        }
        for l in 0..3 {
            let var = sums[l] / counts[l] as f64;
            let expected = 2.0 / sizes[l] as f64;
            assert!((var / expected - 1.0).abs() < 0.2, "layer {l}: {var} vs {expected}");
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = MlpScoreNet::zeros(&[4, 5, 2]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_identity_layer() {
        let net = MlpScoreNet::from_parameters(
            &[3, 3],
            vec![(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], vec![0.0; 3])],
        )
        .unwrap();
        assert_eq!(net.forward(&[0.5, -7.0, 2.0]).unwrap(), vec![0.5, -7.0, 2.0]);
    }

    #[test]
    fn hand_evaluated_two_layer_net() {
        // hidden = relu(W1 x + b1), out = W2 hidden + b2
        let w1 = vec![1.0, 2.0, -1.0, 0.5, 3.0, 3.0];
        let b1 = vec![0.5, -0.25, 0.1];
        let w2 = vec![2.0, -1.0, 4.0];
        let b2 = vec![0.3];
        let net = MlpScoreNet::from_parameters(&[2, 3, 1], vec![(w1, b1), (w2, b2)]).unwrap();
        let x = [1.0, -1.0];
        // straight-line evaluation
        let h0 = f64::max(1.0 * 1.0 + -2.0 + 0.5, 0.0); // -0.5 -> 0
        let h1 = f64::max(-1.0 + -0.5 - 0.25, 0.0); // -1.75 -> 0
        let h2 = f64::max(3.0 * 1.0 + -3.0 + 0.1, 0.0); // 0.1
        let expected = 2.0 * h0 - h1 + 4.0 * h2 + 0.3;
        let got = net.forward(&x).unwrap()[0];
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
        assert!((got - 0.7).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_wrong_length() {
        let net = MlpScoreNet::zeros(&[3, 2]).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape(_))));
        assert!(matches!(net.backward(&[1.0, 2.0, 3.0], &[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let net = MlpScoreNet::init(&[3, 8, 2], 4).unwrap();
        let g = net.backward(&[0.3, -0.2, 1.0], &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_gradient_is_input() {
        let net = MlpScoreNet::init(&[4, 1], 9).unwrap();
        let x = [0.5, -1.5, 2.0, 3.25];
        let g = net.backward(&x, &[1.0]).unwrap();
        assert_eq!(g.layers[0].weights, x.to_vec());
        assert_eq!(g.layers[0].biases, vec![1.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rng::stream(99);
        for seed in 0..10 {
            let net = MlpScoreNet::init(&[5, 12, 9, 2], seed).unwrap();
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let g = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let analytic = flat(&net.backward(&x, &g).unwrap());
            let numeric = fd_gradients(&net, &x, &g, 1e-5);
            for (a, n) in analytic.iter().zip(&numeric) {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
                assert!(rel < 1e-5, "seed {seed}: {a} vs {n}");
            }
        }
    }

    #[test]
    fn batched_backward_sums_per_sample_gradients() {
        let net = MlpScoreNet::init(&[3, 6, 1], 2).unwrap();
        let xs = [0.1, 0.2, -0.3, 1.0, -1.0, 0.5, -0.7, 0.4, 0.9];
        let gs = [1.0, -2.0, 0.5];
        let mut cache = ForwardCache::default();
        net.forward_batch(&xs, 3, &mut cache);
        let mut batched = Gradients::zeros_like(&net);
        net.backward_batch(&xs, &gs, &mut cache, &mut batched);
        let mut summed = Gradients::zeros_like(&net);
        for i in 0..3 {
            let g = net.backward(&xs[i * 3..i * 3 + 3], &gs[i..i + 1]).unwrap();
            for (s, v) in summed.iter_mut().zip(g.iter()) {
                *s += v;
            }
        }
        for (a, b) in batched.iter().zip(summed.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_zero_grads_leave_parameters() {
        let mut net = MlpScoreNet::init(&[3, 4, 1], 1).unwrap();
        let before = net.clone();
        let mut st = AdamState::new(&net, 1e-3);
        let zero = Gradients::zeros_like(&net);
        adam_step(&mut net, &zero, &mut st).unwrap();
        assert_eq!(net, before);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn adam_first_step_magnitude() {
        let mut net = MlpScoreNet::from_parameters(&[1, 1], vec![(vec![1.0], vec![0.0])]).unwrap();
        let mut st = AdamState::new(&net, 1e-3);
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].weights[0] = 0.5;
        adam_step(&mut net, &g, &mut st).unwrap();
        // mhat = g, vhat = g^2 at step one
        let expected = 1.0 - 1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((net.layers()[0].weights()[0] - expected).abs() < 1e-15);
        assert!(((1.0 - net.layers()[0].weights()[0]) - 1e-3).abs() < 1e-10);
    }

    #[test]
    fn adam_two_steps_match_scripted_recursion() {
        let mut net = MlpScoreNet::from_parameters(&[1, 1], vec![(vec![0.2], vec![-0.1])]).unwrap();
        let mut st = AdamState::new(&net, 0.01);
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].weights[0] = 0.3;
        g.layers[0].biases[0] = -2.0;
        adam_step(&mut net, &g, &mut st).unwrap();
        adam_step(&mut net, &g, &mut st).unwrap();
        // independent recursion
        let script = |mut p: f64, grad: f64| {
            let (mut m, mut v) = (0.0, 0.0);
            for t in 1..=2 {
                m = 0.9 * m + 0.1 * grad;
                v = 0.999 * v + 0.001 * grad * grad;
                let mh = m / (1.0 - 0.9f64.powi(t));
                let vh = v / (1.0 - 0.999f64.powi(t));
                p -= 0.01 * mh / (vh.sqrt() + 1e-8);
            }
            p
        };
        assert!((net.layers()[0].weights()[0] - script(0.2, 0.3)).abs() < 1e-15);
        assert!((net.layers()[0].biases()[0] - script(-0.1, -2.0)).abs() < 1e-15);
        assert_eq!(st.step(), 2);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut net = MlpScoreNet::init(&[2, 1], 0).unwrap();
        let before = net.clone();
        let mut st = AdamState::new(&net, 1e-3);
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].weights[1] = f64::NAN;
        assert!(matches!(adam_step(&mut net, &g, &mut st), Err(Error::Training(_))));
        assert_eq!(net, before);
        assert_eq!(st.step(), 0);
    }

    proptest! {
        #[test]
        fn hidden_layer_is_positively_homogeneous(
            seed in 0u64..1000,
            c in 0.1f64..10.0,
            x in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            let net = MlpScoreNet::init(&[3, 7, 5, 1], seed).unwrap();
            let mut scaled = net.clone();
            for w in scaled.layers_mut()[1].weights_mut() {
                *w *= c;
            }
            let mut a = ForwardCache::default();
            let mut b = ForwardCache::default();
            net.forward_batch(&x, 1, &mut a);
            scaled.forward_batch(&x, 1, &mut b);
            for (p, q) in a.pre[1].iter().zip(&b.pre[1]) {
                prop_assert!((q - c * p).abs() <= 1e-12 * (1.0 + q.abs()));
            }
            // downstream output scales too when every bias is zero
            let out_a = net.forward(&x).unwrap()[0];
            let out_b = scaled.forward(&x).unwrap()[0];
            prop_assert!((out_b - c * out_a).abs() <= 1e-10 * (1.0 + out_b.abs()));
        }

        #[test]
        fn forward_is_finite_on_finite_input(
            seed in 0u64..1000,
            x in proptest::collection::vec(-1e3f64..1e3, 4),
        ) {
            let net = MlpScoreNet::init(&[4, 16, 16, 2], seed).unwrap();
            prop_assert!(net.forward(&x).unwrap().iter().all(|v| v.is_finite()));
        }
    }
}
