//! Dense feed-forward nets with analytic reverse-mode gradients.
//!
//! One net instance plays any of the roles in the framework: encoder, source
//! classifier, critic, or reconstruction decoder. Hidden layers share one
//! activation; the output layer is always affine so logits, latents, and
//! critic scores stay unbounded.

use crate::error::{dim_mismatch, Error, Result};
use crate::numerics::rng::Rng;
use crate::numerics::tensor::Tensor2D;

/// Largest magnitude a single SGD update may apply to one parameter.
pub const UPDATE_CLAMP: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Elu,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the post-activation value `y`.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Elu => {
                if y > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "elu" => Ok(Activation::Elu),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidArg(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
struct Layer {
    /// Weight matrix, shape `in_dim x out_dim`.
    weights: Tensor2D,
    bias: Vec<f64>,
    activation: Activation,
    grad_w: Tensor2D,
    grad_b: Vec<f64>,
    vel_w: Tensor2D,
    vel_b: Vec<f64>,
}

#[derive(Debug, Clone)]
struct ForwardCache {
    input: Tensor2D,
    /// Post-activation output of every layer.
    post: Vec<Tensor2D>,
}

#[derive(Debug, Clone)]
pub struct DifferentiableNet {
    layer_sizes: Vec<usize>,
    layers: Vec<Layer>,
    cache: Option<ForwardCache>,
}

impl DifferentiableNet {
    /// Glorot-uniform initialized net. `hidden_activation` applies to every
    /// layer except the last, which is affine.
    pub fn new(layer_sizes: &[usize], hidden_activation: Activation, rng: &mut Rng) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidArg(
                "net needs at least an input and an output size".into(),
            ));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArg("layer sizes must be positive".into()));
        }
        let n_layers = layer_sizes.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for k in 0..n_layers {
            let (fan_in, fan_out) = (layer_sizes[k], layer_sizes[k + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let values: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.uniform_in(-bound, bound))
                .collect();
            let activation = if k + 1 < n_layers {
                hidden_activation
            } else {
                Activation::Identity
            };
            layers.push(Layer {
                weights: Tensor2D::new(fan_in, fan_out, values)?,
                bias: vec![0.0; fan_out],
                activation,
                grad_w: Tensor2D::zeros(fan_in, fan_out),
                grad_b: vec![0.0; fan_out],
                vel_w: Tensor2D::zeros(fan_in, fan_out),
                vel_b: vec![0.0; fan_out],
            });
        }
        Ok(DifferentiableNet {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            cache: None,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn uses_relu(&self) -> bool {
        self.layers.iter().any(|l| l.activation == Activation::Relu)
    }

    /// Overwrite one layer's parameters (tests and golden setups).
    pub fn set_params(&mut self, layer: usize, weights: Tensor2D, bias: Vec<f64>) -> Result<()> {
        let l = &mut self.layers[layer];
        if weights.rows() != l.weights.rows() || weights.cols() != l.weights.cols() {
            return Err(dim_mismatch(
                "set_params weights",
                format!("{}x{}", l.weights.rows(), l.weights.cols()),
                format!("{}x{}", weights.rows(), weights.cols()),
            ));
        }
        if bias.len() != l.bias.len() {
            return Err(dim_mismatch("set_params bias", l.bias.len(), bias.len()));
        }
        l.weights = weights;
        l.bias = bias;
        Ok(())
    }

    fn affine_forward(layer: &Layer, input: &Tensor2D) -> Tensor2D {
        let (n, in_dim, out_dim) = (input.rows(), layer.weights.rows(), layer.weights.cols());
        let mut out = Tensor2D::zeros(n, out_dim);
        for r in 0..n {
            let x = input.row(r);
            let o = &mut out.values_mut()[r * out_dim..(r + 1) * out_dim];
            o.copy_from_slice(&layer.bias);
            for k in 0..in_dim {
                let a = x[k];
                if a == 0.0 {
                    continue;
                }
                let w_row = layer.weights.row(k);
                for (oj, wj) in o.iter_mut().zip(w_row) {
                    *oj += a * wj;
                }
            }
            for v in o.iter_mut() {
                *v = layer.activation.apply(*v);
            }
        }
        out
    }

    fn run_forward(&self, input: &Tensor2D) -> Result<Vec<Tensor2D>> {
        if input.cols() != self.input_dim() {
            return Err(dim_mismatch("forward input", self.input_dim(), input.cols()));
        }
        if !input.is_finite() {
            return Err(Error::NonFinite {
                context: "forward input".into(),
            });
        }
        let mut post = Vec::with_capacity(self.layers.len());
        let mut cur = input;
        for (k, layer) in self.layers.iter().enumerate() {
            let out = Self::affine_forward(layer, cur);
            if !out.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("forward output of layer {k}"),
                });
            }
            post.push(out);
            cur = post.last().unwrap();
        }
        Ok(post)
    }

    /// Forward pass that caches activations for a subsequent `backward`.
    pub fn forward(&mut self, input: &Tensor2D) -> Result<Tensor2D> {
        let post = self.run_forward(input)?;
        let output = post.last().unwrap().clone();
        self.cache = Some(ForwardCache {
            input: input.clone(),
            post,
        });
        Ok(output)
    }

    /// Read-only forward pass; safe on a frozen net, caches nothing.
    pub fn predict(&self, input: &Tensor2D) -> Result<Tensor2D> {
        Ok(self.run_forward(input)?.pop().unwrap())
    }

    /// Accumulate parameter gradients for the cached forward pass and return
    /// the gradient with respect to the input (for chaining into an upstream
    /// net). Consumes the cache; parameters are left untouched.
    pub fn backward(&mut self, output_grad: &Tensor2D) -> Result<Tensor2D> {
        let cache = self.cache.take().ok_or(Error::BackwardWithoutForward)?;
        let last = cache.post.last().unwrap();
        if output_grad.rows() != last.rows() || output_grad.cols() != last.cols() {
            return Err(dim_mismatch(
                "backward output_grad",
                format!("{}x{}", last.rows(), last.cols()),
                format!("{}x{}", output_grad.rows(), output_grad.cols()),
            ));
        }
        let n = output_grad.rows();
        let mut d_post = output_grad.clone();
        for (k, layer) in self.layers.iter_mut().enumerate().rev() {
            let post = &cache.post[k];
            let input = if k == 0 { &cache.input } else { &cache.post[k - 1] };
            let (in_dim, out_dim) = (layer.weights.rows(), layer.weights.cols());

            // d_pre = d_post * act'(post)
            let mut d_pre = d_post;
            for (g, y) in d_pre.values_mut().iter_mut().zip(post.values()) {
                *g *= layer.activation.grad_from_output(*y);
            }

            for r in 0..n {
                let dp = d_pre.row(r).to_vec();
                for (gb, g) in layer.grad_b.iter_mut().zip(&dp) {
                    *gb += g;
                }
                let x = input.row(r).to_vec();
                for (k_in, a) in x.iter().enumerate() {
                    if *a == 0.0 {
                        continue;
                    }
                    let gw = &mut layer.grad_w.values_mut()[k_in * out_dim..(k_in + 1) * out_dim];
                    for (gwj, g) in gw.iter_mut().zip(&dp) {
                        *gwj += a * g;
                    }
                }
            }

            // d_input = d_pre * W^T
            let mut d_input = Tensor2D::zeros(n, in_dim);
            for r in 0..n {
                let dp = d_pre.row(r).to_vec();
                let di = &mut d_input.values_mut()[r * in_dim..(r + 1) * in_dim];
                for (k_in, dik) in di.iter_mut().enumerate() {
                    let w_row = layer.weights.row(k_in);
                    let mut s = 0.0;
                    for (w, g) in w_row.iter().zip(&dp) {
                        s += w * g;
                    }
                    *dik = s;
                }
            }
            d_post = d_input;
        }
        Ok(d_post)
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            layer.grad_w.values_mut().fill(0.0);
            layer.grad_b.fill(0.0);
        }
        self.cache = None;
    }

    /// Drop a cached forward pass without touching gradients, keeping
    /// forward/backward calls strictly paired.
    pub fn zero_cache(&mut self) {
        self.cache = None;
    }

    /// SGD update `p -= lr * v` with `v = momentum * v + grad`; gradients are
    /// zeroed afterwards. `momentum = 0` is the plain rule.
    ///
    /// Each applied update is clamped to [`UPDATE_CLAMP`]; ordinary training
    /// sits orders of magnitude below the bound, which exists to keep extreme
    /// loss weightings (e.g. a sensitivity sweep's corner cells) from running
    /// the parameters off to overflow.
    pub fn sgd_step(&mut self, lr: f64, momentum: f64) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::InvalidArg(format!("learning rate must be positive, got {lr}")));
        }
        for (k, layer) in self.layers.iter_mut().enumerate() {
            if !layer.grad_w.is_finite() || !layer.grad_b.iter().all(|g| g.is_finite()) {
                return Err(Error::NonFiniteGradient { layer: k });
            }
            for ((w, v), g) in layer
                .weights
                .values_mut()
                .iter_mut()
                .zip(layer.vel_w.values_mut())
                .zip(layer.grad_w.values())
            {
                *v = momentum * *v + g;
                *w -= (lr * *v).clamp(-UPDATE_CLAMP, UPDATE_CLAMP);
            }
            for ((b, v), g) in layer.bias.iter_mut().zip(&mut layer.vel_b).zip(&layer.grad_b) {
                *v = momentum * *v + g;
                *b -= (lr * *v).clamp(-UPDATE_CLAMP, UPDATE_CLAMP);
            }
            layer.grad_w.values_mut().fill(0.0);
            layer.grad_b.fill(0.0);
        }
        self.cache = None;
        Ok(())
    }

    /// Global L2 norm of the accumulated gradients.
    pub fn grad_norm(&self) -> f64 {
        let mut sum = 0.0;
        for layer in &self.layers {
            sum += layer.grad_w.values().iter().map(|g| g * g).sum::<f64>();
            sum += layer.grad_b.iter().map(|g| g * g).sum::<f64>();
        }
        sum.sqrt()
    }

    /// Scale every accumulated gradient (global-norm clipping support).
    pub fn scale_grads(&mut self, factor: f64) {
        for layer in &mut self.layers {
            for g in layer.grad_w.values_mut() {
                *g *= factor;
            }
            for g in &mut layer.grad_b {
                *g *= factor;
            }
        }
    }

    /// FNV-1a hash over the exact bit patterns of all parameters. Used to
    /// prove that a phase of the training loop left a net untouched.
    pub fn param_checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: f64| {
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01B3);
            }
        };
        for layer in &self.layers {
            layer.weights.values().iter().copied().for_each(&mut feed);
            layer.bias.iter().copied().for_each(&mut feed);
        }
        h
    }

    /// Snapshot of all parameters, flattened per layer (weights then bias).
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.values());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    /// Gradient accumulators, flattened in the same order as `params_flat`.
    pub fn grads_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend_from_slice(layer.grad_w.values());
            out.extend_from_slice(&layer.grad_b);
        }
        out
    }

    /// Add `delta` to the parameter at flat index `i` (finite differences).
    pub fn nudge_param(&mut self, i: usize, delta: f64) {
        let mut idx = i;
        for layer in &mut self.layers {
            let nw = layer.weights.values().len();
            if idx < nw {
                layer.weights.values_mut()[idx] += delta;
                return;
            }
            idx -= nw;
            if idx < layer.bias.len() {
                layer.bias[idx] += delta;
                return;
            }
            idx -= layer.bias.len();
        }
        panic!("parameter index {i} out of range");
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.values().len() + l.bias.len())
            .sum()
    }
}
