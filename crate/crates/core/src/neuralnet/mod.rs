//! Small dense-network engine: initialization, batched evaluation with exact
//! second input derivatives, hand-written reverse passes, a scalar
//! reverse-mode tape for arbitrary losses, and Adam.

mod batch;
mod matrix;
mod tape;

pub use batch::{forward_batch, BatchGrad, BatchTape, StreamAdjoints};
pub use matrix::{gemm, Matrix};
pub use tape::{loss_gradient, mlp_forward_tape, sum_vars, Tape, Var};

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NeuralError {
    #[error("invalid network config: {0}")]
    InvalidConfig(&'static str),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in layer {layer}")]
    NonFinite { layer: usize },
    #[error("non-finite gradient entry {index}; step rejected")]
    NonFiniteGradient { index: usize },
    #[error("unsupported operation: {0}")]
    Unsupported(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
    /// Not twice differentiable; second input derivatives are rejected.
    Relu,
}

impl Activation {
    pub fn is_smooth(self) -> bool {
        !matches!(self, Activation::Relu)
    }

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(z),
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
        }
    }

    /// First three derivatives at `z`, given `y = apply(z)`.
    #[inline]
    pub(crate) fn derivs(self, z: f64, y: f64) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let s1 = 1.0 - y * y;
                (s1, -2.0 * y * s1, -2.0 * s1 * s1 + 4.0 * y * y * s1)
            }
            Activation::Identity => (1.0, 0.0, 0.0),
            Activation::Relu => (if z > 0.0 { 1.0 } else { 0.0 }, 0.0, 0.0),
        }
    }
}

/// `depth` hidden layers of `width` units followed by an affine output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseNetworkConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub activation: Activation,
}

impl DenseNetworkConfig {
    pub fn new(input_dim: usize, output_dim: usize, width: usize, depth: usize) -> Self {
        Self { input_dim, output_dim, width, depth, activation: Activation::Tanh }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(NeuralError::InvalidConfig("input and output dimensions must be positive"));
        }
        if self.width == 0 || self.depth == 0 {
            return Err(NeuralError::InvalidConfig("width and depth must be at least 1"));
        }
        Ok(())
    }

    /// `(fan_out, fan_in)` of every affine layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.depth + 1);
        let mut fan_in = self.input_dim;
        for _ in 0..self.depth {
            shapes.push((self.width, fan_in));
            fan_in = self.width;
        }
        shapes.push((self.output_dim, fan_in));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }
}

/// Weights `w` (`rows = fan_out`, `cols = fan_in`) and bias `b` of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Matrix,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub layers: Vec<Layer>,
}

impl ParameterSet {
    pub fn zeros(config: &DenseNetworkConfig) -> Self {
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(o, i)| Layer { w: Matrix::zeros(o, i), b: alloc::vec![0.0; o] })
            .collect();
        Self { layers }
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.w.data.len() + l.b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Layer by layer, weights (row-major) then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for l in &self.layers {
            out.extend_from_slice(&l.w.data);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn unflatten(config: &DenseNetworkConfig, flat: &[f64]) -> Result<Self, NeuralError> {
        let mut p = Self::zeros(config);
        p.assign(flat)?;
        Ok(p)
    }

    /// Overwrites every entry from `flat`, in [`flatten`](Self::flatten) order.
    pub fn assign(&mut self, flat: &[f64]) -> Result<(), NeuralError> {
        if flat.len() != self.len() {
            return Err(NeuralError::DimensionMismatch { expected: self.len(), found: flat.len() });
        }
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.w.data.len();
            l.w.data.copy_from_slice(&flat[k..k + nw]);
            k += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&flat[k..k + nb]);
            k += nb;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.is_finite() && l.b.iter().all(|v| v.is_finite()))
    }
}

/// Uniform in `[0, 1)` with 53 random bits.
pub(crate) fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Glorot-uniform weights (variance `2 / (fan_in + fan_out)`), zero biases.
pub fn init_params(config: &DenseNetworkConfig, seed: u64) -> Result<ParameterSet, NeuralError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParameterSet::zeros(config);
    for l in &mut p.layers {
        let limit = libm::sqrt(6.0 / (l.w.rows + l.w.cols) as f64);
        for w in &mut l.w.data {
            *w = limit * (2.0 * unit_f64(&mut rng) - 1.0);
        }
    }
    Ok(p)
}

/// Evaluates the network at one input.
pub fn forward(params: &ParameterSet, config: &DenseNetworkConfig, input: &[f64]) -> Result<Vec<f64>, NeuralError> {
    if input.len() != config.input_dim {
        return Err(NeuralError::DimensionMismatch { expected: config.input_dim, found: input.len() });
    }
    let mut a = input.to_vec();
    let last = params.layers.len() - 1;
    for (li, l) in params.layers.iter().enumerate() {
        let mut z: Vec<f64> = (0..l.w.rows)
            .map(|o| l.b[o] + l.w.row(o).iter().zip(&a).map(|(w, x)| w * x).sum::<f64>())
            .collect();
        if li != last {
            z.iter_mut().for_each(|v| *v = config.activation.apply(*v));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(NeuralError::NonFinite { layer: li });
        }
        a = z;
    }
    Ok(a)
}

/// Exact `d^2 out / d input_j^2` at one input, by forward propagation of
/// first and second directional derivatives along `e_j`.
pub fn second_input_derivative(
    params: &ParameterSet,
    config: &DenseNetworkConfig,
    input: &[f64],
    j: usize,
) -> Result<Vec<f64>, NeuralError> {
    if j >= config.input_dim {
        return Err(NeuralError::DimensionMismatch { expected: config.input_dim, found: j + 1 });
    }
    let x = Matrix::from_vec(1, input.len(), input.to_vec());
    let tape = forward_batch(params, config, &x, &[(j, 1.0)])?;
    Ok(tape.d2(0).row(0).to_vec())
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    /// Defaults: `lr = 1e-3`, decays `0.9 / 0.999`, `eps = 1e-8`.
    pub fn new(n_params: usize) -> Self {
        Self::with_lr(n_params, 1e-3)
    }

    pub fn with_lr(n_params: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: alloc::vec![0.0; n_params], v: alloc::vec![0.0; n_params] }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. Non-finite gradients leave everything untouched.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<(), NeuralError> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(NeuralError::DimensionMismatch { expected: self.m.len(), found: grad.len().min(params.len()) });
        }
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(NeuralError::NonFiniteGradient { index });
        }
        self.step += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / bc1) / (libm::sqrt(*v / bc2) + self.eps);
        }
        Ok(())
    }
}
