//! Scalar reverse-mode tape for arbitrary differentiable losses.

use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::ops::{Add, Div, Mul, Neg, Sub};

use super::{Activation, DenseNetworkConfig, NeuralError};

#[derive(Debug, Clone, Copy)]
struct Node {
    parents: [(usize, f64); 2],
}

/// Append-only record of operations; gradients are read back with [`Tape::gradient`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// A value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
    val: f64,
}

impl core::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "Var({}, {})", self.idx, self.val)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, val: f64, parents: [(usize, f64); 2]) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { parents });
        Var { tape: self, idx: nodes.len() - 1, val }
    }

    /// Independent variable (or constant; constants simply receive an unused adjoint).
    pub fn var(&self, val: f64) -> Var<'_> {
        self.push(val, [(0, 0.0), (0, 0.0)])
    }

    pub fn constant(&self, val: f64) -> Var<'_> {
        self.var(val)
    }

    /// Adjoints of every recorded node with respect to `output`.
    pub fn gradient(&self, output: Var<'_>) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        adj[output.idx] = 1.0;
        for i in (0..=output.idx).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            for &(p, w) in &nodes[i].parents {
                if w != 0.0 {
                    adj[p] += a * w;
                }
            }
        }
        adj
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.val
    }

    pub fn index(&self) -> usize {
        self.idx
    }

    fn unary(self, val: f64, d: f64) -> Self {
        self.tape.push(val, [(self.idx, d), (0, 0.0)])
    }

    pub fn tanh(self) -> Self {
        let y = libm::tanh(self.val);
        self.unary(y, 1.0 - y * y)
    }

    pub fn exp(self) -> Self {
        let y = libm::exp(self.val);
        self.unary(y, y)
    }

    pub fn ln(self) -> Self {
        self.unary(libm::log(self.val), 1.0 / self.val)
    }

    pub fn sin(self) -> Self {
        self.unary(libm::sin(self.val), libm::cos(self.val))
    }

    pub fn cos(self) -> Self {
        self.unary(libm::cos(self.val), -libm::sin(self.val))
    }

    pub fn sqrt(self) -> Self {
        let y = libm::sqrt(self.val);
        self.unary(y, 0.5 / y)
    }

    pub fn powf(self, p: f64) -> Self {
        self.unary(libm::pow(self.val, p), p * libm::pow(self.val, p - 1.0))
    }

    pub fn sigmoid(self) -> Self {
        let y = 1.0 / (1.0 + libm::exp(-self.val));
        self.unary(y, y * (1.0 - y))
    }

    pub fn relu(self) -> Self {
        if self.val > 0.0 {
            self.unary(self.val, 1.0)
        } else {
            self.unary(0.0, 0.0)
        }
    }

    pub fn square(self) -> Self {
        self.unary(self.val * self.val, 2.0 * self.val)
    }

    pub fn scale(self, c: f64) -> Self {
        self.unary(self.val * c, c)
    }

    pub fn offset(self, c: f64) -> Self {
        self.unary(self.val + c, 1.0)
    }

    pub fn activate(self, act: Activation) -> Self {
        match act {
            Activation::Tanh => self.tanh(),
            Activation::Identity => self,
            Activation::Relu => self.relu(),
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, o: Self) -> Self {
        self.tape.push(self.val + o.val, [(self.idx, 1.0), (o.idx, 1.0)])
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, o: Self) -> Self {
        self.tape.push(self.val - o.val, [(self.idx, 1.0), (o.idx, -1.0)])
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, o: Self) -> Self {
        self.tape.push(self.val * o.val, [(self.idx, o.val), (o.idx, self.val)])
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, o: Self) -> Self {
        let q = self.val / o.val;
        self.tape.push(q, [(self.idx, 1.0 / o.val), (o.idx, -q / o.val)])
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

/// Sum of a non-empty slice of vars.
pub fn sum_vars<'t>(vars: &[Var<'t>]) -> Var<'t> {
    vars[1..].iter().fold(vars[0], |acc, &v| acc + v)
}

/// Network evaluation on the tape; `params` are in `ParameterSet::flatten` order.
pub fn mlp_forward_tape<'t>(
    tape: &'t Tape,
    params: &[Var<'t>],
    config: &DenseNetworkConfig,
    input: &[Var<'t>],
) -> Result<Vec<Var<'t>>, NeuralError> {
    if params.len() != config.param_count() {
        return Err(NeuralError::DimensionMismatch { expected: config.param_count(), found: params.len() });
    }
    if input.len() != config.input_dim {
        return Err(NeuralError::DimensionMismatch { expected: config.input_dim, found: input.len() });
    }
    let shapes = config.layer_shapes();
    let mut a = input.to_vec();
    let mut k = 0;
    for (li, &(rows, cols)) in shapes.iter().enumerate() {
        let w = &params[k..k + rows * cols];
        let b = &params[k + rows * cols..k + rows * cols + rows];
        k += rows * cols + rows;
        let mut next = Vec::with_capacity(rows);
        for o in 0..rows {
            let mut z = b[o];
            for i in 0..cols {
                z = z + w[o * cols + i] * a[i];
            }
            if li + 1 < shapes.len() {
                z = z.activate(config.activation);
            }
            if !z.value().is_finite() {
                return Err(NeuralError::NonFinite { layer: li });
            }
            next.push(z);
        }
        a = next;
    }
    let _ = tape;
    Ok(a)
}

/// Value and gradient of `loss_fn` at `params`. The closure receives the
/// tape and one var per parameter and returns the scalar loss.
pub fn loss_gradient<F>(params: &[f64], loss_fn: F) -> Result<(f64, Vec<f64>), NeuralError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, NeuralError>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|&p| tape.var(p)).collect();
    let loss = loss_fn(&tape, &vars)?;
    if !loss.value().is_finite() {
        return Err(NeuralError::NonFinite { layer: usize::MAX });
    }
    let adj = tape.gradient(loss);
    Ok((loss.value(), vars.iter().map(|v| adj[v.index()]).collect()))
}
