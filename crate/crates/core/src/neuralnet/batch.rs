//! Batched evaluation carrying, per input direction `e_j` (optionally scaled),
//! the first and second directional derivatives through every layer, and
//! the matching reverse pass for losses of the value and derivative outputs.

use alloc::vec;
use alloc::vec::Vec;

use super::{gemm, Activation, DenseNetworkConfig, Matrix, NeuralError, ParameterSet};

/// Everything the reverse pass needs from a forward evaluation.
#[derive(Debug, Clone)]
pub struct BatchTape {
    activation: Activation,
    dirs: Vec<(usize, f64)>,
    /// `acts[0]` is the input; `acts[l + 1]` the output of hidden layer `l`.
    acts: Vec<Matrix>,
    /// Tangents of `acts`, indexed `[layer][direction]`.
    d1: Vec<Vec<Matrix>>,
    d2: Vec<Vec<Matrix>>,
    /// Pre-activation tangents of hidden layers.
    zd1: Vec<Vec<Matrix>>,
    zd2: Vec<Vec<Matrix>>,
    out: Matrix,
    out_d1: Vec<Matrix>,
    out_d2: Vec<Matrix>,
}

/// Adjoints of a scalar loss with respect to the network outputs and their
/// directional derivatives. Each matrix is `batch x output_dim`.
#[derive(Debug, Clone)]
pub struct StreamAdjoints {
    pub value: Matrix,
    pub d1: Vec<Matrix>,
    pub d2: Vec<Matrix>,
}

impl StreamAdjoints {
    pub fn zeros(batch: usize, outputs: usize, n_dirs: usize) -> Self {
        Self {
            value: Matrix::zeros(batch, outputs),
            d1: vec![Matrix::zeros(batch, outputs); n_dirs],
            d2: vec![Matrix::zeros(batch, outputs); n_dirs],
        }
    }
}

/// Parameter gradient with the same layout as [`ParameterSet`].
pub type BatchGrad = ParameterSet;

fn affine(a: &Matrix, w: &Matrix, b: Option<&[f64]>) -> Matrix {
    let mut z = Matrix::zeros(a.rows, w.rows);
    if let Some(b) = b {
        for r in 0..z.rows {
            z.row_mut(r).copy_from_slice(b);
        }
    }
    gemm(1.0, a, false, w, true, if b.is_some() { 1.0 } else { 0.0 }, &mut z);
    z
}

fn check(m: &Matrix, layer: usize) -> Result<(), NeuralError> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(NeuralError::NonFinite { layer })
    }
}

/// Evaluates the network on every row of `inputs`. Each `(j, s)` in `dirs`
/// adds tangent streams for the direction `s * e_j`, so `d2` holds
/// `s^2 d^2 out / d x_j^2`.
pub fn forward_batch(
    params: &ParameterSet,
    config: &DenseNetworkConfig,
    inputs: &Matrix,
    dirs: &[(usize, f64)],
) -> Result<BatchTape, NeuralError> {
    if inputs.cols != config.input_dim {
        return Err(NeuralError::DimensionMismatch { expected: config.input_dim, found: inputs.cols });
    }
    if let Some(&(j, _)) = dirs.iter().find(|d| d.0 >= config.input_dim) {
        return Err(NeuralError::DimensionMismatch { expected: config.input_dim, found: j + 1 });
    }
    if !dirs.is_empty() && !config.activation.is_smooth() {
        return Err(NeuralError::Unsupported("second derivatives need a twice-differentiable activation"));
    }
    let bsz = inputs.rows;
    let nd = dirs.len();
    let depth = params.layers.len() - 1;

    let mut acts = vec![inputs.clone()];
    let mut d1 = vec![dirs
        .iter()
        .map(|&(j, s)| {
            let mut m = Matrix::zeros(bsz, inputs.cols);
            for r in 0..bsz {
                m.set(r, j, s);
            }
            m
        })
        .collect::<Vec<_>>()];
    let mut d2 = vec![vec![Matrix::zeros(bsz, inputs.cols); nd]];
    let mut zd1 = Vec::with_capacity(depth);
    let mut zd2 = Vec::with_capacity(depth);

    for (l, layer) in params.layers[..depth].iter().enumerate() {
        let mut y = affine(&acts[l], &layer.w, Some(&layer.b));
        check(&y, l)?;
        let zdot: Vec<Matrix> = d1[l].iter().map(|a| affine(a, &layer.w, None)).collect();
        // Second tangents of the raw input are zero.
        let zddot: Vec<Matrix> = if l == 0 {
            vec![Matrix::zeros(bsz, layer.w.rows); nd]
        } else {
            d2[l].iter().map(|a| affine(a, &layer.w, None)).collect()
        };
        let mut nd1 = vec![Matrix::zeros(bsz, layer.w.rows); nd];
        let mut nd2 = vec![Matrix::zeros(bsz, layer.w.rows); nd];
        for k in 0..y.data.len() {
            let z = y.data[k];
            let v = config.activation.apply(z);
            let (s1, s2, _) = config.activation.derivs(z, v);
            y.data[k] = v;
            for d in 0..nd {
                let zd = zdot[d].data[k];
                nd1[d].data[k] = s1 * zd;
                nd2[d].data[k] = s2 * zd * zd + s1 * zddot[d].data[k];
            }
        }
        acts.push(y);
        d1.push(nd1);
        d2.push(nd2);
        zd1.push(zdot);
        zd2.push(zddot);
    }
    let last = &params.layers[depth];
    let out = affine(&acts[depth], &last.w, Some(&last.b));
    check(&out, depth)?;
    let out_d1: Vec<Matrix> = d1[depth].iter().map(|a| affine(a, &last.w, None)).collect();
    let out_d2: Vec<Matrix> = d2[depth].iter().map(|a| affine(a, &last.w, None)).collect();
    for m in out_d1.iter().chain(&out_d2) {
        check(m, depth)?;
    }
    Ok(BatchTape { activation: config.activation, dirs: dirs.to_vec(), acts, d1, d2, zd1, zd2, out, out_d1, out_d2 })
}

impl BatchTape {
    pub fn batch_size(&self) -> usize {
        self.out.rows
    }

    pub fn directions(&self) -> &[(usize, f64)] {
        &self.dirs
    }

    pub fn output(&self) -> &Matrix {
        &self.out
    }

    pub fn d1(&self, dir: usize) -> &Matrix {
        &self.out_d1[dir]
    }

    pub fn d2(&self, dir: usize) -> &Matrix {
        &self.out_d2[dir]
    }

    /// Output of the last hidden layer (the features the output layer mixes).
    pub fn features(&self) -> &Matrix {
        self.acts.last().expect("at least the input")
    }

    pub fn features_d1(&self, dir: usize) -> &Matrix {
        &self.d1.last().expect("at least the input")[dir]
    }

    pub fn features_d2(&self, dir: usize) -> &Matrix {
        &self.d2.last().expect("at least the input")[dir]
    }

    /// Gradient of a scalar loss given its adjoints on the output streams.
    pub fn backward(&self, params: &ParameterSet, adj: &StreamAdjoints) -> Result<BatchGrad, NeuralError> {
        let nd = self.dirs.len();
        if adj.d1.len() != nd || adj.d2.len() != nd {
            return Err(NeuralError::DimensionMismatch { expected: nd, found: adj.d1.len().min(adj.d2.len()) });
        }
        if adj.value.rows != self.out.rows || adj.value.cols != self.out.cols {
            return Err(NeuralError::DimensionMismatch { expected: self.out.data.len(), found: adj.value.data.len() });
        }
        let depth = params.layers.len() - 1;
        let mut grad = ParameterSet { layers: params.layers.iter().map(|l| super::Layer { w: Matrix::zeros(l.w.rows, l.w.cols), b: vec![0.0; l.b.len()] }).collect() };

        let mut a_bar = adj.value.clone();
        let mut a1_bar = adj.d1.clone();
        let mut a2_bar = adj.d2.clone();

        // Output layer: affine in all streams.
        accumulate(&mut grad.layers[depth], &a_bar, &a1_bar, &a2_bar, &self.acts[depth], &self.d1[depth], &self.d2[depth], depth == 0);
        if depth == 0 {
            return Ok(grad);
        }
        let w = &params.layers[depth].w;
        a_bar = propagate(&a_bar, w);
        a1_bar = a1_bar.iter().map(|m| propagate(m, w)).collect();
        a2_bar = a2_bar.iter().map(|m| propagate(m, w)).collect();

        for l in (0..depth).rev() {
            let y = &self.acts[l + 1];
            let mut z_bar = Matrix::zeros(y.rows, y.cols);
            let mut z1_bar = vec![Matrix::zeros(y.rows, y.cols); nd];
            let mut z2_bar = vec![Matrix::zeros(y.rows, y.cols); nd];
            for k in 0..y.data.len() {
                let v = y.data[k];
                let (s1, s2, s3) = self.activation.derivs(v, v);
                let mut zb = a_bar.data[k] * s1;
                for d in 0..nd {
                    let zd = self.zd1[l][d].data[k];
                    let zdd = self.zd2[l][d].data[k];
                    let g1 = a1_bar[d].data[k];
                    let g2 = a2_bar[d].data[k];
                    zb += g1 * s2 * zd + g2 * (s3 * zd * zd + s2 * zdd);
                    z1_bar[d].data[k] = g1 * s1 + 2.0 * g2 * s2 * zd;
                    z2_bar[d].data[k] = g2 * s1;
                }
                z_bar.data[k] = zb;
            }
            accumulate(&mut grad.layers[l], &z_bar, &z1_bar, &z2_bar, &self.acts[l], &self.d1[l], &self.d2[l], l == 0);
            if l > 0 {
                let w = &params.layers[l].w;
                a_bar = propagate(&z_bar, w);
                a1_bar = z1_bar.iter().map(|m| propagate(m, w)).collect();
                a2_bar = z2_bar.iter().map(|m| propagate(m, w)).collect();
            }
        }
        Ok(grad)
    }
}

fn propagate(z_bar: &Matrix, w: &Matrix) -> Matrix {
    let mut a = Matrix::zeros(z_bar.rows, w.cols);
    gemm(1.0, z_bar, false, w, false, 0.0, &mut a);
    a
}

#[allow(clippy::too_many_arguments)]
fn accumulate(
    g: &mut super::Layer,
    z_bar: &Matrix,
    z1_bar: &[Matrix],
    z2_bar: &[Matrix],
    a: &Matrix,
    a1: &[Matrix],
    a2: &[Matrix],
    input_layer: bool,
) {
    gemm(1.0, z_bar, true, a, false, 1.0, &mut g.w);
    for d in 0..z1_bar.len() {
        gemm(1.0, &z1_bar[d], true, &a1[d], false, 1.0, &mut g.w);
        if !input_layer {
            gemm(1.0, &z2_bar[d], true, &a2[d], false, 1.0, &mut g.w);
        }
    }
    for r in 0..z_bar.rows {
        for (b, v) in g.b.iter_mut().zip(z_bar.row(r)) {
            *b += v;
        }
    }
}
