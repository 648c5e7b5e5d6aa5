use alloc::vec;
use alloc::vec::Vec;

use super::data::{CollocationSet, OrderField, OrderValues, TrainingData};
use super::{DeepONetModel, Domain, OperatorError};
use crate::fracops::CaputoStencil;
use crate::neuralnet::{forward_batch, gemm, BatchTape, Matrix, ParameterSet, StreamAdjoints};

/// Mean-squared loss terms; `total` is always their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub res: f64,
    pub ic: f64,
    pub bc: f64,
    pub data: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(res: f64, ic: f64, bc: f64, data: f64) -> Self {
        Self { res, ic, bc, data, total: res + ic + bc + data }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// Time-quadrature operator of every line: lower-triangular `Q` with
/// `(K1 D^alpha + K2 D^beta) u (t_n) ~ (Q u)_n + s_n phi1`.
#[derive(Debug, Clone)]
pub(crate) struct LineOperators {
    q: Vec<Matrix>,
    sc: Vec<Vec<f64>>,
}

impl LineOperators {
    pub(crate) fn build(orders: &OrderField, set: &CollocationSet) -> Result<Self, OperatorError> {
        let nt = set.time.len();
        let tau = set.time.tau();
        let rows = if orders.is_shared() { 1 } else { set.len() };
        let mut q = Vec::with_capacity(rows);
        let mut sc = Vec::with_capacity(rows);
        let mut buf = vec![0.0; nt];
        for r in 0..rows {
            let mut qm = Matrix::zeros(nt, nt);
            let mut s = vec![0.0; nt];
            let mut terms = vec![(orders.k1, &orders.alpha)];
            if let Some(b) = &orders.beta {
                terms.push((orders.k2, b));
            }
            for (coef, values) in terms {
                add_term(&mut qm, &mut s, &mut buf, coef, values, r, tau)?;
            }
            q.push(qm);
            sc.push(s);
        }
        Ok(Self { q, sc })
    }

    #[inline]
    fn row(&self, j: usize) -> usize {
        if self.q.len() == 1 { 0 } else { j }
    }

    pub(crate) fn q(&self, j: usize) -> &Matrix {
        &self.q[self.row(j)]
    }

    pub(crate) fn slope(&self, j: usize) -> &[f64] {
        &self.sc[self.row(j)]
    }

    pub(crate) fn apply(&self, j: usize, hist: &[f64], n: usize, phi1: f64) -> f64 {
        let q = self.q(j);
        q.row(n)[..=n].iter().zip(hist).map(|(a, b)| a * b).sum::<f64>() + self.slope(j)[n] * phi1
    }
}

fn add_term(
    q: &mut Matrix,
    s: &mut [f64],
    buf: &mut [f64],
    coef: f64,
    values: &OrderValues,
    line: usize,
    tau: f64,
) -> Result<(), OperatorError> {
    let nt = q.rows;
    let first = values.at(line, 1);
    let constant = (2..nt).all(|n| values.at(line, n) == first);
    let shared = if constant { Some(CaputoStencil::for_regime(values.regime, first, nt - 1, tau)?) } else { None };
    for n in 1..nt {
        let local;
        let st = match &shared {
            Some(st) => st,
            None => {
                local = CaputoStencil::for_regime(values.regime, values.at(line, n), n, tau)?;
                &local
            }
        };
        st.row_into(n, buf);
        for (qk, bk) in q.row_mut(n)[..=n].iter_mut().zip(&buf[..=n]) {
            *qk += coef * bk;
        }
        s[n] += coef * st.slope_coeff(n);
    }
    Ok(())
}

fn normalized(domain: &Domain, points: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(points.rows, points.cols);
    for r in 0..points.rows {
        domain.normalize_into(points.row(r), out.row_mut(r));
    }
    out
}

/// Trunk inputs and operators fixed for a training run.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub(crate) ops: LineOperators,
    pub(crate) dirs: Vec<(usize, f64)>,
    pub(crate) line_inputs: Matrix,
    pub(crate) ic_inputs: Matrix,
    pub(crate) bc_inputs: Matrix,
    pub(crate) n_res: usize,
    /// Weight of the residual term in the optimized objective (the reported loss is unweighted).
    pub(crate) res_weight: f64,
}

impl Prepared {
    pub(crate) fn new(model: &DeepONetModel, data: &TrainingData, orders: &OrderField) -> Result<Self, OperatorError> {
        let set = &data.set;
        let d = set.spatial_dim;
        if model.domain.spatial_dim != d {
            return Err(OperatorError::Contract("model and data have different spatial dimensions"));
        }
        let nt = set.time.len();
        let mut raw = Matrix::zeros(set.len() * nt, d + 1);
        for j in 0..set.len() {
            for n in 0..nt {
                let row = raw.row_mut(j * nt + n);
                row[..d].copy_from_slice(set.point(j));
                row[d] = set.time.t(n);
            }
        }
        let scale = model.domain.space_scale();
        Ok(Self {
            ops: LineOperators::build(orders, set)?,
            dirs: (0..d).map(|k| (k, scale)).collect(),
            line_inputs: normalized(&model.domain, &raw),
            ic_inputs: normalized(&model.domain, &data.initial.points),
            bc_inputs: normalized(&model.domain, &data.boundary.points),
            n_res: set.interior_count() * (nt - 1),
            res_weight: 1.0,
        })
    }
}

/// One forward evaluation. The trunk features do not depend on the trunk
/// output layer, so predictions can be recomputed after editing it.
pub(crate) struct State {
    pub(crate) b: Vec<f64>,
    pub(crate) branch: BatchTape,
    pub(crate) line: BatchTape,
    pub(crate) ic: Option<BatchTape>,
    pub(crate) bc: Option<BatchTape>,
}

impl State {
    pub(crate) fn new(model: &DeepONetModel, samples: &[f64], prep: &Prepared) -> Result<Self, OperatorError> {
        if samples.len() != model.sensors.len() {
            return Err(crate::neuralnet::NeuralError::DimensionMismatch {
                expected: model.sensors.len(),
                found: samples.len(),
            }
            .into());
        }
        let branch = forward_batch(&model.branch, &model.branch_config, &Matrix::from_vec(1, samples.len(), samples.to_vec()), &[])?;
        let b = branch.output().row(0).to_vec();
        let line = forward_batch(&model.trunk, &model.trunk_config, &prep.line_inputs, &prep.dirs)?;
        let plain = |m: &Matrix| -> Result<Option<BatchTape>, OperatorError> {
            if m.rows == 0 {
                Ok(None)
            } else {
                Ok(Some(forward_batch(&model.trunk, &model.trunk_config, m, &[])?))
            }
        };
        Ok(Self { b, branch, line, ic: plain(&prep.ic_inputs)?, bc: plain(&prep.bc_inputs)? })
    }
}

/// `u = w . h + c` in terms of the last hidden features `h`.
pub(crate) fn effective_output(model: &DeepONetModel, b: &[f64]) -> (Vec<f64>, f64) {
    let last = model.trunk.layers.last().expect("trunk has an output layer");
    let mut w = vec![0.0; last.w.cols];
    for (o, bo) in b.iter().enumerate() {
        for (wi, x) in w.iter_mut().zip(last.w.row(o)) {
            *wi += bo * x;
        }
    }
    (w, b.iter().zip(&last.b).map(|(x, y)| x * y).sum())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Predictions on lines (`j * nt + n` layout), their Laplacian and the anchors.
pub(crate) struct Fields {
    pub(crate) u: Vec<f64>,
    pub(crate) lap: Vec<f64>,
    pub(crate) u_ic: Vec<f64>,
    pub(crate) u_bc: Vec<f64>,
}

impl Fields {
    pub(crate) fn new(state: &State, w: &[f64], c: f64) -> Self {
        let predict = |t: &BatchTape| (0..t.batch_size()).map(|r| dot(t.features().row(r), w) + c).collect::<Vec<_>>();
        let nd = state.line.directions().len();
        let lap = (0..state.line.batch_size())
            .map(|r| (0..nd).map(|d| dot(state.line.features_d2(d).row(r), w)).sum())
            .collect();
        Self {
            u: predict(&state.line),
            lap,
            u_ic: state.ic.as_ref().map(predict).unwrap_or_default(),
            u_bc: state.bc.as_ref().map(predict).unwrap_or_default(),
        }
    }
}

/// Residual `(Q u)_n + s_n phi1 - lap - f` on interior lines for `n >= 1`, zero elsewhere.
pub(crate) fn residuals(prep: &Prepared, data: &TrainingData, fields: &Fields) -> Matrix {
    let set = &data.set;
    let nt = set.time.len();
    let mut r = Matrix::zeros(set.len(), nt);
    for j in (0..set.len()).filter(|&j| set.interior[j]) {
        let hist = &fields.u[j * nt..(j + 1) * nt];
        for n in 1..nt {
            let v = prep.ops.apply(j, hist, n, data.slope[j]) - fields.lap[j * nt + n] - data.forcing.get(j, n);
            r.set(j, n, v);
        }
    }
    r
}

fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn slope_misfit(data: &TrainingData, fields: &Fields, j: usize) -> f64 {
    let nt = data.set.time.len();
    (fields.u[j * nt + 1] - fields.u[j * nt]) / data.set.time.tau() - data.slope[j]
}

pub(crate) fn breakdown(prep: &Prepared, data: &TrainingData, fields: &Fields, resid: &Matrix) -> LossBreakdown {
    let res = if prep.n_res == 0 { 0.0 } else { resid.data.iter().map(|r| r * r).sum::<f64>() / prep.n_res as f64 };
    let mut ic = mean_sq_diff(&fields.u_ic, &data.initial.values);
    if data.slope_condition {
        let p = data.set.len();
        ic += (0..p).map(|j| slope_misfit(data, fields, j)).map(|m| m * m).sum::<f64>() / p as f64;
    }
    let bc = mean_sq_diff(&fields.u_bc, &data.boundary.values);
    let dl = data.observations.as_ref().map_or(0.0, |o| mean_sq_diff(&fields.u, &o.data));
    LossBreakdown::new(res, ic, bc, dl)
}

/// Gradient of the total loss, branch parameters first.
pub(crate) fn gradient(
    model: &DeepONetModel,
    prep: &Prepared,
    data: &TrainingData,
    state: &State,
    fields: &Fields,
    resid: &Matrix,
) -> Result<Vec<f64>, OperatorError> {
    let set = &data.set;
    let nt = set.time.len();
    let rows = set.len() * nt;
    let mut u_bar = vec![0.0; rows];
    let mut lap_bar = vec![0.0; rows];
    if prep.n_res > 0 && prep.res_weight > 0.0 {
        let k = 2.0 * prep.res_weight / prep.n_res as f64;
        for j in (0..set.len()).filter(|&j| set.interior[j]) {
            let q = prep.ops.q(j);
            let r = resid.row(j);
            for n in 1..nt {
                let rn = k * r[n];
                lap_bar[j * nt + n] = -rn;
                for (ub, qk) in u_bar[j * nt..j * nt + n + 1].iter_mut().zip(&q.row(n)[..=n]) {
                    *ub += rn * qk;
                }
            }
        }
    }
    if data.slope_condition {
        let p = set.len();
        for j in 0..p {
            let g = 2.0 * slope_misfit(data, fields, j) / (p as f64 * set.time.tau());
            u_bar[j * nt + 1] += g;
            u_bar[j * nt] -= g;
        }
    }
    if let Some(obs) = &data.observations {
        let k = 2.0 / rows as f64;
        for (ub, (u, o)) in u_bar.iter_mut().zip(fields.u.iter().zip(&obs.data)) {
            *ub += k * (u - o);
        }
    }
    let anchor_bar = |u: &[f64], v: &[f64]| -> Vec<f64> {
        let k = 2.0 / u.len().max(1) as f64;
        u.iter().zip(v).map(|(a, b)| k * (a - b)).collect()
    };
    let ic_bar = anchor_bar(&fields.u_ic, &data.initial.values);
    let bc_bar = anchor_bar(&fields.u_bc, &data.boundary.values);

    let q = model.latent();
    let b = &state.b;
    let width = state.line.features().cols;
    // Adjoint of the effective output: g_h = sum_r u_bar_r h_r (+ Laplacian streams), g_c = sum_r u_bar_r.
    let mut g_h = vec![0.0; width];
    let mut g_c = 0.0;
    let mut trunk_grad: Option<ParameterSet> = None;
    let mut add = |tape: &BatchTape, value_bar: &[f64], lap_bar: Option<&[f64]>| -> Result<(), OperatorError> {
        let n = tape.batch_size();
        let nd = tape.directions().len();
        let mut adj = StreamAdjoints::zeros(n, q, nd);
        for r in 0..n {
            let vb = value_bar[r];
            g_c += vb;
            for (g, h) in g_h.iter_mut().zip(tape.features().row(r)) {
                *g += vb * h;
            }
            for (a, bo) in adj.value.row_mut(r).iter_mut().zip(b) {
                *a = vb * bo;
            }
            if let Some(lb) = lap_bar {
                let l = lb[r];
                for d in 0..nd {
                    for (g, h) in g_h.iter_mut().zip(tape.features_d2(d).row(r)) {
                        *g += l * h;
                    }
                    for (a, bo) in adj.d2[d].row_mut(r).iter_mut().zip(b) {
                        *a = l * bo;
                    }
                }
            }
        }
        let g = tape.backward(&model.trunk, &adj)?;
        match &mut trunk_grad {
            None => trunk_grad = Some(g),
            Some(acc) => {
                for (la, lg) in acc.layers.iter_mut().zip(&g.layers) {
                    la.w.data.iter_mut().zip(&lg.w.data).for_each(|(x, y)| *x += y);
                    la.b.iter_mut().zip(&lg.b).for_each(|(x, y)| *x += y);
                }
            }
        }
        Ok(())
    };
    add(&state.line, &u_bar, Some(&lap_bar))?;
    if let Some(t) = &state.ic {
        add(t, &ic_bar, None)?;
    }
    if let Some(t) = &state.bc {
        add(t, &bc_bar, None)?;
    }
    let trunk_grad = trunk_grad.expect("line tape always contributes");

    // b_bar = W_L g_h + c g_c.
    let last = model.trunk.layers.last().expect("trunk has an output layer");
    let mut adj_b = StreamAdjoints::zeros(1, q, 0);
    for o in 0..q {
        adj_b.value.set(0, o, dot(last.w.row(o), &g_h) + last.b[o] * g_c);
    }
    let branch_grad = state.branch.backward(&model.branch, &adj_b)?;
    let mut flat = branch_grad.flatten();
    flat.extend(trunk_grad.flatten());
    Ok(flat)
}

#[cfg(test)]
/// Loss and gradient at the model's current parameters.
pub(crate) fn loss_and_gradient(
    model: &DeepONetModel,
    samples: &[f64],
    prep: &Prepared,
    data: &TrainingData,
) -> Result<(LossBreakdown, Vec<f64>), OperatorError> {
    let state = State::new(model, samples, prep)?;
    let (w, c) = effective_output(model, &state.b);
    let fields = Fields::new(&state, &w, c);
    let resid = residuals(prep, data, &fields);
    let loss = breakdown(prep, data, &fields, &resid);
    let grad = gradient(model, prep, data, &state, &fields, &resid)?;
    Ok((loss, grad))
}

/// All loss terms of `model` on `data`.
pub fn evaluate_losses(
    model: &DeepONetModel,
    samples: &[f64],
    data: &TrainingData,
    orders: &OrderField,
) -> Result<LossBreakdown, OperatorError> {
    let prep = Prepared::new(model, data, orders)?;
    let state = State::new(model, samples, &prep)?;
    let (w, c) = effective_output(model, &state.b);
    let fields = Fields::new(&state, &w, c);
    let resid = residuals(&prep, data, &fields);
    Ok(breakdown(&prep, data, &fields, &resid))
}

/// Mean squared equation residual over interior lines and levels `n >= 1`.
pub fn residual_loss(
    model: &DeepONetModel,
    samples: &[f64],
    data: &TrainingData,
    orders: &OrderField,
) -> Result<f64, OperatorError> {
    Ok(evaluate_losses(model, samples, data, orders)?.res)
}

/// Mean squared misfit at arbitrary points `(x.., t)`; zero for no points.
pub fn data_loss(model: &DeepONetModel, samples: &[f64], points: &Matrix, values: &[f64]) -> Result<f64, OperatorError> {
    if points.rows != values.len() {
        return Err(OperatorError::Contract("one value per point"));
    }
    if points.rows == 0 {
        return Ok(0.0);
    }
    Ok(mean_sq_diff(&model.predict(samples, points)?, values))
}

/// `(L_bc, L_ic)`, the initial term including the slope condition when present.
pub fn boundary_and_initial_losses(
    model: &DeepONetModel,
    samples: &[f64],
    data: &TrainingData,
    orders: &OrderField,
) -> Result<(f64, f64), OperatorError> {
    let l = evaluate_losses(model, samples, data, orders)?;
    Ok((l.bc, l.ic))
}

/// `||pred - truth||_2 / ||truth||_2`.
pub fn relative_l2_error(pred: &[f64], truth: &[f64]) -> Result<f64, OperatorError> {
    if pred.len() != truth.len() {
        return Err(OperatorError::Contract("prediction and reference lengths differ"));
    }
    let den: f64 = truth.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(OperatorError::ZeroReference);
    }
    let num: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(libm::sqrt(num / den))
}

impl DeepONetModel {
    /// Predictions at every row `(x.., t)` of `points`.
    pub fn predict(&self, samples: &[f64], points: &Matrix) -> Result<Vec<f64>, OperatorError> {
        if points.cols != self.domain.spatial_dim + 1 {
            return Err(crate::neuralnet::NeuralError::DimensionMismatch {
                expected: self.domain.spatial_dim + 1,
                found: points.cols,
            }
            .into());
        }
        let b = self.branch_output(samples)?;
        let tape = forward_batch(&self.trunk, &self.trunk_config, &normalized(&self.domain, points), &[])?;
        let out = tape.output();
        Ok((0..out.rows).map(|r| dot(out.row(r), &b)).collect())
    }
}

/// `Q_j H` for a block of feature rows belonging to line `j`.
pub(crate) fn apply_q_block(q: &Matrix, h: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(q.rows, h.cols);
    gemm(1.0, q, false, h, false, 0.0, &mut out);
    out
}
