use alloc::vec;
use alloc::vec::Vec;

use super::data::{OrderField, OrderValues, TrainingData};
use super::loss::{
    apply_q_block, breakdown, effective_output, gradient, residuals, Fields, LossBreakdown, Prepared, State,
};
use super::{DeepONetModel, OperatorError};
use crate::fracops::{CaputoStencil, OrderRange, Regime};
use crate::neuralnet::{gemm, AdamState, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Re-solve the effective output layer by least squares every epoch.
    pub ls_output: bool,
    /// Epochs between order updates in inverse runs.
    pub order_update_every: usize,
    /// Inverse runs first fit the observations alone for this many epochs
    /// (residual weight zero) before the orders start moving.
    pub inverse_warmup: usize,
    /// Training stops as diverged once the loss exceeds this multiple of the first loss.
    pub divergence_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 1500, lr: 3e-3, ls_output: true, order_update_every: 10, inverse_warmup: 0, divergence_factor: 1e8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Loss at the start of each epoch (after the output refit).
    pub history: Vec<LossBreakdown>,
    pub final_loss: LossBreakdown,
    pub epochs_run: usize,
}

/// Unknown order `alpha`, one value per level `n = 1..=N` and per row (one
/// shared row, or one per collocation line), stored unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseOrderParams {
    pub range: OrderRange,
    rows: usize,
    steps: usize,
    pub raw: Vec<f64>,
}

impl InverseOrderParams {
    pub fn new(range: OrderRange, rows: usize, steps: usize, initial: f64) -> Result<Self, OperatorError> {
        range.check(initial)?;
        if rows == 0 || steps == 0 {
            return Err(OperatorError::Contract("inverse orders need at least one row and one level"));
        }
        Ok(Self { range, rows, steps, raw: vec![range.unsquash(initial); rows * steps] })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Order at level `n >= 1`.
    pub fn order(&self, row: usize, n: usize) -> f64 {
        self.range.squash(self.raw[row * self.steps + n - 1])
    }

    pub fn set_order(&mut self, row: usize, n: usize, order: f64) {
        self.raw[row * self.steps + n - 1] = self.range.unsquash(order);
    }

    /// Orders of one row on levels `0..=N`, level 0 repeating level 1.
    pub fn orders(&self, row: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (1..=self.steps).map(|n| self.order(row, n)).collect();
        v.insert(0, v[0]);
        v
    }

    pub fn values(&self) -> OrderValues {
        let data = (0..self.rows).flat_map(|r| self.orders(r)).collect();
        OrderValues::new(Regime::Subdiffusive, self.rows, self.steps + 1, data).expect("shape is consistent")
    }

    fn field(&self, template: &OrderField) -> OrderField {
        OrderField { alpha: self.values(), ..template.clone() }
    }
}

/// Adam on all parameters for a problem with known constant orders.
pub fn train_fixed_order(
    model: &mut DeepONetModel,
    samples: &[f64],
    data: &TrainingData,
    orders: &OrderField,
    config: &TrainConfig,
) -> Result<TrainOutcome, OperatorError> {
    let constant = |v: &OrderValues| (0..v.rows()).all(|r| v.row(r).iter().all(|&a| a == v.row(0)[0]));
    if !constant(&orders.alpha) || !orders.beta.as_ref().is_none_or(constant) {
        return Err(OperatorError::Contract("fixed-order training needs constant orders"));
    }
    run(model, samples.to_vec(), data, orders.clone(), config, None)
}

/// As [`train_fixed_order`] for known orders varying in time (and space).
pub fn train_variable_order(
    model: &mut DeepONetModel,
    samples: &[f64],
    data: &TrainingData,
    orders: &OrderField,
    config: &TrainConfig,
) -> Result<TrainOutcome, OperatorError> {
    run(model, samples.to_vec(), data, orders.clone(), config, None)
}

/// Jointly fits the network and an unknown `alpha`. Every
/// `order_update_every` epochs each order value is set to the exact minimizer
/// of the residual loss with the network frozen (after `inverse_warmup`
/// epochs on the observations alone); `branch_input` maps the
/// current estimate to the branch samples.
pub fn train_inverse_order(
    model: &mut DeepONetModel,
    data: &TrainingData,
    template: &OrderField,
    params: &mut InverseOrderParams,
    branch_input: &dyn Fn(&InverseOrderParams) -> Vec<f64>,
    config: &TrainConfig,
) -> Result<TrainOutcome, OperatorError> {
    if params.steps + 1 != data.set.time.len() || !(params.rows == 1 || params.rows == data.set.len()) {
        return Err(OperatorError::Contract("inverse order shape does not match the collocation set"));
    }
    let orders = params.field(template);
    run(model, branch_input(params), data, orders, config, Some((params, branch_input)))
}

/// Gradient of the residual loss with respect to `params.raw`.
pub fn inverse_order_gradient(
    model: &DeepONetModel,
    samples: &[f64],
    data: &TrainingData,
    template: &OrderField,
    params: &InverseOrderParams,
) -> Result<Vec<f64>, OperatorError> {
    let prep = Prepared::new(model, data, &params.field(template))?;
    let (fields, resid) = evaluate(model, samples, &prep, data)?;
    let nt = data.set.time.len();
    let tau = data.set.time.tau();
    let scale = if prep.n_res == 0 { 0.0 } else { 2.0 * template.k1 / prep.n_res as f64 };
    let mut g = vec![0.0; params.raw.len()];
    for r in 0..params.rows {
        for n in 1..=params.steps {
            let a = params.order(r, n);
            let st = CaputoStencil::l1(a, n, tau)?;
            let s = (a - params.range.lo()) / (params.range.hi() - params.range.lo());
            let dsquash = (params.range.hi() - params.range.lo()) * s * (1.0 - s);
            let mut acc = 0.0;
            for j in lines_of(params, data, r) {
                acc += resid.get(j, n) * st.order_sensitivity(&fields.u[j * nt..(j + 1) * nt], n, 0.0);
            }
            g[r * params.steps + n - 1] = scale * acc * dsquash;
        }
    }
    Ok(g)
}

fn lines_of(params: &InverseOrderParams, data: &TrainingData, row: usize) -> Vec<usize> {
    let set = &data.set;
    if params.rows == 1 {
        (0..set.len()).filter(|&j| set.interior[j]).collect()
    } else if set.interior[row] {
        vec![row]
    } else {
        Vec::new()
    }
}

fn evaluate(
    model: &DeepONetModel,
    samples: &[f64],
    prep: &Prepared,
    data: &TrainingData,
) -> Result<(Fields, Matrix), OperatorError> {
    let state = State::new(model, samples, prep)?;
    let (w, c) = effective_output(model, &state.b);
    let fields = Fields::new(&state, &w, c);
    let resid = residuals(prep, data, &fields);
    Ok((fields, resid))
}

type Inverse<'a> = (&'a mut InverseOrderParams, &'a dyn Fn(&InverseOrderParams) -> Vec<f64>);

fn run(
    model: &mut DeepONetModel,
    mut samples: Vec<f64>,
    data: &TrainingData,
    mut orders: OrderField,
    config: &TrainConfig,
    mut inverse: Option<Inverse<'_>>,
) -> Result<TrainOutcome, OperatorError> {
    if !(config.lr > 0.0) {
        return Err(OperatorError::Contract("learning rate must be positive"));
    }
    let mut prep = Prepared::new(model, data, &orders)?;
    let mut history = Vec::with_capacity(config.epochs);
    let mut adam = AdamState::with_lr(model.param_count(), config.lr);
    let every = config.order_update_every.max(1);
    let warmup = if inverse.is_some() { config.inverse_warmup } else { 0 };
    if warmup > 0 {
        prep.res_weight = 0.0;
    }
    for epoch in 0..config.epochs {
        if let Some((params, branch_input)) = inverse.as_mut() {
            if epoch > 0 && epoch >= warmup && (epoch - warmup) % every == 0 {
                if config.ls_output {
                    let state = State::new(model, &samples, &prep)?;
                    refit_output(model, &prep, data, &state)?;
                }
                update_orders(model, &samples, &prep, data, params, orders.k1)?;
                orders = params.field(&orders);
                samples = branch_input(params);
                prep = Prepared::new(model, data, &orders)?;
            }
        }
        let state = State::new(model, &samples, &prep)?;
        if config.ls_output {
            refit_output(model, &prep, data, &state)?;
        }
        let (w, c) = effective_output(model, &state.b);
        let fields = Fields::new(&state, &w, c);
        let resid = residuals(&prep, data, &fields);
        let loss = breakdown(&prep, data, &fields, &resid);
        history.push(loss);
        let limit = config.divergence_factor * history[0].total.max(f64::MIN_POSITIVE);
        if !loss.is_finite() || loss.total > limit {
            return Err(OperatorError::Diverged { epoch, history });
        }
        let grad = gradient(model, &prep, data, &state, &fields, &resid)?;
        let mut theta = model.flatten();
        if adam.step(&mut theta, &grad).is_err() {
            return Err(OperatorError::Diverged { epoch, history });
        }
        model.assign(&theta)?;
    }
    if config.epochs > 0 {
        if let Some((params, branch_input)) = inverse.as_mut() {
            if config.ls_output {
                let state = State::new(model, &samples, &prep)?;
                refit_output(model, &prep, data, &state)?;
            }
            update_orders(model, &samples, &prep, data, params, orders.k1)?;
            orders = params.field(&orders);
            samples = branch_input(params);
            prep = Prepared::new(model, data, &orders)?;
        }
        if config.ls_output {
            let state = State::new(model, &samples, &prep)?;
            refit_output(model, &prep, data, &state)?;
        }
    }
    let (fields, resid) = evaluate(model, &samples, &prep, data)?;
    let final_loss = breakdown(&prep, data, &fields, &resid);
    if !final_loss.is_finite() {
        return Err(OperatorError::Diverged { epoch: config.epochs, history });
    }
    Ok(TrainOutcome { epochs_run: history.len(), history, final_loss })
}

/// Weight of the smoothness penalty relative to the squared field size. It only
/// matters at levels where the field is too small to pin the order down.
const SMOOTHING: f64 = 1e-6;

/// Moves every order value to the minimizer of its share of the residual loss,
/// then blends in a small penalty on jumps between neighbouring levels. Each
/// level enters through its own minimizer weighted by the Gauss-Newton
/// curvature, so the blend is a single tridiagonal solve per row.
fn update_orders(
    model: &DeepONetModel,
    samples: &[f64],
    prep: &Prepared,
    data: &TrainingData,
    params: &mut InverseOrderParams,
    k1: f64,
) -> Result<(), OperatorError> {
    let (fields, resid) = evaluate(model, samples, prep, data)?;
    let nt = data.set.time.len();
    let tau = data.set.time.tau();
    let range = params.range;
    let margin = 1e-9 * (range.hi() - range.lo());
    let (lo, hi) = (range.lo() + margin, range.hi() - margin);
    for r in 0..params.rows {
        let lines = lines_of(params, data, r);
        if lines.is_empty() {
            continue;
        }
        let hist: Vec<&[f64]> = lines.iter().map(|&j| &fields.u[j * nt..(j + 1) * nt]).collect();
        // Curvatures come from the observed field when there is one, so that
        // fitting noise in the network cannot fake sensitivity at early levels.
        let observed: Vec<&[f64]> = match &data.observations {
            Some(o) => lines.iter().map(|&j| &o.data[j * nt..(j + 1) * nt]).collect(),
            None => hist.clone(),
        };
        let mut target = Vec::with_capacity(params.steps);
        let mut weight = Vec::with_capacity(params.steps);
        for n in 1..=params.steps {
            let current = CaputoStencil::l1(params.order(r, n), n, tau)?;
            let rest: Vec<f64> =
                lines.iter().zip(&hist).map(|(&j, h)| resid.get(j, n) - k1 * current.apply(h, n, 0.0)).collect();
            let term = |a: f64, on: &[&[f64]]| -> Vec<f64> {
                let st = CaputoStencil::l1(a, n, tau).expect("candidate lies inside (0, 1)");
                on.iter().map(|h| k1 * st.apply(h, n, 0.0)).collect()
            };
            let fit = |a: f64| -> f64 { rest.iter().zip(term(a, &hist)).map(|(q, v)| (q + v) * (q + v)).sum() };
            let best = minimize_scalar(fit, lo, hi);
            let h = 1e-5_f64.min(0.5 * (best - lo)).min(0.5 * (hi - best));
            let (up, down) = (term(best + h, &observed), term(best - h, &observed));
            weight.push(up.iter().zip(&down).map(|(p, m)| (p - m) / (2.0 * h)).map(|d| d * d).sum::<f64>());
            target.push(best);
        }
        let scale = observed.iter().map(|h| h.iter().fold(0.0_f64, |m, v| m.max(v * v))).sum::<f64>();
        let lambda = SMOOTHING * scale;
        for (n, a) in smooth(&target, &weight, lambda).into_iter().enumerate() {
            params.set_order(r, n + 1, a.clamp(lo, hi));
        }
    }
    Ok(())
}

/// Minimizes `sum w_i (a_i - y_i)^2 + lambda sum (a_{i+1} - a_i)^2` with the Thomas algorithm.
fn smooth(y: &[f64], w: &[f64], lambda: f64) -> Vec<f64> {
    let n = y.len();
    if n == 0 || lambda <= 0.0 {
        return y.to_vec();
    }
    let diag = |i: usize| w[i] + lambda * (usize::from(i > 0) + usize::from(i + 1 < n)) as f64;
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag(0);
    c[0] = -lambda / denom;
    d[0] = w[0] * y[0] / denom;
    for i in 1..n {
        denom = diag(i) + lambda * c[i - 1];
        c[i] = -lambda / denom;
        d[i] = (w[i] * y[i] + lambda * d[i - 1]) / denom;
    }
    let mut a = d;
    for i in (0..n - 1).rev() {
        let next = a[i + 1];
        a[i] -= c[i] * next;
    }
    a
}

/// Grid search over the open interval followed by golden-section refinement.
fn minimize_scalar(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    const GRID: usize = 24;
    let margin = 1e-9 * (hi - lo);
    let (lo, hi) = (lo + margin, hi - margin);
    let at = |k: usize| lo + (hi - lo) * (k as f64 + 0.5) / GRID as f64;
    let best = (0..GRID).map(|k| (k, f(at(k)))).fold((0, f64::INFINITY), |acc, v| if v.1 < acc.1 { v } else { acc }).0;
    let mut a = if best == 0 { lo } else { at(best - 1) };
    let mut b = if best + 1 == GRID { hi } else { at(best + 1) };
    let g = 0.5 * (libm::sqrt(5.0) - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
        if b - a < 1e-13 {
            break;
        }
    }
    0.5 * (a + b)
}

/// Normal equations `A theta = y` of the weighted linear least-squares problem
/// in the effective output layer `theta = (w, c)`.
struct Normal {
    a: Matrix,
    y: Vec<f64>,
}

impl Normal {
    fn add(&mut self, rows: &Matrix, rhs: &[f64], weight: f64) {
        if rows.rows == 0 {
            return;
        }
        gemm(weight, rows, true, rows, false, 1.0, &mut self.a);
        for (r, &t) in rhs.iter().enumerate() {
            for (yi, ri) in self.y.iter_mut().zip(rows.row(r)) {
                *yi += weight * ri * t;
            }
        }
    }

    fn add_plain(&mut self, features: &Matrix, values: &[f64]) {
        let n = self.y.len();
        let mut rows = Matrix::zeros(features.rows, n);
        for r in 0..features.rows {
            rows.row_mut(r)[..n - 1].copy_from_slice(features.row(r));
            rows.set(r, n - 1, 1.0);
        }
        self.add(&rows, values, 1.0 / values.len() as f64);
    }
}

fn refit_output(
    model: &mut DeepONetModel,
    prep: &Prepared,
    data: &TrainingData,
    state: &State,
) -> Result<(), OperatorError> {
    let set = &data.set;
    let nt = set.time.len();
    let feats = state.line.features();
    let width = feats.cols;
    let n = width + 1;
    let mut ne = Normal { a: Matrix::zeros(n, n), y: vec![0.0; n] };
    let nd = prep.dirs.len();
    if prep.n_res > 0 && prep.res_weight > 0.0 {
        for j in (0..set.len()).filter(|&j| set.interior[j]) {
            let h = Matrix::from_vec(nt, width, feats.data[j * nt * width..(j + 1) * nt * width].to_vec());
            let q = prep.ops.q(j);
            let qh = apply_q_block(q, &h);
            let sc = prep.ops.slope(j);
            let mut rows = Matrix::zeros(nt - 1, n);
            let mut rhs = vec![0.0; nt - 1];
            for m in 1..nt {
                let row = rows.row_mut(m - 1);
                row[..width].copy_from_slice(qh.row(m));
                for d in 0..nd {
                    for (x, hd) in row[..width].iter_mut().zip(state.line.features_d2(d).row(j * nt + m)) {
                        *x -= hd;
                    }
                }
                row[width] = q.row(m).iter().sum();
                rhs[m - 1] = data.forcing.get(j, m) - sc[m] * data.slope[j];
            }
            ne.add(&rows, &rhs, prep.res_weight / prep.n_res as f64);
        }
    }
    if let Some(t) = &state.ic {
        ne.add_plain(t.features(), &data.initial.values);
    }
    if data.slope_condition {
        let tau = set.time.tau();
        let mut rows = Matrix::zeros(set.len(), n);
        for j in 0..set.len() {
            let (h0, h1) = (feats.row(j * nt), feats.row(j * nt + 1));
            for (x, (a, b)) in rows.row_mut(j).iter_mut().zip(h1.iter().zip(h0)) {
                *x = (a - b) / tau;
            }
        }
        ne.add(&rows, &data.slope, 1.0 / set.len() as f64);
    }
    if let Some(t) = &state.bc {
        ne.add_plain(t.features(), &data.boundary.values);
    }
    if let Some(obs) = &data.observations {
        ne.add_plain(feats, &obs.data);
    }
    let theta = solve_spd(&ne.a, &ne.y)?;
    set_effective_output(model, &state.b, &theta[..width], theta[width])
}

/// Cholesky solve with a small relative ridge, enlarged on breakdown.
fn solve_spd(a: &Matrix, y: &[f64]) -> Result<Vec<f64>, OperatorError> {
    let n = y.len();
    let trace: f64 = (0..n).map(|i| a.get(i, i)).sum();
    if !(trace > 0.0) || !a.is_finite() {
        return Err(OperatorError::Singular);
    }
    let mut ridge = 1e-12 * trace / n as f64;
    for _ in 0..6 {
        if let Some(x) = cholesky_solve(a, y, ridge) {
            return Ok(x);
        }
        ridge *= 1e3;
    }
    Err(OperatorError::Singular)
}

fn cholesky_solve(a: &Matrix, y: &[f64], ridge: f64) -> Option<Vec<f64>> {
    let n = y.len();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j) + if i == j { ridge } else { 0.0 };
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l.set(i, i, libm::sqrt(s));
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    let mut z = y.to_vec();
    for i in 0..n {
        for k in 0..i {
            z[i] -= l.get(i, k) * z[k];
        }
        z[i] /= l.get(i, i);
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            z[i] -= l.get(k, i) * z[k];
        }
        z[i] /= l.get(i, i);
    }
    z.iter().all(|v| v.is_finite()).then_some(z)
}

/// Minimal-norm edit of the trunk output layer giving effective weights `(w, c)`.
fn set_effective_output(model: &mut DeepONetModel, b: &[f64], w: &[f64], c: f64) -> Result<(), OperatorError> {
    let nb: f64 = b.iter().map(|v| v * v).sum();
    if !(nb > 1e-300) {
        return Err(OperatorError::Singular);
    }
    let (w_cur, c_cur) = effective_output(model, b);
    let last = model.trunk.layers.last_mut().expect("trunk has an output layer");
    for (o, bo) in b.iter().enumerate() {
        let k = bo / nb;
        for (x, (wn, wc)) in last.w.row_mut(o).iter_mut().zip(w.iter().zip(&w_cur)) {
            *x += k * (wn - wc);
        }
        last.b[o] += k * (c - c_cur);
    }
    Ok(())
}
