use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use super::loss::LineOperators;
use super::{Domain, OperatorError};
use crate::fracops::{FractionalOrderSpec, Regime, TimeGrid};
use crate::neuralnet::{unit_f64, Matrix};

/// Function of a spatial point (possibly empty) and time.
pub type PointFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

fn zero_fn() -> PointFn {
    Arc::new(|_, _| 0.0)
}

/// `K1 D^alpha u + K2 D^beta u = lap u + f` on `[0, L]^d x [0, T]`.
///
/// With `spatial_dim = 0` this is the ODE `K1 D^alpha u (+ K2 D^beta u) = f`.
/// The `K2` term is present exactly when `beta` is.
#[derive(Clone)]
pub struct FractionalPde {
    pub spatial_dim: usize,
    pub length: f64,
    pub horizon: f64,
    pub k1: f64,
    pub k2: f64,
    pub alpha: FractionalOrderSpec,
    pub beta: Option<FractionalOrderSpec>,
    pub forcing: PointFn,
    pub initial_value: PointFn,
    pub initial_slope: PointFn,
    pub boundary: PointFn,
    pub exact: Option<PointFn>,
    pub exact_laplacian: Option<PointFn>,
}

impl fmt::Debug for FractionalPde {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FractionalPde")
            .field("spatial_dim", &self.spatial_dim)
            .field("length", &self.length)
            .field("horizon", &self.horizon)
            .field("k1", &self.k1)
            .field("k2", &self.k2)
            .field("alpha", &self.alpha)
            .field("beta", &self.beta)
            .finish_non_exhaustive()
    }
}

impl FractionalPde {
    /// Single-term problem with zero data; chain the `with_*` setters.
    pub fn new(spatial_dim: usize, length: f64, horizon: f64, alpha: FractionalOrderSpec) -> Self {
        Self {
            spatial_dim,
            length,
            horizon,
            k1: 1.0,
            k2: 0.0,
            alpha,
            beta: None,
            forcing: zero_fn(),
            initial_value: zero_fn(),
            initial_slope: zero_fn(),
            boundary: zero_fn(),
            exact: None,
            exact_laplacian: None,
        }
    }

    pub fn with_coefficients(mut self, k1: f64, k2: f64) -> Self {
        self.k1 = k1;
        self.k2 = k2;
        self
    }

    pub fn with_beta(mut self, beta: FractionalOrderSpec) -> Self {
        self.beta = Some(beta);
        self
    }

    pub fn with_forcing(mut self, f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        self.forcing = Arc::new(f);
        self
    }

    pub fn with_initial(
        mut self,
        value: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
        slope: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.initial_value = Arc::new(value);
        self.initial_slope = Arc::new(slope);
        self
    }

    pub fn with_boundary(mut self, g: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        self.boundary = Arc::new(g);
        self
    }

    /// Manufactured solution and its spatial Laplacian.
    pub fn with_exact(
        mut self,
        u: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
        laplacian: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.exact = Some(Arc::new(u));
        self.exact_laplacian = Some(Arc::new(laplacian));
        self
    }

    pub fn domain(&self) -> Domain {
        Domain { spatial_dim: self.spatial_dim, length: self.length, horizon: self.horizon }
    }

    pub fn validate(&self) -> Result<(), OperatorError> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(OperatorError::Contract("K1 must be positive"));
        }
        match &self.beta {
            Some(b) if !(self.k2 > 0.0) || b.range().regime() != Regime::Wave => {
                return Err(OperatorError::Contract("beta term needs K2 > 0 and an order range inside (1, 2)"));
            }
            None if self.k2 != 0.0 => return Err(OperatorError::Contract("K2 given without a beta order")),
            _ => {}
        }
        if self.alpha.range().regime() != Regime::Subdiffusive {
            return Err(OperatorError::Contract("alpha range must sit inside (0, 1)"));
        }
        if !(self.length > 0.0 && self.horizon > 0.0) {
            return Err(OperatorError::Contract("domain length and horizon must be positive"));
        }
        Ok(())
    }
}

/// Fixed sensor locations in the input-function domain, sorted lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorLayout {
    dim: usize,
    coords: Vec<f64>,
}

impl SensorLayout {
    /// `m` cell midpoints `(k + 1/2) extent / m` of `[0, extent]`.
    pub fn midpoints(m: usize, extent: f64) -> Self {
        Self { dim: 1, coords: (0..m).map(|k| (k as f64 + 0.5) * extent / m as f64).collect() }
    }

    /// `nx x nt` lattice of cell midpoints over `[0, L] x [0, T]`, `x`-major.
    pub fn lattice_midpoints(nx: usize, nt: usize, length: f64, horizon: f64) -> Self {
        let mut coords = Vec::with_capacity(2 * nx * nt);
        for i in 0..nx {
            for k in 0..nt {
                coords.push((i as f64 + 0.5) * length / nx as f64);
                coords.push((k as f64 + 0.5) * horizon / nt as f64);
            }
        }
        Self { dim: 2, coords }
    }

    /// Explicit locations, `dim` coordinates each, strictly increasing lexicographically.
    pub fn from_points(dim: usize, coords: Vec<f64>) -> Result<Self, OperatorError> {
        if dim == 0 || coords.is_empty() || coords.len() % dim != 0 {
            return Err(OperatorError::Contract("sensor coordinates must be a non-empty multiple of the dimension"));
        }
        let s = Self { dim, coords };
        if (1..s.len()).any(|k| s.point(k - 1) >= s.point(k)) || s.coords.iter().any(|c| !c.is_finite()) {
            return Err(OperatorError::Contract("sensors must be finite and strictly sorted"));
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.coords[k * self.dim..(k + 1) * self.dim]
    }

    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.len()).map(|k| f(self.point(k))).collect()
    }
}

/// Spatial points, each evaluated at every level of a shared time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationSet {
    pub spatial_dim: usize,
    /// `P x d`; a single zero-width row for ODEs.
    pub points: Matrix,
    /// Whether the equation residual is enforced on each line.
    pub interior: Vec<bool>,
    pub time: TimeGrid,
}

impl CollocationSet {
    pub fn time_only(time: TimeGrid) -> Self {
        Self { spatial_dim: 0, points: Matrix::zeros(1, 0), interior: vec![true], time }
    }

    /// `count` node indices of `0..=m` spread evenly, both ends included.
    pub fn line_indices(m_intervals: usize, count: usize) -> Vec<usize> {
        let count = count.clamp(2, m_intervals + 1);
        let mut idx: Vec<usize> = (0..count)
            .map(|k| libm::round(k as f64 * m_intervals as f64 / (count - 1) as f64) as usize)
            .collect();
        idx.dedup();
        idx
    }

    /// Lines at grid nodes `x_i = i L / M`; the end nodes are boundary lines.
    pub fn grid_lines(length: f64, m_intervals: usize, indices: &[usize], time: TimeGrid) -> Self {
        let points =
            Matrix::from_vec(indices.len(), 1, indices.iter().map(|&i| i as f64 * length / m_intervals as f64).collect());
        let interior = indices.iter().map(|&i| i != 0 && i != m_intervals).collect();
        Self { spatial_dim: 1, points, interior, time }
    }

    /// `n` points uniform in the open cube `(0, L)^d`.
    pub fn random(spatial_dim: usize, n: usize, length: f64, time: TimeGrid, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * spatial_dim).map(|_| length * unit_f64(&mut rng)).collect();
        Self { spatial_dim, points: Matrix::from_vec(n, spatial_dim, data), interior: vec![true; n], time }
    }

    pub fn len(&self) -> usize {
        self.points.rows
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows == 0
    }

    pub fn point(&self, j: usize) -> &[f64] {
        self.points.row(j)
    }

    pub fn interior_count(&self) -> usize {
        self.interior.iter().filter(|&&b| b).count()
    }
}

/// Scattered points `(x.., t)` with prescribed values.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchors {
    pub points: Matrix,
    pub values: Vec<f64>,
}

impl Anchors {
    pub fn empty(spatial_dim: usize) -> Self {
        Self { points: Matrix::zeros(0, spatial_dim + 1), values: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn from_points(pts: Vec<f64>, cols: usize, f: &PointFn) -> Self {
        let rows = pts.len() / cols;
        let points = Matrix::from_vec(rows, cols, pts);
        let values = (0..rows).map(|r| {
            let p = points.row(r);
            f(&p[..cols - 1], p[cols - 1])
        });
        let values = values.collect();
        Self { points, values }
    }

    /// `(x_j, 0)` for every line, valued by the initial condition.
    pub fn initial_on_lines(pde: &FractionalPde, set: &CollocationSet) -> Self {
        let d = set.spatial_dim;
        let mut pts = Vec::with_capacity(set.len() * (d + 1));
        for j in 0..set.len() {
            pts.extend_from_slice(set.point(j));
            pts.push(0.0);
        }
        Self::from_points(pts, d + 1, &pde.initial_value)
    }

    /// `(0, t_n)` and `(L, t_n)` at every level (one spatial dimension).
    pub fn boundary_on_grid(pde: &FractionalPde, time: &TimeGrid) -> Self {
        let mut pts = Vec::with_capacity(4 * time.len());
        for x in [0.0, pde.length] {
            for t in time.points() {
                pts.push(x);
                pts.push(t);
            }
        }
        Self::from_points(pts, 2, &pde.boundary)
    }

    /// `n` points uniform in `[0, L]^d` at `t = 0`.
    pub fn random_initial(pde: &FractionalPde, n: usize, seed: u64) -> Self {
        let d = pde.spatial_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::with_capacity(n * (d + 1));
        for _ in 0..n {
            for _ in 0..d {
                pts.push(pde.length * unit_f64(&mut rng));
            }
            pts.push(0.0);
        }
        Self::from_points(pts, d + 1, &pde.initial_value)
    }

    /// `n` points uniform on the faces of `[0, L]^d` times `[0, T]`.
    pub fn random_boundary(pde: &FractionalPde, n: usize, seed: u64) -> Self {
        let d = pde.spatial_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::with_capacity(n * (d + 1));
        for _ in 0..n {
            let face = ((unit_f64(&mut rng) * (2 * d) as f64) as usize).min(2 * d - 1);
            for k in 0..d {
                let v = if k == face / 2 {
                    if face % 2 == 0 { 0.0 } else { pde.length }
                } else {
                    pde.length * unit_f64(&mut rng)
                };
                pts.push(v);
            }
            pts.push(pde.horizon * unit_f64(&mut rng));
        }
        Self::from_points(pts, d + 1, &pde.boundary)
    }
}

/// Order values at every level of every line (or one row shared by all lines).
#[derive(Debug, Clone, PartialEq)]
pub struct OrderValues {
    pub regime: Regime,
    rows: usize,
    nt: usize,
    values: Vec<f64>,
}

impl OrderValues {
    /// `values` is `rows x (N + 1)`; entry 0 of each row is never used.
    pub fn new(regime: Regime, rows: usize, nt: usize, values: Vec<f64>) -> Result<Self, OperatorError> {
        if rows == 0 || values.len() != rows * nt {
            return Err(OperatorError::Contract("order values must be rows x levels"));
        }
        Ok(Self { regime, rows, nt, values })
    }

    /// Samples `spec` at `(x_j, t_n)` for `n >= 1`; only interior lines are checked.
    pub fn from_spec(spec: &FractionalOrderSpec, regime: Regime, set: &CollocationSet) -> Result<Self, OperatorError> {
        let nt = set.time.len();
        let shared = spec.is_spatially_uniform();
        let rows = if shared { 1 } else { set.len() };
        let mut values = vec![0.0; rows * nt];
        let placeholder = 0.5 * (spec.range().lo() + spec.range().hi());
        for r in 0..rows {
            let x: &[f64] = if shared { &[] } else { set.point(r) };
            let active = shared || set.interior[r];
            for n in 1..nt {
                values[r * nt + n] = if active { spec.evaluate(x, set.time.t(n))? } else { placeholder };
            }
            values[r * nt] = values[r * nt + 1];
        }
        Ok(Self { regime, rows, nt, values })
    }

    pub fn is_shared(&self) -> bool {
        self.rows == 1
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn levels(&self) -> usize {
        self.nt
    }

    #[inline]
    pub fn at(&self, line: usize, n: usize) -> f64 {
        let r = if self.rows == 1 { 0 } else { line };
        self.values[r * self.nt + n]
    }

    pub fn set(&mut self, row: usize, n: usize, v: f64) {
        self.values[row * self.nt + n] = v;
        if n == 1 {
            self.values[row * self.nt] = v;
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.nt..(r + 1) * self.nt]
    }
}

/// Orders and coefficients entering the residual.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderField {
    pub k1: f64,
    pub k2: f64,
    pub alpha: OrderValues,
    pub beta: Option<OrderValues>,
}

impl OrderField {
    pub fn from_pde(pde: &FractionalPde, set: &CollocationSet) -> Result<Self, OperatorError> {
        Ok(Self {
            k1: pde.k1,
            k2: pde.k2,
            alpha: OrderValues::from_spec(&pde.alpha, Regime::Subdiffusive, set)?,
            beta: pde.beta.as_ref().map(|b| OrderValues::from_spec(b, Regime::Wave, set)).transpose()?,
        })
    }

    pub fn is_shared(&self) -> bool {
        self.alpha.is_shared() && self.beta.as_ref().is_none_or(|b| b.is_shared())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForcingMode {
    /// The closed-form `f`.
    Analytic,
    /// `f` recomputed by applying the quadratures to the exact solution, so the
    /// exact solution is also the exact minimizer of the discrete residual.
    Discrete,
}

/// `f_j^n = (Q_j u_j)^n + s_j^n phi1_j - lap u(x_j, t_n)` with `u` the exact solution.
pub fn discrete_forcing(pde: &FractionalPde, set: &CollocationSet, orders: &OrderField) -> Result<Matrix, OperatorError> {
    let (Some(u), Some(lap)) = (pde.exact.as_ref(), pde.exact_laplacian.as_ref()) else {
        return Err(OperatorError::Contract("discrete forcing needs the exact solution and its Laplacian"));
    };
    let ops = LineOperators::build(orders, set)?;
    let nt = set.time.len();
    let mut f = Matrix::zeros(set.len(), nt);
    for j in 0..set.len() {
        let x = set.point(j);
        let hist: Vec<f64> = set.time.points().map(|t| u(x, t)).collect();
        let phi1 = (pde.initial_slope)(x, 0.0);
        f.set(j, 0, (pde.forcing)(x, 0.0));
        if !set.interior[j] {
            for n in 1..nt {
                f.set(j, n, (pde.forcing)(x, set.time.t(n)));
            }
            continue;
        }
        for n in 1..nt {
            let d = ops.apply(j, &hist, n, phi1);
            let l = if set.spatial_dim == 0 { 0.0 } else { lap(x, set.time.t(n)) };
            f.set(j, n, d - l);
        }
    }
    Ok(f)
}

/// Everything the losses need, precomputed on a collocation set.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub set: CollocationSet,
    /// `P x (N + 1)` forcing samples on the lines.
    pub forcing: Matrix,
    /// `phi1` at each line.
    pub slope: Vec<f64>,
    /// Penalize `(u^1 - u^0) / tau - phi1` on every line.
    pub slope_condition: bool,
    pub initial: Anchors,
    pub boundary: Anchors,
    /// Observed solution on the lines, `P x (N + 1)`.
    pub observations: Option<Matrix>,
}

impl TrainingData {
    /// Forcing per `mode`; initial anchors on the lines; boundary anchors on
    /// the grid ends in one dimension (none otherwise).
    pub fn new(pde: &FractionalPde, set: CollocationSet, orders: &OrderField, mode: ForcingMode) -> Result<Self, OperatorError> {
        pde.validate()?;
        if set.spatial_dim != pde.spatial_dim {
            return Err(OperatorError::Contract("collocation dimension differs from the problem"));
        }
        let forcing = match mode {
            ForcingMode::Discrete => discrete_forcing(pde, &set, orders)?,
            ForcingMode::Analytic => {
                let mut f = Matrix::zeros(set.len(), set.time.len());
                for j in 0..set.len() {
                    for n in 0..set.time.len() {
                        f.set(j, n, (pde.forcing)(set.point(j), set.time.t(n)));
                    }
                }
                f
            }
        };
        let slope = (0..set.len()).map(|j| (pde.initial_slope)(set.point(j), 0.0)).collect();
        let initial = Anchors::initial_on_lines(pde, &set);
        let boundary =
            if pde.spatial_dim == 1 { Anchors::boundary_on_grid(pde, &set.time) } else { Anchors::empty(pde.spatial_dim) };
        Ok(Self { slope_condition: pde.beta.is_some(), forcing, slope, initial, boundary, observations: None, set })
    }

    /// Adds observations of the exact solution on every line point.
    pub fn with_exact_observations(mut self, pde: &FractionalPde) -> Result<Self, OperatorError> {
        let u = pde.exact.as_ref().ok_or(OperatorError::Contract("no exact solution to observe"))?;
        let mut obs = Matrix::zeros(self.set.len(), self.set.time.len());
        for j in 0..self.set.len() {
            for n in 0..self.set.time.len() {
                obs.set(j, n, u(self.set.point(j), self.set.time.t(n)));
            }
        }
        self.observations = Some(obs);
        Ok(self)
    }

    pub fn with_anchors(mut self, initial: Anchors, boundary: Anchors) -> Self {
        self.initial = initial;
        self.boundary = boundary;
        self
    }
}
