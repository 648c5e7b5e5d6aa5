//! Compact finite-difference solver for the one-dimensional two-term
//! time-fractional mixed diffusion-wave equation
//!
//! ```text
//! K1 D_t^alpha u + K2 D_t^beta u = u_xx + f,   0 < x < L, 0 < t <= T
//! ```
//!
//! with Dirichlet boundaries, `u(x, 0) = phi0` and `u_t(x, 0) = phi1`. Time is
//! discretized with the L1 (alpha) and L2 (beta) rules, space with the fourth
//! order compact average `A_x = (1, 10, 1) / 12`. Each level is one
//! tridiagonal solve.

mod tridiag;

pub use tridiag::TridiagonalSystem;

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::fracops::{CaputoStencil, FracError, FractionalOrderSpec, Regime, TimeGrid};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FdError {
    #[error("invalid problem: {0}")]
    InvalidProblem(&'static str),
    #[error("invalid space grid: {0}")]
    InvalidGrid(&'static str),
    #[error("index {index} is not an interior node of a grid with {m} intervals")]
    BoundaryIndex { index: usize, m: usize },
    #[error("history holds {filled} levels but level {requested} needs {needed}")]
    IncompleteHistory { filled: usize, requested: usize, needed: usize },
    #[error("level {level}: row {row} of the assembled system is not diagonally dominant")]
    NotDiagonallyDominant { level: usize, row: usize },
    #[error("level {level}: re-substitution residual {residual:e} exceeds tolerance")]
    ResidualTooLarge { level: usize, residual: f64 },
    #[error("exact field is identically zero; relative error undefined")]
    ZeroReference,
    #[error(transparent)]
    Order(#[from] FracError),
}

/// Uniform nodes `x_i = i h`, `i = 0..=M`, on `[0, L]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceGrid {
    length: f64,
    m_intervals: usize,
}

impl SpaceGrid {
    /// `M >= 4` so the compact stencil has at least three interior nodes.
    pub fn new(length: f64, m_intervals: usize) -> Result<Self, FdError> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(FdError::InvalidGrid("length must be positive and finite"));
        }
        if m_intervals < 4 {
            return Err(FdError::InvalidGrid("need at least four intervals"));
        }
        Ok(Self { length, m_intervals })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn m_intervals(&self) -> usize {
        self.m_intervals
    }

    /// Number of nodes, `M + 1`.
    pub fn len(&self) -> usize {
        self.m_intervals + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn h(&self) -> f64 {
        self.length / self.m_intervals as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        if i == self.m_intervals {
            self.length
        } else {
            i as f64 * self.h()
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| self.x(i))
    }

    fn check_interior(&self, index: usize) -> Result<(), FdError> {
        if index == 0 || index >= self.m_intervals {
            Err(FdError::BoundaryIndex { index, m: self.m_intervals })
        } else {
            Ok(())
        }
    }
}

/// `(row[i-1] + 10 row[i] + row[i+1]) / 12` at an interior node.
pub fn compact_average(grid: &SpaceGrid, row: &[f64], i: usize) -> Result<f64, FdError> {
    grid.check_interior(i)?;
    Ok((row[i - 1] + 10.0 * row[i] + row[i + 1]) / 12.0)
}

/// `(row[i+1] - 2 row[i] + row[i-1]) / h^2` at an interior node.
pub fn second_difference(grid: &SpaceGrid, row: &[f64], i: usize) -> Result<f64, FdError> {
    grid.check_interior(i)?;
    let h = grid.h();
    Ok((row[i + 1] - 2.0 * row[i] + row[i - 1]) / (h * h))
}

pub type SpaceFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type SpaceTimeFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Time derivative orders of the equation.
#[derive(Debug, Clone)]
pub enum TimeOrders {
    /// `alpha` in `(0, 1)`; `beta` in `(1, 2)` or absent for the single-term equation.
    Fractional { alpha: FractionalOrderSpec, beta: Option<FractionalOrderSpec> },
    /// `alpha = 1`, `beta = 2`, discretized with backward differences.
    Classical,
}

#[derive(Clone)]
pub struct TfmdweProblem {
    pub k1: f64,
    pub k2: f64,
    pub orders: TimeOrders,
    pub forcing: SpaceTimeFn,
    pub initial_value: SpaceFn,
    pub initial_slope: SpaceFn,
    pub left: SpaceFn,
    pub right: SpaceFn,
    pub length: f64,
    pub horizon: f64,
}

impl fmt::Debug for TfmdweProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TfmdweProblem")
            .field("k1", &self.k1)
            .field("k2", &self.k2)
            .field("orders", &self.orders)
            .field("length", &self.length)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

fn zero1() -> SpaceFn {
    Arc::new(|_| 0.0)
}

impl TfmdweProblem {
    /// Problem with zero forcing, zero initial data and homogeneous boundaries.
    pub fn new(k1: f64, k2: f64, orders: TimeOrders, length: f64, horizon: f64) -> Self {
        Self {
            k1,
            k2,
            orders,
            forcing: Arc::new(|_, _| 0.0),
            initial_value: zero1(),
            initial_slope: zero1(),
            left: zero1(),
            right: zero1(),
            length,
            horizon,
        }
    }

    pub fn with_forcing(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.forcing = Arc::new(f);
        self
    }

    pub fn with_initial_value(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.initial_value = Arc::new(f);
        self
    }

    pub fn with_initial_slope(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.initial_slope = Arc::new(f);
        self
    }

    pub fn with_boundaries(
        mut self,
        left: impl Fn(f64) -> f64 + Send + Sync + 'static,
        right: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.left = Arc::new(left);
        self.right = Arc::new(right);
        self
    }

    pub fn validate(&self) -> Result<(), FdError> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(FdError::InvalidProblem("K1 must be positive"));
        }
        if !(self.k2 >= 0.0 && self.k2.is_finite()) {
            return Err(FdError::InvalidProblem("K2 must be non-negative"));
        }
        if !(self.length > 0.0 && self.horizon > 0.0 && self.length.is_finite() && self.horizon.is_finite()) {
            return Err(FdError::InvalidProblem("domain length and horizon must be positive"));
        }
        match &self.orders {
            TimeOrders::Fractional { alpha, beta } => {
                if alpha.range().regime() != Regime::Subdiffusive {
                    return Err(FdError::InvalidProblem("alpha must lie in (0, 1)"));
                }
                match beta {
                    Some(b) if b.range().regime() != Regime::Wave => {
                        return Err(FdError::InvalidProblem("beta must lie in (1, 2)"));
                    }
                    Some(_) if self.k2 == 0.0 => {
                        return Err(FdError::InvalidProblem("two-term equation needs K2 > 0"));
                    }
                    None if self.k2 != 0.0 => {
                        return Err(FdError::InvalidProblem("K2 > 0 requires a beta order"));
                    }
                    _ => {}
                }
            }
            TimeOrders::Classical => {}
        }
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
        if !close((self.initial_value)(0.0), (self.left)(0.0))
            || !close((self.initial_value)(self.length), (self.right)(0.0))
        {
            return Err(FdError::InvalidProblem("initial value disagrees with boundary data at t = 0"));
        }
        Ok(())
    }
}

/// `u_i^n` on the `(M + 1) x (N + 1)` lattice, stored node-major so each
/// node's time history is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    space: SpaceGrid,
    time: TimeGrid,
    values: Vec<f64>,
    filled: usize,
}

impl SolutionField {
    /// Field with level 0 set from `phi0` and nothing else filled.
    pub fn initial(problem: &TfmdweProblem, space: SpaceGrid, time: TimeGrid) -> Self {
        let mut field = Self { space, time, values: vec![0.0; space.len() * time.len()], filled: 1 };
        for i in 0..space.len() {
            field.values[i * time.len()] = (problem.initial_value)(space.x(i));
        }
        field
    }

    /// Fully filled field sampled from `f(x, t)`.
    pub fn from_fn(space: SpaceGrid, time: TimeGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let nt = time.len();
        let values = (0..space.len() * nt).map(|k| f(space.x(k / nt), time.t(k % nt))).collect();
        Self { space, time, values, filled: nt }
    }

    pub fn space(&self) -> &SpaceGrid {
        &self.space
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    /// Number of leading time levels that hold values.
    pub fn filled_levels(&self) -> usize {
        self.filled
    }

    pub fn value(&self, i: usize, n: usize) -> f64 {
        self.values[i * self.time.len() + n]
    }

    /// `u_i^0..=u_i^N` at node `i`.
    pub fn node_history(&self, i: usize) -> &[f64] {
        let nt = self.time.len();
        &self.values[i * nt..(i + 1) * nt]
    }

    pub fn level(&self, n: usize) -> Vec<f64> {
        (0..self.space.len()).map(|i| self.value(i, n)).collect()
    }

    /// Stores level `n`, which must be the next unfilled one.
    pub fn push_level(&mut self, n: usize, row: &[f64]) -> Result<(), FdError> {
        if n != self.filled || row.len() != self.space.len() {
            return Err(FdError::IncompleteHistory { filled: self.filled, requested: n, needed: n });
        }
        let nt = self.time.len();
        for (i, &u) in row.iter().enumerate() {
            self.values[i * nt + n] = u;
        }
        self.filled += 1;
        Ok(())
    }

    /// `(x_i, t_n, u_i^n)` over the filled levels, time-major.
    pub fn lattice(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.filled).flat_map(move |n| {
            (0..self.space.len()).map(move |i| (self.space.x(i), self.time.t(n), self.value(i, n)))
        })
    }
}

/// Per-node time operator `D u^n = gamma u^n + G` where `G` collects history.
enum NodeOperator {
    Fractional { l1: OrderSource, l2: Option<OrderSource> },
    Classical,
}

enum OrderSource {
    Cached(CaputoStencil),
    Varying(FractionalOrderSpec, Regime),
}

impl OrderSource {
    fn new(spec: &FractionalOrderSpec, regime: Regime, time: &TimeGrid) -> Result<Self, FdError> {
        Ok(match spec.constant_value() {
            Some(v) => OrderSource::Cached(CaputoStencil::for_regime(regime, v, time.n_steps(), time.tau())?),
            None => OrderSource::Varying(spec.clone(), regime),
        })
    }

    /// `(gamma, G)` contribution with the level-`n` entry of `hist` ignored.
    fn terms(&self, x: f64, time: &TimeGrid, hist: &[f64], n: usize, slope: f64) -> Result<(f64, f64), FdError> {
        let built;
        let st = match self {
            OrderSource::Cached(st) => st,
            OrderSource::Varying(spec, regime) => {
                let order = spec.evaluate(&[x], time.t(n))?;
                built = CaputoStencil::for_regime(*regime, order, n, time.tau())?;
                &built
            }
        };
        let gamma = diagonal(st, n);
        // The operator is affine in v^n, so D(v) - gamma v^n is the history part.
        let g = st.apply(&hist[..=n], n, slope) - gamma * hist[n];
        Ok((gamma, g))
    }
}

fn diagonal(st: &CaputoStencil, n: usize) -> f64 {
    let w0 = st.weights()[0] * libm::pow(st.tau(), -st.order());
    match st.kind() {
        crate::fracops::StencilKind::L2 if n == 1 => 2.0 * w0,
        _ => w0,
    }
}

/// Assembles and solves one time level at a time, caching constant-order weights.
pub struct CompactSolver<'p> {
    problem: &'p TfmdweProblem,
    space: SpaceGrid,
    time: TimeGrid,
    op: NodeOperator,
}

impl<'p> CompactSolver<'p> {
    pub fn new(problem: &'p TfmdweProblem, space: SpaceGrid, time: TimeGrid) -> Result<Self, FdError> {
        problem.validate()?;
        if (space.length() - problem.length).abs() > 1e-12 * problem.length
            || (time.t_final() - problem.horizon).abs() > 1e-12 * problem.horizon
        {
            return Err(FdError::InvalidProblem("grids do not cover the problem domain"));
        }
        let op = match &problem.orders {
            TimeOrders::Fractional { alpha, beta } => NodeOperator::Fractional {
                l1: OrderSource::new(alpha, Regime::Subdiffusive, &time)?,
                l2: beta.as_ref().map(|b| OrderSource::new(b, Regime::Wave, &time)).transpose()?,
            },
            TimeOrders::Classical => NodeOperator::Classical,
        };
        Ok(Self { problem, space, time, op })
    }

    fn node_terms(&self, i: usize, hist: &[f64], n: usize) -> Result<(f64, f64), FdError> {
        let p = self.problem;
        let x = self.space.x(i);
        let slope = (p.initial_slope)(x);
        let tau = self.time.tau();
        match &self.op {
            NodeOperator::Fractional { l1, l2 } => {
                let (g1, h1) = l1.terms(x, &self.time, hist, n, slope)?;
                let (g2, h2) = match l2 {
                    Some(src) => src.terms(x, &self.time, hist, n, slope)?,
                    None => (0.0, 0.0),
                };
                Ok((p.k1 * g1 + p.k2 * g2, p.k1 * h1 + p.k2 * h2))
            }
            NodeOperator::Classical => {
                let prev = hist[n - 1];
                let (g1, h1) = (1.0 / tau, -prev / tau);
                let (g2, h2) = if n == 1 {
                    (2.0 / (tau * tau), -2.0 * (prev + tau * slope) / (tau * tau))
                } else {
                    (1.0 / (tau * tau), (-2.0 * prev + hist[n - 2]) / (tau * tau))
                };
                Ok((p.k1 * g1 + p.k2 * g2, p.k1 * h1 + p.k2 * h2))
            }
        }
    }

    /// Boundary values at level `n`.
    pub fn boundary(&self, n: usize) -> (f64, f64) {
        let t = self.time.t(n);
        ((self.problem.left)(t), (self.problem.right)(t))
    }

    /// Tridiagonal system for the interior unknowns `u_1^n..u_{M-1}^n`.
    pub fn assemble(&self, field: &SolutionField, n: usize) -> Result<TridiagonalSystem, FdError> {
        if n == 0 || n > self.time.n_steps() || field.filled_levels() < n {
            return Err(FdError::IncompleteHistory { filled: field.filled_levels(), requested: n, needed: n });
        }
        let m = self.space.m_intervals();
        let nt = self.time.len();
        let h2 = self.space.h() * self.space.h();
        let t = self.time.t(n);
        let (ul, ur) = self.boundary(n);

        // gamma_i and G_i at every node; boundary nodes carry their full D value.
        let mut hist = vec![0.0; n + 1];
        let mut gam = vec![0.0; m + 1];
        let mut big_g = vec![0.0; m + 1];
        for i in 0..=m {
            hist[..n].copy_from_slice(&field.values[i * nt..i * nt + n]);
            hist[n] = 0.0;
            let (g, rest) = self.node_terms(i, &hist, n)?;
            gam[i] = g;
            big_g[i] = rest;
        }
        let d0 = gam[0] * ul + big_g[0];
        let dm = gam[m] * ur + big_g[m];
        let f: Vec<f64> = self.space.points().map(|x| (self.problem.forcing)(x, t)).collect();

        let mut sys = TridiagonalSystem::zeros(m - 1);
        for i in 1..m {
            let r = i - 1;
            sys.sub[r] = gam[i - 1] / 12.0 - 1.0 / h2;
            sys.main[r] = 10.0 * gam[i] / 12.0 + 2.0 / h2;
            sys.sup[r] = gam[i + 1] / 12.0 - 1.0 / h2;
            let mut rhs = (f[i - 1] + 10.0 * f[i] + f[i + 1]) / 12.0 - 10.0 * big_g[i] / 12.0;
            if i == 1 {
                rhs += -d0 / 12.0 + ul / h2;
            } else {
                rhs -= big_g[i - 1] / 12.0;
            }
            if i == m - 1 {
                rhs += -dm / 12.0 + ur / h2;
            } else {
                rhs -= big_g[i + 1] / 12.0;
            }
            sys.rhs[r] = rhs;
        }
        if let Some(row) = sys.dominance_violation() {
            return Err(FdError::NotDiagonallyDominant { level: n, row: row + 1 });
        }
        Ok(sys)
    }

    /// Full row `u_0^n..u_M^n`, boundaries included.
    pub fn advance(&self, field: &SolutionField, n: usize) -> Result<Vec<f64>, FdError> {
        let sys = self.assemble(field, n)?;
        let interior = sys.solve();
        let residual = sys.residual(&interior);
        let scale = sys.rhs.iter().fold(1.0f64, |a, r| a.max(r.abs()));
        if !(residual <= 1e-10 * scale) {
            return Err(FdError::ResidualTooLarge { level: n, residual });
        }
        let (ul, ur) = self.boundary(n);
        let mut row = Vec::with_capacity(self.space.len());
        row.push(ul);
        row.extend_from_slice(&interior);
        row.push(ur);
        Ok(row)
    }

    pub fn solve(&self) -> Result<SolutionField, FdError> {
        let mut field = SolutionField::initial(self.problem, self.space, self.time);
        for n in 1..=self.time.n_steps() {
            let row = self.advance(&field, n)?;
            field.push_level(n, &row)?;
        }
        Ok(field)
    }
}

/// Solves level `n` given `history` filled through level `n - 1`.
pub fn advance_time_level(
    problem: &TfmdweProblem,
    space: SpaceGrid,
    time: TimeGrid,
    history: &SolutionField,
    n: usize,
) -> Result<Vec<f64>, FdError> {
    CompactSolver::new(problem, space, time)?.advance(history, n)
}

/// Builds the grids from `M` and `N` and marches through all levels.
pub fn solve_forward(problem: &TfmdweProblem, m: usize, n: usize) -> Result<SolutionField, FdError> {
    let space = SpaceGrid::new(problem.length, m)?;
    let time = TimeGrid::new(problem.horizon, n)?;
    CompactSolver::new(problem, space, time)?.solve()
}

/// Integer-order limit: backward Euler in `u_t`, three-level difference in `u_tt`.
pub fn solve_classical_limit(problem: &TfmdweProblem, m: usize, n: usize) -> Result<SolutionField, FdError> {
    if !matches!(problem.orders, TimeOrders::Classical) {
        return Err(FdError::InvalidProblem("classical limit requires integer orders"));
    }
    solve_forward(problem, m, n)
}

/// Max-norm and relative lattice L2 error of a field against `exact`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorNorms {
    pub max_abs: f64,
    pub relative_l2: f64,
}

pub fn grid_error_norms(field: &SolutionField, exact: impl Fn(f64, f64) -> f64) -> Result<ErrorNorms, FdError> {
    let (mut max_abs, mut num, mut den) = (0.0f64, 0.0, 0.0);
    for (x, t, u) in field.lattice() {
        let e = exact(x, t);
        let d = u - e;
        max_abs = max_abs.max(d.abs());
        num += d * d;
        den += e * e;
    }
    if den == 0.0 {
        return Err(FdError::ZeroReference);
    }
    Ok(ErrorNorms { max_abs, relative_l2: libm::sqrt(num / den) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fracops::{gamma, OrderRange};
    use core::f64::consts::PI;

    fn frac(alpha: f64, beta: f64) -> TimeOrders {
        TimeOrders::Fractional {
            alpha: FractionalOrderSpec::constant(alpha, OrderRange::subdiffusive()).unwrap(),
            beta: Some(FractionalOrderSpec::constant(beta, OrderRange::wave()).unwrap()),
        }
    }

    /// `u = t^3 sin x` on `[0, pi] x [0, 1]`.
    fn cubic_sine(alpha: f64, beta: f64) -> TfmdweProblem {
        let ca = 6.0 / gamma(4.0 - alpha);
        let cb = 6.0 / gamma(4.0 - beta);
        TfmdweProblem::new(1.0, 1.0, frac(alpha, beta), PI, 1.0).with_forcing(move |x, t| {
            (ca * libm::pow(t, 3.0 - alpha) + cb * libm::pow(t, 3.0 - beta) + t * t * t) * libm::sin(x)
        })
    }

    fn cubic_sine_exact(x: f64, t: f64) -> f64 {
        t * t * t * libm::sin(x)
    }

    #[test]
    fn compact_operators_on_simple_rows() {
        let g = SpaceGrid::new(1.0, 8).unwrap();
        let c = vec![2.5; 9];
        assert!((compact_average(&g, &c, 3).unwrap() - 2.5).abs() < 1e-15);
        let lin: Vec<f64> = g.points().collect();
        assert!((compact_average(&g, &lin, 4).unwrap() - g.x(4)).abs() < 1e-15);
        let quad: Vec<f64> = g.points().map(|x| x * x).collect();
        assert!((second_difference(&g, &quad, 5).unwrap() - 2.0).abs() < 1e-12);
        assert!(second_difference(&g, &lin, 2).unwrap().abs() < 1e-12);
        assert!(matches!(compact_average(&g, &c, 0), Err(FdError::BoundaryIndex { .. })));
        assert!(matches!(second_difference(&g, &c, 8), Err(FdError::BoundaryIndex { .. })));
    }

    #[test]
    fn second_difference_of_sine_near_peak() {
        let g = SpaceGrid::new(PI, 100).unwrap();
        let row: Vec<f64> = g.points().map(libm::sin).collect();
        let v = second_difference(&g, &row, 50).unwrap();
        // -sin(pi/2) (1 - h^2/12 + ...)
        let h = g.h();
        assert!((v + 1.0 - h * h / 12.0).abs() < 1e-8, "{v}");
        assert!((v + 0.99992).abs() < 1e-5);
    }

    #[test]
    fn compact_identity_is_fourth_order() {
        // A_x u'' - delta_x^2 u = O(h^4) for u = sin.
        let mut errs = Vec::new();
        for m in [8, 16, 32, 64] {
            let g = SpaceGrid::new(PI, m).unwrap();
            let u: Vec<f64> = g.points().map(libm::sin).collect();
            let upp: Vec<f64> = u.iter().map(|v| -v).collect();
            let e = (1..m)
                .map(|i| (compact_average(&g, &upp, i).unwrap() - second_difference(&g, &u, i).unwrap()).abs())
                .fold(0.0, f64::max);
            errs.push((g.h(), e));
        }
        for w in errs.windows(2) {
            let p = libm::log(w[0].1 / w[1].1) / libm::log(w[0].0 / w[1].0);
            assert!((p - 4.0).abs() < 0.2, "order {p}");
        }
    }

    #[test]
    fn space_grid_needs_four_intervals() {
        assert!(SpaceGrid::new(1.0, 3).is_err());
        assert!(SpaceGrid::new(0.0, 8).is_err());
        assert_eq!(SpaceGrid::new(2.0, 4).unwrap().x(4), 2.0);
    }

    #[test]
    fn problem_validation() {
        assert!(cubic_sine(0.5, 1.5).validate().is_ok());
        let mut p = cubic_sine(0.5, 1.5);
        p.k1 = 0.0;
        assert!(p.validate().is_err());
        let p = cubic_sine(0.5, 1.5).with_initial_value(|_| 1.0);
        assert!(p.validate().is_err());
        let single = TfmdweProblem::new(
            1.0,
            0.5,
            TimeOrders::Fractional {
                alpha: FractionalOrderSpec::constant(0.5, OrderRange::subdiffusive()).unwrap(),
                beta: None,
            },
            1.0,
            1.0,
        );
        assert!(single.validate().is_err());
    }

    #[test]
    fn zero_data_gives_zero_field() {
        for orders in [frac(0.3, 1.7), TimeOrders::Classical] {
            let p = TfmdweProblem::new(1.0, 2.0, orders, 1.0, 1.0);
            let field = solve_forward(&p, 8, 10).unwrap();
            assert!(field.lattice().all(|(_, _, u)| u == 0.0));
        }
    }

    #[test]
    fn first_step_resubstitution_residual() {
        let p = cubic_sine(0.5, 1.5);
        let space = SpaceGrid::new(PI, 100).unwrap();
        let time = TimeGrid::new(1.0, 100).unwrap();
        let solver = CompactSolver::new(&p, space, time).unwrap();
        let field = SolutionField::initial(&p, space, time);
        let sys = solver.assemble(&field, 1).unwrap();
        let x = sys.solve();
        assert!(sys.residual(&x) < 1e-10);
        let row = advance_time_level(&p, space, time, &field, 1).unwrap();
        assert_eq!(&row[1..100], &x[..]);
    }

    #[test]
    fn rejects_missing_history() {
        let p = cubic_sine(0.5, 1.5);
        let space = SpaceGrid::new(PI, 8).unwrap();
        let time = TimeGrid::new(1.0, 8).unwrap();
        let field = SolutionField::initial(&p, space, time);
        assert!(matches!(advance_time_level(&p, space, time, &field, 2), Err(FdError::IncompleteHistory { .. })));
    }

    #[test]
    fn fixed_order_run_matches_cubic_sine() {
        // Single-term alpha = 0.5 equation.
        let orders = TimeOrders::Fractional {
            alpha: FractionalOrderSpec::constant(0.5, OrderRange::subdiffusive()).unwrap(),
            beta: None,
        };
        let ca = 6.0 / gamma(3.5);
        let p = TfmdweProblem::new(1.0, 0.0, orders, PI, 1.0)
            .with_forcing(move |x, t| (ca * libm::pow(t, 2.5) + t * t * t) * libm::sin(x));
        let field = solve_forward(&p, 100, 100).unwrap();
        let norms = grid_error_norms(&field, cubic_sine_exact).unwrap();
        assert!(norms.relative_l2 < 5e-3, "{norms:?}");
    }

    #[test]
    fn temporal_order_is_about_one() {
        let mut data = Vec::new();
        for n in [20, 40, 80, 160] {
            let field = solve_forward(&cubic_sine(0.5, 1.5), 64, n).unwrap();
            data.push((1.0 / n as f64, grid_error_norms(&field, cubic_sine_exact).unwrap().max_abs));
        }
        let p = crate::fracops::estimate_convergence_order(&data).unwrap().order().unwrap();
        assert!((p - 1.0).abs() <= 0.2, "temporal order {p}");
    }

    #[test]
    fn steady_sine_reproduced_to_fourth_order() {
        // u = sin x solves the equation with f = sin x for any orders.
        let mut errs = Vec::new();
        for m in [8, 16, 32] {
            let p = TfmdweProblem::new(1.0, 1.0, TimeOrders::Classical, PI, 1.0)
                .with_forcing(|x, _| libm::sin(x))
                .with_initial_value(libm::sin);
            let f = solve_classical_limit(&p, m, 10).unwrap();
            errs.push((PI / m as f64, grid_error_norms(&f, |x, _| libm::sin(x)).unwrap().max_abs));
        }
        let p = crate::fracops::estimate_convergence_order(&errs).unwrap().order().unwrap();
        assert!((p - 4.0).abs() < 0.4, "spatial order {p}");
    }

    #[test]
    fn classical_limit_is_first_order_in_time() {
        let mk = || {
            TfmdweProblem::new(1.0, 1.0, TimeOrders::Classical, PI, 1.0)
                .with_forcing(|x, t| (3.0 * t * t + 6.0 * t + t * t * t) * libm::sin(x))
        };
        let mut data = Vec::new();
        for n in [20, 40, 80, 160] {
            let f = solve_classical_limit(&mk(), 64, n).unwrap();
            data.push((1.0 / n as f64, grid_error_norms(&f, cubic_sine_exact).unwrap().max_abs));
        }
        let p = crate::fracops::estimate_convergence_order(&data).unwrap().order().unwrap();
        assert!((p - 1.0).abs() < 0.2, "order {p}");
        assert!(solve_classical_limit(&cubic_sine(0.5, 1.5), 8, 8).is_err());
    }

    #[test]
    fn fractional_scheme_approaches_classical_near_integer_orders() {
        let force = |x: f64, t: f64| (3.0 * t * t + 6.0 * t + t * t * t) * libm::sin(x);
        let classical = solve_classical_limit(
            &TfmdweProblem::new(1.0, 1.0, TimeOrders::Classical, PI, 1.0).with_forcing(force),
            16,
            20,
        )
        .unwrap();
        let near = solve_forward(&TfmdweProblem::new(1.0, 1.0, frac(1.0 - 1e-7, 2.0 - 1e-7), PI, 1.0).with_forcing(force), 16, 20)
            .unwrap();
        let diff = classical.lattice().zip(near.lattice()).map(|(a, b)| (a.2 - b.2).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-5, "{diff}");
    }

    #[test]
    fn variable_order_constant_profile_matches_constant_order() {
        let make = |alpha: FractionalOrderSpec, beta: FractionalOrderSpec| {
            TfmdweProblem::new(1.0, 1.0, TimeOrders::Fractional { alpha, beta: Some(beta) }, PI, 1.0)
                .with_forcing(|x, t| t * libm::sin(x))
        };
        let a = make(
            FractionalOrderSpec::constant(0.4, OrderRange::subdiffusive()).unwrap(),
            FractionalOrderSpec::constant(1.6, OrderRange::wave()).unwrap(),
        );
        let b = make(
            FractionalOrderSpec::of_time(|_| 0.4, OrderRange::subdiffusive()),
            FractionalOrderSpec::of_space_time(|_, _| 1.6, OrderRange::wave()),
        );
        let fa = solve_forward(&a, 8, 12).unwrap();
        let fb = solve_forward(&b, 8, 12).unwrap();
        let diff = fa.lattice().zip(fb.lattice()).map(|(p, q)| (p.2 - q.2).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-13, "{diff}");
    }

    #[test]
    fn error_norms_closed_forms() {
        let p = cubic_sine(0.5, 1.5);
        let field = solve_forward(&p, 8, 8).unwrap();
        let same = grid_error_norms(&field, |x, t| {
            let (i, n) = ((x / field.space().h()).round() as usize, (t / field.time().tau()).round() as usize);
            field.value(i, n)
        })
        .unwrap();
        assert_eq!(same, ErrorNorms { max_abs: 0.0, relative_l2: 0.0 });
        assert_eq!(grid_error_norms(&field, |_, _| 0.0), Err(FdError::ZeroReference));

        // Constant offset: relative error is 1e-3 sqrt(P) / ||exact||.
        let (space, time) = (SpaceGrid::new(PI, 10).unwrap(), TimeGrid::new(1.0, 10).unwrap());
        let shifted = SolutionField::from_fn(space, time, |x, t| cubic_sine_exact(x, t) + 1e-3);
        let norms = grid_error_norms(&shifted, cubic_sine_exact).unwrap();
        let norm: f64 = SolutionField::from_fn(space, time, cubic_sine_exact).lattice().map(|p| p.2 * p.2).sum::<f64>().sqrt();
        assert!((norms.max_abs - 1e-3).abs() < 1e-15);
        assert!((norms.relative_l2 - 1e-3 * 121f64.sqrt() / norm).abs() < 1e-14);
    }
}
