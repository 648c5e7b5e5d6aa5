//! Caputo fractional derivatives on uniform time grids.
//!
//! The L1 rule covers orders in `(0, 1)` and converges like `tau^(2 - alpha)`;
//! the L2 rule covers orders in `(1, 2)`, needs the initial slope `v'(0)` and
//! converges like `tau`. Both reduce to weight sequences
//! `c_k = ((k + 1)^(1 - g) - k^(1 - g)) / Gamma(2 - g)` with `g = alpha` or
//! `g = beta - 1`.

mod convergence;
mod gamma;
mod order;
mod stencil;

pub use convergence::{estimate_convergence_order, ConvergenceFit};
pub use gamma::{digamma, gamma, inv_gamma};
pub use order::{EvalPoint, FractionalOrderSpec, OrderFn, OrderKind, OrderRange, Regime, SensorOrder};
pub use stencil::{CaputoStencil, StencilKind};

use alloc::vec::Vec;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FracError {
    #[error("fractional order {order} outside admissible range ({lo}, {hi})")]
    OrderOutOfRange { order: f64, lo: f64, hi: f64 },
    #[error("invalid order range ({lo}, {hi})")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("quadrature needs at least one step of history")]
    InsufficientHistory,
    #[error("L2 quadrature requires the initial slope v'(0)")]
    MissingInitialSlope,
    #[error("series has {found} values but the grid only has {available} points")]
    GridMismatch { found: usize, available: usize },
    #[error("invalid time grid: {0}")]
    InvalidGrid(&'static str),
    #[error("domain error: {0}")]
    Domain(&'static str),
    #[error("order {order} is not in the {regime:?} regime")]
    WrongRegime { order: f64, regime: Regime },
}

/// Uniform grid `t_n = n * tau`, `n = 0..=N`, on `[0, t_final]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_final: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, n_steps: usize) -> Result<Self, FracError> {
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(FracError::InvalidGrid("final time must be positive and finite"));
        }
        if n_steps == 0 {
            return Err(FracError::InvalidGrid("need at least one step"));
        }
        Ok(Self { t_final, n_steps })
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    /// Number of steps `N`.
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of grid points, `N + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tau(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    pub fn t(&self, n: usize) -> f64 {
        if n == self.n_steps {
            self.t_final
        } else {
            n as f64 * self.tau()
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |n| self.t(n))
    }
}

/// Samples `v^0..v^n` on a [`TimeGrid`], plus `v'(0)` when known.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub values: Vec<f64>,
    pub initial_slope: Option<f64>,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, initial_slope: None }
    }

    pub fn with_slope(values: Vec<f64>, slope: f64) -> Self {
        Self { values, initial_slope: Some(slope) }
    }

    /// Samples `f` at `t_0..=t_n`.
    pub fn sample(grid: &TimeGrid, n: usize, f: impl Fn(f64) -> f64) -> Self {
        Self::new((0..=n).map(|k| f(grid.t(k))).collect())
    }

    /// Index of the last sample.
    pub fn last_index(&self) -> usize {
        self.values.len().saturating_sub(1)
    }
}

/// Weight sequence of the L1 or L2 rule for one order.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureWeights {
    pub order: f64,
    pub coeffs: Vec<f64>,
}

/// `((k + 1)^e - k^e) * scale` for `k = 0..=n`, with `e = 1 - g`.
pub(crate) fn power_differences(g: f64, n: usize, scale: f64) -> Vec<f64> {
    let e = 1.0 - g;
    let mut out = Vec::with_capacity(n + 1);
    let mut prev = 0.0;
    for k in 0..=n {
        let next = libm::pow((k + 1) as f64, e);
        out.push((next - prev) * scale);
        prev = next;
    }
    out
}

/// L1 weights `a_0..a_n` for `alpha` in `(0, 1)`.
pub fn l1_weights(alpha: f64, n: usize) -> Result<QuadratureWeights, FracError> {
    Regime::Subdiffusive.check(alpha)?;
    Ok(QuadratureWeights { order: alpha, coeffs: power_differences(alpha, n, inv_gamma(2.0 - alpha)) })
}

/// L2 weights `b_0..b_n` for `beta` in `(1, 2)`; identical to `l1_weights(beta - 1, n)`.
pub fn l2_weights(beta: f64, n: usize) -> Result<QuadratureWeights, FracError> {
    Regime::Wave.check(beta)?;
    let shifted = beta - 1.0;
    Ok(QuadratureWeights { order: beta, coeffs: power_differences(shifted, n, inv_gamma(2.0 - shifted)) })
}

fn check_series(series: &TimeSeries, grid: &TimeGrid) -> Result<usize, FracError> {
    if series.values.len() > grid.len() {
        return Err(FracError::GridMismatch { found: series.values.len(), available: grid.len() });
    }
    match series.last_index() {
        0 => Err(FracError::InsufficientHistory),
        n => Ok(n),
    }
}

/// L1 approximation `delta_t^alpha v^n` at the last sample of `series`.
pub fn apply_l1(series: &TimeSeries, grid: &TimeGrid, alpha: f64) -> Result<f64, FracError> {
    let n = check_series(series, grid)?;
    let stencil = CaputoStencil::l1(alpha, n, grid.tau())?;
    Ok(stencil.apply(&series.values, n, 0.0))
}

/// L2 approximation of the order-`beta` Caputo derivative at the last sample,
/// including the `-2 b_{n-1} tau^(1 - beta) v'(0)` correction.
pub fn apply_l2(series: &TimeSeries, grid: &TimeGrid, beta: f64) -> Result<f64, FracError> {
    let slope = series.initial_slope.ok_or(FracError::MissingInitialSlope)?;
    let n = check_series(series, grid)?;
    let stencil = CaputoStencil::l2(beta, n, grid.tau())?;
    Ok(stencil.apply(&series.values, n, slope))
}

/// Caputo derivative of `t^p`: `Gamma(p + 1) / Gamma(p + 1 - order) * t^(p - order)`.
///
/// Integer powers below the derivative's ceiling are annihilated (e.g. `t` under
/// an order in `(1, 2)`), so they return zero.
pub fn caputo_monomial_exact(p: f64, order: f64, t: f64) -> Result<f64, FracError> {
    if !(order > 0.0 && order < 2.0) {
        return Err(FracError::Domain("order must lie in (0, 2)"));
    }
    if !(p >= 1.0) || p <= order - 1.0 {
        return Err(FracError::Domain("exponent must satisfy p >= 1 and p > order - 1"));
    }
    if !(t >= 0.0) {
        return Err(FracError::Domain("time must be non-negative"));
    }
    let ceiling = libm::ceil(order);
    if p == libm::floor(p) && p < ceiling {
        return Ok(0.0);
    }
    let exponent = p - order;
    if t == 0.0 {
        return if exponent > 0.0 {
            Ok(0.0)
        } else if exponent == 0.0 {
            Ok(gamma(p + 1.0))
        } else {
            Err(FracError::Domain("derivative is singular at t = 0"))
        };
    }
    Ok(gamma(p + 1.0) * inv_gamma(p + 1.0 - order) * libm::pow(t, exponent))
}

/// Applies the L1 or L2 rule with the order frozen at the evaluation point.
///
/// The rule is picked from the range of `spec`: L1 for sub-unit ranges, L2 otherwise.
pub fn apply_variable_order(
    series: &TimeSeries,
    grid: &TimeGrid,
    spec: &FractionalOrderSpec,
    at: EvalPoint<'_>,
) -> Result<f64, FracError> {
    let n = check_series(series, grid)?;
    let order = spec.evaluate(at.x, grid.t(n))?;
    match spec.range().regime() {
        Regime::Subdiffusive => apply_l1(series, grid, order),
        Regime::Wave => apply_l2(series, grid, order),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const TWO_OVER_SQRT_PI: f64 = core::f64::consts::FRAC_2_SQRT_PI;

    #[test]
    fn first_l1_weight_is_inverse_gamma() {
        let w = l1_weights(0.5, 0).unwrap();
        assert_eq!(w.coeffs.len(), 1);
        assert!((w.coeffs[0] - TWO_OVER_SQRT_PI).abs() < 1e-14);
    }

    #[test]
    fn l1_partial_sum_telescopes() {
        let w = l1_weights(0.5, 3).unwrap();
        let sum: f64 = w.coeffs.iter().sum();
        assert!((sum - 2.0 * TWO_OVER_SQRT_PI).abs() < 1e-14);
    }

    #[test]
    fn l2_weights_are_shifted_l1_weights() {
        let b = l2_weights(1.5, 40).unwrap();
        let a = l1_weights(0.5, 40).unwrap();
        assert_eq!(b.coeffs, a.coeffs);
        assert!((b.coeffs[0] - TWO_OVER_SQRT_PI).abs() < 1e-14);
    }

    #[test]
    fn l2_weight_ratio_near_order_two() {
        let b = l2_weights(1.999, 1).unwrap();
        let ratio = b.coeffs[1] / b.coeffs[0];
        assert!((ratio - (2f64.powf(0.001) - 1.0)).abs() < 1e-15);
        assert!((ratio - 6.93e-4).abs() < 1e-6);
    }

    #[test]
    fn weights_reject_orders_outside_regime() {
        assert!(matches!(l1_weights(1.2, 3), Err(FracError::WrongRegime { .. })));
        assert!(l1_weights(0.0, 3).is_err());
        assert!(l2_weights(0.7, 3).is_err());
        assert!(l2_weights(2.0, 3).is_err());
    }

    #[test]
    fn constant_series_has_zero_derivative() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let s = TimeSeries::with_slope(vec![3.0; 11], 0.0);
        assert!(apply_l1(&s, &grid, 0.3).unwrap().abs() < 1e-12);
        assert!(apply_l2(&s, &grid, 1.7).unwrap().abs() < 1e-12);
    }

    #[test]
    fn l1_is_exact_for_linear_data() {
        let grid = TimeGrid::new(1.0, 25).unwrap();
        for &alpha in &[0.1, 0.5, 0.9] {
            for n in [1, 7, 25] {
                let s = TimeSeries::sample(&grid, n, |t| t);
                let approx = apply_l1(&s, &grid, alpha).unwrap();
                let exact = caputo_monomial_exact(1.0, alpha, grid.t(n)).unwrap();
                assert!(((approx - exact) / exact).abs() < 1e-12, "alpha {alpha} n {n}");
            }
        }
    }

    #[test]
    fn l2_is_exact_for_quadratic_data() {
        let grid = TimeGrid::new(1.0, 30).unwrap();
        for &beta in &[1.1, 1.5, 1.9] {
            for n in [1, 2, 13, 30] {
                let mut s = TimeSeries::sample(&grid, n, |t| t * t);
                s.initial_slope = Some(0.0);
                let approx = apply_l2(&s, &grid, beta).unwrap();
                let exact = caputo_monomial_exact(2.0, beta, grid.t(n)).unwrap();
                assert!(((approx - exact) / exact).abs() < 1e-12, "beta {beta} n {n}");
            }
        }
    }

    #[test]
    fn l2_uses_initial_slope_on_first_step() {
        // v = t has zero Caputo derivative of order beta in (1, 2) once v'(0) = 1 is supplied.
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let s = TimeSeries::with_slope(vec![0.0, grid.tau()], 1.0);
        assert!(apply_l2(&s, &grid, 1.4).unwrap().abs() < 1e-12);
    }

    #[test]
    fn quadrature_error_paths() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let single = TimeSeries::with_slope(vec![1.0], 0.0);
        assert_eq!(apply_l1(&single, &grid, 0.5), Err(FracError::InsufficientHistory));
        assert_eq!(apply_l2(&single, &grid, 1.5), Err(FracError::InsufficientHistory));
        let no_slope = TimeSeries::new(vec![0.0, 1.0]);
        assert_eq!(apply_l2(&no_slope, &grid, 1.5), Err(FracError::MissingInitialSlope));
        let long = TimeSeries::new(vec![0.0; 9]);
        assert!(matches!(apply_l1(&long, &grid, 0.5), Err(FracError::GridMismatch { .. })));
    }

    #[test]
    fn monomial_closed_form() {
        let a = caputo_monomial_exact(3.0, 0.5, 1.0).unwrap();
        assert!((a - 1.805_406_6).abs() < 1e-7);
        let b = caputo_monomial_exact(3.0, 1.5, 1.0).unwrap();
        assert!((b - 4.513_516_7).abs() < 1e-7);
        assert_eq!(caputo_monomial_exact(3.0, 0.5, 0.0).unwrap(), 0.0);
        assert_eq!(caputo_monomial_exact(1.0, 1.5, 0.7).unwrap(), 0.0);
        assert!(caputo_monomial_exact(0.5, 0.3, 1.0).is_err());
        assert!(caputo_monomial_exact(3.0, 2.5, 1.0).is_err());
    }

    #[test]
    fn variable_order_freezes_order_at_point() {
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let s = TimeSeries::sample(&grid, 20, |t| t * t * t);
        let spec = FractionalOrderSpec::of_time(|_| 0.5, OrderRange::new(0.0, 1.0).unwrap());
        let at = EvalPoint::time_only();
        assert_eq!(apply_variable_order(&s, &grid, &spec, at).unwrap(), apply_l1(&s, &grid, 0.5).unwrap());

        let wave = FractionalOrderSpec::of_space_time(|_, _| 1.5, OrderRange::new(1.0, 2.0).unwrap());
        let mut q = TimeSeries::sample(&grid, 20, |t| t * t);
        q.initial_slope = Some(0.0);
        let got = apply_variable_order(&q, &grid, &wave, EvalPoint::at(&[0.3])).unwrap();
        let exact = 2.0 * 1f64.powf(0.5) * TWO_OVER_SQRT_PI;
        assert!((got - exact).abs() < 1e-12);
    }

    #[test]
    fn variable_order_rejects_out_of_range_values() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let s = TimeSeries::sample(&grid, 4, |t| t);
        let spec = FractionalOrderSpec::of_time(|t| 2.0 * t, OrderRange::new(0.0, 1.0).unwrap());
        assert!(matches!(
            apply_variable_order(&s, &grid, &spec, EvalPoint::time_only()),
            Err(FracError::OrderOutOfRange { .. })
        ));
    }
}
