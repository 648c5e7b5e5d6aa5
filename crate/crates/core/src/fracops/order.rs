use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use super::FracError;

/// Which quadrature applies to an order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Orders in `(0, 1)`, L1 rule.
    Subdiffusive,
    /// Orders in `(1, 2)`, L2 rule.
    Wave,
}

impl Regime {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            Regime::Subdiffusive => (0.0, 1.0),
            Regime::Wave => (1.0, 2.0),
        }
    }

    pub fn check(self, order: f64) -> Result<(), FracError> {
        let (lo, hi) = self.bounds();
        if order > lo && order < hi {
            Ok(())
        } else {
            Err(FracError::WrongRegime { order, regime: self })
        }
    }
}

/// Open interval `(lo, hi)` that every evaluated order must fall in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderRange {
    lo: f64,
    hi: f64,
}

impl OrderRange {
    /// Ranges must sit inside `(0, 1)` or inside `(1, 2)`.
    pub fn new(lo: f64, hi: f64) -> Result<Self, FracError> {
        let sub = lo >= 0.0 && hi <= 1.0;
        let wave = lo >= 1.0 && hi <= 2.0;
        if lo < hi && (sub || wave) {
            Ok(Self { lo, hi })
        } else {
            Err(FracError::InvalidRange { lo, hi })
        }
    }

    pub fn subdiffusive() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn wave() -> Self {
        Self { lo: 1.0, hi: 2.0 }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn regime(&self) -> Regime {
        if self.hi <= 1.0 {
            Regime::Subdiffusive
        } else {
            Regime::Wave
        }
    }

    pub fn contains(&self, order: f64) -> bool {
        order > self.lo && order < self.hi
    }

    pub fn check(&self, order: f64) -> Result<f64, FracError> {
        if self.contains(order) {
            Ok(order)
        } else {
            Err(FracError::OrderOutOfRange { order, lo: self.lo, hi: self.hi })
        }
    }

    /// Maps a raw real into the open range via a logistic squash.
    pub fn squash(&self, raw: f64) -> f64 {
        self.lo + (self.hi - self.lo) / (1.0 + libm::exp(-raw))
    }

    /// Inverse of [`squash`](Self::squash); `order` must be strictly inside.
    pub fn unsquash(&self, order: f64) -> f64 {
        let s = (order - self.lo) / (self.hi - self.lo);
        libm::log(s / (1.0 - s))
    }
}

/// Order as a function of spatial coordinates and time.
pub type OrderFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// Piecewise-linear order profile over sensor times, clamped outside them.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorOrder {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl SensorOrder {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self, FracError> {
        if times.is_empty() || times.len() != values.len() {
            return Err(FracError::Domain("sensor times and values must be non-empty and equal length"));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(FracError::Domain("sensor times must be strictly increasing"));
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn at(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        // First sensor strictly after t.
        let j = self.times.partition_point(|&s| s <= t);
        let (t0, t1) = (self.times[j - 1], self.times[j]);
        let w = (t - t0) / (t1 - t0);
        self.values[j - 1] * (1.0 - w) + self.values[j] * w
    }
}

#[derive(Clone)]
pub enum OrderKind {
    Constant(f64),
    OfTime(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    OfSpaceTime(OrderFn),
    Sensors(SensorOrder),
}

impl fmt::Debug for OrderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrderKind::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            OrderKind::OfTime(_) => f.write_str("OfTime(..)"),
            OrderKind::OfSpaceTime(_) => f.write_str("OfSpaceTime(..)"),
            OrderKind::Sensors(s) => f.debug_tuple("Sensors").field(s).finish(),
        }
    }
}

/// A fractional order (constant or varying) together with its admissible range.
#[derive(Debug, Clone)]
pub struct FractionalOrderSpec {
    kind: OrderKind,
    range: OrderRange,
}

impl FractionalOrderSpec {
    pub fn constant(order: f64, range: OrderRange) -> Result<Self, FracError> {
        range.check(order)?;
        Ok(Self { kind: OrderKind::Constant(order), range })
    }

    pub fn of_time(f: impl Fn(f64) -> f64 + Send + Sync + 'static, range: OrderRange) -> Self {
        Self { kind: OrderKind::OfTime(Arc::new(f)), range }
    }

    pub fn of_space_time(f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static, range: OrderRange) -> Self {
        Self { kind: OrderKind::OfSpaceTime(Arc::new(f)), range }
    }

    pub fn sensors(profile: SensorOrder, range: OrderRange) -> Self {
        Self { kind: OrderKind::Sensors(profile), range }
    }

    pub fn kind(&self) -> &OrderKind {
        &self.kind
    }

    pub fn range(&self) -> OrderRange {
        self.range
    }

    pub fn constant_value(&self) -> Option<f64> {
        match self.kind {
            OrderKind::Constant(v) => Some(v),
            _ => None,
        }
    }

    /// True when the order does not depend on the spatial coordinate.
    pub fn is_spatially_uniform(&self) -> bool {
        !matches!(self.kind, OrderKind::OfSpaceTime(_))
    }

    /// Raw order value without the range check.
    pub fn value(&self, x: &[f64], t: f64) -> f64 {
        match &self.kind {
            OrderKind::Constant(v) => *v,
            OrderKind::OfTime(f) => f(t),
            OrderKind::OfSpaceTime(f) => f(x, t),
            OrderKind::Sensors(s) => s.at(t),
        }
    }

    pub fn evaluate(&self, x: &[f64], t: f64) -> Result<f64, FracError> {
        self.range.check(self.value(x, t))
    }
}

/// Spatial location at which a variable order is evaluated (time comes from the series).
#[derive(Debug, Clone, Copy)]
pub struct EvalPoint<'a> {
    pub x: &'a [f64],
}

impl<'a> EvalPoint<'a> {
    pub fn at(x: &'a [f64]) -> Self {
        Self { x }
    }

    pub fn time_only() -> EvalPoint<'static> {
        EvalPoint { x: &[] }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn ranges_must_sit_inside_one_regime() {
        assert!(OrderRange::new(0.0, 1.0).is_ok());
        assert!(OrderRange::new(1.2, 1.8).is_ok());
        assert!(OrderRange::new(0.5, 1.5).is_err());
        assert!(OrderRange::new(0.6, 0.4).is_err());
        assert_eq!(OrderRange::new(1.0, 2.0).unwrap().regime(), Regime::Wave);
    }

    #[test]
    fn squash_round_trips_and_stays_inside() {
        let r = OrderRange::new(0.0, 1.0).unwrap();
        for raw in [-30.0, -3.0, 0.0, 2.5, 30.0] {
            let v = r.squash(raw);
            assert!((0.0..=1.0).contains(&v));
            if raw.abs() < 20.0 {
                assert!((r.unsquash(v) - raw).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sensor_profile_interpolates_linearly() {
        let s = SensorOrder::new(vec![0.0, 0.5, 1.0], vec![0.1, 0.3, 0.2]).unwrap();
        assert_eq!(s.at(-1.0), 0.1);
        assert!((s.at(0.25) - 0.2).abs() < 1e-15);
        assert_eq!(s.at(0.5), 0.3);
        assert!((s.at(0.75) - 0.25).abs() < 1e-15);
        assert_eq!(s.at(2.0), 0.2);
        assert!(SensorOrder::new(vec![0.0, 0.0], vec![0.1, 0.1]).is_err());
    }

    #[test]
    fn constant_spec_checks_range() {
        assert!(FractionalOrderSpec::constant(1.5, OrderRange::subdiffusive()).is_err());
        let spec = FractionalOrderSpec::constant(0.5, OrderRange::subdiffusive()).unwrap();
        assert_eq!(spec.evaluate(&[], 0.3).unwrap(), 0.5);
    }
}
