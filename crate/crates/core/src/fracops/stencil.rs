use alloc::vec::Vec;

use super::{digamma, inv_gamma, power_differences, FracError, Regime};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StencilKind {
    L1,
    L2,
}

/// Precomputed L1 or L2 weights for one order, reusable for every level `n <= n_max`.
#[derive(Debug, Clone)]
pub struct CaputoStencil {
    kind: StencilKind,
    order: f64,
    tau: f64,
    scale: f64,
    weights: Vec<f64>,
}

impl CaputoStencil {
    pub fn l1(alpha: f64, n_max: usize, tau: f64) -> Result<Self, FracError> {
        Regime::Subdiffusive.check(alpha)?;
        Ok(Self::build(StencilKind::L1, alpha, n_max, tau))
    }

    pub fn l2(beta: f64, n_max: usize, tau: f64) -> Result<Self, FracError> {
        Regime::Wave.check(beta)?;
        Ok(Self::build(StencilKind::L2, beta, n_max, tau))
    }

    pub fn for_regime(regime: Regime, order: f64, n_max: usize, tau: f64) -> Result<Self, FracError> {
        match regime {
            Regime::Subdiffusive => Self::l1(order, n_max, tau),
            Regime::Wave => Self::l2(order, n_max, tau),
        }
    }

    fn build(kind: StencilKind, order: f64, n_max: usize, tau: f64) -> Self {
        let g = Self::shifted(kind, order);
        let weights = power_differences(g, n_max, inv_gamma(2.0 - g));
        Self { kind, order, tau, scale: libm::pow(tau, -order), weights }
    }

    fn shifted(kind: StencilKind, order: f64) -> f64 {
        match kind {
            StencilKind::L1 => order,
            StencilKind::L2 => order - 1.0,
        }
    }

    pub fn kind(&self) -> StencilKind {
        self.kind
    }

    pub fn order(&self) -> f64 {
        self.order
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Largest level this stencil can be applied at.
    pub fn n_max(&self) -> usize {
        self.weights.len() - 1
    }

    /// Derivative approximation at level `n` from `values[0..=n]`; `slope` is
    /// `v'(0)` and only enters the L2 rule.
    pub fn apply(&self, values: &[f64], n: usize, slope: f64) -> f64 {
        evaluate(self.kind, &self.weights, self.scale, self.tau, values, n, slope)
    }

    /// Derivative of [`apply`](Self::apply) with respect to the order.
    pub fn order_sensitivity(&self, values: &[f64], n: usize, slope: f64) -> f64 {
        let g = Self::shifted(self.kind, self.order);
        let ig = inv_gamma(2.0 - g);
        let psi = digamma(2.0 - g);
        let e = 1.0 - g;
        let dweights: Vec<f64> = (0..=n)
            .map(|k| {
                let k1 = (k + 1) as f64;
                let hi = -libm::log(k1) * libm::pow(k1, e);
                let lo = if k == 0 { 0.0 } else { -libm::log(k as f64) * libm::pow(k as f64, e) };
                (hi - lo) * ig + self.weights[k] * psi
            })
            .collect();
        let dscale = -libm::log(self.tau) * self.scale;
        evaluate(self.kind, &dweights, self.scale, self.tau, values, n, slope)
            + evaluate(self.kind, &self.weights, dscale, self.tau, values, n, slope)
    }

    /// Coefficients `r_k` with `apply(v, n, 0) = sum_k r_k v^k`, written to `out[0..=n]`.
    pub fn row_into(&self, n: usize, out: &mut [f64]) {
        let w = &self.weights;
        let s = self.scale;
        out[..=n].iter_mut().for_each(|r| *r = 0.0);
        if n == 0 {
            return;
        }
        match self.kind {
            StencilKind::L1 => {
                out[n] = w[0] * s;
                for k in 1..n {
                    out[k] = -(w[n - k - 1] - w[n - k]) * s;
                }
                out[0] = -w[n - 1] * s;
            }
            StencilKind::L2 => {
                for k in 2..=n {
                    let c = w[n - k] * s;
                    out[k] += c;
                    out[k - 1] -= 2.0 * c;
                    out[k - 2] += c;
                }
                out[1] += 2.0 * w[n - 1] * s;
                out[0] -= 2.0 * w[n - 1] * s;
            }
        }
    }

    /// Coefficient multiplying `v'(0)` at level `n` (zero for L1).
    pub fn slope_coeff(&self, n: usize) -> f64 {
        match self.kind {
            StencilKind::L1 => 0.0,
            StencilKind::L2 if n == 0 => 0.0,
            StencilKind::L2 => -2.0 * self.weights[n - 1] * self.tau * self.scale,
        }
    }
}

fn evaluate(kind: StencilKind, w: &[f64], scale: f64, tau: f64, v: &[f64], n: usize, slope: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    match kind {
        StencilKind::L1 => {
            // Difference form: constants cancel exactly instead of through the weights.
            let mut acc = 0.0;
            for k in 1..=n {
                acc += w[n - k] * (v[k] - v[k - 1]);
            }
            acc * scale
        }
        StencilKind::L2 => {
            let mut acc = 0.0;
            for k in 2..=n {
                acc += w[n - k] * (v[k] - 2.0 * v[k - 1] + v[k - 2]);
            }
            acc += 2.0 * w[n - 1] * (v[1] - v[0]);
            acc -= 2.0 * w[n - 1] * tau * slope;
            acc * scale
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sample(n: usize, tau: f64, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..=n).map(|k| f(k as f64 * tau)).collect()
    }

    #[test]
    fn rows_reproduce_direct_application() {
        let tau = 0.05;
        let v = sample(20, tau, |t| libm::sin(3.0 * t) + t * t);
        for st in [CaputoStencil::l1(0.37, 20, tau).unwrap(), CaputoStencil::l2(1.61, 20, tau).unwrap()] {
            let mut row = vec![0.0; 21];
            for n in 1..=20 {
                st.row_into(n, &mut row);
                let via_row: f64 = row[..=n].iter().zip(&v).map(|(r, x)| r * x).sum::<f64>() + st.slope_coeff(n) * 3.0;
                let direct = st.apply(&v, n, 3.0);
                assert!((via_row - direct).abs() < 1e-10 * direct.abs().max(1.0), "{:?} n {n}", st.kind());
            }
        }
    }

    #[test]
    fn order_sensitivity_matches_central_difference() {
        let tau = 0.02;
        let v = sample(30, tau, |t| t * t * t + 0.5 * t);
        for (kind, order) in [(Regime::Subdiffusive, 0.43), (Regime::Wave, 1.27)] {
            let st = CaputoStencil::for_regime(kind, order, 30, tau).unwrap();
            let h = 1e-6;
            let up = CaputoStencil::for_regime(kind, order + h, 30, tau).unwrap();
            let dn = CaputoStencil::for_regime(kind, order - h, 30, tau).unwrap();
            for n in [1, 2, 9, 30] {
                let fd = (up.apply(&v, n, 0.5) - dn.apply(&v, n, 0.5)) / (2.0 * h);
                let an = st.order_sensitivity(&v, n, 0.5);
                assert!((fd - an).abs() < 1e-6 * an.abs().max(1.0), "{kind:?} n {n}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn first_level_reduces_to_single_difference() {
        let tau = 0.1;
        let st = CaputoStencil::l1(0.5, 4, tau).unwrap();
        let v = [1.0, 1.3];
        let expected = (v[1] - v[0]) * st.weights()[0] * tau.powf(-0.5);
        assert!((st.apply(&v, 1, 0.0) - expected).abs() < 1e-14);
    }
}
