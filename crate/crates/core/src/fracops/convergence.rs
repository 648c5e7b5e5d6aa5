use super::FracError;

/// Result of a refinement-study fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConvergenceFit {
    /// Some level reproduced the exact value; there is nothing to fit.
    Exact,
    /// Least-squares slope of `log(error)` against `log(tau)`.
    Order(f64),
}

impl ConvergenceFit {
    pub fn order(self) -> Option<f64> {
        match self {
            ConvergenceFit::Order(p) => Some(p),
            ConvergenceFit::Exact => None,
        }
    }
}

/// Fits the observed order from `(tau, error)` pairs with strictly decreasing `tau`.
pub fn estimate_convergence_order(errors_by_tau: &[(f64, f64)]) -> Result<ConvergenceFit, FracError> {
    if errors_by_tau.len() < 2 {
        return Err(FracError::Domain("need at least two refinement levels"));
    }
    if errors_by_tau.windows(2).any(|w| !(w[1].0 < w[0].0)) || errors_by_tau.iter().any(|p| !(p.0 > 0.0)) {
        return Err(FracError::Domain("step sizes must be positive and strictly decreasing"));
    }
    if errors_by_tau.iter().any(|p| p.1 < 0.0 || !p.1.is_finite()) {
        return Err(FracError::Domain("errors must be finite and non-negative"));
    }
    if errors_by_tau.iter().any(|p| p.1 == 0.0) {
        return Ok(ConvergenceFit::Exact);
    }
    let n = errors_by_tau.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(tau, err) in errors_by_tau {
        let (x, y) = (libm::log(tau), libm::log(err));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    Ok(ConvergenceFit::Order((n * sxy - sx * sy) / (n * sxx - sx * sx)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halving_errors_is_first_order() {
        let data = [(0.1, 0.4), (0.05, 0.2), (0.025, 0.1), (0.0125, 0.05)];
        let p = estimate_convergence_order(&data).unwrap().order().unwrap();
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_error_flags_exactness() {
        let data = [(0.1, 1e-3), (0.05, 0.0)];
        assert_eq!(estimate_convergence_order(&data).unwrap(), ConvergenceFit::Exact);
    }

    #[test]
    fn rejects_bad_ladders() {
        assert!(estimate_convergence_order(&[(0.1, 1.0)]).is_err());
        assert!(estimate_convergence_order(&[(0.1, 1.0), (0.2, 0.5)]).is_err());
        assert!(estimate_convergence_order(&[(0.1, -1.0), (0.05, 0.5)]).is_err());
    }
}
