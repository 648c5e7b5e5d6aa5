//! The experiment suite. Every problem uses the manufactured solution
//! `u = t^3 prod_k sin(x_k)` (`u = t^3` for ODEs) with zero initial and boundary data.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use fracnet_core::fracops::{gamma, FractionalOrderSpec, OrderRange};
use fracnet_core::operatormodel::FractionalPde;

use crate::config::ExperimentConfig;
use crate::error::LabError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentId {
    FodeFixed,
    FpdeFixed,
    Tfmdwe,
    FodeVarFwd,
    FodeVarInv,
    FpdeVarFwd,
    FpdeVarInv,
    FpdeXtFwd,
    FpdeXtInv,
    Highdim,
    Noisy,
    Discontinuous,
}

/// How the order enters a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Constant known orders; the branch sees the forcing.
    Fixed,
    /// Known variable order; the branch sees the order.
    Variable,
    /// Unknown order recovered from the solution; the branch sees the estimate.
    Inverse,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 12] = [
        ExperimentId::FodeFixed,
        ExperimentId::FpdeFixed,
        ExperimentId::Tfmdwe,
        ExperimentId::FodeVarFwd,
        ExperimentId::FodeVarInv,
        ExperimentId::FpdeVarFwd,
        ExperimentId::FpdeVarInv,
        ExperimentId::FpdeXtFwd,
        ExperimentId::FpdeXtInv,
        ExperimentId::Highdim,
        ExperimentId::Noisy,
        ExperimentId::Discontinuous,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::FodeFixed => "fode_fixed",
            ExperimentId::FpdeFixed => "fpde_fixed",
            ExperimentId::Tfmdwe => "tfmdwe",
            ExperimentId::FodeVarFwd => "fode_var_fwd",
            ExperimentId::FodeVarInv => "fode_var_inv",
            ExperimentId::FpdeVarFwd => "fpde_var_fwd",
            ExperimentId::FpdeVarInv => "fpde_var_inv",
            ExperimentId::FpdeXtFwd => "fpde_xt_fwd",
            ExperimentId::FpdeXtInv => "fpde_xt_inv",
            ExperimentId::Highdim => "highdim",
            ExperimentId::Noisy => "noisy",
            ExperimentId::Discontinuous => "discontinuous",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentId::FodeFixed => "D^0.5 u = f, u = t^3",
            ExperimentId::FpdeFixed => "D^0.5 u = u_xx + f on [0,pi], u = t^3 sin x",
            ExperimentId::Tfmdwe => "D^0.5 u + D^1.5 u = u_xx + f, u = t^3 sin x",
            ExperimentId::FodeVarFwd => "D^a(t) u = f, a = sin^2(t)/2, forward",
            ExperimentId::FodeVarInv => "D^a(t) u = f, recover a = sin^2(t)/2",
            ExperimentId::FpdeVarFwd => "D^a(t) u = u_xx + f, a = sin^2(t)/2, forward",
            ExperimentId::FpdeVarInv => "D^a(t) u = u_xx + f, recover a = sin^2(t)/2",
            ExperimentId::FpdeXtFwd => "D^a(x,t) u = u_xx + f, a = sin(x) t^2 / 2, forward",
            ExperimentId::FpdeXtInv => "D^a(x,t) u = u_xx + f, recover a = sin(x) t^2 / 2",
            ExperimentId::Highdim => "D^a(t) u = lap u + f on [0,pi]^d, a = sin^2(t)/2",
            ExperimentId::Noisy => "fpde_var_fwd with Gaussian noise on f",
            ExperimentId::Discontinuous => "D^a(t) u = f, recover piecewise a (t below 0.5, then 0.9)",
        }
    }

    pub fn mode(self) -> Mode {
        match self {
            ExperimentId::FodeFixed | ExperimentId::FpdeFixed | ExperimentId::Tfmdwe => Mode::Fixed,
            ExperimentId::FodeVarInv
            | ExperimentId::FpdeVarInv
            | ExperimentId::FpdeXtInv
            | ExperimentId::Discontinuous => Mode::Inverse,
            _ => Mode::Variable,
        }
    }

    pub fn default_epochs(self) -> usize {
        match self {
            ExperimentId::Highdim => 1000,
            _ => 1500,
        }
    }

    /// The inverse PDE problems need a finer field to resolve the order at early times.
    pub fn default_width(self) -> usize {
        match self {
            ExperimentId::FpdeVarInv | ExperimentId::FpdeXtInv => 64,
            _ => 32,
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self, LabError> {
        Self::ALL.into_iter().find(|id| id.as_str() == s).ok_or_else(|| LabError::UnknownExperiment(s.into()))
    }
}

pub fn half_sin_squared(t: f64) -> f64 {
    0.5 * t.sin().powi(2)
}

pub fn half_sin_x_t_squared(x: &[f64], t: f64) -> f64 {
    0.5 * x[0].sin() * t * t
}

/// `t` below 0.5, then 0.9 on `[0.5, 1]`; the right end keeps 0.9 since the
/// quadrature needs an order strictly inside `(0, 1)`.
pub fn discontinuous_order(t: f64) -> f64 {
    if t < 0.5 {
        t
    } else {
        0.9
    }
}

/// `Gamma(4) / Gamma(4 - a) t^(3 - a)`, the Caputo derivative of `t^3`.
pub fn caputo_cubic(a: f64, t: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    6.0 / gamma(4.0 - a) * t.powf(3.0 - a)
}

/// A registered problem and the orders that define it.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub id: ExperimentId,
    pub pde: FractionalPde,
}

fn cubic_sine(dim: usize, alpha: FractionalOrderSpec, beta: Option<f64>) -> FractionalPde {
    let spatial = |x: &[f64]| x.iter().map(|v| v.sin()).product::<f64>();
    let a = alpha.clone();
    let forcing = move |x: &[f64], t: f64| {
        let mut d = caputo_cubic(a.value(x, t), t);
        if let Some(b) = beta {
            d += caputo_cubic(b, t);
        }
        (d + dim as f64 * t.powi(3)) * spatial(x)
    };
    let mut pde = FractionalPde::new(dim, PI, 1.0, alpha)
        .with_forcing(forcing)
        .with_exact(move |x, t| t.powi(3) * spatial(x), move |x, t| -(dim as f64) * t.powi(3) * spatial(x));
    if let Some(b) = beta {
        pde = pde
            .with_coefficients(1.0, 1.0)
            .with_beta(FractionalOrderSpec::constant(b, OrderRange::wave()).expect("order inside (1, 2)"));
    }
    pde
}

pub fn build_experiment(config: &ExperimentConfig) -> Result<Experiment, LabError> {
    let id = config.id()?;
    let sub = OrderRange::subdiffusive();
    let constant = |a: f64| FractionalOrderSpec::constant(a, sub);
    let pde = match id {
        ExperimentId::FodeFixed => cubic_sine(0, constant(0.5)?, None),
        ExperimentId::FpdeFixed => cubic_sine(1, constant(0.5)?, None),
        ExperimentId::Tfmdwe => cubic_sine(1, constant(0.5)?, Some(1.5)),
        ExperimentId::FodeVarFwd | ExperimentId::FodeVarInv => {
            cubic_sine(0, FractionalOrderSpec::of_time(half_sin_squared, sub), None)
        }
        ExperimentId::FpdeVarFwd | ExperimentId::FpdeVarInv | ExperimentId::Noisy => {
            cubic_sine(1, FractionalOrderSpec::of_time(half_sin_squared, sub), None)
        }
        ExperimentId::FpdeXtFwd | ExperimentId::FpdeXtInv => {
            cubic_sine(1, FractionalOrderSpec::of_space_time(half_sin_x_t_squared, sub), None)
        }
        ExperimentId::Highdim => cubic_sine(config.dim, FractionalOrderSpec::of_time(half_sin_squared, sub), None),
        ExperimentId::Discontinuous => cubic_sine(0, FractionalOrderSpec::of_time(discontinuous_order, sub), None),
    };
    Ok(Experiment { id, pde })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip_and_are_unique() {
        for id in ExperimentId::ALL {
            assert_eq!(id.as_str().parse::<ExperimentId>().unwrap(), id);
        }
        let mut names: Vec<_> = ExperimentId::ALL.iter().map(|i| i.as_str()).collect();
        names.dedup();
        assert_eq!(names.len(), 12);
        assert!(matches!("nope".parse::<ExperimentId>(), Err(LabError::UnknownExperiment(_))));
    }

    #[test]
    fn forcing_matches_manufactured_solution() {
        // Half-derivative of t^3 at t = 1 is 6 / Gamma(3.5) = 1.805...
        let cfg = ExperimentConfig::for_experiment(ExperimentId::Tfmdwe);
        let e = build_experiment(&cfg).unwrap();
        let x = [0.7];
        let want = (6.0 / gamma(3.5) + 6.0 / gamma(2.5) + 1.0) * 0.7f64.sin();
        assert!(((e.pde.forcing)(&x, 1.0) - want).abs() < 1e-13);
        assert!((6.0 / gamma(3.5) - 1.805_406_667_352_820_4).abs() < 1e-12);
    }

    #[test]
    fn discontinuous_order_is_piecewise() {
        assert_eq!(discontinuous_order(0.25), 0.25);
        assert_eq!(discontinuous_order(0.5), 0.9);
        assert_eq!(discontinuous_order(1.0), 0.9);
    }
}
