use fracnet_core::fdsolver::{solve_forward, SolutionField, TfmdweProblem, TimeOrders};
use fracnet_core::fracops::{FractionalOrderSpec, OrderRange};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::LabError;
use crate::experiment::{run_experiment, ExperimentReport, FieldLattice, RunOutput};
use crate::registry::{build_experiment, Experiment};

/// Neural and finite-difference solutions of one problem on the neural lattice.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub experiment: String,
    pub neural_vs_fd: f64,
    pub neural_vs_truth: f64,
    pub fd_vs_truth: f64,
    pub fd_m: usize,
    pub fd_n: usize,
    pub report: ExperimentReport,
}

#[derive(Debug, Clone)]
pub struct CompareOutput {
    pub comparison: Comparison,
    pub run: RunOutput,
    /// FD values on the lattice of `run.field`.
    pub fd: Vec<f64>,
}

/// `||a - b|| / ||b||`, with `0` when both vanish.
pub fn relative_discrepancy(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    if den == 0.0 {
        if num == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        (num / den).sqrt()
    }
}

/// The finite-difference form of a one-dimensional constant-order experiment.
pub fn fd_problem(experiment: &Experiment) -> Result<TfmdweProblem, LabError> {
    let pde = &experiment.pde;
    let alpha = pde.alpha.constant_value();
    let beta = pde.beta.as_ref().map(|b| b.constant_value());
    let (Some(alpha), 1) = (alpha, pde.spatial_dim) else {
        return Err(LabError::InvalidConfig(format!(
            "compare needs a one-dimensional constant-order experiment, not `{}`",
            experiment.id
        )));
    };
    let beta = match beta {
        Some(None) => return Err(LabError::InvalidConfig("compare needs a constant beta".into())),
        Some(Some(b)) => Some(FractionalOrderSpec::constant(b, OrderRange::wave())?),
        None => None,
    };
    let orders = TimeOrders::Fractional { alpha: FractionalOrderSpec::constant(alpha, OrderRange::subdiffusive())?, beta };
    let (f, phi0, phi1, bnd) =
        (pde.forcing.clone(), pde.initial_value.clone(), pde.initial_slope.clone(), pde.boundary.clone());
    let (b0, b1, length) = (bnd.clone(), bnd, pde.length);
    Ok(TfmdweProblem::new(pde.k1, pde.k2, orders, pde.length, pde.horizon)
        .with_forcing(move |x, t| f(&[x], t))
        .with_initial_value(move |x| phi0(&[x], 0.0))
        .with_initial_slope(move |x| phi1(&[x], 0.0))
        .with_boundaries(move |t| b0(&[0.0], t), move |t| b1(&[length], t)))
}

/// Samples an FD field at the nodes of a lattice whose times are every
/// `refine`-th FD level.
fn on_lattice(fd: &SolutionField, field: &FieldLattice, refine: usize) -> Vec<f64> {
    let (h, tau) = (fd.space().h(), fd.time().tau() * refine as f64);
    field
        .x
        .iter()
        .zip(&field.t)
        .map(|(&x, &t)| fd.value((x / h).round() as usize, (t / tau).round() as usize * refine))
        .collect()
}

/// Trains the neural model, solves the same problem by finite differences with
/// `fd_time_refine` times more time steps, and compares all three fields.
pub fn compare_against_fd(config: &ExperimentConfig) -> Result<CompareOutput, LabError> {
    let experiment = build_experiment(config)?;
    let problem = fd_problem(&experiment)?;
    let run = run_experiment(config)?;
    let (fd_m, fd_n) = (config.m_intervals, config.n_steps * config.fd_time_refine);
    let field = solve_forward(&problem, fd_m, fd_n)?;
    let fd = on_lattice(&field, &run.field, config.fd_time_refine);
    let comparison = Comparison {
        experiment: experiment.id.as_str().into(),
        neural_vs_fd: relative_discrepancy(&run.field.pred, &fd),
        neural_vs_truth: relative_discrepancy(&run.field.pred, &run.field.truth),
        fd_vs_truth: relative_discrepancy(&fd, &run.field.truth),
        fd_m,
        fd_n,
        report: run.report.clone(),
    };
    Ok(CompareOutput { comparison, run, fd })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::ExperimentId;

    #[test]
    fn discrepancy_handles_zero_fields() {
        assert_eq!(relative_discrepancy(&[0.0; 3], &[0.0; 3]), 0.0);
        assert!(relative_discrepancy(&[1.0], &[0.0]).is_infinite());
        assert!((relative_discrepancy(&[1.1, 0.0], &[1.0, 0.0]) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn fd_problem_only_for_constant_one_dimensional_orders() {
        for id in ExperimentId::ALL {
            let e = build_experiment(&ExperimentConfig::for_experiment(id)).unwrap();
            let ok = matches!(id, ExperimentId::FpdeFixed | ExperimentId::Tfmdwe);
            assert_eq!(fd_problem(&e).is_ok(), ok, "{id}");
        }
    }

    #[test]
    fn fd_form_converges_to_the_manufactured_solution() {
        let cfg = ExperimentConfig::for_experiment(ExperimentId::Tfmdwe);
        let e = build_experiment(&cfg).unwrap();
        let p = fd_problem(&e).unwrap();
        let coarse = solve_forward(&p, 100, 100).unwrap();
        let fine = solve_forward(&p, 100, 800).unwrap();
        let exact = |x: f64, t: f64| t.powi(3) * x.sin();
        let err = |f: &SolutionField| fracnet_core::fdsolver::grid_error_norms(f, exact).unwrap().relative_l2;
        assert!(err(&fine) < err(&coarse));
        assert!(err(&fine) < 5e-3, "{}", err(&fine));
    }
}
