use std::time::Instant;

use fracnet_core::fracops::{OrderRange, TimeGrid};
use fracnet_core::neuralnet::Matrix;
use fracnet_core::operatormodel::{
    relative_l2_error, train_fixed_order, train_inverse_order, train_variable_order, Anchors, CollocationSet,
    DeepONetModel, ForcingMode, FractionalPde, InverseOrderParams, LossBreakdown, OrderField, SensorLayout,
    TrainConfig, TrainOutcome, TrainingData,
};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::LabError;
use crate::noise::{inject_noise, NoiseSpec};
use crate::registry::{build_experiment, Experiment, Mode};

/// One row of `loss_history.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub res: f64,
    pub ic: f64,
    pub bc: f64,
    pub data: f64,
    pub total: f64,
}

impl LossRow {
    pub fn new(epoch: usize, l: &LossBreakdown) -> Self {
        Self { epoch, res: l.res, ic: l.ic, bc: l.bc, data: l.data, total: l.total }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub mode: String,
    pub epochs_run: usize,
    pub loss_history: Vec<LossRow>,
    pub final_loss: LossRow,
    /// Headline metric: the order error for inverse runs, the solution error otherwise.
    pub relative_l2_error: f64,
    pub solution_relative_l2: f64,
    pub order_relative_l2: Option<f64>,
    pub max_abs_error: f64,
    pub wall_clock_s: f64,
    pub config: ExperimentConfig,
}

impl ExperimentReport {
    /// The report without run-to-run varying fields, for determinism checks.
    pub fn metrics(&self) -> (Vec<LossRow>, LossRow, f64, f64, Option<f64>, f64) {
        (
            self.loss_history.clone(),
            self.final_loss,
            self.relative_l2_error,
            self.solution_relative_l2,
            self.order_relative_l2,
            self.max_abs_error,
        )
    }
}

/// Values on an `(x, t)` lattice, time-major. ODE lattices use `x = 0`; for
/// `d >= 2` this is the slice with every other coordinate at `L / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldLattice {
    pub x: Vec<f64>,
    pub t: Vec<f64>,
    pub truth: Vec<f64>,
    pub pred: Vec<f64>,
}

impl FieldLattice {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn abs_err(&self) -> Vec<f64> {
        self.pred.iter().zip(&self.truth).map(|(p, t)| (p - t).abs()).collect()
    }
}

/// True and recovered orders at the points where the order is a parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderRecovery {
    pub x: Vec<f64>,
    pub t: Vec<f64>,
    pub truth: Vec<f64>,
    pub estimate: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: ExperimentReport,
    pub model: DeepONetModel,
    pub samples: Vec<f64>,
    pub field: FieldLattice,
    pub order: Option<OrderRecovery>,
}

/// Problem, data and untrained model for a config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub experiment: Experiment,
    pub data: TrainingData,
    pub orders: OrderField,
    pub model: DeepONetModel,
    pub samples: Vec<f64>,
    pub train: TrainConfig,
    pub epochs: usize,
}

fn collocation(config: &ExperimentConfig, pde: &FractionalPde, time: TimeGrid) -> CollocationSet {
    match pde.spatial_dim {
        0 => CollocationSet::time_only(time),
        1 => {
            let lines = config.m_intervals / config.line_stride + 1;
            let idx = CollocationSet::line_indices(config.m_intervals, lines);
            CollocationSet::grid_lines(pde.length, config.m_intervals, &idx, time)
        }
        d => CollocationSet::random(d, config.collocation / config.n_steps, pde.length, time, config.seed ^ 0xc011),
    }
}

fn lattice_side(m: usize) -> Result<usize, LabError> {
    let s = (m as f64).sqrt().round() as usize;
    if s * s == m {
        Ok(s)
    } else {
        Err(LabError::InvalidConfig(format!("sensor count {m} must be a perfect square for a space-time lattice")))
    }
}

/// Nearest interior line and level `n >= 1` to a sensor `(x, t)`.
fn nearest_parameter(data: &TrainingData, x: f64, t: f64) -> (usize, usize) {
    let set = &data.set;
    let j = (0..set.len())
        .filter(|&j| set.interior[j])
        .min_by(|&a, &b| (set.point(a)[0] - x).abs().total_cmp(&(set.point(b)[0] - x).abs()))
        .expect("at least one interior line");
    let n = ((t / set.time.tau()).round() as usize).clamp(1, set.time.n_steps());
    (j, n)
}

fn branch_sensors(config: &ExperimentConfig, exp: &Experiment, time: &TimeGrid) -> Result<SensorLayout, LabError> {
    let pde = &exp.pde;
    let m = config.sensors;
    let space_time = pde.spatial_dim >= 1 && (exp.id.mode() == Mode::Fixed || !pde.alpha.is_spatially_uniform());
    match exp.id.mode() {
        Mode::Inverse if pde.alpha.is_spatially_uniform() => {
            Ok(SensorLayout::from_points(1, (1..time.len()).map(|n| time.t(n)).collect())?)
        }
        _ if space_time => {
            let s = lattice_side(m)?;
            Ok(SensorLayout::lattice_midpoints(s, s, pde.length, pde.horizon))
        }
        _ => Ok(SensorLayout::midpoints(m, pde.horizon)),
    }
}

fn inverse_rows(pde: &FractionalPde, data: &TrainingData) -> usize {
    if pde.alpha.is_spatially_uniform() {
        1
    } else {
        data.set.len()
    }
}

fn inverse_branch_input(sensors: &SensorLayout, data: &TrainingData, p: &InverseOrderParams) -> Vec<f64> {
    if p.rows() == 1 {
        (1..=p.steps()).map(|n| p.order(0, n)).collect()
    } else {
        sensors.sample(|s| {
            let (j, n) = nearest_parameter(data, s[0], s[1]);
            p.order(j, n)
        })
    }
}

const INVERSE_START: f64 = 0.5;

pub fn prepare(config: &ExperimentConfig) -> Result<Setup, LabError> {
    config.validate()?;
    let experiment = build_experiment(config)?;
    let pde = &experiment.pde;
    let time = TimeGrid::new(pde.horizon, config.n_steps)?;
    let set = collocation(config, pde, time);
    let orders = OrderField::from_pde(pde, &set)?;
    let mode = if config.forcing == "analytic" { ForcingMode::Analytic } else { ForcingMode::Discrete };
    let mut data = TrainingData::new(pde, set, &orders, mode)?;
    if pde.spatial_dim >= 2 {
        data = data.with_anchors(
            Anchors::random_initial(pde, config.ic_points, config.seed ^ 0x1c),
            Anchors::random_boundary(pde, config.bc_points, config.seed ^ 0xbc),
        );
    }
    if config.use_data || experiment.id.mode() == Mode::Inverse {
        data = data.with_exact_observations(pde)?;
    }
    let noise = config.resolved_noise()?;
    if noise > 0.0 {
        data.forcing.data = inject_noise(&data.forcing.data, NoiseSpec { level: noise, seed: config.seed ^ 0x6e01 });
    }
    let sensors = branch_sensors(config, &experiment, &time)?;
    let samples = match experiment.id.mode() {
        Mode::Fixed => sensors.sample(|s| match pde.spatial_dim {
            0 => (pde.forcing)(&[], s[0]),
            _ => (pde.forcing)(&s[..1], s[1]),
        }),
        Mode::Variable if pde.alpha.is_spatially_uniform() => sensors.sample(|s| pde.alpha.value(&[], s[0])),
        Mode::Variable => sensors.sample(|s| pde.alpha.value(&s[..1], s[1])),
        Mode::Inverse => {
            let p = InverseOrderParams::new(OrderRange::subdiffusive(), inverse_rows(pde, &data), config.n_steps, INVERSE_START)?;
            inverse_branch_input(&sensors, &data, &p)
        }
    };
    let model = DeepONetModel::new(sensors, pde.domain(), config.resolved_width()?, config.depth, config.resolved_latent()?, config.seed)?;
    let epochs = config.resolved_epochs()?;
    let train = TrainConfig {
        epochs,
        lr: config.lr,
        ls_output: config.ls_output,
        order_update_every: config.order_update_every,
        inverse_warmup: config.inverse_warmup.unwrap_or(epochs / 3),
        ..TrainConfig::default()
    };
    Ok(Setup { experiment, data, orders, model, samples, train, epochs })
}

/// Builds, trains and evaluates one experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput, LabError> {
    let start = Instant::now();
    let Setup { experiment, data, orders, mut model, mut samples, train, .. } = prepare(config)?;
    let pde = &experiment.pde;
    let mut recovered = None;
    let outcome: TrainOutcome = match experiment.id.mode() {
        Mode::Fixed => train_fixed_order(&mut model, &samples, &data, &orders, &train)?,
        Mode::Variable => train_variable_order(&mut model, &samples, &data, &orders, &train)?,
        Mode::Inverse => {
            let mut p =
                InverseOrderParams::new(OrderRange::subdiffusive(), inverse_rows(pde, &data), config.n_steps, INVERSE_START)?;
            let sensors = model.sensors.clone();
            let input = |q: &InverseOrderParams| inverse_branch_input(&sensors, &data, q);
            let out = train_inverse_order(&mut model, &data, &orders, &mut p, &input, &train)?;
            samples = input(&p);
            recovered = Some(order_recovery(pde, &data, &p));
            out
        }
    };
    let field = evaluate_field(config, pde, &model, &samples)?;
    let (solution_relative_l2, max_abs_error) = solution_error(config, pde, &model, &samples, &field)?;
    let order_relative_l2 = recovered.as_ref().map(|r| relative_l2_error(&r.estimate, &r.truth)).transpose()?;
    let report = ExperimentReport {
        experiment: experiment.id.as_str().into(),
        mode: format!("{:?}", experiment.id.mode()).to_lowercase(),
        epochs_run: outcome.epochs_run,
        loss_history: outcome.history.iter().enumerate().map(|(i, l)| LossRow::new(i, l)).collect(),
        final_loss: LossRow::new(outcome.epochs_run, &outcome.final_loss),
        relative_l2_error: order_relative_l2.unwrap_or(solution_relative_l2),
        solution_relative_l2,
        order_relative_l2,
        max_abs_error,
        wall_clock_s: start.elapsed().as_secs_f64(),
        config: config.clone(),
    };
    Ok(RunOutput { report, model, samples, field, order: recovered })
}

fn order_recovery(pde: &FractionalPde, data: &TrainingData, p: &InverseOrderParams) -> OrderRecovery {
    let set = &data.set;
    let mut r = OrderRecovery { x: vec![], t: vec![], truth: vec![], estimate: vec![] };
    let rows: Vec<usize> = if p.rows() == 1 { vec![0] } else { (0..set.len()).filter(|&j| set.interior[j]).collect() };
    for row in rows {
        let x: &[f64] = if p.rows() == 1 || set.spatial_dim == 0 { &[] } else { set.point(row) };
        for n in 1..=p.steps() {
            let t = set.time.t(n);
            r.x.push(x.first().copied().unwrap_or(0.0));
            r.t.push(t);
            r.truth.push(pde.alpha.value(x, t));
            r.estimate.push(p.order(row, n));
        }
    }
    r
}

fn exact(pde: &FractionalPde) -> &fracnet_core::operatormodel::PointFn {
    pde.exact.as_ref().expect("registered problems carry a manufactured solution")
}

/// Prediction and truth on the exported `(x, t)` lattice.
pub fn evaluate_field(
    config: &ExperimentConfig,
    pde: &FractionalPde,
    model: &DeepONetModel,
    samples: &[f64],
) -> Result<FieldLattice, LabError> {
    let d = pde.spatial_dim;
    let nt = config.n_steps + 1;
    let xs: Vec<f64> = if d == 0 {
        vec![0.0]
    } else {
        (0..=config.m_intervals).map(|i| i as f64 * pde.length / config.m_intervals as f64).collect()
    };
    let mut field = FieldLattice { x: vec![], t: vec![], truth: vec![], pred: vec![] };
    let mut pts = Matrix::zeros(xs.len() * nt, d + 1);
    let mut full = vec![0.5 * pde.length; d];
    for n in 0..nt {
        let t = n as f64 * pde.horizon / config.n_steps as f64;
        for &x in &xs {
            if d > 0 {
                full[0] = x;
            }
            let r = field.x.len();
            pts.row_mut(r)[..d].copy_from_slice(&full);
            pts.set(r, d, t);
            field.x.push(x);
            field.t.push(t);
            field.truth.push(exact(pde)(&full, t));
        }
    }
    field.pred = model.predict(samples, &pts)?;
    Ok(field)
}

/// Relative L2 and max error over the whole space-time lattice (a 21-point
/// grid per axis when `d >= 2`).
fn solution_error(
    config: &ExperimentConfig,
    pde: &FractionalPde,
    model: &DeepONetModel,
    samples: &[f64],
    field: &FieldLattice,
) -> Result<(f64, f64), LabError> {
    let d = pde.spatial_dim;
    let (pred, truth) = if d < 2 {
        (field.pred.clone(), field.truth.clone())
    } else {
        const SIDE: usize = 21;
        let nt = config.n_steps + 1;
        let count = SIDE.pow(d as u32);
        let mut pts = Matrix::zeros(count * nt, d + 1);
        let mut truth = Vec::with_capacity(count * nt);
        let mut x = vec![0.0; d];
        for n in 0..nt {
            let t = n as f64 * pde.horizon / config.n_steps as f64;
            for c in 0..count {
                let mut k = c;
                for xi in x.iter_mut() {
                    *xi = (k % SIDE) as f64 * pde.length / (SIDE - 1) as f64;
                    k /= SIDE;
                }
                let r = truth.len();
                pts.row_mut(r)[..d].copy_from_slice(&x);
                pts.set(r, d, t);
                truth.push(exact(pde)(&x, t));
            }
        }
        (model.predict(samples, &pts)?, truth)
    };
    let max_abs = pred.iter().zip(&truth).map(|(p, t)| (p - t).abs()).fold(0.0, f64::max);
    Ok((relative_l2_error(&pred, &truth)?, max_abs))
}
