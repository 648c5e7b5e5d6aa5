use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::LabError;
use crate::registry::ExperimentId;

/// Flat run configuration. Every key is optional in the file; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: String,
    /// Spatial intervals `M` of the evaluation lattice.
    pub m_intervals: usize,
    /// Time steps `N`.
    pub n_steps: usize,
    /// Branch sensor count `m`; a perfect square when sensors form a space-time lattice.
    pub sensors: usize,
    /// Every `line_stride`-th lattice node carries a collocation line (1-D problems).
    pub line_stride: usize,
    /// Hidden width and latent size; per experiment when absent.
    pub width: Option<usize>,
    pub depth: usize,
    pub latent: Option<usize>,
    /// Defaults per experiment when absent.
    pub epochs: Option<usize>,
    pub lr: f64,
    pub seed: u64,
    /// Forcing noise level in `[0, 1]`; defaults to 0.5 for `noisy` and 0 otherwise.
    pub noise: Option<f64>,
    /// Spatial dimension of the high-dimensional problem.
    pub dim: usize,
    /// Residual points for `dim >= 2` (random spatial points times time levels).
    pub collocation: usize,
    pub ic_points: usize,
    pub bc_points: usize,
    /// `discrete` or `analytic`.
    pub forcing: String,
    /// Include the solution-misfit term on the collocation lines.
    pub use_data: bool,
    pub ls_output: bool,
    pub order_update_every: usize,
    /// Epochs fitting the observations alone before inverse order updates; a third of the epochs when absent.
    pub inverse_warmup: Option<usize>,
    /// Time refinement factor of the reference finite-difference solve in `compare`.
    pub fd_time_refine: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: "fpde_fixed".into(),
            m_intervals: 100,
            n_steps: 100,
            sensors: 100,
            line_stride: 4,
            width: None,
            depth: 3,
            latent: None,
            epochs: None,
            lr: 3e-3,
            seed: 0,
            noise: None,
            dim: 2,
            collocation: 5000,
            ic_points: 5000,
            bc_points: 5000,
            forcing: "discrete".into(),
            use_data: true,
            ls_output: true,
            order_update_every: 10,
            inverse_warmup: None,
            fd_time_refine: 8,
        }
    }
}

/// Command-line overrides applied on top of a file or the defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub experiment: Option<String>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub noise: Option<f64>,
}

impl ExperimentConfig {
    pub fn for_experiment(id: ExperimentId) -> Self {
        Self { experiment: id.as_str().into(), ..Self::default() }
    }

    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self, LabError> {
        toml::from_str(text).map_err(|e| LabError::ConfigParse { path: path.to_path_buf(), source: Box::new(e) })
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path).map_err(LabError::io(path))?;
        Self::from_toml_str(&text, path)
    }

    pub fn apply(mut self, o: &Overrides) -> Self {
        if let Some(e) = &o.experiment {
            self.experiment = e.clone();
        }
        if o.epochs.is_some() {
            self.epochs = o.epochs;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if o.noise.is_some() {
            self.noise = o.noise;
        }
        self
    }

    pub fn id(&self) -> Result<ExperimentId, LabError> {
        ExperimentId::from_str(&self.experiment)
    }

    pub fn resolved_epochs(&self) -> Result<usize, LabError> {
        Ok(self.epochs.unwrap_or(self.id()?.default_epochs()))
    }

    pub fn resolved_width(&self) -> Result<usize, LabError> {
        Ok(self.width.unwrap_or(self.id()?.default_width()))
    }

    pub fn resolved_latent(&self) -> Result<usize, LabError> {
        Ok(self.latent.unwrap_or(self.id()?.default_width()))
    }

    pub fn resolved_noise(&self) -> Result<f64, LabError> {
        Ok(self.noise.unwrap_or(if self.id()? == ExperimentId::Noisy { 0.5 } else { 0.0 }))
    }

    pub fn validate(&self) -> Result<(), LabError> {
        let id = self.id()?;
        let bad = |msg: &str| Err(LabError::InvalidConfig(msg.into()));
        if self.m_intervals < 4 || self.n_steps < 2 {
            return bad("m_intervals must be >= 4 and n_steps >= 2");
        }
        if [self.sensors, self.line_stride, self.resolved_width()?, self.depth, self.resolved_latent()?, self.fd_time_refine].contains(&0) {
            return bad("sizes must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..=1.0).contains(&self.resolved_noise()?) {
            return bad("noise must lie in [0, 1]");
        }
        if self.forcing != "discrete" && self.forcing != "analytic" {
            return bad("forcing must be `discrete` or `analytic`");
        }
        if id == ExperimentId::Highdim && (self.dim < 2 || self.collocation < self.n_steps) {
            return bad("highdim needs dim >= 2 and at least one collocation point per time step");
        }
        Ok(())
    }
}
