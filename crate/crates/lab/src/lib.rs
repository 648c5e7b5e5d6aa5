//! Experiment harness around `fracnet-core`: problem registry, configuration,
//! noise injection, finite-difference cross-checks, sweeps and artifact export.

pub mod artifacts;
pub mod compare;
pub mod config;
pub mod error;
pub mod experiment;
pub mod noise;
pub mod registry;
pub mod sweep;

pub use artifacts::{export_artifacts, load_model};
pub use compare::{compare_against_fd, Comparison, CompareOutput};
pub use config::{ExperimentConfig, Overrides};
pub use error::LabError;
pub use experiment::{run_experiment, ExperimentReport, RunOutput};
pub use noise::{inject_noise, NoiseSpec};
pub use registry::{ExperimentId, Mode};
pub use sweep::{sweep_hyperparameters, SweepAxis, SweepRow};
