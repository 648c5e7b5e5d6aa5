use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use fracnet_lab::artifacts::{self, write_fd_csv, write_json, write_loss_history};
use fracnet_lab::sweep::write_sweep_csv;
use fracnet_lab::{
    compare_against_fd, export_artifacts, run_experiment, sweep_hyperparameters, ExperimentConfig, ExperimentId,
    LabError, Overrides, SweepAxis,
};
use serde_json::json;

/// Environment variable naming the directory under which runs are written when `--out` is absent.
const OUT_ENV: &str = "FRACNET_OUT_DIR";
const DEFAULT_OUT: &str = "fracnet-runs";

#[derive(Parser)]
#[command(name = "fracnet", version, about = "Physics-informed operator learning for time-fractional PDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one experiment and write its artifacts.
    Run(RunArgs),
    /// Train once per value of a hyperparameter and write a CSV table.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// data_points, width or depth.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated positive values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
    /// Train a one-dimensional constant-order experiment and check it against the finite-difference solver.
    Compare(RunArgs),
    /// Print the registered experiments.
    List,
}

#[derive(Args)]
struct RunArgs {
    /// Flat TOML config file; unknown keys are rejected.
    config: Option<PathBuf>,
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise: Option<f64>,
    /// Output directory; defaults to `$FRACNET_OUT_DIR/<experiment>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig, LabError> {
        let base = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let o = Overrides {
            experiment: self.experiment.clone(),
            epochs: self.epochs,
            seed: self.seed,
            noise: self.noise,
        };
        let c = base.apply(&o);
        c.validate()?;
        Ok(c)
    }

    fn out_dir(&self, config: &ExperimentConfig, suffix: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
            root.join(format!("{}{suffix}", config.experiment))
        })
    }
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("JSON values serialize"));
}

/// Keeps the partial history of a diverged run next to where the artifacts would have gone.
fn save_partial(err: &LabError, dir: &Path) {
    if let LabError::Diverged { history, .. } = err {
        if std::fs::create_dir_all(dir).is_ok() {
            let _ = write_loss_history(&dir.join(artifacts::LOSS_HISTORY), history);
        }
    }
}

fn run(args: &RunArgs) -> Result<(), LabError> {
    let config = args.config()?;
    let dir = args.out_dir(&config, "");
    let out = run_experiment(&config).inspect_err(|e| save_partial(e, &dir))?;
    let files = export_artifacts(&out, &dir)?;
    let r = &out.report;
    print_json(&json!({
        "experiment": r.experiment,
        "epochs_run": r.epochs_run,
        "final_loss": r.final_loss.total,
        "relative_l2_error": r.relative_l2_error,
        "solution_relative_l2": r.solution_relative_l2,
        "order_relative_l2": r.order_relative_l2,
        "max_abs_error": r.max_abs_error,
        "wall_clock_s": r.wall_clock_s,
        "files": files,
    }));
    Ok(())
}

fn sweep(args: &RunArgs, axis: SweepAxis, values: &[usize]) -> Result<(), LabError> {
    let config = args.config()?;
    let dir = args.out_dir(&config, &format!("-sweep-{axis}"));
    std::fs::create_dir_all(&dir).map_err(LabError::io(&dir))?;
    let rows = sweep_hyperparameters(&config, axis, values);
    let path = dir.join("sweep.csv");
    write_sweep_csv(&path, &rows)?;
    print_json(&json!({ "axis": axis.as_str(), "rows": rows, "file": path }));
    Ok(())
}

fn compare(args: &RunArgs) -> Result<(), LabError> {
    let config = args.config()?;
    let dir = args.out_dir(&config, "-compare");
    let out = compare_against_fd(&config).inspect_err(|e| save_partial(e, &dir))?;
    let mut files = export_artifacts(&out.run, &dir)?;
    let fd_path = dir.join("field_fd.csv");
    write_fd_csv(&fd_path, &out.run.field.x, &out.run.field.t, &out.fd)?;
    let cmp_path = dir.join("comparison.json");
    write_json(&cmp_path, &out.comparison)?;
    files.extend([fd_path, cmp_path]);
    let c = &out.comparison;
    print_json(&json!({
        "experiment": c.experiment,
        "neural_vs_fd": c.neural_vs_fd,
        "neural_vs_truth": c.neural_vs_truth,
        "fd_vs_truth": c.fd_vs_truth,
        "fd_grid": [c.fd_m, c.fd_n],
        "files": files,
    }));
    Ok(())
}

fn list() {
    for id in ExperimentId::ALL {
        println!("{:<14} {:<8} {}", id.as_str(), format!("{:?}", id.mode()).to_lowercase(), id.description());
    }
}

fn fail(kind: &str, message: String) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim_end().to_string()),
    };
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Sweep { run, axis, values } => sweep(run, *axis, values),
        Command::Compare(a) => compare(a),
        Command::List => {
            list();
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e.record()).expect("error records serialize"));
            ExitCode::FAILURE
        }
    }
}
