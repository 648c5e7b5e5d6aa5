use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::LabError;
use crate::experiment::run_experiment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// A value `s^2` sets `M = N = s`.
    DataPoints,
    Width,
    Depth,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::DataPoints => "data_points",
            SweepAxis::Width => "width",
            SweepAxis::Depth => "depth",
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &ExperimentConfig, value: usize) -> Result<ExperimentConfig, LabError> {
        if value == 0 {
            return Err(LabError::InvalidConfig("sweep values must be positive".into()));
        }
        let mut c = base.clone();
        match self {
            SweepAxis::DataPoints => {
                let side = (value as f64).sqrt().round() as usize;
                if side * side != value {
                    return Err(LabError::InvalidConfig(format!("data_points value {value} is not a perfect square")));
                }
                c.m_intervals = side;
                c.n_steps = side;
            }
            SweepAxis::Width => c.width = Some(value),
            SweepAxis::Depth => c.depth = value,
        }
        Ok(c)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [SweepAxis::DataPoints, SweepAxis::Width, SweepAxis::Depth]
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| LabError::InvalidConfig(format!("unknown sweep axis `{s}` (data_points, width, depth)")))
    }
}

/// One sweep run; failed runs keep their error message and leave the metrics empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: usize,
    pub relative_l2_error: Option<f64>,
    pub max_abs_error: Option<f64>,
    pub error: Option<String>,
}

/// One run per value at the base seed. A failing run is recorded and the sweep goes on.
pub fn sweep_hyperparameters(base: &ExperimentConfig, axis: SweepAxis, values: &[usize]) -> Vec<SweepRow> {
    values
        .iter()
        .map(|&value| match axis.apply(base, value).and_then(|c| run_experiment(&c)) {
            Ok(out) => SweepRow {
                value,
                relative_l2_error: Some(out.report.relative_l2_error),
                max_abs_error: Some(out.report.max_abs_error),
                error: None,
            },
            Err(e) => SweepRow { value, relative_l2_error: None, max_abs_error: None, error: Some(e.to_string()) },
        })
        .collect()
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), LabError> {
    let csv_err = |source| LabError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(LabError::io(path))
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>, LabError> {
    let csv_err = |source| LabError::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::ExperimentId;

    #[test]
    fn axes_parse_and_apply() {
        let base = ExperimentConfig::for_experiment(ExperimentId::FodeFixed);
        assert_eq!("width".parse::<SweepAxis>().unwrap(), SweepAxis::Width);
        assert!("lr".parse::<SweepAxis>().is_err());
        let c = SweepAxis::DataPoints.apply(&base, 2500).unwrap();
        assert_eq!((c.m_intervals, c.n_steps), (50, 50));
        assert!(SweepAxis::DataPoints.apply(&base, 50).is_err());
        assert_eq!(SweepAxis::Depth.apply(&base, 2).unwrap().depth, 2);
        assert!(SweepAxis::Width.apply(&base, 0).is_err());
    }

    #[test]
    fn failing_values_do_not_stop_the_sweep() {
        let mut base = ExperimentConfig::for_experiment(ExperimentId::FodeFixed);
        base.epochs = Some(5);
        let rows = sweep_hyperparameters(&base, SweepAxis::DataPoints, &[7, 400]);
        assert!(rows[0].error.is_some() && rows[0].relative_l2_error.is_none());
        assert!(rows[1].error.is_none() && rows[1].relative_l2_error.is_some());
    }
}
