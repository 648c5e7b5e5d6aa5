//! Physics-informed DeepONet for fractional diffusion(-wave) equations.
//!
//! `G(u)(y) = sum_i b_i(u) t_i(y)`: the branch net encodes an input function
//! sampled at fixed sensors, the trunk net encodes the query `y = (x, t)`.
//! The residual replaces the Caputo derivatives by the L1/L2 quadratures
//! applied along each collocation line's full time history; spatial second
//! derivatives are exact network derivatives.

mod data;
mod loss;
mod train;

pub use data::{
    discrete_forcing, Anchors, CollocationSet, ForcingMode, FractionalPde, OrderField, OrderValues, PointFn,
    SensorLayout, TrainingData,
};
pub use loss::{
    boundary_and_initial_losses, data_loss, evaluate_losses, relative_l2_error, residual_loss, LossBreakdown,
};
pub use train::{
    inverse_order_gradient, train_fixed_order, train_inverse_order, train_variable_order, InverseOrderParams,
    TrainConfig, TrainOutcome,
};

use alloc::vec::Vec;

use thiserror::Error;

use crate::fracops::FracError;
use crate::neuralnet::{forward, init_params, DenseNetworkConfig, NeuralError, ParameterSet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OperatorError {
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Order(#[from] FracError),
    #[error("contract violation: {0}")]
    Contract(&'static str),
    #[error("reference field is identically zero; relative error undefined")]
    ZeroReference,
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize, history: Vec<LossBreakdown> },
    #[error("least-squares system is singular")]
    Singular,
}

/// Space-time box `[0, L]^d x [0, T]` the trunk is defined on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub spatial_dim: usize,
    pub length: f64,
    pub horizon: f64,
}

impl Domain {
    /// Maps a point `(x_1..x_d, t)` into `[-1, 1]^(d+1)`.
    pub fn normalize_into(&self, point: &[f64], out: &mut [f64]) {
        let d = self.spatial_dim;
        for k in 0..d {
            out[k] = 2.0 * point[k] / self.length - 1.0;
        }
        out[d] = 2.0 * point[d] / self.horizon - 1.0;
    }

    /// Factor turning derivatives in normalized coordinates into physical ones.
    pub fn space_scale(&self) -> f64 {
        2.0 / self.length
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepONetModel {
    pub branch_config: DenseNetworkConfig,
    pub branch: ParameterSet,
    pub trunk_config: DenseNetworkConfig,
    pub trunk: ParameterSet,
    pub sensors: SensorLayout,
    pub domain: Domain,
}

impl DeepONetModel {
    /// Branch `m -> q` and trunk `d + 1 -> q`, both `width x depth` tanh nets.
    pub fn new(
        sensors: SensorLayout,
        domain: Domain,
        width: usize,
        depth: usize,
        latent: usize,
        seed: u64,
    ) -> Result<Self, OperatorError> {
        let branch_config = DenseNetworkConfig::new(sensors.len(), latent, width, depth);
        let trunk_config = DenseNetworkConfig::new(domain.spatial_dim + 1, latent, width, depth);
        let branch = init_params(&branch_config, seed)?;
        let trunk = init_params(&trunk_config, seed.wrapping_add(0x9e37_79b9_7f4a_7c15))?;
        Ok(Self { branch_config, branch, trunk_config, trunk, sensors, domain })
    }

    pub fn latent(&self) -> usize {
        self.trunk_config.output_dim
    }

    pub fn branch_output(&self, samples: &[f64]) -> Result<Vec<f64>, OperatorError> {
        if samples.len() != self.sensors.len() {
            return Err(NeuralError::DimensionMismatch { expected: self.sensors.len(), found: samples.len() }.into());
        }
        Ok(forward(&self.branch, &self.branch_config, samples)?)
    }

    pub fn trunk_output(&self, y: &[f64]) -> Result<Vec<f64>, OperatorError> {
        if y.len() != self.domain.spatial_dim + 1 {
            return Err(NeuralError::DimensionMismatch { expected: self.domain.spatial_dim + 1, found: y.len() }.into());
        }
        let mut z = alloc::vec![0.0; y.len()];
        self.domain.normalize_into(y, &mut z);
        Ok(forward(&self.trunk, &self.trunk_config, &z)?)
    }

    pub fn param_count(&self) -> usize {
        self.branch.len() + self.trunk.len()
    }

    /// Branch parameters followed by trunk parameters.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.branch.flatten();
        v.extend(self.trunk.flatten());
        v
    }

    pub fn assign(&mut self, flat: &[f64]) -> Result<(), OperatorError> {
        let nb = self.branch.len();
        if flat.len() != nb + self.trunk.len() {
            return Err(NeuralError::DimensionMismatch { expected: nb + self.trunk.len(), found: flat.len() }.into());
        }
        self.branch.assign(&flat[..nb])?;
        self.trunk.assign(&flat[nb..])?;
        Ok(())
    }
}

/// Merge of branch and trunk outputs, `sum_i b_i t_i`.
pub fn merge(branch: &[f64], trunk: &[f64]) -> f64 {
    branch.iter().zip(trunk).map(|(b, t)| b * t).sum()
}

/// `G(u)(y)` for sensor samples `u` and query `y = (x.., t)`.
pub fn deeponet_forward(model: &DeepONetModel, samples: &[f64], y: &[f64]) -> Result<f64, OperatorError> {
    Ok(merge(&model.branch_output(samples)?, &model.trunk_output(y)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> DeepONetModel {
        DeepONetModel::new(
            SensorLayout::midpoints(4, 1.0),
            Domain { spatial_dim: 1, length: 3.0, horizon: 1.0 },
            6,
            2,
            5,
            3,
        )
        .unwrap()
    }

    #[test]
    fn zero_branch_gives_zero_prediction() {
        let mut m = model();
        let last = m.branch.layers.len() - 1;
        m.branch.layers[last].w.data.iter_mut().for_each(|w| *w = 0.0);
        for y in [[0.0, 0.0], [1.5, 0.3], [3.0, 1.0]] {
            assert_eq!(deeponet_forward(&m, &[0.1, 0.2, 0.3, 0.4], &y).unwrap(), 0.0);
        }
    }

    #[test]
    fn unit_latent_with_unit_branch_returns_trunk() {
        let mut m = DeepONetModel::new(
            SensorLayout::midpoints(2, 1.0),
            Domain { spatial_dim: 1, length: 1.0, horizon: 1.0 },
            4,
            1,
            1,
            9,
        )
        .unwrap();
        let last = m.branch.layers.len() - 1;
        m.branch.layers[last].w.data.iter_mut().for_each(|w| *w = 0.0);
        m.branch.layers[last].b[0] = 1.0;
        let y = [0.25, 0.5];
        assert_eq!(deeponet_forward(&m, &[1.0, 2.0], &y).unwrap(), m.trunk_output(&y).unwrap()[0]);
    }

    #[test]
    fn merge_is_bilinear() {
        let m = model();
        let b = m.branch_output(&[0.3, 0.1, -0.2, 0.5]).unwrap();
        let t = m.trunk_output(&[1.0, 0.4]).unwrap();
        let b2: Vec<f64> = b.iter().map(|v| 2.0 * v).collect();
        let t3: Vec<f64> = t.iter().map(|v| -3.0 * v).collect();
        let base = merge(&b, &t);
        assert!((merge(&b2, &t) - 2.0 * base).abs() < 1e-14);
        assert!((merge(&b, &t3) + 3.0 * base).abs() < 1e-14);
    }

    #[test]
    fn dimension_mismatches_are_reported() {
        let m = model();
        assert!(deeponet_forward(&m, &[0.0; 3], &[0.0, 0.0]).is_err());
        assert!(deeponet_forward(&m, &[0.0; 4], &[0.0]).is_err());
        assert!(m.clone().assign(&[0.0; 3]).is_err());
    }
}
