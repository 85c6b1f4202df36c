use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;

/// Closed-form velocity fields used to check solver accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyticField {
    /// `v = 0`
    Zero,
    /// `v = c`
    Constant(f32),
    /// `v = -z`
    LinearDecay,
    /// `v = t`
    TimePoly,
}

impl AnalyticField {
    pub fn velocity(&self, z: &Tensor, t: f32) -> Tensor {
        match *self {
            AnalyticField::Zero => Tensor::zeros(z.shape()),
            AnalyticField::Constant(c) => Tensor::full(z.shape(), c),
            AnalyticField::LinearDecay => z.scale(-1.0),
            AnalyticField::TimePoly => Tensor::full(z.shape(), t),
        }
    }

    /// Exact solution at `t_end` of the ODE `dz/dt = v(z, t)` started from
    /// `z` at `t_start`, evaluated in f64.
    pub fn exact(&self, z: &Tensor, t_start: f64, t_end: f64) -> Tensor {
        let dt = t_end - t_start;
        match *self {
            AnalyticField::Zero => z.clone(),
            AnalyticField::Constant(c) => z.map(|v| (f64::from(v) + f64::from(c) * dt) as f32),
            AnalyticField::LinearDecay => {
                let factor = (-dt).exp();
                z.map(|v| (f64::from(v) * factor) as f32)
            }
            AnalyticField::TimePoly => {
                let shift = 0.5 * (t_end * t_end - t_start * t_start);
                z.map(|v| (f64::from(v) + shift) as f32)
            }
        }
    }
}
