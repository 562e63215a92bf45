//! Post-fit residual statistics.

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{Error, Result};

/// A channel is declared biased when `|mean|·√N / std` reaches this.
pub const ZERO_MEAN_Z_LIMIT: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
    /// Normalized mean `|mean|·√N / std`.
    pub z: f64,
    pub zero_mean: bool,
}

/// Per-channel statistics in `(x, y, ψ)` order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ResidualStats {
    pub n: usize,
    pub channels: [ChannelStats; 3],
}

impl ResidualStats {
    pub fn all_zero_mean(&self) -> bool {
        self.channels.iter().all(|c| c.zero_mean)
    }
}

pub fn residual_analysis(residuals: &[Vector3<f64>]) -> Result<ResidualStats> {
    let n = residuals.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "residual analysis needs at least two residuals".into(),
        ));
    }
    let channels = std::array::from_fn(|c| {
        let mean = residuals.iter().map(|r| r[c]).sum::<f64>() / n as f64;
        let var = residuals.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std = var.sqrt();
        let z = if std > 0.0 {
            mean.abs() * (n as f64).sqrt() / std
        } else if mean == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        ChannelStats {
            mean,
            std,
            z,
            zero_mean: z < ZERO_MEAN_Z_LIMIT,
        }
    });
    Ok(ResidualStats { n, channels })
}
