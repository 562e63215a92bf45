//! Inertial-parameter estimators.
//!
//! [`batch`] holds the iterated batch nonlinear least-squares solver, [`ekf`]
//! the augmented-state extended Kalman filter and the batch-seeded
//! composition, and [`residuals`] the post-fit residual statistics.

pub mod batch;
pub mod ekf;
pub mod residuals;

pub use batch::{batch_least_squares, BatchConfig, BatchResult, PriorInfo};
pub use ekf::{ekf_run, ls_seeded_ekf, EkfConfig, EkfResult, SeededResult};
pub use residuals::{residual_analysis, ChannelStats, ResidualStats};

use std::f64::consts::PI;

use nalgebra::{Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{AugmentedState, Matrix8, Trajectory};
use crate::error::{Error, Result};

/// One pose measurement with its noise covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasurementRecord {
    pub t: f64,
    /// `(x, y, ψ)` in meters and radians.
    pub z: Vector3<f64>,
    pub r_cov: Matrix3<f64>,
}

impl MeasurementRecord {
    pub fn new(t: f64, z: Vector3<f64>, r_cov: Matrix3<f64>) -> Result<Self> {
        if !t.is_finite() || z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("measurement must be finite".into()));
        }
        if (r_cov - r_cov.transpose()).amax() > 1e-12 * r_cov.amax() || r_cov.cholesky().is_none() {
            return Err(Error::InvalidArgument(
                "measurement covariance must be symmetric positive definite".into(),
            ));
        }
        Ok(Self { t, z, r_cov })
    }
}

/// Diagonal pose covariance from per-channel standard deviations.
pub fn pose_covariance(std: [f64; 3]) -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(
        std[0].powi(2),
        std[1].powi(2),
        std[2].powi(2),
    ))
}

/// Pose-selection output matrix `∂H/∂x`.
pub(crate) fn pose_selection() -> SMatrix<f64, 3, 8> {
    let mut h = SMatrix::<f64, 3, 8>::zeros();
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    h[(2, 2)] = 1.0;
    h
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

pub(crate) fn check_sorted(measurements: &[MeasurementRecord]) -> Result<()> {
    if measurements.is_empty() {
        return Err(Error::InvalidArgument("no measurements".into()));
    }
    if let Some(k) = measurements.windows(2).position(|w| w[1].t < w[0].t) {
        return Err(Error::InvalidArgument(format!(
            "measurements are not time-sorted at index {}",
            k + 1
        )));
    }
    Ok(())
}

pub(crate) fn symmetrize(p: &Matrix8) -> Matrix8 {
    (p + p.transpose()) * 0.5
}

/// Positive semi-definiteness test on the correlation form of `p`, which is
/// insensitive to the wide spread of variances across states.
pub(crate) fn is_psd(p: &Matrix8) -> bool {
    let d = p.diagonal();
    if d.iter().any(|v| !v.is_finite() || *v < 0.0) || p.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let scale = d.map(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 0.0 });
    let mut corr = Matrix8::from_fn(|i, j| p[(i, j)] * scale[i] * scale[j]);
    for i in 0..8 {
        corr[(i, i)] += 1e-9;
    }
    corr.cholesky().is_some()
}

/// Ground truth attached to a dataset for error reporting.
#[derive(Clone, Debug, PartialEq)]
pub enum TruthReference {
    /// Full simulated trajectory.
    Trajectory(Trajectory),
    /// Externally measured constant parameters.
    Parameters { mass: f64, izz: f64 },
}

impl TruthReference {
    /// True `(mass, izz)` at time `t`.
    pub fn parameters_at(&self, t: f64) -> Result<(f64, f64)> {
        match self {
            TruthReference::Parameters { mass, izz } => Ok((*mass, *izz)),
            TruthReference::Trajectory(traj) => {
                let i = traj.index_of(t).ok_or_else(|| {
                    Error::InvalidArgument(format!("no truth sample at t = {t} s"))
                })?;
                Ok((traj.states[i].mass, traj.states[i].izz))
            }
        }
    }
}

/// Root-mean-square parameter errors over a whole run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterRmse {
    pub mass: f64,
    pub izz: f64,
}

/// RMS of the per-step mass and inertia errors of `means` against `truth`.
pub fn rmse(
    times: &[f64],
    means: &[AugmentedState],
    truth: &TruthReference,
) -> Result<ParameterRmse> {
    if times.len() != means.len() || times.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} times but {} estimates",
            times.len(),
            means.len()
        )));
    }
    let (mut sm, mut si) = (0.0, 0.0);
    for (t, est) in times.iter().zip(means) {
        let (m, izz) = truth.parameters_at(*t)?;
        sm += (est.mass - m).powi(2);
        si += (est.izz - izz).powi(2);
    }
    let n = times.len() as f64;
    Ok(ParameterRmse {
        mass: (sm / n).sqrt(),
        izz: (si / n).sqrt(),
    })
}
