//! Augmented-state extended Kalman filter.
//!
//! The mean is propagated through the nonlinear dynamics and the covariance
//! through the state transition matrix integrated on the same RK4 steps.
//! Process noise is a continuous rate matrix discretized as `Q·Δt`. Updates
//! use the Joseph form and the heading innovation is wrapped.

use nalgebra::{Matrix3, Vector3};

use super::batch::{batch_least_squares, BatchConfig, BatchResult, PriorInfo};
use super::{check_sorted, is_psd, pose_selection, symmetrize, wrap_angle, MeasurementRecord};
use super::{pose_covariance, rmse, ParameterRmse, TruthReference};
use crate::dynamics::{AugmentedState, ForceSchedule, Matrix8, Propagator, Vector8, IZZ, MASS};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EkfConfig {
    pub initial_mean: AugmentedState,
    pub initial_cov: Matrix8,
    /// Continuous process-noise rates.
    pub process_noise: Matrix8,
    pub measurement_cov: Matrix3<f64>,
}

/// Standard deviations of the default initial distribution.
pub const DEFAULT_INITIAL_STD: [f64; 8] = [
    0.1,
    0.1,
    5.0 * std::f64::consts::PI / 180.0,
    0.1,
    0.1,
    2.0 * std::f64::consts::PI / 180.0,
    1.0,
    2e-3,
];

/// Mass random-walk rate, kg²/Hz.
pub const DEFAULT_MASS_PROCESS_NOISE: f64 = 1e-4;

impl EkfConfig {
    /// Initial mean `(0, …, 0, 1 kg, 5e-3 kg·m²)`, the default initial
    /// spread, mass process noise only, and 1 cm / 1° pose noise.
    pub fn nominal() -> Self {
        let mut q = Matrix8::zeros();
        q[(MASS, MASS)] = DEFAULT_MASS_PROCESS_NOISE;
        Self {
            initial_mean: AugmentedState::at_rest(1.0, 5e-3),
            initial_cov: Matrix8::from_diagonal(&Vector8::from(DEFAULT_INITIAL_STD.map(|s| s * s))),
            process_noise: q,
            measurement_cov: pose_covariance([0.01, 0.01, 1f64.to_radians()]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.initial_mean.validate()?;
        let sym =
            |m: &Matrix8| (m - m.transpose()).amax() <= 1e-12 * m.amax().max(f64::MIN_POSITIVE);
        if !sym(&self.initial_cov) || !is_psd(&self.initial_cov) {
            return Err(Error::InvalidArgument(
                "initial covariance must be symmetric positive semi-definite".into(),
            ));
        }
        if !sym(&self.process_noise) || !is_psd(&self.process_noise) {
            return Err(Error::InvalidArgument(
                "process noise must be symmetric positive semi-definite".into(),
            ));
        }
        let r = &self.measurement_cov;
        if (r - r.transpose()).amax() > 1e-12 * r.amax() || r.cholesky().is_none() {
            return Err(Error::InvalidArgument(
                "measurement covariance must be symmetric positive definite".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EkfResult {
    pub times: Vec<f64>,
    /// Posterior means, one per measurement.
    pub means: Vec<AugmentedState>,
    /// Posterior covariances, one per measurement.
    pub covs: Vec<Matrix8>,
    pub innovations: Vec<Vector3<f64>>,
    /// Trace of the predicted covariance just before each update.
    pub prior_traces: Vec<f64>,
    pub rmse: Option<ParameterRmse>,
}

impl EkfResult {
    pub fn final_mean(&self) -> &AugmentedState {
        self.means
            .last()
            .expect("an EKF run holds at least one step")
    }

    pub fn final_cov(&self) -> &Matrix8 {
        self.covs
            .last()
            .expect("an EKF run holds at least one step")
    }

    /// Standard deviation of state `index` at every step.
    pub fn sigma(&self, index: usize) -> Vec<f64> {
        self.covs
            .iter()
            .map(|p| p[(index, index)].max(0.0).sqrt())
            .collect()
    }
}

/// Runs the filter over `measurements`, starting at the first measurement
/// time with `config.initial_mean`.
pub fn ekf_run(
    measurements: &[MeasurementRecord],
    schedule: &ForceSchedule,
    propagator: &Propagator,
    config: &EkfConfig,
    truth: Option<&TruthReference>,
) -> Result<EkfResult> {
    check_sorted(measurements)?;
    config.validate()?;
    let t0 = measurements[0].t;
    schedule.check_covers(t0, measurements[measurements.len() - 1].t)?;

    let h = pose_selection();
    let ht = h.transpose();
    let r = config.measurement_cov;
    let eye = Matrix8::identity();

    let n = measurements.len();
    let mut out = EkfResult {
        times: Vec::with_capacity(n),
        means: Vec::with_capacity(n),
        covs: Vec::with_capacity(n),
        innovations: Vec::with_capacity(n),
        prior_traces: Vec::with_capacity(n),
        rmse: None,
    };

    let mut x = config.initial_mean.to_vector();
    let mut p = config.initial_cov;
    let mut t_prev = t0;
    for (step, meas) in measurements.iter().enumerate() {
        let dt = meas.t - t_prev;
        if dt > 0.0 {
            let (xn, phi) = propagator.advance_with_stm(&x, &eye, schedule, t_prev, meas.t);
            x = xn;
            p = symmetrize(&(phi * p * phi.transpose() + config.process_noise * dt));
            if !is_psd(&p) {
                return Err(Error::NumericalFailure {
                    step,
                    reason: "predicted covariance is not positive semi-definite".into(),
                });
            }
        }
        t_prev = meas.t;
        if !(x[MASS] > 0.0 && x[IZZ] > 0.0) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure {
                step,
                reason: format!(
                    "mean left the physical domain (m = {}, izz = {})",
                    x[MASS], x[IZZ]
                ),
            });
        }
        out.prior_traces.push(p.trace());

        let mut innovation = meas.z - Vector3::new(x[0], x[1], x[2]);
        innovation[2] = wrap_angle(innovation[2]);
        let s = h * p * ht + r;
        let s_chol = s.cholesky().ok_or_else(|| Error::NumericalFailure {
            step,
            reason: "innovation covariance is not positive definite".into(),
        })?;
        let gain = (s_chol.solve(&(h * p))).transpose();
        x += gain * innovation;
        let ikh = eye - gain * h;
        p = symmetrize(&(ikh * p * ikh.transpose() + gain * r * gain.transpose()));
        if !is_psd(&p) {
            return Err(Error::NumericalFailure {
                step,
                reason: "updated covariance is not positive semi-definite".into(),
            });
        }

        out.times.push(meas.t);
        out.means.push(AugmentedState::from_vector(&x));
        out.covs.push(p);
        out.innovations.push(innovation);
    }

    if let Some(truth) = truth {
        out.rmse = Some(rmse(&out.times, &out.means, truth)?);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct SeededResult {
    pub batch: BatchResult,
    pub ekf: EkfResult,
}

/// Batch least squares over the first `seed_duration` seconds, then the EKF
/// over the entire dataset starting from the batch mean and full covariance.
///
/// The batch prior is `config`'s initial mean and covariance.
pub fn ls_seeded_ekf(
    measurements: &[MeasurementRecord],
    schedule: &ForceSchedule,
    propagator: &Propagator,
    seed_duration: f64,
    config: &EkfConfig,
    batch_config: &BatchConfig,
    truth: Option<&TruthReference>,
) -> Result<SeededResult> {
    check_sorted(measurements)?;
    if !(seed_duration > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "seed duration must be positive, got {seed_duration}"
        )));
    }
    let t0 = measurements[0].t;
    let cut = measurements.partition_point(|m| m.t <= t0 + seed_duration + 1e-9);
    if cut < 2 {
        return Err(Error::InvalidArgument(
            "seed window holds fewer than two measurements".into(),
        ));
    }
    let prior = PriorInfo::new(config.initial_mean, Vector8::zeros(), config.initial_cov)?;
    let batch = batch_least_squares(
        &measurements[..cut],
        schedule,
        propagator,
        &prior,
        batch_config,
    )?;

    let seeded = EkfConfig {
        initial_mean: batch.x0_hat,
        initial_cov: batch.p0,
        ..config.clone()
    };
    let ekf = ekf_run(measurements, schedule, propagator, &seeded, truth)?;
    Ok(SeededResult { batch, ekf })
}
