//! Iterated batch nonlinear least squares on the augmented state.
//!
//! Each iteration integrates the reference trajectory and its state
//! transition matrix through every measurement, accumulates the normal
//! equations `Λ δx̂₀ = λ` (prior information included), and shifts the
//! reference epoch state by the solution. Iteration stops once the largest
//! correction component drops below the threshold.

use nalgebra::{Cholesky, Vector3};
use serde::{Deserialize, Serialize};

use super::{check_sorted, pose_selection, symmetrize, MeasurementRecord};
use crate::dynamics::{
    check_parameters, AugmentedState, ForceSchedule, Matrix8, Propagator, Vector8,
};
use crate::error::{Error, Result};

/// Reference state, a-priori deviation and its covariance at the epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorInfo {
    pub x0_ref: AugmentedState,
    pub dx0_bar: Vector8,
    pub p0_bar: Matrix8,
}

impl PriorInfo {
    pub fn new(x0_ref: AugmentedState, dx0_bar: Vector8, p0_bar: Matrix8) -> Result<Self> {
        x0_ref.validate()?;
        if (p0_bar - p0_bar.transpose()).amax() > 1e-12 * p0_bar.amax()
            || p0_bar.cholesky().is_none()
        {
            return Err(Error::InvalidArgument(
                "prior covariance must be symmetric positive definite".into(),
            ));
        }
        Ok(Self {
            x0_ref,
            dx0_bar,
            p0_bar,
        })
    }

    /// Prior centred on `mean` with independent standard deviations.
    pub fn from_std(mean: AugmentedState, std: [f64; 8]) -> Result<Self> {
        let p = Matrix8::from_diagonal(&Vector8::from(std.map(|s| s * s)));
        Self::new(mean, Vector8::zeros(), p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    /// Convergence threshold on `max |δx̂₀|`.
    pub threshold: f64,
    pub max_iter: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            threshold: 1e-8,
            max_iter: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchResult {
    /// Epoch of the estimate (time of the first measurement).
    pub epoch: f64,
    pub x0_hat: AugmentedState,
    /// `Λ⁻¹` from the final accumulation.
    pub p0: Matrix8,
    pub iterations: usize,
    pub final_correction_norm: f64,
    pub residual_times: Vec<f64>,
    /// Post-fit residuals `z − h(x*)` from the final pass.
    pub residuals: Vec<Vector3<f64>>,
    /// Weighted measurement cost `Σ resᵀ P_vv⁻¹ res` per iteration.
    pub costs: Vec<f64>,
}

/// Normal equations accumulated along one reference trajectory.
#[derive(Clone, Debug)]
pub struct NormalEquations {
    /// Information matrix `Λ`.
    pub information: Matrix8,
    /// Right-hand side `λ`.
    pub rhs: Vector8,
    pub cost: f64,
    pub residual_times: Vec<f64>,
    pub residuals: Vec<Vector3<f64>>,
}

impl NormalEquations {
    /// Solves `Λ δ = λ` and returns `(δ, Λ⁻¹)`.
    ///
    /// The system is equilibrated by the diagonal of `Λ` first; mass and
    /// inertia information differ by many orders of magnitude.
    pub fn solve(&self) -> Result<(Vector8, Matrix8)> {
        let d = self.information.diagonal();
        if d.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Unobservable(
                "information matrix has a non-positive diagonal entry".into(),
            ));
        }
        let eig = self.information.symmetric_eigenvalues();
        if eig.min() <= 1e-20 * eig.max() {
            return Err(Error::Unobservable(format!(
                "information matrix condition number exceeds 1e20 (eigenvalues {:e}..{:e})",
                eig.min(),
                eig.max()
            )));
        }
        let scale = d.map(|v| 1.0 / v.sqrt());
        let scaled = Matrix8::from_fn(|i, j| self.information[(i, j)] * scale[i] * scale[j]);
        let chol = Cholesky::new(scaled)
            .ok_or_else(|| Error::Unobservable("information matrix is singular".into()))?;
        let pivots = chol.l_dirty().diagonal();
        if pivots.iter().any(|p| *p < 1e-7) {
            return Err(Error::Unobservable(
                "information matrix is numerically singular".into(),
            ));
        }
        let y = chol.solve(&self.rhs.component_mul(&scale));
        let delta = y.component_mul(&scale);
        let inv = chol.inverse();
        let cov = Matrix8::from_fn(|i, j| inv[(i, j)] * scale[i] * scale[j]);
        Ok((delta, symmetrize(&cov)))
    }
}

/// One accumulation pass along the reference trajectory from `x0_ref`.
pub fn accumulate(
    measurements: &[MeasurementRecord],
    schedule: &ForceSchedule,
    propagator: &Propagator,
    x0_ref: &Vector8,
    prior_info: &Matrix8,
    dx0_bar: &Vector8,
) -> Result<NormalEquations> {
    let h_sel = pose_selection();
    let mut info = *prior_info;
    let mut rhs = prior_info * dx0_bar;
    let mut cost = 0.0;
    let mut residuals = Vec::with_capacity(measurements.len());
    let mut residual_times = Vec::with_capacity(measurements.len());

    let mut x = *x0_ref;
    let mut phi = Matrix8::identity();
    let mut t_prev = measurements[0].t;
    for meas in measurements {
        (x, phi) = propagator.advance_with_stm(&x, &phi, schedule, t_prev, meas.t);
        t_prev = meas.t;
        let w = meas.r_cov.try_inverse().ok_or_else(|| {
            Error::InvalidArgument(format!("singular measurement covariance at t = {}", meas.t))
        })?;
        let res = meas.z - Vector3::new(x[0], x[1], x[2]);
        let h = h_sel * phi;
        let ht_w = h.transpose() * w;
        info += ht_w * h;
        rhs += ht_w * res;
        cost += (res.transpose() * w * res)[0];
        residuals.push(res);
        residual_times.push(meas.t);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure {
            step: measurements.len(),
            reason: "reference trajectory became non-finite".into(),
        });
    }
    Ok(NormalEquations {
        information: info,
        rhs,
        cost,
        residual_times,
        residuals,
    })
}

/// Iterated batch least squares for the epoch state.
pub fn batch_least_squares(
    measurements: &[MeasurementRecord],
    schedule: &ForceSchedule,
    propagator: &Propagator,
    prior: &PriorInfo,
    config: &BatchConfig,
) -> Result<BatchResult> {
    check_sorted(measurements)?;
    if !(config.threshold > 0.0) || config.max_iter == 0 {
        return Err(Error::InvalidArgument(
            "batch threshold must be positive and max_iter at least 1".into(),
        ));
    }
    let epoch = measurements[0].t;
    schedule.check_covers(epoch, measurements[measurements.len() - 1].t)?;

    let prior_info = prior
        .p0_bar
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("prior covariance is not positive definite".into()))?
        .inverse();

    let mut x0 = prior.x0_ref.to_vector();
    let mut dx_bar = prior.dx0_bar;
    let mut costs = Vec::new();
    let mut min_norm = f64::INFINITY;

    for iteration in 1..=config.max_iter {
        let normal = accumulate(
            measurements,
            schedule,
            propagator,
            &x0,
            &prior_info,
            &dx_bar,
        )?;
        costs.push(normal.cost);
        let (delta, p0) = normal.solve()?;
        let norm = delta.amax();

        // Residuals and covariance describe the reference used in this pass.
        let snapshot = |x0: &Vector8, iterations| BatchResult {
            epoch,
            x0_hat: AugmentedState::from_vector(x0),
            p0,
            iterations,
            final_correction_norm: norm,
            residual_times: normal.residual_times.clone(),
            residuals: normal.residuals.clone(),
            costs: costs.clone(),
        };

        x0 += delta;
        dx_bar -= delta;

        if !norm.is_finite() || check_parameters(&x0).is_err() || norm > 10.0 * min_norm {
            return Err(Error::NonConvergence {
                iterations: iteration,
                last_correction: norm,
                last: Box::new(snapshot(&x0, iteration)),
            });
        }
        min_norm = min_norm.min(norm);
        if norm <= config.threshold {
            return Ok(snapshot(&x0, iteration));
        }
        if iteration == config.max_iter {
            return Err(Error::NonConvergence {
                iterations: iteration,
                last_correction: norm,
                last: Box::new(snapshot(&x0, iteration)),
            });
        }
    }
    unreachable!("loop returns on its final iteration")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{GeneralizedForce, Plant};
    use crate::estimators::pose_covariance;

    fn setup() -> (
        Vec<MeasurementRecord>,
        ForceSchedule,
        Propagator,
        AugmentedState,
    ) {
        let prop = Propagator::new(Plant::default(), 0.01).unwrap();
        let forces = (0..=1000)
            .map(|k| {
                let t = k as f64 * 0.01;
                GeneralizedForce::new(
                    0.02 * t.sin(),
                    0.03 * (0.7 * t).cos(),
                    1e-3 * (1.3 * t).sin(),
                )
            })
            .collect();
        let sched = ForceSchedule::new(0.0, 0.01, forces).unwrap();
        let truth = AugmentedState::at_rest(2.268, 0.00378);
        let traj = prop.propagate(&truth, &sched, 0.0, 10.0).unwrap();
        let r = pose_covariance([0.01, 0.01, 0.0175]);
        let meas = traj
            .times
            .iter()
            .zip(&traj.states)
            .step_by(2)
            .map(|(t, s)| MeasurementRecord::new(*t, s.pose(), r).unwrap())
            .collect();
        (meas, sched, prop, truth)
    }

    #[test]
    fn exact_reference_converges_in_one_iteration() {
        let (meas, sched, prop, truth) = setup();
        let prior = PriorInfo::from_std(truth, [0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 1.0, 2e-3]).unwrap();
        let res =
            batch_least_squares(&meas, &sched, &prop, &prior, &BatchConfig::default()).unwrap();
        assert_eq!(res.iterations, 1);
        assert!(res.final_correction_norm < 1e-8);
    }

    #[test]
    fn recovers_parameters_from_clean_data() {
        let (meas, sched, prop, truth) = setup();
        // Vague prior so the estimate is data-driven.
        let start = AugmentedState::at_rest(1.0, 0.005);
        let prior =
            PriorInfo::from_std(start, [10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 100.0, 1.0]).unwrap();
        let res =
            batch_least_squares(&meas, &sched, &prop, &prior, &BatchConfig::default()).unwrap();
        assert!((res.x0_hat.mass - truth.mass).abs() / truth.mass < 1e-6);
        assert!((res.x0_hat.izz - truth.izz).abs() / truth.izz < 1e-6);
        assert!(res.p0.cholesky().is_some());
    }

    #[test]
    fn unexcited_parameters_without_prior_are_unobservable() {
        let prop = Propagator::new(Plant::default(), 0.01).unwrap();
        let sched = ForceSchedule::constant(GeneralizedForce::ZERO, 0.0, 2.0, 0.01).unwrap();
        let r = pose_covariance([0.01, 0.01, 0.0175]);
        let meas: Vec<_> = (0..=100)
            .map(|k| MeasurementRecord::new(k as f64 * 0.02, Vector3::zeros(), r).unwrap())
            .collect();
        let prior = PriorInfo::from_std(
            AugmentedState::at_rest(1.0, 0.005),
            [1e8, 1e8, 1e8, 1e8, 1e8, 1e8, 1e8, 1e8],
        )
        .unwrap();
        let err =
            batch_least_squares(&meas, &sched, &prop, &prior, &BatchConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Unobservable(_)), "{err:?}");
    }

    #[test]
    fn iteration_cap_reports_last_iterate() {
        let (meas, sched, prop, _) = setup();
        let prior = PriorInfo::from_std(
            AugmentedState::at_rest(1.0, 0.005),
            [0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 1.0, 2e-3],
        )
        .unwrap();
        let cfg = BatchConfig {
            threshold: 1e-8,
            max_iter: 1,
        };
        match batch_least_squares(&meas, &sched, &prop, &prior, &cfg) {
            Err(Error::NonConvergence {
                iterations, last, ..
            }) => {
                assert_eq!(iterations, 1);
                assert!(last.x0_hat.mass > 1.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
