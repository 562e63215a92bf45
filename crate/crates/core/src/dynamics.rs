//! Planar three-degree-of-freedom rigid-body dynamics.
//!
//! The state is augmented with the two inertial parameters (mass and yaw
//! moment of inertia), whose time derivatives are identically zero. Four
//! thrusters mounted at 45 degrees to the body axes produce the generalized
//! force. Propagation uses fixed-step fourth-order Runge-Kutta with inputs
//! held constant over each step; the state transition matrix is integrated
//! alongside the state on the same steps.

use std::ops::{Add, Mul};

use nalgebra::{SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vector8 = SVector<f64, 8>;
pub type Matrix8 = SMatrix<f64, 8, 8>;

pub const STATE_DIM: usize = 8;
/// Index of the mass entry in the augmented state vector.
pub const MASS: usize = 6;
/// Index of the moment-of-inertia entry in the augmented state vector.
pub const IZZ: usize = 7;

/// Tolerance used when comparing sample times on a uniform grid.
pub(crate) const TIME_EPS: f64 = 1e-9;

/// Physical layout of a thruster module.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleGeometry {
    /// Side length `L` of the square module, meters.
    pub side_length_m: f64,
    /// Perpendicular moment arm `d` of each thruster about the center, meters.
    pub moment_arm_m: f64,
}

impl ModuleGeometry {
    pub fn new(side_length_m: f64, moment_arm_m: f64) -> Result<Self> {
        let g = Self {
            side_length_m,
            moment_arm_m,
        };
        g.validate()?;
        Ok(g)
    }

    /// Geometry with the moment arm at half the side length.
    pub fn with_side_length(side_length_m: f64) -> Result<Self> {
        Self::new(side_length_m, side_length_m / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.side_length_m > 0.0 && self.side_length_m.is_finite())
            || !(self.moment_arm_m > 0.0 && self.moment_arm_m.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "geometry lengths must be positive, got L = {}, d = {}",
                self.side_length_m, self.moment_arm_m
            )));
        }
        Ok(())
    }
}

impl Default for ModuleGeometry {
    fn default() -> Self {
        Self {
            side_length_m: 0.1,
            moment_arm_m: 0.05,
        }
    }
}

/// Pose, body velocities and the two inertial parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentedState {
    pub x: f64,
    pub y: f64,
    /// Heading, radians. Never wrapped during propagation.
    pub psi: f64,
    pub u: f64,
    pub v: f64,
    pub r: f64,
    pub mass: f64,
    pub izz: f64,
}

impl AugmentedState {
    pub fn at_rest(mass: f64, izz: f64) -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            psi: 0.0,
            u: 0.0,
            v: 0.0,
            r: 0.0,
            mass,
            izz,
        }
    }

    pub fn to_vector(&self) -> Vector8 {
        Vector8::from([
            self.x, self.y, self.psi, self.u, self.v, self.r, self.mass, self.izz,
        ])
    }

    pub fn from_vector(v: &Vector8) -> Self {
        Self {
            x: v[0],
            y: v[1],
            psi: v[2],
            u: v[3],
            v: v[4],
            r: v[5],
            mass: v[MASS],
            izz: v[IZZ],
        }
    }

    pub fn pose(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.psi)
    }

    pub fn validate(&self) -> Result<()> {
        check_parameters(&self.to_vector())
    }
}

pub(crate) fn check_parameters(x: &Vector8) -> Result<()> {
    if x.iter().any(|c| !c.is_finite()) {
        return Err(Error::Domain("state contains non-finite entries".into()));
    }
    if x[MASS] <= 0.0 || x[IZZ] <= 0.0 {
        return Err(Error::Domain(format!(
            "mass and inertia must be positive, got m = {}, izz = {}",
            x[MASS], x[IZZ]
        )));
    }
    Ok(())
}

/// Body-frame force and yaw moment acting on the module.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedForce {
    pub fx: f64,
    pub fy: f64,
    pub mz: f64,
}

impl GeneralizedForce {
    pub const ZERO: Self = Self {
        fx: 0.0,
        fy: 0.0,
        mz: 0.0,
    };

    pub fn new(fx: f64, fy: f64, mz: f64) -> Self {
        Self { fx, fy, mz }
    }

    pub fn is_finite(&self) -> bool {
        self.fx.is_finite() && self.fy.is_finite() && self.mz.is_finite()
    }
}

impl Add for GeneralizedForce {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.fx + o.fx, self.fy + o.fy, self.mz + o.mz)
    }
}

impl Mul<f64> for GeneralizedForce {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        Self::new(self.fx * k, self.fy * k, self.mz * k)
    }
}

/// Maps the four thruster forces `T1..T4` (newtons) to the body-frame
/// generalized force.
pub fn resolve_thrust(thrusts: [f64; 4], geometry: &ModuleGeometry) -> Result<GeneralizedForce> {
    if thrusts.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "thrusts must be finite, got {thrusts:?}"
        )));
    }
    let [t1, t2, t3, t4] = thrusts;
    Ok(GeneralizedForce {
        fx: (t2 + t3 - t1 - t4) / std::f64::consts::SQRT_2,
        fy: (t1 + t2 - t3 - t4) / std::f64::consts::SQRT_2,
        mz: geometry.moment_arm_m * (t1 + t3 - t2 - t4),
    })
}

/// Minimum-norm thruster forces producing `force`. Signed in general.
pub fn allocate_thrust(force: &GeneralizedForce, geometry: &ModuleGeometry) -> [f64; 4] {
    // The three rows of the allocation matrix are mutually orthogonal, so the
    // pseudo-inverse is the transpose scaled by the inverse row norms.
    let a = force.fx / std::f64::consts::SQRT_2 / 2.0;
    let b = force.fy / std::f64::consts::SQRT_2 / 2.0;
    let c = force.mz / (4.0 * geometry.moment_arm_m);
    [-a + b + c, a + b - c, a - b + c, -a - b - c]
}

/// Velocity-dependent surface friction plus a translation-induced yaw bias.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrictionModel {
    /// Viscous coefficient on translation, N per m/s.
    pub c_translation: f64,
    /// Viscous coefficient on rotation, N·m per rad/s.
    pub c_rotation: f64,
    /// Yaw moment per unit translation speed, N·m per m/s. May be signed.
    pub bias_cross: f64,
    pub enabled: bool,
}

impl FrictionModel {
    pub fn new(c_translation: f64, c_rotation: f64, bias_cross: f64) -> Result<Self> {
        let f = Self {
            c_translation,
            c_rotation,
            bias_cross,
            enabled: true,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_translation >= 0.0 && self.c_rotation >= 0.0 && self.bias_cross.is_finite()) {
            return Err(Error::InvalidArgument(
                "friction coefficients must be non-negative and finite".into(),
            ));
        }
        Ok(())
    }
}

/// How body velocities feed the position derivative.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kinematics {
    /// `ẋ = u`, `ẏ = v`.
    #[default]
    AsWritten,
    /// Body velocities rotated into the inertial frame by the heading.
    Rotated,
}

/// Everything needed to evaluate the equations of motion besides the state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    pub geometry: ModuleGeometry,
    #[serde(default)]
    pub friction: FrictionModel,
    #[serde(default)]
    pub kinematics: Kinematics,
}

impl Plant {
    pub fn new(geometry: ModuleGeometry) -> Self {
        Self {
            geometry,
            ..Self::default()
        }
    }

    /// Checked state derivative.
    pub fn state_derivative(
        &self,
        state: &AugmentedState,
        force: &GeneralizedForce,
    ) -> Result<Vector8> {
        let x = state.to_vector();
        check_parameters(&x)?;
        Ok(self.derivative(&x, force))
    }

    /// Checked analytic Jacobian of the state derivative.
    pub fn jacobian(&self, state: &AugmentedState, force: &GeneralizedForce) -> Result<Matrix8> {
        let x = state.to_vector();
        check_parameters(&x)?;
        Ok(self.derivative_jacobian(&x, force))
    }

    pub(crate) fn derivative(&self, x: &Vector8, f: &GeneralizedForce) -> Vector8 {
        let (psi, u, v, r, m, izz) = (x[2], x[3], x[4], x[5], x[MASS], x[IZZ]);
        let (xdot, ydot) = match self.kinematics {
            Kinematics::AsWritten => (u, v),
            Kinematics::Rotated => {
                let (s, c) = psi.sin_cos();
                (u * c - v * s, u * s + v * c)
            }
        };
        let mut udot = f.fx / m + r * v;
        let mut vdot = f.fy / m - r * u;
        let mut rdot = f.mz / izz;
        let fr = &self.friction;
        if fr.enabled {
            udot -= fr.c_translation * u / m;
            vdot -= fr.c_translation * v / m;
            rdot += (fr.bias_cross * u.hypot(v) - fr.c_rotation * r) / izz;
        }
        Vector8::from([xdot, ydot, r, udot, vdot, rdot, 0.0, 0.0])
    }

    pub(crate) fn derivative_jacobian(&self, x: &Vector8, f: &GeneralizedForce) -> Matrix8 {
        let (psi, u, v, r, m, izz) = (x[2], x[3], x[4], x[5], x[MASS], x[IZZ]);
        let mut j = Matrix8::zeros();
        match self.kinematics {
            Kinematics::AsWritten => {
                j[(0, 3)] = 1.0;
                j[(1, 4)] = 1.0;
            }
            Kinematics::Rotated => {
                let (s, c) = psi.sin_cos();
                j[(0, 2)] = -u * s - v * c;
                j[(0, 3)] = c;
                j[(0, 4)] = -s;
                j[(1, 2)] = u * c - v * s;
                j[(1, 3)] = s;
                j[(1, 4)] = c;
            }
        }
        j[(2, 5)] = 1.0;

        j[(3, 4)] = r;
        j[(3, 5)] = v;
        j[(3, MASS)] = -f.fx / (m * m);
        j[(4, 3)] = -r;
        j[(4, 5)] = -u;
        j[(4, MASS)] = -f.fy / (m * m);
        let mut moment = f.mz;

        let fr = &self.friction;
        if fr.enabled {
            let ct = fr.c_translation;
            j[(3, 3)] -= ct / m;
            j[(3, MASS)] += ct * u / (m * m);
            j[(4, 4)] -= ct / m;
            j[(4, MASS)] += ct * v / (m * m);

            let speed = u.hypot(v);
            if speed > 0.0 {
                j[(5, 3)] = fr.bias_cross * u / (speed * izz);
                j[(5, 4)] = fr.bias_cross * v / (speed * izz);
            }
            j[(5, 5)] = -fr.c_rotation / izz;
            moment += fr.bias_cross * speed - fr.c_rotation * r;
        }
        j[(5, IZZ)] = -moment / (izz * izz);
        j
    }
}

/// State derivative under the default (as-written) kinematics.
pub fn state_derivative(
    state: &AugmentedState,
    force: &GeneralizedForce,
    friction: &FrictionModel,
) -> Result<Vector8> {
    let plant = Plant {
        friction: *friction,
        ..Plant::default()
    };
    plant.state_derivative(state, force)
}

/// Analytic `∂F/∂x` under the default (as-written) kinematics.
pub fn dynamics_jacobian(
    state: &AugmentedState,
    force: &GeneralizedForce,
    friction: &FrictionModel,
) -> Result<Matrix8> {
    let plant = Plant {
        friction: *friction,
        ..Plant::default()
    };
    plant.jacobian(state, force)
}

/// Generalized-force history on a uniform grid, held constant between samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ForceSchedule {
    start: f64,
    step: f64,
    forces: Vec<GeneralizedForce>,
}

impl ForceSchedule {
    pub fn new(start: f64, step: f64, forces: Vec<GeneralizedForce>) -> Result<Self> {
        if !(step > 0.0) || !start.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "force schedule needs a finite start and positive step, got start = {start}, step = {step}"
            )));
        }
        if forces.is_empty() {
            return Err(Error::InvalidArgument("force schedule is empty".into()));
        }
        if let Some(i) = forces.iter().position(|f| !f.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite force at sample {i}"
            )));
        }
        Ok(Self {
            start,
            step,
            forces,
        })
    }

    /// A single force held over `[start, end]`.
    pub fn constant(force: GeneralizedForce, start: f64, end: f64, step: f64) -> Result<Self> {
        let n = ((end - start) / step - TIME_EPS).ceil().max(0.0) as usize + 1;
        Self::new(start, step, vec![force; n])
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Time of the last sample.
    pub fn end(&self) -> f64 {
        self.start + (self.forces.len() - 1) as f64 * self.step
    }

    pub fn forces(&self) -> &[GeneralizedForce] {
        &self.forces
    }

    /// Zero-order-hold lookup. Times outside the schedule clamp to the
    /// nearest sample; use [`ForceSchedule::covers`] to check coverage.
    pub fn force_at(&self, t: f64) -> GeneralizedForce {
        let k = ((t - self.start) / self.step + TIME_EPS).floor();
        let k = (k.max(0.0) as usize).min(self.forces.len() - 1);
        self.forces[k]
    }

    pub fn covers(&self, t0: f64, tf: f64) -> bool {
        t0 >= self.start - TIME_EPS && tf <= self.end() + TIME_EPS
    }

    pub(crate) fn check_covers(&self, t0: f64, tf: f64) -> Result<()> {
        if self.covers(t0, tf) {
            Ok(())
        } else {
            Err(Error::Configuration(format!(
                "input spans [{}, {}] s but [{t0}, {tf}] s was requested",
                self.start,
                self.end()
            )))
        }
    }
}

/// Sampled state history.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<AugmentedState>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<AugmentedState>) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::InvalidArgument(format!(
                "trajectory has {} times but {} states",
                times.len(),
                states.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "trajectory times must be strictly increasing".into(),
            ));
        }
        Ok(Self { times, states })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&AugmentedState> {
        self.states.last()
    }

    /// Index of the sample at time `t`, if one lies within the grid tolerance.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let i = self.times.partition_point(|&s| s < t - TIME_EPS);
        (i < self.times.len() && (self.times[i] - t).abs() <= TIME_EPS).then_some(i)
    }
}

/// Fixed-step RK4 integrator bound to a plant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Propagator {
    pub plant: Plant,
    pub dt: f64,
}

impl Propagator {
    pub const DEFAULT_DT: f64 = 0.01;

    pub fn new(plant: Plant, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "dt must be positive, got {dt}"
            )));
        }
        Ok(Self { plant, dt })
    }

    /// One RK4 step of length `h` under a constant force.
    pub fn step(&self, x: &Vector8, force: &GeneralizedForce, h: f64) -> Vector8 {
        let p = &self.plant;
        let k1 = p.derivative(x, force);
        let k2 = p.derivative(&(x + k1 * (h / 2.0)), force);
        let k3 = p.derivative(&(x + k2 * (h / 2.0)), force);
        let k4 = p.derivative(&(x + k3 * h), force);
        x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
    }

    /// One RK4 step of the state together with `Φ̇ = (∂F/∂x)·Φ`.
    pub fn step_with_stm(
        &self,
        x: &Vector8,
        phi: &Matrix8,
        force: &GeneralizedForce,
        h: f64,
    ) -> (Vector8, Matrix8) {
        let p = &self.plant;
        let eval = |xs: &Vector8, ps: &Matrix8| {
            (
                p.derivative(xs, force),
                p.derivative_jacobian(xs, force) * ps,
            )
        };
        let (k1, l1) = eval(x, phi);
        let (k2, l2) = eval(&(x + k1 * (h / 2.0)), &(phi + l1 * (h / 2.0)));
        let (k3, l3) = eval(&(x + k2 * (h / 2.0)), &(phi + l2 * (h / 2.0)));
        let (k4, l4) = eval(&(x + k3 * h), &(phi + l3 * h));
        (
            x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0),
            phi + (l1 + l2 * 2.0 + l3 * 2.0 + l4) * (h / 6.0),
        )
    }

    /// Splits `[t0, t1]` into equal steps no longer than `dt`.
    pub(crate) fn substeps(&self, t0: f64, t1: f64) -> (usize, f64) {
        let span = t1 - t0;
        if span <= 0.0 {
            return (0, 0.0);
        }
        let n = (span / self.dt - TIME_EPS).ceil().max(1.0) as usize;
        (n, span / n as f64)
    }

    pub(crate) fn advance_with_stm(
        &self,
        x: &Vector8,
        phi: &Matrix8,
        schedule: &ForceSchedule,
        t0: f64,
        t1: f64,
    ) -> (Vector8, Matrix8) {
        let (n, h) = self.substeps(t0, t1);
        let (mut x, mut phi) = (*x, *phi);
        for i in 0..n {
            let f = schedule.force_at(t0 + i as f64 * h);
            (x, phi) = self.step_with_stm(&x, &phi, &f, h);
        }
        (x, phi)
    }

    /// Propagates `state0` over `[t0, tf]`, sampling at `t0 + k·dt` and at `tf`.
    pub fn propagate(
        &self,
        state0: &AugmentedState,
        schedule: &ForceSchedule,
        t0: f64,
        tf: f64,
    ) -> Result<Trajectory> {
        if !(tf > t0) {
            return Err(Error::InvalidArgument(format!(
                "propagation span must satisfy tf > t0, got [{t0}, {tf}]"
            )));
        }
        schedule.check_covers(t0, tf)?;
        state0.validate()?;

        let n = ((tf - t0) / self.dt - TIME_EPS).ceil() as usize;
        let mut times = Vec::with_capacity(n + 1);
        let mut states = Vec::with_capacity(n + 1);
        let mut x = state0.to_vector();
        times.push(t0);
        states.push(*state0);
        for k in 1..=n {
            let (ta, tb) = (
                times[k - 1],
                if k == n { tf } else { t0 + k as f64 * self.dt },
            );
            x = self.step(&x, &schedule.force_at(ta), tb - ta);
            times.push(tb);
            states.push(AugmentedState::from_vector(&x));
        }
        Trajectory::new(times, states)
    }

    /// Propagates the state and the state transition matrix `Φ(t1, t0)`.
    pub fn propagate_stm(
        &self,
        state0: &AugmentedState,
        schedule: &ForceSchedule,
        t0: f64,
        t1: f64,
    ) -> Result<(AugmentedState, Matrix8)> {
        if t1 < t0 {
            return Err(Error::InvalidArgument(format!(
                "propagate_stm needs t1 >= t0, got [{t0}, {t1}]"
            )));
        }
        schedule.check_covers(t0, t1)?;
        state0.validate()?;
        let (x, phi) =
            self.advance_with_stm(&state0.to_vector(), &Matrix8::identity(), schedule, t0, t1);
        Ok((AugmentedState::from_vector(&x), phi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const D: f64 = 0.05;

    fn geom() -> ModuleGeometry {
        ModuleGeometry::default()
    }

    #[test]
    fn symmetric_firing_cancels() {
        let f = resolve_thrust([1.0; 4], &geom()).unwrap();
        assert_eq!(f, GeneralizedForce::ZERO);
    }

    #[test]
    fn single_thruster_resolution() {
        let f = resolve_thrust([1.0, 0.0, 0.0, 0.0], &geom()).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert_relative_eq!(f.fx, -s, epsilon = 1e-15);
        assert_relative_eq!(f.fy, s, epsilon = 1e-15);
        assert_relative_eq!(f.mz, D, epsilon = 1e-15);
    }

    #[test]
    fn opposite_pair_is_pure_moment() {
        let f = resolve_thrust([0.0, 1.0, 0.0, 1.0], &geom()).unwrap();
        assert_eq!(f.fx, 0.0);
        assert_eq!(f.fy, 0.0);
        assert_relative_eq!(f.mz, -0.1, epsilon = 1e-15);
    }

    #[test]
    fn non_finite_thrust_rejected() {
        assert!(matches!(
            resolve_thrust([f64::NAN, 0.0, 0.0, 0.0], &geom()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn allocation_inverts_resolution() {
        let f = GeneralizedForce::new(0.3, -0.2, 0.01);
        let t = allocate_thrust(&f, &geom());
        let back = resolve_thrust(t, &geom()).unwrap();
        assert_relative_eq!(back.fx, f.fx, epsilon = 1e-14);
        assert_relative_eq!(back.fy, f.fy, epsilon = 1e-14);
        assert_relative_eq!(back.mz, f.mz, epsilon = 1e-14);
    }

    #[test]
    fn derivative_at_rest_is_zero() {
        let s = AugmentedState::at_rest(2.268, 0.00378);
        let d = state_derivative(&s, &GeneralizedForce::ZERO, &FrictionModel::default()).unwrap();
        assert_eq!(d, Vector8::zeros());
    }

    #[test]
    fn pure_moment_spin_up_rate() {
        let s = AugmentedState::at_rest(2.268, 0.00378);
        let d = state_derivative(
            &s,
            &GeneralizedForce::new(0.0, 0.0, 0.01),
            &FrictionModel::default(),
        )
        .unwrap();
        assert_relative_eq!(d[5], 2.6455, epsilon = 1e-4);
    }

    #[test]
    fn coriolis_terms() {
        let s = AugmentedState {
            u: 1.0,
            r: 0.5,
            ..AugmentedState::at_rest(2.0, 0.004)
        };
        let d = state_derivative(&s, &GeneralizedForce::ZERO, &FrictionModel::default()).unwrap();
        assert_eq!(d[3], 0.0);
        assert_eq!(d[4], -0.5);
        assert_eq!(d[1], 0.0);
    }

    #[test]
    fn friction_terms() {
        let friction = FrictionModel::new(0.2, 0.01, 0.003).unwrap();
        let s = AugmentedState {
            u: 0.3,
            v: -0.4,
            r: 0.5,
            ..AugmentedState::at_rest(2.0, 0.004)
        };
        let d = state_derivative(&s, &GeneralizedForce::ZERO, &friction).unwrap();
        assert_relative_eq!(d[3], 0.5 * -0.4 - 0.2 * 0.3 / 2.0, epsilon = 1e-15);
        assert_relative_eq!(d[4], -0.5 * 0.3 + 0.2 * 0.4 / 2.0, epsilon = 1e-15);
        assert_relative_eq!(d[5], (0.003 * 0.5 - 0.01 * 0.5) / 0.004, epsilon = 1e-12);
    }

    #[test]
    fn non_positive_parameters_rejected() {
        let s = AugmentedState::at_rest(0.0, 0.004);
        assert!(matches!(
            state_derivative(&s, &GeneralizedForce::ZERO, &FrictionModel::default()),
            Err(Error::Domain(_))
        ));
        let s = AugmentedState::at_rest(1.0, -1.0);
        assert!(matches!(
            dynamics_jacobian(&s, &GeneralizedForce::ZERO, &FrictionModel::default()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn jacobian_at_rest_is_kinematic_block() {
        let s = AugmentedState::at_rest(2.0, 0.004);
        let j = dynamics_jacobian(&s, &GeneralizedForce::ZERO, &FrictionModel::default()).unwrap();
        let mut expected = Matrix8::zeros();
        expected[(0, 3)] = 1.0;
        expected[(1, 4)] = 1.0;
        expected[(2, 5)] = 1.0;
        assert_eq!(j, expected);
    }

    #[test]
    fn jacobian_mass_partial() {
        let s = AugmentedState::at_rest(2.0, 0.004);
        let j = dynamics_jacobian(
            &s,
            &GeneralizedForce::new(1.0, 0.0, 0.0),
            &FrictionModel::default(),
        )
        .unwrap();
        assert_eq!(j[(3, MASS)], -0.25);
    }

    #[test]
    fn free_drift() {
        let prop = Propagator::new(Plant::default(), 0.01).unwrap();
        let sched = ForceSchedule::constant(GeneralizedForce::ZERO, 0.0, 5.0, 0.01).unwrap();
        let s0 = AugmentedState {
            u: 0.1,
            ..AugmentedState::at_rest(2.0, 0.004)
        };
        let traj = prop.propagate(&s0, &sched, 0.0, 5.0).unwrap();
        assert_eq!(traj.len(), 501);
        for (t, s) in traj.times.iter().zip(&traj.states) {
            assert_relative_eq!(s.x, 0.1 * t, epsilon = 1e-12);
        }
    }

    #[test]
    fn pure_spin_up_is_quadratic() {
        let prop = Propagator::new(Plant::default(), 0.01).unwrap();
        let mz = 0.002;
        let izz = 0.00378;
        let sched =
            ForceSchedule::constant(GeneralizedForce::new(0.0, 0.0, mz), 0.0, 3.0, 0.01).unwrap();
        let traj = prop
            .propagate(&AugmentedState::at_rest(2.0, izz), &sched, 0.0, 3.0)
            .unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            assert_relative_eq!(s.psi, mz / (2.0 * izz) * t * t, epsilon = 1e-10);
        }
    }

    #[test]
    fn ragged_final_step_lands_on_tf() {
        let prop = Propagator::new(Plant::default(), 0.03).unwrap();
        let sched = ForceSchedule::constant(GeneralizedForce::ZERO, 0.0, 0.1, 0.01).unwrap();
        let traj = prop
            .propagate(&AugmentedState::at_rest(1.0, 1.0), &sched, 0.0, 0.1)
            .unwrap();
        assert_eq!(traj.len(), 5);
        assert_eq!(*traj.times.last().unwrap(), 0.1);
    }

    #[test]
    fn uncovered_span_is_configuration_error() {
        let prop = Propagator::new(Plant::default(), 0.01).unwrap();
        let sched = ForceSchedule::constant(GeneralizedForce::ZERO, 0.0, 1.0, 0.01).unwrap();
        let err = prop
            .propagate(&AugmentedState::at_rest(1.0, 1.0), &sched, 0.0, 2.0)
            .unwrap_err();
        assert!(matches!(err, Error::Configuration(_)));
    }

    #[test]
    fn stm_identity_at_zero_span() {
        let prop = Propagator::new(Plant::default(), 0.01).unwrap();
        let sched = ForceSchedule::constant(GeneralizedForce::ZERO, 0.0, 1.0, 0.01).unwrap();
        let (_, phi) = prop
            .propagate_stm(&AugmentedState::at_rest(1.0, 1.0), &sched, 0.5, 0.5)
            .unwrap();
        assert_eq!(phi, Matrix8::identity());
    }

    #[test]
    fn zoh_lookup() {
        let forces = (0..5)
            .map(|i| GeneralizedForce::new(i as f64, 0.0, 0.0))
            .collect();
        let s = ForceSchedule::new(1.0, 0.1, forces).unwrap();
        assert_eq!(s.force_at(1.0).fx, 0.0);
        assert_eq!(s.force_at(1.2).fx, 2.0);
        assert_eq!(s.force_at(1.29999).fx, 2.0);
        assert_eq!(s.force_at(1.4).fx, 4.0);
        assert!(s.covers(1.0, 1.4));
        assert!(!s.covers(0.9, 1.4));
    }
}
