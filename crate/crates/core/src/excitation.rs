//! Input design and parameter-sensitivity analysis.
//!
//! Generates thruster command histories (phase-shifted sines, a
//! translation-then-rotation profile, a closed-loop orbit follower) and
//! integrates the output sensitivities `∂(x, y, ψ)/∂(m, Izz)` that decide
//! whether an input makes the inertial parameters observable.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::SMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    allocate_thrust, check_parameters, resolve_thrust, AugmentedState, ForceSchedule,
    GeneralizedForce, ModuleGeometry, Plant, Propagator, Vector8, IZZ, MASS, TIME_EPS,
};
use crate::error::{Error, Result};
use crate::thrust::{DutyCommand, ThrustCurveSet};

/// Units of the four per-thruster command channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandDomain {
    /// PWM duty cycle, percent.
    Duty,
    /// Thruster force, newtons, signed.
    Force,
}

impl fmt::Display for CommandDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CommandDomain::Duty => "duty",
            CommandDomain::Force => "force",
        })
    }
}

impl FromStr for CommandDomain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "duty" => Ok(Self::Duty),
            "force" => Ok(Self::Force),
            other => Err(Error::InvalidArgument(format!(
                "command domain must be 'duty' or 'force', got '{other}'"
            ))),
        }
    }
}

/// Time-indexed thruster commands on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct InputSequence {
    times: Vec<f64>,
    commands: Vec<[f64; 4]>,
    domain: CommandDomain,
}

impl InputSequence {
    pub fn new(times: Vec<f64>, commands: Vec<[f64; 4]>, domain: CommandDomain) -> Result<Self> {
        if times.len() != commands.len() {
            return Err(Error::InvalidArgument(format!(
                "{} times but {} commands",
                times.len(),
                commands.len()
            )));
        }
        if times.len() < 2 {
            return Err(Error::InvalidArgument(
                "an input sequence needs at least two samples".into(),
            ));
        }
        let step = times[1] - times[0];
        if !(step > 0.0) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument(
                "input times must be finite and strictly increasing".into(),
            ));
        }
        for (k, w) in times.windows(2).enumerate() {
            if ((w[1] - w[0]) - step).abs() > 1e-6 * step + TIME_EPS {
                return Err(Error::InvalidArgument(format!(
                    "input times are not uniform at sample {}",
                    k + 1
                )));
            }
        }
        if let Some(k) = commands
            .iter()
            .position(|c| c.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidArgument(format!(
                "non-finite command at sample {k}"
            )));
        }
        if domain == CommandDomain::Duty {
            if let Some(k) = commands
                .iter()
                .position(|c| c.iter().any(|d| !(0.0..=100.0).contains(d)))
            {
                return Err(Error::InvalidArgument(format!(
                    "duty command outside [0, 100] % at sample {k}"
                )));
            }
        }
        Ok(Self {
            times,
            commands,
            domain,
        })
    }

    /// Builds a sequence sampled at `start + k·step`.
    pub fn uniform(
        start: f64,
        step: f64,
        commands: Vec<[f64; 4]>,
        domain: CommandDomain,
    ) -> Result<Self> {
        let times = (0..commands.len())
            .map(|k| start + k as f64 * step)
            .collect();
        Self::new(times, commands, domain)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn commands(&self) -> &[[f64; 4]] {
        &self.commands
    }

    pub fn domain(&self) -> CommandDomain {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn step(&self) -> f64 {
        (self.times[self.times.len() - 1] - self.times[0]) / (self.times.len() - 1) as f64
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Converts commands to body-frame forces. Duty-domain sequences need
    /// thrust curves.
    pub fn to_force_schedule(
        &self,
        geometry: &ModuleGeometry,
        curves: Option<&ThrustCurveSet>,
    ) -> Result<ForceSchedule> {
        let forces = match self.domain {
            CommandDomain::Force => self
                .commands
                .iter()
                .map(|c| resolve_thrust(*c, geometry))
                .collect::<Result<Vec<_>>>()?,
            CommandDomain::Duty => {
                let curves = curves.ok_or_else(|| {
                    Error::Configuration("duty-domain input requires thrust curves".into())
                })?;
                self.commands
                    .iter()
                    .map(|c| {
                        let thrusts = curves.thrusts(&DutyCommand::new(*c)?)?;
                        resolve_thrust(thrusts, geometry)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        ForceSchedule::new(self.start(), self.step(), forces)
    }

    /// Writes `time_s,t1_n,…,t4_n` (force) or `time_s,t1_pct,…,t4_pct`
    /// (duty) rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(input_header(self.domain))?;
        for (t, c) in self.times.iter().zip(&self.commands) {
            out.write_record([
                t.to_string(),
                c[0].to_string(),
                c[1].to_string(),
                c[2].to_string(),
                c[3].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a file written by [`InputSequence::write_csv`]; the header
    /// selects the command domain.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(r);
        let header = rdr.headers()?.clone();
        let domain = [CommandDomain::Force, CommandDomain::Duty]
            .into_iter()
            .find(|d| header.iter().eq(input_header(*d)))
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!(
                    "expected header {} or {}, got {}",
                    input_header(CommandDomain::Force).join(","),
                    input_header(CommandDomain::Duty).join(","),
                    header.iter().collect::<Vec<_>>().join(",")
                ),
            })?;
        let columns = input_header(domain);
        let mut times = Vec::new();
        let mut commands = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec?;
            let num = |k: usize| -> Result<f64> {
                rec.get(k)
                    .ok_or_else(|| Error::Parse {
                        line,
                        message: format!("missing column {}", columns[k]),
                    })?
                    .parse::<f64>()
                    .map_err(|e| Error::Parse {
                        line,
                        message: format!("column {}: {e}", columns[k]),
                    })
            };
            times.push(num(0)?);
            commands.push([num(1)?, num(2)?, num(3)?, num(4)?]);
        }
        if times.is_empty() {
            return Err(Error::Parse {
                line: 2,
                message: "input file has no rows".into(),
            });
        }
        Self::new(times, commands, domain)
    }
}

fn input_header(domain: CommandDomain) -> [&'static str; 5] {
    match domain {
        CommandDomain::Force => ["time_s", "t1_n", "t2_n", "t3_n", "t4_n"],
        CommandDomain::Duty => ["time_s", "t1_pct", "t2_pct", "t3_pct", "t4_pct"],
    }
}

fn sample_count(duration: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(duration > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "duration and dt must be positive, got {duration} and {dt}"
        )));
    }
    Ok((duration / dt).round() as usize + 1)
}

/// How sine commands are mapped onto thrusters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SineMode {
    /// `A·sin(·)`; thrusters may "pull".
    #[default]
    Signed,
    /// `A·(1 + sin(·))/2`; non-negative.
    Offset,
}

/// Thruster `i` (1-based) receives `A·sin(ωt + (i−1)·phase_step)`.
pub fn phase_shifted_sine(
    amplitude: f64,
    omega: f64,
    phase_step: f64,
    duration: f64,
    dt: f64,
    mode: SineMode,
) -> Result<InputSequence> {
    if !(amplitude > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sine amplitude must be positive, got {amplitude}"
        )));
    }
    let n = sample_count(duration, dt)?;
    let commands = (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            std::array::from_fn(|i| {
                let s = (omega * t + i as f64 * phase_step).sin();
                match mode {
                    SineMode::Signed => amplitude * s,
                    SineMode::Offset => amplitude * (1.0 + s) / 2.0,
                }
            })
        })
        .collect();
    InputSequence::uniform(0.0, dt, commands, CommandDomain::Force)
}

fn translation_pattern(amplitude: f64, s: f64) -> [f64; 4] {
    let (pos, neg) = (amplitude * s.max(0.0), amplitude * (-s).max(0.0));
    [pos, pos, neg, neg]
}

fn rotation_pattern(amplitude: f64, s: f64) -> [f64; 4] {
    let (pos, neg) = (amplitude * s.max(0.0), amplitude * (-s).max(0.0));
    [pos, neg, pos, neg]
}

/// Oscillating body-y force only; never excites rotation.
pub fn oscillatory_translation(
    amplitude: f64,
    omega: f64,
    duration: f64,
    dt: f64,
) -> Result<InputSequence> {
    let n = sample_count(duration, dt)?;
    let commands = (0..n)
        .map(|k| translation_pattern(amplitude, (omega * k as f64 * dt).sin()))
        .collect();
    InputSequence::uniform(0.0, dt, commands, CommandDomain::Force)
}

/// Oscillating body-y force for `half_duration`, then an oscillating yaw
/// moment for the same length. Commands are non-negative.
pub fn translation_then_rotation(
    half_duration: f64,
    amplitude: f64,
    omega: f64,
    dt: f64,
) -> Result<InputSequence> {
    if !(half_duration > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "half duration must be positive, got {half_duration}"
        )));
    }
    let n = sample_count(2.0 * half_duration, dt)?;
    let commands = (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            if t < half_duration - TIME_EPS {
                translation_pattern(amplitude, (omega * t).sin())
            } else {
                rotation_pattern(amplitude, (omega * (t - half_duration)).sin())
            }
        })
        .collect();
    InputSequence::uniform(0.0, dt, commands, CommandDomain::Force)
}

/// Settings for the closed-loop orbit follower.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitFollowerConfig {
    /// Radius of the circular position setpoint, meters.
    pub setpoint_amplitude: f64,
    /// Period of one orbit, seconds.
    pub period: f64,
    pub kp: f64,
    pub kd: f64,
    pub duration: f64,
    pub dt: f64,
}

impl Default for OrbitFollowerConfig {
    fn default() -> Self {
        Self {
            setpoint_amplitude: 0.1,
            period: 60.0,
            kp: 2.0,
            kd: 3.0,
            duration: 120.0,
            dt: 0.01,
        }
    }
}

/// Result of a closed-loop orbit-following run.
#[derive(Clone, Debug)]
pub struct OrbitFollowerRun {
    pub input: InputSequence,
    /// Largest position tracking error seen, meters.
    pub max_tracking_error: f64,
}

/// Simulates a PD tracker of a circular position setpoint (heading held at
/// zero) on `plant` starting from `initial`, and returns the realized
/// force-domain thruster history.
///
/// The setpoint is `x = A·sin ωt`, `y = A·(cos ωt − 1)`, which starts at the
/// origin. The controller works at the acceleration level and scales by the
/// plant's own mass and inertia.
pub fn pd_orbit_follower(
    config: &OrbitFollowerConfig,
    plant: &Plant,
    initial: &AugmentedState,
) -> Result<OrbitFollowerRun> {
    let OrbitFollowerConfig {
        setpoint_amplitude: a,
        period,
        kp,
        kd,
        duration,
        dt,
    } = *config;
    if !(kp >= 0.0 && kd >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "controller gains must be non-negative, got kp = {kp}, kd = {kd}"
        )));
    }
    if !(period > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "period must be positive, got {period}"
        )));
    }
    initial.validate()?;
    let n = sample_count(duration, dt)?;
    let propagator = Propagator::new(*plant, dt)?;
    let omega = 2.0 * PI / period;
    let (m, izz) = (initial.mass, initial.izz);

    let mut x = initial.to_vector();
    let mut commands = Vec::with_capacity(n);
    let mut max_err: f64 = 0.0;
    for k in 0..n {
        let t = k as f64 * dt;
        let (s, c) = (omega * t).sin_cos();
        let (xd, yd) = (a * s, a * (c - 1.0));
        let (xd_dot, yd_dot) = (a * omega * c, -a * omega * s);
        let (px, py, psi, u, v, r) = (x[0], x[1], x[2], x[3], x[4], x[5]);
        max_err = max_err.max((xd - px).hypot(yd - py));

        let force = if kp == 0.0 && kd == 0.0 {
            GeneralizedForce::ZERO
        } else {
            let (sp, cp) = psi.sin_cos();
            let (vx, vy) = match plant.kinematics {
                crate::dynamics::Kinematics::AsWritten => (u, v),
                crate::dynamics::Kinematics::Rotated => (u * cp - v * sp, u * sp + v * cp),
            };
            let ax = kp * (xd - px) + kd * (xd_dot - vx);
            let ay = kp * (yd - py) + kd * (yd_dot - vy);
            let alpha = kp * (0.0 - psi) + kd * (0.0 - r);
            let (fx, fy) = match plant.kinematics {
                crate::dynamics::Kinematics::AsWritten => (m * (ax - r * v), m * (ay + r * u)),
                crate::dynamics::Kinematics::Rotated => {
                    (m * (ax * cp + ay * sp), m * (-ax * sp + ay * cp))
                }
            };
            GeneralizedForce::new(fx, fy, izz * alpha)
        };
        let thrusts = allocate_thrust(&force, &plant.geometry);
        commands.push(thrusts);

        if k + 1 < n {
            let applied = resolve_thrust(thrusts, &plant.geometry)?;
            x = propagator.step(&x, &applied, dt);
            if !x.iter().all(|c| c.is_finite()) || x.rows(0, 6).norm() > 1e3 {
                return Err(Error::Divergence { t: t + dt });
            }
        }
    }
    Ok(OrbitFollowerRun {
        input: InputSequence::uniform(0.0, dt, commands, CommandDomain::Force)?,
        max_tracking_error: max_err,
    })
}

/// State and output sensitivities to `θ = (m, Izz)` at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensitivityState {
    /// `∂(x, y, ψ, u, v, r)/∂θ`.
    pub s_x_theta: SMatrix<f64, 6, 2>,
    /// `∂(x, y, ψ)/∂θ`.
    pub s_y_theta: SMatrix<f64, 3, 2>,
}

impl SensitivityState {
    fn from_state_sensitivity(s: SMatrix<f64, 6, 2>) -> Self {
        Self {
            s_x_theta: s,
            s_y_theta: s.fixed_rows::<3>(0).into_owned(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SensitivityHistory {
    pub times: Vec<f64>,
    pub states: Vec<AugmentedState>,
    pub sensitivities: Vec<SensitivityState>,
}

type Sens = SMatrix<f64, 6, 2>;

fn sensitivity_rates(
    plant: &Plant,
    x: &Vector8,
    s: &Sens,
    f: &GeneralizedForce,
) -> (Vector8, Sens) {
    let j = plant.derivative_jacobian(x, f);
    let a = j.fixed_view::<6, 6>(0, 0);
    let b = j.fixed_view::<6, 2>(0, MASS);
    (plant.derivative(x, f), a * s + b)
}

/// Integrates `Ṡ = (∂F/∂x)·S + ∂F/∂θ` with `S(t0) = 0` alongside the state,
/// sampling at the propagator's step.
pub fn propagate_sensitivity(
    propagator: &Propagator,
    state0: &AugmentedState,
    schedule: &ForceSchedule,
    t0: f64,
    tf: f64,
) -> Result<SensitivityHistory> {
    if !(tf > t0) {
        return Err(Error::InvalidArgument(format!(
            "sensitivity span must satisfy tf > t0, got [{t0}, {tf}]"
        )));
    }
    schedule.check_covers(t0, tf)?;
    let mut x = state0.to_vector();
    check_parameters(&x)?;
    debug_assert_eq!(IZZ, MASS + 1);

    let plant = &propagator.plant;
    let dt = propagator.dt;
    let n = ((tf - t0) / dt - TIME_EPS).ceil() as usize;
    let mut s = Sens::zeros();
    let mut hist = SensitivityHistory {
        times: Vec::with_capacity(n + 1),
        states: Vec::with_capacity(n + 1),
        sensitivities: Vec::with_capacity(n + 1),
    };
    hist.times.push(t0);
    hist.states.push(*state0);
    hist.sensitivities
        .push(SensitivityState::from_state_sensitivity(s));
    for k in 1..=n {
        let ta = hist.times[k - 1];
        let tb = if k == n { tf } else { t0 + k as f64 * dt };
        let h = tb - ta;
        let f = schedule.force_at(ta);
        let (k1, l1) = sensitivity_rates(plant, &x, &s, &f);
        let (k2, l2) = sensitivity_rates(plant, &(x + k1 * (h / 2.0)), &(s + l1 * (h / 2.0)), &f);
        let (k3, l3) = sensitivity_rates(plant, &(x + k2 * (h / 2.0)), &(s + l2 * (h / 2.0)), &f);
        let (k4, l4) = sensitivity_rates(plant, &(x + k3 * h), &(s + l3 * h), &f);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        s += (l1 + l2 * 2.0 + l3 * 2.0 + l4) * (h / 6.0);
        hist.times.push(tb);
        hist.states.push(AugmentedState::from_vector(&x));
        hist.sensitivities
            .push(SensitivityState::from_state_sensitivity(s));
    }
    Ok(hist)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Observability {
    Observable,
    WeaklyObservable,
}

/// Scalar excitation measure per parameter, ordered `[mass, izz]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ObservabilityReport {
    pub scores: [f64; 2],
    pub verdicts: [Observability; 2],
    pub threshold: f64,
}

pub const DEFAULT_OBSERVABILITY_THRESHOLD: f64 = 10.0;

/// `score_j = Σ_t Σ_out (S_y[out, j] / σ_out)² · Δt`.
pub fn observability_score(
    history: &SensitivityHistory,
    noise_std: [f64; 3],
    threshold: f64,
) -> Result<ObservabilityReport> {
    if history.times.is_empty() {
        return Err(Error::InvalidArgument("empty sensitivity history".into()));
    }
    if noise_std.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "noise standard deviations must be positive, got {noise_std:?}"
        )));
    }
    let mut scores = [0.0; 2];
    for (k, sens) in history.sensitivities.iter().enumerate() {
        let dt = match history.times.get(k + 1) {
            Some(next) => next - history.times[k],
            None => continue,
        };
        for (j, score) in scores.iter_mut().enumerate() {
            *score += (0..3)
                .map(|o| (sens.s_y_theta[(o, j)] / noise_std[o]).powi(2))
                .sum::<f64>()
                * dt;
        }
    }
    let verdict = |s: f64| {
        if s > threshold {
            Observability::Observable
        } else {
            Observability::WeaklyObservable
        }
    };
    Ok(ObservabilityReport {
        scores,
        verdicts: [verdict(scores[0]), verdict(scores[1])],
        threshold,
    })
}

/// Default phase-shifted sine: 0.025 N, 1 rad/s, π/4 phase step.
pub fn default_phase_shifted_sine(duration: f64, dt: f64) -> Result<InputSequence> {
    phase_shifted_sine(0.025, 1.0, PI / 4.0, duration, dt, SineMode::Signed)
}

/// Default seven-plus-seven second translation/rotation profile.
pub fn default_translation_then_rotation(dt: f64) -> Result<InputSequence> {
    translation_then_rotation(7.0, 0.1, FRAC_PI_2, dt)
}
