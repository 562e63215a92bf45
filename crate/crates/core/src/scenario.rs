//! Synthetic dataset generation and the on-disk dataset bundle.
//!
//! A bundle is a directory holding a JSON sidecar (`dataset.json`), the pose
//! measurements, the input sequence, and optionally the truth trajectory.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    AugmentedState, ForceSchedule, FrictionModel, GeneralizedForce, Kinematics, ModuleGeometry,
    Plant, Propagator, Trajectory, TIME_EPS,
};
use crate::error::{Error, Result};
use crate::estimators::{pose_covariance, MeasurementRecord, TruthReference};
use crate::excitation::{
    oscillatory_translation, pd_orbit_follower, phase_shifted_sine, translation_then_rotation,
    InputSequence, OrbitFollowerConfig, SineMode,
};
use crate::thrust::ThrustCurveSet;

pub const TRUE_MASS: f64 = 2.268;
/// `m·L²/6` for the nominal module.
pub const TRUE_IZZ: f64 = 0.00378;

pub const BUNDLE_FORMAT: &str = "inertia-id-dataset/1";
const SIDECAR: &str = "dataset.json";

/// Which thruster command history drives the scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InputSpec {
    PhaseShiftedSine {
        amplitude: f64,
        omega: f64,
        phase_step: f64,
        #[serde(default)]
        mode: SineMode,
    },
    TranslationThenRotation {
        half_duration: f64,
        amplitude: f64,
        omega: f64,
    },
    OscillatoryTranslation {
        amplitude: f64,
        omega: f64,
    },
    OrbitFollower {
        setpoint_amplitude: f64,
        period: f64,
        kp: f64,
        kd: f64,
    },
    /// Input CSV as written by `InputSequence::write_csv`.
    File {
        path: PathBuf,
    },
}

impl InputSpec {
    pub fn phase_shifted_sine() -> Self {
        Self::PhaseShiftedSine {
            amplitude: 0.025,
            omega: 1.0,
            phase_step: std::f64::consts::FRAC_PI_4,
            mode: SineMode::Signed,
        }
    }

    pub fn orbit_follower() -> Self {
        let d = OrbitFollowerConfig::default();
        Self::OrbitFollower {
            setpoint_amplitude: d.setpoint_amplitude,
            period: d.period,
            kp: d.kp,
            kd: d.kd,
        }
    }

    pub fn translation_then_rotation() -> Self {
        Self::TranslationThenRotation {
            half_duration: 7.0,
            amplitude: 0.1,
            omega: std::f64::consts::FRAC_PI_2,
        }
    }

    /// Builds the sequence. The orbit follower closes its loop on `plant`
    /// starting from `initial`.
    pub fn build(
        &self,
        duration: f64,
        dt: f64,
        plant: &Plant,
        initial: &AugmentedState,
    ) -> Result<InputSequence> {
        match self {
            InputSpec::PhaseShiftedSine {
                amplitude,
                omega,
                phase_step,
                mode,
            } => phase_shifted_sine(*amplitude, *omega, *phase_step, duration, dt, *mode),
            InputSpec::TranslationThenRotation {
                half_duration,
                amplitude,
                omega,
            } => translation_then_rotation(*half_duration, *amplitude, *omega, dt),
            InputSpec::OscillatoryTranslation { amplitude, omega } => {
                oscillatory_translation(*amplitude, *omega, duration, dt)
            }
            InputSpec::OrbitFollower {
                setpoint_amplitude,
                period,
                kp,
                kd,
            } => {
                let cfg = OrbitFollowerConfig {
                    setpoint_amplitude: *setpoint_amplitude,
                    period: *period,
                    kp: *kp,
                    kd: *kd,
                    duration,
                    dt,
                };
                Ok(pd_orbit_follower(&cfg, plant, initial)?.input)
            }
            InputSpec::File { path } => InputSequence::read_csv(BufReader::new(File::open(path)?)),
        }
    }
}

/// Per-channel pose noise, meters and radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseStd {
    pub x_m: f64,
    pub y_m: f64,
    pub psi_rad: f64,
}

impl NoiseStd {
    pub fn as_array(&self) -> [f64; 3] {
        [self.x_m, self.y_m, self.psi_rad]
    }
}

impl Default for NoiseStd {
    fn default() -> Self {
        Self {
            x_m: 0.01,
            y_m: 0.01,
            psi_rad: 1f64.to_radians(),
        }
    }
}

/// Everything needed to synthesize a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub geometry: ModuleGeometry,
    pub mass_kg: f64,
    pub izz_kgm2: f64,
    pub noise_std: NoiseStd,
    pub rate_hz: f64,
    pub duration_s: f64,
    /// Integration step, seconds. Reduced if needed so that it divides the
    /// measurement interval.
    pub dt: f64,
    pub input: InputSpec,
    pub friction: FrictionModel,
    pub kinematics: Kinematics,
    /// Random accelerations on `(u, v, r)` held over each integration step,
    /// m/s² and rad/s².
    pub process_noise_std: [f64; 3],
    /// Thrust curves for duty-domain input files.
    pub thrust_preset: Option<String>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            geometry: ModuleGeometry::default(),
            mass_kg: TRUE_MASS,
            izz_kgm2: TRUE_IZZ,
            noise_std: NoiseStd::default(),
            rate_hz: 50.0,
            duration_s: 120.0,
            dt: Propagator::DEFAULT_DT,
            input: InputSpec::phase_shifted_sine(),
            friction: FrictionModel::default(),
            kinematics: Kinematics::default(),
            process_noise_std: [0.0; 3],
            thrust_preset: None,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn plant(&self) -> Plant {
        Plant {
            geometry: self.geometry,
            friction: self.friction,
            kinematics: self.kinematics,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.friction.validate()?;
        AugmentedState::at_rest(self.mass_kg, self.izz_kgm2).validate()?;
        if self.noise_std.as_array().iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidArgument(
                "noise standard deviations must be non-negative".into(),
            ));
        }
        if self.process_noise_std.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidArgument(
                "process noise must be non-negative".into(),
            ));
        }
        if !(self.rate_hz > 0.0 && self.duration_s > 0.0 && self.dt > 0.0) {
            return Err(Error::InvalidArgument(
                "rate, duration and dt must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Integration step that divides the measurement interval evenly.
    pub fn effective_dt(&self) -> f64 {
        let interval = 1.0 / self.rate_hz;
        interval / (interval / self.dt - TIME_EPS).ceil().max(1.0)
    }

    pub fn thrust_curves(&self) -> Result<Option<ThrustCurveSet>> {
        self.thrust_preset
            .as_deref()
            .map(ThrustCurveSet::preset)
            .transpose()
    }
}

/// Pose sample without covariance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl PoseSample {
    pub fn to_measurement(&self, r_cov: nalgebra::Matrix3<f64>) -> Result<MeasurementRecord> {
        MeasurementRecord::new(self.t, Vector3::new(self.x, self.y, self.psi), r_cov)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthParameters {
    pub mass_kg: f64,
    pub izz_kgm2: f64,
}

/// JSON sidecar describing a dataset bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format: String,
    pub geometry: ModuleGeometry,
    pub noise_std: NoiseStd,
    pub truth: Option<TruthParameters>,
    pub rate_hz: f64,
    pub measurements_file: String,
    pub input_file: String,
    pub truth_file: Option<String>,
    #[serde(default)]
    pub friction: FrictionModel,
    #[serde(default)]
    pub kinematics: Kinematics,
    #[serde(default)]
    pub thrust_preset: Option<String>,
    pub seed: Option<u64>,
}

impl DatasetMeta {
    pub fn plant(&self) -> Plant {
        Plant {
            geometry: self.geometry,
            friction: self.friction,
            kinematics: self.kinematics,
        }
    }
}

/// Measurements, input and (for synthetic data) the truth trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub meta: DatasetMeta,
    pub measurements: Vec<PoseSample>,
    pub input: InputSequence,
    pub truth: Option<Trajectory>,
}

impl DatasetBundle {
    /// Measurement records with the covariance implied by the sidecar noise.
    pub fn measurement_records(&self) -> Result<Vec<MeasurementRecord>> {
        self.measurement_records_with(pose_covariance(self.meta.noise_std.as_array()))
    }

    pub fn measurement_records_with(
        &self,
        r_cov: nalgebra::Matrix3<f64>,
    ) -> Result<Vec<MeasurementRecord>> {
        self.measurements
            .iter()
            .map(|p| p.to_measurement(r_cov))
            .collect()
    }

    pub fn force_schedule(&self) -> Result<ForceSchedule> {
        let curves = self
            .meta
            .thrust_preset
            .as_deref()
            .map(ThrustCurveSet::preset)
            .transpose()?;
        self.input
            .to_force_schedule(&self.meta.geometry, curves.as_ref())
    }

    /// Truth trajectory if present, else the scalar reference parameters.
    pub fn truth_reference(&self) -> Option<TruthReference> {
        match (&self.truth, &self.meta.truth) {
            (Some(traj), _) => Some(TruthReference::Trajectory(traj.clone())),
            (None, Some(p)) => Some(TruthReference::Parameters {
                mass: p.mass_kg,
                izz: p.izz_kgm2,
            }),
            (None, None) => None,
        }
    }

    /// Keeps only measurements with `t <= t_end`.
    pub fn truncate(&mut self, t_end: f64) {
        self.measurements.retain(|m| m.t <= t_end + TIME_EPS);
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_pose_csv(
            &self.measurements,
            BufWriter::new(File::create(dir.join(&self.meta.measurements_file))?),
        )?;
        self.input.write_csv(BufWriter::new(File::create(
            dir.join(&self.meta.input_file),
        )?))?;
        if let (Some(traj), Some(name)) = (&self.truth, &self.meta.truth_file) {
            write_truth_csv(traj, BufWriter::new(File::create(dir.join(name))?))?;
        }
        let mut sidecar = BufWriter::new(File::create(dir.join(SIDECAR))?);
        serde_json::to_writer_pretty(&mut sidecar, &self.meta)?;
        sidecar.write_all(b"\n")?;
        sidecar.flush()?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let meta: DatasetMeta =
            serde_json::from_reader(BufReader::new(File::open(dir.join(SIDECAR))?))?;
        if meta.format != BUNDLE_FORMAT {
            return Err(Error::Validation(format!(
                "unsupported dataset format '{}', expected '{BUNDLE_FORMAT}'",
                meta.format
            )));
        }
        let measurements = read_pose_csv(BufReader::new(File::open(
            dir.join(&meta.measurements_file),
        )?))?;
        let input =
            InputSequence::read_csv(BufReader::new(File::open(dir.join(&meta.input_file))?))?;
        let truth = match &meta.truth_file {
            Some(name) => Some(read_truth_csv(BufReader::new(File::open(dir.join(name))?))?),
            None => None,
        };
        Ok(Self {
            meta,
            measurements,
            input,
            truth,
        })
    }
}

fn parse_field(rec: &csv::StringRecord, k: usize, name: &str, line: usize) -> Result<f64> {
    rec.get(k)
        .ok_or_else(|| Error::Parse {
            line,
            message: format!("missing column {name}"),
        })?
        .parse::<f64>()
        .map_err(|e| Error::Parse {
            line,
            message: format!("column {name}: {e}"),
        })
}

fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", expected.join(",")),
        });
    }
    Ok(())
}

const POSE_HEADER: [&str; 4] = ["time_s", "x_m", "y_m", "psi_rad"];
const TRUTH_HEADER: [&str; 9] = [
    "time_s", "x_m", "y_m", "psi_rad", "u_mps", "v_mps", "r_radps", "mass_kg", "izz_kgm2",
];

pub fn write_pose_csv<W: Write>(samples: &[PoseSample], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(POSE_HEADER)?;
    for p in samples {
        out.write_record([p.t, p.x, p.y, p.psi].map(|v| v.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_pose_csv<R: Read>(r: R) -> Result<Vec<PoseSample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    check_header(&mut rdr, &POSE_HEADER)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let f = |k| parse_field(&rec, k, POSE_HEADER[k], line);
        out.push(PoseSample {
            t: f(0)?,
            x: f(1)?,
            y: f(2)?,
            psi: f(3)?,
        });
    }
    Ok(out)
}

pub fn write_truth_csv<W: Write>(traj: &Trajectory, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRUTH_HEADER)?;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        out.write_record(
            [*t, s.x, s.y, s.psi, s.u, s.v, s.r, s.mass, s.izz].map(|v| v.to_string()),
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_truth_csv<R: Read>(r: R) -> Result<Trajectory> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    check_header(&mut rdr, &TRUTH_HEADER)?;
    let (mut times, mut states) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let f = |k| parse_field(&rec, k, TRUTH_HEADER[k], line);
        times.push(f(0)?);
        states.push(AugmentedState {
            x: f(1)?,
            y: f(2)?,
            psi: f(3)?,
            u: f(4)?,
            v: f(5)?,
            r: f(6)?,
            mass: f(7)?,
            izz: f(8)?,
        });
    }
    Trajectory::new(times, states)
}

/// Propagates the truth, adding zero-mean random accelerations held over each
/// integration step when `process_noise_std` is non-zero.
pub fn simulate_truth<R: Rng>(
    propagator: &Propagator,
    state0: &AugmentedState,
    schedule: &ForceSchedule,
    t_end: f64,
    process_noise_std: [f64; 3],
    rng: &mut R,
) -> Result<Trajectory> {
    let t0 = schedule.start();
    if process_noise_std.iter().all(|s| *s == 0.0) {
        return propagator.propagate(state0, schedule, t0, t_end);
    }
    schedule.check_covers(t0, t_end)?;
    state0.validate()?;
    let dists = process_noise_std.map(|s| Normal::new(0.0, s).expect("validated std"));
    let n = ((t_end - t0) / propagator.dt - TIME_EPS).ceil() as usize;
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    times.push(t0);
    states.push(*state0);
    let mut x = state0.to_vector();
    for k in 1..=n {
        let ta = times[k - 1];
        let tb = if k == n {
            t_end
        } else {
            t0 + k as f64 * propagator.dt
        };
        let [au, av, ar] = [0, 1, 2].map(|i| dists[i].sample(rng));
        let disturbance =
            GeneralizedForce::new(state0.mass * au, state0.mass * av, state0.izz * ar);
        x = propagator.step(&x, &(schedule.force_at(ta) + disturbance), tb - ta);
        times.push(tb);
        states.push(AugmentedState::from_vector(&x));
    }
    Trajectory::new(times, states)
}

/// Samples noisy pose measurements from `truth` every `stride` samples.
pub fn sample_measurements<R: Rng>(
    truth: &Trajectory,
    stride: usize,
    noise: &NoiseStd,
    rng: &mut R,
) -> Vec<PoseSample> {
    let dists = noise
        .as_array()
        .map(|s| Normal::new(0.0, s).expect("validated std"));
    truth
        .times
        .iter()
        .zip(&truth.states)
        .step_by(stride.max(1))
        .map(|(t, s)| PoseSample {
            t: *t,
            x: s.x + dists[0].sample(rng),
            y: s.y + dists[1].sample(rng),
            psi: s.psi + dists[2].sample(rng),
        })
        .collect()
}

/// Simulates the scenario and returns a dataset bundle.
pub fn generate_synthetic(scenario: &ScenarioConfig) -> Result<DatasetBundle> {
    scenario.validate()?;
    let dt = scenario.effective_dt();
    let stride = ((1.0 / scenario.rate_hz) / dt).round() as usize;
    let plant = scenario.plant();
    let propagator = Propagator::new(plant, dt)?;
    let state0 = AugmentedState::at_rest(scenario.mass_kg, scenario.izz_kgm2);

    let input = scenario
        .input
        .build(scenario.duration_s, dt, &plant, &state0)?;
    let curves = scenario.thrust_curves()?;
    let schedule = input.to_force_schedule(&scenario.geometry, curves.as_ref())?;

    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let t_end = schedule.start() + scenario.duration_s;
    let truth = simulate_truth(
        &propagator,
        &state0,
        &schedule,
        t_end,
        scenario.process_noise_std,
        &mut rng,
    )?;
    let measurements = sample_measurements(&truth, stride, &scenario.noise_std, &mut rng);

    Ok(DatasetBundle {
        meta: DatasetMeta {
            format: BUNDLE_FORMAT.into(),
            geometry: scenario.geometry,
            noise_std: scenario.noise_std,
            truth: Some(TruthParameters {
                mass_kg: scenario.mass_kg,
                izz_kgm2: scenario.izz_kgm2,
            }),
            rate_hz: scenario.rate_hz,
            measurements_file: "measurements.csv".into(),
            input_file: "input.csv".into(),
            truth_file: Some("truth.csv".into()),
            friction: scenario.friction,
            kinematics: scenario.kinematics,
            thrust_preset: scenario.thrust_preset.clone(),
            seed: Some(scenario.seed),
        },
        measurements,
        input,
        truth: Some(truth),
    })
}
