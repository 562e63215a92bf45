//! Monte Carlo harness over randomized inertial parameters.
//!
//! Each run draws true `(m, Izz)` uniformly around the nominal values,
//! simulates the truth with small random accelerations, samples noisy poses,
//! and runs the EKF initialized at the drawn values. Per-step errors,
//! filter variances and 3σ containment are reduced across runs in run order,
//! so reports are bit-identical for a given seed regardless of thread
//! scheduling.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{AugmentedState, Plant, Propagator, IZZ, MASS};
use crate::error::{Error, Result};
use crate::estimators::{ekf_run, pose_covariance, EkfConfig};
use crate::excitation::InputSequence;
use crate::scenario::{
    sample_measurements, simulate_truth, InputSpec, NoiseStd, TRUE_IZZ, TRUE_MASS,
};

/// Ratio bounds outside which a step is flagged as inconsistent.
pub const CONSISTENCY_LOW: f64 = 0.5;
pub const CONSISTENCY_HIGH: f64 = 2.0;
/// Minimum successful runs for consistency statistics.
pub const MIN_CONSISTENCY_RUNS: usize = 30;

#[derive(Clone, Debug)]
pub struct McConfig {
    pub n_runs: usize,
    /// Half-width of the uniform parameter band as a fraction of nominal.
    pub param_variation: f64,
    /// Initial covariance, process noise and measurement covariance of the
    /// filter. Its initial mean is replaced by each run's true state.
    pub base: EkfConfig,
    pub input: InputSequence,
    pub seed: u64,
    pub nominal_mass: f64,
    pub nominal_izz: f64,
    pub plant: Plant,
    pub noise_std: NoiseStd,
    pub rate_hz: f64,
    /// Truth accelerations on `(u, v, r)`.
    pub process_noise_std: [f64; 3],
    pub dt: f64,
}

impl McConfig {
    /// 500 runs, ±50 %, the translation-then-rotation input, 50 Hz poses.
    pub fn nominal(seed: u64) -> Result<Self> {
        let plant = Plant::default();
        let dt = Propagator::DEFAULT_DT;
        let input = InputSpec::translation_then_rotation().build(
            14.0,
            dt,
            &plant,
            &AugmentedState::at_rest(TRUE_MASS, TRUE_IZZ),
        )?;
        Ok(Self {
            n_runs: 500,
            param_variation: 0.5,
            base: EkfConfig::nominal(),
            input,
            seed,
            nominal_mass: TRUE_MASS,
            nominal_izz: TRUE_IZZ,
            plant,
            noise_std: NoiseStd::default(),
            rate_hz: 50.0,
            process_noise_std: [1e-3; 3],
            dt,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::InvalidArgument("n_runs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.param_variation) {
            return Err(Error::InvalidArgument(format!(
                "param_variation must lie in [0, 1), got {}",
                self.param_variation
            )));
        }
        AugmentedState::at_rest(self.nominal_mass, self.nominal_izz).validate()?;
        if self
            .noise_std
            .as_array()
            .iter()
            .chain(&self.process_noise_std)
            .any(|s| !(*s >= 0.0))
        {
            return Err(Error::InvalidArgument(
                "noise standard deviations must be non-negative".into(),
            ));
        }
        if !(self.rate_hz > 0.0 && self.dt > 0.0) {
            return Err(Error::InvalidArgument(
                "rate and dt must be positive".into(),
            ));
        }
        let stride = (1.0 / self.rate_hz) / self.dt;
        if (stride - stride.round()).abs() > 1e-9 || stride.round() < 1.0 {
            return Err(Error::Configuration(format!(
                "measurement interval 1/{} s is not a multiple of dt = {}",
                self.rate_hz, self.dt
            )));
        }
        self.base.validate()
    }
}

/// Campaign description as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McCampaign {
    pub n_runs: usize,
    pub param_variation: f64,
    pub seed: u64,
    pub duration_s: f64,
    pub input: InputSpec,
    pub noise_std: NoiseStd,
    pub rate_hz: f64,
    pub process_noise_std: [f64; 3],
    pub mass_process_noise: f64,
}

impl Default for McCampaign {
    fn default() -> Self {
        Self {
            n_runs: 500,
            param_variation: 0.5,
            seed: 0,
            duration_s: 14.0,
            input: InputSpec::translation_then_rotation(),
            noise_std: NoiseStd::default(),
            rate_hz: 50.0,
            process_noise_std: [1e-3; 3],
            mass_process_noise: crate::estimators::ekf::DEFAULT_MASS_PROCESS_NOISE,
        }
    }
}

impl McCampaign {
    pub fn to_config(&self) -> Result<McConfig> {
        let mut cfg = McConfig::nominal(self.seed)?;
        cfg.input = self.input.build(
            self.duration_s,
            cfg.dt,
            &cfg.plant,
            &AugmentedState::at_rest(cfg.nominal_mass, cfg.nominal_izz),
        )?;
        cfg.n_runs = self.n_runs;
        cfg.param_variation = self.param_variation;
        cfg.noise_std = self.noise_std;
        cfg.rate_hz = self.rate_hz;
        cfg.process_noise_std = self.process_noise_std;
        cfg.base.process_noise[(MASS, MASS)] = self.mass_process_noise;
        cfg.base.measurement_cov = pose_covariance(self.noise_std.as_array());
        Ok(cfg)
    }
}

/// Per-step aggregates for one parameter.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParameterSeries {
    /// Mean of `estimate − truth` across runs.
    pub mean_error: Vec<f64>,
    /// Mean of the filter variance across runs.
    pub avg_filter_var: Vec<f64>,
    /// Sample variance of the error across runs.
    pub sample_var: Vec<f64>,
    /// Fraction of runs with `|error| ≤ 3σ`.
    pub containment_3sigma: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RunFinal {
    pub run: usize,
    pub true_mass: f64,
    pub true_izz: f64,
    pub mass_error: f64,
    pub izz_error: f64,
    pub mass_sigma: f64,
    pub izz_sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FailedRun {
    pub run: usize,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McReport {
    pub seed: u64,
    pub n_runs: usize,
    /// Successful runs included in the aggregates.
    pub n_effective: usize,
    pub times: Vec<f64>,
    pub mass: ParameterSeries,
    pub izz: ParameterSeries,
    pub finals: Vec<RunFinal>,
    pub failed: Vec<FailedRun>,
}

impl McReport {
    /// Mean final error and mean final σ for `(mass, izz)`.
    pub fn final_bias(&self) -> [(f64, f64); 2] {
        let n = self.finals.len().max(1) as f64;
        let mean = |f: fn(&RunFinal) -> f64| self.finals.iter().map(f).sum::<f64>() / n;
        [
            (mean(|r| r.mass_error), mean(|r| r.mass_sigma)),
            (mean(|r| r.izz_error), mean(|r| r.izz_sigma)),
        ]
    }

    /// Per-step aggregates as a plot-ready CSV.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "time_s",
            "mass_mean_err_kg",
            "mass_avg_filter_var_kg2",
            "mass_sample_var_kg2",
            "mass_containment_3sigma",
            "izz_mean_err_kgm2",
            "izz_avg_filter_var_kg2m4",
            "izz_sample_var_kg2m4",
            "izz_containment_3sigma",
        ])?;
        for (k, t) in self.times.iter().enumerate() {
            let (m, i) = (&self.mass, &self.izz);
            out.write_record(
                [
                    *t,
                    m.mean_error[k],
                    m.avg_filter_var[k],
                    m.sample_var[k],
                    m.containment_3sigma[k],
                    i.mean_error[k],
                    i.avg_filter_var[k],
                    i.sample_var[k],
                    i.containment_3sigma[k],
                ]
                .map(|v| v.to_string()),
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

struct RunTrace {
    times: Vec<f64>,
    /// `(error, variance)` per step for mass and izz.
    mass: Vec<(f64, f64)>,
    izz: Vec<(f64, f64)>,
    fin: RunFinal,
}

/// RNG for run `index`, independent of execution order.
fn run_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn single_run(
    cfg: &McConfig,
    schedule: &crate::dynamics::ForceSchedule,
    index: usize,
) -> Result<RunTrace> {
    let mut rng = run_rng(cfg.seed, index);
    let f = cfg.param_variation;
    let draw = |rng: &mut ChaCha8Rng, nominal: f64| {
        if f == 0.0 {
            nominal
        } else {
            rng.random_range((1.0 - f) * nominal..=(1.0 + f) * nominal)
        }
    };
    let mass = draw(&mut rng, cfg.nominal_mass);
    let izz = draw(&mut rng, cfg.nominal_izz);
    let truth0 = AugmentedState::at_rest(mass, izz);

    let propagator = Propagator::new(cfg.plant, cfg.dt)?;
    let t_end = cfg.input.end();
    let truth = simulate_truth(
        &propagator,
        &truth0,
        schedule,
        t_end,
        cfg.process_noise_std,
        &mut rng,
    )?;
    let stride = ((1.0 / cfg.rate_hz) / cfg.dt).round() as usize;
    let poses = sample_measurements(&truth, stride, &cfg.noise_std, &mut rng);
    let measurements = poses
        .iter()
        .map(|p| p.to_measurement(cfg.base.measurement_cov))
        .collect::<Result<Vec<_>>>()?;

    let filter = EkfConfig {
        initial_mean: truth0,
        ..cfg.base.clone()
    };
    let res = ekf_run(&measurements, schedule, &propagator, &filter, None)?;
    let pair = |idx: usize, truth: f64| -> Vec<(f64, f64)> {
        res.means
            .iter()
            .zip(&res.covs)
            .map(|(m, p)| (m.to_vector()[idx] - truth, p[(idx, idx)]))
            .collect()
    };
    let mass_trace = pair(MASS, mass);
    let izz_trace = pair(IZZ, izz);
    let (me, mv) = *mass_trace.last().expect("non-empty run");
    let (ie, iv) = *izz_trace.last().expect("non-empty run");
    Ok(RunTrace {
        times: res.times,
        mass: mass_trace,
        izz: izz_trace,
        fin: RunFinal {
            run: index,
            true_mass: mass,
            true_izz: izz,
            mass_error: me,
            izz_error: ie,
            mass_sigma: mv.sqrt(),
            izz_sigma: iv.sqrt(),
        },
    })
}

fn reduce(traces: &[&RunTrace], pick: fn(&RunTrace) -> &Vec<(f64, f64)>) -> ParameterSeries {
    let steps = pick(traces[0]).len();
    let n = traces.len() as f64;
    let mut s = ParameterSeries {
        mean_error: Vec::with_capacity(steps),
        avg_filter_var: Vec::with_capacity(steps),
        sample_var: Vec::with_capacity(steps),
        containment_3sigma: Vec::with_capacity(steps),
    };
    for k in 0..steps {
        let (mut sum_e, mut sum_v, mut inside) = (0.0, 0.0, 0usize);
        for tr in traces {
            let (e, v) = pick(tr)[k];
            sum_e += e;
            sum_v += v;
            if e.abs() <= 3.0 * v.max(0.0).sqrt() {
                inside += 1;
            }
        }
        let mean = sum_e / n;
        let var = if traces.len() > 1 {
            traces
                .iter()
                .map(|tr| (pick(tr)[k].0 - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0)
        } else {
            0.0
        };
        s.mean_error.push(mean);
        s.avg_filter_var.push(sum_v / n);
        s.sample_var.push(var);
        s.containment_3sigma.push(inside as f64 / n);
    }
    s
}

/// Runs the campaign in parallel and reduces the runs in index order.
pub fn run_monte_carlo(cfg: &McConfig) -> Result<McReport> {
    cfg.validate()?;
    let schedule = cfg.input.to_force_schedule(&cfg.plant.geometry, None)?;
    let outcomes: Vec<Result<RunTrace>> = (0..cfg.n_runs)
        .into_par_iter()
        .map(|i| single_run(cfg, &schedule, i))
        .collect();

    let mut ok = Vec::with_capacity(outcomes.len());
    let mut failed = Vec::new();
    for (run, outcome) in outcomes.iter().enumerate() {
        match outcome {
            Ok(trace) => ok.push(trace),
            Err(e) => failed.push(FailedRun {
                run,
                error: e.to_string(),
            }),
        }
    }
    if ok.is_empty() {
        return Err(Error::NumericalFailure {
            step: 0,
            reason: format!("all {} Monte Carlo runs failed", cfg.n_runs),
        });
    }
    Ok(McReport {
        seed: cfg.seed,
        n_runs: cfg.n_runs,
        n_effective: ok.len(),
        times: ok[0].times.clone(),
        mass: reduce(&ok, |t| &t.mass),
        izz: reduce(&ok, |t| &t.izz),
        finals: ok.iter().map(|t| t.fin).collect(),
        failed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConsistencySeries {
    /// Sample variance over average filter variance, per step.
    pub ratio: Vec<f64>,
    /// Step indices with ratio outside `[0.5, 2]`.
    pub flagged: Vec<usize>,
}

impl ConsistencySeries {
    pub fn fraction_within(&self) -> f64 {
        if self.ratio.is_empty() {
            return 0.0;
        }
        1.0 - self.flagged.len() as f64 / self.ratio.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub mass: ConsistencySeries,
    pub izz: ConsistencySeries,
}

fn ratio_series(s: &ParameterSeries) -> ConsistencySeries {
    let ratio: Vec<f64> = s
        .sample_var
        .iter()
        .zip(&s.avg_filter_var)
        .map(|(sv, fv)| match (*sv == 0.0, *fv == 0.0) {
            (true, true) => 1.0,
            (_, true) => f64::INFINITY,
            _ => sv / fv,
        })
        .collect();
    let flagged = ratio
        .iter()
        .enumerate()
        .filter(|(_, r)| !(CONSISTENCY_LOW..=CONSISTENCY_HIGH).contains(*r))
        .map(|(k, _)| k)
        .collect();
    ConsistencySeries { ratio, flagged }
}

pub fn consistency_stats(report: &McReport) -> Result<ConsistencyReport> {
    if report.n_effective < MIN_CONSISTENCY_RUNS {
        return Err(Error::InvalidArgument(format!(
            "consistency statistics need at least {MIN_CONSISTENCY_RUNS} runs, got {}",
            report.n_effective
        )));
    }
    Ok(ConsistencyReport {
        mass: ratio_series(&report.mass),
        izz: ratio_series(&report.izz),
    })
}
