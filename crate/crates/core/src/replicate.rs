//! End-to-end presets reproducing the published identification results on
//! synthetic data.

use serde::Serialize;

use crate::dynamics::{Propagator, IZZ, MASS};
use crate::error::Result;
use crate::estimators::ekf::DEFAULT_INITIAL_STD;
use crate::estimators::{
    batch_least_squares, ekf_run, ls_seeded_ekf, residual_analysis, BatchConfig, EkfConfig,
    ParameterRmse, PriorInfo, ResidualStats,
};
use crate::montecarlo::{consistency_stats, run_monte_carlo, McConfig};
use crate::scenario::{
    generate_synthetic, DatasetBundle, InputSpec, ScenarioConfig, TRUE_IZZ, TRUE_MASS,
};

/// Seed window of the LS-seeded filter, seconds.
pub const SEED_WINDOW_S: f64 = 20.0;

/// Published reference values for comparison in reports.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Reference {
    pub mass: f64,
    pub izz: f64,
    pub mass_rel_err: Option<f64>,
    pub izz_rel_err: Option<f64>,
}

pub const TABLE4_SINE: Reference = Reference {
    mass: 2.2661,
    izz: 0.00378,
    mass_rel_err: Some(0.00078),
    izz_rel_err: Some(0.000028),
};
pub const TABLE4_ORBIT: Reference = Reference {
    mass: 2.317,
    izz: 0.0061,
    mass_rel_err: Some(0.0216),
    izz_rel_err: Some(0.6138),
};
/// Full-run RMSE of the filter alone.
pub const EKF_RMSE: ParameterRmse = ParameterRmse {
    mass: 0.2267,
    izz: 2.85e-4,
};
/// Full-run RMSE of the batch-seeded filter.
pub const SEEDED_RMSE: ParameterRmse = ParameterRmse {
    mass: 0.11,
    izz: 1.74e-5,
};

/// Velocity standard deviation (m/s and rad/s) of the at-rest batch prior.
pub const AT_REST_VELOCITY_STD: f64 = 1e-5;

/// Prior used by the batch presets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchPrior {
    /// Default initial distribution, except that the body rates are known to
    /// be zero at the epoch: the module starts from rest.
    #[default]
    AtRest,
    /// Default initial distribution unchanged.
    Nominal,
}

impl BatchPrior {
    pub fn prior_info(self) -> Result<PriorInfo> {
        let mut std = DEFAULT_INITIAL_STD;
        if self == BatchPrior::AtRest {
            std[3..6].fill(AT_REST_VELOCITY_STD);
        }
        PriorInfo::from_std(EkfConfig::nominal().initial_mean, std)
    }
}

impl std::str::FromStr for BatchPrior {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "at-rest" => Ok(Self::AtRest),
            "nominal" => Ok(Self::Nominal),
            other => Err(crate::error::Error::InvalidArgument(format!(
                "unknown batch prior '{other}', expected at-rest or nominal"
            ))),
        }
    }
}

pub const PRESETS: [&str; 5] = [
    "table4-sine",
    "table4-orbit",
    "ekf-rmse",
    "seeded-ekf",
    "mc500",
];

/// The 120 s nominal dataset for `input`.
pub fn nominal_dataset(input: InputSpec, seed: u64) -> Result<DatasetBundle> {
    generate_synthetic(&ScenarioConfig {
        input,
        seed,
        ..Default::default()
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct BatchReplication {
    pub preset: &'static str,
    pub seed: u64,
    pub mass_kg: f64,
    pub izz_kgm2: f64,
    pub mass_rel_err: f64,
    pub izz_rel_err: f64,
    pub iterations: usize,
    pub prior: BatchPrior,
    pub residuals: ResidualStats,
    pub reference: Reference,
}

fn batch_on(
    preset: &'static str,
    input: InputSpec,
    reference: Reference,
    seed: u64,
    prior: BatchPrior,
) -> Result<BatchReplication> {
    let data = nominal_dataset(input, seed)?;
    let meas = data.measurement_records()?;
    let schedule = data.force_schedule()?;
    let propagator = Propagator::new(data.meta.plant(), Propagator::DEFAULT_DT)?;
    let res = batch_least_squares(
        &meas,
        &schedule,
        &propagator,
        &prior.prior_info()?,
        &BatchConfig::default(),
    )?;
    Ok(BatchReplication {
        preset,
        seed,
        mass_kg: res.x0_hat.mass,
        izz_kgm2: res.x0_hat.izz,
        mass_rel_err: (res.x0_hat.mass - TRUE_MASS).abs() / TRUE_MASS,
        izz_rel_err: (res.x0_hat.izz - TRUE_IZZ).abs() / TRUE_IZZ,
        iterations: res.iterations,
        prior,
        residuals: residual_analysis(&res.residuals)?,
        reference,
    })
}

/// Batch least squares on the phase-shifted sine.
pub fn table4_sine(seed: u64, prior: BatchPrior) -> Result<BatchReplication> {
    batch_on(
        "table4-sine",
        InputSpec::phase_shifted_sine(),
        TABLE4_SINE,
        seed,
        prior,
    )
}

/// Batch least squares on the PD orbit follower.
pub fn table4_orbit(seed: u64, prior: BatchPrior) -> Result<BatchReplication> {
    batch_on(
        "table4-orbit",
        InputSpec::orbit_follower(),
        TABLE4_ORBIT,
        seed,
        prior,
    )
}

#[derive(Clone, Debug, Serialize)]
pub struct EkfReplication {
    pub preset: &'static str,
    pub seed: u64,
    pub rmse: ParameterRmse,
    pub final_mass_kg: f64,
    pub final_izz_kgm2: f64,
    pub final_mass_rel_err: f64,
    pub final_izz_rel_err: f64,
    pub final_mass_sigma: f64,
    pub final_izz_sigma: f64,
    pub reference_rmse: ParameterRmse,
}

fn ekf_summary(
    preset: &'static str,
    seed: u64,
    res: &crate::estimators::EkfResult,
    reference_rmse: ParameterRmse,
) -> EkfReplication {
    let fin = res.final_mean();
    let p = res.final_cov();
    EkfReplication {
        preset,
        seed,
        rmse: res.rmse.expect("synthetic data carries truth"),
        final_mass_kg: fin.mass,
        final_izz_kgm2: fin.izz,
        final_mass_rel_err: (fin.mass - TRUE_MASS).abs() / TRUE_MASS,
        final_izz_rel_err: (fin.izz - TRUE_IZZ).abs() / TRUE_IZZ,
        final_mass_sigma: p[(MASS, MASS)].sqrt(),
        final_izz_sigma: p[(IZZ, IZZ)].sqrt(),
        reference_rmse,
    }
}

/// The filter alone from the default initial distribution.
pub fn ekf_rmse(seed: u64) -> Result<EkfReplication> {
    let data = nominal_dataset(InputSpec::phase_shifted_sine(), seed)?;
    let meas = data.measurement_records()?;
    let propagator = Propagator::new(data.meta.plant(), Propagator::DEFAULT_DT)?;
    let res = ekf_run(
        &meas,
        &data.force_schedule()?,
        &propagator,
        &EkfConfig::nominal(),
        data.truth_reference().as_ref(),
    )?;
    Ok(ekf_summary("ekf-rmse", seed, &res, EKF_RMSE))
}

#[derive(Clone, Debug, Serialize)]
pub struct SeededReplication {
    #[serde(flatten)]
    pub ekf: EkfReplication,
    pub seed_window_s: f64,
    pub prior: BatchPrior,
    pub batch_mass_kg: f64,
    pub batch_izz_kgm2: f64,
    pub batch_iterations: usize,
}

/// Batch least squares over the first 20 s, then the filter over all data.
/// `prior` is the batch prior of the seed window.
pub fn seeded_ekf(seed: u64, prior: BatchPrior) -> Result<SeededReplication> {
    let data = nominal_dataset(InputSpec::phase_shifted_sine(), seed)?;
    let meas = data.measurement_records()?;
    let propagator = Propagator::new(data.meta.plant(), Propagator::DEFAULT_DT)?;
    let res = ls_seeded_ekf(
        &meas,
        &data.force_schedule()?,
        &propagator,
        SEED_WINDOW_S,
        &EkfConfig {
            initial_cov: prior.prior_info()?.p0_bar,
            ..EkfConfig::nominal()
        },
        &BatchConfig::default(),
        data.truth_reference().as_ref(),
    )?;
    Ok(SeededReplication {
        ekf: ekf_summary("seeded-ekf", seed, &res.ekf, SEEDED_RMSE),
        seed_window_s: SEED_WINDOW_S,
        prior,
        batch_mass_kg: res.batch.x0_hat.mass,
        batch_izz_kgm2: res.batch.x0_hat.izz,
        batch_iterations: res.batch.iterations,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ParameterSummary {
    pub mean_final_error: f64,
    pub mean_final_sigma: f64,
    /// `|mean error| ≤ 0.1·mean σ`.
    pub unbiased: bool,
    pub min_containment_3sigma: f64,
    pub consistency_fraction_within: f64,
    pub flagged_times_s: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct McReplication {
    pub preset: &'static str,
    pub seed: u64,
    pub n_runs: usize,
    pub n_effective: usize,
    pub failed_runs: usize,
    pub mass: ParameterSummary,
    pub izz: ParameterSummary,
}

/// 500-run campaign with ±50 % parameter variation.
pub fn mc500(seed: u64) -> Result<(McReplication, crate::montecarlo::McReport)> {
    let report = run_monte_carlo(&McConfig::nominal(seed)?)?;
    let consistency = consistency_stats(&report)?;
    let [(me, ms), (ie, is)] = report.final_bias();
    let summary = |mean_err: f64,
                   mean_sigma: f64,
                   series: &crate::montecarlo::ParameterSeries,
                   c: &crate::montecarlo::ConsistencySeries| ParameterSummary {
        mean_final_error: mean_err,
        mean_final_sigma: mean_sigma,
        unbiased: mean_err.abs() <= 0.1 * mean_sigma,
        min_containment_3sigma: series
            .containment_3sigma
            .iter()
            .copied()
            .fold(1.0, f64::min),
        consistency_fraction_within: c.fraction_within(),
        flagged_times_s: c.flagged.iter().map(|&k| report.times[k]).collect(),
    };
    let rep = McReplication {
        preset: "mc500",
        seed,
        n_runs: report.n_runs,
        n_effective: report.n_effective,
        failed_runs: report.failed.len(),
        mass: summary(me, ms, &report.mass, &consistency.mass),
        izz: summary(ie, is, &report.izz, &consistency.izz),
    };
    Ok((rep, report))
}
