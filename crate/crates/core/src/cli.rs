//! Command-line front end.
//!
//! Usage errors exit with status 2 (clap's convention); validation and
//! runtime failures print a JSON error object on stderr and exit with 1.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::dynamics::{AugmentedState, Plant, Propagator};
use crate::error::{Error, Result};
use crate::estimators::{
    batch_least_squares, ekf_run, ls_seeded_ekf, residual_analysis, BatchConfig, EkfConfig,
};
use crate::excitation::{
    observability_score, propagate_sensitivity, InputSequence, DEFAULT_OBSERVABILITY_THRESHOLD,
};
use crate::io::{
    average_period, read_bench_csv, swing_test_moi, write_ekf_csv, write_residuals_csv,
    write_sensitivity_csv, SwingTestConfig, SCALE_ACCURACY_KG, STANDARD_GRAVITY,
};
use crate::montecarlo::{consistency_stats, run_monte_carlo, McCampaign};
use crate::replicate::{self, BatchPrior, SEED_WINDOW_S};
use crate::scenario::{
    generate_synthetic, DatasetBundle, InputSpec, ScenarioConfig, TRUE_IZZ, TRUE_MASS,
};
use crate::thrust::{compare_fit_orders, fit_thrust_curve, ThrustSample, DUTY_MAX, DUTY_MIN};

#[derive(Parser, Debug)]
#[command(
    name = "inertia-id",
    version,
    about = "Mass and moment-of-inertia identification from pose data"
)]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum InputPreset {
    Sine,
    Orbit,
    /// Oscillatory body-y force only.
    Translation,
    TranslationRotation,
}

impl InputPreset {
    fn spec(self) -> InputSpec {
        match self {
            InputPreset::Sine => InputSpec::phase_shifted_sine(),
            InputPreset::Orbit => InputSpec::orbit_follower(),
            InputPreset::Translation => InputSpec::OscillatoryTranslation {
                amplitude: 0.1,
                omega: std::f64::consts::FRAC_PI_2,
            },
            InputPreset::TranslationRotation => InputSpec::translation_then_rotation(),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    #[value(name = "table4-sine")]
    Table4Sine,
    #[value(name = "table4-orbit")]
    Table4Orbit,
    #[value(name = "ekf-rmse")]
    EkfRmse,
    #[value(name = "seeded-ekf")]
    SeededEkf,
    #[value(name = "mc500")]
    Mc500,
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
pub enum PriorArg {
    /// Default initial distribution with body rates known to be zero.
    #[default]
    AtRest,
    /// Default initial distribution.
    Nominal,
}

impl From<PriorArg> for BatchPrior {
    fn from(p: PriorArg) -> Self {
        match p {
            PriorArg::AtRest => BatchPrior::AtRest,
            PriorArg::Nominal => BatchPrior::Nominal,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset bundle.
    Simulate {
        /// Scenario JSON; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Input preset, overriding the config.
        #[arg(long, value_enum)]
        input: Option<InputPreset>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        duration: Option<f64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a duty-cycle thrust curve to a bench log.
    FitThrust {
        /// CSV with `time_s,duty_pct,thrust_gf`.
        #[arg(long)]
        bench: PathBuf,
        #[arg(long, default_value_t = 3)]
        order: usize,
        /// Number of simultaneously active nozzles in the log.
        #[arg(long, default_value_t = 1)]
        nozzles: u8,
        /// Orders to compare, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 3, 4])]
        compare: Vec<usize>,
        /// Curve JSON output; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter sensitivities and observability scores for an input.
    Sensitivity {
        /// Input CSV; overrides `--preset`.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "sine")]
        preset: InputPreset,
        #[arg(long, default_value_t = 120.0)]
        duration: f64,
        #[arg(long, default_value_t = TRUE_MASS)]
        mass: f64,
        #[arg(long, default_value_t = TRUE_IZZ)]
        izz: f64,
        #[arg(long, default_value_t = DEFAULT_OBSERVABILITY_THRESHOLD)]
        threshold: f64,
        /// Sensitivity CSV output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Iterated batch least squares on a dataset.
    EstimateBatch {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "at-rest")]
        prior: PriorArg,
        #[arg(long, default_value_t = 1e-8)]
        threshold: f64,
        #[arg(long, default_value_t = 50)]
        max_iter: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extended Kalman filter on a dataset.
    EstimateEkf {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Batch-seeded extended Kalman filter on a dataset.
    EstimateSeeded {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = SEED_WINDOW_S)]
        seed_window: f64,
        #[arg(long, value_enum, default_value = "at-rest")]
        prior: PriorArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo campaign.
    Montecarlo {
        /// Campaign JSON; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Moment of inertia from a bifilar swing test.
    #[command(allow_negative_numbers = true)]
    SwingMoi {
        /// Module mass, kg (bench scale reading).
        #[arg(long = "m", default_value_t = crate::io::MODULE_SCALE_MASS_KG)]
        m: f64,
        /// String separation, m.
        #[arg(long = "D")]
        d: f64,
        /// Unsupported string length, m.
        #[arg(long = "h")]
        h: f64,
        /// Period of one oscillation, s.
        #[arg(long = "T", required_unless_present = "timings")]
        t: Option<f64>,
        /// Repeated timings of ten oscillations, comma separated.
        #[arg(long, value_delimiter = ',', conflicts_with = "t")]
        timings: Option<Vec<f64>>,
        #[arg(long, default_value_t = STANDARD_GRAVITY)]
        g: f64,
    },
    /// Reproduce a published result on synthetic data.
    Replicate {
        #[arg(value_enum)]
        preset: Preset,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Batch prior for the least-squares presets.
        #[arg(long, value_enum, default_value = "at-rest")]
        prior: PriorArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdout = std::io::stdout();
    match execute(cli.command, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            1
        }
    }
}

fn print_json<W: Write, T: Serialize>(out: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

struct Loaded {
    bundle: DatasetBundle,
    propagator: Propagator,
}

fn load_dataset(dir: &Path) -> Result<Loaded> {
    let bundle = DatasetBundle::read(dir)?;
    let propagator = Propagator::new(bundle.meta.plant(), Propagator::DEFAULT_DT)?;
    Ok(Loaded { bundle, propagator })
}

/// EKF configuration with the dataset's pose noise as `R`.
fn ekf_config_for(bundle: &DatasetBundle) -> EkfConfig {
    EkfConfig {
        measurement_cov: crate::estimators::pose_covariance(bundle.meta.noise_std.as_array()),
        ..EkfConfig::nominal()
    }
}

fn execute<W: Write>(command: Command, out: &mut W) -> Result<()> {
    match command {
        Command::Simulate {
            config,
            input,
            seed,
            duration,
            out: dir,
        } => {
            let mut scenario: ScenarioConfig = match config {
                Some(p) => read_json(&p)?,
                None => ScenarioConfig::default(),
            };
            if let Some(i) = input {
                scenario.input = i.spec();
            }
            if let Some(s) = seed {
                scenario.seed = s;
            }
            if let Some(d) = duration {
                scenario.duration_s = d;
            }
            let bundle = generate_synthetic(&scenario)?;
            bundle.write(&dir)?;
            print_json(
                out,
                &json!({
                    "dataset": dir,
                    "measurements": bundle.measurements.len(),
                    "seed": scenario.seed,
                }),
            )
        }
        Command::FitThrust {
            bench,
            order,
            nozzles,
            compare,
            out: path,
        } => {
            let all = read_bench_csv(BufReader::new(File::open(&bench)?))?;
            let samples: Vec<ThrustSample> = all
                .into_iter()
                .filter(|s| (DUTY_MIN..=DUTY_MAX).contains(&s.duty))
                .collect();
            let curve = fit_thrust_curve(&samples, order, nozzles)?;
            let comparison = compare_fit_orders(&samples, &compare)?;
            if let Some(p) = &path {
                write_json(p, &curve)?;
            }
            print_json(out, &json!({ "curve": curve, "comparison": comparison }))
        }
        Command::Sensitivity {
            input,
            preset,
            duration,
            mass,
            izz,
            threshold,
            out: path,
        } => {
            let plant = Plant::default();
            let propagator = Propagator::new(plant, Propagator::DEFAULT_DT)?;
            let state0 = AugmentedState::at_rest(mass, izz);
            let seq = match input {
                Some(p) => InputSequence::read_csv(BufReader::new(File::open(p)?))?,
                None => preset
                    .spec()
                    .build(duration, propagator.dt, &plant, &state0)?,
            };
            let schedule = seq.to_force_schedule(&plant.geometry, None)?;
            let t_end = (seq.start() + duration).min(seq.end());
            let hist = propagate_sensitivity(&propagator, &state0, &schedule, seq.start(), t_end)?;
            let noise = crate::scenario::NoiseStd::default().as_array();
            let report = observability_score(&hist, noise, threshold)?;
            if let Some(p) = &path {
                write_sensitivity_csv(&hist, BufWriter::new(File::create(p)?))?;
            }
            print_json(out, &report)
        }
        Command::EstimateBatch {
            dataset,
            prior,
            threshold,
            max_iter,
            out: dir,
        } => {
            let d = load_dataset(&dataset)?;
            let meas = d.bundle.measurement_records()?;
            let cfg = BatchConfig {
                threshold,
                max_iter,
            };
            let prior = BatchPrior::from(prior).prior_info()?;
            let res = batch_least_squares(
                &meas,
                &d.bundle.force_schedule()?,
                &d.propagator,
                &prior,
                &cfg,
            )?;
            let stats = residual_analysis(&res.residuals)?;
            let summary = json!({
                "mass_kg": res.x0_hat.mass,
                "izz_kgm2": res.x0_hat.izz,
                "sigma_mass_kg": res.p0[(6, 6)].sqrt(),
                "sigma_izz_kgm2": res.p0[(7, 7)].sqrt(),
                "x0_hat": res.x0_hat,
                "iterations": res.iterations,
                "final_correction_norm": res.final_correction_norm,
                "costs": res.costs,
                "residuals": stats,
            });
            if let Some(dir) = &dir {
                fs::create_dir_all(dir)?;
                write_json(&dir.join("summary.json"), &summary)?;
                write_residuals_csv(
                    &res,
                    BufWriter::new(File::create(dir.join("residuals.csv"))?),
                )?;
            }
            print_json(out, &summary)
        }
        Command::EstimateEkf { dataset, out: dir } => {
            let d = load_dataset(&dataset)?;
            let meas = d.bundle.measurement_records()?;
            let truth = d.bundle.truth_reference();
            let res = ekf_run(
                &meas,
                &d.bundle.force_schedule()?,
                &d.propagator,
                &ekf_config_for(&d.bundle),
                truth.as_ref(),
            )?;
            let fin = res.final_mean();
            let summary = json!({
                "final": fin,
                "sigma_mass_kg": res.sigma(6).last(),
                "sigma_izz_kgm2": res.sigma(7).last(),
                "rmse": res.rmse,
            });
            if let Some(dir) = &dir {
                fs::create_dir_all(dir)?;
                write_json(&dir.join("summary.json"), &summary)?;
                write_ekf_csv(&res, BufWriter::new(File::create(dir.join("ekf.csv"))?))?;
            }
            print_json(out, &summary)
        }
        Command::EstimateSeeded {
            dataset,
            seed_window,
            prior,
            out: dir,
        } => {
            let d = load_dataset(&dataset)?;
            let meas = d.bundle.measurement_records()?;
            let truth = d.bundle.truth_reference();
            let cfg = EkfConfig {
                initial_cov: BatchPrior::from(prior).prior_info()?.p0_bar,
                ..ekf_config_for(&d.bundle)
            };
            let res = ls_seeded_ekf(
                &meas,
                &d.bundle.force_schedule()?,
                &d.propagator,
                seed_window,
                &cfg,
                &BatchConfig::default(),
                truth.as_ref(),
            )?;
            let summary = json!({
                "seed_window_s": seed_window,
                "batch": { "x0_hat": res.batch.x0_hat, "iterations": res.batch.iterations },
                "final": res.ekf.final_mean(),
                "sigma_mass_kg": res.ekf.sigma(6).last(),
                "sigma_izz_kgm2": res.ekf.sigma(7).last(),
                "rmse": res.ekf.rmse,
            });
            if let Some(dir) = &dir {
                fs::create_dir_all(dir)?;
                write_json(&dir.join("summary.json"), &summary)?;
                write_ekf_csv(&res.ekf, BufWriter::new(File::create(dir.join("ekf.csv"))?))?;
            }
            print_json(out, &summary)
        }
        Command::Montecarlo {
            config,
            runs,
            seed,
            out: dir,
        } => {
            let mut campaign: McCampaign = match config {
                Some(p) => read_json(&p)?,
                None => McCampaign::default(),
            };
            if let Some(n) = runs {
                campaign.n_runs = n;
            }
            if let Some(s) = seed {
                campaign.seed = s;
            }
            let report = run_monte_carlo(&campaign.to_config()?)?;
            let consistency = consistency_stats(&report).ok();
            let [(me, ms), (ie, is)] = report.final_bias();
            let summary = json!({
                "seed": report.seed,
                "n_runs": report.n_runs,
                "n_effective": report.n_effective,
                "failed": report.failed,
                "mass": { "mean_final_error": me, "mean_final_sigma": ms,
                          "consistency_fraction_within": consistency.as_ref().map(|c| c.mass.fraction_within()) },
                "izz": { "mean_final_error": ie, "mean_final_sigma": is,
                         "consistency_fraction_within": consistency.as_ref().map(|c| c.izz.fraction_within()) },
            });
            if let Some(dir) = &dir {
                fs::create_dir_all(dir)?;
                write_json(&dir.join("summary.json"), &summary)?;
                report.write_csv(BufWriter::new(File::create(dir.join("aggregates.csv"))?))?;
            }
            print_json(out, &summary)
        }
        Command::SwingMoi {
            m,
            d,
            h,
            t,
            timings,
            g,
        } => {
            let period = match (t, timings) {
                (Some(t), _) => t,
                (None, Some(ts)) => average_period(&ts, 10)?,
                (None, None) => {
                    return Err(Error::InvalidArgument(
                        "either --T or --timings is required".into(),
                    ))
                }
            };
            let cfg = SwingTestConfig {
                mass_kg: m,
                g,
                string_separation_m: d,
                string_length_m: h,
                period_s: period,
            };
            let izz = swing_test_moi(&cfg)?;
            writeln!(out, "{izz:.3e}")?;
            writeln!(
                out,
                "izz_kgm2 = {izz}  (period {period} s; mass {m} kg ± {} g scale accuracy, izz ± {:.3e} kg·m²)",
                SCALE_ACCURACY_KG * 1e3,
                izz * SCALE_ACCURACY_KG / m
            )?;
            Ok(())
        }
        Command::Replicate {
            preset,
            seed,
            prior,
            out: path,
        } => {
            let prior = BatchPrior::from(prior);
            let value = match preset {
                Preset::Table4Sine => serde_json::to_value(replicate::table4_sine(seed, prior)?)?,
                Preset::Table4Orbit => serde_json::to_value(replicate::table4_orbit(seed, prior)?)?,
                Preset::EkfRmse => serde_json::to_value(replicate::ekf_rmse(seed)?)?,
                Preset::SeededEkf => serde_json::to_value(replicate::seeded_ekf(seed, prior)?)?,
                Preset::Mc500 => serde_json::to_value(replicate::mc500(seed)?.0)?,
            };
            if let Some(p) = &path {
                write_json(p, &value)?;
            }
            print_json(out, &value)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exec(args: &[&str]) -> Result<String> {
        let cli =
            Cli::try_parse_from(std::iter::once("inertia-id").chain(args.iter().copied())).unwrap();
        let mut buf = Vec::new();
        execute(cli.command, &mut buf)?;
        Ok(String::from_utf8(buf).unwrap())
    }

    #[test]
    fn swing_moi_prints_value() {
        let s = exec(&[
            "swing-moi",
            "--m",
            "0.72",
            "--D",
            "0.1",
            "--h",
            "0.5",
            "--T",
            "1.0",
        ])
        .unwrap();
        assert!(
            s.starts_with("8.943e-4") || s.starts_with("8.944e-4"),
            "{s}"
        );
    }

    #[test]
    fn swing_moi_from_timings() {
        let s = exec(&[
            "swing-moi",
            "--D",
            "0.1",
            "--h",
            "0.5",
            "--timings",
            "10,10,10",
        ])
        .unwrap();
        assert!(s.starts_with("8.94"), "{s}");
    }

    #[test]
    fn invalid_swing_input_is_validation_error() {
        assert!(exec(&["swing-moi", "--D", "-0.1", "--h", "0.5", "--T", "1"]).is_err());
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["inertia-id"]), 2);
        assert_eq!(run(["inertia-id", "frobnicate"]), 2);
        assert_eq!(run(["inertia-id", "swing-moi", "--D", "0.1"]), 2);
    }

    #[test]
    fn runtime_errors_exit_one() {
        assert_eq!(
            run([
                "inertia-id",
                "estimate-ekf",
                "--dataset",
                "/nonexistent/dataset"
            ]),
            1
        );
    }
}
