//! Pose-log and bench-log ingestion, the swing-test inertia calculator, and
//! plot-ready result export.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::estimators::{BatchResult, EkfResult, MeasurementRecord};
use crate::excitation::SensitivityHistory;
use crate::scenario::PoseSample;
use crate::thrust::ThrustSample;

/// Default motion-capture logging rate, Hz.
pub const POSE_LOG_RATE_HZ: f64 = 120.0;
/// Relative tolerance on the median sample interval.
pub const RATE_JITTER: f64 = 0.1;
/// Gaps longer than this many sample periods produce a warning.
pub const GAP_WARN_PERIODS: f64 = 5.0;

/// Module mass from the bench scale, kg.
pub const MODULE_SCALE_MASS_KG: f64 = 0.720;
/// Accuracy of the bench scale, kg.
pub const SCALE_ACCURACY_KG: f64 = 0.0025;
pub const STANDARD_GRAVITY: f64 = 9.80665;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleUnit {
    #[default]
    Rad,
    Deg,
}

impl std::str::FromStr for AngleUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rad" => Ok(AngleUnit::Rad),
            "deg" => Ok(AngleUnit::Deg),
            other => Err(Error::InvalidArgument(format!(
                "unknown angle unit '{other}'"
            ))),
        }
    }
}

/// Column mapping for pose CSVs. Defaults match `time_s,x_m,y_m,psi,unit_psi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseFormat {
    pub rate_hz: f64,
    pub time_col: String,
    pub x_col: String,
    pub y_col: String,
    pub psi_col: String,
    /// Per-row angle unit column; `None` uses `default_unit` for every row.
    pub unit_col: Option<String>,
    pub default_unit: AngleUnit,
}

impl Default for PoseFormat {
    fn default() -> Self {
        Self {
            rate_hz: POSE_LOG_RATE_HZ,
            time_col: "time_s".into(),
            x_col: "x_m".into(),
            y_col: "y_m".into(),
            psi_col: "psi".into(),
            unit_col: Some("unit_psi".into()),
            default_unit: AngleUnit::Rad,
        }
    }
}

/// Validated pose log in SI units with continuous heading.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseLog {
    pub rate_hz: f64,
    pub records: Vec<PoseSample>,
    pub warnings: Vec<String>,
}

impl PoseLog {
    pub fn measurements(&self, r_cov: Matrix3<f64>) -> Result<Vec<MeasurementRecord>> {
        self.records
            .iter()
            .map(|p| p.to_measurement(r_cov))
            .collect()
    }
}

/// Removes `2π` jumps between consecutive headings.
pub fn unwrap_angles(angles: &mut [f64]) {
    use std::f64::consts::TAU;
    let mut offset = 0.0;
    let mut raw_prev = match angles.first() {
        Some(a) => *a,
        None => return,
    };
    for a in angles.iter_mut().skip(1) {
        let raw = *a;
        offset -= TAU * ((raw - raw_prev) / TAU).round();
        raw_prev = raw;
        *a = raw + offset;
    }
}

pub fn ingest_pose_log(path: &Path, format: &PoseFormat) -> Result<PoseLog> {
    parse_pose_log(BufReader::new(File::open(path)?), format)
}

pub fn parse_pose_log<R: Read>(r: R, format: &PoseFormat) -> Result<PoseLog> {
    if !(format.rate_hz > 0.0) {
        return Err(Error::InvalidArgument(
            "pose log rate must be positive".into(),
        ));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let header = rdr.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("missing column '{name}'"),
            })
    };
    let (it, ix, iy, ip) = (
        col(&format.time_col)?,
        col(&format.x_col)?,
        col(&format.y_col)?,
        col(&format.psi_col)?,
    );
    let iu = format.unit_col.as_deref().map(col).transpose()?;

    let mut records: Vec<PoseSample> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let num = |k: usize, name: &str| -> Result<f64> {
            let v: f64 = rec
                .get(k)
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("missing field {name}"),
                })?
                .parse()
                .map_err(|e| Error::Parse {
                    line,
                    message: format!("{name}: {e}"),
                })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Parse {
                    line,
                    message: format!("{name} is not finite"),
                })
            }
        };
        let unit = match iu {
            Some(k) => rec
                .get(k)
                .unwrap_or("")
                .parse::<AngleUnit>()
                .map_err(|e| Error::Parse {
                    line,
                    message: e.to_string(),
                })?,
            None => format.default_unit,
        };
        let psi = num(ip, &format.psi_col)?;
        let sample = PoseSample {
            t: num(it, &format.time_col)?,
            x: num(ix, &format.x_col)?,
            y: num(iy, &format.y_col)?,
            psi: match unit {
                AngleUnit::Rad => psi,
                AngleUnit::Deg => psi.to_radians(),
            },
        };
        if let Some(prev) = records.last() {
            if sample.t == prev.t {
                return Err(Error::Validation(format!(
                    "duplicate timestamp {} s at line {line}",
                    sample.t
                )));
            }
            if sample.t < prev.t {
                return Err(Error::Validation(format!(
                    "time goes backwards at line {line}"
                )));
            }
        }
        records.push(sample);
    }
    if records.is_empty() {
        return Err(Error::Validation("pose log holds no records".into()));
    }

    let period = 1.0 / format.rate_hz;
    let mut warnings = Vec::new();
    if records.len() > 2 {
        let mut gaps: Vec<f64> = records.windows(2).map(|w| w[1].t - w[0].t).collect();
        for (k, g) in gaps.iter().enumerate() {
            if *g > GAP_WARN_PERIODS * period {
                warnings.push(format!("gap of {g:.4} s after t = {} s", records[k].t));
            }
        }
        gaps.sort_by(f64::total_cmp);
        let median = gaps[gaps.len() / 2];
        if (median - period).abs() > RATE_JITTER * period {
            return Err(Error::Validation(format!(
                "median sample interval {median} s is inconsistent with {} Hz",
                format.rate_hz
            )));
        }
    }

    let mut psi: Vec<f64> = records.iter().map(|r| r.psi).collect();
    unwrap_angles(&mut psi);
    for (r, p) in records.iter_mut().zip(psi) {
        r.psi = p;
    }
    Ok(PoseLog {
        rate_hz: format.rate_hz,
        records,
        warnings,
    })
}

/// Reads a `time_s,duty_pct,thrust_gf` bench log.
pub fn read_bench_csv<R: Read>(r: R) -> Result<Vec<ThrustSample>> {
    const HEADER: [&str; 3] = ["time_s", "duty_pct", "thrust_gf"];
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    if rdr.headers()?.iter().ne(HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let field = |k: usize| -> Result<f64> {
            rec.get(k)
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("missing {}", HEADER[k]),
                })?
                .parse()
                .map_err(|e| Error::Parse {
                    line,
                    message: format!("{}: {e}", HEADER[k]),
                })
        };
        field(0)?;
        out.push(ThrustSample {
            duty: field(1)?,
            thrust: field(2)?,
        });
    }
    Ok(out)
}

/// Bifilar pendulum parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwingTestConfig {
    pub mass_kg: f64,
    pub g: f64,
    /// String separation `D`, meters.
    pub string_separation_m: f64,
    /// Unsupported string length `h`, meters.
    pub string_length_m: f64,
    /// Period of one full oscillation, seconds.
    pub period_s: f64,
}

impl SwingTestConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("mass", self.mass_kg),
            ("g", self.g),
            ("string separation", self.string_separation_m),
            ("string length", self.string_length_m),
            ("period", self.period_s),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// `Izz = m·g·D²·T² / (16π²·h)`.
pub fn swing_test_moi(cfg: &SwingTestConfig) -> Result<f64> {
    cfg.validate()?;
    let pi2 = std::f64::consts::PI.powi(2);
    Ok(
        cfg.mass_kg * cfg.g * cfg.string_separation_m.powi(2) * cfg.period_s.powi(2)
            / (16.0 * pi2 * cfg.string_length_m),
    )
}

/// Single-oscillation period from repeated timings of `cycles` oscillations.
pub fn average_period(durations: &[f64], cycles: usize) -> Result<f64> {
    if durations.is_empty() || cycles == 0 {
        return Err(Error::InvalidArgument(
            "period averaging needs at least one timing and one cycle".into(),
        ));
    }
    if durations.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::InvalidArgument("timings must be positive".into()));
    }
    Ok(durations.iter().sum::<f64>() / durations.len() as f64 / cycles as f64)
}

const STATE_COLUMNS: [&str; 8] = [
    "x_m", "y_m", "psi_rad", "u_mps", "v_mps", "r_radps", "mass_kg", "izz_kgm2",
];

/// Per-step means and 1σ of every state.
pub fn write_ekf_csv<W: Write>(res: &EkfResult, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["time_s".to_string()];
    header.extend(STATE_COLUMNS.iter().map(|c| c.to_string()));
    header.extend(STATE_COLUMNS.iter().map(|c| format!("sigma_{c}")));
    out.write_record(&header)?;
    for ((t, m), p) in res.times.iter().zip(&res.means).zip(&res.covs) {
        let mut row = vec![t.to_string()];
        row.extend(m.to_vector().iter().map(|v| v.to_string()));
        row.extend((0..8).map(|i| p[(i, i)].max(0.0).sqrt().to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Post-fit residuals of a batch solution.
pub fn write_residuals_csv<W: Write>(res: &BatchResult, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["time_s", "res_x_m", "res_y_m", "res_psi_rad"])?;
    for (t, r) in res.residual_times.iter().zip(&res.residuals) {
        out.write_record([*t, r[0], r[1], r[2]].map(|v| v.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

/// Output sensitivities `∂(x, y, ψ)/∂(m, Izz)` over time.
pub fn write_sensitivity_csv<W: Write>(hist: &SensitivityHistory, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "time_s",
        "dx_dm_m_per_kg",
        "dy_dm_m_per_kg",
        "dpsi_dm_rad_per_kg",
        "dx_dizz_m_per_kgm2",
        "dy_dizz_m_per_kgm2",
        "dpsi_dizz_rad_per_kgm2",
    ])?;
    for (t, s) in hist.times.iter().zip(&hist.sensitivities) {
        let y = &s.s_y_theta;
        out.write_record(
            [
                *t,
                y[(0, 0)],
                y[(1, 0)],
                y[(2, 0)],
                y[(0, 1)],
                y[(1, 1)],
                y[(2, 1)],
            ]
            .map(|v| v.to_string()),
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Truth trajectory in the dataset truth format.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, w: W) -> Result<()> {
    crate::scenario::write_truth_csv(traj, w)
}
