//! Duty-cycle to thrust actuator model.
//!
//! Each nozzle's thrust is a polynomial in PWM duty cycle, fitted by linear
//! least squares from bench measurements. Airflow starvation makes the curve
//! depend on how many nozzles fire at once, so a separate curve is kept per
//! active-nozzle count.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{resolve_thrust, GeneralizedForce, ModuleGeometry};
use crate::error::{Error, Result};

/// Newtons per gram-force.
pub const NEWTONS_PER_GRAM_FORCE: f64 = 9.80665e-3;
/// Lower edge of the operational duty-cycle band, percent.
pub const DUTY_MIN: f64 = 10.0;
/// Upper edge of the operational duty-cycle band, percent.
pub const DUTY_MAX: f64 = 90.0;

/// Relative RMS improvement below which a higher fit order is not worth it.
const ORDER_IMPROVEMENT_CUTOFF: f64 = 0.05;

/// Averaged bench reading for one duty-cycle step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThrustSample {
    pub duty: f64,
    /// Thrust in gram-force.
    pub thrust: f64,
}

impl ThrustSample {
    pub fn new(duty: f64, thrust: f64) -> Self {
        Self { duty, thrust }
    }
}

/// Behaviour above the upper deadband edge.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeadbandHigh {
    /// Hold the value reached at the band edge.
    #[default]
    Clamp,
    /// No thrust above the band.
    Zero,
}

/// Polynomial duty (percent) to thrust (gram-force) map for one nozzle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThrustCurve {
    pub order: usize,
    pub active_nozzles: u8,
    /// `a0..an`, gram-force per percentⁿ.
    pub coefficients: Vec<f64>,
    #[serde(default, skip_serializing_if = "is_clamp")]
    pub deadband_high: DeadbandHigh,
}

fn is_clamp(d: &DeadbandHigh) -> bool {
    *d == DeadbandHigh::Clamp
}

impl ThrustCurve {
    pub fn new(coefficients: Vec<f64>, active_nozzles: u8) -> Result<Self> {
        let curve = Self {
            order: coefficients.len().saturating_sub(1),
            active_nozzles,
            coefficients,
            deadband_high: DeadbandHigh::Clamp,
        };
        curve.validate()?;
        Ok(curve)
    }

    pub fn validate(&self) -> Result<()> {
        if self.order < 1 || self.coefficients.len() != self.order + 1 {
            return Err(Error::InvalidArgument(format!(
                "thrust curve of order {} needs {} coefficients, has {}",
                self.order,
                self.order + 1,
                self.coefficients.len()
            )));
        }
        if !(1..=4).contains(&self.active_nozzles) {
            return Err(Error::InvalidArgument(format!(
                "active nozzle count must be 1-4, got {}",
                self.active_nozzles
            )));
        }
        if self.coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite coefficient".into()));
        }
        Ok(())
    }

    /// Raw polynomial value in gram-force, no deadband or clamping.
    pub fn polynomial(&self, duty: f64) -> f64 {
        self.coefficients
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * duty + c)
    }

    /// Thrust in newtons with the deadband applied.
    pub fn eval(&self, duty: f64) -> f64 {
        let duty = if duty < DUTY_MIN {
            return 0.0;
        } else if duty > DUTY_MAX {
            match self.deadband_high {
                DeadbandHigh::Clamp => DUTY_MAX,
                DeadbandHigh::Zero => return 0.0,
            }
        } else {
            duty
        };
        self.polynomial(duty).max(0.0) * NEWTONS_PER_GRAM_FORCE
    }
}

/// Thrust in newtons for `duty` percent.
pub fn eval_thrust(curve: &ThrustCurve, duty: f64) -> f64 {
    curve.eval(duty)
}

/// Least-squares polynomial fit of bench samples.
///
/// The Vandermonde columns are scaled to unit duty range and the system is
/// solved by QR, which gives the normal-equation solution without squaring
/// the condition number.
pub fn fit_thrust_curve(
    samples: &[ThrustSample],
    order: usize,
    active_nozzles: u8,
) -> Result<ThrustCurve> {
    if order < 1 {
        return Err(Error::InvalidArgument(
            "fit order must be at least 1".into(),
        ));
    }
    if samples.len() <= order + 1 {
        return Err(Error::InvalidArgument(format!(
            "order {order} fit needs more than {} samples, got {}",
            order + 1,
            samples.len()
        )));
    }
    if let Some(s) = samples
        .iter()
        .find(|s| !(DUTY_MIN..=DUTY_MAX).contains(&s.duty) || !s.thrust.is_finite())
    {
        return Err(Error::InvalidArgument(format!(
            "sample (duty {}, thrust {}) outside the fit band [{DUTY_MIN}, {DUTY_MAX}] %",
            s.duty, s.thrust
        )));
    }

    let scale = DUTY_MAX;
    let n = order + 1;
    let h = DMatrix::from_fn(samples.len(), n, |i, j| {
        (samples[i].duty / scale).powi(j as i32)
    });
    let z = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.thrust));

    let qr = h.qr();
    let r = qr.r();
    let rmax = r.diagonal().amax();
    if r.diagonal().iter().any(|d| d.abs() <= 1e-12 * rmax) {
        return Err(Error::Singular(format!(
            "duty values do not support an order {order} fit"
        )));
    }
    let qtz = qr.q().transpose() * z;
    let scaled = r
        .solve_upper_triangular(&qtz)
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;

    let coefficients = scaled
        .iter()
        .enumerate()
        .map(|(j, c)| c / scale.powi(j as i32))
        .collect();
    ThrustCurve::new(coefficients, active_nozzles)
}

/// Root-mean-square residual of `curve` over `samples`, gram-force.
pub fn residual_rms(curve: &ThrustCurve, samples: &[ThrustSample]) -> f64 {
    let ss: f64 = samples
        .iter()
        .map(|s| (s.thrust - curve.polynomial(s.duty)).powi(2))
        .sum();
    (ss / samples.len() as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderFit {
    pub order: usize,
    pub rms: f64,
    pub curve: ThrustCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderComparison {
    pub fits: Vec<OrderFit>,
    /// Smallest order beyond which the next order improves RMS by under 5%.
    pub selected_order: usize,
}

/// Fits every requested order and picks the point of diminishing returns.
pub fn compare_fit_orders(samples: &[ThrustSample], orders: &[usize]) -> Result<OrderComparison> {
    let mut orders = orders.to_vec();
    orders.sort_unstable();
    orders.dedup();
    if orders.is_empty() {
        return Err(Error::InvalidArgument("no fit orders requested".into()));
    }
    let fits = orders
        .iter()
        .map(|&order| {
            let curve = fit_thrust_curve(samples, order, 1)?;
            Ok(OrderFit {
                order,
                rms: residual_rms(&curve, samples),
                curve,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    // An RMS this small relative to the data is an exact fit; nothing beats it.
    let data_scale = samples
        .iter()
        .map(|s| s.thrust.abs())
        .fold(0.0, f64::max)
        .max(1.0);
    let exact = 1e-9 * data_scale;
    let selected_order = fits
        .windows(2)
        .find(|w| {
            let (lo, hi) = (w[0].rms, w[1].rms);
            lo <= exact || (lo - hi) / lo < ORDER_IMPROVEMENT_CUTOFF
        })
        .map_or(fits[fits.len() - 1].order, |w| w[0].order);

    Ok(OrderComparison {
        fits,
        selected_order,
    })
}

/// Four duty-cycle commands, percent, for thrusters `T1..T4`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DutyCommand {
    pub duties: [f64; 4],
}

impl DutyCommand {
    pub fn new(duties: [f64; 4]) -> Result<Self> {
        if duties.iter().any(|d| !(0.0..=100.0).contains(d)) {
            return Err(Error::InvalidArgument(format!(
                "duty cycles must lie in [0, 100] %, got {duties:?}"
            )));
        }
        Ok(Self { duties })
    }

    pub fn active_count(&self) -> usize {
        self.duties.iter().filter(|&&d| d >= DUTY_MIN).count()
    }
}

/// Thrust curves keyed by the number of simultaneously active nozzles.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ThrustCurveSet {
    curves: BTreeMap<u8, ThrustCurve>,
}

impl ThrustCurveSet {
    pub fn new(curves: impl IntoIterator<Item = ThrustCurve>) -> Self {
        Self {
            curves: curves.into_iter().map(|c| (c.active_nozzles, c)).collect(),
        }
    }

    /// Third-order curves measured at 60 psi accumulator pressure.
    pub fn tpods_60psi() -> Self {
        const TABLE: [[f64; 4]; 4] = [
            [-9.0692, 1.0439, -0.0128, 7.88e-5],
            [-7.4315, 0.8516, -0.0104, 6.35e-5],
            [-6.6022, 0.7555, -0.0096, 6.11e-5],
            [-6.6791, 0.7700, -0.0104, 6.34e-5],
        ];
        Self::new(TABLE.iter().enumerate().map(|(i, c)| ThrustCurve {
            order: 3,
            active_nozzles: i as u8 + 1,
            coefficients: c.to_vec(),
            deadband_high: DeadbandHigh::Clamp,
        }))
    }

    /// Looks up a built-in preset by name.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tpods-60psi" => Ok(Self::tpods_60psi()),
            other => Err(Error::Configuration(format!(
                "unknown thrust preset '{other}'"
            ))),
        }
    }

    pub fn get(&self, active_nozzles: u8) -> Option<&ThrustCurve> {
        self.curves.get(&active_nozzles)
    }

    pub fn insert(&mut self, curve: ThrustCurve) {
        self.curves.insert(curve.active_nozzles, curve);
    }

    pub fn set_deadband_high(&mut self, mode: DeadbandHigh) {
        for c in self.curves.values_mut() {
            c.deadband_high = mode;
        }
    }

    /// Per-thruster forces in newtons for a duty command.
    pub fn thrusts(&self, command: &DutyCommand) -> Result<[f64; 4]> {
        let active = command.active_count();
        if active == 0 {
            return Ok([0.0; 4]);
        }
        let curve = self.get(active as u8).ok_or_else(|| {
            Error::Configuration(format!("no thrust curve for {active} active nozzles"))
        })?;
        Ok(command.duties.map(|d| curve.eval(d)))
    }
}

/// Generalized force produced by a duty command.
pub fn duty_to_force(
    command: &DutyCommand,
    curves: &ThrustCurveSet,
    geometry: &ModuleGeometry,
) -> Result<GeneralizedForce> {
    resolve_thrust(curves.thrusts(command)?, geometry)
}
