//! Acceptance criteria at their stated tolerances. Prints one line per
//! criterion and exits non-zero if a criterion outside `EXPECTED_UNMET`
//! fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use inertia_id::dynamics::{
    AugmentedState, ForceSchedule, GeneralizedForce, Matrix8, ModuleGeometry, Plant, Propagator,
};
use inertia_id::estimators::{ekf_run, EkfConfig};
use inertia_id::excitation::{
    default_phase_shifted_sine, observability_score, oscillatory_translation,
    propagate_sensitivity, DEFAULT_OBSERVABILITY_THRESHOLD,
};
use inertia_id::montecarlo::{run_monte_carlo, McConfig};
use inertia_id::replicate::{ekf_rmse, mc500, seeded_ekf, table4_orbit, table4_sine, BatchPrior};
use inertia_id::scenario::{generate_synthetic, DatasetBundle, ScenarioConfig};
use inertia_id::thrust::{compare_fit_orders, fit_thrust_curve, ThrustCurveSet, ThrustSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: std::ops::Range<u64> = 0..10;

/// Criteria that do not hold with the specified configuration.
///
/// 2: at the batch optimum the residual mean of every channel is driven to
///    zero by the free initial-pose states, so no channel is ever flagged
///    although the inertia estimate is far off.
/// 4: the mass random walk (1e-4 kg²/Hz) limits the final mass error to a
///    1σ of about 0.03 kg, so the 0.3 % bound holds for only about 6 of 10
///    seeds.
/// 5: the filter is biased in inertia after the translation-to-rotation
///    switch when the inertia prior spans ±53 %, and mass containment dips
///    to about 0.91 in the same window.
const EXPECTED_UNMET: [u32; 3] = [2, 4, 5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn criterion_1() -> Outcome {
    let (runs, elapsed) = timed(|| {
        SEEDS
            .map(|s| table4_sine(s, BatchPrior::AtRest).unwrap())
            .collect::<Vec<_>>()
    });
    let n = runs.len() as f64;
    let mass = runs.iter().map(|r| r.mass_rel_err).sum::<f64>() / n;
    let izz = runs.iter().map(|r| r.izz_rel_err).sum::<f64>() / n;
    outcome(
        mass <= 0.005 && izz <= 0.0005 && elapsed <= Duration::from_secs(60),
        format!(
            "mean rel err mass {:.4} % (≤ 0.5 %), izz {:.5} % (≤ 0.05 %), {:.1} s (≤ 60 s)",
            mass * 100.0,
            izz * 100.0,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let runs: Vec<_> = SEEDS
        .map(|s| table4_orbit(s, BatchPrior::AtRest).unwrap())
        .collect();
    let diverged = runs.iter().filter(|r| r.izz_rel_err >= 0.10).count();
    let flagged = runs.iter().filter(|r| !r.residuals.all_zero_mean()).count();
    let both = runs
        .iter()
        .filter(|r| r.izz_rel_err >= 0.10 && !r.residuals.all_zero_mean())
        .count();
    let max_z = runs
        .iter()
        .flat_map(|r| r.residuals.channels.iter().map(|c| c.z.abs()))
        .fold(0.0, f64::max);
    outcome(
        both >= 8,
        format!(
            "izz rel err ≥ 10 % in {diverged}/10, non-zero-mean residual in {flagged}/10 (max |z| {max_z:.1e}), both in {both}/10 (need 8)"
        ),
    )
}

fn criterion_3(runs: &[inertia_id::replicate::EkfReplication]) -> Outcome {
    let ok = runs
        .iter()
        .all(|r| (0.1..=0.45).contains(&r.rmse.mass) && (1e-4..=6e-4).contains(&r.rmse.izz));
    let (lo_m, hi_m) = runs.iter().fold((f64::MAX, 0.0f64), |(a, b), r| {
        (a.min(r.rmse.mass), b.max(r.rmse.mass))
    });
    let (lo_i, hi_i) = runs.iter().fold((f64::MAX, 0.0f64), |(a, b), r| {
        (a.min(r.rmse.izz), b.max(r.rmse.izz))
    });
    outcome(
        ok,
        format!("mass RMSE {lo_m:.3}..{hi_m:.3} kg in [0.1, 0.45], izz RMSE {lo_i:.2e}..{hi_i:.2e} in [1e-4, 6e-4] over 10 seeds"),
    )
}

fn criterion_4(ekf: &[inertia_id::replicate::EkfReplication]) -> Outcome {
    let seeded: Vec<_> = SEEDS
        .map(|s| seeded_ekf(s, BatchPrior::AtRest).unwrap())
        .collect();
    let mut good = 0;
    let (mut mass_ok, mut izz_ok, mut rmse_ok) = (0, 0, 0);
    for (s, e) in seeded.iter().zip(ekf) {
        let m = s.ekf.final_mass_rel_err <= 0.003;
        let i = s.ekf.final_izz_rel_err <= 0.0005;
        let r = s.ekf.rmse.mass < e.rmse.mass && s.ekf.rmse.izz < e.rmse.izz;
        mass_ok += m as usize;
        izz_ok += i as usize;
        rmse_ok += r as usize;
        good += (m && i && r) as usize;
    }
    let worst = seeded
        .iter()
        .map(|s| s.ekf.final_mass_rel_err)
        .fold(0.0, f64::max);
    outcome(
        good >= 8,
        format!(
            "final mass ≤ 0.3 % in {mass_ok}/10 (worst {:.2} %), izz ≤ 0.05 % in {izz_ok}/10, lower RMSE in {rmse_ok}/10, all in {good}/10 (need 8)",
            worst * 100.0
        ),
    )
}

fn criterion_5() -> Outcome {
    let ((rep, _), elapsed) = timed(|| mc500(0).unwrap());
    let pass = rep.mass.unbiased
        && rep.izz.unbiased
        && rep.mass.min_containment_3sigma >= 0.95
        && rep.mass.consistency_fraction_within >= 0.90
        && elapsed <= Duration::from_secs(600);
    outcome(
        pass,
        format!(
            "n_eff {}/{}; mass |err| {:.2e} vs 0.1σ {:.2e}, izz |err| {:.2e} vs 0.1σ {:.2e}; mass min 3σ containment {:.3} (≥ 0.95); mass ratio in [0.5, 2] at {:.3} of steps (≥ 0.9); {:.1} s (≤ 600 s)",
            rep.n_effective,
            rep.n_runs,
            rep.mass.mean_final_error.abs(),
            0.1 * rep.mass.mean_final_sigma,
            rep.izz.mean_final_error.abs(),
            0.1 * rep.izz.mean_final_sigma,
            rep.mass.min_containment_3sigma,
            rep.mass.consistency_fraction_within,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_6() -> Outcome {
    let geometry = ModuleGeometry::default();
    let prop = Propagator::new(Plant::default(), 0.01).unwrap();
    let s0 = AugmentedState::at_rest(2.268, 0.00378);
    let noise = [0.01, 0.01, 1f64.to_radians()];
    let score = |sched: ForceSchedule| {
        let hist = propagate_sensitivity(&prop, &s0, &sched, 0.0, 120.0).unwrap();
        observability_score(&hist, noise, DEFAULT_OBSERVABILITY_THRESHOLD)
            .unwrap()
            .scores
    };
    let tr = score(
        oscillatory_translation(0.1, std::f64::consts::FRAC_PI_2, 120.0, 0.01)
            .unwrap()
            .to_force_schedule(&geometry, None)
            .unwrap(),
    );
    let sine = score(
        default_phase_shifted_sine(120.0, 0.01)
            .unwrap()
            .to_force_schedule(&geometry, None)
            .unwrap(),
    );
    outcome(
        tr[1] < 1e-6 * tr[0] && sine.iter().all(|s| *s > DEFAULT_OBSERVABILITY_THRESHOLD),
        format!(
            "translation scores mass {:.3e}, izz {:.3e}; sine scores mass {:.3e}, izz {:.3e} (threshold {DEFAULT_OBSERVABILITY_THRESHOLD})",
            tr[0], tr[1], sine[0], sine[1]
        ),
    )
}

fn criterion_7() -> Outcome {
    let truth = ThrustCurveSet::tpods_60psi()
        .get(1)
        .unwrap()
        .coefficients
        .clone();
    let samples: Vec<_> = (0..=80)
        .map(|i| {
            let d = 10.0 + i as f64;
            ThrustSample::new(d, truth.iter().rev().fold(0.0, |acc, c| acc * d + c))
        })
        .collect();
    let fit = fit_thrust_curve(&samples, 3, 1).unwrap();
    let worst = fit
        .coefficients
        .iter()
        .zip(&truth)
        .map(|(a, b)| (a - b).abs() / b.abs())
        .fold(0.0, f64::max);
    let cmp = compare_fit_orders(&samples, &[1, 2, 3, 4, 5]).unwrap();
    outcome(
        worst <= 1e-9 && cmp.selected_order == 3,
        format!(
            "worst coefficient rel err {worst:.1e} (≤ 1e-9), selected order {}",
            cmp.selected_order
        ),
    )
}

fn random_state(rng: &mut ChaCha8Rng) -> AugmentedState {
    AugmentedState {
        x: rng.random_range(-1.0..1.0),
        y: rng.random_range(-1.0..1.0),
        psi: rng.random_range(-3.0..3.0),
        u: rng.random_range(-0.5..0.5),
        v: rng.random_range(-0.5..0.5),
        r: rng.random_range(-1.0..1.0),
        mass: rng.random_range(0.5..5.0),
        izz: rng.random_range(1e-3..1e-2),
    }
}

fn jacobian_check(rng: &mut ChaCha8Rng) -> bool {
    let plant = Plant {
        friction: inertia_id::dynamics::FrictionModel::new(0.05, 2e-4, 1e-4).unwrap(),
        ..Plant::default()
    };
    (0..100).all(|_| {
        let s = random_state(rng);
        let f = GeneralizedForce::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.02..0.02),
        );
        let j = plant.jacobian(&s, &f).unwrap();
        let x = s.to_vector();
        (0..8).all(|c| {
            let h = 1e-6 * x[c].abs().max(if c == 7 { 1e-3 } else { 1.0 });
            let (mut xp, mut xm) = (x, x);
            xp[c] += h;
            xm[c] -= h;
            let fd = (plant
                .state_derivative(&AugmentedState::from_vector(&xp), &f)
                .unwrap()
                - plant
                    .state_derivative(&AugmentedState::from_vector(&xm), &f)
                    .unwrap())
                / (2.0 * h);
            let scale = j.column(c).amax();
            (0..8).all(|r| {
                (j[(r, c)] - fd[r]).abs()
                    <= 1e-6 * j[(r, c)].abs().max(fd[r].abs()).max(1e-3 * scale)
            })
        })
    })
}

fn sine_schedule(duration: f64) -> ForceSchedule {
    default_phase_shifted_sine(duration, 0.01)
        .unwrap()
        .to_force_schedule(&ModuleGeometry::default(), None)
        .unwrap()
}

fn semigroup_check(rng: &mut ChaCha8Rng) -> bool {
    let prop = Propagator::new(Plant::default(), 0.01).unwrap();
    let sched = sine_schedule(6.0);
    (0..20).all(|_| {
        let s = random_state(rng);
        let (k1, k2) = (rng.random_range(1..300), rng.random_range(1..300));
        let (t1, t2) = (k1 as f64 * 0.01, (k1 + k2) as f64 * 0.01);
        let (s1, p10) = prop.propagate_stm(&s, &sched, 0.0, t1).unwrap();
        let (_, p21) = prop.propagate_stm(&s1, &sched, t1, t2).unwrap();
        let (_, p20) = prop.propagate_stm(&s, &sched, 0.0, t2).unwrap();
        let diff: Matrix8 = p20 - p21 * p10;
        diff.amax() <= 1e-8 * p20.amax()
    })
}

fn sensitivity_check(rng: &mut ChaCha8Rng) -> bool {
    let prop = Propagator::new(Plant::default(), 0.01).unwrap();
    let sched = sine_schedule(10.0);
    (0..10).all(|_| {
        let s0 = AugmentedState::at_rest(rng.random_range(1.0..4.0), rng.random_range(2e-3..8e-3));
        let hist = propagate_sensitivity(&prop, &s0, &sched, 0.0, 10.0).unwrap();
        (0..2).all(|j| {
            let h = 1e-6 * if j == 0 { s0.mass } else { s0.izz };
            let run = |sign: f64| {
                let mut s = s0;
                if j == 0 {
                    s.mass += sign * h
                } else {
                    s.izz += sign * h
                }
                prop.propagate(&s, &sched, 0.0, 10.0).unwrap().states
            };
            let (up, down) = (run(1.0), run(-1.0));
            let scale = hist
                .sensitivities
                .iter()
                .map(|s| s.s_y_theta.column(j).amax())
                .fold(0.0, f64::max);
            hist.sensitivities.iter().enumerate().all(|(k, s)| {
                let fd = [
                    (up[k].x - down[k].x) / (2.0 * h),
                    (up[k].y - down[k].y) / (2.0 * h),
                    (up[k].psi - down[k].psi) / (2.0 * h),
                ];
                (0..3).all(|o| (s.s_y_theta[(o, j)] - fd[o]).abs() <= 1e-4 * scale)
            })
        })
    })
}

fn covariance_check() -> bool {
    SEEDS.take(3).all(|seed| {
        let data = generate_synthetic(&ScenarioConfig {
            seed,
            ..Default::default()
        })
        .unwrap();
        let prop = Propagator::new(data.meta.plant(), 0.01).unwrap();
        let res = ekf_run(
            &data.measurement_records().unwrap(),
            &data.force_schedule().unwrap(),
            &prop,
            &EkfConfig::nominal(),
            None,
        )
        .unwrap();
        res.covs.iter().all(|p| {
            let eig = p.symmetric_eigenvalues();
            *p == p.transpose() && eig.min() >= -1e-12 * eig.max()
        })
    })
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(std::ffi::OsString, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn round_trip_check() -> bool {
    let cfg = ScenarioConfig {
        duration_s: 20.0,
        seed: 5,
        ..Default::default()
    };
    let bundle = generate_synthetic(&cfg).unwrap();
    let (a, b, c) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    bundle.write(a.path()).unwrap();
    let back = DatasetBundle::read(a.path()).unwrap();
    back.write(b.path()).unwrap();
    generate_synthetic(&cfg).unwrap().write(c.path()).unwrap();
    back == bundle
        && dir_bytes(a.path()) == dir_bytes(b.path())
        && dir_bytes(a.path()) == dir_bytes(c.path())
}

fn montecarlo_determinism_check() -> bool {
    let cfg = McConfig {
        n_runs: 32,
        ..McConfig::nominal(17).unwrap()
    };
    run_monte_carlo(&cfg).unwrap() == run_monte_carlo(&cfg).unwrap()
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let checks = [
        ("jacobian", jacobian_check(&mut rng)),
        ("stm-semigroup", semigroup_check(&mut rng)),
        ("sensitivity", sensitivity_check(&mut rng)),
        ("ekf-covariance", covariance_check()),
        ("round-trip", round_trip_check()),
        ("montecarlo-determinism", montecarlo_determinism_check()),
    ];
    let failed: Vec<_> = checks
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(n, _)| *n)
        .collect();
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} suites hold", checks.len())
        } else {
            format!("failing: {}", failed.join(", "))
        },
    )
}

fn main() -> ExitCode {
    let ekf: Vec<_> = SEEDS.map(|s| ekf_rmse(s).unwrap()).collect();
    let results = [
        (1, criterion_1()),
        (2, criterion_2()),
        (3, criterion_3(&ekf)),
        (4, criterion_4(&ekf)),
        (5, criterion_5()),
        (6, criterion_6()),
        (7, criterion_7()),
        (8, criterion_8()),
    ];
    let mut unexpected = 0;
    for (n, o) in &results {
        let note = match (o.pass, EXPECTED_UNMET.contains(n)) {
            (true, _) => "",
            (false, true) => " (expected)",
            (false, false) => {
                unexpected += 1;
                ""
            }
        };
        println!(
            "criterion {n}: {}{note}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if unexpected > 0 {
        eprintln!("{unexpected} criteria failed unexpectedly");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
