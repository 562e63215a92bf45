use inertia_id::dynamics::{Propagator, MASS};
use inertia_id::estimators::batch::accumulate;
use inertia_id::estimators::{
    batch_least_squares, ekf_run, BatchConfig, EkfConfig, EkfResult, PriorInfo,
};
use inertia_id::replicate::BatchPrior;
use inertia_id::scenario::{
    generate_synthetic, DatasetBundle, InputSpec, ScenarioConfig, TRUE_MASS,
};
use inertia_id::Error;
use proptest::prelude::*;

fn dataset(seed: u64, duration: f64) -> DatasetBundle {
    generate_synthetic(&ScenarioConfig {
        duration_s: duration,
        seed,
        input: InputSpec::phase_shifted_sine(),
        ..Default::default()
    })
    .unwrap()
}

fn try_ekf(data: &DatasetBundle, config: &EkfConfig) -> Result<EkfResult, Error> {
    let prop = Propagator::new(data.meta.plant(), Propagator::DEFAULT_DT).unwrap();
    ekf_run(
        &data.measurement_records().unwrap(),
        &data.force_schedule().unwrap(),
        &prop,
        config,
        data.truth_reference().as_ref(),
    )
}

fn run_ekf(data: &DatasetBundle) -> EkfResult {
    try_ekf(data, &EkfConfig::nominal()).unwrap()
}

/// Default spread around the true initial state, as in the Monte Carlo runs.
fn from_truth(data: &DatasetBundle) -> EkfConfig {
    EkfConfig {
        initial_mean: data.truth.as_ref().unwrap().states[0],
        ..EkfConfig::nominal()
    }
}

fn lag1(xs: &[f64]) -> f64 {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    let cov: f64 = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    cov / var
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn ekf_covariance_is_symmetric_psd_every_step(seed in any::<u64>()) {
        let data = dataset(seed, 30.0);
        // The 1 ± 1 kg prior occasionally drives the mass mean negative in
        // the first second; such runs end in an error and have no history.
        let runs = [try_ekf(&data, &EkfConfig::nominal()), try_ekf(&data, &from_truth(&data))];
        for res in runs.iter().filter_map(|r| r.as_ref().ok()) {
            for (k, p) in res.covs.iter().enumerate() {
                prop_assert_eq!(p, &p.transpose(), "asymmetric at step {}", k);
                let eig = p.symmetric_eigenvalues();
                prop_assert!(eig.min() >= -1e-12 * eig.max(), "step {k}: min eigenvalue {:e}", eig.min());
            }
        }
        prop_assert!(runs[1].is_ok());
    }

    #[test]
    fn normal_equations_are_solved_accurately(seed in any::<u64>()) {
        let data = dataset(seed, 30.0);
        let prop = Propagator::new(data.meta.plant(), Propagator::DEFAULT_DT).unwrap();
        let prior = BatchPrior::Nominal.prior_info().unwrap();
        let info = prior.p0_bar.try_inverse().unwrap();
        let ne = accumulate(
            &data.measurement_records().unwrap(),
            &data.force_schedule().unwrap(),
            &prop,
            &prior.x0_ref.to_vector(),
            &info,
            &prior.dx0_bar,
        ).unwrap();
        let (delta, _) = ne.solve().unwrap();
        let resid = (ne.information * delta - ne.rhs).norm() / ne.rhs.norm();
        prop_assert!(resid <= 1e-10, "relative residual {resid:e}");
    }
}

#[test]
fn batch_cost_decreases_on_phase_shifted_sine() {
    for seed in 0..3 {
        let data = dataset(seed, 120.0);
        let prop = Propagator::new(data.meta.plant(), Propagator::DEFAULT_DT).unwrap();
        let prior: PriorInfo = BatchPrior::AtRest.prior_info().unwrap();
        let res = batch_least_squares(
            &data.measurement_records().unwrap(),
            &data.force_schedule().unwrap(),
            &prop,
            &prior,
            &BatchConfig::default(),
        )
        .unwrap();
        let rises = res
            .costs
            .windows(2)
            .filter(|w| w[1] > w[0] * (1.0 + 1e-9))
            .count();
        assert!(rises <= 1, "seed {seed}: costs {:?}", res.costs);
    }
}

#[test]
fn innovations_are_nearly_white() {
    let res = run_ekf(&dataset(3, 120.0));
    for ch in 0..3 {
        let xs: Vec<f64> = res.innovations.iter().map(|v| v[ch]).collect();
        let rho = lag1(&xs);
        assert!(rho.abs() < 0.2, "channel {ch}: lag-1 autocorrelation {rho}");
    }
}

#[test]
fn mass_error_stays_within_three_sigma() {
    let data = dataset(0, 120.0);
    let res = try_ekf(&data, &from_truth(&data)).unwrap();
    let sig = res.sigma(MASS);
    let inside = res
        .means
        .iter()
        .zip(&sig)
        .filter(|(m, s)| (m.mass - TRUE_MASS).abs() <= 3.0 * **s)
        .count();
    let frac = inside as f64 / res.means.len() as f64;
    assert!(frac >= 0.95, "mass within 3σ for {frac:.3} of steps");
}

#[test]
fn update_trace_never_exceeds_prediction() {
    let res = run_ekf(&dataset(9, 20.0));
    for (p, tr) in res.covs.iter().zip(&res.prior_traces) {
        assert!(p.trace() <= tr * (1.0 + 1e-12));
    }
}
