use inertia_id::dynamics::Matrix8;
use inertia_id::montecarlo::{run_monte_carlo, McConfig};
use proptest::prelude::*;

fn small(seed: u64, n_runs: usize) -> McConfig {
    McConfig {
        n_runs,
        ..McConfig::nominal(seed).unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn identical_seeds_give_identical_reports(seed in any::<u64>()) {
        let cfg = small(seed, 12);
        prop_assert_eq!(run_monte_carlo(&cfg).unwrap(), run_monte_carlo(&cfg).unwrap());
    }

    /// Run `k` sees the same draws whatever the campaign size.
    #[test]
    fn runs_do_not_depend_on_campaign_size(seed in any::<u64>()) {
        let a = run_monte_carlo(&small(seed, 6)).unwrap();
        let b = run_monte_carlo(&small(seed, 14)).unwrap();
        for fa in &a.finals {
            let fb = b.finals.iter().find(|f| f.run == fa.run).unwrap();
            prop_assert_eq!(fa, fb);
        }
    }
}

/// Without a mass random walk, every update only adds information, so the
/// ensemble-average mass variance can never grow.
#[test]
fn average_mass_variance_never_grows_without_process_noise() {
    let mut cfg = small(21, 40);
    cfg.base.process_noise = Matrix8::zeros();
    let rep = run_monte_carlo(&cfg).unwrap();
    for (k, w) in rep.mass.avg_filter_var.windows(2).enumerate() {
        assert!(
            w[1] <= w[0] * (1.0 + 1e-12),
            "step {k}: {} -> {}",
            w[0],
            w[1]
        );
    }
}

#[test]
fn failed_runs_are_excluded_and_counted() {
    let rep = run_monte_carlo(&small(3, 60)).unwrap();
    assert_eq!(rep.n_effective + rep.failed.len(), rep.n_runs);
    assert_eq!(rep.finals.len(), rep.n_effective);
}
