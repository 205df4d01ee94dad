//! Fit quality of the forward, reverse and fast-evaluation models on the
//! synthetic landscape.

mod common;

use moarr_core::baselines::{random_search_scheduled, RandomConfig};
use moarr_core::oracle::SyntheticEvaluator;
use moarr_core::search::{run, AccuracySource, OptimizerConfig};

#[test]
fn forward_surrogate_rmse_on_500_records() {
    for seed in 0..3 {
        let rmse = common::fe_holdout_rmse(seed, 500);
        assert!(rmse < 0.08, "seed {seed}: holdout rmse {rmse}");
    }
}

#[test]
fn forward_surrogate_trains_on_ten_records() {
    assert!(common::fe_holdout_rmse(4, 10).is_finite());
}

#[test]
fn reverse_training_fits_the_readout_stub() {
    let loss = common::eq2_stub_final_loss();
    assert!(loss < 1e-3, "final loss {loss}");
}

#[test]
fn reverse_training_halves_the_loss() {
    for seed in 0..3 {
        let (before, after) = common::eq2_fitted_losses(seed);
        assert!(after <= 0.5 * before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn fast_evaluation_accuracy() {
    for seed in 0..3 {
        let (r2, mae) = common::fes_holdout(seed, 500);
        assert!(r2 >= 0.9, "seed {seed}: r2 {r2}");
        assert!(mae < 0.03, "seed {seed}: mae {mae}");
    }
}

#[test]
fn fast_evaluation_is_monotone_in_quick_top1() {
    for seed in 0..3 {
        let frac = common::fes_monotone_fraction(seed);
        assert!(frac >= 0.95, "seed {seed}: monotone fraction {frac}");
    }
}

/// Share of recommended codes that land outside the region dominated by the
/// boundary they were recommended against, over iterations 1..=3 and 20
/// seeds, next to the same share for random search.
#[test]
fn recommendations_beat_random_at_reaching_the_front() {
    let (mut moarr, mut random) = ((0, 0), (0, 0));
    for seed in 0..20u64 {
        let ev = SyntheticEvaluator::standard(seed);
        let config = OptimizerConfig {
            seed,
            max_iterations: 3,
            accuracy_source: AccuracySource::Direct,
            ..OptimizerConfig::default()
        };
        let (state, _) = run(&config, &ev).unwrap();
        let m = common::nondominated_counts(state.archive.records(), 1, 3);
        let baseline = random_search_scheduled(
            &RandomConfig {
                budget: config.total_evaluations(),
                seed,
                ..RandomConfig::default()
            },
            &ev,
        )
        .unwrap();
        let r = common::nondominated_counts(baseline.records(), 1, 3);
        moarr = (moarr.0 + m.0, moarr.1 + m.1);
        random = (random.0 + r.0, random.1 + r.1);
    }
    let m_rate = moarr.0 as f64 / moarr.1 as f64;
    let r_rate = random.0 as f64 / random.1 as f64;
    println!("non-dominated share: recommended {m_rate:.3}, random {r_rate:.3}");
    assert!(m_rate >= 0.3, "recommended share {m_rate}");
    assert!(m_rate > r_rate, "recommended {m_rate} vs random {r_rate}");
}
