use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use policy_eval::model::{CountingUnit, EvaluationDataset, Individual, LocationSet};
use policy_eval::propensity::{empirical_propensities, estimate_propensities, MultinomialLogit};

const FREQ: [f64; 3] = [0.5, 0.3, 0.2];

/// Singletons whose location ignores the covariates.
fn no_signal(n: usize, constant: bool, seed: u64) -> EvaluationDataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = WeightedIndex::new(FREQ).unwrap();
    let individuals = (0..n)
        .map(|i| Individual {
            id: format!("i{i}"),
            case_id: format!("c{i}"),
            historical: pick.sample(&mut rng),
            outcome: false,
            covariates: if constant {
                vec![1.0, -2.0]
            } else {
                vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
            },
        })
        .collect();
    let locations = LocationSet::from_ids(["L1", "L2", "L3"]).unwrap();
    EvaluationDataset::from_parts(locations, individuals, vec!["x1".into(), "x2".into()]).unwrap()
}

fn max_gap(ds: &EvaluationDataset<f64>, model: &MultinomialLogit<f64>) -> f64 {
    let empirical = empirical_propensities(ds, CountingUnit::Case);
    let marginal = empirical.marginal().unwrap().to_vec();
    let estimated = estimate_propensities(ds, model, CountingUnit::Case).unwrap();
    let mut gap = 0.0f64;
    for i in 0..ds.n() {
        for (a, m) in marginal.iter().enumerate() {
            gap = gap.max((estimated.prob(i, a) - m).abs());
        }
    }
    gap
}

fn weak_ridge() -> MultinomialLogit<f64> {
    MultinomialLogit {
        l2: 1e-6,
        ..MultinomialLogit::default()
    }
}

#[test]
fn constant_covariates_give_empirical_frequencies() {
    let ds = no_signal(1000, true, 1);
    assert!(max_gap(&ds, &MultinomialLogit::default()) < 1e-6);
}

#[test]
fn constant_covariates_at_n_1000_with_weak_ridge() {
    let gap = max_gap(&no_signal(1000, true, 2), &weak_ridge());
    assert!(gap < 0.02, "gap {gap}");
}

#[test]
fn constant_covariates_at_n_10000_with_weak_ridge() {
    let gap = max_gap(&no_signal(10_000, true, 3), &weak_ridge());
    assert!(gap < 0.01, "gap {gap}");
}

#[test]
fn noise_covariates_gap_shrinks_with_n() {
    let small = max_gap(&no_signal(1000, false, 2), &weak_ridge());
    let large = max_gap(&no_signal(10_000, false, 3), &weak_ridge());
    assert!(large < small, "{large} >= {small}");
}

#[test]
fn estimation_is_deterministic() {
    let ds = no_signal(500, false, 4);
    let a = estimate_propensities(&ds, &weak_ridge(), CountingUnit::Case).unwrap();
    let b = estimate_propensities(&ds, &weak_ridge(), CountingUnit::Case).unwrap();
    for i in 0..ds.n() {
        for k in 0..3 {
            assert_eq!(a.prob(i, k).to_bits(), b.prob(i, k).to_bits());
        }
    }
}
