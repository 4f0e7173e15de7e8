mod common;

use common::*;
use indexmap::IndexMap;
use multifair::dataset::stratified_split_indices;
use multifair::fairloss::{fairness_loss_and_grad, penalty, soft_cells, Direction, MetricKind};
use multifair::metrics::{aux_fairness_metrics, group_rates};
use multifair::model::{full_bce_loss, full_bce_loss_and_grad};
use multifair::{auroc, eod, group_view, Dataset, PenaltySpec, SplitSpec};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn permuted(data: &Dataset, order: &[usize]) -> Dataset {
    data.subset(order).unwrap()
}

fn shuffled_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng(seed));
    order
}

fn row_key(data: &Dataset, i: usize) -> String {
    let z: Vec<u8> = data.sensitive().values().map(|c| c[i]).collect();
    format!("{:?}{}{:?}", data.row(i), data.labels()[i], z)
}

fn sorted_rows(data: &Dataset, rows: &[usize]) -> Vec<String> {
    let mut keys: Vec<String> = rows.iter().map(|&i| row_key(data, i)).collect();
    keys.sort();
    keys
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_partitions_rows_and_cells(seed in any::<u64>(), n in 60usize..300, frac in 0.5f64..0.9) {
        let data = random_dataset(&mut rng(seed), n, 2, &["race", "sex"]);
        let spec = SplitSpec { train_fraction: frac, seed };
        let Ok((train, test)) = stratified_split_indices(&data, &spec) else {
            // tiny strata are rejected, never silently dropped
            return Ok(());
        };
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let (tr, te) = (data.subset(&train).unwrap(), data.subset(&test).unwrap());
        for a in ["race", "sex"] {
            for g in 0..2 {
                for y in 0..2 {
                    let full = group_view(&data, a, g, y).unwrap().len();
                    let parts = group_view(&tr, a, g, y).unwrap().len() + group_view(&te, a, g, y).unwrap().len();
                    prop_assert_eq!(full, parts);
                }
            }
        }
    }

    #[test]
    fn split_ignores_row_order(seed in any::<u64>(), shuffle in any::<u64>()) {
        let data = random_dataset(&mut rng(seed), 200, 2, &["race", "sex"]);
        let spec = SplitSpec { train_fraction: 0.7, seed: 5 };
        let Ok((train, test)) = stratified_split_indices(&data, &spec) else { return Ok(()) };
        let moved = permuted(&data, &shuffled_order(200, shuffle));
        let (train2, test2) = stratified_split_indices(&moved, &spec).unwrap();
        prop_assert_eq!(sorted_rows(&data, &train), sorted_rows(&moved, &train2));
        prop_assert_eq!(sorted_rows(&data, &test), sorted_rows(&moved, &test2));
    }

    #[test]
    fn auroc_invariant_under_increasing_maps(
        scores in prop::collection::vec(-5.0f64..5.0, 10..200),
        labels_seed in any::<u64>(),
    ) {
        let n = scores.len();
        let labels = balanced_labels(n, labels_seed);
        let base = auroc(&scores, &labels).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (s * 0.7).exp() + 3.0).collect();
        prop_assert!((auroc(&mapped, &labels).unwrap() - base).abs() <= 1e-12);
        prop_assert!((base - pairwise_auroc(&scores, &labels)).abs() <= 1e-12);
    }

    #[test]
    fn auroc_of_negated_scores_is_complement(seed in any::<u64>(), n in 10usize..200) {
        use rand::Rng;
        let mut r = rng(seed);
        // continuous draws are tie-free with probability one
        let scores: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let labels = balanced_labels(n, seed);
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let sum = auroc(&scores, &labels).unwrap() + auroc(&neg, &labels).unwrap();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn eod_bounds_and_eopp(seed in any::<u64>(), n in 8usize..300, threshold in 0.05f64..0.95) {
        use rand::Rng;
        let mut r = rng(seed);
        let data = random_dataset(&mut r, n, 1, &["race"]);
        let probs: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let rates = group_rates(&probs, &data, "race", threshold).unwrap();
        let e = eod(&rates);
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert_eq!(e == 0.0, rates.tpr_a == rates.tpr_b && rates.fpr_a == rates.fpr_b);
        let aux = aux_fairness_metrics(&probs, &data, "race", threshold, 10).unwrap();
        prop_assert!(aux.eopp_diff <= 2.0 * e + 1e-15);
        let oracle = counted_rates(&probs, data.attribute("race").unwrap(), data.labels(), threshold);
        prop_assert_eq!((rates.tpr_a, rates.fpr_a, rates.tpr_b, rates.fpr_b),
                        (oracle.tpr_a, oracle.fpr_a, oracle.tpr_b, oracle.fpr_b));
    }

    #[test]
    fn bce_is_permutation_invariant(seed in any::<u64>(), shuffle in any::<u64>()) {
        let mut r = rng(seed);
        let data = random_dataset(&mut r, 150, 4, &["race"]);
        let params = random_params(&mut r, 4, 1.5);
        let moved = permuted(&data, &shuffled_order(150, shuffle));
        let diff = full_bce_loss(&params, &data).unwrap() - full_bce_loss(&params, &moved).unwrap();
        prop_assert!(diff.abs() <= 1e-10);
    }

    #[test]
    fn bce_gradient_matches_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let data = random_dataset(&mut r, 80, 5, &["race"]);
        let params = random_params(&mut r, 5, 1.0);
        let (_, g) = full_bce_loss_and_grad(&params, &data).unwrap();
        let fd = finite_difference(&params, 1e-6, |p| full_bce_loss(p, &data).unwrap());
        prop_assert!(max_relative_error(&g, &fd, 1e-5) <= 1e-4);
    }

    #[test]
    fn fairness_gradient_matches_differences(seed in any::<u64>(), k in 0.5f64..20.0) {
        let mut r = rng(seed);
        let data = random_dataset(&mut r, 120, 3, &["race"]);
        let params = random_params(&mut r, 3, 1.0);
        let (_, g) = fairness_loss_and_grad(&params, &data, "race", k).unwrap();
        let fd = finite_difference(&params, 1e-6, |p| fairness_loss_and_grad(p, &data, "race", k).unwrap().0);
        prop_assert!(max_relative_error(&g, &fd, 1e-5) <= 1e-4);
    }

    #[test]
    fn soft_rates_stay_inside_unit_interval(seed in any::<u64>(), k in 0.1f64..50.0) {
        let mut r = rng(seed);
        let data = random_dataset(&mut r, 100, 3, &["race"]);
        let params = random_params(&mut r, 3, 1.0);
        let cells = soft_cells(&params, &data, "race", k).unwrap();
        let s = &cells.rates;
        for v in [s.tpr_a, s.fpr_a, s.tpr_b, s.fpr_b] {
            prop_assert!(v > 0.0 && v < 1.0);
        }
        prop_assert!(cells.fairness_loss() >= 0.0);
    }

    #[test]
    fn fairness_loss_ignores_group_relabeling(seed in any::<u64>()) {
        let mut r = rng(seed);
        let data = random_dataset(&mut r, 100, 3, &["race"]);
        let params = random_params(&mut r, 3, 1.0);
        let flipped: Vec<u8> = data.attribute("race").unwrap().iter().map(|z| 1 - z).collect();
        let mut sensitive = IndexMap::new();
        sensitive.insert("race".to_string(), flipped);
        let swapped = Dataset::new(
            data.feature_names().to_vec(),
            data.features().to_vec(),
            data.labels().to_vec(),
            sensitive,
        )
        .unwrap();
        let a = fairness_loss_and_grad(&params, &data, "race", 5.0).unwrap().0;
        let b = fairness_loss_and_grad(&params, &swapped, "race", 5.0).unwrap().0;
        prop_assert!((a - b).abs() <= 1e-15);
    }

    #[test]
    fn penalty_is_zero_inside_band(
        reference in -1.0f64..1.0,
        tolerance in 0.0f64..0.2,
        weight in 0.0f64..5.0,
        offset in -1.5f64..1.5,
        increase in any::<bool>(),
    ) {
        let spec = PenaltySpec {
            metric: MetricKind::PerformanceLoss,
            reference_value: reference,
            tolerance,
            weight,
            direction: if increase { Direction::PenalizeIncrease } else { Direction::PenalizeDecrease },
        };
        let current = reference + offset;
        let (in_band, value) = penalty(&spec, current);
        prop_assert!(value >= 0.0);
        if in_band {
            prop_assert_eq!(value, 0.0);
        }
        if value > 0.0 {
            prop_assert!(!in_band);
            let penalized_side = if increase { current > reference } else { current < reference };
            prop_assert!(penalized_side);
        }
    }
}

fn balanced_labels(n: usize, seed: u64) -> Vec<u8> {
    let mut labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    labels.shuffle(&mut rng(seed));
    labels
}
