//! Brute-force oracles and random instance builders shared by the
//! integration tests and the acceptance suite.
#![allow(dead_code)]

use indexmap::IndexMap;
use multifair::fairloss::{
    composite_loss_and_grad, soft_cells, CompositeObjective, Direction, MetricKind, PenaltySpec,
    SoftRateConfig,
};
use multifair::model::full_bce_loss;
use multifair::{Dataset, GroupRates, ModelParams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// All-pairs AUROC: a positive ranked above a negative scores 1, a tie 1/2.
pub fn pairwise_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Group rates counted row by row, without the crate's confusion type.
pub fn counted_rates(probs: &[f64], z: &[u8], y: &[u8], threshold: f64) -> GroupRates {
    let mut hit = [[0usize; 2]; 2];
    let mut tot = [[0usize; 2]; 2];
    for i in 0..probs.len() {
        let (g, l) = (z[i] as usize, y[i] as usize);
        tot[g][l] += 1;
        if probs[i] >= threshold {
            hit[g][l] += 1;
        }
    }
    let r = |g: usize, l: usize| hit[g][l] as f64 / tot[g][l] as f64;
    GroupRates {
        attribute: String::new(),
        tpr_a: r(0, 1),
        fpr_a: r(0, 0),
        tpr_b: r(1, 1),
        fpr_b: r(1, 0),
    }
}

pub fn counted_sens_spec(probs: &[f64], y: &[u8], threshold: f64) -> (f64, f64) {
    let (mut tp, mut fneg, mut tn, mut fp) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &l) in probs.iter().zip(y) {
        match (p >= threshold, l) {
            (true, 1) => tp += 1,
            (false, 1) => fneg += 1,
            (false, _) => tn += 1,
            (true, _) => fp += 1,
        }
    }
    (tp as f64 / (tp + fneg) as f64, tn as f64 / (tn + fp) as f64)
}

/// Random dataset with `attrs` binary attributes where every (group, label)
/// cell of every attribute is occupied.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize, attrs: &[&str]) -> Dataset {
    assert!(n >= 4);
    let features: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
    let mut sensitive = IndexMap::new();
    for (k, a) in attrs.iter().enumerate() {
        let mut col: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
        // the first four rows cover the four cells of the first attribute;
        // later attributes reuse them in a rotated pattern
        for c in 0..4 {
            col[c] = (((c + k) / 2) % 2) as u8;
            labels[c] = (c % 2) as u8;
        }
        sensitive.insert(a.to_string(), col);
    }
    let names = (0..d).map(|j| format!("x{j}")).collect();
    Dataset::new(names, features, labels, sensitive).expect("random dataset is valid")
}

pub fn random_params(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> ModelParams {
    ModelParams {
        weights: (0..d).map(|_| rng.random_range(-scale..scale)).collect(),
        bias: rng.random_range(-scale..scale),
    }
}

/// Central finite differences of `f` at `params`.
pub fn finite_difference(params: &ModelParams, h: f64, f: impl Fn(&ModelParams) -> f64) -> Vec<f64> {
    (0..=params.dim())
        .map(|j| {
            let mut up = params.clone();
            *up.get_mut(j) += h;
            let mut down = params.clone();
            *down.get_mut(j) -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

/// Largest componentwise relative error, with magnitudes below `floor`
/// treated as `floor`.
pub fn max_relative_error(analytic: &ModelParams, numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// True when every soft gap is clear of zero, so the absolute value inside
/// the soft EOD is differentiable within any finite-difference step.
pub fn gaps_clear_of_zero(params: &ModelParams, data: &Dataset, attrs: &[&str], k: f64, margin: f64) -> bool {
    attrs.iter().all(|a| {
        let r = soft_cells(params, data, a, k).unwrap().rates;
        r.tpr_gap().abs() > margin && r.fpr_gap().abs() > margin
    })
}

/// A random composite objective whose band penalties are either clearly
/// active or clearly inactive at `params`.
pub fn random_composite(
    rng: &mut ChaCha8Rng,
    params: &ModelParams,
    data: &Dataset,
    attrs: &[&str],
    k: f64,
) -> CompositeObjective {
    let n_fair = rng.random_range(0..=attrs.len());
    let fairness: Vec<String> = attrs[..n_fair].iter().map(|s| s.to_string()).collect();
    let mut penalties = Vec::new();
    let tolerance = rng.random_range(0.0..0.05);
    let offset = |rng: &mut ChaCha8Rng| {
        let o: f64 = rng.random_range(0.005..0.1);
        if rng.random_bool(0.5) {
            o
        } else {
            -o
        }
    };
    if rng.random_bool(0.7) {
        let bce = full_bce_loss(params, data).unwrap();
        penalties.push(PenaltySpec {
            metric: MetricKind::PerformanceLoss,
            reference_value: bce - tolerance + offset(rng),
            tolerance,
            weight: rng.random_range(0.1..3.0),
            direction: Direction::PenalizeIncrease,
        });
    }
    for a in &attrs[n_fair..] {
        let eod = soft_cells(params, data, a, k).unwrap().soft_eod();
        penalties.push(PenaltySpec {
            metric: MetricKind::AttributeEod(a.to_string()),
            reference_value: eod - tolerance + offset(rng),
            tolerance,
            weight: rng.random_range(0.1..3.0),
            direction: Direction::PenalizeIncrease,
        });
    }
    let mut obj = CompositeObjective::new(fairness, penalties, SoftRateConfig { steepness: k });
    obj.fairness_weight = rng.random_range(0.5..2.0);
    obj
}

pub fn composite_total(obj: &CompositeObjective, params: &ModelParams, data: &Dataset) -> f64 {
    composite_loss_and_grad(obj, params, data).unwrap().total
}
