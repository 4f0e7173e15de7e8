//! Threshold-based performance and group-fairness metrics.

use indexmap::IndexMap;

use crate::dataset::Dataset;
use crate::error::{FairError, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted: bool, label: u8) {
        match (predicted, label == 1) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

/// TPR/FPR of group `a` (attribute value 0) and group `b` (value 1).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRates {
    pub attribute: String,
    pub tpr_a: f64,
    pub fpr_a: f64,
    pub tpr_b: f64,
    pub fpr_b: f64,
}

impl GroupRates {
    pub fn tpr_gap(&self) -> f64 {
        self.tpr_a - self.tpr_b
    }

    pub fn fpr_gap(&self) -> f64 {
        self.fpr_a - self.fpr_b
    }
}

/// Equalized-odds disparity: `(|tpr_a - tpr_b| + |fpr_a - fpr_b|) / 2`.
pub fn eod(rates: &GroupRates) -> f64 {
    0.5 * (rates.tpr_gap().abs() + rates.fpr_gap().abs())
}

fn check_len(n: usize, data: &Dataset) -> Result<()> {
    if n != data.n_rows() {
        return Err(FairError::config(format!(
            "{n} predictions for a dataset of {} rows",
            data.n_rows()
        )));
    }
    Ok(())
}

/// Hard group rates with `y_hat = probability >= threshold`.
pub fn group_rates(
    probabilities: &[f64],
    data: &Dataset,
    attribute: &str,
    threshold: f64,
) -> Result<GroupRates> {
    let col = data.attribute(attribute)?;
    check_len(probabilities.len(), data)?;
    let mut cells = [ConfusionCounts::default(); 2];
    for ((&p, &z), &y) in probabilities.iter().zip(col).zip(data.labels()) {
        cells[z as usize].record(p >= threshold, y);
    }
    let rate = |num: usize, den: usize| num as f64 / den as f64;
    Ok(GroupRates {
        attribute: attribute.to_string(),
        tpr_a: rate(cells[0].tp, cells[0].tp + cells[0].fn_),
        fpr_a: rate(cells[0].fp, cells[0].fp + cells[0].tn),
        tpr_b: rate(cells[1].tp, cells[1].tp + cells[1].fn_),
        fpr_b: rate(cells[1].fp, cells[1].fp + cells[1].tn),
    })
}

/// Hard EOD of one attribute at `threshold`.
pub fn hard_eod(probabilities: &[f64], data: &Dataset, attribute: &str, threshold: f64) -> Result<f64> {
    Ok(eod(&group_rates(probabilities, data, attribute, threshold)?))
}

fn check_both_classes(labels: &[u8]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(FairError::Metric(
            "metric needs at least one positive and one negative label".into(),
        ));
    }
    Ok((pos, neg))
}

/// Mann-Whitney AUROC with half credit for ties, computed from midranks.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(FairError::config("scores and labels differ in length"));
    }
    let (pos, neg) = check_both_classes(labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(FairError::Metric("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));

    // Sum of ranks of positives, ties sharing their mean rank. Ranks are
    // doubled so they stay integral.
    let mut rank_sum2: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end, mean doubled = start + 1 + end
        let mean2 = (start + 1 + end) as u128;
        let tied_pos = order[start..end].iter().filter(|&&i| labels[i] == 1).count() as u128;
        rank_sum2 += mean2 * tied_pos;
        start = end;
    }
    let (p, q) = (pos as u128, neg as u128);
    // U = R - p(p+1)/2, doubled
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2.0 * (p * q) as f64))
}

/// Sensitivity, specificity and confusion counts at `threshold`.
pub fn classification_metrics(
    probabilities: &[f64],
    labels: &[u8],
    threshold: f64,
) -> Result<(f64, f64, ConfusionCounts)> {
    if probabilities.len() != labels.len() {
        return Err(FairError::config("probabilities and labels differ in length"));
    }
    check_both_classes(labels)?;
    let mut counts = ConfusionCounts::default();
    for (&p, &y) in probabilities.iter().zip(labels) {
        counts.record(p >= threshold, y);
    }
    let sensitivity = counts.tp as f64 / (counts.tp + counts.fn_) as f64;
    let specificity = counts.tn as f64 / (counts.tn + counts.fp) as f64;
    Ok((sensitivity, specificity, counts))
}

/// Diagnostics beyond equalized odds for one attribute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxFairness {
    /// `|P(y_hat=1 | a) - P(y_hat=1 | b)|`
    pub dp_diff: f64,
    /// `|tpr_a - tpr_b|`
    pub eopp_diff: f64,
    /// Largest per-bin gap in observed positive fraction between groups.
    pub calibration_gap: f64,
}

/// Minimum rows per group for a calibration bin to count.
pub const CALIBRATION_MIN_BIN: usize = 10;

pub fn aux_fairness_metrics(
    probabilities: &[f64],
    data: &Dataset,
    attribute: &str,
    threshold: f64,
    bins: usize,
) -> Result<AuxFairness> {
    let col = data.attribute(attribute)?;
    check_len(probabilities.len(), data)?;
    if bins == 0 {
        return Err(FairError::config("calibration needs at least one bin"));
    }
    let mut predicted_pos = [0usize; 2];
    let mut group_size = [0usize; 2];
    // per bin, per group: (count, positives)
    let mut bin_stats = vec![[(0usize, 0usize); 2]; bins];
    for ((&p, &z), &y) in probabilities.iter().zip(col).zip(data.labels()) {
        let g = z as usize;
        group_size[g] += 1;
        if p >= threshold {
            predicted_pos[g] += 1;
        }
        let b = ((p * bins as f64).floor() as usize).min(bins - 1);
        bin_stats[b][g].0 += 1;
        bin_stats[b][g].1 += y as usize;
    }
    let rates = group_rates(probabilities, data, attribute, threshold)?;
    let dp_diff = (predicted_pos[0] as f64 / group_size[0] as f64
        - predicted_pos[1] as f64 / group_size[1] as f64)
        .abs();
    let calibration_gap = bin_stats
        .iter()
        .filter(|s| s[0].0 >= CALIBRATION_MIN_BIN && s[1].0 >= CALIBRATION_MIN_BIN)
        .map(|s| (s[0].1 as f64 / s[0].0 as f64 - s[1].1 as f64 / s[1].0 as f64).abs())
        .fold(0.0, f64::max);
    Ok(AuxFairness {
        dp_diff,
        eopp_diff: rates.tpr_gap().abs(),
        calibration_gap,
    })
}

/// Performance plus per-attribute fairness of one model on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub auroc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub eod_by_attribute: IndexMap<String, f64>,
    pub dp_diff: IndexMap<String, f64>,
    pub eopp_diff: IndexMap<String, f64>,
    pub calibration_gap: IndexMap<String, f64>,
}

pub const DEFAULT_CALIBRATION_BINS: usize = 10;

/// All metrics for the given attributes, from predicted probabilities.
pub fn metrics_report(
    probabilities: &[f64],
    data: &Dataset,
    attributes: &[String],
    threshold: f64,
) -> Result<MetricsReport> {
    let (sensitivity, specificity, _) = classification_metrics(probabilities, data.labels(), threshold)?;
    let mut report = MetricsReport {
        auroc: auroc(probabilities, data.labels())?,
        sensitivity,
        specificity,
        eod_by_attribute: IndexMap::new(),
        dp_diff: IndexMap::new(),
        eopp_diff: IndexMap::new(),
        calibration_gap: IndexMap::new(),
    };
    for attr in attributes {
        let rates = group_rates(probabilities, data, attr, threshold)?;
        let aux = aux_fairness_metrics(probabilities, data, attr, threshold, DEFAULT_CALIBRATION_BINS)?;
        report.eod_by_attribute.insert(attr.clone(), eod(&rates));
        report.dp_diff.insert(attr.clone(), aux.dp_diff);
        report.eopp_diff.insert(attr.clone(), aux.eopp_diff);
        report.calibration_gap.insert(attr.clone(), aux.calibration_gap);
    }
    Ok(report)
}
