//! Differentiable fairness objectives.
//!
//! The hard prediction indicator `logit >= 0` is replaced by a steep
//! sigmoid `1 / (1 + exp(-k * logit))`, which turns every group TPR and FPR
//! into a smooth function of the parameters. On top of these soft rates sit
//! the per-attribute fairness loss
//!
//! ```text
//! l(attr) = 0.5 * (tpr_a - tpr_b)^2 + 0.5 * (fpr_a - fpr_b)^2
//! ```
//!
//! and the tolerance-band penalties that keep an earlier metric close to
//! its reference value. Every function here returns its exact gradient.

use indexmap::IndexMap;

use crate::dataset::Dataset;
use crate::error::{FairError, Result};
use crate::metrics::GroupRates;
use crate::model::{sigmoid, ModelParams, LOG_CLIP};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftRateConfig {
    pub steepness: f64,
}

impl Default for SoftRateConfig {
    fn default() -> Self {
        SoftRateConfig { steepness: 5.0 }
    }
}

pub fn soft_sigmoid(x: f64, k: f64) -> f64 {
    sigmoid(k * x)
}

/// Soft rates of one attribute together with their parameter gradients.
#[derive(Debug, Clone)]
pub struct SoftCells {
    pub rates: GroupRates,
    /// `[group][label]`: label 1 holds the TPR gradient, label 0 the FPR one.
    pub grads: [[ModelParams; 2]; 2],
}

impl SoftCells {
    fn gap_grad(&self, label: usize) -> ModelParams {
        let mut g = self.grads[0][label].clone();
        g.add_scaled(-1.0, &self.grads[1][label]);
        g
    }

    /// Soft EOD, `(|tpr gap| + |fpr gap|) / 2`.
    pub fn soft_eod(&self) -> f64 {
        crate::metrics::eod(&self.rates)
    }

    pub fn soft_eod_grad(&self) -> ModelParams {
        let mut g = ModelParams::zeros(self.grads[0][0].dim());
        g.add_scaled(0.5 * sign(self.rates.tpr_gap()), &self.gap_grad(1));
        g.add_scaled(0.5 * sign(self.rates.fpr_gap()), &self.gap_grad(0));
        g
    }

    pub fn fairness_loss(&self) -> f64 {
        0.5 * self.rates.tpr_gap().powi(2) + 0.5 * self.rates.fpr_gap().powi(2)
    }

    pub fn fairness_loss_grad(&self) -> ModelParams {
        let mut g = ModelParams::zeros(self.grads[0][0].dim());
        g.add_scaled(self.rates.tpr_gap(), &self.gap_grad(1));
        g.add_scaled(self.rates.fpr_gap(), &self.gap_grad(0));
        g
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn logits_of(params: &ModelParams, data: &Dataset) -> Result<Vec<f64>> {
    if params.dim() != data.n_features() {
        return Err(FairError::config(format!(
            "model has {} weights, dataset has {} features",
            params.dim(),
            data.n_features()
        )));
    }
    Ok((0..data.n_rows()).map(|i| params.logit(data.row(i))).collect())
}

fn soft_cells_from_logits(logits: &[f64], data: &Dataset, attribute: &str, k: f64) -> Result<SoftCells> {
    if !(k > 0.0) {
        return Err(FairError::config(format!("steepness must be positive, got {k}")));
    }
    let col = data.attribute(attribute)?;
    let d = data.n_features();
    let mut sums = [[0.0f64; 2]; 2];
    let mut counts = [[0usize; 2]; 2];
    let mut grads: [[ModelParams; 2]; 2] =
        std::array::from_fn(|_| std::array::from_fn(|_| ModelParams::zeros(d)));
    for (i, &l) in logits.iter().enumerate() {
        let (z, y) = (col[i] as usize, data.labels()[i] as usize);
        let s = soft_sigmoid(l, k);
        sums[z][y] += s;
        counts[z][y] += 1;
        let ds = k * s * (1.0 - s);
        if ds != 0.0 {
            let g = &mut grads[z][y];
            for (gj, xj) in g.weights.iter_mut().zip(data.row(i)) {
                *gj += ds * xj;
            }
            g.bias += ds;
        }
    }
    for z in 0..2 {
        for y in 0..2 {
            let c = counts[z][y] as f64;
            sums[z][y] /= c;
            let g = &mut grads[z][y];
            g.weights.iter_mut().for_each(|v| *v /= c);
            g.bias /= c;
        }
    }
    Ok(SoftCells {
        rates: GroupRates {
            attribute: attribute.to_string(),
            tpr_a: sums[0][1],
            fpr_a: sums[0][0],
            tpr_b: sums[1][1],
            fpr_b: sums[1][0],
        },
        grads,
    })
}

/// Soft rates and their gradients for one attribute.
pub fn soft_cells(params: &ModelParams, data: &Dataset, attribute: &str, k: f64) -> Result<SoftCells> {
    let logits = logits_of(params, data)?;
    soft_cells_from_logits(&logits, data, attribute, k)
}

pub fn soft_group_rates(params: &ModelParams, data: &Dataset, attribute: &str, k: f64) -> Result<GroupRates> {
    Ok(soft_cells(params, data, attribute, k)?.rates)
}

pub fn fairness_loss_and_grad(
    params: &ModelParams,
    data: &Dataset,
    attribute: &str,
    k: f64,
) -> Result<(f64, ModelParams)> {
    let cells = soft_cells(params, data, attribute, k)?;
    Ok((cells.fairness_loss(), cells.fairness_loss_grad()))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum MetricKind {
    /// Full-train binary cross-entropy.
    PerformanceLoss,
    /// Soft EOD of the named attribute.
    AttributeEod(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    PenalizeIncrease,
    PenalizeDecrease,
}

/// Tolerance band around a reference value of some metric.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySpec {
    pub metric: MetricKind,
    pub reference_value: f64,
    pub tolerance: f64,
    pub weight: f64,
    pub direction: Direction,
}

impl PenaltySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance >= 0.0 && self.weight >= 0.0 && self.reference_value.is_finite()) {
            return Err(FairError::config(
                "penalty needs tolerance >= 0, weight >= 0 and a finite reference",
            ));
        }
        Ok(())
    }

    /// Signed distance past the permitted side of the band; positive only
    /// when the metric has left the band in the penalized direction.
    pub fn violation(&self, current: f64) -> f64 {
        match self.direction {
            Direction::PenalizeIncrease => current - self.reference_value - self.tolerance,
            Direction::PenalizeDecrease => self.reference_value - self.tolerance - current,
        }
    }

    pub fn term_name(&self) -> String {
        match &self.metric {
            MetricKind::PerformanceLoss => "penalty_bce".to_string(),
            MetricKind::AttributeEod(a) => format!("penalty_eod_{a}"),
        }
    }
}

/// Two-sided band membership and the one-sided squared hinge
/// `weight * max(0, violation)^2`.
pub fn penalty(spec: &PenaltySpec, current: f64) -> (bool, f64) {
    let r = spec.reference_value;
    let in_band = r - spec.tolerance <= current && current <= r + spec.tolerance;
    let v = spec.violation(current).max(0.0);
    (in_band, spec.weight * v * v)
}

/// Sum of fairness losses over the active attributes plus band penalties.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeObjective {
    pub fairness_attributes: Vec<String>,
    pub fairness_weight: f64,
    pub penalties: Vec<PenaltySpec>,
    pub soft: SoftRateConfig,
}

impl CompositeObjective {
    pub fn new(fairness_attributes: Vec<String>, penalties: Vec<PenaltySpec>, soft: SoftRateConfig) -> Self {
        CompositeObjective {
            fairness_attributes,
            fairness_weight: 1.0,
            penalties,
            soft,
        }
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        for (i, a) in self.fairness_attributes.iter().enumerate() {
            if self.fairness_attributes[..i].contains(a) {
                return Err(FairError::config(format!("attribute {a:?} listed twice")));
            }
            data.attribute(a)?;
        }
        let perf = self
            .penalties
            .iter()
            .filter(|p| p.metric == MetricKind::PerformanceLoss)
            .count();
        if perf > 1 {
            return Err(FairError::config("at most one performance penalty is allowed"));
        }
        for p in &self.penalties {
            p.validate()?;
            if let MetricKind::AttributeEod(a) = &p.metric {
                data.attribute(a)?;
            }
        }
        if !(self.soft.steepness > 0.0) || !(self.fairness_weight >= 0.0) {
            return Err(FairError::config(
                "steepness must be positive and weights non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CompositeValue {
    pub total: f64,
    pub grad: ModelParams,
    /// Named components: `fair_<attr>`, `penalty_bce`, `penalty_eod_<attr>`.
    pub per_term: IndexMap<String, f64>,
    /// Full-train BCE, when a performance penalty needed it.
    pub bce: Option<f64>,
}

fn bce_from_logits(logits: &[f64], data: &Dataset) -> (f64, ModelParams) {
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = ModelParams::zeros(data.n_features());
    for (i, &l) in logits.iter().enumerate() {
        let p = sigmoid(l);
        let y = f64::from(data.labels()[i]);
        loss -= y * p.max(LOG_CLIP).ln() + (1.0 - y) * (1.0 - p).max(LOG_CLIP).ln();
        let r = p - y;
        for (g, x) in grad.weights.iter_mut().zip(data.row(i)) {
            *g += r * x;
        }
        grad.bias += r;
    }
    grad.weights.iter_mut().for_each(|g| *g /= n);
    grad.bias /= n;
    (loss / n, grad)
}

pub fn composite_loss_and_grad(
    objective: &CompositeObjective,
    params: &ModelParams,
    data: &Dataset,
) -> Result<CompositeValue> {
    objective.validate(data)?;
    let logits = logits_of(params, data)?;
    let k = objective.soft.steepness;
    let mut total = 0.0;
    let mut grad = ModelParams::zeros(params.dim());
    let mut per_term = IndexMap::new();

    let mut cells: IndexMap<&str, SoftCells> = IndexMap::new();
    let cells_for = |attr: &str| soft_cells_from_logits(&logits, data, attr, k);
    for attr in &objective.fairness_attributes {
        let c = cells_for(attr)?;
        let loss = objective.fairness_weight * c.fairness_loss();
        total += loss;
        grad.add_scaled(objective.fairness_weight, &c.fairness_loss_grad());
        per_term.insert(format!("fair_{attr}"), loss);
        cells.insert(attr.as_str(), c);
    }

    let mut bce = None;
    for spec in &objective.penalties {
        let (current, metric_grad) = match &spec.metric {
            MetricKind::PerformanceLoss => {
                let (loss, g) = bce_from_logits(&logits, data);
                bce = Some(loss);
                (loss, g)
            }
            MetricKind::AttributeEod(attr) => {
                let c = match cells.get(attr.as_str()) {
                    Some(c) => c.clone(),
                    None => cells_for(attr)?,
                };
                (c.soft_eod(), c.soft_eod_grad())
            }
        };
        let (_, value) = penalty(spec, current);
        let v = spec.violation(current);
        if v > 0.0 {
            let dir = match spec.direction {
                Direction::PenalizeIncrease => 1.0,
                Direction::PenalizeDecrease => -1.0,
            };
            grad.add_scaled(2.0 * spec.weight * v * dir, &metric_grad);
        }
        total += value;
        *per_term.entry(spec.term_name()).or_insert(0.0) += value;
    }

    if !total.is_finite() || !grad.is_finite() {
        return Err(FairError::numeric("composite objective is not finite"));
    }
    Ok(CompositeValue {
        total,
        grad,
        per_term,
        bce,
    })
}
