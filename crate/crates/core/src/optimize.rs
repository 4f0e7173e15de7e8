//! Fairness fine-tuning of a performance-optimized model.
//!
//! Both strategies take full-batch Adam steps on a [`CompositeObjective`]
//! and, after every step, evaluate hard training EODs to decide whether the
//! iterate becomes the stored snapshot.
//!
//! * **Sequential** works through the attributes in priority order. Each
//!   phase minimizes one attribute's fairness loss while band penalties hold
//!   the BCE of the starting model and the EOD of every attribute already
//!   handled. The phase keeps the lowest-EOD iterate under the threshold and
//!   ends once the EOD climbs back to the threshold after such a snapshot.
//! * **Simultaneous** minimizes the sum of all fairness losses in one phase
//!   and keeps the iterate with the lowest EOD sum among those where every
//!   attribute is under its threshold.
//!
//! A snapshot is only accepted when its hard metrics also sit inside the
//! permitted side of every band.

use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;

use crate::dataset::Dataset;
use crate::error::{FairError, Result};
use crate::fairloss::{
    composite_loss_and_grad, CompositeObjective, CompositeValue, Direction, MetricKind, PenaltySpec,
    SoftRateConfig,
};
use crate::metrics::{hard_eod, metrics_report, MetricsReport};
use crate::model::{adam_step, full_bce_loss, predict_dataset, AdamConfig, AdamState, ModelParams};

/// Probability threshold for hard predictions.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct FairnessSpec {
    /// Attribute names; for the sequential strategy this is the priority order.
    pub attributes: Vec<String>,
    /// Per-attribute EOD thresholds; missing entries use `default_threshold`.
    pub thresholds: IndexMap<String, f64>,
    pub default_threshold: f64,
    pub step_budget: usize,
    pub tolerance: f64,
    pub steepness: f64,
    pub learning_rate: f64,
    pub penalty_weight: f64,
    pub fairness_weight: f64,
}

impl Default for FairnessSpec {
    fn default() -> Self {
        FairnessSpec {
            attributes: Vec::new(),
            thresholds: IndexMap::new(),
            default_threshold: 0.05,
            step_budget: 1000,
            tolerance: 0.02,
            steepness: 5.0,
            learning_rate: 0.001,
            penalty_weight: 1.0,
            fairness_weight: 1.0,
        }
    }
}

impl FairnessSpec {
    pub fn with_attributes<S: Into<String>>(attributes: impl IntoIterator<Item = S>) -> Self {
        FairnessSpec {
            attributes: attributes.into_iter().map(Into::into).collect(),
            ..FairnessSpec::default()
        }
    }

    pub fn threshold(&self, attribute: &str) -> f64 {
        self.thresholds
            .get(attribute)
            .copied()
            .unwrap_or(self.default_threshold)
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        for (i, a) in self.attributes.iter().enumerate() {
            if self.attributes[..i].contains(a) {
                return Err(FairError::config(format!("attribute {a:?} listed twice")));
            }
            data.attribute(a)?;
        }
        for a in self.attributes.iter() {
            let z = self.threshold(a);
            if !(z > 0.0 && z <= 1.0) {
                return Err(FairError::config(format!(
                    "threshold for {a} must lie in (0,1], got {z}"
                )));
            }
        }
        if self.step_budget == 0 {
            return Err(FairError::config("step budget must be positive"));
        }
        if !(self.tolerance >= 0.0 && self.steepness > 0.0 && self.learning_rate > 0.0) {
            return Err(FairError::config(
                "fairness tolerance must be >= 0, steepness and learning rate > 0",
            ));
        }
        if !(self.penalty_weight >= 0.0 && self.fairness_weight >= 0.0) {
            return Err(FairError::config("loss weights must be non-negative"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    fn soft(&self) -> SoftRateConfig {
        SoftRateConfig {
            steepness: self.steepness,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Sequential,
    Simultaneous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    /// Attribute optimized in this phase, or `"all"` for the simultaneous run.
    pub phase: String,
    pub step: usize,
    pub total_loss: f64,
    pub per_term: IndexMap<String, f64>,
    /// Hard training EOD of every attribute in the spec.
    pub eods: IndexMap<String, f64>,
    pub bce: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizationTrace {
    pub steps: Vec<TraceStep>,
}

impl OptimizationTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// One CSV row per step. Term columns are the union over all steps, in
    /// first-seen order; missing terms are written as 0.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut terms: Vec<&str> = Vec::new();
        let mut attrs: Vec<&str> = Vec::new();
        for s in &self.steps {
            for k in s.per_term.keys() {
                if !terms.contains(&k.as_str()) {
                    terms.push(k);
                }
            }
            for k in s.eods.keys() {
                if !attrs.contains(&k.as_str()) {
                    attrs.push(k);
                }
            }
        }
        write!(out, "phase,step,total_loss")?;
        for t in &terms {
            write!(out, ",{t}")?;
        }
        for a in &attrs {
            write!(out, ",eod_{a}")?;
        }
        writeln!(out, ",bce,accepted")?;
        for s in &self.steps {
            write!(out, "{},{},{}", s.phase, s.step, s.total_loss)?;
            for t in &terms {
                write!(out, ",{}", s.per_term.get(*t).copied().unwrap_or(0.0))?;
            }
            for a in &attrs {
                write!(out, ",{}", s.eods.get(*a).copied().unwrap_or(f64::NAN))?;
            }
            writeln!(out, ",{},{}", s.bce, u8::from(s.accepted))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| FairError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| FairError::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairModelResult {
    pub params: ModelParams,
    pub strategy: Strategy,
    pub attribute_order: Vec<String>,
    pub found_fair: IndexMap<String, bool>,
    pub trace: OptimizationTrace,
    /// Hard training EODs of `params` for every attribute in the order.
    pub recorded_eods: IndexMap<String, f64>,
}

/// Hard training EOD of each listed attribute.
pub fn hard_eods(
    params: &ModelParams,
    data: &Dataset,
    attributes: &[String],
) -> Result<IndexMap<String, f64>> {
    let (_, probs) = predict_dataset(params, data)?;
    attributes
        .iter()
        .map(|a| Ok((a.clone(), hard_eod(&probs, data, a, DECISION_THRESHOLD)?)))
        .collect()
}

/// Hard metric that a band guard checks at snapshot acceptance.
#[derive(Debug, Clone)]
struct HardGuard {
    metric: MetricKind,
    reference: f64,
}

fn guards_hold(guards: &[HardGuard], tolerance: f64, bce: f64, eods: &IndexMap<String, f64>) -> bool {
    guards.iter().all(|g| {
        let current = match &g.metric {
            MetricKind::PerformanceLoss => bce,
            MetricKind::AttributeEod(a) => eods[a.as_str()],
        };
        current <= g.reference + tolerance
    })
}

struct Stepper<'a> {
    data: &'a Dataset,
    spec: &'a FairnessSpec,
    objective: CompositeObjective,
    params: ModelParams,
    value: CompositeValue,
    state: AdamState,
}

impl<'a> Stepper<'a> {
    fn new(
        data: &'a Dataset,
        spec: &'a FairnessSpec,
        objective: CompositeObjective,
        start: ModelParams,
    ) -> Result<Self> {
        let value = composite_loss_and_grad(&objective, &start, data)?;
        Ok(Stepper {
            data,
            spec,
            objective,
            state: AdamState::new(start.dim()),
            params: start,
            value,
        })
    }

    /// Moves to the next iterate and returns its hard metrics.
    fn step(&mut self) -> Result<(IndexMap<String, f64>, f64)> {
        let (next, state) = adam_step(&self.params, &self.value.grad, &self.state, &self.spec.adam())?;
        if !next.is_finite() {
            return Err(FairError::numeric("parameters became non-finite"));
        }
        self.params = next;
        self.state = state;
        self.value = composite_loss_and_grad(&self.objective, &self.params, self.data)?;
        let bce = match self.value.bce {
            Some(b) => b,
            None => full_bce_loss(&self.params, self.data)?,
        };
        if !bce.is_finite() {
            return Err(FairError::numeric("non-finite BCE during fairness optimization"));
        }
        let eods = hard_eods(&self.params, self.data, &self.spec.attributes)?;
        Ok((eods, bce))
    }
}

fn performance_penalty(spec: &FairnessSpec, reference: f64) -> PenaltySpec {
    PenaltySpec {
        metric: MetricKind::PerformanceLoss,
        reference_value: reference,
        tolerance: spec.tolerance,
        weight: spec.penalty_weight,
        direction: Direction::PenalizeIncrease,
    }
}

fn finish(
    params: ModelParams,
    strategy: Strategy,
    spec: &FairnessSpec,
    train: &Dataset,
    found_fair: IndexMap<String, bool>,
    trace: OptimizationTrace,
) -> Result<FairModelResult> {
    let recorded_eods = hard_eods(&params, train, &spec.attributes)?;
    Ok(FairModelResult {
        params,
        strategy,
        attribute_order: spec.attributes.clone(),
        found_fair,
        trace,
        recorded_eods,
    })
}

/// Optimizes one attribute at a time, in `spec.attributes` order.
pub fn optimize_sequential(
    performance_model: &ModelParams,
    train: &Dataset,
    spec: &FairnessSpec,
) -> Result<FairModelResult> {
    spec.validate(train)?;
    let reference_bce = full_bce_loss(performance_model, train)?;
    let mut penalties = vec![performance_penalty(spec, reference_bce)];
    let mut guards = vec![HardGuard {
        metric: MetricKind::PerformanceLoss,
        reference: reference_bce,
    }];
    let mut current = performance_model.clone();
    let mut found_fair = IndexMap::new();
    let mut trace = OptimizationTrace::default();

    for attr in &spec.attributes {
        let zeta = spec.threshold(attr);
        let mut objective = CompositeObjective::new(vec![attr.clone()], penalties.clone(), spec.soft());
        objective.fairness_weight = spec.fairness_weight;
        let mut stepper = Stepper::new(train, spec, objective, current.clone())?;

        let mut min_eod = f64::INFINITY;
        let mut snapshot: Option<ModelParams> = None;
        let mut best_loss: Option<(f64, ModelParams)> = None;
        for t in 1..=spec.step_budget {
            let (eods, bce) = stepper.step()?;
            let eod = eods[attr.as_str()];
            let accepted = eod <= zeta && eod < min_eod && guards_hold(&guards, spec.tolerance, bce, &eods);
            if accepted {
                min_eod = eod;
                snapshot = Some(stepper.params.clone());
            }
            if best_loss.as_ref().is_none_or(|(l, _)| stepper.value.total < *l) {
                best_loss = Some((stepper.value.total, stepper.params.clone()));
            }
            trace.steps.push(TraceStep {
                phase: attr.clone(),
                step: t,
                total_loss: stepper.value.total,
                per_term: stepper.value.per_term.clone(),
                eods,
                bce,
                accepted,
            });
            if eod >= zeta && min_eod.is_finite() {
                break;
            }
        }

        match snapshot {
            Some(p) => {
                current = p;
                found_fair.insert(attr.clone(), true);
            }
            None => {
                if let Some((_, p)) = best_loss {
                    current = p;
                }
                found_fair.insert(attr.clone(), false);
            }
        }

        // hold this attribute near what it reached
        let reached_hard = hard_eods(&current, train, std::slice::from_ref(attr))?[attr.as_str()];
        let reached_soft = crate::fairloss::soft_cells(&current, train, attr, spec.steepness)?.soft_eod();
        penalties.push(PenaltySpec {
            metric: MetricKind::AttributeEod(attr.clone()),
            reference_value: reached_soft,
            tolerance: spec.tolerance,
            weight: spec.penalty_weight,
            direction: Direction::PenalizeIncrease,
        });
        guards.push(HardGuard {
            metric: MetricKind::AttributeEod(attr.clone()),
            reference: reached_hard,
        });
    }

    // A later phase may move an earlier attribute inside its band but past
    // its threshold; the flag describes the returned model.
    let final_eods = hard_eods(&current, train, &spec.attributes)?;
    for (a, found) in found_fair.iter_mut() {
        *found = *found && final_eods[a.as_str()] <= spec.threshold(a);
    }
    finish(current, Strategy::Sequential, spec, train, found_fair, trace)
}

/// Optimizes the sum of all attributes' fairness losses in one phase.
pub fn optimize_simultaneous(
    performance_model: &ModelParams,
    train: &Dataset,
    spec: &FairnessSpec,
) -> Result<FairModelResult> {
    spec.validate(train)?;
    let mut trace = OptimizationTrace::default();
    if spec.attributes.is_empty() {
        return finish(
            performance_model.clone(),
            Strategy::Simultaneous,
            spec,
            train,
            IndexMap::new(),
            trace,
        );
    }
    let reference_bce = full_bce_loss(performance_model, train)?;
    let guards = vec![HardGuard {
        metric: MetricKind::PerformanceLoss,
        reference: reference_bce,
    }];
    let mut objective = CompositeObjective::new(
        spec.attributes.clone(),
        vec![performance_penalty(spec, reference_bce)],
        spec.soft(),
    );
    objective.fairness_weight = spec.fairness_weight;
    let mut stepper = Stepper::new(train, spec, objective, performance_model.clone())?;

    let mut min_total = f64::INFINITY;
    let mut snapshot: Option<ModelParams> = None;
    for t in 1..=spec.step_budget {
        let (eods, bce) = stepper.step()?;
        let total: f64 = eods.values().sum();
        let fair_all = spec
            .attributes
            .iter()
            .all(|a| eods[a.as_str()] <= spec.threshold(a));
        let accepted = fair_all && total < min_total && guards_hold(&guards, spec.tolerance, bce, &eods);
        if accepted {
            min_total = total;
            snapshot = Some(stepper.params.clone());
        }
        trace.steps.push(TraceStep {
            phase: "all".to_string(),
            step: t,
            total_loss: stepper.value.total,
            per_term: stepper.value.per_term.clone(),
            eods,
            bce,
            accepted,
        });
        if !fair_all && snapshot.is_some() {
            break;
        }
    }

    let found = snapshot.is_some();
    let found_fair = spec.attributes.iter().map(|a| (a.clone(), found)).collect();
    let params = snapshot.unwrap_or_else(|| performance_model.clone());
    finish(params, Strategy::Simultaneous, spec, train, found_fair, trace)
}

pub fn optimize(
    strategy: Strategy,
    performance_model: &ModelParams,
    train: &Dataset,
    spec: &FairnessSpec,
) -> Result<FairModelResult> {
    match strategy {
        Strategy::Sequential => optimize_sequential(performance_model, train, spec),
        Strategy::Simultaneous => optimize_simultaneous(performance_model, train, spec),
    }
}

/// Performance and fairness of `params` on `data` for the spec's attributes.
pub fn evaluate_model(
    params: &ModelParams,
    data: &Dataset,
    spec: &FairnessSpec,
    threshold: f64,
) -> Result<MetricsReport> {
    let (_, probs) = predict_dataset(params, data)?;
    metrics_report(&probs, data, &spec.attributes, threshold)
}
