//! Multi-seed experiment runner and report tables.
//!
//! A run loads or generates one dataset, splits it once, and then for every
//! repetition `r` trains a performance model with seed `train.seed + r` and
//! applies each configured scenario on top of it. Results are aggregated
//! into mean and standard deviation per scenario, on both the training
//! split (where snapshots are selected) and the held-out test split.
//!
//! Configs are flat `key = value` text with dotted section prefixes:
//!
//! ```text
//! # biased synthetic cohort
//! synth.preset = sud-like
//! split.seed = 7
//! train.seed = 100
//! scenarios = none, single:race, single:sex, sequential:race>sex, simultaneous
//! repetitions = 5
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexMap;
use rayon::prelude::*;

use crate::dataset::{load_csv, stratified_split, Dataset, SplitSpec, Standardizer};
use crate::error::{FairError, Result};
use crate::metrics::MetricsReport;
use crate::model::{train_performance, ModelParams, TrainConfig};
use crate::optimize::{
    evaluate_model, optimize_sequential, optimize_simultaneous, FairnessSpec, OptimizationTrace,
    DECISION_THRESHOLD,
};
use crate::synth::{generate, preset, SynthConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv {
        path: PathBuf,
        label: String,
        attributes: Vec<String>,
    },
    Synthetic(SynthConfig),
}

impl DataSource {
    pub fn attributes(&self) -> Vec<String> {
        match self {
            DataSource::Csv { attributes, .. } => attributes.clone(),
            DataSource::Synthetic(cfg) => cfg.attributes.keys().cloned().collect(),
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Csv {
                path,
                label,
                attributes,
            } => load_csv(path, label, attributes),
            DataSource::Synthetic(cfg) => generate(cfg),
        }
    }
}

/// One row of the report: which fairness fine-tuning, if any, follows the
/// performance phase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scenario {
    None,
    Single(String),
    Sequential(Vec<String>),
    Simultaneous(Vec<String>),
}

impl Scenario {
    /// Parses `none`, `single:a`, `sequential:a>b`, `simultaneous` or
    /// `simultaneous:a&b`. A bare `simultaneous` covers `all_attributes`.
    pub fn parse(text: &str, all_attributes: &[String]) -> Result<Scenario> {
        let text = text.trim();
        let (kind, arg) = match text.split_once(':') {
            Some((k, a)) => (k.trim(), Some(a.trim())),
            None => (text, None),
        };
        let list =
            |arg: &str, sep: char| -> Vec<String> { arg.split(sep).map(|s| s.trim().to_string()).collect() };
        let scenario = match (kind, arg) {
            ("none", None) => Scenario::None,
            ("single", Some(a)) if !a.is_empty() => Scenario::Single(a.to_string()),
            ("sequential", Some(a)) => Scenario::Sequential(list(a, '>')),
            ("simultaneous", None) => Scenario::Simultaneous(all_attributes.to_vec()),
            ("simultaneous", Some(a)) => Scenario::Simultaneous(list(a, '&')),
            _ => {
                return Err(FairError::config(format!(
                    "cannot parse scenario {text:?}; expected none, single:<a>, \
                     sequential:<a>><b>, simultaneous or simultaneous:<a>&<b>"
                )))
            }
        };
        if scenario.attributes().iter().any(|a| a.is_empty()) {
            return Err(FairError::config(format!(
                "empty attribute name in scenario {text:?}"
            )));
        }
        Ok(scenario)
    }

    pub fn attributes(&self) -> &[String] {
        match self {
            Scenario::None => &[],
            Scenario::Single(a) => std::slice::from_ref(a),
            Scenario::Sequential(v) | Scenario::Simultaneous(v) => v,
        }
    }

    /// Short identifier used in CSV rows and artifact file names.
    pub fn key(&self) -> String {
        match self {
            Scenario::None => "none".to_string(),
            Scenario::Single(a) => format!("single-{a}"),
            Scenario::Sequential(v) => format!("sequential-{}", v.join("-")),
            Scenario::Simultaneous(v) => format!("simultaneous-{}", v.join("-")),
        }
    }

    pub fn fair_method(&self) -> &'static str {
        match self {
            Scenario::None => "None",
            Scenario::Single(_) => "Single",
            Scenario::Sequential(_) => "Sequential",
            Scenario::Simultaneous(_) => "Simultaneous",
        }
    }

    pub fn model_label(&self) -> String {
        let names = |v: &[String]| v.iter().map(|a| display_name(a)).collect::<Vec<_>>();
        match self {
            Scenario::None => "Best Performing Model".to_string(),
            Scenario::Single(a) => format!("{}-Fair Model", display_name(a)),
            Scenario::Sequential(v) => format!("Sequential({})", names(v).join(", ")),
            Scenario::Simultaneous(v) => format!("Simultaneous({})", names(v).join(" & ")),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::None => write!(f, "none"),
            Scenario::Single(a) => write!(f, "single:{a}"),
            Scenario::Sequential(v) => write!(f, "sequential:{}", v.join(">")),
            Scenario::Simultaneous(v) => write!(f, "simultaneous:{}", v.join("&")),
        }
    }
}

/// `race` -> `Race`.
pub fn display_name(attribute: &str) -> String {
    let mut chars = attribute.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    Csv,
    #[default]
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = FairError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(FairError::config(format!(
                "unknown report format {other:?}; expected csv or markdown"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: ReportFormat,
    /// Write one optimization trace CSV per scenario and repetition.
    pub traces: bool,
    /// Write every trained model as text, in raw feature units.
    pub models: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("results"),
            format: ReportFormat::Markdown,
            traces: false,
            models: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub split: SplitSpec,
    /// `train.seed` is the base seed; repetition `r` trains with `seed + r`.
    pub train: TrainConfig,
    /// Shared fine-tuning settings. `attributes` lists the attributes whose
    /// EOD is reported; each scenario substitutes its own attribute list.
    pub fairness: FairnessSpec,
    pub scenarios: Vec<Scenario>,
    pub repetitions: usize,
    /// Fit a standardizer on the training split and apply it to both splits.
    pub standardize: bool,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// Synthetic data from a preset, every scenario the attributes allow and
    /// default hyperparameters.
    pub fn for_preset(name: &str) -> Result<Self> {
        let synth = preset(name)?;
        let attrs: Vec<String> = synth.attributes.keys().cloned().collect();
        let mut scenarios = vec![Scenario::None];
        scenarios.extend(attrs.iter().cloned().map(Scenario::Single));
        if attrs.len() > 1 {
            scenarios.push(Scenario::Sequential(attrs.clone()));
            scenarios.push(Scenario::Sequential(attrs.iter().rev().cloned().collect()));
            scenarios.push(Scenario::Simultaneous(attrs.clone()));
        }
        Ok(ExperimentConfig {
            data: DataSource::Synthetic(synth),
            split: SplitSpec::default(),
            train: TrainConfig::default(),
            fairness: FairnessSpec::with_attributes(attrs),
            scenarios,
            repetitions: 5,
            standardize: true,
            output: OutputConfig::default(),
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| FairError::io(path, e))?;
        let mut cfg = ExperimentConfig::parse(&text)?;
        // relative data paths are taken from the config's directory
        if let DataSource::Csv { path: data, .. } = &mut cfg.data {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: IndexMap<String, (usize, String)> = IndexMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(FairError::config(format!("line {}: expected key = value", i + 1)));
            };
            let key = k.trim().to_string();
            if entries
                .insert(key.clone(), (i + 1, v.trim().to_string()))
                .is_some()
            {
                return Err(FairError::config(format!("line {}: duplicate key {key}", i + 1)));
            }
        }
        Builder::default().build(entries)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(FairError::config("repetitions must be at least 1"));
        }
        if self.scenarios.is_empty() {
            return Err(FairError::config("no scenarios configured"));
        }
        self.train.validate()?;
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        let known = self.data.attributes();
        let check = |a: &String, what: &str| {
            if known.contains(a) {
                Ok(())
            } else {
                Err(FairError::config(format!("{what} names unknown attribute {a:?}")))
            }
        };
        for a in &self.fairness.attributes {
            check(a, "fairness.attributes")?;
        }
        for s in &self.scenarios {
            let attrs = s.attributes();
            for (i, a) in attrs.iter().enumerate() {
                check(a, &format!("scenario {s}"))?;
                if attrs[..i].contains(a) {
                    return Err(FairError::config(format!("scenario {s} repeats attribute {a}")));
                }
            }
            if matches!(s, Scenario::Sequential(v) | Scenario::Simultaneous(v) if v.is_empty()) {
                return Err(FairError::config(format!("scenario {s} has no attributes")));
            }
        }
        Ok(())
    }

    fn spec_for(&self, attributes: &[String]) -> FairnessSpec {
        FairnessSpec {
            attributes: attributes.to_vec(),
            ..self.fairness.clone()
        }
    }
}

#[derive(Default)]
struct Builder {
    csv_path: Option<PathBuf>,
    csv_label: Option<String>,
    csv_attributes: Option<Vec<String>>,
    synth: Option<SynthConfig>,
    synth_keys: Vec<(String, String)>,
    split: SplitSpec,
    train: TrainConfig,
    fairness: FairnessSpec,
    fairness_attributes: Option<Vec<String>>,
    scenarios: Option<Vec<String>>,
    repetitions: Option<usize>,
    standardize: Option<bool>,
    output: OutputConfig,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| FairError::config(format!("{key}: cannot parse {value:?}")))
}

fn comma_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

impl Builder {
    fn build(mut self, entries: IndexMap<String, (usize, String)>) -> Result<ExperimentConfig> {
        for (key, (line, value)) in &entries {
            self.set(key, value)
                .map_err(|e| FairError::config(format!("line {line}: {}", strip_prefix(&e))))?;
        }
        let data = match (self.csv_path.take(), self.synth.take()) {
            (Some(_), Some(_)) => return Err(FairError::config("set either data.path or synth.*, not both")),
            (None, None) if self.synth_keys.is_empty() => {
                return Err(FairError::config("no data source: set data.path or synth.preset"))
            }
            (Some(path), None) => {
                if !self.synth_keys.is_empty() {
                    return Err(FairError::config("set either data.path or synth.*, not both"));
                }
                DataSource::Csv {
                    path,
                    label: self.csv_label.take().unwrap_or_else(|| "label".to_string()),
                    attributes: self
                        .csv_attributes
                        .take()
                        .ok_or_else(|| FairError::config("data.attributes is required with data.path"))?,
                }
            }
            (None, synth) => {
                let mut cfg = synth.unwrap_or_default();
                for (k, v) in std::mem::take(&mut self.synth_keys) {
                    apply_synth_key(&mut cfg, &k, &v)?;
                }
                DataSource::Synthetic(cfg)
            }
        };
        let all = data.attributes();
        self.fairness.attributes = self.fairness_attributes.take().unwrap_or_else(|| all.clone());
        let scenarios = match self.scenarios.take() {
            Some(list) => list
                .iter()
                .map(|s| Scenario::parse(s, &self.fairness.attributes))
                .collect::<Result<Vec<_>>>()?,
            None => vec![
                Scenario::None,
                Scenario::Simultaneous(self.fairness.attributes.clone()),
            ],
        };
        let cfg = ExperimentConfig {
            data,
            split: self.split,
            train: self.train,
            fairness: self.fairness,
            scenarios,
            repetitions: self.repetitions.unwrap_or(5),
            standardize: self.standardize.unwrap_or(true),
            output: self.output,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let f = |v: &str| parse_value::<f64>(key, v);
        let u = |v: &str| parse_value::<usize>(key, v);
        match key {
            "data.path" => self.csv_path = Some(PathBuf::from(value)),
            "data.label" => self.csv_label = Some(value.to_string()),
            "data.attributes" => self.csv_attributes = Some(comma_list(value)),
            "synth.preset" => self.synth = Some(preset(value)?),
            k if k.starts_with("synth.") => self.synth_keys.push((k.to_string(), value.to_string())),
            "split.train_fraction" => self.split.train_fraction = f(value)?,
            "split.seed" => self.split.seed = parse_value(key, value)?,
            "train.learning_rate" => self.train.learning_rate = f(value)?,
            "train.batch_size" => self.train.batch_size = u(value)?,
            "train.max_epochs" => self.train.max_epochs = u(value)?,
            "train.beta1" => self.train.beta1 = f(value)?,
            "train.beta2" => self.train.beta2 = f(value)?,
            "train.adam_epsilon" => self.train.adam_epsilon = f(value)?,
            "train.early_stop_window" => self.train.early_stop_window = u(value)?,
            "train.early_stop_delta" => self.train.early_stop_delta = f(value)?,
            "train.seed" => self.train.seed = parse_value(key, value)?,
            "train.init_noise" => self.train.init_noise = f(value)?,
            "fairness.attributes" => self.fairness_attributes = Some(comma_list(value)),
            "fairness.threshold" => self.fairness.default_threshold = f(value)?,
            k if k.starts_with("fairness.threshold.") => {
                let attr = &k["fairness.threshold.".len()..];
                self.fairness.thresholds.insert(attr.to_string(), f(value)?);
            }
            "fairness.step_budget" => self.fairness.step_budget = u(value)?,
            "fairness.tolerance" => self.fairness.tolerance = f(value)?,
            "fairness.steepness" => self.fairness.steepness = f(value)?,
            "fairness.learning_rate" => self.fairness.learning_rate = f(value)?,
            "fairness.penalty_weight" => self.fairness.penalty_weight = f(value)?,
            "fairness.fairness_weight" => self.fairness.fairness_weight = f(value)?,
            "scenarios" => self.scenarios = Some(comma_list(value)),
            "repetitions" => self.repetitions = Some(u(value)?),
            "standardize" => self.standardize = Some(parse_value(key, value)?),
            "output.dir" => self.output.dir = PathBuf::from(value),
            "output.format" => self.output.format = value.parse()?,
            "output.traces" => self.output.traces = parse_value(key, value)?,
            "output.models" => self.output.models = parse_value(key, value)?,
            _ => return Err(FairError::config(format!("unknown key {key}"))),
        }
        Ok(())
    }
}

fn strip_prefix(e: &FairError) -> String {
    match e {
        FairError::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

fn apply_synth_key(cfg: &mut SynthConfig, key: &str, value: &str) -> Result<()> {
    let f = |v: &str| parse_value::<f64>(key, v);
    let name = key.trim_start_matches("synth.");
    match name {
        "n" => cfg.n = parse_value(key, value)?,
        "d" => cfg.d = parse_value(key, value)?,
        "seed" => cfg.seed = parse_value(key, value)?,
        "class_positive_rate" => cfg.class_positive_rate = f(value)?,
        "attr_correlation" => cfg.attr_correlation = f(value)?,
        "signal_scale" => cfg.signal_scale = f(value)?,
        "attributes_as_features" => cfg.attributes_as_features = parse_value(key, value)?,
        _ => {
            if let Some(a) = name.strip_prefix("marginal.") {
                cfg.attributes.insert(a.to_string(), f(value)?);
            } else if let Some(a) = name.strip_prefix("bias_shift.") {
                cfg.bias_shift.insert(a.to_string(), f(value)?);
            } else if let Some(a) = name.strip_prefix("flip_rate.") {
                let parts: Vec<&str> = value.split(',').collect();
                let [fa, fb] = parts[..] else {
                    return Err(FairError::config(format!(
                        "{key}: expected two rates, got {value:?}"
                    )));
                };
                cfg.flip_rate
                    .insert(a.to_string(), (f(fa.trim())?, f(fb.trim())?));
            } else {
                return Err(FairError::config(format!("unknown key {key}")));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len() as f64;
        if values.is_empty() {
            return MeanStd {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSummary {
    pub auroc: MeanStd,
    pub sensitivity: MeanStd,
    pub specificity: MeanStd,
    pub eod: IndexMap<String, MeanStd>,
}

impl SurfaceSummary {
    fn of(reports: &[&MetricsReport], attributes: &[String]) -> SurfaceSummary {
        let col = |f: &dyn Fn(&MetricsReport) -> f64| {
            MeanStd::of(&reports.iter().map(|r| f(r)).collect::<Vec<_>>())
        };
        SurfaceSummary {
            auroc: col(&|r| r.auroc),
            sensitivity: col(&|r| r.sensitivity),
            specificity: col(&|r| r.specificity),
            eod: attributes
                .iter()
                .map(|a| (a.clone(), col(&|r| r.eod_by_attribute[a.as_str()])))
                .collect(),
        }
    }
}

/// One scenario applied after one performance model.
#[derive(Debug, Clone, PartialEq)]
pub struct RepetitionRun {
    pub repetition: usize,
    pub seed: u64,
    pub train: MetricsReport,
    pub test: MetricsReport,
    /// Empty for the `none` scenario.
    pub found_fair: IndexMap<String, bool>,
    /// Model in raw (unstandardized) feature units.
    pub params: ModelParams,
    pub trace: OptimizationTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFailure {
    pub message: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    /// In repetition order; empty when the scenario aborted.
    pub runs: Vec<RepetitionRun>,
    pub failure: Option<ScenarioFailure>,
}

impl ScenarioReport {
    pub fn summary(&self, attributes: &[String], surface: Surface) -> Option<SurfaceSummary> {
        if self.failure.is_some() || self.runs.is_empty() {
            return None;
        }
        let reports: Vec<&MetricsReport> = self.runs.iter().map(|r| r.surface(surface)).collect();
        Some(SurfaceSummary::of(&reports, attributes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    Train,
    Test,
}

impl Surface {
    pub fn name(self) -> &'static str {
        match self {
            Surface::Train => "train",
            Surface::Test => "test",
        }
    }
}

impl RepetitionRun {
    pub fn surface(&self, surface: Surface) -> &MetricsReport {
        match surface {
            Surface::Train => &self.train,
            Surface::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    /// Attributes whose EOD every row reports.
    pub attributes: Vec<String>,
    pub repetitions: usize,
    pub seeds: Vec<u64>,
    /// Phase-1 models in raw feature units, one per repetition that trained.
    pub performance_models: Vec<Option<ModelParams>>,
    pub scenarios: Vec<ScenarioReport>,
}

impl RunReport {
    pub fn scenario(&self, scenario: &Scenario) -> Option<&ScenarioReport> {
        self.scenarios.iter().find(|s| &s.scenario == scenario)
    }

    /// 0 when every scenario completed, otherwise the code of the first
    /// failure.
    pub fn exit_code(&self) -> i32 {
        self.scenarios
            .iter()
            .find_map(|s| s.failure.as_ref().map(|f| f.exit_code))
            .unwrap_or(0)
    }
}

struct Prepared {
    train: Dataset,
    test: Dataset,
    standardizer: Option<Standardizer>,
}

fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let data = config.data.load()?;
    let (train, test) = stratified_split(&data, &config.split)?;
    if config.standardize {
        let s = Standardizer::fit(&train);
        Ok(Prepared {
            train: s.apply(&train)?,
            test: s.apply(&test)?,
            standardizer: Some(s),
        })
    } else {
        Ok(Prepared {
            train,
            test,
            standardizer: None,
        })
    }
}

fn raw_units(prepared: &Prepared, params: &ModelParams) -> Result<ModelParams> {
    match &prepared.standardizer {
        Some(s) => s.fold_into(params),
        None => Ok(params.clone()),
    }
}

fn run_scenario(
    config: &ExperimentConfig,
    prepared: &Prepared,
    scenario: &Scenario,
    performance: &ModelParams,
    repetition: usize,
    seed: u64,
) -> Result<RepetitionRun> {
    let (params, found_fair, trace) = match scenario {
        Scenario::None => (performance.clone(), IndexMap::new(), OptimizationTrace::default()),
        Scenario::Single(_) | Scenario::Sequential(_) => {
            let r = optimize_sequential(
                performance,
                &prepared.train,
                &config.spec_for(scenario.attributes()),
            )?;
            (r.params, r.found_fair, r.trace)
        }
        Scenario::Simultaneous(attrs) => {
            let r = optimize_simultaneous(performance, &prepared.train, &config.spec_for(attrs))?;
            (r.params, r.found_fair, r.trace)
        }
    };
    let report_spec = config.spec_for(&config.fairness.attributes);
    Ok(RepetitionRun {
        repetition,
        seed,
        train: evaluate_model(&params, &prepared.train, &report_spec, DECISION_THRESHOLD)?,
        test: evaluate_model(&params, &prepared.test, &report_spec, DECISION_THRESHOLD)?,
        found_fair,
        params: raw_units(prepared, &params)?,
        trace,
    })
}

type RepetitionResult = (Result<ModelParams>, Vec<Result<RepetitionRun>>);

fn run_repetition(config: &ExperimentConfig, prepared: &Prepared, r: usize) -> RepetitionResult {
    let seed = config.train.seed.wrapping_add(r as u64);
    let train_cfg = TrainConfig {
        seed,
        ..config.train.clone()
    };
    let performance = train_performance(&prepared.train, &train_cfg).map(|o| o.params);
    let runs = config
        .scenarios
        .iter()
        .map(|s| match &performance {
            Ok(p) => run_scenario(config, prepared, s, p, r, seed),
            Err(e) => Err(FairError::numeric(format!("performance phase failed: {e}"))),
        })
        .collect();
    let raw = performance.and_then(|p| raw_units(prepared, &p));
    (raw, runs)
}

/// Runs every scenario for every repetition.
///
/// Errors that make the whole run impossible (bad config, unreadable or
/// invalid data) are returned; errors inside one scenario are recorded in
/// its [`ScenarioReport`] and the other scenarios still run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    let prepared = prepare(config)?;
    let results: Vec<RepetitionResult> = (0..config.repetitions)
        .into_par_iter()
        .map(|r| run_repetition(config, &prepared, r))
        .collect();

    let mut scenarios: Vec<ScenarioReport> = config
        .scenarios
        .iter()
        .map(|s| ScenarioReport {
            scenario: s.clone(),
            runs: Vec::new(),
            failure: None,
        })
        .collect();
    let mut performance_models = Vec::with_capacity(results.len());
    for (r, (perf, runs)) in results.into_iter().enumerate() {
        performance_models.push(perf.ok());
        for (report, run) in scenarios.iter_mut().zip(runs) {
            if report.failure.is_some() {
                continue;
            }
            match run {
                Ok(run) => report.runs.push(run),
                Err(e) => {
                    report.failure = Some(ScenarioFailure {
                        message: format!("{} (repetition {r}): {e}", report.scenario),
                        exit_code: e.exit_code(),
                    });
                    report.runs.clear();
                }
            }
        }
    }
    Ok(RunReport {
        attributes: config.fairness.attributes.clone(),
        repetitions: config.repetitions,
        seeds: (0..config.repetitions)
            .map(|r| config.train.seed.wrapping_add(r as u64))
            .collect(),
        performance_models,
        scenarios,
    })
}

/// Markdown table in the layout of a performance/fairness results table:
/// test metrics first, then the training EODs the snapshots were chosen on.
pub fn render_markdown(report: &RunReport) -> String {
    let attrs = &report.attributes;
    let mut header = vec![
        "Fair Method".to_string(),
        "Model".to_string(),
        "AUROC".to_string(),
        "Sensitivity".to_string(),
        "Specificity".to_string(),
    ];
    header.extend(attrs.iter().map(|a| format!("{} EOD", display_name(a))));
    header.extend(attrs.iter().map(|a| format!("Train {} EOD", display_name(a))));
    let mut out = format!("| {} |\n", header.join(" | "));
    let align: Vec<&str> = header
        .iter()
        .enumerate()
        .map(|(i, _)| if i < 2 { "---" } else { "---:" })
        .collect();
    out += &format!("| {} |\n", align.join(" | "));

    let mut failures = Vec::new();
    for s in &report.scenarios {
        let mut cells = vec![s.scenario.fair_method().to_string(), s.scenario.model_label()];
        match (s.summary(attrs, Surface::Test), s.summary(attrs, Surface::Train)) {
            (Some(test), Some(train)) => {
                cells.push(test.auroc.to_string());
                cells.push(test.sensitivity.to_string());
                cells.push(test.specificity.to_string());
                cells.extend(attrs.iter().map(|a| test.eod[a.as_str()].to_string()));
                cells.extend(attrs.iter().map(|a| train.eod[a.as_str()].to_string()));
            }
            _ => {
                cells.extend(std::iter::repeat_n("aborted".to_string(), header.len() - 2));
                if let Some(f) = &s.failure {
                    failures.push(f.message.clone());
                }
            }
        }
        out += &format!("| {} |\n", cells.join(" | "));
    }
    out += &format!(
        "\nMean ± standard deviation over {} repetitions (seeds {}). Test split unless marked Train.\n",
        report.repetitions,
        report
            .seeds
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(", ")
    );
    for f in failures {
        out += &format!("\nAborted: {f}\n");
    }
    out
}

fn csv_string(write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w).expect("writing CSV to memory cannot fail");
    let bytes = w.into_inner().expect("flushing CSV to memory cannot fail");
    String::from_utf8(bytes).expect("CSV output is UTF-8")
}

/// One row per scenario with mean and standard deviation of every metric
/// on both surfaces.
pub fn render_summary_csv(report: &RunReport) -> String {
    let attrs = &report.attributes;
    csv_string(|w| {
        let mut header = vec!["fair_method", "model", "scenario", "status", "repetitions"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        for surface in [Surface::Test, Surface::Train] {
            let mut metrics: Vec<String> = ["auroc", "sensitivity", "specificity"]
                .iter()
                .map(|m| m.to_string())
                .collect();
            metrics.extend(attrs.iter().map(|a| format!("eod_{a}")));
            for m in metrics {
                header.push(format!("{}_{m}_mean", surface.name()));
                header.push(format!("{}_{m}_std", surface.name()));
            }
        }
        w.write_record(&header)?;
        for s in &report.scenarios {
            let mut row = vec![
                s.scenario.fair_method().to_string(),
                s.scenario.model_label(),
                s.scenario.to_string(),
                if s.failure.is_some() { "aborted" } else { "ok" }.to_string(),
                s.runs.len().to_string(),
            ];
            for surface in [Surface::Test, Surface::Train] {
                match s.summary(attrs, surface) {
                    Some(sum) => {
                        let mut stats = vec![sum.auroc, sum.sensitivity, sum.specificity];
                        stats.extend(attrs.iter().map(|a| sum.eod[a.as_str()]));
                        for m in stats {
                            row.push(m.mean.to_string());
                            row.push(m.std.to_string());
                        }
                    }
                    None => row.extend(std::iter::repeat_n(String::new(), 2 * (3 + attrs.len()))),
                }
            }
            w.write_record(&row)?;
        }
        Ok(())
    })
}

/// Raw per-repetition metrics, one row per scenario, repetition and surface.
pub fn render_repetitions_csv(report: &RunReport) -> String {
    let attrs = &report.attributes;
    csv_string(|w| {
        let mut header: Vec<String> = [
            "scenario",
            "repetition",
            "seed",
            "surface",
            "auroc",
            "sensitivity",
            "specificity",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend(attrs.iter().map(|a| format!("eod_{a}")));
        header.push("found_fair".to_string());
        w.write_record(&header)?;
        for s in &report.scenarios {
            for run in &s.runs {
                let found = run
                    .found_fair
                    .iter()
                    .map(|(a, f)| format!("{a}={}", u8::from(*f)))
                    .collect::<Vec<_>>()
                    .join(";");
                for surface in [Surface::Train, Surface::Test] {
                    let m = run.surface(surface);
                    let mut row = vec![
                        s.scenario.to_string(),
                        run.repetition.to_string(),
                        run.seed.to_string(),
                        surface.name().to_string(),
                        m.auroc.to_string(),
                        m.sensitivity.to_string(),
                        m.specificity.to_string(),
                    ];
                    row.extend(attrs.iter().map(|a| m.eod_by_attribute[a.as_str()].to_string()));
                    row.push(found.clone());
                    w.write_record(&row)?;
                }
            }
        }
        Ok(())
    })
}

/// Metrics of one saved model on one dataset, as a markdown pair of tables
/// or as long-format CSV (`metric,attribute,value`).
pub fn render_audit(report: &MetricsReport, format: ReportFormat) -> String {
    let per_attr = |a: &String| {
        [
            ("eod", report.eod_by_attribute[a.as_str()]),
            ("dp_diff", report.dp_diff[a.as_str()]),
            ("eopp_diff", report.eopp_diff[a.as_str()]),
            ("calibration_gap", report.calibration_gap[a.as_str()]),
        ]
    };
    match format {
        ReportFormat::Markdown => {
            let mut out = String::from("| AUROC | Sensitivity | Specificity |\n| ---: | ---: | ---: |\n");
            out += &format!(
                "| {:.4} | {:.4} | {:.4} |\n\n",
                report.auroc, report.sensitivity, report.specificity
            );
            out += "| Attribute | EOD | DP diff | EOpp diff | Calibration gap |\n";
            out += "| --- | ---: | ---: | ---: | ---: |\n";
            for a in report.eod_by_attribute.keys() {
                let v = per_attr(a);
                out += &format!(
                    "| {} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
                    display_name(a),
                    v[0].1,
                    v[1].1,
                    v[2].1,
                    v[3].1
                );
            }
            out
        }
        ReportFormat::Csv => csv_string(|w| {
            w.write_record(["metric", "attribute", "value"])?;
            for (m, v) in [
                ("auroc", report.auroc),
                ("sensitivity", report.sensitivity),
                ("specificity", report.specificity),
            ] {
                w.write_record([m, "", &v.to_string()])?;
            }
            for a in report.eod_by_attribute.keys() {
                for (m, v) in per_attr(a) {
                    w.write_record([m, a, &v.to_string()])?;
                }
            }
            Ok(())
        }),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| FairError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| FairError::io(path, e))
}

/// Writes the summary (`report.md` or `report.csv`) and the per-repetition
/// `repetitions.csv` into `dir`, returning the written paths.
pub fn emit_report(report: &RunReport, dir: impl AsRef<Path>, format: ReportFormat) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    let summary = match format {
        ReportFormat::Markdown => (dir.join("report.md"), render_markdown(report)),
        ReportFormat::Csv => (dir.join("report.csv"), render_summary_csv(report)),
    };
    let reps = (dir.join("repetitions.csv"), render_repetitions_csv(report));
    for (path, text) in [&summary, &reps] {
        write_file(path, text)?;
    }
    Ok(vec![summary.0, reps.0])
}

/// Writes the optional trace CSVs and model files under `dir`.
pub fn emit_artifacts(
    report: &RunReport,
    dir: impl AsRef<Path>,
    output: &OutputConfig,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut written = Vec::new();
    if output.models {
        let models = dir.join("models");
        create_dir(&models)?;
        for (r, p) in report.performance_models.iter().enumerate() {
            if let Some(p) = p {
                let path = models.join(format!("performance_rep{r}.txt"));
                p.save(&path)?;
                written.push(path);
            }
        }
        for s in &report.scenarios {
            for run in &s.runs {
                let path = models.join(format!("{}_rep{}.txt", s.scenario.key(), run.repetition));
                run.params.save(&path)?;
                written.push(path);
            }
        }
    }
    if output.traces {
        let traces = dir.join("traces");
        create_dir(&traces)?;
        for s in &report.scenarios {
            for run in s.runs.iter().filter(|r| !r.trace.is_empty()) {
                let path = traces.join(format!("{}_rep{}.csv", s.scenario.key(), run.repetition));
                run.trace.save_csv(&path)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_round_trip() {
        let all = vec!["race".to_string(), "sex".to_string()];
        for text in [
            "none",
            "single:race",
            "sequential:sex>race",
            "simultaneous:race&sex",
        ] {
            let s = Scenario::parse(text, &all).unwrap();
            assert_eq!(s.to_string(), text);
        }
        assert_eq!(
            Scenario::parse("simultaneous", &all).unwrap(),
            Scenario::Simultaneous(all.clone())
        );
        assert!(Scenario::parse("single", &all).is_err());
        assert!(Scenario::parse("parallel:race", &all).is_err());
    }

    #[test]
    fn labels_follow_table_wording() {
        let s = Scenario::Sequential(vec!["race".into(), "sex".into()]);
        assert_eq!(s.model_label(), "Sequential(Race, Sex)");
        assert_eq!(Scenario::Single("sex".into()).model_label(), "Sex-Fair Model");
        assert_eq!(
            Scenario::Simultaneous(vec!["race".into(), "sex".into()]).model_label(),
            "Simultaneous(Race & Sex)"
        );
    }

    #[test]
    fn mean_std_rendering() {
        let m = MeanStd {
            mean: 0.86134,
            std: 0.0021,
        };
        assert_eq!(m.to_string(), "0.8613 ± 0.0021");
        let s = MeanStd::of(&[1.0, 2.0, 3.0]);
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert_eq!(MeanStd::of(&[4.0]).std, 0.0);
    }

    #[test]
    fn parses_flat_config() {
        let cfg = ExperimentConfig::parse(
            "# comment\n\
             synth.preset = sud-like\n\
             synth.n = 2000\n\
             synth.bias_shift.race = 0.5\n\
             synth.flip_rate.sex = 0.0, 0.1\n\
             split.seed = 3\n\
             train.max_epochs = 20\n\
             fairness.threshold.race = 0.04\n\
             scenarios = none, single:race, sequential:sex>race\n\
             repetitions = 2\n\
             output.format = csv\n",
        )
        .unwrap();
        let DataSource::Synthetic(s) = &cfg.data else {
            panic!("expected synthetic data")
        };
        assert_eq!(s.n, 2000);
        assert_eq!(s.bias_shift["race"], 0.5);
        assert_eq!(s.flip_rate["sex"], (0.0, 0.1));
        assert_eq!(cfg.split.seed, 3);
        assert_eq!(cfg.train.max_epochs, 20);
        assert_eq!(cfg.fairness.threshold("race"), 0.04);
        assert_eq!(cfg.fairness.threshold("sex"), 0.05);
        assert_eq!(cfg.scenarios.len(), 3);
        assert_eq!(cfg.repetitions, 2);
        assert_eq!(cfg.output.format, ReportFormat::Csv);
        assert_eq!(cfg.fairness.attributes, vec!["race", "sex"]);
    }

    #[test]
    fn rejects_bad_configs() {
        let cases = [
            "synth.preset = sud-like\nbogus = 1\n",
            "synth.preset = sud-like\nrepetitions = 0\n",
            "synth.preset = sud-like\nscenarios = single:age\n",
            "synth.preset = sud-like\ntrain.max_epochs = many\n",
            "train.seed = 1\n",
            "data.path = x.csv\n",
            "synth.preset = sud-like\nsynth.preset = sepsis-like\n",
            "synth.preset = sud-like\nno equals sign\n",
        ];
        for text in cases {
            let err = ExperimentConfig::parse(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text:?} gave {err}");
        }
    }

    fn report_with(values: &[f64]) -> RunReport {
        let scenario = Scenario::Single("race".into());
        let runs = values
            .iter()
            .enumerate()
            .map(|(r, &v)| {
                let m = MetricsReport {
                    auroc: v,
                    sensitivity: 0.5,
                    specificity: 0.5,
                    eod_by_attribute: [("race".to_string(), v / 10.0)].into(),
                    dp_diff: IndexMap::new(),
                    eopp_diff: IndexMap::new(),
                    calibration_gap: IndexMap::new(),
                };
                RepetitionRun {
                    repetition: r,
                    seed: r as u64,
                    train: m.clone(),
                    test: m,
                    found_fair: [("race".to_string(), true)].into(),
                    params: ModelParams::zeros(1),
                    trace: OptimizationTrace::default(),
                }
            })
            .collect();
        RunReport {
            attributes: vec!["race".into()],
            repetitions: values.len(),
            seeds: (0..values.len() as u64).collect(),
            performance_models: vec![None; values.len()],
            scenarios: vec![ScenarioReport {
                scenario,
                runs,
                failure: None,
            }],
        }
    }

    #[test]
    fn one_scenario_gives_one_markdown_row() {
        let md = render_markdown(&report_with(&[0.8, 0.9]));
        let rows: Vec<&str> = md.lines().filter(|l| l.starts_with('|')).collect();
        assert_eq!(rows.len(), 3);
        assert_eq!(
            rows[0],
            "| Fair Method | Model | AUROC | Sensitivity | Specificity | Race EOD | Train Race EOD |"
        );
        assert!(rows[2].starts_with("| Single | Race-Fair Model | 0.8500 ± 0.0707 |"));
    }

    #[test]
    fn summary_csv_means_match_repetition_rows() {
        let report = report_with(&[0.81, 0.84, 0.9]);
        let summary = render_summary_csv(&report);
        let mut lines = summary.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        let col = header.iter().position(|h| *h == "test_auroc_mean").unwrap();
        let mean: f64 = row[col].parse().unwrap();
        assert!((mean - 0.85).abs() < 1e-9);
        let reps = render_repetitions_csv(&report);
        assert_eq!(reps.lines().count(), 1 + 3 * 2);
    }

    #[test]
    fn aborted_scenario_is_marked() {
        let mut report = report_with(&[0.8]);
        report.scenarios[0].runs.clear();
        report.scenarios[0].failure = Some(ScenarioFailure {
            message: "single:race (repetition 0): numeric error: boom".into(),
            exit_code: 4,
        });
        assert_eq!(report.exit_code(), 4);
        let md = render_markdown(&report);
        assert!(md.contains("| Single | Race-Fair Model | aborted |"));
        assert!(md.contains("Aborted: single:race (repetition 0)"));
        assert!(render_summary_csv(&report).contains(",aborted,0,"));
    }
}
