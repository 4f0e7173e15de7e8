//! Logistic-regression classifiers trained for predictive performance first
//! and then fine-tuned for Equalized Odds across several binary sensitive
//! attributes.
//!
//! The pipeline has two phases:
//!
//! 1. [`model::train_performance`] fits a logistic model on binary
//!    cross-entropy with minibatch Adam.
//! 2. [`optimize::optimize_sequential`] or [`optimize::optimize_simultaneous`]
//!    starts from that model and minimizes sigmoid-relaxed TPR/FPR gaps
//!    ([`fairloss`]) under band penalties that keep the loss, and any
//!    attribute already handled, close to where they were.
//!
//! [`synth`] produces biased tabular data for experiments, [`metrics`]
//! holds the hard evaluation metrics and [`experiment`] runs multi-seed
//! scenario grids and writes report tables.

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod fairloss;
pub mod metrics;
pub mod model;
pub mod optimize;
pub mod synth;

pub use dataset::{group_view, load_csv, stratified_split, Dataset, SplitSpec, Standardizer};
pub use error::{FairError, Result};
pub use experiment::{run_experiment, ExperimentConfig, ReportFormat, RunReport, Scenario, Surface};
pub use fairloss::{CompositeObjective, PenaltySpec, SoftRateConfig};
pub use metrics::{auroc, eod, GroupRates, MetricsReport};
pub use model::{train_performance, ModelParams, TrainConfig};
pub use optimize::{
    evaluate_model, optimize_sequential, optimize_simultaneous, FairModelResult, FairnessSpec, Strategy,
};
pub use synth::{generate, preset, SynthConfig};
