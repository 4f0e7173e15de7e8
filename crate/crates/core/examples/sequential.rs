//! Phase 2, one attribute at a time. Each later phase carries penalties
//! that keep the loss and the earlier attributes near where they were.
//!
//!     cargo run --release --example sequential [race,sex|sex,race]

use multifair::optimize::DECISION_THRESHOLD;
use multifair::{
    evaluate_model, generate, optimize_sequential, preset, stratified_split, train_performance, FairnessSpec,
    SplitSpec, Standardizer, TrainConfig,
};

fn main() -> multifair::Result<()> {
    let order = std::env::args().nth(1).unwrap_or_else(|| "race,sex".into());
    let attrs: Vec<&str> = order.split(',').collect();

    let data = generate(&preset("sud-like")?)?;
    let (train, test) = stratified_split(
        &data,
        &SplitSpec {
            train_fraction: 0.8,
            seed: 1,
        },
    )?;
    let scaler = Standardizer::fit(&train);
    let (train, test) = (scaler.apply(&train)?, scaler.apply(&test)?);
    let perf = train_performance(
        &train,
        &TrainConfig {
            seed: 100,
            ..TrainConfig::default()
        },
    )?
    .params;

    let spec = FairnessSpec::with_attributes(attrs.iter().copied());
    let result = optimize_sequential(&perf, &train, &spec)?;
    for (a, eod) in &result.recorded_eods {
        println!(
            "{a}: train EOD {eod:.4}, met threshold {}",
            result.found_fair[a.as_str()]
        );
    }
    let accepted = result.trace.steps.iter().filter(|s| s.accepted).count();
    println!("{} steps, {accepted} accepted snapshots", result.trace.len());

    for (label, params) in [("performance", &perf), ("sequential", &result.params)] {
        let m = evaluate_model(params, &test, &spec, DECISION_THRESHOLD)?;
        let eods: Vec<String> = m
            .eod_by_attribute
            .iter()
            .map(|(a, e)| format!("{a} {e:.4}"))
            .collect();
        println!("{label:>12} test: AUROC {:.4}  EOD {}", m.auroc, eods.join("  "));
    }
    Ok(())
}
