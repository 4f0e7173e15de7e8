//! Phase 2 with every attribute at once, and the per-step trace written as
//! CSV for inspection.
//!
//!     cargo run --release --example simultaneous [trace.csv]

use multifair::optimize::DECISION_THRESHOLD;
use multifair::{
    evaluate_model, generate, optimize_simultaneous, preset, stratified_split, train_performance,
    FairnessSpec, SplitSpec, Standardizer, TrainConfig,
};

fn main() -> multifair::Result<()> {
    let data = generate(&preset("sepsis-like")?)?;
    let (train, test) = stratified_split(&data, &SplitSpec::default())?;
    let scaler = Standardizer::fit(&train);
    let (train, test) = (scaler.apply(&train)?, scaler.apply(&test)?);
    let perf = train_performance(&train, &TrainConfig::default())?.params;

    let mut spec = FairnessSpec::with_attributes(["race", "sex"]);
    spec.thresholds.insert("sex".into(), 0.04);
    let result = optimize_simultaneous(&perf, &train, &spec)?;
    println!("found fair: {:?}", result.found_fair);
    println!("recorded train EODs: {:?}", result.recorded_eods);

    let before = evaluate_model(&perf, &test, &spec, DECISION_THRESHOLD)?;
    let after = evaluate_model(&result.params, &test, &spec, DECISION_THRESHOLD)?;
    println!("test AUROC {:.4} -> {:.4}", before.auroc, after.auroc);
    for a in &spec.attributes {
        println!(
            "test EOD {a}: {:.4} -> {:.4}",
            before.eod_by_attribute[a.as_str()],
            after.eod_by_attribute[a.as_str()]
        );
    }

    if let Some(path) = std::env::args().nth(1) {
        result.trace.save_csv(&path)?;
        println!("trace written to {path}");
    }
    Ok(())
}
