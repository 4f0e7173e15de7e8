//! Phase 1: fit the performance model on a standardized training split and
//! look at the disparity it inherits from the data.
//!
//!     cargo run --release --example train_baseline

use multifair::optimize::DECISION_THRESHOLD;
use multifair::{
    evaluate_model, generate, preset, stratified_split, train_performance, FairnessSpec, SplitSpec,
    Standardizer, TrainConfig,
};

fn main() -> multifair::Result<()> {
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

    let outcome = train_performance(&train, &TrainConfig::default())?;
    println!(
        "{} epochs, loss {:.4} -> {:.4}",
        outcome.history.len(),
        outcome.history.first().copied().unwrap_or(f64::NAN),
        outcome.best_loss
    );

    let spec = FairnessSpec::with_attributes(["race", "sex"]);
    for (surface, rows) in [("train", &train), ("test", &test)] {
        let m = evaluate_model(&outcome.params, rows, &spec, DECISION_THRESHOLD)?;
        println!(
            "{surface}: AUROC {:.4}  sensitivity {:.4}  specificity {:.4}  EOD race {:.4}  sex {:.4}",
            m.auroc, m.sensitivity, m.specificity, m.eod_by_attribute["race"], m.eod_by_attribute["sex"]
        );
    }

    // the saved model works on raw, unstandardized features
    let raw = scaler.fold_into(&outcome.params)?;
    print!("{}", raw.to_text());
    Ok(())
}
