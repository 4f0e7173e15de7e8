//! Hard metrics on hand-made predictions: group rates, EOD, AUROC and the
//! auxiliary fairness diagnostics.
//!
//!     cargo run --example audit_metrics

use indexmap::IndexMap;
use multifair::experiment::render_audit;
use multifair::metrics::{group_rates, metrics_report};
use multifair::{auroc, eod, Dataset, ReportFormat};

fn main() -> multifair::Result<()> {
    // group a (z=0): y=[1,1,0], group b (z=1): y=[1,0,0]
    let labels = vec![1, 1, 0, 1, 0, 0];
    let mut sensitive = IndexMap::new();
    sensitive.insert("race".to_string(), vec![0, 0, 0, 1, 1, 1]);
    let data = Dataset::new(vec!["x".into()], vec![0.0; 6], labels, sensitive)?;
    let probs = [0.9, 0.2, 0.1, 0.8, 0.7, 0.3];

    let rates = group_rates(&probs, &data, "race", 0.5)?;
    println!(
        "tpr_a {} fpr_a {} tpr_b {} fpr_b {} -> EOD {}",
        rates.tpr_a,
        rates.fpr_a,
        rates.tpr_b,
        rates.fpr_b,
        eod(&rates)
    );
    println!("AUROC {:.4}", auroc(&probs, data.labels())?);

    let report = metrics_report(&probs, &data, &["race".to_string()], 0.5)?;
    print!("{}", render_audit(&report, ReportFormat::Markdown));
    Ok(())
}
