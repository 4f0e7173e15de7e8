//! The full scenario grid over several seeds, rendered as the markdown
//! results table and written to a directory.
//!
//!     cargo run --release --example experiment_report [output-dir]

use multifair::experiment::{emit_report, render_markdown};
use multifair::{run_experiment, ExperimentConfig, ReportFormat};

fn main() -> multifair::Result<()> {
    let mut cfg = ExperimentConfig::for_preset("sud-like")?;
    cfg.split.seed = 1;
    cfg.train.seed = 100;
    cfg.repetitions = 3;

    let report = run_experiment(&cfg)?;
    print!("{}", render_markdown(&report));
    if let Some(dir) = std::env::args().nth(1) {
        for path in emit_report(&report, &dir, ReportFormat::Csv)? {
            println!("wrote {}", path.display());
        }
    }
    std::process::exit(report.exit_code());
}
