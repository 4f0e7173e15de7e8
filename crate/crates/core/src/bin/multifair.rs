use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use multifair::dataset::write_csv;
use multifair::experiment::{
    emit_artifacts, emit_report, render_audit, render_markdown, run_experiment, ExperimentConfig,
    ReportFormat,
};
use multifair::metrics::metrics_report;
use multifair::model::predict_dataset;
use multifair::optimize::DECISION_THRESHOLD;
use multifair::{generate, load_csv, preset, FairError, ModelParams};

#[derive(Parser)]
#[command(
    name = "multifair",
    version,
    about = "Multi-attribute Equalized Odds fine-tuning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Directory for reports and generated files.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Base training seed for `run`, generator seed for `synth`.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a key=value config file.
    Run { config: PathBuf },
    /// Write a synthetic preset dataset as CSV.
    Synth {
        preset: String,
        out: PathBuf,
        #[arg(long, default_value = "label")]
        label: String,
    },
    /// Evaluate a saved model on a CSV dataset.
    Audit {
        model: PathBuf,
        data: PathBuf,
        #[arg(long, default_value = "label")]
        label: String,
        #[arg(long, value_delimiter = ',', default_value = "race,sex")]
        attributes: Vec<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Markdown,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Markdown => ReportFormat::Markdown,
        }
    }
}

fn in_dir(dir: Option<&Path>, path: PathBuf) -> PathBuf {
    match dir {
        Some(d) if path.is_relative() => d.join(path),
        _ => path,
    }
}

fn run(cli: Cli) -> Result<i32, FairError> {
    let dir = cli.output_dir.as_deref();
    match cli.command {
        Command::Run { config } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(d) = dir {
                cfg.output.dir = d.to_path_buf();
            }
            if let Some(f) = cli.format {
                cfg.output.format = f.into();
            }
            if let Some(s) = cli.seed {
                cfg.train.seed = s;
            }
            let report = run_experiment(&cfg)?;
            let mut written = emit_report(&report, &cfg.output.dir, cfg.output.format)?;
            written.extend(emit_artifacts(&report, &cfg.output.dir, &cfg.output)?);
            print!("{}", render_markdown(&report));
            for p in written {
                eprintln!("wrote {}", p.display());
            }
            Ok(report.exit_code())
        }
        Command::Synth {
            preset: name,
            out,
            label,
        } => {
            let mut cfg = preset(&name)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let data = generate(&cfg)?;
            let out = in_dir(dir, out);
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| FairError::io(parent, e))?;
            }
            write_csv(&data, &out, &label)?;
            eprintln!("wrote {} rows to {}", data.n_rows(), out.display());
            Ok(0)
        }
        Command::Audit {
            model,
            data,
            label,
            attributes,
        } => {
            let params = ModelParams::load(&model)?;
            let data = load_csv(&data, &label, &attributes)?;
            let (_, probs) = predict_dataset(&params, &data)?;
            let report = metrics_report(&probs, &data, &attributes, DECISION_THRESHOLD)?;
            let format: ReportFormat = cli.format.map(Into::into).unwrap_or_default();
            let text = render_audit(&report, format);
            print!("{text}");
            if let Some(d) = dir {
                std::fs::create_dir_all(d).map_err(|e| FairError::io(d, e))?;
                let name = match format {
                    ReportFormat::Markdown => "audit.md",
                    ReportFormat::Csv => "audit.csv",
                };
                let path = d.join(name);
                std::fs::write(&path, text).map_err(|e| FairError::io(&path, e))?;
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
