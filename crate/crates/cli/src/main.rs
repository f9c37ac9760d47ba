use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use propclass_core::ingest::{generate_synthetic, SynthConfig};
use propclass_core::pipeline::{
    self, ErrorKind, ModelKind, PipelineConfig, PipelineError, PipelineSettings, ReportFormat, Stage,
};
use propclass_core::eval::compare;

#[derive(Parser)]
#[command(name = "propclass", version, about = "Classify house listings into price classes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole workflow from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: RunOverrides,
    },
    /// Generate a synthetic listings CSV with a planted class function.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and clean a listings CSV.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a listings CSV and fit one classifier on the training part.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        train_ratio: Option<f64>,
        /// Where to write the model file.
        #[arg(long)]
        out: PathBuf,
        /// Where to write the held-out test records.
        #[arg(long)]
        test_out: Option<PathBuf>,
        /// Optional config file for bins and model parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        params: ModelFlags,
    },
    /// Classify a CSV of instances with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Write a predictions CSV (truth column filled when prices are given).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a predictions CSV.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        /// Model that produced the predictions, for the report header.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "text")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two structured evaluation reports.
    Compare {
        first: PathBuf,
        second: PathBuf,
        #[arg(long, default_value = "text")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Default)]
struct RunOverrides {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_ratio: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    format: Option<String>,
    #[command(flatten)]
    params: ModelFlags,
}

#[derive(Args, Default)]
struct ModelFlags {
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    min_leaf: Option<usize>,
    #[arg(long)]
    min_gain: Option<f64>,
    #[arg(long)]
    criterion: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    no_location: bool,
}

impl ModelFlags {
    fn settings(&self) -> PipelineSettings {
        PipelineSettings {
            tree_max_depth: self.max_depth,
            tree_min_leaf: self.min_leaf,
            tree_min_gain: self.min_gain,
            tree_criterion: self.criterion.clone(),
            knn_k: self.k,
            knn_use_location: self.no_location.then_some(false),
            ..Default::default()
        }
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), PipelineError> {
    match out {
        Some(path) => pipeline::write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Run { config, overrides } => {
            let file = PipelineSettings::from_file(&config)?;
            let flags = PipelineSettings {
                input: overrides.input,
                seed: overrides.seed,
                train_ratio: overrides.train_ratio,
                out_dir: overrides.out_dir,
                format: overrides.format,
                ..overrides.params.settings()
            };
            let cfg = PipelineConfig::from_settings(&file.overlay(flags))?;
            let outcome = pipeline::run_pipeline(&cfg)?;
            println!(
                "cleaned: {} (incomplete rows {})",
                outcome.clean_stats, outcome.incomplete_rows
            );
            println!(
                "split: {} train / {} test",
                outcome.split.train.len(),
                outcome.split.test.len()
            );
            println!(
                "accuracy: tree {}  knn {}",
                propclass_core::eval::percent(outcome.tree_report.overall_accuracy),
                propclass_core::eval::percent(outcome.knn_report.overall_accuracy)
            );
            for path in &outcome.artifacts {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Synth { n, noise, seed, out } => {
            let cfg = SynthConfig::new(n, noise, seed);
            cfg.validate().map_err(PipelineError::usage)?;
            let data = generate_synthetic(&cfg)
                .map_err(|e| PipelineError::new(Stage::Ingest, ErrorKind::Internal, e))?;
            pipeline::write_listings_file(&out, &data.records)?;
            println!("wrote {} records to {}", data.records.len(), out.display());
            Ok(())
        }
        Command::Ingest { input, out } => {
            let loaded = pipeline::load_listings_file(&input)?;
            pipeline::write_listings_file(&out, &loaded.dataset.records)?;
            println!(
                "{} records kept ({}, incomplete rows {})",
                loaded.dataset.records.len(),
                loaded.stats,
                loaded.incomplete_rows
            );
            Ok(())
        }
        Command::Train {
            input,
            model,
            seed,
            train_ratio,
            out,
            test_out,
            config,
            params,
        } => {
            let kind: ModelKind = model.parse()?;
            let base = match &config {
                Some(path) => PipelineSettings::from_file(path)?,
                None => PipelineSettings::default(),
            };
            let settings = base.overlay(PipelineSettings {
                seed: Some(seed),
                train_ratio,
                ..params.settings()
            });
            let (file, test_records) = pipeline::train_on_file(&input, kind, &settings)?;
            pipeline::write_text(&out, &file.to_json())?;
            println!(
                "trained {} on {} records; wrote {}",
                file.info().name,
                file.metadata.train_size,
                out.display()
            );
            if let Some(path) = test_out {
                pipeline::write_listings_file(&path, &test_records)?;
                println!("wrote {} test records to {}", test_records.len(), path.display());
            }
            Ok(())
        }
        Command::Predict { model, input, out } => {
            let file = pipeline::load_model_file(&model)?;
            let queries = pipeline::read_queries(&input, &file.metadata.bins)?;
            let rows = pipeline::predict_queries(&file, &queries)?;
            if let Some(path) = out {
                pipeline::write_predictions(&path, &rows)?;
            }
            let mut stdout = std::io::stdout().lock();
            for (i, row) in rows.iter().enumerate() {
                // a closed pipe (e.g. `| head`) is not an error
                if writeln!(stdout, "{}: {}", i + 1, row.explanation).is_err() {
                    break;
                }
            }
            Ok(())
        }
        Command::Evaluate {
            predictions,
            model,
            format,
            out,
        } => {
            let format: ReportFormat = format.parse()?;
            let model = model.as_deref().map(pipeline::load_model_file).transpose()?;
            let report = pipeline::evaluate_predictions_file(&predictions, model.as_ref())?;
            emit(&pipeline::render_eval(&report, format), out.as_deref())
        }
        Command::Compare {
            first,
            second,
            format,
            out,
        } => {
            let format: ReportFormat = format.parse()?;
            let a = pipeline::load_report(&first)?;
            let b = pipeline::load_report(&second)?;
            let report = compare(&a, &b)
                .map_err(|e| PipelineError::new(Stage::Compare, ErrorKind::Data, e))?;
            emit(&pipeline::render_comparison(&report, format), out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
