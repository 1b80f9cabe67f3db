//! Command-line front end.

mod plot;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::cascade::{ClassificationReport, ClassifyOptions, Evaluation, FileOutcome, LabeledRecording, REPORT_SCHEMA};
use crate::config::{FeatureMode, PipelineConfig, CONFIG_ENV};
use crate::error::{Error, Result};
use crate::grid::SignalType;
use crate::signal_io::{load_recording, Recording};
use crate::synth::{generate_corpus, read_manifest, SynthCorpusSpec};
use crate::CascadeModel;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "enf-cascade", version, about = "Identify the power grid a recording was made on from its ENF trace")]
pub struct Cli {
    /// Pipeline configuration file (TOML). Flags and --set override it.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set type_threshold=3.5 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Seed for every random choice (CV folds, calibration, synthesis).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for batch work; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FeatureArg {
    All,
    #[value(name = "table3", alias = "selected")]
    Selected,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TypeArg {
    Audio,
    Power,
}

impl From<TypeArg> for SignalType {
    fn from(t: TypeArg) -> Self {
        match t {
            TypeArg::Audio => SignalType::Audio,
            TypeArg::Power => SignalType::Power,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    Spectrogram,
    Enf,
    Poles,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled synthetic corpus and its manifest.
    Synth {
        /// Corpus spec (TOML); the shipped twelve-grid panel when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        files_per_grid: Option<usize>,
        #[arg(long)]
        duration_s: Option<f64>,
    },
    /// Train a model from a corpus manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        features: Option<FeatureArg>,
    },
    /// Classify recordings; prints a JSON document with one report per input.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Known data type; overrides spectral typing.
        #[arg(long, value_enum)]
        declared_type: Option<TypeArg>,
        /// Skip pole matching and report the SVM argmax.
        #[arg(long)]
        baseline_only: bool,
        /// Include stage timings in the reports.
        #[arg(long)]
        timings: bool,
        /// Also write the JSON document here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy of a model on a labelled manifest, cascade and SVM-only.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        baseline_only: bool,
        /// Write the full evaluation as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Diagnostic SVG plot with a numeric text dump next to it.
    Plot {
        #[arg(long, value_enum)]
        kind: PlotKind,
        #[arg(long)]
        input: PathBuf,
        /// Needed for pole plots.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        declared_type: Option<TypeArg>,
        /// Output SVG path; the dump goes to the same path with a .txt extension.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Outcome of a subcommand that ran to completion.
enum Status {
    Ok,
    Partial,
}

#[derive(Serialize)]
struct BatchEntry {
    input: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<ClassificationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct BatchDocument {
    schema: &'static str,
    results: Vec<BatchEntry>,
}

fn long_help() -> String {
    format!(
        "Configuration keys and defaults (TOML; override with --set key=value):\n\n{}",
        PipelineConfig::default().to_toml_string()
    )
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().after_long_help(long_help()).try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();

    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return EXIT_USAGE;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(Status::Ok) => EXIT_OK,
        Ok(Status::Partial) => EXIT_PARTIAL,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn pipeline_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    for o in &cli.overrides {
        cfg.set(o)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_labelled(manifest: &Path) -> Result<Vec<LabeledRecording>> {
    read_manifest(manifest)?
        .into_par_iter()
        .map(|(path, e)| {
            let rec = load_recording(&path, Some(e.signal_type))?;
            Ok(LabeledRecording::new(rec, e.grid, e.signal_type))
        })
        .collect()
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn dispatch(cli: &Cli) -> Result<Status> {
    match &cli.command {
        Command::Synth {
            spec,
            out,
            files_per_grid,
            duration_s,
        } => {
            let mut spec = match spec {
                Some(p) => SynthCorpusSpec::load(p)?,
                None => SynthCorpusSpec::default_panel(),
            };
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            if let Some(n) = files_per_grid {
                spec.files_per_grid = *n;
            }
            if let Some(d) = duration_s {
                spec.duration_s = *d;
            }
            let manifest = generate_corpus(&spec, out)?;
            println!("{}", manifest.display());
            Ok(Status::Ok)
        }
        Command::Train { manifest, out, features } => {
            let mut cfg = pipeline_config(cli)?;
            if let Some(f) = features {
                cfg.feature_mode = match f {
                    FeatureArg::All => FeatureMode::All,
                    FeatureArg::Selected => FeatureMode::Selected,
                };
            }
            let corpus = load_labelled(manifest)?;
            if corpus.is_empty() {
                return Err(Error::InsufficientData(format!("{} lists no files", manifest.display())));
            }
            let model = CascadeModel::train(&corpus, &cfg)?;
            model.save(out)?;
            for (kind, km) in &model.kinds {
                println!(
                    "{kind}: {} grids, C={} gamma={:.4}, cross-validation accuracy {:.3}",
                    km.svm.labels.len(),
                    km.svm.c,
                    km.svm.gamma,
                    km.svm.cv_accuracy
                );
            }
            println!("model written to {}", out.display());
            Ok(Status::Ok)
        }
        Command::Classify {
            model,
            inputs,
            declared_type,
            baseline_only,
            timings,
            out,
        } => {
            let model = CascadeModel::load(model)?;
            let opts = ClassifyOptions {
                baseline_only: *baseline_only,
                timings: *timings,
            };
            let declared = declared_type.map(SignalType::from);
            let results: Vec<BatchEntry> = inputs
                .par_iter()
                .map(|path| {
                    let outcome = load_recording(path, declared).and_then(|rec| model.classify_with(&rec, opts));
                    match outcome {
                        Ok(r) => BatchEntry {
                            input: path.display().to_string(),
                            report: Some(r),
                            error: None,
                        },
                        Err(e) => BatchEntry {
                            input: path.display().to_string(),
                            report: None,
                            error: Some(e.to_string()),
                        },
                    }
                })
                .collect();
            let failed = results.iter().filter(|r| r.error.is_some()).count();
            for r in &results {
                match (&r.report, &r.error) {
                    (Some(rep), _) => eprintln!("{}", rep.summary()),
                    (_, Some(e)) => eprintln!("{}: error: {e}", r.input),
                    _ => {}
                }
            }
            let doc = BatchDocument {
                schema: REPORT_SCHEMA,
                results,
            };
            let text = serde_json::to_string_pretty(&doc).expect("document serialises") + "\n";
            if let Some(p) = out {
                write_out(p, &text)?;
            }
            let _ = std::io::stdout().write_all(text.as_bytes());
            Ok(if failed > 0 { Status::Partial } else { Status::Ok })
        }
        Command::Evaluate {
            model,
            manifest,
            baseline_only,
            json,
        } => {
            let model = CascadeModel::load(model)?;
            let corpus = load_labelled(manifest)?;
            if corpus.is_empty() {
                return Err(Error::InsufficientData(format!("{} lists no files", manifest.display())));
            }
            let eval = if *baseline_only {
                let opts = ClassifyOptions {
                    baseline_only: true,
                    timings: false,
                };
                let files: Vec<FileOutcome> = corpus
                    .par_iter()
                    .map(|item| {
                        let r = model.classify_with(&item.recording, opts);
                        FileOutcome {
                            source: item.recording.source_path().display().to_string(),
                            grid: item.grid,
                            signal_type: item.signal_type,
                            cascade: r.as_ref().ok().map(|r| r.final_label),
                            baseline: r.as_ref().ok().map(|r| r.svm.argmax),
                            error: r.err().map(|e| e.to_string()),
                        }
                    })
                    .collect();
                Evaluation::from_outcomes(files)
            } else {
                model.evaluate(&corpus)?
            };
            print!("{}", eval.table());
            if let Some(p) = json {
                write_out(p, &(serde_json::to_string_pretty(&eval).expect("evaluation serialises") + "\n"))?;
            }
            Ok(Status::Ok)
        }
        Command::Plot {
            kind,
            input,
            model,
            declared_type,
            out,
        } => {
            let rec = load_recording(input, declared_type.map(SignalType::from))?;
            let model = model.as_ref().map(CascadeModel::load).transpose()?;
            let cfg = match &model {
                Some(m) => m.config.clone(),
                None => pipeline_config(cli)?,
            };
            plot_command(*kind, &rec, model.as_ref(), &cfg, out)?;
            Ok(Status::Ok)
        }
    }
}

fn plot_command(
    kind: PlotKind,
    rec: &Recording,
    model: Option<&CascadeModel>,
    cfg: &PipelineConfig,
    out: &Path,
) -> Result<()> {
    let (svg, dump) = match kind {
        PlotKind::Enf => plot::enf(rec, cfg)?,
        PlotKind::Spectrogram => plot::spectrogram(rec, cfg)?,
        PlotKind::Poles => {
            let model = model.ok_or_else(|| Error::Config("pole plots need --model".into()))?;
            plot::poles(rec, model)?
        }
    };
    write_out(out, &svg)?;
    write_out(&out.with_extension("txt"), &dump)
}
