//! `screener`: generate synthetic score sheets, train and calibrate
//! screeners, evaluate them and screen new subjects.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use screener_core::data::Instrument;
use screener_core::encoding::EncodingMode;
use screener_core::pipeline::{InconclusiveMethod, Variant};
use screener_core::Error;

use config::SelectMethod;

#[derive(Parser, Debug)]
#[command(name = "screener", version, about = "Build and run short-form behavioural screeners")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed, replacing every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset with planted signal.
    Generate(GenerateArgs),
    /// Check a score-sheet CSV against an encoding spec.
    Validate(ValidateArgs),
    /// Select features.
    Select(SelectArgs),
    /// Train a screener variant.
    Train(TrainArgs),
    /// Re-tune inconclusive bands from a training run's out-of-fold scores.
    Calibrate(CalibrateArgs),
    /// ROC, AUC and a threshold tuned to a target sensitivity.
    Evaluate(EvaluateArgs),
    /// Cross-validated AUC at growing training-set fractions.
    Progressive(ProgressiveArgs),
    /// Screen subjects with a trained bundle or combined screener.
    Screen(ScreenArgs),
    /// Train questionnaire and video screeners and fuse their scores.
    Combine(CombineArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct DataArgs {
    /// Score-sheet CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Encoding spec JSON.
    #[arg(long)]
    pub encoding: PathBuf,
    #[arg(long, default_value = "adir_like", value_parser = parse_instrument)]
    #[serde(serialize_with = "ser_instrument")]
    pub instrument: Instrument,
}

#[derive(Args, Debug, Serialize, Default)]
pub struct ForestArgs {
    #[arg(long)]
    pub n_trees: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub min_samples_leaf: Option<f64>,
}

#[derive(Args, Debug, Serialize, Default)]
pub struct CvArgs {
    /// Bootstrapped cross-validation rounds.
    #[arg(long)]
    pub cv_rounds: Option<usize>,
    #[arg(long)]
    pub cv_folds: Option<usize>,
}

#[derive(Args, Debug, Serialize, Default)]
pub struct SelectionArgs {
    /// Bootstrap iterations of robust selection.
    #[arg(long)]
    pub n_bootstrap: Option<usize>,
    #[arg(long)]
    pub final_k: Option<usize>,
    #[arg(long)]
    pub candidate_pool: Option<usize>,
    #[arg(long)]
    pub per_iteration_top_k: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct GenerateArgs {
    /// Run directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_instrument)]
    #[serde(serialize_with = "ser_opt_instrument")]
    pub instrument: Option<Instrument>,
    #[arg(long)]
    pub n_questions: Option<usize>,
    #[arg(long)]
    pub n_informative: Option<usize>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub positive_fraction: Option<f64>,
    #[arg(long)]
    pub age_signal_shift: Option<f64>,
    #[arg(long)]
    pub noise_rate: Option<f64>,
    /// Also write companion video score sheets.
    #[arg(long)]
    pub with_video: bool,
    #[arg(long)]
    pub video_questions: Option<usize>,
    #[arg(long)]
    pub video_informative: Option<usize>,
    #[arg(long)]
    pub holdout_fraction: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Run directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Run directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub method: Option<SelectMethod>,
    /// Encoding to select over; the spec's own modes when omitted.
    #[arg(long, value_parser = parse_mode)]
    #[serde(serialize_with = "ser_opt_mode")]
    pub mode: Option<EncodingMode>,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[command(flatten)]
    pub selection: SelectionArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Run directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_variant)]
    #[serde(serialize_with = "ser_opt_variant")]
    pub variant: Option<Variant>,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[command(flatten)]
    pub selection: SelectionArgs,
    #[command(flatten)]
    pub cv: CvArgs,
    #[arg(long)]
    pub max_inconclusive_rate: Option<f64>,
    #[arg(long, value_parser = parse_method)]
    #[serde(serialize_with = "ser_opt_method")]
    pub inconclusive_method: Option<InconclusiveMethod>,
    /// Tune binary thresholds to this out-of-fold sensitivity.
    #[arg(long)]
    pub target_sensitivity: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// `oof.json` from the training run of the bundle.
    #[arg(long)]
    pub oof: PathBuf,
    /// Run directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long)]
    pub max_inconclusive_rate: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    /// Bundle to score `--data` with.
    #[arg(long, requires = "data")]
    pub bundle: Option<PathBuf>,
    #[arg(long, requires = "encoding")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub encoding: Option<PathBuf>,
    #[arg(long, default_value = "adir_like", value_parser = parse_instrument)]
    #[serde(serialize_with = "ser_instrument")]
    pub instrument: Instrument,
    /// Out-of-fold scores of a training run, instead of a bundle and data.
    #[arg(long, conflicts_with_all = ["bundle", "data"])]
    pub oof: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long)]
    pub target_sensitivity: Option<f64>,
    /// Row label in the summary table.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Args, Debug, Serialize)]
pub struct ProgressiveArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Run directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Comma-separated training fractions.
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_variant)]
    #[serde(serialize_with = "ser_opt_variant")]
    pub variant: Option<Variant>,
    /// Features picked inside each training fold.
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[command(flatten)]
    pub cv: CvArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct ScreenArgs {
    #[arg(long, required_unless_present = "combined", conflicts_with = "combined")]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub combined: Option<PathBuf>,
    /// JSON (one request or a list) or CSV of responses.
    #[arg(long)]
    pub responses: PathBuf,
    /// Run directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct CombineArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Video score-sheet CSV; repeat once per video module.
    #[arg(long, required = true)]
    pub video_data: Vec<PathBuf>,
    #[arg(long, required = true)]
    pub video_encoding: Vec<PathBuf>,
    #[arg(long, value_parser = parse_instrument)]
    #[serde(serialize_with = "ser_instruments")]
    pub video_instrument: Vec<Instrument>,
    /// Run directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_variant)]
    #[serde(serialize_with = "ser_opt_variant")]
    pub variant: Option<Variant>,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[command(flatten)]
    pub selection: SelectionArgs,
    #[command(flatten)]
    pub cv: CvArgs,
    /// Cap of the combined band.
    #[arg(long)]
    pub max_inconclusive_rate: Option<f64>,
}

fn parse_instrument(s: &str) -> Result<Instrument, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<EncodingMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_method(s: &str) -> Result<InconclusiveMethod, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown inconclusive method `{s}`"))
}

fn ser_instrument<S: serde::Serializer>(v: &Instrument, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(v.as_str())
}

fn ser_opt_instrument<S: serde::Serializer>(v: &Option<Instrument>, s: S) -> Result<S::Ok, S::Error> {
    v.map(|i| i.as_str()).serialize(s)
}

fn ser_instruments<S: serde::Serializer>(v: &[Instrument], s: S) -> Result<S::Ok, S::Error> {
    v.iter().map(|i| i.as_str()).collect::<Vec<_>>().serialize(s)
}

fn ser_opt_variant<S: serde::Serializer>(v: &Option<Variant>, s: S) -> Result<S::Ok, S::Error> {
    v.map(|x| x.as_str()).serialize(s)
}

fn ser_opt_mode<S: serde::Serializer>(v: &Option<EncodingMode>, s: S) -> Result<S::Ok, S::Error> {
    v.map(|x| x.as_str()).serialize(s)
}

fn ser_opt_method<S: serde::Serializer>(v: &Option<InconclusiveMethod>, s: S) -> Result<S::Ok, S::Error> {
    v.serialize(s)
}

/// Process exit code for each error kind; 0 is success, 1 is unused.
pub fn exit_code(kind: &str) -> u8 {
    match kind {
        "usage" => 2,
        "io" => 3,
        "json" => 4,
        "csv" => 5,
        "schema" => 6,
        "validation" => 7,
        "parameter" => 8,
        "encoding" => 9,
        "training" => 10,
        "contract" => 11,
        "stratification" => 12,
        "fold" => 13,
        "weighting" => 14,
        "evaluation" => 15,
        "selection" => 16,
        "tuning" => 17,
        "undefined_auc" => 18,
        "missing_answers" => 19,
        _ => 1,
    }
}

fn report(kind: &str, message: String, details: serde_json::Value) -> ExitCode {
    let code = exit_code(kind);
    let body = json!({
        "error": {
            "kind": kind,
            "exit_code": code,
            "message": message,
            "details": details,
        }
    });
    eprintln!("{body}");
    ExitCode::from(code)
}

fn report_error(e: &Error) -> ExitCode {
    let details = match e {
        Error::Validation(r) => json!({ "issues": r.issues }),
        Error::MissingAnswers(q) => json!({ "questions": q }),
        _ => serde_json::Value::Null,
    };
    report(e.kind(), e.to_string(), details)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report("usage", e.to_string().trim_end().to_string(), serde_json::Value::Null),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if n == 0 {
            return report_error(&Error::Parameter("--threads must be at least 1".into()));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return report("parameter", e.to_string(), serde_json::Value::Null);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_error(&e),
    }
}
