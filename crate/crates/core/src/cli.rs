//! Command-line front end. [`run`] parses arguments, dispatches to one
//! pipeline stage and maps failures to exit codes: 0 success, 1 invalid
//! input or flags, 2 runtime failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate_dataset, ImageAttributes};
use crate::crl::{self, evaluate_with_truth, load_model, save_model, TrainConfig};
use crate::error::{Error, Result};
use crate::independence::{consensus, ConsensusConfig, ConsensusReport, Method};
use crate::llm_eval::{load_eval_records, rank_models, RankedModel};
use crate::report::{write_atomic, write_json, Report, ReportHeader};
use crate::synth::{self, default_fig5_spec, hcat, load_batch, save_batch, SynthSpec};
use crate::tabular::{read_table, write_table, Schema, Table, Trait};

pub const THREADS_ENV: &str = "PERSONA_THREADS";

#[derive(Debug, Parser)]
#[command(name = "persona", version, about = "Trait-analysis pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a person table and write the accepted rows.
    Ingest(IngestArgs),
    /// Fill final trait scores (and attributes) by vote aggregation.
    Aggregate(AggregateArgs),
    /// Run the independence-test battery on every (trait, feature) pair.
    Itest(ItestArgs),
    /// Sample the synthetic multi-modality SCM.
    Synth(SynthArgs),
    /// Train the representation learner on a synthetic batch.
    Train(TrainArgs),
    /// Score a trained model against the batch ground truth.
    Eval(EvalArgs),
    /// Rank LLM generators by overall score.
    #[command(name = "eval-llm")]
    EvalLlm(EvalLlmArgs),
    /// Re-render a report written by this tool.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Fig5,
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub output: PathBuf,
    /// JSON schema `{"columns": [[name, kind], ...]}`; inferred when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Where to write the JSON ingest report; stdout when absent.
    #[arg(long)]
    #[serde(skip)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AggregateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub output: PathBuf,
    /// JSON map of record id to per-image attribute votes.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ItestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub output: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Comma-separated subset of csq,gsq,hsic,rcit,kci.
    #[arg(long, default_value = "csq,gsq,hsic,rcit,kci")]
    pub tests: String,
    /// Comma-separated feature columns; every available one when absent.
    #[arg(long)]
    pub features: Option<String>,
    /// JSON ConsensusConfig for the remaining knobs (bins, kernel options).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_enum, conflicts_with = "config")]
    pub preset: Option<Preset>,
    /// JSON SynthSpec.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    #[serde(skip)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Directory written by `synth`.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for the model bundle and training report.
    #[arg(long)]
    #[serde(skip)]
    pub output: PathBuf,
    /// JSON TrainConfig; fields left out take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Directory written by `synth`.
    #[arg(long)]
    pub input: PathBuf,
    /// Directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub output: PathBuf,
    /// Adjacency threshold; chosen on the input batch when absent.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalLlmArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

pub const INGEST: &str = "ingest";
pub const ITEST: &str = "itest";
pub const SYNTH: &str = "synth";
pub const TRAIN: &str = "train";
pub const EVAL: &str = "eval";
pub const EVAL_LLM: &str = "eval-llm";
pub const TRAIN_REPORT: &str = "train_report.json";
pub const SYNTH_REPORT: &str = "synth_report.json";

fn echo<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn report<T: Serialize>(subcommand: &str, seed: Option<u64>, config: serde_json::Value, body: T) -> Report<T> {
    Report {
        header: ReportHeader::new(subcommand, seed, config),
        body,
    }
}

/// Rayon worker cap from `PERSONA_THREADS`; `None` when unset.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::InvalidConfig(format!("{THREADS_ENV}={v} is not a positive integer"))),
        },
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code. Errors go to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let threads = match threads_from_env() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    if let Some(n) = threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(&a),
        Command::Aggregate(a) => aggregate(&a),
        Command::Itest(a) => itest(&a),
        Command::Synth(a) => synth_cmd(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval_cmd(&a),
        Command::EvalLlm(a) => eval_llm(&a),
        Command::Report(a) => report_cmd(&a),
    }
}

fn load_schema(input: &Path, config: Option<&Path>) -> Result<Schema> {
    match config {
        Some(p) => read_json(p),
        None => Schema::infer(input),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestBody {
    pub accepted: usize,
    pub rejected: Vec<String>,
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let schema = load_schema(&a.input, a.config.as_deref())?;
    let load = read_table(&a.input, &schema)?;
    write_table(&a.output, &load.table)?;
    let body = IngestBody {
        accepted: load.table.records.len(),
        rejected: load.rejected.iter().map(|r| r.to_string()).collect(),
    };
    let rep = report(INGEST, None, echo(a), body);
    match &a.report {
        Some(p) => write_json(p, &rep),
        None => {
            println!("{}", serde_json::to_string_pretty(&rep)?);
            Ok(())
        }
    }
}

fn strict_table(path: &Path) -> Result<Table> {
    let schema = Schema::infer(path)?;
    crate::tabular::load_table(path, &schema)
}

fn aggregate(a: &AggregateArgs) -> Result<()> {
    let mut table = strict_table(&a.input)?;
    let images: Option<BTreeMap<String, ImageAttributes>> = match &a.config {
        Some(p) => Some(read_json(p)?),
        None => None,
    };
    table.records = aggregate_dataset(&table.records, images.as_ref())?;
    write_table(&a.output, &table)
}

/// Fixed feature columns with at least one value, then facial attributes,
/// then extra columns.
pub fn available_features(table: &Table) -> Vec<String> {
    let mut out = Vec::new();
    let fixed: [(&str, fn(&crate::tabular::PersonRecord) -> bool); 8] = [
        ("height", |r| r.height.is_some()),
        ("weight", |r| r.weight.is_some()),
        ("birth_year", |r| r.birth_year.is_some()),
        ("birth_month", |r| r.birth_month.is_some()),
        ("birth_day", |r| r.birth_day.is_some()),
        ("latitude", |r| r.latitude.is_some()),
        ("longitude", |r| r.longitude.is_some()),
        ("category", |r| r.category.is_some()),
    ];
    for (name, present) in fixed {
        if table.records.iter().any(present) {
            out.push(name.to_string());
        }
    }
    let mut faces: Vec<&String> = table.records.iter().flat_map(|r| r.facial_attributes.keys()).collect();
    faces.sort();
    faces.dedup();
    out.extend(faces.into_iter().map(|f| format!("face:{f}")));
    let mut extras: Vec<&String> = table.records.iter().flat_map(|r| r.features.keys()).collect();
    extras.sort();
    extras.dedup();
    out.extend(extras.into_iter().cloned());
    out
}

pub fn parse_tests(s: &str) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let m = Method::parse(part).ok_or_else(|| Error::InvalidConfig(format!("unknown test `{part}`")))?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidConfig("no tests selected".into()));
    }
    Ok(out)
}

fn itest(a: &ItestArgs) -> Result<()> {
    let table = strict_table(&a.input)?;
    let mut config: ConsensusConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => ConsensusConfig::default(),
    };
    config.tests = parse_tests(&a.tests)?;
    config.alpha = a.alpha;
    config.kernel.seed = a.seed;
    let features = match &a.features {
        Some(f) => f.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
        None => available_features(&table),
    };
    if features.is_empty() {
        return Err(Error::InvalidConfig("the table has no feature columns".into()));
    }
    let result = consensus(&table, &Trait::ALL, &features, &config)?;
    match a.format {
        Format::Csv => write_atomic(&a.output, result.matrix.to_csv()?.as_bytes()),
        Format::Json => {
            let mut echoed = echo(a);
            echoed["consensus"] = echo(&config);
            write_json(&a.output, &report(ITEST, Some(a.seed), echoed, result))
        }
    }
}

fn synth_cmd(a: &SynthArgs) -> Result<()> {
    let mut spec: SynthSpec = match (&a.preset, &a.config) {
        (Some(Preset::Fig5), _) => default_fig5_spec(),
        (None, Some(p)) => read_json(p)?,
        (None, None) => return Err(Error::InvalidConfig("synth needs --preset or --config".into())),
    };
    spec.seed = a.seed;
    let batch = synth::sample(&spec, a.n)?;
    save_batch(&batch, spec.seed, &a.output)?;
    let body = serde_json::json!({ "rows": batch.n(), "spec": spec });
    write_json(&a.output.join(SYNTH_REPORT), &report(SYNTH, Some(a.seed), echo(a), body))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainBody {
    pub config: TrainConfig,
    pub rows: usize,
    pub parameters: usize,
    pub trace: crl::TrainTrace,
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    cfg.seed = a.seed;
    let data = load_batch(&a.input)?;
    let (model, trace) = crl::train(&data.x, &cfg)?;
    save_model(&model, &a.output)?;
    let body = TrainBody {
        rows: data.manifest.rows,
        parameters: model.params.count(),
        config: cfg,
        trace,
    };
    write_json(&a.output.join(TRAIN_REPORT), &report(TRAIN, Some(a.seed), echo(a), body))
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let data = load_batch(&a.input)?;
    let model = load_model(&a.model)?;
    let mut parts = vec![data.s.clone()];
    parts.extend(data.z.iter().cloned());
    let truth = hcat(&parts);
    let rep = evaluate_with_truth(&model, &data.x, &truth, &data.manifest.adjacency, a.threshold)?;
    write_json(&a.output, &report(EVAL, None, echo(a), rep))
}

fn eval_llm(a: &EvalLlmArgs) -> Result<()> {
    let ranked = rank_models(&load_eval_records(&a.input)?)?;
    match a.format {
        Format::Json => write_json(&a.output, &report(EVAL_LLM, None, echo(a), ranked)),
        Format::Csv => write_atomic(&a.output, ranking_csv(&ranked)?.as_bytes()),
    }
}

fn ranking_csv(ranked: &[RankedModel]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["rank", "model_id", "dataset", "gt", "mr", "ir", "pp", "of", "cc", "fa", "os"])?;
    for r in ranked {
        let rec = &r.record;
        let mut row = vec![r.rank.to_string(), rec.model_id.clone(), rec.dataset.clone().unwrap_or_default()];
        row.extend([rec.gt, rec.mr, rec.ir, rec.pp, rec.of, rec.cc, rec.fa, r.os].iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("<memory>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn report_cmd(a: &ReportArgs) -> Result<()> {
    let value: serde_json::Value = read_json(&a.input)?;
    let header: ReportHeader = serde_json::from_value(value["header"].clone())
        .map_err(|_| Error::InvalidConfig(format!("{} is not a report written by this tool", a.input.display())))?;
    if a.format == Format::Json {
        return write_json(&a.output, &value);
    }
    let body = value["body"].clone();
    let text = match header.subcommand.as_str() {
        ITEST => serde_json::from_value::<ConsensusReport>(body)?.matrix.to_csv()?,
        EVAL_LLM => ranking_csv(&serde_json::from_value::<Vec<RankedModel>>(body)?)?,
        EVAL => {
            let r: crl::EvalReport = serde_json::from_value(body)?;
            let mut s = String::from("latent,r2\n");
            for (i, v) in r.r2.iter().enumerate() {
                s.push_str(&format!("{i},{v}\n"));
            }
            s
        }
        other => {
            return Err(Error::Unsupported(format!("no CSV projection for `{other}` reports")));
        }
    };
    write_atomic(&a.output, text.as_bytes())
}
