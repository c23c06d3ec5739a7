//! Batch command-line front end.
//!
//! Every subcommand reads its inputs, writes its outputs atomically and maps
//! errors onto exit statuses 2 (validation) and 3 (numeric failure), with a
//! JSON error document on stderr.

mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{MetricToggles, RunConfig, KEYS};

use crate::dataio::{generate_synthetic, load_corpus, save_corpus};
use crate::error::{Error, Result};
use crate::hmm::{load_hmm, save_hmm};
use crate::kv::{fmt_f64, write_atomic, KvDocument};
use crate::mogp::{load_model, save_model, MoGPModel};
use crate::pipeline::{
    band_table, coregionalization_table, evaluate_predictions, fit_scope, observation_table,
    predict_subject, predictions_from_document, predictions_to_document, prepared_from_document,
    prepared_to_document, preprocess_corpus, segment_corpus, FitScope, PreparedSubject,
    SubjectPrediction,
};
use crate::signal::{channel_labels, unit_grid};

pub const FIT_INDEX_SCHEMA: &str = "fit-index-v1";
pub const ERROR_SCHEMA: &str = "error-v1";
pub const INDEX_FILE: &str = "index.kv";

#[derive(Debug, Parser)]
#[command(name = "gaitgp", version, about = "MoGP and HMM gait phase analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Input file.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Flat `key = value` run configuration.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Seed; overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Config override `key=value`; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Progress on stderr.
    #[arg(long, short)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic corpus CSV.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Impute, filter, cycle-normalize and z-score a corpus CSV.
    Preprocess {
        #[command(flatten)]
        common: Common,
    },
    /// Fit MoGP models into an output directory.
    Fit {
        #[command(flatten)]
        common: Common,
        /// subject, pooled or loso; overrides fit.scope.
        #[arg(long)]
        scope: Option<String>,
        /// Overrides fit.iterations.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Posterior predictions for every prepared subject.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Directory written by `fit`.
        #[arg(long)]
        models: PathBuf,
    },
    /// Train or load the HMM, decode every subject and report segments.
    Segment {
        #[command(flatten)]
        common: Common,
        /// Predictions from `predict`; without it the averaged cycles are decoded.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Use this `hmm-v1` model instead of training.
        #[arg(long)]
        hmm: Option<PathBuf>,
        /// Directory for the trained `hmm-v1` models.
        #[arg(long)]
        save_hmm: Option<PathBuf>,
    },
    /// MAE, R² and aDTW per split and in aggregate.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Band, observation and coregionalization tables for plotting.
    ExportPlots {
        #[command(flatten)]
        common: Common,
        /// Directory written by `fit`.
        #[arg(long)]
        models: PathBuf,
    },
    /// Print the effective configuration.
    Config {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth { common }
            | Command::Preprocess { common }
            | Command::Fit { common, .. }
            | Command::Predict { common, .. }
            | Command::Segment { common, .. }
            | Command::Evaluate { common, .. }
            | Command::ExportPlots { common, .. }
            | Command::Config { common } => common,
        }
    }
}

/// Parses arguments, runs the subcommand and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_document(&e));
            e.exit_code()
        }
    }
}

pub fn error_document(e: &Error) -> String {
    serde_json::json!({
        "schema": ERROR_SCHEMA,
        "kind": e.kind(),
        "exit_status": e.exit_code(),
        "message": e.to_string(),
    })
    .to_string()
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut overrides = common.set.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    RunConfig::load(common.config.as_deref(), &overrides)
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::InvalidInput(format!("missing required --{flag}")))
}

struct Log(bool);

impl Log {
    fn say(&self, msg: impl AsRef<str>) {
        if self.0 {
            eprintln!("{}", msg.as_ref());
        }
    }
}

pub fn execute(command: &Command) -> Result<()> {
    let common = command.common();
    let mut cfg = load_config(common)?;
    let log = Log(common.verbose);
    match command {
        Command::Synth { .. } => {
            let out = required(&common.output, "output")?;
            let corpus = generate_synthetic(&cfg.synth)?;
            save_corpus(&corpus, out)?;
            log.say(format!(
                "wrote {} subjects to {}",
                corpus.len(),
                out.display()
            ));
        }
        Command::Preprocess { .. } => {
            let input = required(&common.input, "input")?;
            let out = required(&common.output, "output")?;
            let corpus = load_corpus(input)?;
            let prepared = preprocess_corpus(&corpus, &cfg.preprocess)?;
            prepared_to_document(&prepared).write(out)?;
            log.say(format!("prepared {} subjects", prepared.len()));
        }
        Command::Fit {
            scope, iterations, ..
        } => {
            if let Some(s) = scope {
                cfg.scope = FitScope::parse(s)?;
            }
            if let Some(n) = iterations {
                cfg.optimizer.iterations = *n;
            }
            cmd_fit(
                &cfg,
                required(&common.input, "input")?,
                required(&common.output, "output")?,
                &log,
            )?;
        }
        Command::Predict { models, .. } => {
            let subjects = load_prepared(required(&common.input, "input")?)?;
            let (scope, predictions) = predict_all(&subjects, models, &log)?;
            predictions_to_document(scope.name(), &predictions)
                .write(required(&common.output, "output")?)?;
        }
        Command::Segment {
            predictions,
            hmm,
            save_hmm: save_dir,
            ..
        } => {
            let subjects = load_prepared(required(&common.input, "input")?)?;
            let out = required(&common.output, "output")?;
            let preds = match predictions {
                Some(p) => predictions_from_document(&KvDocument::read(p)?)?.1,
                None => Vec::new(),
            };
            let fixed = hmm.as_deref().map(load_hmm).transpose()?;
            let report = segment_corpus(&subjects, &preds, fixed.as_ref(), &cfg.segment)?;
            if let Some(dir) = save_dir {
                for m in &report.models {
                    save_hmm(&m.model, &dir.join(format!("{}.hmm", m.name)))?;
                }
            }
            write_atomic(out, report.to_json()?.as_bytes())?;
            let flagged = report
                .subjects
                .iter()
                .filter(|s| !s.anomalous_segments.is_empty())
                .count();
            log.say(format!(
                "{flagged} of {} subjects have anomalous segments",
                report.subjects.len()
            ));
        }
        Command::Evaluate { predictions, .. } => {
            let subjects = load_prepared(required(&common.input, "input")?)?;
            let (scope, preds) = predictions_from_document(&KvDocument::read(predictions)?)?;
            let report = evaluate_predictions(&scope, &subjects, &preds)?;
            let full = report.to_document();
            let mut doc = KvDocument::new();
            for (k, v) in full.entries().filter(|(k, _)| cfg.metrics.keeps(k)) {
                doc.set(k, v);
            }
            doc.write(required(&common.output, "output")?)?;
            let labels = channel_labels();
            let labels: Vec<&str> = labels.iter().map(String::as_str).collect();
            log.say(report.to_table(&labels));
        }
        Command::ExportPlots { models, .. } => {
            cmd_export(&cfg, models, required(&common.output, "output")?, &log)?;
        }
        Command::Config { .. } => {
            let text = cfg.to_document().render();
            match &common.output {
                Some(out) => write_atomic(out, text.as_bytes())?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn load_prepared(path: &Path) -> Result<Vec<PreparedSubject>> {
    prepared_from_document(&KvDocument::read(path)?)
}

/// `iteration,lml` rows: the LML before each update, then the final one.
pub fn fit_log(trace: &[f64]) -> String {
    let mut out = String::from("iteration,lml\n");
    for (i, v) in trace.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", fmt_f64(*v)));
    }
    out
}

fn cmd_fit(cfg: &RunConfig, input: &Path, out_dir: &Path, log: &Log) -> Result<()> {
    let subjects = load_prepared(input)?;
    let fitted = fit_scope(
        &subjects,
        cfg.scope,
        cfg.points_per_output,
        &cfg.optimizer,
        |name| log.say(format!("fitting {name}")),
    )?;
    let mut index = KvDocument::with_schema(FIT_INDEX_SCHEMA);
    index.set("scope", cfg.scope.name());
    index.set(
        "models",
        fitted
            .iter()
            .map(|m| m.name.as_str())
            .collect::<Vec<_>>()
            .join(" "),
    );
    for m in &fitted {
        let o = &m.outcome;
        save_model(&o.model, &out_dir.join(format!("{}.mogp", m.name)))?;
        write_atomic(
            &out_dir.join(format!("{}.fitlog.csv", m.name)),
            fit_log(&o.trace).as_bytes(),
        )?;
        let p = format!("model.{}", m.name);
        index.set(&format!("{p}.serves"), m.serves.join(" "));
        index.set(&format!("{p}.iterations"), o.iterations_run.to_string());
        index.set(&format!("{p}.converged"), o.converged.to_string());
        index.set_f64(&format!("{p}.initial_lml"), o.initial_lml());
        index.set_f64(&format!("{p}.final_lml"), o.final_lml());
        log.say(format!(
            "{}: {} iterations, LML {:.4} -> {:.4}",
            m.name,
            o.iterations_run,
            o.initial_lml(),
            o.final_lml()
        ));
    }
    for (k, v) in cfg.to_document().entries() {
        index.set(&format!("config.{k}"), v);
    }
    index.write(&out_dir.join(INDEX_FILE))
}

/// Scope and model names recorded by `fit`.
fn read_index(dir: &Path) -> Result<(FitScope, KvDocument, Vec<String>)> {
    let index = KvDocument::read(&dir.join(INDEX_FILE))?;
    index.require_schema(FIT_INDEX_SCHEMA)?;
    let scope = FitScope::parse(index.require("scope")?)?;
    let names = index
        .require("models")?
        .split_whitespace()
        .map(String::from)
        .collect();
    Ok((scope, index, names))
}

fn load_named(dir: &Path, name: &str) -> Result<MoGPModel> {
    load_model(&dir.join(format!("{name}.mogp")))
}

fn predict_all(
    subjects: &[PreparedSubject],
    dir: &Path,
    log: &Log,
) -> Result<(FitScope, Vec<SubjectPrediction>)> {
    let (scope, index, names) = read_index(dir)?;
    let mut order: Vec<&PreparedSubject> = subjects.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let mut out = Vec::with_capacity(order.len());
    let mut cache: Option<(String, MoGPModel)> = None;
    for s in order {
        let name = scope.model_name(&s.id);
        if !names.contains(&name) {
            return Err(Error::invalid(format!(
                "no fitted model serves subject {}",
                s.id
            )));
        }
        if scope != FitScope::Pooled {
            let serves = index.require(&format!("model.{name}.serves"))?;
            if !serves.split_whitespace().any(|id| id == s.id) {
                return Err(Error::invalid(format!(
                    "model {name} does not serve subject {}",
                    s.id
                )));
            }
        }
        if cache.as_ref().map(|(n, _)| n != &name).unwrap_or(true) {
            cache = Some((name.clone(), load_named(dir, &name)?));
        }
        let model = &cache.as_ref().expect("just loaded").1;
        log.say(format!("predicting {} with {name}", s.id));
        out.push(predict_subject(model, &name, s)?);
    }
    Ok((scope, out))
}

fn cmd_export(cfg: &RunConfig, dir: &Path, out_dir: &Path, log: &Log) -> Result<()> {
    let (_, _, names) = read_index(dir)?;
    let labels = channel_labels();
    let grid = unit_grid(cfg.preprocess.grid_points);
    for name in &names {
        let model = load_named(dir, name)?;
        if model.n_outputs() != labels.len() {
            return Err(Error::invalid(format!(
                "model {name} has {} outputs",
                model.n_outputs()
            )));
        }
        let posterior = model.predict(&grid)?;
        let (cov, corr) = coregionalization_table(&model, &labels)?;
        write_atomic(
            &out_dir.join(format!("{name}.bands.csv")),
            band_table(&posterior, &labels).as_bytes(),
        )?;
        write_atomic(
            &out_dir.join(format!("{name}.observations.csv")),
            observation_table(&model, &labels).as_bytes(),
        )?;
        write_atomic(
            &out_dir.join(format!("{name}.coreg_covariance.csv")),
            cov.as_bytes(),
        )?;
        write_atomic(
            &out_dir.join(format!("{name}.coreg_correlation.csv")),
            corr.as_bytes(),
        )?;
        log.say(format!("exported {name}"));
    }
    Ok(())
}
