// SPDX-License-Identifier: MIT OR Apache-2.0

//! `circuitscope` command-line front end.
//!
//! Every subcommand reads a JSON run configuration (`--config`), applies
//! flag overrides, and writes its outputs plus `run_record.json` into the
//! output directory. The record is written on failure too. Exit codes:
//! 0 on success (including flagged runs), 1 for runtime failures, 2 for
//! configuration and usage errors. Errors are also printed to stderr as a
//! single JSON object.

mod commands;
mod config;
mod error;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use circuitscope::report::{RunRecord, RunStatus};
use circuitscope::Scalar;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use config::{Precision, RunConfig};
use error::{CliError, CliResult, EXIT_RUNTIME};

/// Environment fallback for `--threads`.
const THREADS_ENV: &str = "CIRCUITSCOPE_THREADS";
const RECORD_FILE: &str = "run_record.json";

#[derive(Parser, Debug)]
#[command(
    name = "circuitscope",
    version,
    about = "Attention-head circuit localization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Single-head ablation scores and heatmap.
    Score(Overrides),
    /// Greedy cumulative ablation curve and heads-to-threshold.
    Curve(Overrides),
    /// Whole-layer ablation profile.
    Layers(Overrides),
    /// KV-head ablation diagnostic for grouped-query models.
    KvDiag(Overrides),
    /// Generate a task set and write it as pre-tokenized JSONL.
    Gen(Overrides),
    /// Keep the facts a model already ranks within the top k.
    FactsFilter(Overrides),
    /// Intersect per-model fact selections into the shared condition.
    FactsIntersect(Overrides),
    /// Re-render tables and figures from run records.
    Report(Overrides),
}

/// Flags; each one overrides the config key of the same name.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// JSON run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory (key `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; falls back to CIRCUITSCOPE_THREADS.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// logit_diff, icl_loss, accuracy_topk or induction_attention.
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    label: Option<String>,
    /// f32 or f64.
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    sample_n: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    /// A count, or "all" for exhaustive greedy search.
    #[arg(long)]
    candidate_pool_size: Option<String>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    /// all or final_token.
    #[arg(long)]
    scope: Option<String>,
    /// head or kv_head.
    #[arg(long)]
    unit: Option<String>,
    /// Run the greedy curve to the full budget instead of stopping at theta.
    #[arg(long)]
    full_budget: bool,
    /// Store elapsed time in the run record.
    #[arg(long)]
    record_wall_clock: bool,
    /// Run records (report) or selection files (facts-intersect).
    inputs: Vec<PathBuf>,
}

impl Command {
    fn parts(&self) -> (&'static str, &Overrides) {
        match self {
            Self::Score(o) => ("score", o),
            Self::Curve(o) => ("curve", o),
            Self::Layers(o) => ("layers", o),
            Self::KvDiag(o) => ("kv-diag", o),
            Self::Gen(o) => ("gen", o),
            Self::FactsFilter(o) => ("facts-filter", o),
            Self::FactsIntersect(o) => ("facts-intersect", o),
            Self::Report(o) => ("report", o),
        }
    }
}

impl Overrides {
    /// Writes flag values into the config map.
    fn apply(&self, map: &mut Map<String, Value>) -> CliResult<()> {
        let mut set = |k: &str, v: Value| {
            map.insert(k.to_string(), v);
        };
        if let Some(v) = self.seed {
            set("seed", json!(v));
        }
        for (k, v) in [
            ("metric", &self.metric),
            ("label", &self.label),
            ("precision", &self.precision),
            ("scope", &self.scope),
            ("unit", &self.unit),
        ] {
            if let Some(v) = v {
                set(k, json!(v));
            }
        }
        for (k, v) in [
            ("sample_n", self.sample_n),
            ("budget", self.budget),
            ("top_k", self.top_k),
            ("threads", self.threads),
        ] {
            if let Some(v) = v {
                set(k, json!(v));
            }
        }
        if let Some(v) = self.theta {
            set("theta", json!(v));
        }
        if let Some(p) = &self.candidate_pool_size {
            match p.parse::<usize>() {
                Ok(n) => set("candidate_pool_size", json!(n)),
                Err(_) => set("candidate_pool_size", json!(p)),
            }
        }
        if self.full_budget {
            set("full_budget", json!(true));
        }
        if self.record_wall_clock {
            set("record_wall_clock", json!(true));
        }
        if !self.inputs.is_empty() {
            let cwd = std::env::current_dir()
                .map_err(|e| CliError::Usage(format!("current directory: {e}")))?;
            let paths: Vec<String> = self
                .inputs
                .iter()
                .map(|p| cwd.join(p).display().to_string())
                .collect();
            set("inputs", json!(paths));
        }
        Ok(())
    }
}

fn init_threads(n: Option<usize>) -> CliResult<()> {
    let n = match n {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(s) if !s.trim().is_empty() => Some(
                s.trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|n| *n > 0)
                    .ok_or_else(|| {
                        CliError::invalid(
                            "threads",
                            format!("{THREADS_ENV}={s:?} is not a positive integer"),
                        )
                    })?,
            ),
            _ => None,
        },
    };
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn dispatch<T: Scalar>(
    name: &str,
    cfg: &RunConfig,
    out: &Path,
    record: &mut RunRecord,
) -> CliResult<()> {
    match name {
        "score" => commands::score::<T>(cfg, out, record),
        "curve" => commands::curve::<T>(cfg, out, record),
        "layers" => commands::layers::<T>(cfg, out, record),
        "kv-diag" => commands::kv_diag::<T>(cfg, out, record),
        "gen" => commands::gen::<T>(cfg, out, record),
        "facts-filter" => commands::facts_filter::<T>(cfg, out, record),
        "facts-intersect" => commands::facts_intersect(cfg, out, record),
        "report" => commands::report(cfg, out, record),
        other => Err(CliError::Usage(format!("unknown command {other}"))),
    }
}

/// Runs one command; `out` is filled in as soon as it is known so that a
/// record can be written even if the run fails.
fn execute(
    name: &str,
    ov: &Overrides,
    record: &mut RunRecord,
    out: &mut Option<PathBuf>,
    wall_clock: &mut bool,
) -> CliResult<()> {
    let (mut map, base) = match &ov.config {
        Some(p) => {
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (RunConfig::load(p)?, base)
        }
        None => (Map::new(), PathBuf::new()),
    };
    ov.apply(&mut map)?;
    record.config = config::snapshot_of(&map);
    if out.is_none() {
        if let Some(Value::String(d)) = map.get("output_dir") {
            *out = Some(base.join(d));
        }
    }
    let cfg = RunConfig::from_map(map, base)?;
    *wall_clock = cfg.record_wall_clock;
    let dir = out
        .clone()
        .ok_or_else(|| CliError::MissingKey("output_dir".into()))?;
    fs::create_dir_all(&dir).map_err(|e| circuitscope::Error::io(&dir, e))?;
    init_threads(cfg.threads)?;
    match cfg.precision {
        Precision::F32 => dispatch::<f32>(name, &cfg, &dir, record),
        Precision::F64 => dispatch::<f64>(name, &cfg, &dir, record),
    }
}

fn main() {
    let cli = Cli::parse();
    let started = Instant::now();
    let (name, ov) = cli.command.parts();
    let mut record = RunRecord::new(name, Value::Null);
    let mut out = ov.out.clone();
    let mut wall_clock = false;

    let result = execute(name, ov, &mut record, &mut out, &mut wall_clock);
    let mut code = 0;
    if let Err(e) = &result {
        record.status = RunStatus::Failed;
        record.error = Some(format!("{}: {e}", e.kind()));
        eprintln!("{}", e.to_json());
        code = e.exit_code();
    }
    if wall_clock {
        record.wall_clock_ms = Some(started.elapsed().as_millis() as u64);
    }
    let Some(dir) = out else {
        std::process::exit(code);
    };
    let path = dir.join(RECORD_FILE);
    let written = fs::create_dir_all(&dir)
        .map_err(|e| circuitscope::Error::io(&dir, e))
        .and_then(|_| record.write(&path));
    match written {
        Ok(()) if code == 0 => {
            println!(
                "{}",
                json!({ "status": record.status, "run_record": path.display().to_string() })
            );
        }
        Ok(()) => {}
        Err(e) => {
            eprintln!("{}", CliError::Core(e).to_json());
            if code == 0 {
                code = EXIT_RUNTIME;
            }
        }
    }
    std::process::exit(code);
}
