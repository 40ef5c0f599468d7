// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run configuration.
//!
//! A run is described by one JSON object. Command-line flags overwrite
//! keys of that object before validation, so a configuration file plus
//! the flags used is a complete description of the run. Each key is
//! decoded separately, which lets errors name the key at fault.
//!
//! ```json
//! {
//!   "seed": 7,
//!   "model": { "synthetic": { "vocab_size": 50 } },
//!   "task": { "generate": { "kind": "induction", "n": 200 } },
//!   "metric": "icl_loss",
//!   "output_dir": "runs/synthetic"
//! }
//! ```

use std::path::{Path, PathBuf};

use circuitscope::io::{PlantedFactSpec, SyntheticCircuitSpec};
use circuitscope::localize::{AblationUnit, CandidatePool, EvalOptions, MetricKind};
use circuitscope::model::{ModelConfig, PositionScope};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

// ----------------------------------------------------------------------------
// Sources
// ----------------------------------------------------------------------------

/// Where the model comes from. Exactly one variant key must be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    /// Hand-set previous-token plus induction circuit.
    Synthetic(SyntheticCircuitSpec),
    /// One-layer model with planted subject → answer facts.
    PlantedFacts(PlantedFactSpec),
    /// Seeded random weights for an arbitrary configuration.
    Random {
        config: ModelConfig,
        seed: u64,
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// Safetensors file plus a name-mapping manifest.
    Checkpoint { manifest: String, tensors: String },
}

fn default_scale() -> f64 {
    0.5
}

/// Where the prompts come from. Exactly one variant key must be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSource {
    Generate(GenSpec),
    /// JSONL file of pre-tokenized prompts.
    Pretokenized(String),
    /// Fact seed file (JSON array) or pre-tokenized fact JSONL.
    Facts(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GenSpec {
    Ioi {
        #[serde(default = "default_ioi_n")]
        n: usize,
        /// Templates and name pools; defaults are built in.
        #[serde(default)]
        generator: Option<circuitscope::tasks::IoiGenerator>,
    },
    Induction {
        #[serde(default)]
        n: Option<usize>,
        #[serde(default)]
        prefix_len: Option<(usize, usize)>,
        #[serde(default)]
        suffix_len: Option<(usize, usize)>,
        /// Defaults to the model's vocabulary size when a model is given.
        #[serde(default)]
        vocab_size: Option<usize>,
    },
}

fn default_ioi_n() -> usize {
    500
}

/// `candidate_pool_size`: a count or the string `"all"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum PoolKey {
    Size(usize),
    Word(String),
}

// ----------------------------------------------------------------------------
// Configuration
// ----------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Keys accepted in a configuration file.
pub const KNOWN_KEYS: [&str; 23] = [
    "seed",
    "model",
    "task",
    "metric",
    "label",
    "precision",
    "sample_n",
    "budget",
    "candidate_pool_size",
    "theta",
    "top_k",
    "scope",
    "unit",
    "output_dir",
    "threads",
    "record_wall_clock",
    "full_budget",
    "equivalence_sample",
    "negative_control",
    "inputs",
    "early_stop",
    "$schema",
    "comment",
];

/// Keys left out of the configuration snapshot in a run record. They do
/// not influence results, and leaving them out keeps records from
/// different output directories byte-identical.
const UNRECORDED: [&str; 4] = ["output_dir", "threads", "$schema", "comment"];

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Directory that relative input paths are resolved against.
    pub base_dir: PathBuf,
    pub seed: Option<u64>,
    pub model: Option<ModelSource>,
    pub task: Option<TaskSource>,
    pub metric: Option<MetricKind>,
    pub label: Option<String>,
    pub precision: Precision,
    pub sample_n: usize,
    pub budget: usize,
    pub pool: CandidatePool,
    pub theta: f64,
    pub eval: EvalOptions,
    pub unit: AblationUnit,
    pub threads: Option<usize>,
    pub record_wall_clock: bool,
    pub full_budget: bool,
    pub equivalence_sample: usize,
    pub negative_control: bool,
    pub inputs: Vec<String>,
}

/// Configuration as stored in a run record.
pub fn snapshot_of(map: &Map<String, Value>) -> Value {
    let mut m = map.clone();
    for k in UNRECORDED {
        m.remove(k);
    }
    Value::Object(m)
}

fn take<T: DeserializeOwned>(map: &Map<String, Value>, key: &str) -> CliResult<Option<T>> {
    match map.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| CliError::invalid(key, e)),
    }
}

fn take_or<T: DeserializeOwned>(map: &Map<String, Value>, key: &str, default: T) -> CliResult<T> {
    Ok(take(map, key)?.unwrap_or(default))
}

impl RunConfig {
    /// Reads a configuration file. Relative inputs resolve against its
    /// directory.
    pub fn load(path: &Path) -> CliResult<Map<String, Value>> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        match serde_json::from_str::<Value>(&text) {
            Ok(Value::Object(map)) => Ok(map),
            Ok(_) => Err(CliError::Usage(format!(
                "config {} is not a JSON object",
                path.display()
            ))),
            Err(e) => Err(CliError::Usage(format!(
                "config {} is not valid JSON: {e}",
                path.display()
            ))),
        }
    }

    /// Decodes every known key; unknown keys are errors.
    pub fn from_map(map: Map<String, Value>, base_dir: PathBuf) -> CliResult<Self> {
        if let Some(k) = map.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(CliError::invalid(k, "unknown key"));
        }
        let pool = match take::<PoolKey>(&map, "candidate_pool_size")? {
            None => CandidatePool::default(),
            Some(PoolKey::Size(0)) => {
                return Err(CliError::invalid(
                    "candidate_pool_size",
                    "must be at least 1",
                ))
            }
            Some(PoolKey::Size(n)) => CandidatePool::Top(n),
            Some(PoolKey::Word(w)) if w == "all" => CandidatePool::All,
            Some(PoolKey::Word(w)) => {
                return Err(CliError::invalid(
                    "candidate_pool_size",
                    format!("expected a count or \"all\", got {w:?}"),
                ))
            }
        };
        let theta: f64 = take_or(&map, "theta", 0.8)?;
        if !theta.is_finite() {
            return Err(CliError::invalid("theta", "must be finite"));
        }
        let defaults = EvalOptions::default();
        let eval = EvalOptions {
            top_k: take_or(&map, "top_k", defaults.top_k)?,
            scope: take_or::<PositionScope>(&map, "scope", defaults.scope)?,
        };
        if eval.top_k == 0 {
            return Err(CliError::invalid("top_k", "must be at least 1"));
        }
        let sample_n: usize = take_or(&map, "sample_n", 20)?;
        if sample_n == 0 {
            return Err(CliError::invalid("sample_n", "must be at least 1"));
        }
        let threads: Option<usize> = take(&map, "threads")?;
        if threads == Some(0) {
            return Err(CliError::invalid("threads", "must be at least 1"));
        }
        // `early_stop: false` is a synonym for `full_budget: true`.
        let early_stop: bool = take_or(&map, "early_stop", true)?;
        let full_budget = take_or(&map, "full_budget", false)? || !early_stop;

        // Decoded for validation only; the caller resolves it.
        take::<String>(&map, "output_dir")?;
        Ok(Self {
            seed: take(&map, "seed")?,
            model: take(&map, "model")?,
            task: take(&map, "task")?,
            metric: take(&map, "metric")?,
            label: take(&map, "label")?,
            precision: take_or(&map, "precision", Precision::default())?,
            sample_n,
            budget: take_or(&map, "budget", 20)?,
            pool,
            theta,
            eval,
            unit: take_or(&map, "unit", AblationUnit::default())?,
            threads,
            record_wall_clock: take_or(&map, "record_wall_clock", false)?,
            full_budget,
            equivalence_sample: take_or(&map, "equivalence_sample", 8)?,
            negative_control: take_or(&map, "negative_control", true)?,
            inputs: take_or(&map, "inputs", Vec::new())?,
            base_dir,
        })
    }

    /// Resolves a path from the config against the config directory.
    pub fn resolve(&self, p: &str) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn require_seed(&self) -> CliResult<u64> {
        self.seed.ok_or_else(|| CliError::MissingKey("seed".into()))
    }

    pub fn require_model(&self) -> CliResult<&ModelSource> {
        self.model
            .as_ref()
            .ok_or_else(|| CliError::MissingKey("model".into()))
    }

    pub fn require_task(&self) -> CliResult<&TaskSource> {
        self.task
            .as_ref()
            .ok_or_else(|| CliError::MissingKey("task".into()))
    }

    pub fn require_metric(&self) -> CliResult<MetricKind> {
        self.metric
            .ok_or_else(|| CliError::MissingKey("metric".into()))
    }

    /// Display name of the model.
    pub fn model_label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        match &self.model {
            Some(ModelSource::Synthetic(_)) => "synthetic-induction".into(),
            Some(ModelSource::PlantedFacts(_)) => "planted-facts".into(),
            Some(ModelSource::Random { seed, .. }) => format!("random-{seed}"),
            Some(ModelSource::Checkpoint { manifest, .. }) => Path::new(manifest)
                .file_stem()
                .map(|s| {
                    s.to_string_lossy()
                        .trim_end_matches(".manifest")
                        .to_string()
                })
                .unwrap_or_else(|| manifest.clone()),
            None => "none".into(),
        }
    }
}
