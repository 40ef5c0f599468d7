// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run records and the figures and tables rendered from them.
//!
//! Every emitter is a pure function of its inputs: identical records give
//! byte-identical files.

pub mod svg;
pub mod tables;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localize::{
    AblationCurve, HeadScoreMatrix, HeadsToThreshold, KvDiagnostic, LayerProfile, MetricValue,
    NegativeControl,
};
use crate::model::ModelConfig;
use crate::tasks::{Provenance, TaskKind};

pub use svg::{
    emit_curve, emit_heatmap, emit_layer_profile, render_curve, render_heatmap,
    render_layer_profile,
};
pub use tables::{
    emit_tables, read_table_csv, read_table_json, table_rows, write_table_csv, write_table_json,
    TableRow, TABLE_COLUMNS,
};

/// Version of the [`RunRecord`] JSON layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    /// Display name used in tables and plot legends.
    pub label: String,
    /// SHA-256 over the model parameters or checkpoint tensors.
    pub digest: String,
    pub config: ModelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInfo {
    pub kind: TaskKind,
    pub n_prompts: usize,
    pub provenance: Provenance,
}

/// Retained fact counts for the per-model and shared conditions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactCounts {
    pub per_model: Option<usize>,
    pub shared: Option<usize>,
}

/// Measurement outputs; absent entries were not requested.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Outputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<MetricValue>,
    /// `ln V − loss` for induction tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub icl_advantage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<HeadScoreMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<AblationCurve>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heads_to_threshold: Option<HeadsToThreshold>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_profile: Option<LayerProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kv_diagnostic: Option<KvDiagnostic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_control: Option<NegativeControl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facts: Option<FactCounts>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    /// Finished, with entries in `anomalies`.
    Flagged,
    Failed,
}

/// Self-contained description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub toolkit_version: String,
    pub command: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskInfo>,
    /// Effective configuration after flag overrides.
    pub config: serde_json::Value,
    pub outputs: Outputs,
    /// Files written next to the record, relative to the output directory.
    pub files: Vec<String>,
    pub anomalies: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Only recorded on request, since it breaks byte-identical reruns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_ms: Option<u64>,
}

impl RunRecord {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            toolkit_version: crate::VERSION.to_string(),
            command: command.to_string(),
            status: RunStatus::Ok,
            model: None,
            task: None,
            config,
            outputs: Outputs::default(),
            files: Vec::new(),
            anomalies: Vec::new(),
            error: None,
            wall_clock_ms: None,
        }
    }

    pub fn flag(&mut self, anomaly: impl Into<String>) {
        self.anomalies.push(anomaly.into());
        if self.status == RunStatus::Ok {
            self.status = RunStatus::Flagged;
        }
    }

    pub fn fail(&mut self, error: &Error) {
        self.status = RunStatus::Failed;
        self.error = Some(format!("{}: {error}", error.kind()));
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Label of the model, or `"unknown"`.
    pub fn model_label(&self) -> &str {
        self.model.as_ref().map_or("unknown", |m| m.label.as_str())
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
