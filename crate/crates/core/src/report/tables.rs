// SPDX-License-Identifier: MIT OR Apache-2.0

//! Summary tables in CSV and JSON.
//!
//! One row per run record. The JSON file is an array of the same rows, so
//! either format can be regenerated from the other without loss.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{write_text, RunRecord};
use crate::error::{Error, Result};
use crate::localize::HeadsToThreshold;
use crate::tasks::TaskKind;

pub const TABLE_COLUMNS: [&str; 10] = [
    "model",
    "task",
    "baseline",
    "top_head_layer",
    "top_head_index",
    "top_head_score",
    "heads_to_80",
    "budget_exceeded",
    "facts_per",
    "facts_shared",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    pub task: TaskKind,
    /// Logit difference, ICL advantage or accuracy of the unablated model.
    pub baseline: Option<f64>,
    pub top_head_layer: Option<usize>,
    pub top_head_index: Option<usize>,
    pub top_head_score: Option<f64>,
    pub heads_to_80: Option<usize>,
    pub budget_exceeded: Option<bool>,
    pub facts_per: Option<usize>,
    pub facts_shared: Option<usize>,
}

impl TableRow {
    pub fn from_record(r: &RunRecord) -> Result<Self> {
        let kind =
            r.task.as_ref().map(|t| t.kind).ok_or_else(|| {
                Error::InvalidParameter(format!("{} record has no task", r.command))
            })?;
        let o = &r.outputs;
        let baseline = match kind {
            TaskKind::Induction => o.icl_advantage,
            _ => o
                .baseline
                .or_else(|| o.scores.as_ref().map(|s| s.baseline))
                .or_else(|| o.curve.as_ref().map(|c| c.baseline))
                .map(|b| b.value),
        };
        let top = o.scores.as_ref().map(|s| s.argmax());
        let (heads_to_80, budget_exceeded) = match o.heads_to_threshold {
            Some(HeadsToThreshold::Reached(k)) => (Some(k), Some(false)),
            Some(HeadsToThreshold::ExceedsBudget(_)) => (None, Some(true)),
            None => (None, None),
        };
        let facts = (kind == TaskKind::Factual).then_some(o.facts).flatten();
        Ok(Self {
            model: r.model_label().to_string(),
            task: kind,
            baseline,
            top_head_layer: top.map(|t| t.0.layer),
            top_head_index: top.map(|t| t.0.head),
            top_head_score: top.map(|t| t.1),
            heads_to_80,
            budget_exceeded,
            facts_per: facts.and_then(|f| f.per_model),
            facts_shared: facts.and_then(|f| f.shared),
        })
    }
}

/// Rows for `records`, which must all share one task kind.
pub fn table_rows(records: &[RunRecord]) -> Result<Vec<TableRow>> {
    let rows = records
        .iter()
        .map(TableRow::from_record)
        .collect::<Result<Vec<_>>>()?;
    if let Some(first) = rows.first() {
        if let Some(other) = rows.iter().find(|r| r.task != first.task) {
            return Err(Error::MixedKinds(format!(
                "{} and {}",
                first.task, other.task
            )));
        }
    }
    Ok(rows)
}

pub fn write_table_csv(rows: &[TableRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(TABLE_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidParameter(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn read_table_csv(text: &str) -> Result<Vec<TableRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != TABLE_COLUMNS {
        return Err(Error::InvalidParameter(format!(
            "unexpected table header {header:?}"
        )));
    }
    Ok(r.deserialize()
        .collect::<std::result::Result<Vec<TableRow>, _>>()?)
}

pub fn write_table_json(rows: &[TableRow]) -> Result<String> {
    Ok(serde_json::to_string_pretty(rows)? + "\n")
}

pub fn read_table_json(text: &str) -> Result<Vec<TableRow>> {
    Ok(serde_json::from_str(text)?)
}

/// Writes `<stem>.csv` and `<stem>.json`; returns both paths.
pub fn emit_tables(records: &[RunRecord], stem: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    let rows = table_rows(records)?;
    let stem = stem.as_ref();
    let csv_path = stem.with_extension("csv");
    let json_path = stem.with_extension("json");
    write_text(&csv_path, &write_table_csv(&rows)?)?;
    write_text(&json_path, &write_table_json(&rows)?)?;
    Ok((csv_path, json_path))
}
