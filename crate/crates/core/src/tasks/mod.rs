// SPDX-License-Identifier: MIT OR Apache-2.0

//! Task families: indirect object identification, induction and factual
//! recall, with pre-tokenized import/export and an independent validator.

pub mod facts;
pub mod induction;
pub mod ioi;
pub mod jsonl;
pub mod validate;
pub mod vocab;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use facts::{
    fact_vocab, filter_known, load_fact_seed, load_facts, parse_fact_seed, parse_facts,
    shared_condition, tokenize_facts, Domain, FactRecord, FactSelection, SharedCondition,
};
pub use induction::{gen_induction, InductionParams};
pub use ioi::{gen_ioi, IoiGenerator, IoiOrder, DEFAULT_TEMPLATES};
pub use jsonl::{
    export_jsonl, import_pretokenized, parse_jsonl, to_jsonl, ImportReport, Rejection,
};
pub use vocab::ToyVocab;

/// Task family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Ioi,
    Induction,
    Factual,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ioi => "ioi",
            Self::Induction => "induction",
            Self::Factual => "factual",
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `After A and B went to the store, B gave a mango to ___` with the
/// indirect object `A` as the correct completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoiPrompt {
    pub tokens: Vec<u32>,
    pub io_token: u32,
    pub s_token: u32,
}

/// `[prefix] A B [suffix] A`; the target is `B`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InductionPrompt {
    pub tokens: Vec<u32>,
    pub b_token: u32,
    /// Position of `B`.
    pub ab_offset_pos: usize,
}

/// Subject-completion fact with a single-token answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactPrompt {
    pub tokens: Vec<u32>,
    pub answer_token: u32,
    pub domain: Domain,
    pub fact_id: String,
}

/// Every prompt is scored at its final position.
pub trait Prompt {
    fn tokens(&self) -> &[u32];

    fn eval_pos(&self) -> usize {
        self.tokens().len().saturating_sub(1)
    }
}

impl Prompt for IoiPrompt {
    fn tokens(&self) -> &[u32] {
        &self.tokens
    }
}

impl Prompt for InductionPrompt {
    fn tokens(&self) -> &[u32] {
        &self.tokens
    }
}

impl Prompt for FactPrompt {
    fn tokens(&self) -> &[u32] {
        &self.tokens
    }
}

/// Where a task set came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Provenance {
    Generator {
        generator: String,
        seed: u64,
        params: serde_json::Value,
    },
    File {
        path: String,
        sha256: String,
    },
    Derived {
        operation: String,
        inputs: Vec<Provenance>,
    },
}

/// Homogeneous prompt list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "prompts", rename_all = "snake_case")]
pub enum TaskItems {
    Ioi(Vec<IoiPrompt>),
    Induction(Vec<InductionPrompt>),
    Factual(Vec<FactPrompt>),
}

impl TaskItems {
    pub fn kind(&self) -> TaskKind {
        match self {
            Self::Ioi(_) => TaskKind::Ioi,
            Self::Induction(_) => TaskKind::Induction,
            Self::Factual(_) => TaskKind::Factual,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Ioi(v) => v.len(),
            Self::Induction(v) => v.len(),
            Self::Factual(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Token sequence of prompt `i`.
    pub fn tokens(&self, i: usize) -> &[u32] {
        match self {
            Self::Ioi(v) => &v[i].tokens,
            Self::Induction(v) => &v[i].tokens,
            Self::Factual(v) => &v[i].tokens,
        }
    }

    /// First `n` prompts.
    pub fn truncated(&self, n: usize) -> Self {
        match self {
            Self::Ioi(v) => Self::Ioi(v[..n.min(v.len())].to_vec()),
            Self::Induction(v) => Self::Induction(v[..n.min(v.len())].to_vec()),
            Self::Factual(v) => Self::Factual(v[..n.min(v.len())].to_vec()),
        }
    }
}

/// Non-empty, validated set of prompts of one kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTaskSet")]
pub struct TaskSet {
    items: TaskItems,
    provenance: Provenance,
}

#[derive(Deserialize)]
struct RawTaskSet {
    items: TaskItems,
    provenance: Provenance,
}

impl TryFrom<RawTaskSet> for TaskSet {
    type Error = Error;

    fn try_from(raw: RawTaskSet) -> Result<Self> {
        Self::new(raw.items, raw.provenance)
    }
}

impl TaskSet {
    /// Checks non-emptiness and every per-prompt invariant.
    pub fn new(items: TaskItems, provenance: Provenance) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::EmptyTask(format!("no {} prompts", items.kind())));
        }
        validate::task_items(&items)
            .map_err(|(i, why)| Error::InvalidParameter(format!("prompt {i}: {why}")))?;
        Ok(Self { items, provenance })
    }

    pub fn kind(&self) -> TaskKind {
        self.items.kind()
    }

    pub fn items(&self) -> &TaskItems {
        &self.items
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Token sequences in prompt order.
    pub fn token_lists(&self) -> Vec<Vec<u32>> {
        (0..self.len())
            .map(|i| self.items.tokens(i).to_vec())
            .collect()
    }

    /// The first `n` prompts (the whole set if `n ≥ len`).
    pub fn sample(&self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyTask("sample of size 0".into()));
        }
        if n >= self.len() {
            return Ok(self.clone());
        }
        Ok(Self {
            items: self.items.truncated(n),
            provenance: Provenance::Derived {
                operation: format!("first {n}"),
                inputs: vec![self.provenance.clone()],
            },
        })
    }

    pub fn ioi(&self) -> Result<&[IoiPrompt]> {
        match &self.items {
            TaskItems::Ioi(v) => Ok(v),
            other => Err(Error::TaskKind(format!(
                "expected ioi, found {}",
                other.kind()
            ))),
        }
    }

    pub fn induction(&self) -> Result<&[InductionPrompt]> {
        match &self.items {
            TaskItems::Induction(v) => Ok(v),
            other => Err(Error::TaskKind(format!(
                "expected induction, found {}",
                other.kind()
            ))),
        }
    }

    pub fn facts(&self) -> Result<&[FactPrompt]> {
        match &self.items {
            TaskItems::Factual(v) => Ok(v),
            other => Err(Error::TaskKind(format!(
                "expected factual, found {}",
                other.kind()
            ))),
        }
    }
}
