// SPDX-License-Identifier: MIT OR Apache-2.0

//! Factual-recall sets: seed loading, known-fact filtering and the shared
//! condition across a model family.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{jsonl, FactPrompt, Provenance, TaskItems, TaskKind, TaskSet, ToyVocab};
use crate::error::{Error, Result};
use crate::localize::metrics::answer_rank;
use crate::model::{ForwardOptions, InterventionSpec, Model};
use crate::scalar::Scalar;

/// The ten fact domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    WorldGeography,
    ScienceChemistry,
    History,
    NotablePeople,
    LiteratureArts,
    Technology,
    Sports,
    FoodCulture,
    MythologyReligion,
    CurrenciesLanguages,
}

impl Domain {
    pub const ALL: [Domain; 10] = [
        Self::WorldGeography,
        Self::ScienceChemistry,
        Self::History,
        Self::NotablePeople,
        Self::LiteratureArts,
        Self::Technology,
        Self::Sports,
        Self::FoodCulture,
        Self::MythologyReligion,
        Self::CurrenciesLanguages,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::WorldGeography => "world_geography",
            Self::ScienceChemistry => "science_chemistry",
            Self::History => "history",
            Self::NotablePeople => "notable_people",
            Self::LiteratureArts => "literature_arts",
            Self::Technology => "technology",
            Self::Sports => "sports",
            Self::FoodCulture => "food_culture",
            Self::MythologyReligion => "mythology_religion",
            Self::CurrenciesLanguages => "currencies_languages",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Domain {
    type Err = Error;

    /// Accepts snake_case labels and display names such as
    /// `"Science & Chemistry"`.
    fn from_str(s: &str) -> Result<Self> {
        let norm = s
            .to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect::<Vec<_>>()
            .join("_");
        Self::ALL
            .into_iter()
            .find(|d| d.label() == norm)
            .ok_or_else(|| Error::UnknownDomain(s.to_string()))
    }
}

/// Text form of a fact, as stored in seed files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactRecord {
    pub fact_id: String,
    pub domain: String,
    pub prompt_text: String,
    pub answer_text: String,
}

/// Reads a seed file (JSON array of [`FactRecord`]), checking domains and
/// id uniqueness. Entry numbers in errors are 1-based.
pub fn load_fact_seed(path: impl AsRef<Path>) -> Result<Vec<FactRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_fact_seed(&text)
}

pub fn parse_fact_seed(text: &str) -> Result<Vec<FactRecord>> {
    let records: Vec<FactRecord> = serde_json::from_str(text)?;
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        r.domain.parse::<Domain>()?;
        if let Some(first) = seen.insert(&r.fact_id, i + 1) {
            return Err(Error::DuplicateFactId {
                id: r.fact_id.clone(),
                first,
                second: i + 1,
            });
        }
    }
    Ok(records)
}

/// Word-level vocabulary covering every prompt and answer.
pub fn fact_vocab(records: &[FactRecord]) -> ToyVocab {
    ToyVocab::from_texts(
        records
            .iter()
            .flat_map(|r| [r.prompt_text.as_str(), r.answer_text.as_str()]),
    )
}

/// Tokenizes seed records with a working vocabulary.
pub fn tokenize_facts(
    records: &[FactRecord],
    vocab: &ToyVocab,
    source: Provenance,
) -> Result<TaskSet> {
    let facts = records
        .iter()
        .map(|r| {
            Ok(FactPrompt {
                tokens: vocab.encode(&r.prompt_text)?,
                answer_token: vocab.single_token(&r.answer_text)?,
                domain: r.domain.parse()?,
                fact_id: r.fact_id.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    TaskSet::new(TaskItems::Factual(facts), source)
}

/// Loads facts from either a seed file (JSON array, tokenized with
/// [`fact_vocab`]) or a pre-tokenized JSONL file.
pub fn load_facts(path: impl AsRef<Path>) -> Result<TaskSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_facts(&text, &path.display().to_string())
}

/// [`load_facts`] on in-memory text; `source` becomes the provenance path.
pub fn parse_facts(text: &str, source: &str) -> Result<TaskSet> {
    if text.trim_start().starts_with('[') {
        let records = parse_fact_seed(text)?;
        let provenance = Provenance::File {
            path: source.to_string(),
            sha256: hex::encode(Sha256::digest(text.as_bytes())),
        };
        return tokenize_facts(&records, &fact_vocab(&records), provenance);
    }
    let set = jsonl::parse_jsonl(text, source)?.set;
    if set.kind() != TaskKind::Factual {
        return Err(Error::TaskKind(format!(
            "{source} holds {} prompts",
            set.kind()
        )));
    }
    Ok(set)
}

// ----------------------------------------------------------------------------
// Conditions
// ----------------------------------------------------------------------------

/// Facts retained from a universe; may be empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactSelection {
    pub facts: Vec<FactPrompt>,
    /// Sorted ids of the set the selection was drawn from.
    pub universe: Vec<String>,
    /// Top-k used for filtering, if any.
    pub k: Option<usize>,
    pub provenance: Provenance,
}

impl FactSelection {
    /// The whole of `set`, unfiltered.
    pub fn all(set: &TaskSet) -> Result<Self> {
        let facts = set.facts()?.to_vec();
        let universe = sorted_ids(&facts);
        Ok(Self {
            facts,
            universe,
            k: None,
            provenance: set.provenance().clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    /// Empty selections are legal but flagged downstream.
    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn ids(&self) -> BTreeSet<&str> {
        self.facts.iter().map(|f| f.fact_id.as_str()).collect()
    }

    pub fn to_task_set(&self) -> Result<TaskSet> {
        TaskSet::new(
            TaskItems::Factual(self.facts.clone()),
            self.provenance.clone(),
        )
    }
}

fn sorted_ids(facts: &[FactPrompt]) -> Vec<String> {
    let set: BTreeSet<String> = facts.iter().map(|f| f.fact_id.clone()).collect();
    set.into_iter().collect()
}

/// Keeps facts whose answer ranks within the top `k` logits at the final
/// position of the unablated model. Ties are resolved in the answer's
/// favour: the rank counts strictly larger logits.
pub fn filter_known<T: Scalar>(
    model: &Model<T>,
    facts: &TaskSet,
    k: usize,
) -> Result<FactSelection> {
    let all = facts.facts()?;
    let prompts = facts.token_lists();
    let results = model.forward_batch(
        &prompts,
        &InterventionSpec::none(),
        &ForwardOptions::final_only(),
    );
    let mut kept = Vec::new();
    for (fact, r) in all.iter().zip(results) {
        let r = r?;
        if answer_rank(r.final_logits(), fact.answer_token as usize)? < k {
            kept.push(fact.clone());
        }
    }
    Ok(FactSelection {
        facts: kept,
        universe: sorted_ids(all),
        k: Some(k),
        provenance: Provenance::Derived {
            operation: format!("filter_known top-{k}"),
            inputs: vec![facts.provenance().clone()],
        },
    })
}

/// Intersection of per-model selections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedCondition {
    pub fact_ids: Vec<String>,
    /// Each input restricted to the shared ids, in input order.
    pub per_set: Vec<FactSelection>,
}

impl SharedCondition {
    pub fn is_empty(&self) -> bool {
        self.fact_ids.is_empty()
    }
}

/// Intersects selections by `fact_id`. Every input must come from the same
/// universe, since each model tokenizes the facts independently.
pub fn shared_condition(sets: &[FactSelection]) -> Result<SharedCondition> {
    if sets.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "shared condition needs at least 2 sets, got {}",
            sets.len()
        )));
    }
    let universe = &sets[0].universe;
    if let Some((i, _)) = sets
        .iter()
        .enumerate()
        .find(|(_, s)| &s.universe != universe)
    {
        return Err(Error::MismatchedUniverses(format!(
            "set {i} has {} facts in its universe, set 0 has {}",
            sets[i].universe.len(),
            universe.len()
        )));
    }
    let mut shared: BTreeSet<&str> = sets[0].ids();
    for s in &sets[1..] {
        let ids = s.ids();
        shared.retain(|id| ids.contains(id));
    }
    let per_set = sets
        .iter()
        .map(|s| FactSelection {
            facts: s
                .facts
                .iter()
                .filter(|f| shared.contains(f.fact_id.as_str()))
                .cloned()
                .collect(),
            universe: s.universe.clone(),
            k: s.k,
            provenance: Provenance::Derived {
                operation: "shared_condition".into(),
                inputs: sets.iter().map(|x| x.provenance.clone()).collect(),
            },
        })
        .collect();
    Ok(SharedCondition {
        fact_ids: shared.into_iter().map(str::to_string).collect(),
        per_set,
    })
}
