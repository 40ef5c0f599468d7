// SPDX-License-Identifier: MIT OR Apache-2.0

//! Template-generated indirect object identification prompts.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{IoiPrompt, Provenance, TaskItems, TaskSet, ToyVocab};
use crate::error::{Error, Result};

/// Eight templates in the style of the original IOI study. Placeholders:
/// `{A}` and `{B}` introduce the two names, `{S}` repeats the subject.
pub const DEFAULT_TEMPLATES: [&str; 8] = [
    "When {A} and {B} went to the {place} , {S} gave a {object} to",
    "After {A} and {B} went to the {place} , {S} gave a {object} to",
    "While {A} and {B} were working at the {place} , {S} gave a {object} to",
    "Then , {A} and {B} went to the {place} . {S} gave a {object} to",
    "When {A} and {B} got a {object} at the {place} , {S} decided to give it to",
    "After the lunch , {A} and {B} went to the {place} . {S} gave a {object} to",
    "Friends {A} and {B} found a {object} at the {place} . {S} gave it to",
    "The {place} was where {A} and {B} met , and {S} handed a {object} to",
];

const DEFAULT_NAMES: [&str; 16] = [
    "Mary", "John", "Alice", "Bob", "Sarah", "James", "Emma", "David", "Laura", "Tom", "Kate",
    "Paul", "Anna", "Mark", "Lisa", "Peter",
];
const DEFAULT_PLACES: [&str; 6] = ["store", "park", "school", "office", "garden", "station"];
const DEFAULT_OBJECTS: [&str; 6] = ["mango", "book", "drink", "ring", "ball", "letter"];

/// Name order in the first clause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IoiOrder {
    /// Indirect object first: `A B ... B gave ... to A`.
    Abba,
    /// Subject first: `B A ... B gave ... to A`.
    Baba,
}

impl IoiOrder {
    /// Which ordering a prompt has, recovered from its token sequence.
    pub fn of(prompt: &IoiPrompt) -> Option<Self> {
        let io = prompt.tokens.iter().position(|t| *t == prompt.io_token)?;
        let s = prompt.tokens.iter().position(|t| *t == prompt.s_token)?;
        Some(if io < s { Self::Abba } else { Self::Baba })
    }
}

/// Template and word pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IoiGenerator {
    pub templates: Vec<String>,
    pub names: Vec<String>,
    pub places: Vec<String>,
    pub objects: Vec<String>,
}

impl Default for IoiGenerator {
    fn default() -> Self {
        let own = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        Self {
            templates: own(&DEFAULT_TEMPLATES),
            names: own(&DEFAULT_NAMES),
            places: own(&DEFAULT_PLACES),
            objects: own(&DEFAULT_OBJECTS),
        }
    }
}

impl IoiGenerator {
    /// Working vocabulary covering every template word and pool entry.
    pub fn vocab(&self) -> ToyVocab {
        let strip = |t: &str| {
            ["{A}", "{B}", "{S}", "{place}", "{object}"]
                .iter()
                .fold(t.to_string(), |acc, p| acc.replace(p, " "))
        };
        let templates: Vec<String> = self.templates.iter().map(|t| strip(t)).collect();
        ToyVocab::from_texts(
            templates
                .iter()
                .map(String::as_str)
                .chain(self.names.iter().map(String::as_str))
                .chain(self.places.iter().map(String::as_str))
                .chain(self.objects.iter().map(String::as_str)),
        )
    }
}

fn fill(template: &str, a: &str, b: &str, s: &str, place: &str, object: &str) -> String {
    template
        .replace("{A}", a)
        .replace("{B}", b)
        .replace("{S}", s)
        .replace("{place}", place)
        .replace("{object}", object)
}

/// Generates `n` prompts alternating ABBA and BABA orderings.
///
/// Each prompt uses a distinct `(template, indirect object, subject)`
/// triple; the pool is exhausted once `n` exceeds the number of triples.
pub fn gen_ioi(gen: &IoiGenerator, vocab: &ToyVocab, n: usize, seed: u64) -> Result<TaskSet> {
    if n == 0 {
        return Err(Error::EmptyTask("gen_ioi called with n = 0".into()));
    }
    if gen.templates.is_empty() || gen.places.is_empty() || gen.objects.is_empty() {
        return Err(Error::InvalidParameter(
            "templates, places and objects must be non-empty".into(),
        ));
    }
    let names = gen
        .names
        .iter()
        .map(|nm| vocab.single_token(nm))
        .collect::<Result<Vec<u32>>>()?;
    let k = names.len();
    let triples = gen.templates.len() * k * k.saturating_sub(1);
    if n > triples {
        return Err(Error::NamePoolExhausted(format!(
            "{n} prompts requested but {k} names and {} templates give {triples} distinct triples",
            gen.templates.len()
        )));
    }
    let mut combos: Vec<(usize, usize, usize)> = Vec::with_capacity(triples);
    for t in 0..gen.templates.len() {
        for io in 0..k {
            for s in (0..k).filter(|s| *s != io) {
                combos.push((t, io, s));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    combos.shuffle(&mut rng);

    let mut prompts = Vec::with_capacity(n);
    for (i, &(t, io, s)) in combos.iter().take(n).enumerate() {
        let place = &gen.places[rng.random_range(0..gen.places.len())];
        let object = &gen.objects[rng.random_range(0..gen.objects.len())];
        let (io_name, s_name) = (&gen.names[io], &gen.names[s]);
        let (a, b) = if i % 2 == 0 {
            (io_name, s_name)
        } else {
            (s_name, io_name)
        };
        let text = fill(&gen.templates[t], a, b, s_name, place, object);
        prompts.push(IoiPrompt {
            tokens: vocab.encode(&text)?,
            io_token: names[io],
            s_token: names[s],
        });
    }
    TaskSet::new(
        TaskItems::Ioi(prompts),
        Provenance::Generator {
            generator: "ioi".into(),
            seed,
            params: serde_json::json!({ "n": n, "templates": gen.templates.len(), "names": k }),
        },
    )
}
