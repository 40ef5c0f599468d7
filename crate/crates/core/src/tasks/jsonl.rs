// SPDX-License-Identifier: MIT OR Apache-2.0

//! Pre-tokenized task files, one JSON record per line:
//!
//! ```text
//! {"kind":"ioi","tokens":[...],"io_token":7,"s_token":9}
//! {"kind":"induction","tokens":[...],"b_token":4,"ab_offset_pos":12}
//! {"kind":"fact","tokens":[...],"answer_token":3,"domain":"history","fact_id":"hist-001"}
//! ```
//!
//! Answer fields may also be given as an id list; lists of length other
//! than one are rejected as multi-token answers. Rejected records are
//! counted, malformed lines abort the import with their line number.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    validate, Domain, FactPrompt, InductionPrompt, IoiPrompt, Provenance, TaskItems, TaskSet,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum TokenField {
    One(u32),
    Many(Vec<u32>),
}

impl TokenField {
    fn single(&self, field: &str) -> std::result::Result<u32, String> {
        match self {
            Self::One(t) => Ok(*t),
            Self::Many(v) if v.len() == 1 => Ok(v[0]),
            Self::Many(v) => Err(format!("{field} spans {} tokens {v:?}", v.len())),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum InRecord {
    Ioi {
        tokens: Vec<u32>,
        io_token: TokenField,
        s_token: TokenField,
    },
    Induction {
        tokens: Vec<u32>,
        b_token: TokenField,
        ab_offset_pos: usize,
    },
    Fact {
        tokens: Vec<u32>,
        answer_token: TokenField,
        domain: String,
        fact_id: String,
    },
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum OutRecord<'a> {
    Ioi {
        tokens: &'a [u32],
        io_token: u32,
        s_token: u32,
    },
    Induction {
        tokens: &'a [u32],
        b_token: u32,
        ab_offset_pos: usize,
    },
    Fact {
        tokens: &'a [u32],
        answer_token: u32,
        domain: Domain,
        fact_id: &'a str,
    },
}

/// A record that parsed but violated a task invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportReport {
    pub set: TaskSet,
    pub rejected: Vec<Rejection>,
}

enum Parsed {
    Ioi(IoiPrompt),
    Induction(InductionPrompt),
    Fact(FactPrompt),
}

impl Parsed {
    fn kind(&self) -> &'static str {
        match self {
            Self::Ioi(_) => "ioi",
            Self::Induction(_) => "induction",
            Self::Fact(_) => "fact",
        }
    }
}

/// Converts a raw record; `Err` is a rejection reason.
fn convert(rec: InRecord, line: usize) -> Result<std::result::Result<Parsed, String>> {
    Ok(match rec {
        InRecord::Ioi {
            tokens,
            io_token,
            s_token,
        } => io_token.single("io_token").and_then(|io| {
            let p = IoiPrompt {
                tokens,
                io_token: io,
                s_token: s_token.single("s_token")?,
            };
            validate::ioi(&p).map(|_| Parsed::Ioi(p))
        }),
        InRecord::Induction {
            tokens,
            b_token,
            ab_offset_pos,
        } => b_token.single("b_token").and_then(|b| {
            let p = InductionPrompt {
                tokens,
                b_token: b,
                ab_offset_pos,
            };
            validate::induction(&p).map(|_| Parsed::Induction(p))
        }),
        InRecord::Fact {
            tokens,
            answer_token,
            domain,
            fact_id,
        } => {
            let domain: Domain = domain.parse().map_err(|e: Error| Error::MalformedRecord {
                line,
                message: e.to_string(),
            })?;
            answer_token.single("answer_token").and_then(|a| {
                let p = FactPrompt {
                    tokens,
                    answer_token: a,
                    domain,
                    fact_id,
                };
                validate::fact(&p).map(|_| Parsed::Fact(p))
            })
        }
    })
}

/// Parses JSONL text; `source` becomes the provenance path.
pub fn parse_jsonl(text: &str, source: &str) -> Result<ImportReport> {
    let mut rejected = Vec::new();
    let mut accepted: Vec<Parsed> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: InRecord = serde_json::from_str(raw).map_err(|e| Error::MalformedRecord {
            line,
            message: e.to_string(),
        })?;
        match convert(rec, line)? {
            Ok(p) => {
                if let Some(first) = accepted.first() {
                    if first.kind() != p.kind() {
                        return Err(Error::MalformedRecord {
                            line,
                            message: format!("kind `{}` in a `{}` file", p.kind(), first.kind()),
                        });
                    }
                }
                accepted.push(p);
            }
            Err(reason) => rejected.push(Rejection { line, reason }),
        }
    }
    let items = match accepted.first() {
        None => {
            return Err(Error::EmptyTask(format!(
                "{source}: no valid records ({} rejected)",
                rejected.len()
            )))
        }
        Some(Parsed::Ioi(_)) => TaskItems::Ioi(
            accepted
                .into_iter()
                .filter_map(|p| match p {
                    Parsed::Ioi(q) => Some(q),
                    _ => None,
                })
                .collect(),
        ),
        Some(Parsed::Induction(_)) => TaskItems::Induction(
            accepted
                .into_iter()
                .filter_map(|p| match p {
                    Parsed::Induction(q) => Some(q),
                    _ => None,
                })
                .collect(),
        ),
        Some(Parsed::Fact(_)) => TaskItems::Factual(
            accepted
                .into_iter()
                .filter_map(|p| match p {
                    Parsed::Fact(q) => Some(q),
                    _ => None,
                })
                .collect(),
        ),
    };
    let provenance = Provenance::File {
        path: source.to_string(),
        sha256: hex::encode(Sha256::digest(text.as_bytes())),
    };
    Ok(ImportReport {
        set: TaskSet::new(items, provenance)?,
        rejected,
    })
}

pub fn import_pretokenized(path: impl AsRef<Path>) -> Result<ImportReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, &path.display().to_string())
}

/// Renders a task set as JSONL text.
pub fn to_jsonl(set: &TaskSet) -> Result<String> {
    let mut out = String::new();
    let mut push = |r: OutRecord<'_>| -> Result<()> {
        out.push_str(&serde_json::to_string(&r)?);
        out.push('\n');
        Ok(())
    };
    match set.items() {
        TaskItems::Ioi(v) => v.iter().try_for_each(|p| {
            push(OutRecord::Ioi {
                tokens: &p.tokens,
                io_token: p.io_token,
                s_token: p.s_token,
            })
        })?,
        TaskItems::Induction(v) => v.iter().try_for_each(|p| {
            push(OutRecord::Induction {
                tokens: &p.tokens,
                b_token: p.b_token,
                ab_offset_pos: p.ab_offset_pos,
            })
        })?,
        TaskItems::Factual(v) => v.iter().try_for_each(|p| {
            push(OutRecord::Fact {
                tokens: &p.tokens,
                answer_token: p.answer_token,
                domain: p.domain,
                fact_id: &p.fact_id,
            })
        })?,
    }
    Ok(out)
}

pub fn export_jsonl(set: &TaskSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = to_jsonl(set)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
