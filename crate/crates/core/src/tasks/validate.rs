// SPDX-License-Identifier: MIT OR Apache-2.0

//! Invariant checks re-derived from raw tokens.
//!
//! Nothing here trusts generator metadata beyond the declared answer ids:
//! positions and occurrences are recomputed from the token sequence.

use super::{FactPrompt, InductionPrompt, IoiPrompt, TaskItems};

/// Reason a prompt is invalid.
pub type Violation = String;

pub fn ioi(p: &IoiPrompt) -> Result<(), Violation> {
    if p.tokens.len() < 2 {
        return Err("ioi prompt needs at least 2 tokens".into());
    }
    if p.io_token == p.s_token {
        return Err(format!("io_token == s_token ({})", p.io_token));
    }
    let context = &p.tokens[..p.tokens.len() - 1];
    if !context.contains(&p.io_token) {
        return Err(format!(
            "io_token {} does not occur in the prompt",
            p.io_token
        ));
    }
    if !context.contains(&p.s_token) {
        return Err(format!(
            "s_token {} does not occur in the prompt",
            p.s_token
        ));
    }
    Ok(())
}

pub fn induction(p: &InductionPrompt) -> Result<(), Violation> {
    let n = p.tokens.len();
    if n < 3 {
        return Err("induction prompt needs at least 3 tokens".into());
    }
    let eval = n - 1;
    let b = p.ab_offset_pos;
    if b == 0 || b >= eval {
        return Err(format!("ab_offset_pos {b} outside 1..{eval}"));
    }
    if p.tokens[b] != p.b_token {
        return Err(format!(
            "token at ab_offset_pos is {}, not b_token {}",
            p.tokens[b], p.b_token
        ));
    }
    let a = p.tokens[eval];
    if p.tokens[b - 1] != a {
        return Err(format!(
            "token before B is {}, final token is {a}",
            p.tokens[b - 1]
        ));
    }
    if p.tokens[b + 1..eval].contains(&a) {
        return Err(format!("A ({a}) reoccurs in the suffix"));
    }
    Ok(())
}

pub fn fact(p: &FactPrompt) -> Result<(), Violation> {
    if p.tokens.is_empty() {
        return Err("fact prompt is empty".into());
    }
    if p.fact_id.trim().is_empty() {
        return Err("fact_id is empty".into());
    }
    Ok(())
}

/// First violating prompt index and reason.
pub fn task_items(items: &TaskItems) -> Result<(), (usize, Violation)> {
    fn all<P>(v: &[P], f: fn(&P) -> Result<(), Violation>) -> Result<(), (usize, Violation)> {
        v.iter()
            .enumerate()
            .try_for_each(|(i, p)| f(p).map_err(|e| (i, e)))
    }
    match items {
        TaskItems::Ioi(v) => all(v, ioi),
        TaskItems::Induction(v) => all(v, induction),
        TaskItems::Factual(v) => all(v, fact),
    }
}
