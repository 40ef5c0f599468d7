// SPDX-License-Identifier: MIT OR Apache-2.0

//! Random repeated-token sequences `[prefix] A B [suffix] A`.

use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{InductionPrompt, Provenance, TaskItems, TaskSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InductionParams {
    pub n: usize,
    pub prefix_len: (usize, usize),
    pub suffix_len: (usize, usize),
    pub vocab_size: usize,
}

impl Default for InductionParams {
    fn default() -> Self {
        Self {
            n: 200,
            prefix_len: (5, 15),
            suffix_len: (5, 15),
            vocab_size: 50,
        }
    }
}

impl InductionParams {
    fn range(r: (usize, usize), what: &str) -> Result<RangeInclusive<usize>> {
        if r.0 > r.1 {
            return Err(Error::InvalidParameter(format!(
                "{what} range {}..={} is empty",
                r.0, r.1
            )));
        }
        Ok(r.0..=r.1)
    }

    /// Longest sequence this configuration can produce.
    pub fn max_len(&self) -> usize {
        self.prefix_len.1 + self.suffix_len.1 + 3
    }
}

/// Draws `params.n` prompts.
///
/// `A` is uniform over the vocabulary, `B` and every filler token uniform
/// over the rest, so `A` occurs exactly twice and its match is unique.
pub fn gen_induction(params: &InductionParams, seed: u64) -> Result<TaskSet> {
    if params.n == 0 {
        return Err(Error::EmptyTask("gen_induction called with n = 0".into()));
    }
    let v = params.vocab_size;
    if v < 4 {
        return Err(Error::Infeasible(format!(
            "vocab_size {v} < 4 leaves too few tokens distinct from A"
        )));
    }
    let prefix = InductionParams::range(params.prefix_len, "prefix")?;
    let suffix = InductionParams::range(params.suffix_len, "suffix")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let other = |rng: &mut ChaCha8Rng, a: u32| -> u32 {
        // Uniform over the vocabulary minus `a`.
        let x = rng.random_range(0..v as u32 - 1);
        if x >= a {
            x + 1
        } else {
            x
        }
    };

    let mut prompts = Vec::with_capacity(params.n);
    for _ in 0..params.n {
        let a = rng.random_range(0..v as u32);
        let b = other(&mut rng, a);
        let (np, ns) = (
            rng.random_range(prefix.clone()),
            rng.random_range(suffix.clone()),
        );
        let mut tokens = Vec::with_capacity(np + ns + 3);
        tokens.extend((0..np).map(|_| other(&mut rng, a)));
        tokens.push(a);
        tokens.push(b);
        tokens.extend((0..ns).map(|_| other(&mut rng, a)));
        tokens.push(a);
        prompts.push(InductionPrompt {
            tokens,
            b_token: b,
            ab_offset_pos: np + 1,
        });
    }
    TaskSet::new(
        TaskItems::Induction(prompts),
        Provenance::Generator {
            generator: "induction".into(),
            seed,
            params: serde_json::to_value(params)?,
        },
    )
}
