// SPDX-License-Identifier: MIT OR Apache-2.0

//! Hand-built models whose circuits are known by construction.
//!
//! Both builders lay the residual stream out as disjoint one-hot subspaces,
//! use identity norms and no MLP, so every head's contribution can be
//! written down in closed form.
//!
//! **Induction model** (`d_model = 3V + N`):
//!
//! | subspace | range            | written by                         |
//! |----------|------------------|------------------------------------|
//! | token    | `[0, V)`         | token embedding                    |
//! | position | `[V, V+N)`       | position embedding                 |
//! | previous | `[V+N, 2V+N)`    | previous-token head `(0, p*)`      |
//! | output   | `[2V+N, 3V+N)`   | induction head `(1, i*)`           |
//!
//! The unembedding reads `γ·(output − token) + κ·previous`: the copied token
//! is promoted, the current token demoted, and the token just before the
//! final position gets a smaller recency bonus `κ`. Without the induction
//! head the model guesses that preceding token, which is worse than chance.
//! Without the previous-token head the induction head attends to its own
//! position, the copy cancels against the demotion, and the logits are flat.

use crate::error::{Error, Result};
use crate::model::{slot_specs, Model, ModelConfig, ModelWeights};
use crate::model::{MlpStyle, NormStyle, Positional, ResidualStyle};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Attention layout of a synthetic model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AttentionVariant {
    Mha,
    Gqa { n_kv: usize },
}

/// Parameters of the two-head induction circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticCircuitSpec {
    pub vocab_size: usize,
    /// Maximum sequence length (size of the position subspace).
    pub seq_capacity: usize,
    /// Total layers; layers past the second carry only zero heads.
    pub n_layers: usize,
    pub n_heads: usize,
    /// Previous-token head index in layer 0.
    pub prev_head: usize,
    /// Induction head index in layer 1.
    pub induction_head: usize,
    /// Attention sharpness: matching scores sit `beta` above the rest.
    pub beta: f64,
    pub logit_scale: f64,
    /// Logit given to the token preceding the final position. With the
    /// induction head silenced the model falls back on this guess, which is
    /// worse than chance; with the previous-token head silenced the guess
    /// disappears as well and the loss sits at chance.
    pub recency_logit: f64,
    pub attention: AttentionVariant,
    /// Residual width; `None` uses the minimum `3V + N`.
    pub d_model: Option<usize>,
}

impl Default for SyntheticCircuitSpec {
    fn default() -> Self {
        Self {
            vocab_size: 50,
            seq_capacity: 64,
            n_layers: 2,
            n_heads: 4,
            prev_head: 1,
            induction_head: 2,
            beta: 30.0,
            logit_scale: 10.0,
            recency_logit: 5.0,
            attention: AttentionVariant::Mha,
            d_model: None,
        }
    }
}

fn zero_weights<T: Scalar>(config: &ModelConfig) -> Result<ModelWeights<T>> {
    let map: BTreeMap<String, Tensor<T>> = slot_specs(config)
        .into_iter()
        .map(|s| (s.name, Tensor::zeros(s.shape)))
        .collect();
    ModelWeights::from_slots(config, map)
}

fn set<T: Scalar>(t: &mut Tensor<T>, r: usize, c: usize, v: f64) {
    let cols = t.shape()[1];
    t.data_mut()[r * cols + c] = T::of(v);
}

fn bare_config(
    n_layers: usize,
    n_heads: usize,
    n_kv_heads: usize,
    d_model: usize,
    d_head: usize,
    vocab_size: usize,
    n_ctx: usize,
    unembed_bias: bool,
) -> ModelConfig {
    ModelConfig {
        n_layers,
        n_heads,
        n_kv_heads,
        d_model,
        d_head,
        vocab_size,
        d_mlp: 0,
        norm_style: NormStyle::Identity,
        norm_eps: 1e-5,
        residual_style: ResidualStyle::Serial,
        mlp_style: MlpStyle::None,
        positional: Positional::AbsoluteLearned { n_ctx },
        qkv_bias: false,
        o_bias: false,
        mlp_bias: false,
        unembed_bias,
    }
}

impl SyntheticCircuitSpec {
    pub fn n_kv_heads(&self) -> usize {
        match self.attention {
            AttentionVariant::Mha => self.n_heads,
            AttentionVariant::Gqa { n_kv } => n_kv,
        }
    }

    pub fn with_attention(mut self, attention: AttentionVariant) -> Self {
        self.attention = attention;
        self
    }

    pub fn with_layers(mut self, n_layers: usize) -> Self {
        self.n_layers = n_layers;
        self
    }

    fn check(&self) -> Result<usize> {
        let (v, n) = (self.vocab_size, self.seq_capacity);
        if v < 2 || n < 2 {
            return Err(Error::InvalidParameter(
                "vocab_size and seq_capacity must be at least 2".into(),
            ));
        }
        if self.n_layers < 2 {
            return Err(Error::InvalidParameter(
                "induction circuit needs 2 layers".into(),
            ));
        }
        if self.prev_head >= self.n_heads || self.induction_head >= self.n_heads {
            return Err(Error::OutOfBounds(format!(
                "circuit heads p*={} i*={} outside {} heads",
                self.prev_head, self.induction_head, self.n_heads
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParameter("beta must be positive".into()));
        }
        let need = 3 * v + n;
        let d = self.d_model.unwrap_or(need);
        if d < need {
            return Err(Error::Capacity(format!(
                "d_model {d} cannot hold token, position, previous-token and output \
                 subspaces ({need} = 3·{v} + {n})"
            )));
        }
        Ok(d)
    }

    pub fn config(&self) -> Result<ModelConfig> {
        let d = self.check()?;
        let cfg = bare_config(
            self.n_layers,
            self.n_heads,
            self.n_kv_heads(),
            d,
            self.vocab_size + self.seq_capacity,
            self.vocab_size,
            self.seq_capacity,
            false,
        );
        cfg.validate()?;
        Ok(cfg)
    }

    /// Builds the model.
    pub fn build<T: Scalar>(&self) -> Result<Model<T>> {
        let cfg = self.config()?;
        let (v, n) = (self.vocab_size, self.seq_capacity);
        let dh = cfg.d_head;
        let (tok, pos, prev, out) = (0, v, v + n, 2 * v + n);
        let sharp = self.beta * (dh as f64).sqrt();
        let mut w: ModelWeights<T> = zero_weights(&cfg)?;

        for a in 0..v {
            set(&mut w.embed, a, tok + a, 1.0);
            set(&mut w.unembed, out + a, a, self.logit_scale);
            set(&mut w.unembed, tok + a, a, -self.logit_scale);
            set(&mut w.unembed, prev + a, a, self.recency_logit);
        }
        let pe = w.pos_embed.as_mut().expect("absolute positions");
        for t in 0..n {
            set(pe, t, pos + t, 1.0);
        }

        // Previous-token head: query at t looks for key position t-1.
        {
            let p = self.prev_head;
            let (qc, kc) = (p * dh, cfg.kv_head_of(p) * dh);
            let a = &mut w.layers[0].attn;
            for t in 1..n {
                set(&mut a.wq, pos + t, qc + v + t - 1, sharp);
            }
            for s in 0..n {
                set(&mut a.wk, pos + s, kc + v + s, 1.0);
            }
            for x in 0..v {
                set(&mut a.wv, tok + x, kc + x, 1.0);
                set(&mut a.wo, qc + x, prev + x, 1.0);
            }
        }

        // Induction head: the current token matches keys whose previous
        // token equals it; the query's own position is a weaker fallback.
        {
            let i = self.induction_head;
            let (qc, kc) = (i * dh, cfg.kv_head_of(i) * dh);
            let a = &mut w.layers[1].attn;
            for x in 0..v {
                set(&mut a.wq, tok + x, qc + x, sharp);
                set(&mut a.wk, prev + x, kc + x, 1.0);
                // Position 0 has no predecessor; cancel whatever the
                // previous-token head wrote there.
                set(&mut a.wk, pos, kc + x, -1.0);
                set(&mut a.wv, tok + x, kc + x, 1.0);
                set(&mut a.wo, qc + x, out + x, 1.0);
            }
            for t in 0..n {
                set(&mut a.wq, pos + t, qc + v + t, sharp / 2.0);
                set(&mut a.wk, pos + t, kc + v + t, 1.0);
            }
        }

        Model::new(cfg, w)
    }
}

// ----------------------------------------------------------------------------
// Planted facts
// ----------------------------------------------------------------------------

/// A single-layer model that answers `(subject, answer)` facts.
///
/// The writer head attends from every position to position 0 and maps the
/// subject token found there onto the answer's logit. A small positive
/// unembedding bias on the decoy tokens outranks the answer once the writer
/// is ablated, so top-k accuracy collapses for `k ≤ decoys.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedFactSpec {
    pub vocab_size: usize,
    pub seq_capacity: usize,
    pub n_heads: usize,
    pub writer_head: usize,
    /// `(subject token, answer token)` pairs.
    pub facts: Vec<(u32, u32)>,
    pub decoys: Vec<u32>,
    pub beta: f64,
    pub logit_scale: f64,
}

impl Default for PlantedFactSpec {
    fn default() -> Self {
        Self {
            vocab_size: 40,
            seq_capacity: 16,
            n_heads: 2,
            writer_head: 1,
            facts: vec![(10, 30), (11, 31), (12, 32), (13, 33)],
            decoys: vec![0, 1, 2],
            beta: 30.0,
            logit_scale: 10.0,
        }
    }
}

impl PlantedFactSpec {
    pub fn config(&self) -> Result<ModelConfig> {
        let (v, n) = (self.vocab_size, self.seq_capacity);
        if self.writer_head >= self.n_heads {
            return Err(Error::OutOfBounds(format!(
                "writer head {} outside {} heads",
                self.writer_head, self.n_heads
            )));
        }
        for &(s, a) in &self.facts {
            if s as usize >= v || a as usize >= v {
                return Err(Error::OutOfBounds(format!(
                    "fact ({s}, {a}) outside vocab {v}"
                )));
            }
            if self.decoys.contains(&a) {
                return Err(Error::InvalidParameter(format!(
                    "answer {a} is also a decoy"
                )));
            }
        }
        if let Some(d) = self.decoys.iter().find(|d| **d as usize >= v) {
            return Err(Error::OutOfBounds(format!("decoy {d} outside vocab {v}")));
        }
        let cfg = bare_config(1, self.n_heads, self.n_heads, 2 * v + n, v + 1, v, n, true);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn build<T: Scalar>(&self) -> Result<Model<T>> {
        let cfg = self.config()?;
        let (v, n) = (self.vocab_size, self.seq_capacity);
        let dh = cfg.d_head;
        let (tok, pos, out) = (0, v, v + n);
        let sharp = self.beta * (dh as f64).sqrt();
        let mut w: ModelWeights<T> = zero_weights(&cfg)?;

        for a in 0..v {
            set(&mut w.embed, a, tok + a, 1.0);
            set(&mut w.unembed, out + a, a, self.logit_scale);
        }
        let pe = w.pos_embed.as_mut().expect("absolute positions");
        for t in 0..n {
            set(pe, t, pos + t, 1.0);
        }
        let bias = w.unembed_bias.as_mut().expect("unembed bias");
        for &d in &self.decoys {
            bias.data_mut()[d as usize] = T::of(1.0);
        }

        let c = self.writer_head * dh;
        let a = &mut w.layers[0].attn;
        for t in 0..n {
            set(&mut a.wq, pos + t, c + v, sharp);
        }
        set(&mut a.wk, pos, c + v, 1.0);
        for x in 0..v {
            set(&mut a.wv, tok + x, c + x, 1.0);
        }
        for &(s, ans) in &self.facts {
            set(&mut a.wo, c + s as usize, out + ans as usize, 1.0);
        }
        Model::new(cfg, w)
    }
}
