// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{RopeParams, RopeStyle};

/// Normalization applied before attention, before the MLP and before the
/// unembedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormStyle {
    LayerNorm,
    RmsNorm,
    /// No normalization (synthetic models).
    Identity,
}

/// How attention and MLP outputs are combined with the residual stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualStyle {
    /// `x += attn(norm(x)); x += mlp(norm(x))`.
    Serial,
    /// `x += attn(norm₁(x)) + mlp(norm₂(x))`, both reading the layer input.
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlpStyle {
    Gelu,
    SiluGated,
    /// Attention-only model.
    None,
}

/// Positional information injected into the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Positional {
    None,
    AbsoluteLearned {
        n_ctx: usize,
    },
    Rotary {
        base: f64,
        /// Rotated width per head; `None` means the full head width.
        #[serde(default)]
        rotary_dim: Option<usize>,
        #[serde(default = "default_rope_style")]
        style: RopeStyle,
    },
}

fn default_rope_style() -> RopeStyle {
    RopeStyle::Half
}

fn default_eps() -> f64 {
    1e-5
}

/// Architecture description of a decoder-only transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub vocab_size: usize,
    #[serde(default)]
    pub d_mlp: usize,
    pub norm_style: NormStyle,
    #[serde(default = "default_eps")]
    pub norm_eps: f64,
    pub residual_style: ResidualStyle,
    pub mlp_style: MlpStyle,
    pub positional: Positional,
    #[serde(default)]
    pub qkv_bias: bool,
    #[serde(default)]
    pub o_bias: bool,
    #[serde(default)]
    pub mlp_bias: bool,
    #[serde(default)]
    pub unembed_bias: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let nonzero = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("d_model", self.d_model),
            ("d_head", self.d_head),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = nonzero.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return Err(Error::Config(format!(
                "n_heads ({}) must be a multiple of n_kv_heads ({})",
                self.n_heads, self.n_kv_heads
            )));
        }
        if self.mlp_style != MlpStyle::None && self.d_mlp == 0 {
            return Err(Error::Config(
                "d_mlp must be positive when an MLP is present".into(),
            ));
        }
        if !(self.norm_eps > 0.0) && self.norm_style != NormStyle::Identity {
            return Err(Error::Config("norm_eps must be positive".into()));
        }
        match self.positional {
            Positional::AbsoluteLearned { n_ctx: 0 } => {
                return Err(Error::Config("n_ctx must be positive".into()));
            }
            Positional::Rotary { rotary_dim, .. } => {
                let rd = rotary_dim.unwrap_or(self.d_head);
                if rd % 2 != 0 || rd > self.d_head {
                    return Err(Error::Config(format!(
                        "rotary_dim {rd} must be even and at most d_head {}",
                        self.d_head
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Query heads per KV head, `r = n_heads / n_kv_heads`.
    pub fn sharing_ratio(&self) -> usize {
        self.n_heads / self.n_kv_heads
    }

    /// KV head serving query head `head`: `⌊head / r⌋`.
    pub fn kv_head_of(&self, head: usize) -> usize {
        head / self.sharing_ratio()
    }

    /// Query heads served by KV head `kv`.
    pub fn query_heads_of(&self, kv: usize) -> std::ops::Range<usize> {
        let r = self.sharing_ratio();
        kv * r..(kv + 1) * r
    }

    pub fn is_mha(&self) -> bool {
        self.n_kv_heads == self.n_heads
    }

    pub fn q_width(&self) -> usize {
        self.n_heads * self.d_head
    }

    pub fn kv_width(&self) -> usize {
        self.n_kv_heads * self.d_head
    }

    pub fn has_norm_bias(&self) -> bool {
        self.norm_style == NormStyle::LayerNorm
    }

    pub fn rope(&self) -> Option<RopeParams> {
        match self.positional {
            Positional::Rotary {
                base,
                rotary_dim,
                style,
            } => Some(RopeParams {
                base,
                rotary_dim: rotary_dim.unwrap_or(self.d_head),
                style,
            }),
            _ => None,
        }
    }

    /// Maximum sequence length, if the positional scheme imposes one.
    pub fn max_positions(&self) -> Option<usize> {
        match self.positional {
            Positional::AbsoluteLearned { n_ctx } => Some(n_ctx),
            _ => None,
        }
    }

    /// Total number of query heads across all layers.
    pub fn total_heads(&self) -> usize {
        self.n_layers * self.n_heads
    }
}
