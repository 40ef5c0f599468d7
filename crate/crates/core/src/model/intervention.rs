// SPDX-License-Identifier: MIT OR Apache-2.0

//! Head and KV-head ablations applied during a forward pass.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};

/// `(layer, head)` index. Orders lexicographically, which is also the
/// tie-breaking order used by every argmax in the toolkit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HeadRef {
    pub layer: usize,
    pub head: usize,
}

impl HeadRef {
    pub const fn new(layer: usize, head: usize) -> Self {
        Self { layer, head }
    }
}

impl fmt::Display for HeadRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}H{}", self.layer, self.head)
    }
}

/// Which query positions an ablation applies to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionScope {
    #[default]
    All,
    FinalToken,
}

impl PositionScope {
    pub(crate) fn covers(self, pos: usize, seq_len: usize) -> bool {
        match self {
            Self::All => true,
            Self::FinalToken => pos + 1 == seq_len,
        }
    }
}

/// Set of zero-ablations.
///
/// A query-head ablation sets that head's pre-projection output `z` to zero.
/// A KV-head ablation zeroes the value vectors of that KV head as read by
/// the scoped query positions, which silences every query head sharing it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionSpec {
    #[serde(default)]
    pub head_ablations: BTreeSet<HeadRef>,
    #[serde(default)]
    pub kv_ablations: BTreeSet<HeadRef>,
    #[serde(default)]
    pub scope: PositionScope,
}

impl InterventionSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn heads(heads: impl IntoIterator<Item = HeadRef>) -> Self {
        Self {
            head_ablations: heads.into_iter().collect(),
            ..Self::default()
        }
    }

    pub fn kv_heads(kv: impl IntoIterator<Item = HeadRef>) -> Self {
        Self {
            kv_ablations: kv.into_iter().collect(),
            ..Self::default()
        }
    }

    /// All query heads of `layer`.
    pub fn whole_layer(config: &ModelConfig, layer: usize) -> Self {
        Self::heads((0..config.n_heads).map(|h| HeadRef::new(layer, h)))
    }

    /// The query heads served by KV head `kv` of `layer`.
    pub fn query_group(config: &ModelConfig, layer: usize, kv: usize) -> Self {
        Self::heads(config.query_heads_of(kv).map(|h| HeadRef::new(layer, h)))
    }

    pub fn with_scope(mut self, scope: PositionScope) -> Self {
        self.scope = scope;
        self
    }

    pub fn is_empty(&self) -> bool {
        self.head_ablations.is_empty() && self.kv_ablations.is_empty()
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        for h in &self.head_ablations {
            if h.layer >= config.n_layers || h.head >= config.n_heads {
                return Err(Error::OutOfBounds(format!(
                    "head ablation {h} outside {}×{}",
                    config.n_layers, config.n_heads
                )));
            }
        }
        for kv in &self.kv_ablations {
            if kv.layer >= config.n_layers || kv.head >= config.n_kv_heads {
                return Err(Error::OutOfBounds(format!(
                    "kv ablation {kv} outside {}×{}",
                    config.n_layers, config.n_kv_heads
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn head_ablated(&self, layer: usize, head: usize) -> bool {
        self.head_ablations.contains(&HeadRef::new(layer, head))
    }

    pub(crate) fn kv_ablated(&self, layer: usize, kv: usize) -> bool {
        self.kv_ablations.contains(&HeadRef::new(layer, kv))
    }

    pub(crate) fn touches_layer(&self, layer: usize) -> bool {
        self.head_ablations.iter().any(|h| h.layer == layer)
            || self.kv_ablations.iter().any(|h| h.layer == layer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{MlpStyle, NormStyle, Positional, ResidualStyle};

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 8,
            n_kv_heads: 2,
            d_model: 16,
            d_head: 2,
            vocab_size: 10,
            d_mlp: 0,
            norm_style: NormStyle::Identity,
            norm_eps: 1e-5,
            residual_style: ResidualStyle::Serial,
            mlp_style: MlpStyle::None,
            positional: Positional::None,
            qkv_bias: false,
            o_bias: false,
            mlp_bias: false,
            unembed_bias: false,
        }
    }

    #[test]
    fn query_group_of_kv_head() {
        let s = InterventionSpec::query_group(&cfg(), 1, 1);
        let heads: Vec<_> = s.head_ablations.iter().map(|h| h.head).collect();
        assert_eq!(heads, vec![4, 5, 6, 7]);
    }

    #[test]
    fn bounds_are_checked() {
        let c = cfg();
        assert!(InterventionSpec::heads([HeadRef::new(2, 0)])
            .validate(&c)
            .is_err());
        assert!(InterventionSpec::kv_heads([HeadRef::new(0, 2)])
            .validate(&c)
            .is_err());
        assert!(InterventionSpec::kv_heads([HeadRef::new(1, 1)])
            .validate(&c)
            .is_ok());
    }

    #[test]
    fn head_ref_order_is_lexicographic() {
        assert!(HeadRef::new(0, 7) < HeadRef::new(1, 0));
        assert!(HeadRef::new(1, 0) < HeadRef::new(1, 1));
    }
}
