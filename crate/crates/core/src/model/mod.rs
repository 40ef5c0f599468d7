// SPDX-License-Identifier: MIT OR Apache-2.0

//! Decoder-only transformer with configurable attention (MHA/GQA), norm,
//! residual and MLP styles, plus activation capture and head ablation.

pub mod config;
pub mod forward;
pub mod intervention;
pub mod weights;

pub use config::{MlpStyle, ModelConfig, NormStyle, Positional, ResidualStyle};
pub use forward::{
    AttentionRouting, Capture, ForwardOptions, ForwardResult, LayerCache, LogitScope,
};
pub use intervention::{HeadRef, InterventionSpec, PositionScope};
pub use weights::{
    expand_kv_to_mha, slot_specs, AttentionWeights, LayerWeights, MlpWeights, ModelWeights,
    NormParams, SlotSpec,
};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Immutable config + weights pair; shareable across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    weights: ModelWeights<T>,
}

impl<T: Scalar> Model<T> {
    /// Pairs `weights` with `config`, checking every slot shape.
    pub fn new(config: ModelConfig, weights: ModelWeights<T>) -> Result<Self> {
        config.validate()?;
        let specs = slot_specs(&config);
        let slots = weights.to_slots();
        if specs.len() != slots.len() {
            return Err(Error::Config(format!(
                "weights carry {} slots, config expects {}",
                slots.len(),
                specs.len()
            )));
        }
        for (spec, (name, t)) in specs.iter().zip(&slots) {
            if spec.name != *name || spec.shape != t.shape() {
                return Err(Error::TensorShape {
                    name: name.clone(),
                    expected: spec.shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
        }
        if weights.layers.len() != config.n_layers {
            return Err(Error::Config("layer count mismatch".into()));
        }
        Ok(Self { config, weights })
    }

    /// Random model, deterministic in `seed`.
    pub fn random(config: ModelConfig, seed: u64, scale: f64) -> Result<Self> {
        let weights = ModelWeights::random(&config, seed, scale)?;
        Self::new(config, weights)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &ModelWeights<T> {
        &self.weights
    }

    pub fn into_parts(self) -> (ModelConfig, ModelWeights<T>) {
        (self.config, self.weights)
    }

    /// Same model with K/V blocks replicated per query head.
    pub fn to_mha_layout(&self) -> Result<Self> {
        let (c, w) = expand_kv_to_mha(&self.config, &self.weights)?;
        Self::new(c, w)
    }

    pub fn cast<U: Scalar>(&self) -> Result<Model<U>> {
        Model::new(self.config.clone(), self.weights.cast(&self.config)?)
    }
}
