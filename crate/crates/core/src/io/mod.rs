// SPDX-License-Identifier: MIT OR Apache-2.0

//! Model sources: safetensors checkpoints and synthetic circuit models.

pub mod checkpoint;
pub mod synthetic;

pub use checkpoint::{
    export_model, load_checkpoint, load_checkpoint_bytes, model_to_safetensors, weights_digest,
    CheckpointManifest, LinearLayout, LoadedCheckpoint, SlotTargets,
};
pub use synthetic::{AttentionVariant, PlantedFactSpec, SyntheticCircuitSpec};
