// SPDX-License-Identifier: MIT OR Apache-2.0

//! # circuitscope
//!
//! Ablation-based circuit localization for decoder-only transformers.
//!
//! The crate bundles a small hooked inference engine (multi-head and
//! grouped-query attention, LayerNorm/RMSNorm, serial or parallel residual,
//! GELU or gated-SiLU MLP, learned or rotary positions) with the measurement
//! pipeline built on top of it:
//!
//! - per-head contribution scores ([`localize::score_heads`]),
//! - greedy ablation curves and heads-to-threshold counts,
//! - whole-layer ablation profiles and KV-head diagnostics,
//! - negative controls,
//!
//! over three task families (indirect object identification, induction on
//! repeated random tokens, and single-token factual recall).
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the production precision of `f32`.
//!
//! ```
//! use circuitscope::{io::synthetic::SyntheticCircuitSpec, Model32};
//!
//! let spec = SyntheticCircuitSpec::default();
//! let model: Model32 = spec.build().unwrap();
//! assert_eq!(model.config().n_layers, 2);
//! ```

pub mod error;
pub mod io;
pub mod localize;
pub mod model;
pub mod report;
pub mod scalar;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{
    Capture, ForwardOptions, ForwardResult, HeadRef, InterventionSpec, Model, ModelConfig,
    ModelWeights, PositionScope,
};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Toolkit version recorded in every run record.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Production precision.
pub type Tensor32 = Tensor<f32>;
pub type Model32 = Model<f32>;
pub type ModelWeights32 = ModelWeights<f32>;
pub type ForwardResult32 = ForwardResult<f32>;

/// Double precision, used as a reference in tests.
pub type Tensor64 = Tensor<f64>;
pub type Model64 = Model<f64>;
