// SPDX-License-Identifier: MIT OR Apache-2.0

//! Measurement pipeline: task metrics, head scores, greedy ablation
//! curves, layer profiles, KV-head diagnostics and negative controls.
//!
//! Per-prompt forwards run in parallel; every reduction happens afterwards
//! in prompt order, so results do not depend on thread scheduling.

pub mod diagnostics;
pub mod eval;
pub mod greedy;
pub mod metrics;
pub mod scoring;

pub use diagnostics::{
    kv_head_diagnostic, layer_ablation_profile, middle_third, negative_control, EquivalenceRow,
    KvDiagnostic, KvEntry, KvReport, LayerEntry, LayerProfile, NegativeControl,
};
pub use eval::{evaluate, per_prompt_values, AblationUnit, Baseline, EvalOptions, Normalization};
pub use greedy::{
    first_reaching, greedy_curve, heads_to_threshold, AblationCurve, CandidatePool, CurveStep,
    GreedyOptions, HeadsToThreshold,
};
pub use metrics::{
    accuracy_topk, answer_rank, cross_entropy, icl_advantage, icl_loss, induction_attention_score,
    logit_diff, mean_icl_advantage, MetricKind, MetricValue,
};
pub use scoring::{score_heads, score_kv_heads, HeadScoreMatrix};
