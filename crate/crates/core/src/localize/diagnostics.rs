// SPDX-License-Identifier: MIT OR Apache-2.0

//! Whole-layer profiles, KV-head diagnostics and negative controls.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{damage_of, Baseline, EvalOptions, Normalization};
use super::metrics::{mean, mean_icl_advantage, MetricKind, MetricValue};
use super::scoring::score_heads;
use crate::error::{Error, Result};
use crate::model::{HeadRef, InterventionSpec, Model};
use crate::scalar::Scalar;
use crate::tasks::TaskSet;

// ----------------------------------------------------------------------------
// Layer profile
// ----------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub layer: usize,
    /// Task metric with every query head of the layer ablated.
    pub value: MetricValue,
    pub damage: f64,
    /// Mean `ln V − loss` for ICL, `None` for other metrics.
    pub icl_advantage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub metric: MetricKind,
    pub baseline: MetricValue,
    pub baseline_icl_advantage: Option<f64>,
    pub normalization: Normalization,
    pub layers: Vec<LayerEntry>,
}

pub fn layer_ablation_profile<T: Scalar>(
    model: &Model<T>,
    task: &TaskSet,
    metric: MetricKind,
    opts: &EvalOptions,
) -> Result<LayerProfile> {
    let metric = metric.task_metric();
    let cfg = model.config();
    let base = Baseline::measure(model, task, metric, opts)?;
    let icl = metric == MetricKind::IclLoss;
    let advantage = |v: &[f64]| icl.then(|| mean_icl_advantage(v, cfg.vocab_size));
    let layers = (0..cfg.n_layers)
        .into_par_iter()
        .map(|l| {
            let spec = InterventionSpec::whole_layer(cfg, l).with_scope(opts.scope);
            let (raw, values) = damage_of(model, task, &base, &spec, opts)?;
            Ok(LayerEntry {
                layer: l,
                value: MetricValue {
                    kind: metric,
                    value: mean(&values),
                    n: values.len(),
                },
                damage: base.normalization.apply(raw),
                icl_advantage: advantage(&values),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LayerProfile {
        metric,
        baseline: base.value,
        baseline_icl_advantage: advantage(&base.per_prompt),
        normalization: base.normalization,
        layers,
    })
}

// ----------------------------------------------------------------------------
// KV-head diagnostic
// ----------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KvEntry {
    pub layer: usize,
    pub kv_head: usize,
    pub query_heads: Vec<usize>,
    /// Normalized damage of ablating the KV head.
    pub damage: f64,
    /// Normalized damage of ablating its query group instead.
    pub group_damage: f64,
}

/// Largest logit difference between KV and query-group ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceRow {
    pub layer: usize,
    pub kv_head: usize,
    pub prompt: usize,
    pub max_abs_logit_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KvReport {
    pub metric: MetricKind,
    pub baseline: MetricValue,
    pub normalization: Normalization,
    pub sharing_ratio: usize,
    pub entries: Vec<KvEntry>,
    pub equivalence: Vec<EquivalenceRow>,
    pub max_equivalence_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum KvDiagnostic {
    /// The model has one KV head per query head.
    NotApplicable {
        reason: String,
    },
    Report(KvReport),
}

/// Single-KV ablation damage for every KV head, plus a check on the first
/// `equivalence_sample` prompts that each KV ablation reproduces the
/// logits of ablating its query group.
pub fn kv_head_diagnostic<T: Scalar>(
    model: &Model<T>,
    task: &TaskSet,
    metric: MetricKind,
    equivalence_sample: usize,
    opts: &EvalOptions,
) -> Result<KvDiagnostic> {
    let cfg = model.config();
    if cfg.is_mha() {
        return Ok(KvDiagnostic::NotApplicable {
            reason: format!(
                "multi-head attention: each of the {} KV heads serves a single query head, \
                 so KV ablation is ordinary head ablation",
                cfg.n_kv_heads
            ),
        });
    }
    let metric = metric.task_metric();
    let base = Baseline::measure(model, task, metric, opts)?;
    let pairs: Vec<(usize, usize)> = (0..cfg.n_layers)
        .flat_map(|l| (0..cfg.n_kv_heads).map(move |k| (l, k)))
        .collect();
    let sample: Vec<Vec<u32>> = task
        .token_lists()
        .into_iter()
        .take(equivalence_sample)
        .collect();

    let per_pair = pairs
        .par_iter()
        .map(|&(l, k)| {
            let kv = InterventionSpec::kv_heads([HeadRef::new(l, k)]).with_scope(opts.scope);
            let group = InterventionSpec::query_group(cfg, l, k).with_scope(opts.scope);
            let (kv_raw, _) = damage_of(model, task, &base, &kv, opts)?;
            let (group_raw, _) = damage_of(model, task, &base, &group, opts)?;
            let mut rows = Vec::with_capacity(sample.len());
            for (i, tokens) in sample.iter().enumerate() {
                let a = model.forward(tokens, &kv, Default::default())?;
                let b = model.forward(tokens, &group, Default::default())?;
                rows.push(EquivalenceRow {
                    layer: l,
                    kv_head: k,
                    prompt: i,
                    max_abs_logit_diff: a.logits.max_abs_diff(&b.logits)?,
                });
            }
            let entry = KvEntry {
                layer: l,
                kv_head: k,
                query_heads: cfg.query_heads_of(k).collect(),
                damage: base.normalization.apply(kv_raw),
                group_damage: base.normalization.apply(group_raw),
            };
            Ok((entry, rows))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut entries = Vec::with_capacity(per_pair.len());
    let mut equivalence = Vec::new();
    for (e, rows) in per_pair {
        entries.push(e);
        equivalence.extend(rows);
    }
    let max_equivalence_error = equivalence
        .iter()
        .map(|r| r.max_abs_logit_diff)
        .fold(0.0, f64::max);
    Ok(KvDiagnostic::Report(KvReport {
        metric,
        baseline: base.value,
        normalization: base.normalization,
        sharing_ratio: cfg.sharing_ratio(),
        entries,
        equivalence,
        max_equivalence_error,
    }))
}

// ----------------------------------------------------------------------------
// Negative control
// ----------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeControl {
    pub seed: u64,
    /// Half-open layer range the head was drawn from.
    pub layers: (usize, usize),
    pub excluded: Vec<HeadRef>,
    pub head: HeadRef,
    /// Signed; negative means the ablation helped.
    pub damage: f64,
    pub raw_damage: f64,
    pub normalization: Normalization,
}

/// Middle third of `n_layers`, as a half-open range.
pub fn middle_third(n_layers: usize) -> (usize, usize) {
    (n_layers / 3, (2 * n_layers).div_ceil(3))
}

/// Ablates one head drawn uniformly (under `seed`) from the middle third
/// of layers, excluding the five best heads by single-ablation score on
/// the first `score_sample` prompts.
pub fn negative_control<T: Scalar>(
    model: &Model<T>,
    task: &TaskSet,
    metric: MetricKind,
    seed: u64,
    score_sample: usize,
    opts: &EvalOptions,
) -> Result<NegativeControl> {
    let cfg = model.config();
    if cfg.n_layers < 3 {
        return Err(Error::InvalidParameter(format!(
            "negative control needs at least 3 layers, model has {}",
            cfg.n_layers
        )));
    }
    let metric = metric.task_metric();
    let scores = score_heads(model, task, metric, score_sample.min(task.len()), opts)?;
    let excluded: Vec<HeadRef> = scores.top(5).into_iter().map(|(h, _)| h).collect();
    let (lo, hi) = middle_third(cfg.n_layers);
    let pool: Vec<HeadRef> = (lo..hi)
        .flat_map(|l| (0..cfg.n_heads).map(move |h| HeadRef::new(l, h)))
        .filter(|h| !excluded.contains(h))
        .collect();
    if pool.is_empty() {
        return Err(Error::InvalidParameter(
            "no middle-layer head remains after excluding the top five".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let head = pool[rng.random_range(0..pool.len())];
    let base = Baseline::measure(model, task, metric, opts)?;
    let spec = InterventionSpec::heads([head]).with_scope(opts.scope);
    let (raw, _) = damage_of(model, task, &base, &spec, opts)?;
    Ok(NegativeControl {
        seed,
        layers: (lo, hi),
        excluded,
        head,
        damage: base.normalization.apply(raw),
        raw_damage: raw,
        normalization: base.normalization,
    })
}
