// SPDX-License-Identifier: MIT OR Apache-2.0

//! Task evaluation under an intervention, and damage relative to baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{fact_hit, icl_loss, logit_diff, mean, MetricKind, MetricValue};
use crate::error::{Error, Result};
use crate::model::{ForwardOptions, HeadRef, InterventionSpec, Model, PositionScope};
use crate::scalar::Scalar;
use crate::tasks::{TaskItems, TaskSet};

/// Settings shared by every measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// `k` for top-k accuracy.
    pub top_k: usize,
    /// Positions at which ablations apply.
    pub scope: PositionScope,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            top_k: 3,
            scope: PositionScope::All,
        }
    }
}

/// What a single ablation removes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationUnit {
    /// One query head.
    #[default]
    Head,
    /// One KV head, silencing its whole query group.
    KvHead,
}

impl AblationUnit {
    /// Every unit of the model in `(layer, index)` order.
    pub fn all(self, model_heads: (usize, usize, usize)) -> Vec<HeadRef> {
        let (layers, heads, kv) = model_heads;
        let per = match self {
            Self::Head => heads,
            Self::KvHead => kv,
        };
        (0..layers)
            .flat_map(|l| (0..per).map(move |h| HeadRef::new(l, h)))
            .collect()
    }

    pub fn spec(self, units: &[HeadRef], scope: PositionScope) -> InterventionSpec {
        let s = match self {
            Self::Head => InterventionSpec::heads(units.iter().copied()),
            Self::KvHead => InterventionSpec::kv_heads(units.iter().copied()),
        };
        s.with_scope(scope)
    }
}

pub(crate) fn units_of<T: Scalar>(model: &Model<T>, unit: AblationUnit) -> Vec<HeadRef> {
    let c = model.config();
    unit.all((c.n_layers, c.n_heads, c.n_kv_heads))
}

/// How cumulative damage is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Normalization {
    /// Damage divided by the available headroom (baseline value for
    /// logit difference and accuracy, `ln V − baseline` for ICL loss).
    Ratio { denominator: f64 },
    /// Headroom is not positive; damage is reported in metric units.
    Absolute,
}

impl Normalization {
    pub fn apply(self, raw: f64) -> f64 {
        match self {
            Self::Ratio { denominator } => raw / denominator,
            Self::Absolute => raw,
        }
    }

    pub fn is_absolute(self) -> bool {
        matches!(self, Self::Absolute)
    }
}

/// Per-prompt values of `metric`'s task metric under `spec`.
pub fn per_prompt_values<T: Scalar>(
    model: &Model<T>,
    task: &TaskSet,
    metric: MetricKind,
    spec: &InterventionSpec,
    opts: &EvalOptions,
) -> Result<Vec<f64>> {
    metric.check_task(task.kind())?;
    let prompts = task.token_lists();
    let results = model.forward_batch(&prompts, spec, &ForwardOptions::final_only());
    let mut out = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        let r = r?;
        let v = match task.items() {
            TaskItems::Ioi(p) => logit_diff(&r, &p[i])?,
            TaskItems::Induction(p) => icl_loss(&r, &p[i])?,
            TaskItems::Factual(p) => fact_hit(&r, &p[i], opts.top_k)?,
        };
        if !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "{} on prompt {i}",
                metric.task_metric()
            )));
        }
        out.push(v);
    }
    Ok(out)
}

/// Mean task metric under `spec`.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    task: &TaskSet,
    metric: MetricKind,
    spec: &InterventionSpec,
    opts: &EvalOptions,
) -> Result<MetricValue> {
    let v = per_prompt_values(model, task, metric, spec, opts)?;
    Ok(MetricValue {
        kind: metric.task_metric(),
        value: mean(&v),
        n: v.len(),
    })
}

/// Unablated per-prompt values plus the derived normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub per_prompt: Vec<f64>,
    pub value: MetricValue,
    pub normalization: Normalization,
    metric: MetricKind,
}

impl Baseline {
    pub fn measure<T: Scalar>(
        model: &Model<T>,
        task: &TaskSet,
        metric: MetricKind,
        opts: &EvalOptions,
    ) -> Result<Self> {
        let per_prompt = per_prompt_values(model, task, metric, &InterventionSpec::none(), opts)?;
        let value = MetricValue {
            kind: metric.task_metric(),
            value: mean(&per_prompt),
            n: per_prompt.len(),
        };
        let headroom = if metric.lower_is_better() {
            (model.config().vocab_size as f64).ln() - value.value
        } else {
            value.value
        };
        let normalization = if headroom > 0.0 {
            Normalization::Ratio {
                denominator: headroom,
            }
        } else {
            Normalization::Absolute
        };
        Ok(Self {
            per_prompt,
            value,
            normalization,
            metric: metric.task_metric(),
        })
    }

    /// Mean signed per-prompt damage of `ablated` values; positive means
    /// the task got worse.
    pub fn raw_damage(&self, ablated: &[f64]) -> f64 {
        let d: Vec<f64> = self
            .per_prompt
            .iter()
            .zip(ablated)
            .map(|(b, a)| {
                if self.metric.lower_is_better() {
                    a - b
                } else {
                    b - a
                }
            })
            .collect();
        mean(&d)
    }

    pub fn metric(&self) -> MetricKind {
        self.metric
    }
}

/// Raw and normalized damage of `spec` relative to `baseline`.
pub(crate) fn damage_of<T: Scalar>(
    model: &Model<T>,
    task: &TaskSet,
    baseline: &Baseline,
    spec: &InterventionSpec,
    opts: &EvalOptions,
) -> Result<(f64, Vec<f64>)> {
    let v = per_prompt_values(model, task, baseline.metric(), spec, opts)?;
    Ok((baseline.raw_damage(&v), v))
}

/// Raw damage of every `units[i] ∪ ablated`, computed in parallel and
/// returned in input order.
pub(crate) fn damages_with<T: Scalar>(
    model: &Model<T>,
    task: &TaskSet,
    baseline: &Baseline,
    unit: AblationUnit,
    ablated: &[HeadRef],
    candidates: &[HeadRef],
    opts: &EvalOptions,
) -> Result<Vec<f64>> {
    candidates
        .par_iter()
        .map(|c| {
            let mut set = ablated.to_vec();
            set.push(*c);
            damage_of(model, task, baseline, &unit.spec(&set, opts.scope), opts).map(|d| d.0)
        })
        .collect()
}
