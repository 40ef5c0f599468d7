// SPDX-License-Identifier: MIT OR Apache-2.0

//! Greedy ablation curves and heads-to-threshold counts.

use serde::{Deserialize, Serialize};

use super::eval::{damages_with, units_of, AblationUnit, Baseline, EvalOptions, Normalization};
use super::metrics::{MetricKind, MetricValue};
use crate::error::{Error, Result};
use crate::model::{HeadRef, Model};
use crate::scalar::Scalar;
use crate::tasks::TaskSet;

/// Which units the greedy search may pick after the first step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "size", rename_all = "snake_case")]
pub enum CandidatePool {
    /// The `n` best units by single-ablation damage.
    Top(usize),
    /// Every unit.
    All,
}

impl Default for CandidatePool {
    fn default() -> Self {
        Self::Top(64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GreedyOptions {
    pub budget: usize,
    pub pool: CandidatePool,
    /// Stop once cumulative damage reaches this value.
    pub early_stop: Option<f64>,
    pub unit: AblationUnit,
    pub eval: EvalOptions,
}

impl Default for GreedyOptions {
    fn default() -> Self {
        Self {
            budget: 20,
            pool: CandidatePool::default(),
            early_stop: Some(0.8),
            unit: AblationUnit::Head,
            eval: EvalOptions::default(),
        }
    }
}

/// One greedy step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveStep {
    pub unit: HeadRef,
    /// Cumulative damage after this step, normalized per the curve.
    pub damage: f64,
    /// Change from the previous step; may be negative.
    pub marginal: f64,
    /// Cumulative damage in metric units.
    pub raw_damage: f64,
}

/// Ordered greedy ablation sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCurve {
    pub label: String,
    pub metric: MetricKind,
    pub unit: AblationUnit,
    pub baseline: MetricValue,
    pub normalization: Normalization,
    pub budget: usize,
    pub pool: CandidatePool,
    pub steps: Vec<CurveStep>,
    /// True when the search stopped at the early-stop threshold.
    pub early_stopped: bool,
}

impl AblationCurve {
    pub fn damages(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.damage).collect()
    }

    pub fn units(&self) -> Vec<HeadRef> {
        self.steps.iter().map(|s| s.unit).collect()
    }

    /// Whether some marginal was negative, i.e. the curve is not monotone.
    pub fn has_negative_marginal(&self) -> bool {
        self.steps.iter().any(|s| s.marginal < 0.0)
    }
}

/// Outcome of [`heads_to_threshold`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "status", content = "value", rename_all = "snake_case")]
pub enum HeadsToThreshold {
    Reached(usize),
    ExceedsBudget(usize),
}

impl HeadsToThreshold {
    pub fn count(self) -> Option<usize> {
        match self {
            Self::Reached(k) => Some(k),
            Self::ExceedsBudget(_) => None,
        }
    }
}

impl std::fmt::Display for HeadsToThreshold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Reached(k) => write!(f, "{k}"),
            Self::ExceedsBudget(b) => write!(f, ">{b}"),
        }
    }
}

/// Smallest `k` with `damages[k-1] ≥ theta`.
pub fn first_reaching(damages: &[f64], budget: usize, theta: f64) -> HeadsToThreshold {
    damages
        .iter()
        .position(|d| *d >= theta)
        .map_or(HeadsToThreshold::ExceedsBudget(budget), |i| {
            HeadsToThreshold::Reached(i + 1)
        })
}

/// Heads needed to reach `theta`. Curves in absolute-damage mode have no
/// meaningful ratio and always report the budget as exceeded.
pub fn heads_to_threshold(curve: &AblationCurve, theta: f64) -> HeadsToThreshold {
    if curve.normalization.is_absolute() {
        return HeadsToThreshold::ExceedsBudget(curve.budget);
    }
    first_reaching(&curve.damages(), curve.budget, theta)
}

/// Index of the largest value, ties to the lowest index (`units` are sorted).
fn best(values: &[f64]) -> Result<usize> {
    let mut bi = 0;
    for (i, v) in values.iter().enumerate() {
        if v.is_nan() {
            return Err(Error::NonFinite("greedy damage".into()));
        }
        if *v > values[bi] {
            bi = i;
        }
    }
    Ok(bi)
}

/// Greedy ablation over the whole task.
///
/// Each step adds the candidate whose ablation, together with every unit
/// already chosen, maximizes damage over the full task set. The first step
/// scores every unit; with [`CandidatePool::Top`] later steps consider only
/// the best `n` of those.
pub fn greedy_curve<T: Scalar>(
    model: &Model<T>,
    task: &TaskSet,
    metric: MetricKind,
    opts: &GreedyOptions,
) -> Result<AblationCurve> {
    let metric = metric.task_metric();
    let baseline = Baseline::measure(model, task, metric, &opts.eval)?;
    let norm = baseline.normalization;
    let mut candidates = units_of(model, opts.unit);
    let mut chosen: Vec<HeadRef> = Vec::new();
    let mut steps: Vec<CurveStep> = Vec::new();
    let mut early_stopped = false;

    for step in 0..opts.budget {
        let remaining: Vec<HeadRef> = candidates
            .iter()
            .filter(|c| !chosen.contains(c))
            .copied()
            .collect();
        if remaining.is_empty() {
            break;
        }
        let raw = damages_with(
            model, task, &baseline, opts.unit, &chosen, &remaining, &opts.eval,
        )?;
        let pick = best(&raw)?;
        if step == 0 {
            if let CandidatePool::Top(n) = opts.pool {
                let mut order: Vec<usize> = (0..remaining.len()).collect();
                order.sort_by(|a, b| {
                    raw[*b]
                        .total_cmp(&raw[*a])
                        .then(remaining[*a].cmp(&remaining[*b]))
                });
                let mut pool: Vec<HeadRef> = order
                    .into_iter()
                    .take(n.max(1))
                    .map(|i| remaining[i])
                    .collect();
                pool.sort();
                candidates = pool;
            }
        }
        let damage = norm.apply(raw[pick]);
        let prev = steps.last().map_or(0.0, |s| s.damage);
        steps.push(CurveStep {
            unit: remaining[pick],
            damage,
            marginal: damage - prev,
            raw_damage: raw[pick],
        });
        chosen.push(remaining[pick]);
        if let Some(theta) = opts.early_stop {
            if !norm.is_absolute() && damage >= theta {
                early_stopped = true;
                break;
            }
        }
    }
    Ok(AblationCurve {
        label: String::new(),
        metric,
        unit: opts.unit,
        baseline: baseline.value,
        normalization: norm,
        budget: opts.budget,
        pool: opts.pool,
        steps,
        early_stopped,
    })
}
