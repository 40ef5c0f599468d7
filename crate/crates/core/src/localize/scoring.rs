// SPDX-License-Identifier: MIT OR Apache-2.0

//! Single-head contribution scores.

use serde::{Deserialize, Serialize};

use super::eval::{damages_with, units_of, AblationUnit, Baseline, EvalOptions};
use super::metrics::{icl_loss, induction_attention_score, mean, MetricKind, MetricValue};
use crate::error::{Error, Result};
use crate::model::{Capture, ForwardOptions, HeadRef, InterventionSpec, Model};
use crate::scalar::Scalar;
use crate::tasks::TaskSet;
use crate::tensor::Tensor;

/// Per-(layer, head) scores for one model and task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadScoreMatrix {
    /// `[n_layers × n_heads]`.
    pub scores: Tensor<f64>,
    pub metric: MetricKind,
    pub baseline: MetricValue,
    pub sample_n: usize,
}

impl HeadScoreMatrix {
    pub fn n_layers(&self) -> usize {
        self.scores.shape()[0]
    }

    pub fn n_heads(&self) -> usize {
        self.scores.shape()[1]
    }

    pub fn get(&self, head: HeadRef) -> f64 {
        self.scores.get2(head.layer, head.head)
    }

    /// All heads ordered by descending score, ties to the lowest head.
    pub fn ranked(&self) -> Vec<(HeadRef, f64)> {
        let mut v: Vec<(HeadRef, f64)> = (0..self.n_layers())
            .flat_map(|l| (0..self.n_heads()).map(move |h| HeadRef::new(l, h)))
            .map(|h| (h, self.get(h)))
            .collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }

    pub fn argmax(&self) -> (HeadRef, f64) {
        self.ranked()[0]
    }

    pub fn top(&self, k: usize) -> Vec<(HeadRef, f64)> {
        self.ranked().into_iter().take(k).collect()
    }
}

/// Scores every head on the first `sample_n` prompts of `task`.
///
/// For task metrics the score is the mean signed damage of ablating the
/// head alone (metric drop, or loss increase for ICL). For
/// [`MetricKind::InductionAttention`] it is the mean attention weight from
/// the final position to `B`, with no ablation.
pub fn score_heads<T: Scalar>(
    model: &Model<T>,
    task: &TaskSet,
    metric: MetricKind,
    sample_n: usize,
    opts: &EvalOptions,
) -> Result<HeadScoreMatrix> {
    metric.check_task(task.kind())?;
    if sample_n == 0 || sample_n > task.len() {
        return Err(Error::InvalidParameter(format!(
            "sample_n {sample_n} outside 1..={}",
            task.len()
        )));
    }
    let sample = task.sample(sample_n)?;
    let cfg = model.config();
    let (layers, heads) = (cfg.n_layers, cfg.n_heads);

    let (data, baseline) = if metric == MetricKind::InductionAttention {
        let prompts = sample.induction()?;
        let results = model.forward_batch(
            &sample.token_lists(),
            &InterventionSpec::none(),
            &ForwardOptions::with_capture(Capture::ATTENTION),
        );
        let results = results.into_iter().collect::<Result<Vec<_>>>()?;
        let losses = results
            .iter()
            .zip(prompts)
            .map(|(r, p)| icl_loss(r, p))
            .collect::<Result<Vec<_>>>()?;
        let mut data = Vec::with_capacity(layers * heads);
        for l in 0..layers {
            for h in 0..heads {
                let w = results
                    .iter()
                    .zip(prompts)
                    .map(|(r, p)| induction_attention_score(r, p, l, h))
                    .collect::<Result<Vec<_>>>()?;
                data.push(mean(&w));
            }
        }
        let baseline = MetricValue {
            kind: MetricKind::IclLoss,
            value: mean(&losses),
            n: losses.len(),
        };
        (data, baseline)
    } else {
        let base = Baseline::measure(model, &sample, metric, opts)?;
        let units = units_of(model, AblationUnit::Head);
        let data = damages_with(model, &sample, &base, AblationUnit::Head, &[], &units, opts)?;
        (data, base.value)
    };
    Ok(HeadScoreMatrix {
        scores: Tensor::new(vec![layers, heads], data)?,
        metric,
        baseline,
        sample_n,
    })
}

/// Scores of the KV heads, `[n_layers × n_kv_heads]`, by single-KV ablation.
pub fn score_kv_heads<T: Scalar>(
    model: &Model<T>,
    task: &TaskSet,
    metric: MetricKind,
    opts: &EvalOptions,
) -> Result<(Tensor<f64>, Baseline)> {
    let base = Baseline::measure(model, task, metric.task_metric(), opts)?;
    let units = units_of(model, AblationUnit::KvHead);
    let data = damages_with(model, task, &base, AblationUnit::KvHead, &[], &units, opts)?;
    let cfg = model.config();
    Ok((Tensor::new(vec![cfg.n_layers, cfg.n_kv_heads], data)?, base))
}
