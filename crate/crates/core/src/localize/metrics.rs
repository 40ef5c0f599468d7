// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-prompt task metrics. All arithmetic is done in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ForwardResult;
use crate::scalar::Scalar;
use crate::tasks::{FactPrompt, InductionPrompt, IoiPrompt, Prompt, TaskKind};

/// Which quantity is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// `logit(IO) − logit(S)`; higher is better.
    LogitDiff,
    /// Cross-entropy of the induction target; lower is better.
    IclLoss,
    /// Fraction of answers within the top-k logits; higher is better.
    AccuracyTopk,
    /// Attention from the final position to `B`. Only meaningful as a head
    /// score; task-level evaluation falls back to [`MetricKind::IclLoss`].
    InductionAttention,
}

impl MetricKind {
    pub fn task_kind(self) -> TaskKind {
        match self {
            Self::LogitDiff => TaskKind::Ioi,
            Self::IclLoss | Self::InductionAttention => TaskKind::Induction,
            Self::AccuracyTopk => TaskKind::Factual,
        }
    }

    /// Metric used when evaluating the whole model under an ablation.
    pub fn task_metric(self) -> Self {
        match self {
            Self::InductionAttention => Self::IclLoss,
            k => k,
        }
    }

    /// Whether damage means the value goes up rather than down.
    pub fn lower_is_better(self) -> bool {
        matches!(self.task_metric(), Self::IclLoss)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::LogitDiff => "logit_diff",
            Self::IclLoss => "icl_loss",
            Self::AccuracyTopk => "accuracy_topk",
            Self::InductionAttention => "induction_attention",
        }
    }

    pub(crate) fn check_task(self, kind: TaskKind) -> Result<()> {
        if self.task_kind() != kind {
            return Err(Error::TaskKind(format!(
                "metric {} needs a {} task, got {kind}",
                self.as_str(),
                self.task_kind()
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A metric averaged over `n` prompts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub kind: MetricKind,
    pub value: f64,
    pub n: usize,
}

/// Mean in index order, so the result does not depend on scheduling.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn logits_at<T: Scalar>(result: &ForwardResult<T>, pos: usize) -> Result<&[T]> {
    result
        .logits_at(pos)
        .ok_or_else(|| Error::OutOfBounds(format!("no logits at position {pos}")))
}

fn logit<T: Scalar>(row: &[T], token: u32) -> Result<f64> {
    row.get(token as usize)
        .map(|x| x.to_f64_lossless())
        .ok_or_else(|| Error::OutOfBounds(format!("token {token} >= vocab {}", row.len())))
}

/// `logit(IO) − logit(S)` at the final position.
pub fn logit_diff<T: Scalar>(result: &ForwardResult<T>, prompt: &IoiPrompt) -> Result<f64> {
    let row = logits_at(result, prompt.eval_pos())?;
    Ok(logit(row, prompt.io_token)? - logit(row, prompt.s_token)?)
}

/// `−log softmax(logits)[target]`, via log-sum-exp.
pub fn cross_entropy<T: Scalar>(row: &[T], target: u32) -> Result<f64> {
    let t = logit(row, target)?;
    let max = row
        .iter()
        .map(|x| x.to_f64_lossless())
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|x| (x.to_f64_lossless() - max).exp()).sum();
    Ok((max - t) + sum.ln())
}

/// Cross-entropy of `B` at the final position.
pub fn icl_loss<T: Scalar>(result: &ForwardResult<T>, prompt: &InductionPrompt) -> Result<f64> {
    cross_entropy(logits_at(result, prompt.eval_pos())?, prompt.b_token)
}

/// Random-chance loss minus `loss`.
pub fn icl_advantage(loss: f64, vocab_size: usize) -> f64 {
    (vocab_size as f64).ln() - loss
}

/// Mean of per-prompt advantages; exactly zero when every loss is `ln V`.
pub fn mean_icl_advantage(losses: &[f64], vocab_size: usize) -> f64 {
    let adv: Vec<f64> = losses
        .iter()
        .map(|l| icl_advantage(*l, vocab_size))
        .collect();
    mean(&adv)
}

/// Number of logits strictly greater than the answer's; 0 is the top.
pub fn answer_rank<T: Scalar>(row: &[T], answer: usize) -> Result<usize> {
    let a = *row
        .get(answer)
        .ok_or_else(|| Error::OutOfBounds(format!("answer {answer} >= vocab {}", row.len())))?;
    Ok(row.iter().filter(|x| **x > a).count())
}

/// 1.0 if the answer ranks within the top `k` at the final position.
pub fn fact_hit<T: Scalar>(result: &ForwardResult<T>, fact: &FactPrompt, k: usize) -> Result<f64> {
    let row = logits_at(result, fact.eval_pos())?;
    Ok(if answer_rank(row, fact.answer_token as usize)? < k {
        1.0
    } else {
        0.0
    })
}

/// Fraction of facts answered within the top `k`.
pub fn accuracy_topk<T: Scalar>(
    results: &[ForwardResult<T>],
    facts: &[FactPrompt],
    k: usize,
) -> Result<f64> {
    if facts.is_empty() {
        return Err(Error::EmptyTask("accuracy over no facts".into()));
    }
    if results.len() != facts.len() {
        return Err(Error::InvalidParameter(format!(
            "{} results for {} facts",
            results.len(),
            facts.len()
        )));
    }
    let hits = results
        .iter()
        .zip(facts)
        .map(|(r, f)| fact_hit(r, f, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&hits))
}

/// Attention from the final position to `B` for `(layer, head)`.
pub fn induction_attention_score<T: Scalar>(
    result: &ForwardResult<T>,
    prompt: &InductionPrompt,
    layer: usize,
    head: usize,
) -> Result<f64> {
    Ok(result
        .attention_weight(layer, head, prompt.eval_pos(), prompt.ab_offset_pos)?
        .to_f64_lossless())
}
