// SPDX-License-Identifier: MIT OR Apache-2.0

//! One function per subcommand. Each fills in a [`RunRecord`] and writes
//! its artefacts under the output directory; `main` writes the record.

use std::fs;
use std::path::Path;

use circuitscope::io::{load_checkpoint, weights_digest, CheckpointManifest};
use circuitscope::localize::{
    greedy_curve, heads_to_threshold, icl_advantage, kv_head_diagnostic, layer_ablation_profile,
    negative_control, score_heads, GreedyOptions, KvDiagnostic, MetricKind, MetricValue,
    Normalization,
};
use circuitscope::report::{
    emit_curve, emit_heatmap, emit_layer_profile, emit_tables, FactCounts, ModelInfo, RunRecord,
    TaskInfo,
};
use circuitscope::tasks::{
    filter_known, gen_induction, gen_ioi, parse_facts, parse_jsonl, shared_condition, to_jsonl,
    FactSelection, InductionParams, Provenance, TaskKind, TaskSet,
};
use circuitscope::{Error, Model, Scalar};
use serde::Serialize;

use crate::config::{GenSpec, ModelSource, RunConfig, TaskSource};
use crate::error::{CliError, CliResult};

/// Tolerance above which the KV equivalence check is flagged.
const EQUIVALENCE_TOL: f64 = 1e-6;

// ----------------------------------------------------------------------------
// Shared plumbing
// ----------------------------------------------------------------------------

fn write_file(out: &Path, name: &str, text: &str, record: &mut RunRecord) -> CliResult<()> {
    let path = out.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    record.files.push(name.to_string());
    Ok(())
}

fn write_json<V: Serialize>(
    out: &Path,
    name: &str,
    value: &V,
    record: &mut RunRecord,
) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)? + "\n";
    write_file(out, name, &text, record)
}

fn read_input(cfg: &RunConfig, p: &str) -> CliResult<String> {
    let path = cfg.resolve(p);
    Ok(fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?)
}

/// Builds or loads the configured model and records its identity.
fn load_model<T: Scalar>(cfg: &RunConfig, record: &mut RunRecord) -> CliResult<Model<T>> {
    let (model, digest) = match cfg.require_model()? {
        ModelSource::Synthetic(spec) => {
            let m = spec.build::<T>()?;
            let d = weights_digest(&m);
            (m, d)
        }
        ModelSource::PlantedFacts(spec) => {
            let m = spec.build::<T>()?;
            let d = weights_digest(&m);
            (m, d)
        }
        ModelSource::Random {
            config,
            seed,
            scale,
        } => {
            let m = Model::random(config.clone(), *seed, *scale)?;
            let d = weights_digest(&m);
            (m, d)
        }
        ModelSource::Checkpoint { manifest, tensors } => {
            let manifest = CheckpointManifest::from_json_file(cfg.resolve(manifest))?;
            let loaded = load_checkpoint::<T>(&manifest, cfg.resolve(tensors))?;
            if !loaded.unmapped.is_empty() {
                record.flag(format!(
                    "{} checkpoint tensors are not used by the manifest: {}",
                    loaded.unmapped.len(),
                    loaded.unmapped.join(", ")
                ));
            }
            (loaded.model, loaded.model_digest)
        }
    };
    record.model = Some(ModelInfo {
        label: cfg.model_label(),
        digest,
        config: model.config().clone(),
    });
    Ok(model)
}

/// Builds or reads the configured task set and records its provenance.
fn load_task(cfg: &RunConfig, vocab: Option<usize>, record: &mut RunRecord) -> CliResult<TaskSet> {
    let set = match cfg.require_task()? {
        TaskSource::Generate(GenSpec::Ioi { n, generator }) => {
            let seed = cfg.require_seed()?;
            let g = generator.clone().unwrap_or_default();
            gen_ioi(&g, &g.vocab(), *n, seed)?
        }
        TaskSource::Generate(GenSpec::Induction {
            n,
            prefix_len,
            suffix_len,
            vocab_size,
        }) => {
            let seed = cfg.require_seed()?;
            let d = InductionParams::default();
            let params = InductionParams {
                n: n.unwrap_or(d.n),
                prefix_len: prefix_len.unwrap_or(d.prefix_len),
                suffix_len: suffix_len.unwrap_or(d.suffix_len),
                vocab_size: vocab_size.or(vocab).unwrap_or(d.vocab_size),
            };
            gen_induction(&params, seed)?
        }
        TaskSource::Pretokenized(p) => {
            let report = parse_jsonl(&read_input(cfg, p)?, p)?;
            if !report.rejected.is_empty() {
                let lines: Vec<String> = report
                    .rejected
                    .iter()
                    .map(|r| format!("line {}: {}", r.line, r.reason))
                    .collect();
                record.flag(format!(
                    "{} records rejected from {p}: {}",
                    report.rejected.len(),
                    lines.join("; ")
                ));
            }
            report.set
        }
        TaskSource::Facts(p) => parse_facts(&read_input(cfg, p)?, p)?,
    };
    record.task = Some(TaskInfo {
        kind: set.kind(),
        n_prompts: set.len(),
        provenance: set.provenance().clone(),
    });
    Ok(set)
}

fn check_metric(metric: MetricKind, task: &TaskSet) -> CliResult<()> {
    if metric.task_kind() != task.kind() {
        return Err(CliError::invalid(
            "metric",
            format!(
                "`{}` measures {} tasks, the task is {}",
                metric.as_str(),
                metric.task_kind(),
                task.kind()
            ),
        ));
    }
    Ok(())
}

/// Records the baseline and, for induction, the ICL advantage.
fn record_baseline<T: Scalar>(
    model: &Model<T>,
    task: &TaskSet,
    baseline: MetricValue,
    record: &mut RunRecord,
) {
    record.outputs.baseline = Some(baseline);
    if task.kind() == TaskKind::Induction {
        let adv = icl_advantage(baseline.value, model.config().vocab_size);
        record.outputs.icl_advantage = Some(adv);
    }
    if task.kind() == TaskKind::Factual {
        record.outputs.facts = Some(FactCounts {
            per_model: Some(task.len()),
            shared: None,
        });
    }
}

fn note_normalization(norm: Normalization, record: &mut RunRecord) {
    if norm.is_absolute() {
        record.flag(
            "baseline leaves no headroom: damage is reported in absolute units and \
             heads-to-threshold is not applicable",
        );
    }
}

// ----------------------------------------------------------------------------
// Measurement commands
// ----------------------------------------------------------------------------

pub fn score<T: Scalar>(cfg: &RunConfig, out: &Path, record: &mut RunRecord) -> CliResult<()> {
    let seed = cfg.require_seed()?;
    let model = load_model::<T>(cfg, record)?;
    let metric = cfg.require_metric()?;
    let task = load_task(cfg, Some(model.config().vocab_size), record)?;
    check_metric(metric, &task)?;
    if cfg.sample_n > task.len() {
        return Err(CliError::invalid(
            "sample_n",
            format!(
                "{} exceeds the {} prompts available",
                cfg.sample_n,
                task.len()
            ),
        ));
    }
    let scores = score_heads(&model, &task, metric, cfg.sample_n, &cfg.eval)?;
    record_baseline(&model, &task, scores.baseline, record);
    let headroom = match record.outputs.icl_advantage {
        Some(adv) => adv,
        None => scores.baseline.value,
    };
    if headroom <= 0.0 {
        note_normalization(Normalization::Absolute, record);
    }
    if cfg.negative_control && model.config().n_layers >= 3 {
        let nc = negative_control(&model, &task, metric, seed, cfg.sample_n, &cfg.eval)?;
        record.outputs.negative_control = Some(nc);
    }
    emit_heatmap(&scores, out.join("heatmap.svg"))?;
    record.files.push("heatmap.svg".into());
    record.outputs.scores = Some(scores);
    tables(out, record)
}

pub fn curve<T: Scalar>(cfg: &RunConfig, out: &Path, record: &mut RunRecord) -> CliResult<()> {
    cfg.require_seed()?;
    let model = load_model::<T>(cfg, record)?;
    let metric = cfg.require_metric()?;
    let task = load_task(cfg, Some(model.config().vocab_size), record)?;
    check_metric(metric, &task)?;
    let opts = GreedyOptions {
        budget: cfg.budget,
        pool: cfg.pool,
        early_stop: (!cfg.full_budget).then_some(cfg.theta),
        unit: cfg.unit,
        eval: cfg.eval,
    };
    let mut curve = greedy_curve(&model, &task, metric, &opts)?;
    curve.label = cfg.model_label();
    record_baseline(&model, &task, curve.baseline, record);
    note_normalization(curve.normalization, record);
    if curve.has_negative_marginal() {
        let steps: Vec<String> = curve
            .steps
            .iter()
            .enumerate()
            .filter(|(_, s)| s.marginal < 0.0)
            .map(|(i, s)| format!("{} ({})", i + 1, s.unit))
            .collect();
        record.flag(format!(
            "negative marginal damage at greedy steps {}",
            steps.join(", ")
        ));
    }
    record.outputs.theta = Some(cfg.theta);
    record.outputs.heads_to_threshold = Some(heads_to_threshold(&curve, cfg.theta));
    emit_curve(
        std::slice::from_ref(&curve),
        cfg.theta,
        out.join("curve.svg"),
    )?;
    record.files.push("curve.svg".into());
    record.outputs.curve = Some(curve);
    tables(out, record)
}

pub fn layers<T: Scalar>(cfg: &RunConfig, out: &Path, record: &mut RunRecord) -> CliResult<()> {
    cfg.require_seed()?;
    let model = load_model::<T>(cfg, record)?;
    let metric = cfg.require_metric()?;
    let task = load_task(cfg, Some(model.config().vocab_size), record)?;
    check_metric(metric, &task)?;
    let profile = layer_ablation_profile(&model, &task, metric, &cfg.eval)?;
    record_baseline(&model, &task, profile.baseline, record);
    note_normalization(profile.normalization, record);
    emit_layer_profile(&profile, out.join("layer_profile.svg"))?;
    record.files.push("layer_profile.svg".into());
    record.outputs.layer_profile = Some(profile);
    Ok(())
}

pub fn kv_diag<T: Scalar>(cfg: &RunConfig, _out: &Path, record: &mut RunRecord) -> CliResult<()> {
    cfg.require_seed()?;
    let model = load_model::<T>(cfg, record)?;
    let metric = cfg.require_metric()?;
    let task = load_task(cfg, Some(model.config().vocab_size), record)?;
    check_metric(metric, &task)?;
    let diag = kv_head_diagnostic(&model, &task, metric, cfg.equivalence_sample, &cfg.eval)?;
    match &diag {
        KvDiagnostic::NotApplicable { reason } => {
            record.flag(format!("kv diagnostic not applicable: {reason}"));
        }
        KvDiagnostic::Report(r) => {
            record_baseline(&model, &task, r.baseline, record);
            note_normalization(r.normalization, record);
            if r.max_equivalence_error > EQUIVALENCE_TOL {
                record.flag(format!(
                    "KV ablation differs from query-group ablation by {:e}",
                    r.max_equivalence_error
                ));
            }
        }
    }
    record.outputs.kv_diagnostic = Some(diag);
    Ok(())
}

fn tables(out: &Path, record: &mut RunRecord) -> CliResult<()> {
    record.files.push("table.csv".into());
    record.files.push("table.json".into());
    emit_tables(std::slice::from_ref(record), out.join("table"))?;
    Ok(())
}

// ----------------------------------------------------------------------------
// Task preparation
// ----------------------------------------------------------------------------

pub fn gen<T: Scalar>(cfg: &RunConfig, out: &Path, record: &mut RunRecord) -> CliResult<()> {
    cfg.require_seed()?;
    if !matches!(cfg.require_task()?, TaskSource::Generate(_)) {
        return Err(CliError::invalid("task", "gen needs a `generate` task"));
    }
    let vocab = match &cfg.model {
        Some(_) => Some(load_model::<T>(cfg, record)?.config().vocab_size),
        None => None,
    };
    let task = load_task(cfg, vocab, record)?;
    write_file(out, "tasks.jsonl", &to_jsonl(&task)?, record)
}

pub fn facts_filter<T: Scalar>(
    cfg: &RunConfig,
    out: &Path,
    record: &mut RunRecord,
) -> CliResult<()> {
    cfg.require_seed()?;
    let model = load_model::<T>(cfg, record)?;
    let task = load_task(cfg, None, record)?;
    if task.kind() != TaskKind::Factual {
        return Err(CliError::invalid(
            "task",
            format!("facts-filter needs factual prompts, got {}", task.kind()),
        ));
    }
    let selection = filter_known(&model, &task, cfg.eval.top_k)?;
    record.outputs.facts = Some(FactCounts {
        per_model: Some(selection.len()),
        shared: None,
    });
    let jsonl = if selection.is_empty() {
        record.flag(format!(
            "no fact ranks within the top {} for this model",
            cfg.eval.top_k
        ));
        String::new()
    } else {
        to_jsonl(&selection.to_task_set()?)?
    };
    write_file(out, "known_facts.jsonl", &jsonl, record)?;
    write_json(out, "selection.json", &selection, record)
}

pub fn facts_intersect(cfg: &RunConfig, out: &Path, record: &mut RunRecord) -> CliResult<()> {
    if cfg.inputs.len() < 2 {
        return Err(CliError::invalid(
            "inputs",
            format!("need at least 2 selection files, got {}", cfg.inputs.len()),
        ));
    }
    let sets = cfg
        .inputs
        .iter()
        .map(|p| {
            serde_json::from_str::<FactSelection>(&read_input(cfg, p)?)
                .map_err(|e| CliError::invalid("inputs", format!("{p}: {e}")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let shared = shared_condition(&sets)?;
    record.task = Some(TaskInfo {
        kind: TaskKind::Factual,
        n_prompts: shared.fact_ids.len(),
        provenance: Provenance::Derived {
            operation: "shared_condition".into(),
            inputs: sets.iter().map(|s| s.provenance.clone()).collect(),
        },
    });
    record.outputs.facts = Some(FactCounts {
        per_model: None,
        shared: Some(shared.fact_ids.len()),
    });
    if shared.is_empty() {
        record.flag("no fact is known to every model");
    }
    for (i, sel) in shared.per_set.iter().enumerate() {
        let text = if sel.is_empty() {
            String::new()
        } else {
            to_jsonl(&sel.to_task_set()?)?
        };
        write_file(out, &format!("shared_{i}.jsonl"), &text, record)?;
    }
    write_json(out, "shared.json", &shared, record)
}

// ----------------------------------------------------------------------------
// Report
// ----------------------------------------------------------------------------

/// Re-renders figures and tables from existing run records.
pub fn report(cfg: &RunConfig, out: &Path, record: &mut RunRecord) -> CliResult<()> {
    if cfg.inputs.is_empty() {
        return Err(CliError::MissingKey("inputs".into()));
    }
    let records = cfg
        .inputs
        .iter()
        .map(|p| Ok(RunRecord::read(cfg.resolve(p))?))
        .collect::<CliResult<Vec<_>>>()?;
    let mut curves = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if let Some(s) = &r.outputs.scores {
            let name = format!("heatmap_{i}.svg");
            emit_heatmap(s, out.join(&name))?;
            record.files.push(name);
        }
        if let Some(p) = &r.outputs.layer_profile {
            let name = format!("layer_profile_{i}.svg");
            emit_layer_profile(p, out.join(&name))?;
            record.files.push(name);
        }
        if let Some(c) = &r.outputs.curve {
            curves.push(c.clone());
        }
    }
    if !curves.is_empty() {
        emit_curve(&curves, cfg.theta, out.join("curves.svg"))?;
        record.files.push("curves.svg".into());
    }
    emit_tables(&records, out.join("table"))?;
    record.files.push("table.csv".into());
    record.files.push("table.json".into());
    Ok(())
}
