// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and
//! exits nonzero if any criterion fails.
//!
//! Criteria 8 and 9 need a Pythia-160M checkpoint and pre-tokenized task
//! files, named by environment variables:
//!
//! - `CIRCUITSCOPE_PYTHIA_TENSORS`: `model.safetensors`
//! - `CIRCUITSCOPE_PYTHIA_MANIFEST`: optional, defaults to the bundled manifest
//! - `CIRCUITSCOPE_IOI_JSONL`: IOI prompts
//! - `CIRCUITSCOPE_INDUCTION_JSONL`: induction prompts

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use circuitscope::io::{AttentionVariant, PlantedFactSpec, SyntheticCircuitSpec};
use circuitscope::localize::{
    evaluate, first_reaching, greedy_curve, heads_to_threshold, icl_advantage, icl_loss,
    kv_head_diagnostic, layer_ablation_profile, logit_diff, per_prompt_values, score_heads,
    CandidatePool, EvalOptions, GreedyOptions, HeadsToThreshold, KvDiagnostic, MetricKind,
};
use circuitscope::model::{AttentionRouting, ForwardOptions};
use circuitscope::report::RunRecord;
use circuitscope::tasks::{
    filter_known, gen_induction, load_facts, to_jsonl, Domain, FactPrompt, InductionParams,
    InductionPrompt, IoiPrompt, Provenance, TaskItems, TaskSet,
};
use circuitscope::{Capture, ForwardResult, HeadRef, InterventionSpec, Model, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Check = Result<String, String>;

// ----------------------------------------------------------------------------
// Runner
// ----------------------------------------------------------------------------

enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Criterion {
    id: u8,
    name: &'static str,
    limit_s: Option<f64>,
    run: fn() -> Option<Check>,
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "GQA to MHA reduction",
            limit_s: Some(10.0),
            run: c1_gqa_mha,
        },
        Criterion {
            id: 2,
            name: "KV-ablation identity",
            limit_s: Some(10.0),
            run: c2_kv_identity,
        },
        Criterion {
            id: 3,
            name: "constructed-circuit oracle",
            limit_s: Some(30.0),
            run: c3_synthetic,
        },
        Criterion {
            id: 4,
            name: "GQA synthetic bottleneck",
            limit_s: None,
            run: c4_gqa_synthetic,
        },
        Criterion {
            id: 5,
            name: "metric identities",
            limit_s: None,
            run: c5_identities,
        },
        Criterion {
            id: 6,
            name: "brute-force greedy equivalence",
            limit_s: Some(120.0),
            run: c6_greedy,
        },
        Criterion {
            id: 7,
            name: "byte-identical reruns",
            limit_s: None,
            run: c7_determinism,
        },
        Criterion {
            id: 8,
            name: "Pythia-160M IOI row",
            limit_s: None,
            run: c8_pythia_ioi,
        },
        Criterion {
            id: 9,
            name: "Pythia-160M ICL row",
            limit_s: None,
            run: c9_pythia_icl,
        },
    ];
    let mut failed = 0;
    for c in criteria {
        let t0 = Instant::now();
        let outcome = (c.run)();
        let secs = t0.elapsed().as_secs_f64();
        let (verdict, detail) = match outcome {
            None => (Verdict::Skip, "checkpoint not supplied".to_string()),
            Some(Err(e)) => (Verdict::Fail, e),
            Some(Ok(d)) => match c.limit_s {
                Some(l) if secs >= l => (Verdict::Fail, format!("{d}; too slow")),
                _ => (Verdict::Pass, d),
            },
        };
        let tag = match verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                failed += 1;
                "FAIL"
            }
            Verdict::Skip => "SKIP",
        };
        let limit = c
            .limit_s
            .map(|l| format!(" (limit {l} s)"))
            .unwrap_or_default();
        println!("{tag} [{}] {}: {detail}; {secs:.2} s{limit}", c.id, c.name);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn induction_task(n: usize, prefix: (usize, usize), vocab: usize, seed: u64) -> TaskSet {
    gen_induction(
        &InductionParams {
            n,
            prefix_len: prefix,
            suffix_len: prefix,
            vocab_size: vocab,
        },
        seed,
    )
    .expect("induction generator")
}

// ----------------------------------------------------------------------------
// 1. GQA to MHA reduction
// ----------------------------------------------------------------------------

/// With `n_kv = h`, grouped routing must reproduce per-head routing, and
/// both must match the independent reference forward.
fn c1_gqa_mha() -> Option<Check> {
    const TOL: f64 = 1e-6;
    let grouped = ForwardOptions {
        routing: AttentionRouting::Grouped,
        ..Default::default()
    };
    let per_head = ForwardOptions {
        routing: AttentionRouting::PerHead,
        ..Default::default()
    };
    let run = || -> Check {
        let mut worst_routing = 0.0f64;
        let mut worst_reference = 0.0f64;
        for (i, cfg) in [common::qwen_like(2, 4, 4), common::neox_like(2, 4)]
            .into_iter()
            .enumerate()
        {
            let m32 = Model::<f32>::random(cfg.clone(), 100 + i as u64, 0.5).map_err(err)?;
            let m64 = Model::<f64>::random(cfg, 100 + i as u64, 0.5).map_err(err)?;
            for p in common::prompts(200 + i as u64, 20, 23, (1, 16)) {
                let none = InterventionSpec::none();
                let a = m32.forward_with(&p, &none, &grouped).map_err(err)?;
                let b = m32.forward_with(&p, &none, &per_head).map_err(err)?;
                worst_routing = worst_routing.max(a.logits.max_abs_diff(&b.logits).map_err(err)?);
                let g = m64.forward_with(&p, &none, &grouped).map_err(err)?;
                let want = common::reference_logits(&m64, &p, &BTreeSet::new(), &BTreeSet::new());
                worst_reference = worst_reference.max(common::max_abs_diff(&g.logits, &want));
            }
        }
        let detail = format!(
            "max |Δlogit| grouped vs per-head {worst_routing:.2e}, vs reference {worst_reference:.2e} (tol {TOL:e}, 2 configs × 20 prompts)"
        );
        ensure(worst_routing < TOL && worst_reference < TOL, detail.clone())?;
        Ok(detail)
    };
    Some(run())
}

// ----------------------------------------------------------------------------
// 2. KV-ablation identity
// ----------------------------------------------------------------------------

fn c2_kv_identity() -> Option<Check> {
    const TOL: f64 = 1e-6;
    let run = || -> Check {
        let cfg = common::qwen_like(2, 8, 2);
        let m32 = Model::<f32>::random(cfg.clone(), 300, 0.5).map_err(err)?;
        let m64 = Model::<f64>::random(cfg.clone(), 300, 0.5).map_err(err)?;
        let (mut worst_group, mut worst_reference) = (0.0f64, 0.0f64);
        // Smallest effect of any KV ablation; keeps the identity from being vacuous.
        let mut least_effect = f64::INFINITY;
        for p in common::prompts(301, 20, 23, (1, 16)) {
            for l in 0..2 {
                for kv in 0..2 {
                    let kv_spec = InterventionSpec::kv_heads([HeadRef::new(l, kv)]);
                    let group = InterventionSpec::query_group(&cfg, l, kv);
                    let a = m32.forward(&p, &kv_spec, Capture::NONE).map_err(err)?;
                    let b = m32.forward(&p, &group, Capture::NONE).map_err(err)?;
                    worst_group = worst_group.max(a.logits.max_abs_diff(&b.logits).map_err(err)?);
                    // Oracle: the reference pass with the four query heads zeroed.
                    let heads: BTreeSet<_> = (4 * kv..4 * kv + 4).map(|h| (l, h)).collect();
                    let want = common::reference_logits(&m64, &p, &heads, &BTreeSet::new());
                    let got = m64.forward(&p, &kv_spec, Capture::NONE).map_err(err)?;
                    worst_reference = worst_reference.max(common::max_abs_diff(&got.logits, &want));
                    let clean =
                        common::reference_logits(&m64, &p, &BTreeSet::new(), &BTreeSet::new());
                    least_effect = least_effect.min(common::max_abs_diff(&got.logits, &clean));
                }
            }
        }
        let detail = format!(
            "max |Δlogit| KV vs 4-head group {worst_group:.2e}, vs reference {worst_reference:.2e} (tol {TOL:e}, h=8, n_kv=2, 20 prompts × 4 KV heads), \
             smallest ablation effect {least_effect:.2e}"
        );
        ensure(
            worst_group < TOL && worst_reference < TOL && least_effect > 1e-6,
            detail.clone(),
        )?;
        Ok(detail)
    };
    Some(run())
}

// ----------------------------------------------------------------------------
// 3. Constructed-circuit oracle
// ----------------------------------------------------------------------------

fn c3_synthetic() -> Option<Check> {
    const ZERO_TOL: f64 = 1e-6;
    let run = || -> Check {
        let spec = SyntheticCircuitSpec::default();
        ensure(
            spec.vocab_size == 50 && spec.beta == 30.0,
            "default synthetic is not V=50, β=30",
        )?;
        let model: Model<f32> = spec.build().map_err(err)?;
        let task = induction_task(100, (10, 20), 50, 1);
        let opts = EvalOptions::default();

        let scores = score_heads(&model, &task, MetricKind::IclLoss, 100, &opts).map_err(err)?;
        let top = scores.argmax().0;
        ensure(
            top == HeadRef::new(1, spec.induction_head),
            format!("argmax {top}"),
        )?;

        let curve = greedy_curve(
            &model,
            &task,
            MetricKind::IclLoss,
            &GreedyOptions::default(),
        )
        .map_err(err)?;
        let h80 = heads_to_threshold(&curve, 0.8);
        ensure(
            h80 == HeadsToThreshold::Reached(1),
            format!("heads-to-80% {h80:?}"),
        )?;

        // Raw ICL-loss change per prompt for every head outside the circuit.
        let base = per_prompt_values(
            &model,
            &task,
            MetricKind::IclLoss,
            &InterventionSpec::none(),
            &opts,
        )
        .map_err(err)?;
        let mut worst_zero = 0.0f64;
        for l in 0..2 {
            for h in 0..spec.n_heads {
                if (l == 0 && h == spec.prev_head) || (l == 1 && h == spec.induction_head) {
                    continue;
                }
                let spec = InterventionSpec::heads([HeadRef::new(l, h)]);
                let v = per_prompt_values(&model, &task, MetricKind::IclLoss, &spec, &opts)
                    .map_err(err)?;
                for (a, b) in v.iter().zip(&base) {
                    worst_zero = worst_zero.max((a - b).abs());
                }
            }
        }
        ensure(
            worst_zero < ZERO_TOL,
            format!("zero head moves ICL loss by {worst_zero:e}"),
        )?;

        let profile =
            layer_ablation_profile(&model, &task, MetricKind::IclLoss, &opts).map_err(err)?;
        let base_adv = profile
            .baseline_icl_advantage
            .ok_or("no baseline advantage")?;
        let l0 = profile.layers[0]
            .icl_advantage
            .ok_or("no layer-0 advantage")?;
        ensure(
            l0 <= 0.01 * base_adv,
            format!("layer-0 ablation leaves advantage {l0:.4} of {base_adv:.4}"),
        )?;
        Ok(format!(
            "argmax {top}, heads-to-80% 1, max zero-head |ΔICL loss| {worst_zero:.2e} (tol {ZERO_TOL:e}), \
             layer-0 advantage {l0:.4} ≤ 1% of {base_adv:.4}"
        ))
    };
    Some(run())
}

// ----------------------------------------------------------------------------
// 4. GQA synthetic variant
// ----------------------------------------------------------------------------

fn c4_gqa_synthetic() -> Option<Check> {
    const DAMAGE: f64 = 0.99;
    const TOL: f64 = 1e-6;
    let run = || -> Check {
        let spec =
            SyntheticCircuitSpec::default().with_attention(AttentionVariant::Gqa { n_kv: 1 });
        let model: Model<f32> = spec.build().map_err(err)?;
        let task = induction_task(60, (10, 20), 50, 5);
        let diag = kv_head_diagnostic(
            &model,
            &task,
            MetricKind::IclLoss,
            8,
            &EvalOptions::default(),
        )
        .map_err(err)?;
        let KvDiagnostic::Report(r) = diag else {
            return Err("diagnostic reported not applicable".into());
        };
        let e = r
            .entries
            .iter()
            .find(|e| e.layer == 1 && e.kv_head == 0)
            .ok_or("no entry for KV head (1,0)")?;
        let detail = format!(
            "KV head (1,0) damage {:.4} (≥ {DAMAGE}), equivalence max error {:.2e} (tol {TOL:e})",
            e.damage, r.max_equivalence_error
        );
        ensure(
            e.damage >= DAMAGE && r.max_equivalence_error < TOL,
            detail.clone(),
        )?;
        Ok(detail)
    };
    Some(run())
}

// ----------------------------------------------------------------------------
// 5. Metric identities
// ----------------------------------------------------------------------------

fn c5_identities() -> Option<Check> {
    let run = || -> Check {
        let uniform = ForwardResult {
            logits: Tensor::from_fn(4, 50, |_, _| 0.37f64),
            logits_start: 0,
            seq_len: 4,
            cache: Vec::new(),
        };
        let ld = logit_diff(
            &uniform,
            &IoiPrompt {
                tokens: vec![1, 2, 3, 2],
                io_token: 1,
                s_token: 2,
            },
        )
        .map_err(err)?;
        let loss = icl_loss(
            &uniform,
            &InductionPrompt {
                tokens: vec![7, 8, 9, 7],
                b_token: 8,
                ab_offset_pos: 1,
            },
        )
        .map_err(err)?;
        let adv = icl_advantage(loss, 50);
        ensure(
            ld == 0.0 && adv == 0.0,
            format!("uniform logits: logit_diff {ld:e}, advantage {adv:e}"),
        )?;

        // Fixed point of filter_known on the bundled fact seed.
        let seed = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/data/facts_seed.json");
        let facts = load_facts(&seed).map_err(err)?;
        let cfg = circuitscope::ModelConfig {
            vocab_size: 260,
            ..common::gpt2_like(1, 2)
        };
        let model = Model::<f32>::random(cfg, 3, 1.0).map_err(err)?;
        let mut checked = Vec::new();
        for k in [1, 3, 10, 50] {
            let sel = filter_known(&model, &facts, k).map_err(err)?;
            if sel.is_empty() {
                continue;
            }
            let opts = EvalOptions {
                top_k: k,
                ..EvalOptions::default()
            };
            let kept = sel.to_task_set().map_err(err)?;
            let acc = evaluate(
                &model,
                &kept,
                MetricKind::AccuracyTopk,
                &InterventionSpec::none(),
                &opts,
            )
            .map_err(err)?
            .value;
            ensure(
                acc == 1.0,
                format!("accuracy_topk {acc} on the k={k} fixed point"),
            )?;
            checked.push(format!("k={k}:{}", sel.len()));
        }
        ensure(!checked.is_empty(), "every filtered set was empty")?;

        // Monotonicity of heads-to-threshold over random curves.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..1000 {
            let len = rng.random_range(0..=25);
            let damages: Vec<f64> = (0..len).map(|_| rng.random_range(-0.5..1.5)).collect();
            let mut thetas: Vec<f64> = (0..8).map(|_| rng.random_range(-0.5..1.5)).collect();
            thetas.sort_by(f64::total_cmp);
            for w in thetas.windows(2) {
                let (a, b) = (
                    first_reaching(&damages, len, w[0]),
                    first_reaching(&damages, len, w[1]),
                );
                ensure(
                    a <= b,
                    format!("curve {i}: θ {} → {a:?} but θ {} → {b:?}", w[0], w[1]),
                )?;
            }
        }
        Ok(format!(
            "uniform logit_diff 0, ICL advantage 0; accuracy 1.0 on fixed points ({}); \
             monotone over 1000 random curves",
            checked.join(", ")
        ))
    };
    Some(run())
}

// ----------------------------------------------------------------------------
// 6. Brute-force greedy equivalence
// ----------------------------------------------------------------------------

fn c6_greedy() -> Option<Check> {
    const TOL: f64 = 1e-9;
    let run = || -> Check {
        let mut worst = 0.0f64;
        for seed in 0..25u64 {
            let cfg = if seed % 2 == 0 {
                common::gpt2_like(3, 4)
            } else {
                common::neox_like(3, 4)
            };
            let model = Model::<f64>::random(cfg, 1000 + seed, 1.0).map_err(err)?;
            let task = induction_task(6, (2, 4), 23, seed);
            let pairs: Vec<(Vec<u32>, u32)> = task
                .induction()
                .map_err(err)?
                .iter()
                .map(|p| (p.tokens.clone(), p.b_token))
                .collect();
            let opts = GreedyOptions {
                budget: 12,
                pool: CandidatePool::All,
                early_stop: None,
                ..GreedyOptions::default()
            };
            let curve = greedy_curve(&model, &task, MetricKind::IclLoss, &opts).map_err(err)?;
            let oracle = common::oracle_greedy(&model, &pairs, 12);
            ensure(
                curve.steps.len() == oracle.len(),
                format!(
                    "seed {seed}: {} steps vs {}",
                    curve.steps.len(),
                    oracle.len()
                ),
            )?;
            for (i, (s, ((l, h), d))) in curve.steps.iter().zip(&oracle).enumerate() {
                ensure(
                    s.unit == HeadRef::new(*l, *h),
                    format!("seed {seed} step {}: {} vs oracle L{l}H{h}", i + 1, s.unit),
                )?;
                worst = worst.max((s.damage - d).abs());
            }
        }
        ensure(
            worst < TOL,
            format!("damage differs from the oracle by {worst:e}"),
        )?;
        Ok(format!(
            "25 seeds × 12 steps on 3×4 models: identical order, max |Δdamage| {worst:.2e} (tol {TOL:e})"
        ))
    };
    Some(run())
}

// ----------------------------------------------------------------------------
// 7. Determinism of the command-line runs
// ----------------------------------------------------------------------------

fn cli(args: &[&str], cfg: &Path, out: &Path, inputs: &[PathBuf]) -> Result<(), String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_circuitscope"));
    cmd.args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(inputs);
    let o = cmd.output().map_err(err)?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{} exited with {}: {}",
            args.join(" "),
            o.status,
            String::from_utf8_lossy(&o.stderr).trim()
        ))
    }
}

fn dir_bytes(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    for e in fs::read_dir(dir).map_err(err)? {
        let p = e.map_err(err)?.path();
        let name = p.file_name().unwrap().to_string_lossy().to_string();
        files.insert(name, fs::read(&p).map_err(err)?);
    }
    Ok(files)
}

fn write_config(dir: &Path, name: &str, value: serde_json::Value) -> Result<PathBuf, String> {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(&value).map_err(err)?).map_err(err)?;
    Ok(p)
}

fn planted_facts_jsonl(spec: &PlantedFactSpec) -> Result<String, String> {
    let facts = spec
        .facts
        .iter()
        .enumerate()
        .map(|(i, (s, a))| FactPrompt {
            tokens: vec![*s, 5, 6, 7],
            answer_token: *a,
            domain: Domain::ALL[i % Domain::ALL.len()],
            fact_id: format!("f{i}"),
        })
        .collect();
    let set = TaskSet::new(
        TaskItems::Factual(facts),
        Provenance::Generator {
            generator: "acceptance".into(),
            seed: 0,
            params: json!(null),
        },
    )
    .map_err(err)?;
    to_jsonl(&set).map_err(err)
}

fn c7_determinism() -> Option<Check> {
    let run = || -> Check {
        let tmp = tempfile::tempdir().map_err(err)?;
        let root = tmp.path();
        let synthetic = json!({
            "seed": 7,
            "model": { "synthetic": {} },
            "task": { "generate": { "kind": "induction", "n": 40, "prefix_len": [10, 20], "suffix_len": [10, 20] } },
            "metric": "icl_loss",
        });
        let mut gqa = synthetic.clone();
        gqa["model"] = json!({ "synthetic": { "attention": { "type": "gqa", "n_kv": 1 } } });
        let facts_a = PlantedFactSpec::default();
        let facts_b = PlantedFactSpec {
            facts: vec![(10, 30), (11, 31), (13, 33)],
            ..PlantedFactSpec::default()
        };
        fs::write(root.join("facts.jsonl"), planted_facts_jsonl(&facts_a)?).map_err(err)?;
        let filter = |spec: &PlantedFactSpec| {
            json!({
                "seed": 7,
                "model": { "planted_facts": spec },
                "task": { "facts": "facts.jsonl" },
                "top_k": 1,
            })
        };

        let syn = write_config(root, "synthetic.json", synthetic)?;
        let gqa = write_config(root, "gqa.json", gqa)?;
        let gen = write_config(
            root,
            "gen.json",
            json!({ "seed": 7, "task": { "generate": { "kind": "ioi", "n": 60 } } }),
        )?;
        let fa = write_config(root, "facts_a.json", filter(&facts_a))?;
        let fb = write_config(root, "facts_b.json", filter(&facts_b))?;
        let empty = write_config(root, "empty.json", json!({}))?;

        // Inputs for the aggregate commands come from a first, separate set
        // of runs so both compared runs read the same files.
        let src = root.join("src");
        for (name, cfg, cmd) in [
            ("score", &syn, "score"),
            ("curve", &syn, "curve"),
            ("a", &fa, "facts-filter"),
            ("b", &fb, "facts-filter"),
        ] {
            cli(&[cmd], cfg, &src.join(name), &[])?;
        }
        let records: Vec<PathBuf> = ["score", "curve"]
            .iter()
            .map(|n| src.join(n).join("run_record.json"))
            .collect();
        let selections: Vec<PathBuf> = ["a", "b"]
            .iter()
            .map(|n| src.join(n).join("selection.json"))
            .collect();

        let runs: [(&str, &Path, &[PathBuf]); 9] = [
            ("score", &syn, &[]),
            ("curve", &syn, &[]),
            ("layers", &syn, &[]),
            ("kv-diag", &gqa, &[]),
            ("gen", &gen, &[]),
            ("facts-filter", &fa, &[]),
            ("facts-filter", &fb, &[]),
            ("facts-intersect", &empty, &selections),
            ("report", &empty, &records),
        ];
        let mut n_files = 0;
        for (i, (cmd, cfg, inputs)) in runs.iter().enumerate() {
            let a = root.join(format!("run{i}a"));
            let b = root.join(format!("run{i}b"));
            cli(&[cmd], cfg, &a, inputs)?;
            cli(&[cmd], cfg, &b, inputs)?;
            let (fa, fb) = (dir_bytes(&a)?, dir_bytes(&b)?);
            ensure(
                fa.keys().eq(fb.keys()),
                format!("{cmd}: file sets differ {:?} vs {:?}", fa.keys(), fb.keys()),
            )?;
            for (name, bytes) in &fa {
                ensure(
                    bytes == &fb[name],
                    format!("{cmd}: {name} differs between runs"),
                )?;
            }
            ensure(
                fa.contains_key("run_record.json"),
                format!("{cmd}: no run record"),
            )?;
            n_files += fa.len();
        }
        // The intersection of the two planted models keeps three facts.
        let shared: serde_json::Value =
            serde_json::from_slice(&fs::read(root.join("run7a/shared.json")).map_err(err)?)
                .map_err(err)?;
        let ids = shared["fact_ids"].as_array().map(Vec::len).unwrap_or(0);
        ensure(
            ids == 3,
            format!("shared condition kept {ids} facts, expected 3"),
        )?;
        Ok(format!(
            "{} commands run twice, {n_files} CSV/JSON/SVG/JSONL files byte-identical",
            runs.len()
        ))
    };
    Some(run())
}

// ----------------------------------------------------------------------------
// 8-9. Checkpoint-gated rows
// ----------------------------------------------------------------------------

struct Checkpoint {
    manifest: PathBuf,
    tensors: PathBuf,
}

fn checkpoint() -> Option<Checkpoint> {
    let tensors = PathBuf::from(std::env::var_os("CIRCUITSCOPE_PYTHIA_TENSORS")?);
    let manifest = std::env::var_os("CIRCUITSCOPE_PYTHIA_MANIFEST")
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/data/pythia-160m.manifest.json")
        });
    Some(Checkpoint { manifest, tensors })
}

fn absolute(p: &Path) -> Result<String, String> {
    Ok(fs::canonicalize(p)
        .map_err(|e| format!("{}: {e}", p.display()))?
        .display()
        .to_string())
}

/// Runs `cmds` on the checkpoint over a pre-tokenized task file and
/// returns the run records in order.
fn checkpoint_runs(
    ck: &Checkpoint,
    task_file: &Path,
    metric: &str,
    cmds: &[&str],
) -> Result<Vec<RunRecord>, String> {
    let n = fs::read_to_string(task_file)
        .map_err(err)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .count();
    let tmp = tempfile::tempdir().map_err(err)?;
    let cfg = write_config(
        tmp.path(),
        "config.json",
        json!({
            "seed": 0,
            "model": { "checkpoint": { "manifest": absolute(&ck.manifest)?, "tensors": absolute(&ck.tensors)? } },
            "task": { "pretokenized": absolute(task_file)? },
            "metric": metric,
            "label": "pythia-160m",
            "sample_n": n,
            "budget": 20,
        }),
    )?;
    cmds.iter()
        .map(|cmd| {
            let out = tmp.path().join(cmd);
            cli(&[cmd], &cfg, &out, &[])?;
            RunRecord::read(out.join("run_record.json")).map_err(err)
        })
        .collect()
}

fn c8_pythia_ioi() -> Option<Check> {
    let ck = checkpoint()?;
    let ioi = PathBuf::from(std::env::var_os("CIRCUITSCOPE_IOI_JSONL")?);
    let run = || -> Check {
        let recs = checkpoint_runs(&ck, &ioi, "logit_diff", &["score", "curve"])?;
        let scores = recs[0]
            .outputs
            .scores
            .as_ref()
            .ok_or("score run has no scores")?;
        let base = scores.baseline.value;
        let top = scores.argmax().0;
        let h80 = recs[1]
            .outputs
            .heads_to_threshold
            .ok_or("curve run has no heads-to-threshold")?;
        let detail = format!("baseline {base:.3} (0.290 ± 0.10), top head {top} (layer 8), heads-to-80% {h80:?} (5 ± 2)");
        let h_ok = matches!(h80, HeadsToThreshold::Reached(k) if (3..=7).contains(&k));
        ensure(
            (base - 0.290).abs() <= 0.10 && top.layer == 8 && h_ok,
            detail.clone(),
        )?;
        Ok(detail)
    };
    Some(run())
}

fn c9_pythia_icl() -> Option<Check> {
    let ck = checkpoint()?;
    let ind = PathBuf::from(std::env::var_os("CIRCUITSCOPE_INDUCTION_JSONL")?);
    let run = || -> Check {
        let recs = checkpoint_runs(&ck, &ind, "icl_loss", &["curve"])?;
        let adv = recs[0].outputs.icl_advantage.ok_or("no ICL advantage")?;
        let h80 = recs[0]
            .outputs
            .heads_to_threshold
            .ok_or("no heads-to-threshold")?;
        let detail =
            format!("ICL advantage {adv:.3} (< 0), heads-to-80% {h80:?} (ExceedsBudget(20))");
        ensure(
            adv < 0.0 && h80 == HeadsToThreshold::ExceedsBudget(20),
            detail.clone(),
        )?;
        Ok(detail)
    };
    Some(run())
}
