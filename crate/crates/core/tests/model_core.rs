// SPDX-License-Identifier: MIT OR Apache-2.0

//! Forward-pass tests against the reference implementation in `common`,
//! plus the structural identities of grouped-query attention.

mod common;

use std::collections::BTreeSet;

use circuitscope::model::{
    AttentionRouting, ForwardOptions, MlpStyle, NormStyle, Positional, ResidualStyle,
};
use circuitscope::{Capture, HeadRef, InterventionSpec, Model, Model64, PositionScope};
use common::{max_abs_diff, prompts, reference_logits};
use proptest::prelude::*;

const TOL: f64 = 1e-9;

fn none() -> BTreeSet<(usize, usize)> {
    BTreeSet::new()
}

fn assert_matches_reference(model: &Model64, tokens: &[u32]) {
    let got = model
        .forward(tokens, &InterventionSpec::none(), Capture::NONE)
        .unwrap();
    let want = reference_logits(model, tokens, &none(), &none());
    let d = max_abs_diff(&got.logits, &want);
    assert!(d < TOL, "max |Δlogit| = {d:e}");
}

// ----------------------------------------------------------------------------
// Reference agreement across architecture variants
// ----------------------------------------------------------------------------

#[test]
fn neox_like_matches_reference() {
    let m = Model64::random(common::neox_like(2, 4), 1, 0.5).unwrap();
    for p in prompts(2, 4, 23, (1, 9)) {
        assert_matches_reference(&m, &p);
    }
}

#[test]
fn qwen_like_gqa_matches_reference() {
    let m = Model64::random(common::qwen_like(2, 6, 2), 3, 0.5).unwrap();
    for p in prompts(4, 4, 23, (1, 9)) {
        assert_matches_reference(&m, &p);
    }
}

#[test]
fn gpt2_like_matches_reference() {
    let m = Model64::random(common::gpt2_like(3, 2), 5, 0.5).unwrap();
    for p in prompts(6, 4, 23, (1, 12)) {
        assert_matches_reference(&m, &p);
    }
}

#[test]
fn attention_only_interleaved_rope_matches_reference() {
    let cfg = common::config(
        2,
        4,
        1,
        NormStyle::Identity,
        ResidualStyle::Serial,
        MlpStyle::None,
        Positional::Rotary {
            base: 500.0,
            rotary_dim: None,
            style: circuitscope::tensor::RopeStyle::Interleaved,
        },
    );
    let m = Model64::random(cfg, 7, 0.5).unwrap();
    for p in prompts(8, 3, 23, (2, 8)) {
        assert_matches_reference(&m, &p);
    }
}

#[test]
fn head_and_kv_ablations_match_reference() {
    let m = Model64::random(common::qwen_like(2, 6, 2), 9, 0.5).unwrap();
    let tokens = &prompts(10, 1, 23, (7, 7))[0];

    let heads = [HeadRef::new(0, 1), HeadRef::new(1, 4)];
    let got = m
        .forward(tokens, &InterventionSpec::heads(heads), Capture::NONE)
        .unwrap();
    let want = reference_logits(&m, tokens, &[(0, 1), (1, 4)].into(), &none());
    assert!(max_abs_diff(&got.logits, &want) < TOL);

    let got = m
        .forward(
            tokens,
            &InterventionSpec::kv_heads([HeadRef::new(1, 0)]),
            Capture::NONE,
        )
        .unwrap();
    let want = reference_logits(&m, tokens, &none(), &[(1, 0)].into());
    assert!(max_abs_diff(&got.logits, &want) < TOL);
}

#[test]
fn final_token_scope_leaves_earlier_positions_alone() {
    let m = Model64::random(common::neox_like(2, 4), 11, 0.5).unwrap();
    let tokens = &prompts(12, 1, 23, (6, 6))[0];
    let base = m
        .forward(tokens, &InterventionSpec::none(), Capture::NONE)
        .unwrap();
    let spec = InterventionSpec::heads([HeadRef::new(1, 2), HeadRef::new(1, 1)])
        .with_scope(PositionScope::FinalToken);
    let abl = m.forward(tokens, &spec, Capture::NONE).unwrap();
    let n = tokens.len();
    for t in 0..n - 1 {
        assert_eq!(
            base.logits.row(t),
            abl.logits.row(t),
            "position {t} changed"
        );
    }
    // The final row equals a full-scope ablation of the same heads.
    let full = reference_logits(&m, tokens, &[(1, 2), (1, 1)].into(), &none());
    let d = abl
        .logits
        .row(n - 1)
        .iter()
        .zip(&full[n - 1])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    // In the last layer nothing downstream reads earlier positions, so the
    // two scopes agree at the final position.
    assert!(d < TOL, "{d:e}");
}

// ----------------------------------------------------------------------------
// Grouped-query identities
// ----------------------------------------------------------------------------

#[test]
fn grouped_routing_matches_per_head_expansion() {
    let gqa = Model64::random(common::qwen_like(2, 8, 2), 13, 0.5).unwrap();
    let mha = gqa.to_mha_layout().unwrap();
    let grouped = ForwardOptions {
        routing: AttentionRouting::Grouped,
        ..Default::default()
    };
    let per_head = ForwardOptions {
        routing: AttentionRouting::PerHead,
        ..Default::default()
    };
    // Per-head routing needs one KV head per query head.
    assert!(gqa
        .forward_with(&[1, 2], &InterventionSpec::none(), &per_head)
        .is_err());
    for p in prompts(14, 5, 23, (1, 10)) {
        let spec = InterventionSpec::heads([HeadRef::new(0, 3)]);
        let g = gqa.forward_with(&p, &spec, &grouped).unwrap();
        let h = mha.forward_with(&p, &spec, &per_head).unwrap();
        assert!(g.logits.max_abs_diff(&h.logits).unwrap() < 1e-12);
    }
}

#[test]
fn mha_expansion_preserves_logits() {
    let gqa = Model64::random(common::qwen_like(2, 8, 2), 15, 0.5).unwrap();
    let mha = gqa.to_mha_layout().unwrap();
    assert_eq!(mha.config().n_kv_heads, 8);
    for p in prompts(16, 5, 23, (1, 10)) {
        let a = gqa
            .forward(&p, &InterventionSpec::none(), Capture::NONE)
            .unwrap();
        let b = mha
            .forward(&p, &InterventionSpec::none(), Capture::NONE)
            .unwrap();
        assert!(a.logits.max_abs_diff(&b.logits).unwrap() < 1e-12);
    }
}

#[test]
fn kv_ablation_equals_query_group_ablation() {
    let m = Model64::random(common::qwen_like(2, 8, 2), 17, 0.5).unwrap();
    let cfg = m.config().clone();
    for p in prompts(18, 4, 23, (2, 10)) {
        for l in 0..2 {
            for kv in 0..2 {
                for scope in [PositionScope::All, PositionScope::FinalToken] {
                    let a = m
                        .forward(
                            &p,
                            &InterventionSpec::kv_heads([HeadRef::new(l, kv)]).with_scope(scope),
                            Capture::NONE,
                        )
                        .unwrap();
                    let b = m
                        .forward(
                            &p,
                            &InterventionSpec::query_group(&cfg, l, kv).with_scope(scope),
                            Capture::NONE,
                        )
                        .unwrap();
                    let d = a.logits.max_abs_diff(&b.logits).unwrap();
                    assert!(d < 1e-12, "layer {l} kv {kv} {scope:?}: {d:e}");
                }
            }
        }
    }
}

#[test]
fn query_group_covers_consecutive_heads() {
    let cfg = common::qwen_like(1, 8, 2);
    let spec = InterventionSpec::query_group(&cfg, 0, 1);
    let heads: Vec<usize> = spec.head_ablations.iter().map(|h| h.head).collect();
    assert_eq!(heads, vec![4, 5, 6, 7]);
}

// ----------------------------------------------------------------------------
// Batching, locality, no-op ablation
// ----------------------------------------------------------------------------

#[test]
fn batch_matches_solo_bitwise_in_any_order() {
    let m = Model::<f32>::random(common::neox_like(2, 4), 19, 0.5).unwrap();
    let ps = prompts(20, 8, 23, (1, 10));
    let opts = ForwardOptions::default();
    let spec = InterventionSpec::heads([HeadRef::new(1, 0)]);
    let batch = m.forward_batch(&ps, &spec, &opts);
    let mut rev = ps.clone();
    rev.reverse();
    let batch_rev = m.forward_batch(&rev, &spec, &opts);
    for (i, p) in ps.iter().enumerate() {
        let solo = m.forward_with(p, &spec, &opts).unwrap();
        let b = batch[i].as_ref().unwrap();
        let r = batch_rev[ps.len() - 1 - i].as_ref().unwrap();
        assert_eq!(solo.logits.data(), b.logits.data());
        assert_eq!(solo.logits.data(), r.logits.data());
    }
}

#[test]
fn ablation_in_layer_l_leaves_earlier_residuals_untouched() {
    let m = Model64::random(common::gpt2_like(4, 2), 21, 0.5).unwrap();
    let tokens = &prompts(22, 1, 23, (8, 8))[0];
    let base = m
        .forward(tokens, &InterventionSpec::none(), Capture::ALL)
        .unwrap();
    let abl = m
        .forward(
            tokens,
            &InterventionSpec::heads([HeadRef::new(2, 1)]),
            Capture::ALL,
        )
        .unwrap();
    for l in 0..=2 {
        assert_eq!(base.cache[l].resid_pre, abl.cache[l].resid_pre, "layer {l}");
    }
    assert_ne!(base.cache[3].resid_pre, abl.cache[3].resid_pre);
}

#[test]
fn empty_spec_is_bitwise_identity() {
    let m = Model::<f32>::random(common::qwen_like(2, 4, 2), 23, 0.5).unwrap();
    let tokens = &prompts(24, 1, 23, (9, 9))[0];
    let a = m
        .forward(tokens, &InterventionSpec::none(), Capture::ALL)
        .unwrap();
    let spec = InterventionSpec::heads([]).with_scope(PositionScope::FinalToken);
    assert!(spec.is_empty());
    let b = m.forward(tokens, &spec, Capture::ALL).unwrap();
    assert_eq!(a, b);
}

#[test]
fn out_of_range_inputs_are_rejected() {
    let m = Model::<f32>::random(common::gpt2_like(1, 2), 25, 0.5).unwrap();
    assert!(m
        .forward(&[], &InterventionSpec::none(), Capture::NONE)
        .is_err());
    assert!(m
        .forward(&[23], &InterventionSpec::none(), Capture::NONE)
        .is_err());
    let too_long = vec![0u32; 33];
    assert!(m
        .forward(&too_long, &InterventionSpec::none(), Capture::NONE)
        .is_err());
    let bad = InterventionSpec::heads([HeadRef::new(0, 2)]);
    assert!(m.forward(&[1, 2], &bad, Capture::NONE).is_err());
}

#[test]
fn attention_rows_are_causal_distributions() {
    let m = Model64::random(common::qwen_like(2, 4, 2), 27, 0.5).unwrap();
    let tokens = &prompts(28, 1, 23, (7, 7))[0];
    let r = m
        .forward(tokens, &InterventionSpec::none(), Capture::ATTENTION)
        .unwrap();
    let n = tokens.len();
    for l in 0..2 {
        for h in 0..4 {
            for q in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    let w = r.attention_weight(l, h, q, k).unwrap();
                    if k > q {
                        assert_eq!(w, 0.0);
                    }
                    s += w;
                }
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_models_match_reference(seed in 0u64..10_000, len in 1usize..8, kv_pick in 0usize..3) {
        let kv = [1, 2, 4][kv_pick];
        let m = Model64::random(common::qwen_like(2, 4, kv), seed, 0.5).unwrap();
        let tokens = &prompts(seed ^ 0xabc, 1, 23, (len, len))[0];
        let got = m.forward(tokens, &InterventionSpec::none(), Capture::NONE).unwrap();
        let want = reference_logits(&m, tokens, &none(), &none());
        prop_assert!(max_abs_diff(&got.logits, &want) < TOL);
    }

    #[test]
    fn f32_tracks_f64(seed in 0u64..10_000) {
        let m64 = Model64::random(common::neox_like(2, 4), seed, 0.5).unwrap();
        let m32: Model<f32> = m64.cast().unwrap();
        let tokens = &prompts(seed, 1, 23, (6, 6))[0];
        let a = m64.forward(tokens, &InterventionSpec::none(), Capture::NONE).unwrap();
        let b = m32.forward(tokens, &InterventionSpec::none(), Capture::NONE).unwrap();
        let d = a.logits.data().iter().zip(b.logits.data())
            .map(|(x, y)| (x - *y as f64).abs()).fold(0.0, f64::max);
        prop_assert!(d < 1e-4, "{}", d);
    }
}
