// SPDX-License-Identifier: MIT OR Apache-2.0

//! Tensor kernels against naive formulas and closed forms.

use circuitscope::tensor::{
    gelu, layer_norm, matmul, rms_norm, rope_apply, rope_apply_with, silu, softmax_rows,
    RopeParams, RopeStyle,
};
use circuitscope::Tensor;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// ----------------------------------------------------------------------------
// Matmul and softmax
// ----------------------------------------------------------------------------

proptest! {
    #[test]
    fn matmul_matches_triple_loop(
        (a, b) in (1usize..6, 1usize..6, 1usize..6)
            .prop_flat_map(|(m, k, n)| (matrix(m, k), matrix(k, n)))
    ) {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let c = matmul(&a, &b).unwrap();
        prop_assert_eq!(c.shape(), &[m, n][..]);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a.get2(i, p) * b.get2(p, j)).sum();
                prop_assert!((c.get2(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_matches_exp_over_sum(s in matrix(5, 5), causal in any::<bool>()) {
        let p = softmax_rows(&s, causal).unwrap();
        for i in 0..5 {
            let limit = if causal { i + 1 } else { 5 };
            let z: f64 = (0..limit).map(|j| s.get2(i, j).exp()).sum();
            for j in 0..5 {
                let want = if j < limit { s.get2(i, j).exp() / z } else { 0.0 };
                prop_assert!((p.get2(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_is_shift_invariant(s in matrix(3, 4), c in -50.0f64..50.0) {
        let shifted = Tensor::new(vec![3, 4], s.data().iter().map(|v| v + c).collect()).unwrap();
        let a = softmax_rows(&s, false).unwrap();
        let b = softmax_rows(&shifted, false).unwrap();
        prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }
}

#[test]
fn softmax_survives_large_scores() {
    let s = Tensor::new(vec![1, 3], vec![1000.0f32, 999.0, -1000.0]).unwrap();
    let p = softmax_rows(&s, false).unwrap();
    let e = (-1.0f64).exp();
    assert!((p.get2(0, 0) as f64 - 1.0 / (1.0 + e)).abs() < 1e-6);
    assert_eq!(p.get2(0, 2), 0.0);
}

// ----------------------------------------------------------------------------
// Norms
// ----------------------------------------------------------------------------

proptest! {
    #[test]
    fn layer_norm_output_has_zero_mean_unit_variance(x in matrix(3, 8)) {
        prop_assume!(x.data().chunks(8).all(|r| {
            let m = r.iter().sum::<f64>() / 8.0;
            r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 8.0 > 1e-3
        }));
        let ones = Tensor::new(vec![8], vec![1.0; 8]).unwrap();
        let zeros = Tensor::new(vec![8], vec![0.0; 8]).unwrap();
        let y = layer_norm(&x, &ones, &zeros, 1e-12).unwrap();
        for r in y.data().chunks(8) {
            let m = r.iter().sum::<f64>() / 8.0;
            let v = r.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 8.0;
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rms_norm_matches_formula(x in matrix(2, 6), g in prop::collection::vec(0.1f64..3.0, 6)) {
        let gain = Tensor::new(vec![6], g.clone()).unwrap();
        let y = rms_norm(&x, &gain, 1e-6).unwrap();
        for (r, out) in x.data().chunks(6).zip(y.data().chunks(6)) {
            let rms = (r.iter().map(|v| v * v).sum::<f64>() / 6.0 + 1e-6).sqrt();
            for i in 0..6 {
                prop_assert!((out[i] - r[i] / rms * g[i]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn layer_norm_applies_gain_and_bias() {
    let x = Tensor::new(vec![1, 2], vec![1.0f64, 3.0]).unwrap();
    let g = Tensor::new(vec![2], vec![2.0, 5.0]).unwrap();
    let b = Tensor::new(vec![2], vec![0.5, -0.5]).unwrap();
    let y = layer_norm(&x, &g, &b, 0.0).unwrap();
    // Normalized row is (-1, 1).
    assert!((y.get2(0, 0) - (-2.0 + 0.5)).abs() < 1e-12);
    assert!((y.get2(0, 1) - (5.0 - 0.5)).abs() < 1e-12);
}

// ----------------------------------------------------------------------------
// Rotary embeddings
// ----------------------------------------------------------------------------

#[test]
fn rope_single_pair_is_a_plane_rotation() {
    // One pair rotates by p radians.
    let x = Tensor::new(vec![4, 2], vec![1.0f64, 0.0, 1.0, 0.0, 0.0, 1.0, 2.0, -1.0]).unwrap();
    let y = rope_apply(&x, 10000.0, 0).unwrap();
    for p in 0..4 {
        let (s, c) = (p as f64).sin_cos();
        let (a, b) = (x.get2(p, 0), x.get2(p, 1));
        assert!((y.get2(p, 0) - (a * c - b * s)).abs() < 1e-12);
        assert!((y.get2(p, 1) - (a * s + b * c)).abs() < 1e-12);
    }
}

#[test]
fn rope_second_pair_uses_base_frequency() {
    let x = Tensor::new(vec![1, 4], vec![0.0f64, 0.0, 1.0, 0.0]).unwrap();
    let y = rope_apply(&x, 100.0, 3).unwrap();
    // Pair 1 of width 4 turns at 100^(-1/2) = 0.1 rad per position.
    let th: f64 = 3.0 * 0.1;
    assert!((y.get2(0, 2) - th.cos()).abs() < 1e-12);
    assert!((y.get2(0, 3) - th.sin()).abs() < 1e-12);
}

#[test]
fn rope_offset_equals_row_shift() {
    let x = Tensor::new(vec![3, 4], (0..12).map(|v| v as f64 * 0.3 - 1.0).collect()).unwrap();
    let shifted = rope_apply(&x, 10000.0, 5).unwrap();
    let padded = Tensor::from_fn(8, 4, |r, c| if r >= 5 { x.get2(r - 5, c) } else { 0.0 });
    let full = rope_apply(&padded, 10000.0, 0).unwrap();
    for r in 0..3 {
        for c in 0..4 {
            assert!((shifted.get2(r, c) - full.get2(r + 5, c)).abs() < 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn rope_preserves_row_norms_f32(
        data in prop::collection::vec(-1.0f32..1.0, 8 * 8),
        offset in 0usize..4096,
        half in any::<bool>(),
    ) {
        let x = Tensor::new(vec![8, 8], data).unwrap();
        let style = if half { RopeStyle::Half } else { RopeStyle::Interleaved };
        let y = rope_apply_with(&x, &RopeParams { base: 10000.0, rotary_dim: 8, style }, offset).unwrap();
        for r in 0..8 {
            let a: Vec<f64> = x.row(r).iter().map(|v| *v as f64).collect();
            let b: Vec<f64> = y.row(r).iter().map(|v| *v as f64).collect();
            let (na, nb) = (norm(&a), norm(&b));
            prop_assert!((na - nb).abs() <= 1e-6 * na.max(1.0), "{} vs {}", na, nb);
        }
    }

    #[test]
    fn rope_dot_products_depend_on_offset_difference(
        q in prop::collection::vec(-1.0f64..1.0, 6),
        k in prop::collection::vec(-1.0f64..1.0, 6),
        p in 0usize..200, s in 0usize..200, shift in 0usize..200,
    ) {
        let params = RopeParams { base: 10000.0, rotary_dim: 6, style: RopeStyle::Half };
        let q = Tensor::new(vec![1, 6], q).unwrap();
        let k = Tensor::new(vec![1, 6], k).unwrap();
        let dot = |a: usize, b: usize| {
            let qa = rope_apply_with(&q, &params, a).unwrap();
            let kb = rope_apply_with(&k, &params, b).unwrap();
            qa.data().iter().zip(kb.data()).map(|(x, y)| x * y).sum::<f64>()
        };
        prop_assert!((dot(p, s) - dot(p + shift, s + shift)).abs() < 1e-9);
    }

    #[test]
    fn partial_rope_leaves_the_tail(data in prop::collection::vec(-1.0f64..1.0, 8), offset in 0usize..100) {
        let x = Tensor::new(vec![1, 8], data).unwrap();
        let params = RopeParams { base: 10000.0, rotary_dim: 4, style: RopeStyle::Half };
        let y = rope_apply_with(&x, &params, offset).unwrap();
        prop_assert_eq!(&y.data()[4..], &x.data()[4..]);
    }
}

// ----------------------------------------------------------------------------
// Activations
// ----------------------------------------------------------------------------

#[test]
fn activations_at_known_points() {
    // GELU(1) = 0.5·(1 + erf(1/√2)) = Φ(1).
    assert!((gelu(1.0f64) - 0.841_344_746_068_542_9).abs() < 1e-12);
    assert!((gelu(-1.0f64) + 0.158_655_253_931_457_05).abs() < 1e-12);
    assert_eq!(gelu(0.0f64), 0.0);
    assert!((silu(1.0f64) - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
    assert!((silu(-20.0f64) + 20.0 * (-20.0f64).exp()).abs() < 1e-12);
}
