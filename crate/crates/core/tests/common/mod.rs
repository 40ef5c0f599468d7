// SPDX-License-Identifier: MIT OR Apache-2.0

//! Test helpers: random models and prompts, plus a reference forward pass
//! written directly from the architecture description. It shares no code
//! with the library's forward pass.

#![allow(dead_code)]

use std::collections::BTreeSet;

use circuitscope::model::{
    MlpStyle, MlpWeights, ModelConfig, NormParams, NormStyle, Positional, ResidualStyle,
};
use circuitscope::tensor::RopeStyle;
use circuitscope::{Model, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ----------------------------------------------------------------------------
// Random configurations and prompts
// ----------------------------------------------------------------------------

pub fn config(
    n_layers: usize,
    n_heads: usize,
    n_kv_heads: usize,
    norm: NormStyle,
    residual: ResidualStyle,
    mlp: MlpStyle,
    positional: Positional,
) -> ModelConfig {
    ModelConfig {
        n_layers,
        n_heads,
        n_kv_heads,
        d_model: 16,
        d_head: 4,
        vocab_size: 23,
        d_mlp: if mlp == MlpStyle::None { 0 } else { 24 },
        norm_style: norm,
        norm_eps: 1e-5,
        residual_style: residual,
        mlp_style: mlp,
        positional,
        qkv_bias: true,
        o_bias: true,
        mlp_bias: mlp == MlpStyle::Gelu,
        unembed_bias: true,
    }
}

/// Pythia-like: LayerNorm, parallel residual, GELU, partial rotary.
pub fn neox_like(n_layers: usize, n_heads: usize) -> ModelConfig {
    config(
        n_layers,
        n_heads,
        n_heads,
        NormStyle::LayerNorm,
        ResidualStyle::Parallel,
        MlpStyle::Gelu,
        Positional::Rotary {
            base: 10000.0,
            rotary_dim: Some(2),
            style: RopeStyle::Half,
        },
    )
}

/// Qwen-like: RMSNorm, serial residual, gated SiLU, full rotary, GQA.
pub fn qwen_like(n_layers: usize, n_heads: usize, n_kv: usize) -> ModelConfig {
    let mut c = config(
        n_layers,
        n_heads,
        n_kv,
        NormStyle::RmsNorm,
        ResidualStyle::Serial,
        MlpStyle::SiluGated,
        Positional::Rotary {
            base: 10000.0,
            rotary_dim: None,
            style: RopeStyle::Half,
        },
    );
    c.o_bias = false;
    c.unembed_bias = false;
    c
}

/// GPT-2-like: LayerNorm, serial residual, GELU, learned positions.
pub fn gpt2_like(n_layers: usize, n_heads: usize) -> ModelConfig {
    config(
        n_layers,
        n_heads,
        n_heads,
        NormStyle::LayerNorm,
        ResidualStyle::Serial,
        MlpStyle::Gelu,
        Positional::AbsoluteLearned { n_ctx: 32 },
    )
}

pub fn prompts(seed: u64, count: usize, vocab: usize, len: (usize, usize)) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(len.0..=len.1);
            (0..n).map(|_| rng.random_range(0..vocab as u32)).collect()
        })
        .collect()
}

// ----------------------------------------------------------------------------
// Reference forward pass
// ----------------------------------------------------------------------------

fn norm(cfg: &ModelConfig, p: &Option<NormParams<f64>>, x: &[f64]) -> Vec<f64> {
    let d = x.len() as f64;
    match cfg.norm_style {
        NormStyle::Identity => x.to_vec(),
        NormStyle::LayerNorm => {
            let p = p.as_ref().unwrap();
            let mean = x.iter().sum::<f64>() / d;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let inv = 1.0 / (var + cfg.norm_eps).sqrt();
            let b = p.bias.as_ref().unwrap().data();
            x.iter()
                .enumerate()
                .map(|(i, v)| (v - mean) * inv * p.gain.data()[i] + b[i])
                .collect()
        }
        NormStyle::RmsNorm => {
            let p = p.as_ref().unwrap();
            let ms = x.iter().map(|v| v * v).sum::<f64>() / d;
            let inv = 1.0 / (ms + cfg.norm_eps).sqrt();
            x.iter()
                .enumerate()
                .map(|(i, v)| v * inv * p.gain.data()[i])
                .collect()
        }
    }
}

/// `x · W (+ b)` for a row vector and a `[in × out]` matrix.
fn linear(x: &[f64], w: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Vec<f64> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    assert_eq!(rows, x.len());
    (0..cols)
        .map(|j| {
            let s: f64 = (0..rows).map(|i| x[i] * w.get2(i, j)).sum();
            s + b.map_or(0.0, |b| b.data()[j])
        })
        .collect()
}

fn rotate(cfg: &ModelConfig, v: &mut [f64], pos: usize) {
    let Positional::Rotary {
        base,
        rotary_dim,
        style,
    } = cfg.positional
    else {
        return;
    };
    let rd = rotary_dim.unwrap_or(cfg.d_head);
    for i in 0..rd / 2 {
        let theta = pos as f64 * base.powf(-(2.0 * i as f64) / rd as f64);
        let (a, b) = match style {
            RopeStyle::Half => (i, i + rd / 2),
            RopeStyle::Interleaved => (2 * i, 2 * i + 1),
        };
        let (x, y) = (v[a], v[b]);
        v[a] = x * theta.cos() - y * theta.sin();
        v[b] = x * theta.sin() + y * theta.cos();
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Logits at every position. `heads` and `kv_heads` hold `(layer, index)`
/// pairs to zero: heads by their pre-projection output, KV heads by their
/// values.
pub fn reference_logits(
    model: &Model<f64>,
    tokens: &[u32],
    heads: &BTreeSet<(usize, usize)>,
    kv_heads: &BTreeSet<(usize, usize)>,
) -> Vec<Vec<f64>> {
    let cfg = model.config();
    let w = model.weights();
    let (h, kvh, dh) = (cfg.n_heads, cfg.n_kv_heads, cfg.d_head);
    let r = h / kvh;
    let n = tokens.len();
    let mut xs: Vec<Vec<f64>> = tokens
        .iter()
        .enumerate()
        .map(|(t, &tok)| {
            let mut x = w.embed.row(tok as usize).to_vec();
            if let Some(pe) = &w.pos_embed {
                for (a, b) in x.iter_mut().zip(pe.row(t)) {
                    *a += b;
                }
            }
            x
        })
        .collect();

    for (l, layer) in w.layers.iter().enumerate() {
        let a = &layer.attn;
        let normed: Vec<Vec<f64>> = xs.iter().map(|x| norm(cfg, &layer.attn_norm, x)).collect();
        let q: Vec<Vec<f64>> = normed
            .iter()
            .map(|x| linear(x, &a.wq, a.bq.as_ref()))
            .collect();
        let k: Vec<Vec<f64>> = normed
            .iter()
            .map(|x| linear(x, &a.wk, a.bk.as_ref()))
            .collect();
        let v: Vec<Vec<f64>> = normed
            .iter()
            .map(|x| linear(x, &a.wv, a.bv.as_ref()))
            .collect();
        let mut attn_out = Vec::with_capacity(n);
        for t in 0..n {
            let mut z = vec![0.0; h * dh];
            for head in 0..h {
                let g = head / r;
                if heads.contains(&(l, head)) {
                    continue;
                }
                let mut qv = q[t][head * dh..(head + 1) * dh].to_vec();
                rotate(cfg, &mut qv, t);
                let scores: Vec<f64> = (0..=t)
                    .map(|s| {
                        let mut kv = k[s][g * dh..(g + 1) * dh].to_vec();
                        rotate(cfg, &mut kv, s);
                        qv.iter().zip(&kv).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt()
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let total: f64 = e.iter().sum();
                if kv_heads.contains(&(l, g)) {
                    continue;
                }
                for s in 0..=t {
                    for c in 0..dh {
                        z[head * dh + c] += e[s] / total * v[s][g * dh + c];
                    }
                }
            }
            attn_out.push(linear(&z, &a.wo, a.bo.as_ref()));
        }
        let mlp = |x: &[f64]| -> Vec<f64> {
            let x = norm(cfg, &layer.mlp_norm, x);
            match layer.mlp.as_ref().unwrap() {
                MlpWeights::Gelu {
                    w_in,
                    b_in,
                    w_out,
                    b_out,
                } => {
                    let hidden: Vec<f64> = linear(&x, w_in, b_in.as_ref())
                        .into_iter()
                        .map(gelu)
                        .collect();
                    linear(&hidden, w_out, b_out.as_ref())
                }
                MlpWeights::SiluGated {
                    w_gate,
                    w_up,
                    w_down,
                } => {
                    let g = linear(&x, w_gate, None);
                    let u = linear(&x, w_up, None);
                    let hidden: Vec<f64> = g
                        .iter()
                        .zip(&u)
                        .map(|(g, u)| g / (1.0 + (-g).exp()) * u)
                        .collect();
                    linear(&hidden, w_down, None)
                }
            }
        };
        for t in 0..n {
            match cfg.residual_style {
                ResidualStyle::Parallel => {
                    let m = (cfg.mlp_style != MlpStyle::None).then(|| mlp(&xs[t]));
                    for (a, b) in xs[t].iter_mut().zip(&attn_out[t]) {
                        *a += b;
                    }
                    if let Some(m) = m {
                        for (a, b) in xs[t].iter_mut().zip(&m) {
                            *a += b;
                        }
                    }
                }
                ResidualStyle::Serial => {
                    for (a, b) in xs[t].iter_mut().zip(&attn_out[t]) {
                        *a += b;
                    }
                    if cfg.mlp_style != MlpStyle::None {
                        let m = mlp(&xs[t]);
                        for (a, b) in xs[t].iter_mut().zip(&m) {
                            *a += b;
                        }
                    }
                }
            }
        }
    }
    xs.iter()
        .map(|x| {
            let x = norm(cfg, &w.final_norm, x);
            linear(&x, &w.unembed, w.unembed_bias.as_ref())
        })
        .collect()
}

/// Largest elementwise gap; NaN anywhere counts as infinite.
pub fn max_abs_diff(a: &Tensor<f64>, b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.shape(), &[b.len(), b[0].len()][..], "logit shapes differ");
    b.iter()
        .enumerate()
        .flat_map(|(t, row)| row.iter().enumerate().map(move |(j, v)| (t, j, *v)))
        .map(|(t, j, v)| (a.get2(t, j) - v).abs())
        .fold(
            0.0,
            |m, d| if d.is_nan() { f64::INFINITY } else { m.max(d) },
        )
}

// ----------------------------------------------------------------------------
// Exhaustive greedy oracle
// ----------------------------------------------------------------------------

/// `−log softmax(row)[target]`.
pub fn cross_entropy(row: &[f64], target: u32) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    lse - row[target as usize]
}

/// Mean final-position loss on `(tokens, target)` pairs with `heads` zeroed.
pub fn reference_icl_loss(
    model: &Model<f64>,
    prompts: &[(Vec<u32>, u32)],
    heads: &BTreeSet<(usize, usize)>,
) -> f64 {
    let total: f64 = prompts
        .iter()
        .map(|(t, b)| {
            let logits = reference_logits(model, t, heads, &BTreeSet::new());
            cross_entropy(logits.last().unwrap(), *b)
        })
        .sum();
    total / prompts.len() as f64
}

/// Greedy search over every head, written from the definition: at each step
/// ablate the chosen set plus one more head, keep the head with the largest
/// loss increase (lowest `(layer, head)` on ties), and normalize by
/// `ln V − baseline` when that headroom is positive.
pub fn oracle_greedy(
    model: &Model<f64>,
    prompts: &[(Vec<u32>, u32)],
    budget: usize,
) -> Vec<((usize, usize), f64)> {
    let cfg = model.config();
    let base = reference_icl_loss(model, prompts, &BTreeSet::new());
    let headroom = (cfg.vocab_size as f64).ln() - base;
    let norm = |raw: f64| if headroom > 0.0 { raw / headroom } else { raw };
    let mut chosen: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut out = Vec::new();
    for _ in 0..budget.min(cfg.n_layers * cfg.n_heads) {
        let mut best: Option<((usize, usize), f64)> = None;
        for l in 0..cfg.n_layers {
            for h in 0..cfg.n_heads {
                if chosen.contains(&(l, h)) {
                    continue;
                }
                let mut set = chosen.clone();
                set.insert((l, h));
                let raw = reference_icl_loss(model, prompts, &set) - base;
                if best.is_none_or(|(_, b)| raw > b) {
                    best = Some(((l, h), raw));
                }
            }
        }
        let (unit, raw) = best.unwrap();
        chosen.insert(unit);
        out.push((unit, norm(raw)));
    }
    out
}
