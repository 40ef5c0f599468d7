// SPDX-License-Identifier: MIT OR Apache-2.0

//! Hooked forward pass.
//!
//! Two attention routings compute the same function:
//!
//! - **grouped**: loops over KV heads and, inside each, over the `r` query
//!   heads that read it (`K_{⌊i/r⌋}`, `V_{⌊i/r⌋}`). Handles any `n_kv`.
//! - **per-head**: materialises `Q_i`, `K_i`, `V_i` as separate tensors and
//!   runs them through the generic kernels. Only valid when `n_kv == h`.
//!
//! The per-head routing is the reference MHA path that the grouped routing
//! is checked against.

use rayon::prelude::*;

use super::config::{MlpStyle, ModelConfig, NormStyle, Positional, ResidualStyle};
use super::intervention::{InterventionSpec, PositionScope};
use super::weights::{AttentionWeights, MlpWeights, NormParams};
use super::Model;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, gelu, matmul, silu, softmax_rows, Tensor};

/// What to record during the pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Capture {
    /// Attention patterns, `[head × pos × pos]` per layer.
    pub attention: bool,
    /// Per-head pre-projection outputs, `[pos × head × d_head]` per layer.
    pub z: bool,
    /// Residual stream entering each layer, `[pos × d_model]`.
    pub residual: bool,
}

impl Capture {
    pub const NONE: Self = Self {
        attention: false,
        z: false,
        residual: false,
    };
    pub const ALL: Self = Self {
        attention: true,
        z: true,
        residual: true,
    };
    pub const ATTENTION: Self = Self {
        attention: true,
        z: false,
        residual: false,
    };

    fn any(self) -> bool {
        self.attention || self.z || self.residual
    }
}

/// Which positions get logits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum LogitScope {
    #[default]
    AllPositions,
    /// Only the last position; saves the unembedding cost when scoring.
    FinalPosition,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum AttentionRouting {
    /// Per-head when `n_kv == h`, grouped otherwise.
    #[default]
    Auto,
    Grouped,
    PerHead,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    pub capture: Capture,
    pub logits: LogitScope,
    pub routing: AttentionRouting,
}

impl ForwardOptions {
    pub fn with_capture(capture: Capture) -> Self {
        Self {
            capture,
            ..Self::default()
        }
    }

    pub fn final_only() -> Self {
        Self {
            logits: LogitScope::FinalPosition,
            ..Self::default()
        }
    }
}

/// Activations recorded for one layer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerCache<T> {
    pub resid_pre: Option<Tensor<T>>,
    pub pattern: Option<Tensor<T>>,
    pub z: Option<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult<T> {
    /// `[rows × vocab]`; row `i` is position `logits_start + i`.
    pub logits: Tensor<T>,
    pub logits_start: usize,
    pub seq_len: usize,
    /// One entry per layer when anything was captured, empty otherwise.
    pub cache: Vec<LayerCache<T>>,
}

impl<T: Scalar> ForwardResult<T> {
    pub fn logits_at(&self, pos: usize) -> Option<&[T]> {
        if pos < self.logits_start || pos >= self.seq_len {
            return None;
        }
        Some(self.logits.row(pos - self.logits_start))
    }

    pub fn final_logits(&self) -> &[T] {
        self.logits.row(self.logits.shape()[0] - 1)
    }

    pub fn pattern(&self, layer: usize) -> Option<&Tensor<T>> {
        self.cache.get(layer).and_then(|c| c.pattern.as_ref())
    }

    /// Attention weight of `head` in `layer` from `query` to `key`.
    pub fn attention_weight(
        &self,
        layer: usize,
        head: usize,
        query: usize,
        key: usize,
    ) -> Result<T> {
        let p = self.pattern(layer).ok_or(Error::CacheMissing(layer))?;
        let (h, n) = (p.shape()[0], p.shape()[1]);
        if head >= h || query >= n || key >= n {
            return Err(Error::OutOfBounds(format!(
                "attention index ({head}, {query}, {key}) outside {h}×{n}×{n}"
            )));
        }
        Ok(p.data()[(head * n + query) * n + key])
    }
}

fn with_layer(e: Error, layer: usize) -> Error {
    match e {
        Error::NonFinite(s) => Error::NonFinite(format!("layer {layer}: {s}")),
        other => other,
    }
}

fn add_bias<T: Scalar>(t: &mut Tensor<T>, b: &Option<Tensor<T>>) -> Result<()> {
    match b {
        Some(b) => t.add_row_bias(b),
        None => Ok(()),
    }
}

fn apply_norm<T: Scalar>(
    config: &ModelConfig,
    norm: &Option<NormParams<T>>,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    let eps = T::of(config.norm_eps);
    match (config.norm_style, norm) {
        (NormStyle::Identity, _) | (_, None) => Ok(x.clone()),
        (NormStyle::LayerNorm, Some(n)) => {
            let zero;
            let bias = match &n.bias {
                Some(b) => b,
                None => {
                    zero = Tensor::zeros(vec![n.gain.len()]);
                    &zero
                }
            };
            tensor::layer_norm(x, &n.gain, bias, eps)
        }
        (NormStyle::RmsNorm, Some(n)) => tensor::rms_norm(x, &n.gain, eps),
    }
}

fn mlp_forward<T: Scalar>(mlp: &MlpWeights<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    match mlp {
        MlpWeights::Gelu {
            w_in,
            b_in,
            w_out,
            b_out,
        } => {
            let mut h = matmul(x, w_in)?;
            add_bias(&mut h, b_in)?;
            h.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
            let mut out = matmul(&h, w_out)?;
            add_bias(&mut out, b_out)?;
            Ok(out)
        }
        MlpWeights::SiluGated {
            w_gate,
            w_up,
            w_down,
        } => {
            let mut g = matmul(x, w_gate)?;
            let u = matmul(x, w_up)?;
            for (gv, uv) in g.data_mut().iter_mut().zip(u.data()) {
                *gv = silu(*gv) * *uv;
            }
            matmul(&g, w_down)
        }
    }
}

/// Copies head block `head` (width `dh`) out of a `[n × heads·dh]` matrix.
fn head_block<T: Scalar>(m: &Tensor<T>, head: usize, dh: usize) -> Tensor<T> {
    let (n, w) = (m.shape()[0], m.last_dim());
    Tensor::from_fn(n, dh, |t, c| m.data()[t * w + head * dh + c])
}

fn write_head_block<T: Scalar>(m: &mut Tensor<T>, head: usize, block: &Tensor<T>) {
    let (w, dh) = (m.last_dim(), block.last_dim());
    let n = block.shape()[0];
    for t in 0..n {
        m.data_mut()[t * w + head * dh..t * w + (head + 1) * dh].copy_from_slice(block.row(t));
    }
}

struct AttentionOut<T> {
    out: Tensor<T>,
    pattern: Option<Tensor<T>>,
    z: Tensor<T>,
}

impl<T: Scalar> Model<T> {
    /// Forward pass with logits at every position.
    pub fn forward(
        &self,
        tokens: &[u32],
        spec: &InterventionSpec,
        capture: Capture,
    ) -> Result<ForwardResult<T>> {
        self.forward_with(tokens, spec, &ForwardOptions::with_capture(capture))
    }

    pub fn forward_with(
        &self,
        tokens: &[u32],
        spec: &InterventionSpec,
        opts: &ForwardOptions,
    ) -> Result<ForwardResult<T>> {
        let cfg = &self.config;
        let n = tokens.len();
        if n == 0 {
            return Err(Error::InvalidParameter("token sequence is empty".into()));
        }
        if let Some(bad) = tokens.iter().find(|t| **t as usize >= cfg.vocab_size) {
            return Err(Error::OutOfBounds(format!(
                "token id {bad} >= vocab size {}",
                cfg.vocab_size
            )));
        }
        if let Some(max) = cfg.max_positions() {
            if n > max {
                return Err(Error::OutOfBounds(format!(
                    "sequence length {n} exceeds {max} positions"
                )));
            }
        }
        spec.validate(cfg)?;
        let per_head = match opts.routing {
            AttentionRouting::Auto => cfg.is_mha(),
            AttentionRouting::Grouped => false,
            AttentionRouting::PerHead => {
                if !cfg.is_mha() {
                    return Err(Error::Config(
                        "per-head routing requires n_kv_heads == n_heads".into(),
                    ));
                }
                true
            }
        };

        let d = cfg.d_model;
        let w = &self.weights;
        let mut x_data = Vec::with_capacity(n * d);
        for &tok in tokens {
            x_data.extend_from_slice(w.embed.row(tok as usize));
        }
        let mut x = Tensor::new(vec![n, d], x_data)?;
        if let (Positional::AbsoluteLearned { .. }, Some(pe)) = (cfg.positional, &w.pos_embed) {
            for t in 0..n {
                for (a, b) in x.row_mut(t).iter_mut().zip(pe.row(t)) {
                    *a += *b;
                }
            }
        }

        let capture = opts.capture;
        let mut cache = Vec::new();
        for (l, layer) in w.layers.iter().enumerate() {
            let resid_pre = capture.residual.then(|| x.clone());
            let attn_in = apply_norm(cfg, &layer.attn_norm, &x).map_err(|e| with_layer(e, l))?;
            let attn = self
                .attention(l, &layer.attn, &attn_in, spec, capture.attention, per_head)
                .map_err(|e| with_layer(e, l))?;
            match cfg.residual_style {
                ResidualStyle::Parallel => {
                    let mlp_out = match &layer.mlp {
                        Some(mlp) => {
                            let mlp_in = apply_norm(cfg, &layer.mlp_norm, &x)?;
                            Some(mlp_forward(mlp, &mlp_in).map_err(|e| with_layer(e, l))?)
                        }
                        None => None,
                    };
                    x.add_assign(&attn.out)?;
                    if let Some(m) = mlp_out {
                        x.add_assign(&m)?;
                    }
                }
                ResidualStyle::Serial => {
                    x.add_assign(&attn.out)?;
                    if let Some(mlp) = &layer.mlp {
                        let mlp_in = apply_norm(cfg, &layer.mlp_norm, &x)?;
                        let m = mlp_forward(mlp, &mlp_in).map_err(|e| with_layer(e, l))?;
                        x.add_assign(&m)?;
                    }
                }
            }
            x.ensure_finite(&format!("layer {l} residual output"))?;
            if capture.any() {
                let z = capture.z.then(|| {
                    attn.z
                        .clone()
                        .reshape(vec![n, cfg.n_heads, cfg.d_head])
                        .expect("z has n·h·dh elements")
                });
                cache.push(LayerCache {
                    resid_pre,
                    pattern: attn.pattern,
                    z,
                });
            }
        }
        debug_assert!(cfg.mlp_style == MlpStyle::None || w.layers.iter().all(|l| l.mlp.is_some()));

        let logits_start = match opts.logits {
            LogitScope::AllPositions => 0,
            LogitScope::FinalPosition => n - 1,
        };
        let rows = if logits_start == 0 {
            x
        } else {
            Tensor::new(vec![1, d], x.row(n - 1).to_vec())?
        };
        let normed = apply_norm(cfg, &w.final_norm, &rows)?;
        let mut logits = matmul(&normed, &w.unembed)?;
        add_bias(&mut logits, &w.unembed_bias)?;
        logits.ensure_finite("logits")?;
        Ok(ForwardResult {
            logits,
            logits_start,
            seq_len: n,
            cache,
        })
    }

    /// Runs [`Model::forward_with`] over many prompts in parallel. Each
    /// result is computed independently, so output `i` is bit-identical to a
    /// solo call on prompt `i`.
    pub fn forward_batch(
        &self,
        prompts: &[Vec<u32>],
        spec: &InterventionSpec,
        opts: &ForwardOptions,
    ) -> Vec<Result<ForwardResult<T>>> {
        prompts
            .par_iter()
            .map(|p| self.forward_with(p, spec, opts))
            .collect()
    }

    fn attention(
        &self,
        layer: usize,
        a: &AttentionWeights<T>,
        x: &Tensor<T>,
        spec: &InterventionSpec,
        keep_pattern: bool,
        per_head: bool,
    ) -> Result<AttentionOut<T>> {
        let cfg = &self.config;
        let n = x.shape()[0];
        let (h, dh) = (cfg.n_heads, cfg.d_head);
        let mut q = matmul(x, &a.wq)?;
        add_bias(&mut q, &a.bq)?;
        let mut k = matmul(x, &a.wk)?;
        add_bias(&mut k, &a.bk)?;
        let mut v = matmul(x, &a.wv)?;
        add_bias(&mut v, &a.bv)?;
        if let Some(rope) = cfg.rope() {
            for head in 0..h {
                let b = tensor::rope_apply_with(&head_block(&q, head, dh), &rope, 0)?;
                write_head_block(&mut q, head, &b);
            }
            for kv in 0..cfg.n_kv_heads {
                let b = tensor::rope_apply_with(&head_block(&k, kv, dh), &rope, 0)?;
                write_head_block(&mut k, kv, &b);
            }
        }

        let active = spec.touches_layer(layer);
        if active && spec.scope == PositionScope::All {
            let kw = cfg.kv_width();
            for kv in 0..cfg.n_kv_heads {
                if spec.kv_ablated(layer, kv) {
                    for t in 0..n {
                        v.data_mut()[t * kw + kv * dh..t * kw + (kv + 1) * dh]
                            .iter_mut()
                            .for_each(|e| *e = T::zero());
                    }
                }
            }
        }

        let mut pattern = keep_pattern.then(|| vec![T::zero(); h * n * n]);
        let mut z = if per_head {
            self.attend_per_head(&q, &k, &v, pattern.as_deref_mut())?
        } else {
            self.attend_grouped(&q, &k, &v, pattern.as_deref_mut())
        };

        if active {
            let qw = cfg.q_width();
            for head in 0..h {
                let kv_final = spec.scope == PositionScope::FinalToken
                    && spec.kv_ablated(layer, cfg.kv_head_of(head));
                let head_off = spec.head_ablated(layer, head);
                if !(kv_final || head_off) {
                    continue;
                }
                for t in (0..n).filter(|t| spec.scope.covers(*t, n)) {
                    z[t * qw + head * dh..t * qw + (head + 1) * dh]
                        .iter_mut()
                        .for_each(|e| *e = T::zero());
                }
            }
        }

        let z = Tensor::new(vec![n, cfg.q_width()], z)?;
        let mut out = matmul(&z, &a.wo)?;
        add_bias(&mut out, &a.bo)?;
        let pattern = pattern.map(|p| Tensor::new(vec![h, n, n], p)).transpose()?;
        Ok(AttentionOut { out, pattern, z })
    }

    /// `z_i = softmax(Q_i K_{⌊i/r⌋}ᵀ / √d_head) V_{⌊i/r⌋}` by direct loops.
    fn attend_grouped(
        &self,
        q: &Tensor<T>,
        k: &Tensor<T>,
        v: &Tensor<T>,
        mut pattern: Option<&mut [T]>,
    ) -> Vec<T> {
        let cfg = &self.config;
        let n = q.shape()[0];
        let dh = cfg.d_head;
        let (qw, kw) = (cfg.q_width(), cfg.kv_width());
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let (qd, kd, vd) = (q.data(), k.data(), v.data());
        let mut z = vec![T::zero(); n * qw];
        let mut weights = vec![T::zero(); n];
        for g in 0..cfg.n_kv_heads {
            for head in cfg.query_heads_of(g) {
                for t in 0..n {
                    let qrow = &qd[t * qw + head * dh..t * qw + (head + 1) * dh];
                    let mut max = T::neg_infinity();
                    for s in 0..=t {
                        let krow = &kd[s * kw + g * dh..s * kw + (g + 1) * dh];
                        let mut dot = T::zero();
                        for c in 0..dh {
                            dot += qrow[c] * krow[c];
                        }
                        let score = dot * scale;
                        weights[s] = score;
                        max = max.max(score);
                    }
                    let mut sum = T::zero();
                    for wt in &mut weights[..=t] {
                        *wt = (*wt - max).exp();
                        sum += *wt;
                    }
                    for wt in &mut weights[..=t] {
                        *wt /= sum;
                    }
                    let zrow = &mut z[t * qw + head * dh..t * qw + (head + 1) * dh];
                    for (s, &wt) in weights[..=t].iter().enumerate() {
                        let vrow = &vd[s * kw + g * dh..s * kw + (g + 1) * dh];
                        for c in 0..dh {
                            zrow[c] += wt * vrow[c];
                        }
                    }
                    if let Some(p) = pattern.as_deref_mut() {
                        p[(head * n + t) * n..(head * n + t) * n + t + 1]
                            .copy_from_slice(&weights[..=t]);
                    }
                }
            }
        }
        z
    }

    /// Reference MHA path: one `Q_i K_iᵀ` matmul and softmax per head.
    fn attend_per_head(
        &self,
        q: &Tensor<T>,
        k: &Tensor<T>,
        v: &Tensor<T>,
        mut pattern: Option<&mut [T]>,
    ) -> Result<Vec<T>> {
        let cfg = &self.config;
        let n = q.shape()[0];
        let dh = cfg.d_head;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let mut z = Tensor::zeros(vec![n, cfg.q_width()]);
        for head in 0..cfg.n_heads {
            let qi = head_block(q, head, dh);
            let ki = head_block(k, head, dh);
            let vi = head_block(v, head, dh);
            let mut scores = matmul(&qi, &ki.transpose2()?)?;
            scores.data_mut().iter_mut().for_each(|s| *s *= scale);
            let attn = softmax_rows(&scores, true)?;
            let zi = matmul(&attn, &vi)?;
            write_head_block(&mut z, head, &zi);
            if let Some(p) = pattern.as_deref_mut() {
                p[head * n * n..(head + 1) * n * n].copy_from_slice(attn.data());
            }
        }
        Ok(z.into_data())
    }
}
