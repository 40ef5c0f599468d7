// SPDX-License-Identifier: MIT OR Apache-2.0

//! Parameter tensors and the named slot table used by loaders and exporters.
//!
//! Linear maps are stored `[in × out]` so activations multiply on the left.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{MlpStyle, ModelConfig, NormStyle, Positional};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct NormParams<T> {
    pub gain: Tensor<T>,
    /// Present for LayerNorm only.
    pub bias: Option<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<T> {
    /// `[d_model × n_heads·d_head]`
    pub wq: Tensor<T>,
    pub bq: Option<Tensor<T>>,
    /// `[d_model × n_kv_heads·d_head]`
    pub wk: Tensor<T>,
    pub bk: Option<Tensor<T>>,
    /// `[d_model × n_kv_heads·d_head]`
    pub wv: Tensor<T>,
    pub bv: Option<Tensor<T>>,
    /// `[n_heads·d_head × d_model]`
    pub wo: Tensor<T>,
    pub bo: Option<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MlpWeights<T> {
    Gelu {
        w_in: Tensor<T>,
        b_in: Option<Tensor<T>>,
        w_out: Tensor<T>,
        b_out: Option<Tensor<T>>,
    },
    SiluGated {
        w_gate: Tensor<T>,
        w_up: Tensor<T>,
        w_down: Tensor<T>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub attn_norm: Option<NormParams<T>>,
    pub mlp_norm: Option<NormParams<T>>,
    pub attn: AttentionWeights<T>,
    pub mlp: Option<MlpWeights<T>>,
}

/// Dense parameters of a decoder-only transformer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T> {
    /// `[vocab × d_model]`
    pub embed: Tensor<T>,
    /// `[n_ctx × d_model]`, learned absolute positions only.
    pub pos_embed: Option<Tensor<T>>,
    pub layers: Vec<LayerWeights<T>>,
    pub final_norm: Option<NormParams<T>>,
    /// `[d_model × vocab]`
    pub unembed: Tensor<T>,
    pub unembed_bias: Option<Tensor<T>>,
}

/// One named parameter slot with its expected shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Stored `[in × out]`; checkpoints in `[out × in]` layout need a transpose.
    pub linear: bool,
}

impl SlotSpec {
    fn plain(name: String, shape: Vec<usize>) -> Self {
        Self {
            name,
            shape,
            linear: false,
        }
    }

    fn linear(name: String, shape: Vec<usize>) -> Self {
        Self {
            name,
            shape,
            linear: true,
        }
    }
}

/// Canonical slot list for `config`, in a fixed order.
pub fn slot_specs(config: &ModelConfig) -> Vec<SlotSpec> {
    let d = config.d_model;
    let m = config.d_mlp;
    let mut out = vec![SlotSpec::plain("embed".into(), vec![config.vocab_size, d])];
    if let Positional::AbsoluteLearned { n_ctx } = config.positional {
        out.push(SlotSpec::plain("pos_embed".into(), vec![n_ctx, d]));
    }
    let norm = |out: &mut Vec<SlotSpec>, prefix: &str| {
        if config.norm_style != NormStyle::Identity {
            out.push(SlotSpec::plain(format!("{prefix}.gain"), vec![d]));
            if config.has_norm_bias() {
                out.push(SlotSpec::plain(format!("{prefix}.bias"), vec![d]));
            }
        }
    };
    for l in 0..config.n_layers {
        let p = format!("layers.{l}");
        norm(&mut out, &format!("{p}.attn_norm"));
        if config.mlp_style != MlpStyle::None {
            norm(&mut out, &format!("{p}.mlp_norm"));
        }
        let (qw, kw) = (config.q_width(), config.kv_width());
        for (name, width) in [("q", qw), ("k", kw), ("v", kw)] {
            out.push(SlotSpec::linear(
                format!("{p}.attn.{name}.weight"),
                vec![d, width],
            ));
            if config.qkv_bias {
                out.push(SlotSpec::plain(
                    format!("{p}.attn.{name}.bias"),
                    vec![width],
                ));
            }
        }
        out.push(SlotSpec::linear(format!("{p}.attn.o.weight"), vec![qw, d]));
        if config.o_bias {
            out.push(SlotSpec::plain(format!("{p}.attn.o.bias"), vec![d]));
        }
        match config.mlp_style {
            MlpStyle::Gelu => {
                out.push(SlotSpec::linear(format!("{p}.mlp.in.weight"), vec![d, m]));
                if config.mlp_bias {
                    out.push(SlotSpec::plain(format!("{p}.mlp.in.bias"), vec![m]));
                }
                out.push(SlotSpec::linear(format!("{p}.mlp.out.weight"), vec![m, d]));
                if config.mlp_bias {
                    out.push(SlotSpec::plain(format!("{p}.mlp.out.bias"), vec![d]));
                }
            }
            MlpStyle::SiluGated => {
                out.push(SlotSpec::linear(format!("{p}.mlp.gate.weight"), vec![d, m]));
                out.push(SlotSpec::linear(format!("{p}.mlp.up.weight"), vec![d, m]));
                out.push(SlotSpec::linear(format!("{p}.mlp.down.weight"), vec![m, d]));
            }
            MlpStyle::None => {}
        }
    }
    norm(&mut out, "final_norm");
    out.push(SlotSpec::linear(
        "unembed".into(),
        vec![d, config.vocab_size],
    ));
    if config.unembed_bias {
        out.push(SlotSpec::plain(
            "unembed.bias".into(),
            vec![config.vocab_size],
        ));
    }
    out
}

struct SlotTake<T> {
    map: BTreeMap<String, Tensor<T>>,
    specs: BTreeMap<String, Vec<usize>>,
}

impl<T: Scalar> SlotTake<T> {
    fn take(&mut self, name: &str) -> Result<Tensor<T>> {
        let t = self
            .map
            .remove(name)
            .ok_or_else(|| Error::UnmappedSlot(name.to_string()))?;
        let expected = &self.specs[name];
        if t.shape() != expected.as_slice() {
            return Err(Error::TensorShape {
                name: name.to_string(),
                expected: expected.clone(),
                found: t.shape().to_vec(),
            });
        }
        Ok(t)
    }

    fn take_if(&mut self, cond: bool, name: &str) -> Result<Option<Tensor<T>>> {
        if cond {
            self.take(name).map(Some)
        } else {
            Ok(None)
        }
    }

    fn norm(&mut self, config: &ModelConfig, prefix: &str) -> Result<Option<NormParams<T>>> {
        if config.norm_style == NormStyle::Identity {
            return Ok(None);
        }
        Ok(Some(NormParams {
            gain: self.take(&format!("{prefix}.gain"))?,
            bias: self.take_if(config.has_norm_bias(), &format!("{prefix}.bias"))?,
        }))
    }
}

impl<T: Scalar> ModelWeights<T> {
    /// Assembles weights from a full slot map. Every slot of
    /// [`slot_specs`] must be present with its declared shape, and no
    /// other names may appear.
    pub fn from_slots(config: &ModelConfig, map: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let specs: BTreeMap<String, Vec<usize>> = slot_specs(config)
            .into_iter()
            .map(|s| (s.name, s.shape))
            .collect();
        if let Some(extra) = map.keys().find(|k| !specs.contains_key(*k)) {
            return Err(Error::UnknownSlot(extra.clone()));
        }
        let mut s = SlotTake { map, specs };
        let embed = s.take("embed")?;
        let pos_embed = s.take_if(
            matches!(config.positional, Positional::AbsoluteLearned { .. }),
            "pos_embed",
        )?;
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = format!("layers.{l}");
            let attn_norm = s.norm(config, &format!("{p}.attn_norm"))?;
            let mlp_norm = if config.mlp_style == MlpStyle::None {
                None
            } else {
                s.norm(config, &format!("{p}.mlp_norm"))?
            };
            let b = config.qkv_bias;
            let attn = AttentionWeights {
                wq: s.take(&format!("{p}.attn.q.weight"))?,
                bq: s.take_if(b, &format!("{p}.attn.q.bias"))?,
                wk: s.take(&format!("{p}.attn.k.weight"))?,
                bk: s.take_if(b, &format!("{p}.attn.k.bias"))?,
                wv: s.take(&format!("{p}.attn.v.weight"))?,
                bv: s.take_if(b, &format!("{p}.attn.v.bias"))?,
                wo: s.take(&format!("{p}.attn.o.weight"))?,
                bo: s.take_if(config.o_bias, &format!("{p}.attn.o.bias"))?,
            };
            let mb = config.mlp_bias;
            let mlp = match config.mlp_style {
                MlpStyle::Gelu => Some(MlpWeights::Gelu {
                    w_in: s.take(&format!("{p}.mlp.in.weight"))?,
                    b_in: s.take_if(mb, &format!("{p}.mlp.in.bias"))?,
                    w_out: s.take(&format!("{p}.mlp.out.weight"))?,
                    b_out: s.take_if(mb, &format!("{p}.mlp.out.bias"))?,
                }),
                MlpStyle::SiluGated => Some(MlpWeights::SiluGated {
                    w_gate: s.take(&format!("{p}.mlp.gate.weight"))?,
                    w_up: s.take(&format!("{p}.mlp.up.weight"))?,
                    w_down: s.take(&format!("{p}.mlp.down.weight"))?,
                }),
                MlpStyle::None => None,
            };
            layers.push(LayerWeights {
                attn_norm,
                mlp_norm,
                attn,
                mlp,
            });
        }
        let final_norm = s.norm(config, "final_norm")?;
        let unembed = s.take("unembed")?;
        let unembed_bias = s.take_if(config.unembed_bias, "unembed.bias")?;
        Ok(Self {
            embed,
            pos_embed,
            layers,
            final_norm,
            unembed,
            unembed_bias,
        })
    }

    /// Slot name → tensor, in canonical order.
    pub fn to_slots(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = vec![("embed".into(), &self.embed)];
        if let Some(p) = &self.pos_embed {
            out.push(("pos_embed".into(), p));
        }
        fn norm<'a, T>(
            out: &mut Vec<(String, &'a Tensor<T>)>,
            prefix: &str,
            n: &'a Option<NormParams<T>>,
        ) {
            if let Some(n) = n {
                out.push((format!("{prefix}.gain"), &n.gain));
                if let Some(b) = &n.bias {
                    out.push((format!("{prefix}.bias"), b));
                }
            }
        }
        fn opt<'a, T>(
            out: &mut Vec<(String, &'a Tensor<T>)>,
            name: String,
            t: &'a Option<Tensor<T>>,
        ) {
            if let Some(t) = t {
                out.push((name, t));
            }
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let p = format!("layers.{l}");
            norm(&mut out, &format!("{p}.attn_norm"), &layer.attn_norm);
            norm(&mut out, &format!("{p}.mlp_norm"), &layer.mlp_norm);
            let a = &layer.attn;
            out.push((format!("{p}.attn.q.weight"), &a.wq));
            opt(&mut out, format!("{p}.attn.q.bias"), &a.bq);
            out.push((format!("{p}.attn.k.weight"), &a.wk));
            opt(&mut out, format!("{p}.attn.k.bias"), &a.bk);
            out.push((format!("{p}.attn.v.weight"), &a.wv));
            opt(&mut out, format!("{p}.attn.v.bias"), &a.bv);
            out.push((format!("{p}.attn.o.weight"), &a.wo));
            opt(&mut out, format!("{p}.attn.o.bias"), &a.bo);
            match &layer.mlp {
                Some(MlpWeights::Gelu {
                    w_in,
                    b_in,
                    w_out,
                    b_out,
                }) => {
                    out.push((format!("{p}.mlp.in.weight"), w_in));
                    opt(&mut out, format!("{p}.mlp.in.bias"), b_in);
                    out.push((format!("{p}.mlp.out.weight"), w_out));
                    opt(&mut out, format!("{p}.mlp.out.bias"), b_out);
                }
                Some(MlpWeights::SiluGated {
                    w_gate,
                    w_up,
                    w_down,
                }) => {
                    out.push((format!("{p}.mlp.gate.weight"), w_gate));
                    out.push((format!("{p}.mlp.up.weight"), w_up));
                    out.push((format!("{p}.mlp.down.weight"), w_down));
                }
                None => {}
            }
        }
        norm(&mut out, "final_norm", &self.final_norm);
        out.push(("unembed".into(), &self.unembed));
        opt(&mut out, "unembed.bias".into(), &self.unembed_bias);
        out
    }

    /// Random weights for `config`, deterministic in `seed`. Linear and
    /// embedding entries are uniform in `±scale`; norm gains are near one.
    pub fn random(config: &ModelConfig, seed: u64, scale: f64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut map = BTreeMap::new();
        for spec in slot_specs(config) {
            let n: usize = spec.shape.iter().product();
            let data: Vec<T> = if spec.name.ends_with(".gain") {
                (0..n)
                    .map(|_| T::of(1.0 + rng.random_range(-0.1..0.1)))
                    .collect()
            } else {
                (0..n)
                    .map(|_| T::of(rng.random_range(-scale..scale)))
                    .collect()
            };
            map.insert(spec.name, Tensor::new(spec.shape, data)?);
        }
        Self::from_slots(config, map)
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Scalar>(&self, config: &ModelConfig) -> Result<ModelWeights<U>> {
        let map = self
            .to_slots()
            .into_iter()
            .map(|(n, t)| (n, t.cast::<U>()))
            .collect();
        ModelWeights::from_slots(config, map)
    }
}

/// Re-lays a grouped-query model as plain multi-head attention by giving
/// every query head its own copy of the K/V block it reads.
///
/// The returned model computes the same function; it exists so the GQA
/// routing can be checked against an MHA layout of identical weights.
pub fn expand_kv_to_mha<T: Scalar>(
    config: &ModelConfig,
    weights: &ModelWeights<T>,
) -> Result<(ModelConfig, ModelWeights<T>)> {
    let mut cfg = config.clone();
    cfg.n_kv_heads = config.n_heads;
    let dh = config.d_head;
    let expand_cols = |t: &Tensor<T>| -> Result<Tensor<T>> {
        let rows = t.len() / config.kv_width();
        let mut data = Vec::with_capacity(rows * config.q_width());
        for r in 0..rows {
            let src = &t.data()[r * config.kv_width()..(r + 1) * config.kv_width()];
            for h in 0..config.n_heads {
                let kv = config.kv_head_of(h);
                data.extend_from_slice(&src[kv * dh..(kv + 1) * dh]);
            }
        }
        let shape = if t.shape().len() == 1 {
            vec![config.q_width()]
        } else {
            vec![rows, config.q_width()]
        };
        Tensor::new(shape, data)
    };
    let mut out = weights.clone();
    for layer in &mut out.layers {
        let a = &mut layer.attn;
        a.wk = expand_cols(&a.wk)?;
        a.wv = expand_cols(&a.wv)?;
        if let Some(b) = &a.bk {
            a.bk = Some(expand_cols(b)?);
        }
        if let Some(b) = &a.bv {
            a.bv = Some(expand_cols(b)?);
        }
    }
    let map = out
        .to_slots()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    let expanded = ModelWeights::from_slots(&cfg, map)?;
    Ok((cfg, expanded))
}
