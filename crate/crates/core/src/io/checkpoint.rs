// SPDX-License-Identifier: MIT OR Apache-2.0

//! safetensors checkpoints described by a JSON manifest.
//!
//! A manifest names the architecture and maps every checkpoint tensor to
//! one or more weight slots (see [`crate::model::slot_specs`]). Keys and
//! values may contain `{L}`, which is expanded for every layer index.
//!
//! ```json
//! {
//!   "config": { "n_layers": 12, "...": "..." },
//!   "linear_layout": "out_in",
//!   "tensor_map": {
//!     "gpt_neox.embed_in.weight": "embed",
//!     "gpt_neox.layers.{L}.attention.dense.weight": "layers.{L}.attn.o.weight"
//!   }
//! }
//! ```
//!
//! Besides the ordinary slots, `layers.{L}.attn.qkv_neox.weight` and
//! `.bias` accept the fused GPT-NeoX query/key/value tensor, which is split
//! per head into the separate `q`, `k` and `v` slots.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{slot_specs, Model, ModelConfig, ModelWeights};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Memory layout of linear weights inside the checkpoint.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearLayout {
    /// `[out × in]`, the PyTorch `nn.Linear` convention; transposed on load.
    #[default]
    OutIn,
    /// `[in × out]`, the toolkit's own layout.
    InOut,
}

/// One or several slots fed by the same checkpoint tensor (tied weights).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SlotTargets {
    One(String),
    Many(Vec<String>),
}

impl SlotTargets {
    fn iter(&self) -> impl Iterator<Item = &str> {
        let v: Vec<&str> = match self {
            Self::One(s) => vec![s.as_str()],
            Self::Many(v) => v.iter().map(String::as_str).collect(),
        };
        v.into_iter()
    }
}

fn default_dtypes() -> Vec<String> {
    vec!["F32".into(), "F16".into(), "BF16".into()]
}

/// Architecture + checkpoint-name → slot map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: ModelConfig,
    #[serde(default)]
    pub linear_layout: LinearLayout,
    pub tensor_map: BTreeMap<String, SlotTargets>,
    /// Stored dtypes accepted on load; 16-bit floats are widened.
    #[serde(default = "default_dtypes")]
    pub accept_dtypes: Vec<String>,
}

impl CheckpointManifest {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Identity manifest for a checkpoint written by [`export_model`].
    pub fn identity(config: &ModelConfig) -> Self {
        let tensor_map = slot_specs(config)
            .into_iter()
            .map(|s| (s.name.clone(), SlotTargets::One(s.name)))
            .collect();
        Self {
            config: config.clone(),
            linear_layout: LinearLayout::InOut,
            tensor_map,
            accept_dtypes: default_dtypes(),
        }
    }

    /// `tensor_map` with `{L}` expanded over every layer.
    pub fn expanded_map(&self) -> BTreeMap<String, Vec<String>> {
        let mut out = BTreeMap::new();
        for (name, targets) in &self.tensor_map {
            if name.contains("{L}") || targets.iter().any(|t| t.contains("{L}")) {
                for l in 0..self.config.n_layers {
                    let l = l.to_string();
                    out.insert(
                        name.replace("{L}", &l),
                        targets.iter().map(|t| t.replace("{L}", &l)).collect(),
                    );
                }
            } else {
                out.insert(name.clone(), targets.iter().map(str::to_string).collect());
            }
        }
        out
    }
}

/// A loaded checkpoint with its reproducibility digests.
#[derive(Debug, Clone)]
pub struct LoadedCheckpoint<T> {
    pub model: Model<T>,
    /// Checkpoint tensor name → SHA-256 of its stored bytes.
    pub tensor_digests: BTreeMap<String, String>,
    /// SHA-256 over the sorted `name:digest` lines.
    pub model_digest: String,
    /// Checkpoint tensors the manifest does not map.
    pub unmapped: Vec<String>,
}

fn st_err(e: safetensors::SafeTensorError) -> Error {
    Error::SafeTensors(e.to_string())
}

fn decode<T: Scalar>(name: &str, view: &TensorView<'_>, accept: &[String]) -> Result<Vec<T>> {
    let dtype = format!("{:?}", view.dtype());
    let unsupported = || Error::UnsupportedDtype {
        name: name.to_string(),
        dtype: dtype.clone(),
    };
    if !accept.iter().any(|a| a.eq_ignore_ascii_case(&dtype)) {
        return Err(unsupported());
    }
    let bytes = view.data();
    let out = match view.dtype() {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| T::of(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))))
            .collect(),
        Dtype::F16 => bytes
            .chunks_exact(2)
            .map(|c| T::of(half::f16::from_le_bytes([c[0], c[1]]).to_f64()))
            .collect(),
        Dtype::BF16 => bytes
            .chunks_exact(2)
            .map(|c| T::of(half::bf16::from_le_bytes([c[0], c[1]]).to_f64()))
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect(),
        _ => return Err(unsupported()),
    };
    Ok(out)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Places one decoded checkpoint tensor into `slot`, transposing linear
/// weights stored `[out × in]`.
fn place<T: Scalar>(
    slots: &mut BTreeMap<String, Tensor<T>>,
    specs: &BTreeMap<String, (Vec<usize>, bool)>,
    layout: LinearLayout,
    ckpt_name: &str,
    slot: &str,
    shape: &[usize],
    data: Vec<T>,
) -> Result<()> {
    let (expected, linear) = specs
        .get(slot)
        .ok_or_else(|| Error::UnknownSlot(slot.to_string()))?;
    let transpose = *linear && layout == LinearLayout::OutIn;
    let stored_expected: Vec<usize> = if transpose {
        expected.iter().rev().copied().collect()
    } else {
        expected.clone()
    };
    if shape != stored_expected.as_slice() {
        return Err(Error::TensorShape {
            name: ckpt_name.to_string(),
            expected: stored_expected,
            found: shape.to_vec(),
        });
    }
    let mut t = Tensor::new(shape.to_vec(), data)?;
    if transpose {
        t = t.transpose2()?;
    }
    if slots.insert(slot.to_string(), t).is_some() {
        return Err(Error::DuplicateSlot(slot.to_string()));
    }
    Ok(())
}

/// Splits a fused GPT-NeoX QKV tensor (`[h·3·dh × d]` weight or `[h·3·dh]`
/// bias, laid out head-major then q/k/v) into q, k and v parts.
fn split_neox_qkv<T: Scalar>(
    config: &ModelConfig,
    shape: &[usize],
    data: &[T],
) -> Result<[(Vec<usize>, Vec<T>); 3]> {
    if !config.is_mha() {
        return Err(Error::Config(
            "fused NeoX QKV requires n_kv_heads == n_heads".into(),
        ));
    }
    let (h, dh) = (config.n_heads, config.d_head);
    let rows = 3 * h * dh;
    let cols = if shape.len() == 2 { shape[1] } else { 1 };
    if shape.first() != Some(&rows) || data.len() != rows * cols {
        return Err(Error::TensorShape {
            name: "qkv_neox".into(),
            expected: if shape.len() == 2 {
                vec![rows, config.d_model]
            } else {
                vec![rows]
            },
            found: shape.to_vec(),
        });
    }
    let mut parts: [Vec<T>; 3] = Default::default();
    for head in 0..h {
        for (which, part) in parts.iter_mut().enumerate() {
            let start = (head * 3 + which) * dh * cols;
            part.extend_from_slice(&data[start..start + dh * cols]);
        }
    }
    let part_shape = if shape.len() == 2 {
        vec![h * dh, cols]
    } else {
        vec![h * dh]
    };
    let [q, k, v] = parts;
    Ok([
        (part_shape.clone(), q),
        (part_shape.clone(), k),
        (part_shape, v),
    ])
}

/// Loads a safetensors file according to `manifest`.
pub fn load_checkpoint<T: Scalar>(
    manifest: &CheckpointManifest,
    path: impl AsRef<Path>,
) -> Result<LoadedCheckpoint<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    load_checkpoint_bytes(manifest, &bytes)
}

/// [`load_checkpoint`] over an in-memory safetensors image.
pub fn load_checkpoint_bytes<T: Scalar>(
    manifest: &CheckpointManifest,
    bytes: &[u8],
) -> Result<LoadedCheckpoint<T>> {
    let config = &manifest.config;
    config.validate()?;
    let st = SafeTensors::deserialize(bytes).map_err(st_err)?;
    let specs: BTreeMap<String, (Vec<usize>, bool)> = slot_specs(config)
        .into_iter()
        .map(|s| (s.name, (s.shape, s.linear)))
        .collect();
    let map = manifest.expanded_map();

    let mut tensor_digests = BTreeMap::new();
    let mut unmapped = Vec::new();
    for (name, view) in st.tensors() {
        tensor_digests.insert(name.clone(), sha256_hex(view.data()));
        if !map.contains_key(&name) {
            unmapped.push(name);
        }
    }
    unmapped.sort();

    let mut slots: BTreeMap<String, Tensor<T>> = BTreeMap::new();
    for (name, targets) in &map {
        let view = st.tensor(name).map_err(|_| Error::MissingTensor {
            slot: targets.join(","),
            name: name.clone(),
        })?;
        let data: Vec<T> = decode(name, &view, &manifest.accept_dtypes)?;
        for slot in targets {
            if let Some(prefix) = slot.strip_suffix(".attn.qkv_neox.weight") {
                let parts = split_neox_qkv(config, view.shape(), &data)?;
                for (p, (shape, d)) in ["q", "k", "v"].iter().zip(parts) {
                    let s = format!("{prefix}.attn.{p}.weight");
                    place(
                        &mut slots,
                        &specs,
                        manifest.linear_layout,
                        name,
                        &s,
                        &shape,
                        d,
                    )?;
                }
            } else if let Some(prefix) = slot.strip_suffix(".attn.qkv_neox.bias") {
                let parts = split_neox_qkv(config, view.shape(), &data)?;
                for (p, (shape, d)) in ["q", "k", "v"].iter().zip(parts) {
                    let s = format!("{prefix}.attn.{p}.bias");
                    place(
                        &mut slots,
                        &specs,
                        manifest.linear_layout,
                        name,
                        &s,
                        &shape,
                        d,
                    )?;
                }
            } else {
                place(
                    &mut slots,
                    &specs,
                    manifest.linear_layout,
                    name,
                    slot,
                    view.shape(),
                    data.clone(),
                )?;
            }
        }
    }
    if let Some(missing) = specs.keys().find(|k| !slots.contains_key(*k)) {
        return Err(Error::UnmappedSlot(missing.clone()));
    }

    let weights = ModelWeights::from_slots(config, slots)?;
    let model = Model::new(config.clone(), weights)?;
    let listing: String = tensor_digests
        .iter()
        .map(|(n, d)| format!("{n}:{d}\n"))
        .collect();
    Ok(LoadedCheckpoint {
        model,
        model_digest: sha256_hex(listing.as_bytes()),
        tensor_digests,
        unmapped,
    })
}

/// Digest of a model's parameters in the toolkit's own slot layout, as
/// recorded for synthetic models that never touched a file.
pub fn weights_digest<T: Scalar>(model: &Model<T>) -> String {
    let mut listing = String::new();
    for (name, t) in model.weights().to_slots() {
        let bytes = T::to_le_bytes_vec(t.data());
        listing.push_str(&format!("{name}:{}\n", sha256_hex(&bytes)));
    }
    sha256_hex(listing.as_bytes())
}

/// Serializes `model` to a safetensors image with slot names and the
/// `[in × out]` layout, stored in the model's own precision.
pub fn model_to_safetensors<T: Scalar>(model: &Model<T>) -> Result<Vec<u8>> {
    let dtype = match T::DTYPE {
        "f64" => Dtype::F64,
        _ => Dtype::F32,
    };
    let owned: Vec<(String, Vec<usize>, Vec<u8>)> = model
        .weights()
        .to_slots()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec(), T::to_le_bytes_vec(t.data())))
        .collect();
    let views = owned
        .iter()
        .map(|(n, s, b)| {
            Ok((
                n.clone(),
                TensorView::new(dtype, s.clone(), b).map_err(st_err)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    safetensors::tensor::serialize(views, None).map_err(st_err)
}

/// Writes `<stem>.safetensors` and `<stem>.manifest.json` into `dir`.
pub fn export_model<T: Scalar>(
    model: &Model<T>,
    dir: impl AsRef<Path>,
    stem: &str,
) -> Result<(PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tensors = dir.join(format!("{stem}.safetensors"));
    let manifest = dir.join(format!("{stem}.manifest.json"));
    fs::write(&tensors, model_to_safetensors(model)?).map_err(|e| Error::io(&tensors, e))?;
    CheckpointManifest::identity(model.config()).to_json_file(&manifest)?;
    Ok((manifest, tensors))
}

/// Names of checkpoint tensors the manifest expects, for diagnostics.
pub fn expected_tensor_names(manifest: &CheckpointManifest) -> BTreeSet<String> {
    manifest.expanded_map().into_keys().collect()
}
