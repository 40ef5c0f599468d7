// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense row-major tensors and the handful of kernels the forward pass needs.
//!
//! Every exported kernel is a pure function with a fixed loop order, so the
//! same inputs give the same bits on every call. Outputs are checked for
//! NaN/Inf and a non-finite result is reported as [`Error::NonFinite`].

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(
    try_from = "RawTensor<T>",
    bound(deserialize = "T: Scalar + serde::Deserialize<'de>")
)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

#[derive(serde::Deserialize)]
struct RawTensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> TryFrom<RawTensor<T>> for Tensor<T> {
    type Error = Error;

    fn try_from(raw: RawTensor<T>) -> Result<Self> {
        Self::new(raw.shape, raw.data)
    }
}

impl<T: Scalar> Tensor<T> {
    /// Wraps `data` with the given shape, checking the element count.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                op: "Tensor::new",
                detail: format!(
                    "shape {shape:?} needs {expected} values, got {}",
                    data.len()
                ),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    /// Builds a 2-D tensor from a generator over `(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { T::one() } else { T::zero() })
    }

    /// 2-D tensor from nested rows. Panics on ragged input; intended for tests
    /// and literals.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            shape: vec![rows.len(), cols],
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the last dimension (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::Shape {
                op,
                detail: format!("expected a 2-D tensor, got shape {other:?}"),
            }),
        }
    }

    /// Same data, new shape with the same element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.last_dim();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let c = self.last_dim();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn get2(&self, r: usize, c: usize) -> T {
        self.data[r * self.last_dim() + c]
    }

    pub fn transpose2(&self) -> Result<Self> {
        let (r, c) = self.dims2("transpose2")?;
        Ok(Self::from_fn(c, r, |i, j| self.data[j * c + i]))
    }

    /// Converts every element to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::of(v.to_f64_lossless()))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Errors with `context` if any element is NaN or infinite.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                op: "max_abs_diff",
                detail: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64_lossless() - b.to_f64_lossless()).abs())
            .fold(0.0, f64::max))
    }

    /// In-place elementwise addition.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                op: "add_assign",
                detail: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    /// Adds `bias` to every row.
    pub fn add_row_bias(&mut self, bias: &Self) -> Result<()> {
        let c = self.last_dim();
        if bias.len() != c {
            return Err(Error::Shape {
                op: "add_row_bias",
                detail: format!("bias length {} vs row width {c}", bias.len()),
            });
        }
        for row in self.data.chunks_mut(c) {
            for (a, b) in row.iter_mut().zip(&bias.data) {
                *a += *b;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

/// Matrix product `a[m×k] · b[k×n]`.
///
/// Each output element accumulates `a[i,p]·b[p,j]` for `p = 0..k` in
/// ascending order starting from zero, which is exactly the summation order
/// of the textbook triple loop. The loop nest is `i, p, j` for cache
/// locality; that permutation does not change any element's operation
/// sequence.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::Shape {
            op: "matmul",
            detail: format!("inner dimensions {k} and {k2} differ"),
        });
    }
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * b_pj;
            }
        }
    }
    let out = Tensor::new(vec![m, n], out)?;
    out.ensure_finite("matmul")?;
    Ok(out)
}

/// Row-wise softmax over a 2-D score matrix.
///
/// With `causal`, entry `(i, j)` with `j > i` is excluded. Entries equal to
/// negative infinity are excluded as well. Excluded entries come out as
/// exactly zero. A row with nothing left to normalise is an error.
pub fn softmax_rows<T: Scalar>(scores: &Tensor<T>, causal: bool) -> Result<Tensor<T>> {
    let (m, n) = scores.dims2("softmax_rows")?;
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &scores.data[i * n..(i + 1) * n];
        let limit = if causal { (i + 1).min(n) } else { n };
        if row[..limit].iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite(format!(
                "softmax_rows: NaN score in row {i}"
            )));
        }
        let max = row[..limit]
            .iter()
            .copied()
            .filter(|v| *v != T::neg_infinity())
            .fold(T::neg_infinity(), T::max);
        if max == T::neg_infinity() {
            return Err(Error::InvalidParameter(format!(
                "softmax_rows: row {i} has no unmasked entries"
            )));
        }
        let out_row = &mut out[i * n..(i + 1) * n];
        let mut sum = T::zero();
        for j in 0..limit {
            if row[j] != T::neg_infinity() {
                let e = (row[j] - max).exp();
                out_row[j] = e;
                sum += e;
            }
        }
        for v in &mut out_row[..limit] {
            *v /= sum;
        }
    }
    let out = Tensor::new(vec![m, n], out)?;
    out.ensure_finite("softmax_rows")?;
    Ok(out)
}

/// LayerNorm over the last dimension: subtract mean, divide by
/// `sqrt(var + eps)`, then apply `gain` and `bias`.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let d = x.last_dim();
    if gain.len() != d || bias.len() != d {
        return Err(Error::Shape {
            op: "layer_norm",
            detail: format!("width {d}, gain {}, bias {}", gain.len(), bias.len()),
        });
    }
    let inv_d = T::one() / T::of(d as f64);
    let mut out = Vec::with_capacity(x.len());
    for row in x.data.chunks(d) {
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() * inv_d;
        let scale = T::one() / (var + eps).sqrt();
        for ((v, g), b) in row.iter().zip(&gain.data).zip(&bias.data) {
            out.push((*v - mean) * scale * *g + *b);
        }
    }
    let out = Tensor::new(x.shape.clone(), out)?;
    out.ensure_finite("layer_norm")?;
    Ok(out)
}

/// RMSNorm over the last dimension: divide by `sqrt(mean(x²) + eps)`, then
/// apply `gain`. No mean subtraction.
pub fn rms_norm<T: Scalar>(x: &Tensor<T>, gain: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let d = x.last_dim();
    if gain.len() != d {
        return Err(Error::Shape {
            op: "rms_norm",
            detail: format!("width {d}, gain {}", gain.len()),
        });
    }
    let inv_d = T::one() / T::of(d as f64);
    let mut out = Vec::with_capacity(x.len());
    for row in x.data.chunks(d) {
        let ms = row.iter().map(|v| *v * *v).sum::<T>() * inv_d;
        let scale = T::one() / (ms + eps).sqrt();
        for (v, g) in row.iter().zip(&gain.data) {
            out.push(*v * scale * *g);
        }
    }
    let out = Tensor::new(x.shape.clone(), out)?;
    out.ensure_finite("rms_norm")?;
    Ok(out)
}

/// How coordinates are paired for rotary embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RopeStyle {
    /// Pairs `(2i, 2i+1)`.
    Interleaved,
    /// Pairs `(i, i + rotary_dim/2)` (GPT-NeoX / Qwen2 layout).
    Half,
}

/// Rotary embedding parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RopeParams {
    pub base: f64,
    /// Leading coordinates that are rotated; the rest pass through.
    pub rotary_dim: usize,
    pub style: RopeStyle,
}

/// Rotary position embedding on `x[pos×d_head]` with consecutive coordinate
/// pairs rotated over the full head width. Row `t` is position `offset + t`.
pub fn rope_apply<T: Scalar>(x: &Tensor<T>, base: f64, offset: usize) -> Result<Tensor<T>> {
    let d = x.last_dim();
    rope_apply_with(
        x,
        &RopeParams {
            base,
            rotary_dim: d,
            style: RopeStyle::Interleaved,
        },
        offset,
    )
}

/// Rotary embedding with explicit pairing style and partial rotary width.
///
/// Pair `i` at position `p` rotates by `p · base^(−2i/rotary_dim)`.
pub fn rope_apply_with<T: Scalar>(
    x: &Tensor<T>,
    params: &RopeParams,
    offset: usize,
) -> Result<Tensor<T>> {
    let (_, d) = x.dims2("rope_apply")?;
    let rd = params.rotary_dim;
    if !rd.is_multiple_of(2) || d % 2 != 0 {
        return Err(Error::Shape {
            op: "rope_apply",
            detail: format!("head width {d} and rotary width {rd} must be even"),
        });
    }
    if rd > d {
        return Err(Error::Shape {
            op: "rope_apply",
            detail: format!("rotary width {rd} exceeds head width {d}"),
        });
    }
    let mut out = x.clone();
    let half = rd / 2;
    for (t, row) in out.data.chunks_mut(d).enumerate() {
        let pos = (offset + t) as f64;
        for i in 0..half {
            let inv_freq = params.base.powf(-2.0 * i as f64 / rd as f64);
            let (sin, cos) = (pos * inv_freq).sin_cos();
            let (sin, cos) = (T::of(sin), T::of(cos));
            let (a, b) = match params.style {
                RopeStyle::Interleaved => (2 * i, 2 * i + 1),
                RopeStyle::Half => (i, i + half),
            };
            let (x0, x1) = (row[a], row[b]);
            row[a] = x0 * cos - x1 * sin;
            row[b] = x0 * sin + x1 * cos;
        }
    }
    out.ensure_finite("rope_apply")?;
    Ok(out)
}

/// Exact (erf-based) GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let v = x.to_f64_lossless();
    T::of(0.5 * v * (1.0 + libm::erf(v / std::f64::consts::SQRT_2)))
}

/// SiLU, `x · sigmoid(x)`.
pub fn silu<T: Scalar>(x: T) -> T {
    x / (T::one() + (-x).exp())
}
