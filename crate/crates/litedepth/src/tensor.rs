//! Deterministic NCHW tensor arithmetic and the neural operators used by the
//! depth-estimation graph.
//!
//! All operators are pure functions over immutable tensors: two invocations
//! on identical inputs produce bit-identical buffers. Convolution may split
//! work across threads per output row, but each output element is a single
//! fixed-order reduction, so thread count never changes the result.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Accumulator type for convolution reductions. The `accum64` feature widens
/// it for oracle comparisons.
#[cfg(feature = "accum64")]
type Acc = f64;
#[cfg(not(feature = "accum64"))]
type Acc = f32;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("data length {got} does not match shape {shape:?} ({expected} elements)")]
    LengthMismatch { shape: [usize; 4], expected: usize, got: usize },
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("groups {groups} does not divide channels (in {c_in}, out {c_out})")]
    BadGroups { groups: usize, c_in: usize, c_out: usize },
    #[error("resize output must be non-empty, got {out_h}x{out_w}")]
    EmptyResize { out_h: usize, out_w: usize },
}

/// Dense 4-D array in (batch, channel, height, width) order, 32-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: [usize; 4], data: Vec<f32>) -> Result<Self, TensorError> {
        let expected = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::LengthMismatch { shape, expected, got: data.len() });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor { shape, data: vec![0.0; shape.iter().product()] }
    }

    pub fn filled(shape: [usize; 4], value: f32) -> Self {
        Tensor { shape, data: vec![value; shape.iter().product()] }
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(n * c * h * w);
        for bi in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f(bi, ci, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: f32) {
        let i = self.offset(n, c, y, x);
        self.data[i] = value;
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// Explicit per-side spatial padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub const NONE: Padding = Padding { top: 0, bottom: 0, left: 0, right: 0 };

    /// Symmetric padding of `p` on every side.
    pub fn same(p: usize) -> Self {
        Padding { top: p, bottom: p, left: p, right: p }
    }
}

/// Static description of a convolution: kernel extent, stride, padding,
/// grouping (1 = dense, `c_in` = depthwise) and bias presence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: Padding,
    pub groups: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    /// Dense k×k convolution with symmetric padding and a bias.
    pub fn dense(k: usize, stride: usize, pad: usize) -> Self {
        ConvSpec {
            kernel: (k, k),
            stride: (stride, stride),
            padding: Padding::same(pad),
            groups: 1,
            has_bias: true,
        }
    }

    /// Depthwise k×k convolution over `channels` groups.
    pub fn depthwise(k: usize, stride: usize, pad: usize, channels: usize) -> Self {
        ConvSpec { groups: channels, ..ConvSpec::dense(k, stride, pad) }
    }

    pub fn out_dims(&self, in_h: usize, in_w: usize) -> (usize, usize) {
        let eff_h = in_h + self.padding.top + self.padding.bottom;
        let eff_w = in_w + self.padding.left + self.padding.right;
        (
            (eff_h.saturating_sub(self.kernel.0)) / self.stride.0 + 1,
            (eff_w.saturating_sub(self.kernel.1)) / self.stride.1 + 1,
        )
    }
}

/// 2-D cross-correlation (no kernel flip). Weights are laid out
/// `(c_out, c_in/groups, k_h, k_w)`; output spatial dims follow
/// `floor((in + pad - k)/stride) + 1`.
pub fn conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&[f32]>,
    spec: &ConvSpec,
) -> Result<Tensor, TensorError> {
    let [n, c_in, in_h, in_w] = input.shape();
    let [c_out, c_in_g, k_h, k_w] = weights.shape();

    if spec.groups == 0 || c_in % spec.groups != 0 || c_out % spec.groups != 0 {
        return Err(TensorError::BadGroups { groups: spec.groups, c_in, c_out });
    }
    if (k_h, k_w) != spec.kernel {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            detail: format!("weight kernel {}x{} != spec kernel {:?}", k_h, k_w, spec.kernel),
        });
    }
    if c_in_g != c_in / spec.groups {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            detail: format!(
                "weight input channels {} != {}/{} groups",
                c_in_g, c_in, spec.groups
            ),
        });
    }
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                detail: format!("bias length {} != output channels {}", b.len(), c_out),
            });
        }
    }
    if in_h + spec.padding.top + spec.padding.bottom < k_h
        || in_w + spec.padding.left + spec.padding.right < k_w
    {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            detail: format!("kernel {}x{} exceeds padded input {}x{}", k_h, k_w, in_h, in_w),
        });
    }

    let (out_h, out_w) = spec.out_dims(in_h, in_w);
    let ch_per_group = c_in / spec.groups;
    let out_per_group = c_out / spec.groups;
    let (s_h, s_w) = spec.stride;

    let mut out = Tensor::zeros([n, c_out, out_h, out_w]);
    let in_data = input.data();
    let w_data = weights.data();

    // One parallel unit per (batch, out-channel, out-row); the reduction for
    // each output element stays a fixed-order serial loop.
    out.data
        .par_chunks_mut(out_w)
        .enumerate()
        .for_each(|(row_idx, out_row)| {
            let oy = row_idx % out_h;
            let oc = (row_idx / out_h) % c_out;
            let bi = row_idx / (out_h * c_out);
            let group = oc / out_per_group;
            let ic0 = group * ch_per_group;
            let w_base = oc * ch_per_group * k_h * k_w;
            let b = bias.map_or(0.0, |b| b[oc]);

            for (ox, out_v) in out_row.iter_mut().enumerate() {
                let mut acc: Acc = 0.0;
                let iy0 = (oy * s_h) as isize - spec.padding.top as isize;
                let ix0 = (ox * s_w) as isize - spec.padding.left as isize;
                for ci in 0..ch_per_group {
                    let in_base = ((bi * c_in + ic0 + ci) * in_h) as isize;
                    let wk_base = w_base + ci * k_h * k_w;
                    for ky in 0..k_h {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= in_h as isize {
                            continue;
                        }
                        let row = ((in_base + iy) * in_w as isize) as usize;
                        let wk_row = wk_base + ky * k_w;
                        for kx in 0..k_w {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= in_w as isize {
                                continue;
                            }
                            acc += in_data[row + ix as usize] as Acc
                                * w_data[wk_row + kx] as Acc;
                        }
                    }
                }
                *out_v = acc as f32 + b;
            }
        });

    Ok(out)
}

/// Elementwise activation kinds used by the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    HardSwish,
    HardSigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::HardSigmoid => (x / 6.0 + 0.5).clamp(0.0, 1.0),
            Activation::HardSwish => x * (x / 6.0 + 0.5).clamp(0.0, 1.0),
        }
    }
}

pub fn activation(input: &Tensor, kind: Activation) -> Tensor {
    input.map(|x| kind.apply(x))
}

/// Bilinear resize. With `align_corners = false` sample positions use the
/// half-pixel-center convention; identical output dims return a bit-identical
/// copy.
pub fn resize_bilinear(
    input: &Tensor,
    out_h: usize,
    out_w: usize,
    align_corners: bool,
) -> Result<Tensor, TensorError> {
    if out_h == 0 || out_w == 0 {
        return Err(TensorError::EmptyResize { out_h, out_w });
    }
    let [n, c, in_h, in_w] = input.shape();
    if out_h == in_h && out_w == in_w {
        return Ok(input.clone());
    }

    // Per-axis source position for every output index, precomputed once.
    let src_pos = |out_len: usize, in_len: usize| -> Vec<(usize, usize, f32)> {
        (0..out_len)
            .map(|o| {
                let s = if align_corners {
                    if out_len == 1 {
                        0.0
                    } else {
                        o as f32 * (in_len - 1) as f32 / (out_len - 1) as f32
                    }
                } else {
                    (o as f32 + 0.5) * in_len as f32 / out_len as f32 - 0.5
                };
                let s = s.clamp(0.0, (in_len - 1) as f32);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(in_len - 1);
                (lo, hi, s - lo as f32)
            })
            .collect()
    };
    let ys = src_pos(out_h, in_h);
    let xs = src_pos(out_w, in_w);

    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    for bi in 0..n {
        for ci in 0..c {
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let v00 = input.at(bi, ci, y0, x0);
                    let v01 = input.at(bi, ci, y0, x1);
                    let v10 = input.at(bi, ci, y1, x0);
                    let v11 = input.at(bi, ci, y1, x1);
                    let top = v00 + (v01 - v00) * fx;
                    let bot = v10 + (v11 - v10) * fx;
                    out.set(bi, ci, oy, ox, top + (bot - top) * fy);
                }
            }
        }
    }
    Ok(out)
}

/// Stacks `b`'s channels after `a`'s; batch and spatial dims must match.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let [an, ac, ah, aw] = a.shape();
    let [bn, bc, bh, bw] = b.shape();
    if (an, ah, aw) != (bn, bh, bw) {
        return Err(TensorError::ShapeMismatch {
            op: "concat_channels",
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    let mut data = Vec::with_capacity((ac + bc) * an * ah * aw);
    let plane = ah * aw;
    for bi in 0..an {
        data.extend_from_slice(&a.data[bi * ac * plane..(bi + 1) * ac * plane]);
        data.extend_from_slice(&b.data[bi * bc * plane..(bi + 1) * bc * plane]);
    }
    Tensor::new([an, ac + bc, ah, aw], data)
}

/// Elementwise sum; shapes must be identical.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "add",
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape(), data)
}

/// Per-channel spatial mean, output shape (n, c, 1, 1).
pub fn global_avg_pool(input: &Tensor) -> Tensor {
    let [n, c, h, w] = input.shape();
    let plane = h * w;
    let mut out = Tensor::zeros([n, c, 1, 1]);
    for bi in 0..n {
        for ci in 0..c {
            let base = (bi * c + ci) * plane;
            let mut acc: Acc = 0.0;
            for v in &input.data[base..base + plane] {
                acc += *v as Acc;
            }
            out.data[bi * c + ci] = (acc / plane as Acc) as f32;
        }
    }
    out
}
