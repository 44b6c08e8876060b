//! Dense row-major f32 tensors (rank 1 through 4) and the numeric kernels
//! the network is built from: convolution, pooling, bilinear upsampling,
//! softmax, matrix products, and broadcasting elementwise arithmetic.
//!
//! Layout is NCHW for rank-4 tensors and row-major everywhere else. All
//! kernels use a fixed, documented accumulation order so that repeated runs
//! produce bitwise-identical results.

use crate::error::{Error, Result};

/// Dense row-major tensor of f32 values.
///
/// Invariants (enforced at construction): rank is 1..=4, every extent is at
/// least 1, `data.len()` equals the product of the extents, and every value
/// is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor after validating rank, extents, length, and finiteness.
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Tensor> {
        if dims.is_empty() || dims.len() > 4 {
            return Err(Error::Shape(format!(
                "rank must be 1..=4, got rank {} ({:?})",
                dims.len(),
                dims
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero extent in dims {:?}", dims)));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "dims {:?} imply {} elements but {} were provided",
                dims,
                n,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value {} at flat index {}",
                data[pos], pos
            )));
        }
        Ok(Tensor { dims, data })
    }

    /// Internal constructor for values already known to satisfy the
    /// invariants (outputs of kernels over validated inputs).
    pub(crate) fn from_parts(dims: Vec<usize>, data: Vec<f32>) -> Tensor {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        debug_assert!(!dims.is_empty() && dims.len() <= 4);
        Tensor { dims, data }
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(dims: Vec<usize>) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        Tensor::new(dims, vec![0.0; n])
    }

    /// Constant tensor of the given shape.
    pub fn filled(dims: Vec<usize>, value: f32) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        Tensor::new(dims, vec![value; n])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Extents as (n, c, h, w); errors unless the tensor is rank 4.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.dims.as_slice() {
            &[n, c, h, w] => Ok((n, c, h, w)),
            other => Err(Error::Shape(format!("expected rank 4, got {:?}", other))),
        }
    }

    /// Extents as (rows, cols); errors unless the tensor is rank 2.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.dims.as_slice() {
            &[r, c] => Ok((r, c)),
            other => Err(Error::Shape(format!("expected rank 2, got {:?}", other))),
        }
    }

    /// Value at (n, c, y, x) of a rank-4 tensor. Panics out of range; meant
    /// for tests and small fixtures, not hot loops.
    pub fn at4(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        let (_, cc, h, w) = self.dims4().expect("at4 requires rank 4");
        self.data[((n * cc + c) * h + y) * w + x]
    }

    /// Reinterprets the same data under new extents with an equal product.
    pub fn reshape(&self, dims: Vec<usize>) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        if n != self.data.len() || dims.is_empty() || dims.len() > 4 || dims.contains(&0) {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} ({} elements) to {:?}",
                self.dims,
                self.data.len(),
                dims
            )));
        }
        Ok(Tensor::from_parts(dims, self.data.clone()))
    }

    fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Tensor::from_parts(self.dims.clone(), data)
    }

    /// max(x, 0), with exact zero preserved.
    pub fn relu(&self) -> Tensor {
        self.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    /// Logistic function 1 / (1 + e^(-x)).
    pub fn sigmoid(&self) -> Tensor {
        self.map(|v| 1.0 / (1.0 + (-v).exp()))
    }

    /// Multiplies every element by a finite scalar.
    pub fn scale(&self, s: f32) -> Result<Tensor> {
        if !s.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite scale {}", s)));
        }
        Ok(self.map(|v| v * s))
    }

    /// Clamps every element into [0, 1].
    pub fn clamp01(&self) -> Tensor {
        self.map(|v| {
            if v < 0.0 {
                0.0
            } else if v > 1.0 {
                1.0
            } else {
                v
            }
        })
    }

    /// Elementwise sum with shape broadcasting (axes of extent 1 repeat).
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_broadcast(other, "add", |a, b| a + b)
    }

    /// Elementwise product with shape broadcasting (axes of extent 1 repeat).
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_broadcast(other, "mul", |a, b| a * b)
    }

    fn zip_broadcast(
        &self,
        other: &Tensor,
        op: &str,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<Tensor> {
        if self.dims == other.dims {
            let data = self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Ok(Tensor::from_parts(self.dims.clone(), data));
        }
        let rank = self.dims.len().max(other.dims.len());
        let pad = |d: &[usize]| -> Vec<usize> {
            let mut v = vec![1usize; rank - d.len()];
            v.extend_from_slice(d);
            v
        };
        let da = pad(&self.dims);
        let db = pad(&other.dims);
        let mut out_dims = vec![0usize; rank];
        for i in 0..rank {
            out_dims[i] = match (da[i], db[i]) {
                (a, b) if a == b => a,
                (1, b) => b,
                (a, 1) => a,
                (a, b) => {
                    return Err(Error::Shape(format!(
                        "{}: cannot broadcast {:?} with {:?} (axis {}: {} vs {})",
                        op, self.dims, other.dims, i, a, b
                    )))
                }
            };
        }
        let strides = |d: &[usize]| -> Vec<usize> {
            let mut s = vec![0usize; rank];
            let mut acc = 1usize;
            for i in (0..rank).rev() {
                s[i] = if d[i] == 1 { 0 } else { acc };
                acc *= d[i];
            }
            s
        };
        let sa = strides(&da);
        let sb = strides(&db);
        let total: usize = out_dims.iter().product();
        let mut data = Vec::with_capacity(total);
        let mut coords = vec![0usize; rank];
        let mut ia = 0usize;
        let mut ib = 0usize;
        for _ in 0..total {
            data.push(f(self.data[ia], other.data[ib]));
            for axis in (0..rank).rev() {
                coords[axis] += 1;
                ia += sa[axis];
                ib += sb[axis];
                if coords[axis] < out_dims[axis] {
                    break;
                }
                coords[axis] = 0;
                ia -= sa[axis] * out_dims[axis];
                ib -= sb[axis] * out_dims[axis];
            }
        }
        Ok(Tensor::from_parts(out_dims, data))
    }
}

/// 2D convolution, stride 1, symmetric zero padding `pad`.
///
/// `x` is (N, IC, H, W), `w` is (OC, IC, KH, KW), `bias` has length OC when
/// present. Each output pixel accumulates bias first, then taps in
/// (ic, ky, kx) order, so results are reproducible bitwise.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&[f32]>, pad: usize) -> Result<Tensor> {
    let (n, ic, h, wd) = x.dims4()?;
    let (oc, wic, kh, kw) = w.dims4()?;
    if wic != ic {
        return Err(Error::Shape(format!(
            "conv2d: input has {} channels but kernel {:?} expects {}",
            ic,
            w.dims(),
            wic
        )));
    }
    if let Some(b) = bias {
        if b.len() != oc {
            return Err(Error::Shape(format!(
                "conv2d: {} output channels but {} bias values",
                oc,
                b.len()
            )));
        }
    }
    if kh > h + 2 * pad || kw > wd + 2 * pad {
        return Err(Error::Shape(format!(
            "conv2d: kernel {}x{} exceeds padded input {}x{}",
            kh,
            kw,
            h + 2 * pad,
            wd + 2 * pad
        )));
    }
    let oh = h + 2 * pad - kh + 1;
    let ow = wd + 2 * pad - kw + 1;
    let mut out = vec![0.0f32; n * oc * oh * ow];
    for bn in 0..n {
        for o in 0..oc {
            let plane = &mut out[((bn * oc + o) * oh) * ow..((bn * oc + o) * oh + oh) * ow];
            if let Some(b) = bias {
                plane.fill(b[o]);
            }
            for i in 0..ic {
                let xbase = ((bn * ic + i) * h) * wd;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = w.data()[((o * ic + i) * kh + ky) * kw + kx];
                        accumulate_tap(
                            plane,
                            &x.data()[xbase..xbase + h * wd],
                            (h, wd),
                            (oh, ow),
                            (ky, kx),
                            pad,
                            wv,
                        );
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, oc, oh, ow], out))
}

/// Depthwise 2D convolution, stride 1, symmetric zero padding.
///
/// `x` is (N, C, H, W), `w` is (C, 1, KH, KW); channel c is filtered by
/// kernel c only. Accumulation order per pixel is bias, then (ky, kx).
pub fn depthwise_conv2d(x: &Tensor, w: &Tensor, bias: Option<&[f32]>, pad: usize) -> Result<Tensor> {
    let (n, c, h, wd) = x.dims4()?;
    let (wc, one, kh, kw) = w.dims4()?;
    if wc != c || one != 1 {
        return Err(Error::Shape(format!(
            "depthwise_conv2d: input has {} channels but kernel is {:?} (want ({}, 1, k, k))",
            c,
            w.dims(),
            c
        )));
    }
    if let Some(b) = bias {
        if b.len() != c {
            return Err(Error::Shape(format!(
                "depthwise_conv2d: {} channels but {} bias values",
                c,
                b.len()
            )));
        }
    }
    if kh > h + 2 * pad || kw > wd + 2 * pad {
        return Err(Error::Shape(format!(
            "depthwise_conv2d: kernel {}x{} exceeds padded input {}x{}",
            kh,
            kw,
            h + 2 * pad,
            wd + 2 * pad
        )));
    }
    let oh = h + 2 * pad - kh + 1;
    let ow = wd + 2 * pad - kw + 1;
    let mut out = vec![0.0f32; n * c * oh * ow];
    for bn in 0..n {
        for ch in 0..c {
            let plane = &mut out[((bn * c + ch) * oh) * ow..((bn * c + ch) * oh + oh) * ow];
            if let Some(b) = bias {
                plane.fill(b[ch]);
            }
            let xbase = ((bn * c + ch) * h) * wd;
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = w.data()[(ch * kh + ky) * kw + kx];
                    accumulate_tap(
                        plane,
                        &x.data()[xbase..xbase + h * wd],
                        (h, wd),
                        (oh, ow),
                        (ky, kx),
                        pad,
                        wv,
                    );
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, oh, ow], out))
}

/// Adds `wv * shifted input` into an output plane for one kernel tap.
/// Pixels whose source falls outside the input are left untouched, which
/// matches zero padding exactly.
fn accumulate_tap(
    plane: &mut [f32],
    xplane: &[f32],
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
    (ky, kx): (usize, usize),
    pad: usize,
    wv: f32,
) {
    for oy in 0..oh {
        let iy = oy as isize + ky as isize - pad as isize;
        if iy < 0 || iy >= h as isize {
            continue;
        }
        let iy = iy as usize;
        // Source column is ox + kx - pad; keep it inside [0, w).
        let ox_lo = pad.saturating_sub(kx);
        let ox_hi = ow.min((w + pad).saturating_sub(kx));
        if ox_lo >= ox_hi {
            continue;
        }
        let shift = kx as isize - pad as isize;
        let orow = &mut plane[oy * ow..oy * ow + ow];
        let xrow = &xplane[iy * w..iy * w + w];
        for ox in ox_lo..ox_hi {
            let ix = (ox as isize + shift) as usize;
            orow[ox] += wv * xrow[ix];
        }
    }
}

/// 2x2 average pooling with stride 2. Both spatial extents must be even.
/// Each output is ((a + b) + c + d) * 0.25 in reading order.
pub fn avg_pool2(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "avg_pool2: spatial extents must be even, got {}x{}",
            h, w
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for bn in 0..n {
        for ch in 0..c {
            let base = ((bn * c + ch) * h) * w;
            for oy in 0..oh {
                let r0 = base + (2 * oy) * w;
                let r1 = r0 + w;
                for ox in 0..ow {
                    let a = x.data()[r0 + 2 * ox];
                    let b = x.data()[r0 + 2 * ox + 1];
                    let cc = x.data()[r1 + 2 * ox];
                    let d = x.data()[r1 + 2 * ox + 1];
                    out.push(((a + b) + cc + d) * 0.25);
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, oh, ow], out))
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + t * (b - a)
}

/// Bilinear x2 upsampling with half-pixel alignment: destination pixel `d`
/// samples source coordinate (d + 0.5) / 2 - 0.5, clamped to the input.
/// Interpolation uses the form a + t * (b - a), so constant inputs are
/// reproduced bitwise and the fractional weights 0.25 / 0.75 are exact.
pub fn upsample_bilinear2(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (oh, ow) = (2 * h, 2 * w);
    // Precompute the source index pair and weight for each output column/row.
    let axis = |src_len: usize, dst_len: usize| -> Vec<(usize, usize, f32)> {
        (0..dst_len)
            .map(|d| {
                let s = (d as f32 + 0.5) * 0.5 - 0.5;
                let s = s.clamp(0.0, (src_len - 1) as f32);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(src_len - 1);
                (i0, i1, s - i0 as f32)
            })
            .collect()
    };
    let ys = axis(h, oh);
    let xs = axis(w, ow);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for bn in 0..n {
        for ch in 0..c {
            let base = ((bn * c + ch) * h) * w;
            for &(y0, y1, ty) in &ys {
                let r0 = base + y0 * w;
                let r1 = base + y1 * w;
                for &(x0, x1, tx) in &xs {
                    let top = lerp(x.data()[r0 + x0], x.data()[r0 + x1], tx);
                    let bot = lerp(x.data()[r1 + x0], x.data()[r1 + x1], tx);
                    out.push(lerp(top, bot, ty));
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, oh, ow], out))
}

/// Row-wise softmax of a rank-2 tensor. The row maximum is subtracted
/// before exponentiation, so each row is invariant to a constant shift and
/// large magnitudes cannot overflow.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (r, c) = x.dims2()?;
    let mut out = Vec::with_capacity(r * c);
    for row in 0..r {
        let src = &x.data()[row * c..(row + 1) * c];
        let m = src.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let mut denom = 0.0f32;
        let start = out.len();
        for &v in src {
            let e = (v - m).exp();
            denom += e;
            out.push(e);
        }
        for v in &mut out[start..] {
            *v /= denom;
        }
    }
    Ok(Tensor::from_parts(vec![r, c], out))
}

/// Matrix product of rank-2 tensors: (R, K) x (K, C) -> (R, C).
/// Each output accumulates over k in ascending order.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (r, k) = a.dims2()?;
    let (kb, c) = b.dims2()?;
    if k != kb {
        return Err(Error::Shape(format!(
            "matmul: inner extents differ, {:?} x {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let mut out = vec![0.0f32; r * c];
    for i in 0..r {
        let arow = &a.data()[i * k..(i + 1) * k];
        let orow = &mut out[i * c..(i + 1) * c];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b.data()[kk * c..(kk + 1) * c];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![r, c], out))
}

/// Matrix product with the second operand transposed:
/// (R, K) x (C, K) -> (R, C), computed as dot products of rows.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (r, k) = a.dims2()?;
    let (c, kb) = b.dims2()?;
    if k != kb {
        return Err(Error::Shape(format!(
            "matmul_nt: inner extents differ, {:?} x {:?} transposed",
            a.dims(),
            b.dims()
        )));
    }
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let arow = &a.data()[i * k..(i + 1) * k];
        for j in 0..c {
            let brow = &b.data()[j * k..(j + 1) * k];
            let mut acc = 0.0f32;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            out.push(acc);
        }
    }
    Ok(Tensor::from_parts(vec![r, c], out))
}

/// Softmax across the channel axis of a rank-4 tensor, independently per
/// (batch, y, x) site, with the same max-subtraction as [`softmax_rows`].
pub fn softmax_channels(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let plane = h * w;
    let mut out = vec![0.0f32; n * c * plane];
    for bn in 0..n {
        for p in 0..plane {
            let mut m = f32::NEG_INFINITY;
            for ch in 0..c {
                m = m.max(x.data()[(bn * c + ch) * plane + p]);
            }
            let mut denom = 0.0f32;
            for ch in 0..c {
                let e = (x.data()[(bn * c + ch) * plane + p] - m).exp();
                out[(bn * c + ch) * plane + p] = e;
                denom += e;
            }
            for ch in 0..c {
                out[(bn * c + ch) * plane + p] /= denom;
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, h, w], out))
}

/// Inference-time batch normalization over the channel axis of a rank-4
/// tensor: y = gamma * (x - mean) / sqrt(var + eps) + beta.
///
/// The per-channel scale and shift are precomputed once, so each element
/// costs one multiply-add. Channels with var + eps <= 0 are rejected.
pub fn batchnorm_infer(
    x: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    mean: &[f32],
    var: &[f32],
    eps: f32,
) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    for (name, s) in [("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)] {
        if s.len() != c {
            return Err(Error::Shape(format!(
                "batchnorm_infer: {} has {} entries for {} channels",
                name,
                s.len(),
                c
            )));
        }
    }
    if !eps.is_finite() || eps < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "batchnorm_infer: eps must be finite and non-negative, got {}",
            eps
        )));
    }
    let mut scale = Vec::with_capacity(c);
    let mut shift = Vec::with_capacity(c);
    for ch in 0..c {
        let denom = var[ch] + eps;
        if denom <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "batchnorm_infer: var + eps = {} is not positive in channel {}",
                denom, ch
            )));
        }
        let s = gamma[ch] / denom.sqrt();
        scale.push(s);
        shift.push(beta[ch] - mean[ch] * s);
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(x.len());
    for bn in 0..n {
        for ch in 0..c {
            let base = (bn * c + ch) * plane;
            let (s, t) = (scale[ch], shift[ch]);
            for &v in &x.data()[base..base + plane] {
                out.push(v * s + t);
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, h, w], out))
}

/// Concatenates rank-4 tensors along the channel axis. Batch and spatial
/// extents must agree.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::InvalidArgument(
            "concat_channels: no tensors given".into(),
        ));
    }
    let (n, _, h, w) = parts[0].dims4()?;
    let mut total_c = 0usize;
    for t in parts {
        let (tn, tc, th, tw) = t.dims4()?;
        if (tn, th, tw) != (n, h, w) {
            return Err(Error::Shape(format!(
                "concat_channels: {:?} does not align with {:?}",
                t.dims(),
                parts[0].dims()
            )));
        }
        total_c += tc;
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * total_c * plane);
    for bn in 0..n {
        for t in parts {
            let tc = t.dims()[1];
            let base = bn * tc * plane;
            out.extend_from_slice(&t.data()[base..base + tc * plane]);
        }
    }
    Ok(Tensor::from_parts(vec![n, total_c, h, w], out))
}

/// Extracts batch element `index` of a rank-4 tensor as shape (1, C, H, W).
pub fn slice_batch(x: &Tensor, index: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if index >= n {
        return Err(Error::InvalidArgument(format!(
            "slice_batch: index {} out of range for batch {}",
            index, n
        )));
    }
    let stride = c * h * w;
    let data = x.data()[index * stride..(index + 1) * stride].to_vec();
    Ok(Tensor::from_parts(vec![1, c, h, w], data))
}

/// Reassembles rank-4 tensors along the batch axis; all parts must share
/// channel and spatial extents.
pub fn concat_batch(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::InvalidArgument(
            "concat_batch: no tensors given".into(),
        ));
    }
    let (_, c, h, w) = parts[0].dims4()?;
    let mut total_n = 0usize;
    let mut data = Vec::new();
    for t in parts {
        let (tn, tc, th, tw) = t.dims4()?;
        if (tc, th, tw) != (c, h, w) {
            return Err(Error::Shape(format!(
                "concat_batch: {:?} does not align with {:?}",
                t.dims(),
                parts[0].dims()
            )));
        }
        total_n += tn;
        data.extend_from_slice(t.data());
    }
    Ok(Tensor::from_parts(vec![total_n, c, h, w], data))
}
