//! Evaluation metrics for predicted alpha mattes (SAD, MSE, gradient
//! error, connectivity error) and trimap generation from ground truth.
//!
//! All four metrics are computed in f64. An optional evaluation mask
//! restricts the sums to pixels where the mask is positive, which is how
//! mattes are conventionally scored inside the unknown trimap region.

use crate::error::{Error, Result};
use crate::losses::make_tgt;
use crate::tensor::Tensor;

/// The four standard matting scores. `sad` and `conn` are sums scaled by
/// 1/1000, `grad` is a sum scaled by 1/1000, `mse` is a per-pixel mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub sad: f64,
    pub mse: f64,
    pub grad: f64,
    pub conn: f64,
}

/// Width of the Gaussian derivative window used by the gradient metric.
const GRAD_RADIUS: i64 = 5;
const GRAD_SIGMA: f64 = 1.4;
/// Connectivity thresholds 0.1 .. 0.9 and the slope activation bound.
const CONN_STEP: f64 = 0.1;
const CONN_PHI_BOUND: f64 = 0.15;

fn check_plane_dims(x: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    if c != 1 {
        return Err(Error::Shape(format!(
            "{} must have one channel, got {:?}",
            what,
            x.dims()
        )));
    }
    Ok((n, h, w))
}

/// Samples a Gaussian and its first derivative on [-5, 5]. The Gaussian is
/// normalized to unit sum before differentiating, so a constant image has
/// exactly antisymmetric derivative taps.
fn gaussian_kernels() -> ([f64; 11], [f64; 11]) {
    let mut g = [0.0f64; 11];
    let mut sum = 0.0;
    for i in -GRAD_RADIUS..=GRAD_RADIUS {
        let v = (-(i * i) as f64 / (2.0 * GRAD_SIGMA * GRAD_SIGMA)).exp();
        g[(i + GRAD_RADIUS) as usize] = v;
        sum += v;
    }
    let mut dg = [0.0f64; 11];
    for i in -GRAD_RADIUS..=GRAD_RADIUS {
        let idx = (i + GRAD_RADIUS) as usize;
        g[idx] /= sum;
        dg[idx] = -(i as f64 / (GRAD_SIGMA * GRAD_SIGMA)) * g[idx];
    }
    (g, dg)
}

/// Separable filtering with replicate padding: `kx` runs along x, `ky`
/// along y.
fn sep_filter(img: &[f64], h: usize, w: usize, kx: &[f64; 11], ky: &[f64; 11]) -> Vec<f64> {
    let clamp = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;
    let mut rows = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, k) in kx.iter().enumerate() {
                let sx = clamp(x as i64 + j as i64 - GRAD_RADIUS, w);
                acc += k * img[y * w + sx];
            }
            rows[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in ky.iter().enumerate() {
                let sy = clamp(y as i64 + i as i64 - GRAD_RADIUS, h);
                acc += k * rows[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Gradient amplitude map of one plane: sqrt(gx^2 + gy^2) under the
/// Gaussian derivative filters.
fn gradient_amplitude(plane: &[f32], h: usize, w: usize) -> Vec<f64> {
    let img: Vec<f64> = plane.iter().map(|&v| v as f64).collect();
    let (g, dg) = gaussian_kernels();
    let gx = sep_filter(&img, h, w, &dg, &g);
    let gy = sep_filter(&img, h, w, &g, &dg);
    gx.iter()
        .zip(&gy)
        .map(|(x, y)| (x * x + y * y).sqrt())
        .collect()
}

/// Size of each 4-connected component of `mask`, returning the membership
/// map of the largest one (ties keep the component found first in scan
/// order). An all-false mask yields an all-false map.
fn largest_component(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut label = vec![usize::MAX; h * w];
    let mut best_label = usize::MAX;
    let mut best_size = 0usize;
    let mut next = 0usize;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !mask[start] || label[start] != usize::MAX {
            continue;
        }
        let mut size = 0usize;
        stack.push(start);
        label[start] = next;
        while let Some(i) = stack.pop() {
            size += 1;
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if mask[j] && label[j] == usize::MAX {
                    label[j] = next;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if size > best_size {
            best_size = size;
            best_label = next;
        }
        next += 1;
    }
    label.iter().map(|&l| l == best_label && l != usize::MAX).collect()
}

/// Connectivity level map: for each pixel, the highest threshold at which
/// it still belongs to the largest component jointly supported by both
/// mattes, stepping thresholds 0.1 .. 0.9.
fn connectivity_levels(pred: &[f32], gt: &[f32], h: usize, w: usize) -> Vec<f64> {
    let mut l_map = vec![f64::NAN; h * w];
    for step in 1..=9 {
        let theta = step as f64 * CONN_STEP;
        let inter: Vec<bool> = pred
            .iter()
            .zip(gt)
            .map(|(&p, &g)| p as f64 >= theta && g as f64 >= theta)
            .collect();
        let omega = largest_component(&inter, h, w);
        for i in 0..h * w {
            if l_map[i].is_nan() && !omega[i] {
                l_map[i] = theta - CONN_STEP;
            }
        }
    }
    l_map
        .into_iter()
        .map(|v| if v.is_nan() { 1.0 } else { v })
        .collect()
}

fn conn_phi(v: f64, level: f64) -> f64 {
    let d = v - level;
    if d >= CONN_PHI_BOUND {
        1.0 - d
    } else {
        1.0
    }
}

/// Scores a predicted matte against ground truth. When `eval_mask` is
/// given, only pixels with a positive mask value enter the sums (and the
/// MSE mean); an empty mask yields all zeros.
pub fn metric_suite(
    pred: &Tensor,
    gt: &Tensor,
    eval_mask: Option<&Tensor>,
) -> Result<MetricReport> {
    let (n, h, w) = check_plane_dims(pred, "predicted matte")?;
    if pred.dims() != gt.dims() {
        return Err(Error::Shape(format!(
            "matte dims {:?} do not match ground truth {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    let mask: Option<&[f32]> = match eval_mask {
        Some(m) => {
            if m.dims() != pred.dims() {
                return Err(Error::Shape(format!(
                    "evaluation mask dims {:?} do not match mattes {:?}",
                    m.dims(),
                    pred.dims()
                )));
            }
            Some(m.data())
        }
        None => None,
    };
    let plane = h * w;
    let counted = |i: usize| mask.map_or(true, |m| m[i] > 0.0);

    let mut sad = 0.0f64;
    let mut sq = 0.0f64;
    let mut count = 0u64;
    let mut grad = 0.0f64;
    let mut conn = 0.0f64;
    for b in 0..n {
        let p = &pred.data()[b * plane..(b + 1) * plane];
        let g = &gt.data()[b * plane..(b + 1) * plane];
        let amp_p = gradient_amplitude(p, h, w);
        let amp_g = gradient_amplitude(g, h, w);
        let levels = connectivity_levels(p, g, h, w);
        for i in 0..plane {
            if !counted(b * plane + i) {
                continue;
            }
            let d = p[i] as f64 - g[i] as f64;
            sad += d.abs();
            sq += d * d;
            count += 1;
            let ad = amp_p[i] - amp_g[i];
            grad += ad * ad;
            conn += (conn_phi(p[i] as f64, levels[i]) - conn_phi(g[i] as f64, levels[i])).abs();
        }
    }
    let mse = if count == 0 { 0.0 } else { sq / count as f64 };
    Ok(MetricReport {
        sad: sad / 1000.0,
        mse,
        grad: grad / 1000.0,
        conn: conn / 1000.0,
    })
}

/// True where any set pixel lies within a centered square window of side
/// 2 * radius + 1, computed with exact integer prefix sums per axis.
fn dilate_square(mask: &[bool], h: usize, w: usize, radius: usize) -> Vec<bool> {
    let window = |line: &[u32], len: usize, i: usize| {
        let lo = i.saturating_sub(radius);
        let hi = (i + radius + 1).min(len);
        line[hi] - line[lo]
    };
    let mut rows = vec![0u32; h * w];
    let mut prefix = vec![0u32; w + 1];
    for y in 0..h {
        for x in 0..w {
            prefix[x + 1] = prefix[x] + mask[y * w + x] as u32;
        }
        for x in 0..w {
            rows[y * w + x] = (window(&prefix, w, x) > 0) as u32;
        }
    }
    let mut out = vec![false; h * w];
    let mut col = vec![0u32; h + 1];
    for x in 0..w {
        for y in 0..h {
            col[y + 1] = col[y] + rows[y * w + x];
        }
        for y in 0..h {
            out[y * w + x] = window(&col, h, y) > 0;
        }
    }
    out
}

/// Derives a trimap from ground-truth alpha: the unknown set (alpha
/// strictly between 0 and 1) is dilated by a square structuring element
/// of the given radius and encoded as 0.5, over preserved background 0
/// and foreground 1. Radius 0 keeps the raw unknown set.
pub fn trimap_from_alpha(alpha_gt: &Tensor, radius: usize) -> Result<Tensor> {
    let labels = make_tgt(alpha_gt)?.t_gt;
    let (n, h, w) = check_plane_dims(&labels, "alpha")?;
    let plane = h * w;
    let mut out = vec![0.0f32; labels.len()];
    for b in 0..n {
        let l = &labels.data()[b * plane..(b + 1) * plane];
        let unknown: Vec<bool> = l.iter().map(|&v| v == 2.0).collect();
        let band = dilate_square(&unknown, h, w, radius);
        for i in 0..plane {
            out[b * plane + i] = if band[i] {
                0.5
            } else if l[i] == 1.0 {
                1.0
            } else {
                0.0
            };
        }
    }
    Tensor::new(labels.dims().to_vec(), out)
}

/// Decodes a trimap plane into a 0/1 unknown-region mask by snapping each
/// value to the nearest of {0, 0.5, 1}.
pub fn unknown_mask_from_trimap(trimap: &Tensor) -> Result<Tensor> {
    check_plane_dims(trimap, "trimap")?;
    let mask: Vec<f32> = trimap
        .data()
        .iter()
        .map(|&v| {
            let d0 = (v - 0.0).abs();
            let dh = (v - 0.5).abs();
            let d1 = (v - 1.0).abs();
            (dh < d0 && dh <= d1) as u32 as f32
        })
        .collect();
    Tensor::new(trimap.dims().to_vec(), mask)
}
