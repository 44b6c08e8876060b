//! Supervision signals and matting utilities: compositing, trimap label
//! generation, the three training losses, and their weighted combination.
//!
//! All losses accumulate in f64 and are normalized by pixel count so their
//! magnitudes are resolution-independent; the raw per-term values are
//! reported alongside the weighted total.

use crate::error::{Error, Result};
use crate::tensor::{upsample_bilinear2, Tensor};

/// Per-pixel trimap labels: 0 background, 1 foreground, 2 unknown.
#[derive(Debug, Clone)]
pub struct TrimapLabels {
    pub t_gt: Tensor,
}

impl TrimapLabels {
    /// Validates an N x 1 x H x W tensor holding only the labels 0, 1, 2.
    pub fn new(t_gt: Tensor) -> Result<TrimapLabels> {
        let (_, c, _, _) = t_gt.dims4()?;
        if c != 1 {
            return Err(Error::Shape(format!(
                "trimap labels must have one channel, got {:?}",
                t_gt.dims()
            )));
        }
        if let Some(v) = t_gt
            .data()
            .iter()
            .find(|v| **v != 0.0 && **v != 1.0 && **v != 2.0)
        {
            return Err(Error::InvalidArgument(format!(
                "trimap labels must be 0, 1, or 2, got {}",
                v
            )));
        }
        Ok(TrimapLabels { t_gt })
    }
}

/// Weights of the combined loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_sn: f64,
    pub w_l1: f64,
    pub w_g: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_sn: 1.0,
            w_l1: 5.0,
            w_g: 0.5,
        }
    }
}

impl LossWeights {
    fn validate(&self) -> Result<()> {
        if self.w_sn < 0.0 || self.w_l1 < 0.0 || self.w_g < 0.0 {
            return Err(Error::InvalidArgument(
                "loss weights must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Raw per-term losses plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub sn: f64,
    pub l1: f64,
    pub grad: f64,
    pub total: f64,
}

fn same_dims(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "{}: dims {:?} vs {:?}",
            what,
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Blends foreground over background: I = alpha * F + (1 - alpha) * B,
/// per color channel. At alpha exactly 0 or 1 the result is bitwise the
/// corresponding input.
pub fn composite_image(f: &Tensor, b: &Tensor, alpha: &Tensor) -> Result<Tensor> {
    same_dims(f, b, "composite foreground/background")?;
    let (n, c, h, w) = f.dims4()?;
    let (an, ac, ah, aw) = alpha.dims4()?;
    if an != n || ac != 1 || ah != h || aw != w {
        return Err(Error::Shape(format!(
            "composite alpha {:?} does not match images {:?}",
            alpha.dims(),
            f.dims()
        )));
    }
    if let Some(v) = alpha.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!(
            "composite alpha must lie in [0, 1], got {}",
            v
        )));
    }
    let plane = h * w;
    let (fd, bd, ad) = (f.data(), b.data(), alpha.data());
    let mut out = Vec::with_capacity(fd.len());
    for bi in 0..n {
        for ci in 0..c {
            let img = (bi * c + ci) * plane;
            let a0 = bi * plane;
            for i in 0..plane {
                let a = ad[a0 + i];
                out.push(a * fd[img + i] + (1.0 - a) * bd[img + i]);
            }
        }
    }
    Tensor::new(f.dims().to_vec(), out)
}

/// Labels each pixel from ground-truth alpha: exactly 0 is background,
/// exactly 1 is foreground, anything strictly between is unknown.
pub fn make_tgt(alpha_gt: &Tensor) -> Result<TrimapLabels> {
    let (_, c, _, _) = alpha_gt.dims4()?;
    if c != 1 {
        return Err(Error::Shape(format!(
            "alpha must have one channel, got {:?}",
            alpha_gt.dims()
        )));
    }
    if let Some(v) = alpha_gt.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in [0, 1], got {}",
            v
        )));
    }
    let labels: Vec<f32> = alpha_gt
        .data()
        .iter()
        .map(|&v| if v == 0.0 { 0.0 } else if v == 1.0 { 1.0 } else { 2.0 })
        .collect();
    TrimapLabels::new(Tensor::new(alpha_gt.dims().to_vec(), labels)?)
}

/// Doubles the spatial extents until they reach (h, w).
fn upsample_to(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (_, _, mut ch, mut cw) = x.dims4()?;
    let mut y = x.clone();
    while ch < h && cw < w {
        y = upsample_bilinear2(&y)?;
        ch *= 2;
        cw *= 2;
    }
    if ch != h || cw != w {
        return Err(Error::Shape(format!(
            "cannot upsample {:?} to {} x {} by doubling",
            x.dims(),
            h,
            w
        )));
    }
    Ok(y)
}

/// Multi-level segmentation loss: each of the three logit maps is
/// bilinearly upsampled to the label resolution, scored by mean per-pixel
/// cross entropy against the labels, and the three values are summed.
pub fn loss_sn(logit_levels: &[&Tensor], t_gt: &TrimapLabels) -> Result<f64> {
    if logit_levels.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "expected 3 logit levels, got {}",
            logit_levels.len()
        )));
    }
    let (gn, _, gh, gw) = t_gt.t_gt.dims4()?;
    let labels = t_gt.t_gt.data();
    let mut total = 0.0f64;
    for level in logit_levels {
        let (ln, lc, _, _) = level.dims4()?;
        if lc != 3 || ln != gn {
            return Err(Error::Shape(format!(
                "logit level {:?} does not fit labels {:?}",
                level.dims(),
                t_gt.t_gt.dims()
            )));
        }
        let up = upsample_to(level, gh, gw)?;
        let plane = gh * gw;
        let d = up.data();
        let mut acc = 0.0f64;
        for b in 0..gn {
            let base = b * 3 * plane;
            let lbase = b * plane;
            for i in 0..plane {
                let z = [
                    d[base + i] as f64,
                    d[base + plane + i] as f64,
                    d[base + 2 * plane + i] as f64,
                ];
                let label = labels[lbase + i] as usize;
                let m = z[0].max(z[1]).max(z[2]);
                let lse = m + ((z[0] - m).exp() + (z[1] - m).exp() + (z[2] - m).exp()).ln();
                acc += lse - z[label];
            }
        }
        total += acc / (gn * plane) as f64;
    }
    Ok(total)
}

/// Weighted absolute error: pixels whose ground truth is exactly 0 or 1
/// weigh 0.1, strictly interior pixels weigh 1; normalized by pixel count.
pub fn loss_l1_weighted(alpha: &Tensor, alpha_gt: &Tensor) -> Result<f64> {
    same_dims(alpha, alpha_gt, "weighted absolute error")?;
    alpha.dims4()?;
    let mut acc = 0.0f64;
    for (&p, &g) in alpha.data().iter().zip(alpha_gt.data()) {
        let w = if g == 0.0 || g == 1.0 { 0.1 } else { 1.0 };
        acc += w * (p as f64 - g as f64).abs();
    }
    Ok(acc / alpha.len() as f64)
}

/// Sums forward differences (zero at the trailing border) of one plane
/// into the accumulator as |dx(p) - dx(g)| + |dy(p) - dy(g)|.
fn grad_diff_plane(p: &[f32], g: &[f32], h: usize, w: usize, acc: &mut f64) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let dxp = if x + 1 < w { p[i + 1] as f64 - p[i] as f64 } else { 0.0 };
            let dxg = if x + 1 < w { g[i + 1] as f64 - g[i] as f64 } else { 0.0 };
            let dyp = if y + 1 < h { p[i + w] as f64 - p[i] as f64 } else { 0.0 };
            let dyg = if y + 1 < h { g[i + w] as f64 - g[i] as f64 } else { 0.0 };
            *acc += (dxp - dxg).abs() + (dyp - dyg).abs();
        }
    }
}

/// Gradient consistency loss over forward finite differences, normalized
/// by pixel count. Exactly zero whenever the inputs differ by a constant.
pub fn loss_grad(alpha: &Tensor, alpha_gt: &Tensor) -> Result<f64> {
    same_dims(alpha, alpha_gt, "gradient loss")?;
    let (n, c, h, w) = alpha.dims4()?;
    let plane = h * w;
    let mut acc = 0.0f64;
    for pl in 0..n * c {
        grad_diff_plane(
            &alpha.data()[pl * plane..(pl + 1) * plane],
            &alpha_gt.data()[pl * plane..(pl + 1) * plane],
            h,
            w,
            &mut acc,
        );
    }
    Ok(acc / alpha.len() as f64)
}

/// Weighted combination of the three losses with a per-term breakdown.
pub fn loss_total(
    logit_levels: &[&Tensor],
    t_gt: &TrimapLabels,
    alpha: &Tensor,
    alpha_gt: &Tensor,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let sn = loss_sn(logit_levels, t_gt)?;
    let l1 = loss_l1_weighted(alpha, alpha_gt)?;
    let grad = loss_grad(alpha, alpha_gt)?;
    Ok(LossBreakdown {
        sn,
        l1,
        grad,
        total: weights.w_sn * sn + weights.w_l1 * l1 + weights.w_g * grad,
    })
}
