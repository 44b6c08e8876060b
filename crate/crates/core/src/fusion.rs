//! Cross-level fusion: squeeze-excite style channel attention on the
//! deepest encoder feature, bilinear upsampling across the two-level gap,
//! and an additive merge into the shallow feature.

use crate::error::{Error, Result};
use crate::tensor::{conv2d, upsample_bilinear2, Tensor};

/// Squeeze-excite channel attention parameters: a reducing 1x1 transform
/// (relu) and a restoring 1x1 transform (sigmoid), both biased.
#[derive(Debug, Clone)]
pub struct ChannelAttentionParams {
    /// (squeeze_width, C, 1, 1)
    pub reduce_weight: Tensor,
    pub reduce_bias: Vec<f32>,
    /// (C, squeeze_width, 1, 1)
    pub expand_weight: Tensor,
    pub expand_bias: Vec<f32>,
}

impl ChannelAttentionParams {
    fn validate(&self, c: usize) -> Result<()> {
        let (sq, rc, kh, kw) = self.reduce_weight.dims4()?;
        let (ec, esq, ekh, ekw) = self.expand_weight.dims4()?;
        if rc != c || ec != c || esq != sq || kh != 1 || kw != 1 || ekh != 1 || ekw != 1 {
            return Err(Error::Shape(format!(
                "channel attention weights {:?} / {:?} do not fit {} channels",
                self.reduce_weight.dims(),
                self.expand_weight.dims(),
                c
            )));
        }
        if sq == 0 {
            return Err(Error::InvalidArgument(
                "channel attention squeeze width must be positive".into(),
            ));
        }
        if self.reduce_bias.len() != sq || self.expand_bias.len() != c {
            return Err(Error::Shape(format!(
                "channel attention biases ({}, {}) do not fit widths ({}, {})",
                self.reduce_bias.len(),
                self.expand_bias.len(),
                sq,
                c
            )));
        }
        Ok(())
    }
}

/// Global average pool over the spatial axes: (N, C, H, W) -> (N, C, 1, 1).
fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let plane = h * w;
    let inv = 1.0f32 / plane as f32;
    let mut out = Vec::with_capacity(n * c);
    for p in 0..n * c {
        let mut acc = 0.0f32;
        for &v in &x.data()[p * plane..(p + 1) * plane] {
            acc += v;
        }
        out.push(acc * inv);
    }
    Tensor::new(vec![n, c, 1, 1], out)
}

/// Per-channel gate in (0, 1): global average pool, reducing 1x1 transform
/// with relu, restoring 1x1 transform with sigmoid.
pub fn channel_attention(x: &Tensor, params: &ChannelAttentionParams) -> Result<Tensor> {
    let (_, c, _, _) = x.dims4()?;
    params.validate(c)?;
    let pooled = global_avg_pool(x)?;
    let reduced = conv2d(&pooled, &params.reduce_weight, Some(&params.reduce_bias), 0)?.relu();
    let logits = conv2d(&reduced, &params.expand_weight, Some(&params.expand_bias), 0)?;
    Ok(logits.sigmoid())
}

/// Parameters of the cross-level fusion: channel attention over the deep
/// feature and a bias-free 1x1 projection onto the shallow width.
#[derive(Debug, Clone)]
pub struct CfmParams {
    pub se: ChannelAttentionParams,
    /// (shallow_c, deep_c, 1, 1); deliberately bias-free so that a zero
    /// deep feature contributes exactly nothing.
    pub project: Tensor,
}

/// Fuses the deep feature into the shallow one: scale the deep feature by
/// its channel-attention gates, upsample bilinearly across the two-level
/// gap (x4, as two x2 stages), project to the shallow width, and add.
pub fn cfm(en2: &Tensor, en4: &Tensor, params: &CfmParams) -> Result<Tensor> {
    let (n2, c2, h2, w2) = en2.dims4()?;
    let (n4, c4, h4, w4) = en4.dims4()?;
    if n2 != n4 || h4 * 4 != h2 || w4 * 4 != w2 {
        return Err(Error::Shape(format!(
            "cfm: deep feature {:?} is not two levels below shallow {:?}",
            en4.dims(),
            en2.dims()
        )));
    }
    let (pc2, pc4, pkh, pkw) = params.project.dims4()?;
    if pc2 != c2 || pc4 != c4 || pkh != 1 || pkw != 1 {
        return Err(Error::Shape(format!(
            "cfm: projection {:?} does not map {} channels to {}",
            params.project.dims(),
            c4,
            c2
        )));
    }
    let gates = channel_attention(en4, &params.se)?;
    let scaled = en4.mul(&gates)?;
    let up = upsample_bilinear2(&upsample_bilinear2(&scaled)?)?;
    let projected = conv2d(&up, &params.project, None, 0)?;
    en2.add(&projected)
}
