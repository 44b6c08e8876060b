//! Two-frequency features, octave convolution, and the inverted-residual
//! OCBlock in its three wirings (split, general, merge).
//!
//! A feature map carries an optional high-frequency part at full resolution
//! and an optional low-frequency part at exactly half resolution. Octave
//! convolution runs up to four convolution paths between the parts, pooling
//! before high-to-low and upsampling after low-to-high.

use crate::error::{Error, Result};
use crate::tensor::{
    avg_pool2, batchnorm_infer, conv2d, depthwise_conv2d, upsample_bilinear2, Tensor,
};

/// A two-frequency feature map. At least one part is always present; when
/// both are, the low part's spatial extents are exactly half the high's.
#[derive(Debug, Clone, PartialEq)]
pub struct OctFeature {
    high: Option<Tensor>,
    low: Option<Tensor>,
}

impl OctFeature {
    pub fn new(high: Option<Tensor>, low: Option<Tensor>) -> Result<OctFeature> {
        match (&high, &low) {
            (None, None) => {
                return Err(Error::Shape(
                    "octave feature needs at least one frequency part".into(),
                ))
            }
            (Some(h), Some(l)) => {
                let (hn, _, hh, hw) = h.dims4()?;
                let (ln, _, lh, lw) = l.dims4()?;
                if hn != ln {
                    return Err(Error::Shape(format!(
                        "octave feature batch mismatch: high {:?} vs low {:?}",
                        h.dims(),
                        l.dims()
                    )));
                }
                if lh * 2 != hh || lw * 2 != hw {
                    return Err(Error::Shape(format!(
                        "low part {:?} is not half the spatial size of high part {:?}",
                        l.dims(),
                        h.dims()
                    )));
                }
            }
            (Some(h), None) => {
                h.dims4()?;
            }
            (None, Some(l)) => {
                l.dims4()?;
            }
        }
        Ok(OctFeature { high, low })
    }

    /// Wraps a single full-resolution tensor as a high-only feature.
    pub fn from_single(t: Tensor) -> Result<OctFeature> {
        OctFeature::new(Some(t), None)
    }

    pub fn high(&self) -> Option<&Tensor> {
        self.high.as_ref()
    }

    pub fn low(&self) -> Option<&Tensor> {
        self.low.as_ref()
    }

    pub fn into_parts(self) -> (Option<Tensor>, Option<Tensor>) {
        (self.high, self.low)
    }

    /// Unwraps a high-only feature; errors if a low part is still attached
    /// or the high part is missing.
    pub fn into_single(self) -> Result<Tensor> {
        match (self.high, self.low) {
            (Some(h), None) => Ok(h),
            (h, l) => Err(Error::Shape(format!(
                "expected a high-only feature, got high: {}, low: {}",
                h.is_some(),
                l.is_some()
            ))),
        }
    }
}

/// One convolution path of an octave convolution.
#[derive(Debug, Clone)]
pub struct ConvPath {
    /// Kernel of shape (out_c, in_c, k, k).
    pub weight: Tensor,
    /// Optional per-output-channel bias.
    pub bias: Option<Vec<f32>>,
}

impl ConvPath {
    pub fn new(weight: Tensor, bias: Option<Vec<f32>>) -> Result<ConvPath> {
        let (oc, _, _, _) = weight.dims4()?;
        if let Some(b) = &bias {
            if b.len() != oc {
                return Err(Error::Shape(format!(
                    "bias has {} entries for kernel {:?}",
                    b.len(),
                    weight.dims()
                )));
            }
            if let Some(v) = b.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("non-finite bias {}", v)));
            }
        }
        Ok(ConvPath { weight, bias })
    }

    fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }
}

/// The up-to-four kernels of an octave convolution, named by
/// input frequency then output frequency (hh, hl, lh, ll), together with
/// the low-frequency channel fraction they were sized for.
#[derive(Debug, Clone)]
pub struct OctConvWeights {
    pub alpha_oct: f32,
    pub hh: Option<ConvPath>,
    pub hl: Option<ConvPath>,
    pub lh: Option<ConvPath>,
    pub ll: Option<ConvPath>,
}

impl OctConvWeights {
    fn validate(&self) -> Result<()> {
        if !self.alpha_oct.is_finite() || !(0.0..=1.0).contains(&self.alpha_oct) {
            return Err(Error::InvalidArgument(format!(
                "alpha_oct must lie in [0, 1], got {}",
                self.alpha_oct
            )));
        }
        if self.alpha_oct == 0.0 && (self.hl.is_some() || self.lh.is_some() || self.ll.is_some()) {
            return Err(Error::InvalidArgument(
                "alpha_oct = 0 admits only the high-to-high path".into(),
            ));
        }
        let check = |a: &Option<ConvPath>,
                     b: &Option<ConvPath>,
                     pick: fn(&ConvPath) -> usize,
                     what: &str|
         -> Result<()> {
            if let (Some(pa), Some(pb)) = (a, b) {
                if pick(pa) != pick(pb) {
                    return Err(Error::Shape(format!(
                        "octconv paths disagree on {}: {:?} vs {:?}",
                        what,
                        pa.weight.dims(),
                        pb.weight.dims()
                    )));
                }
            }
            Ok(())
        };
        check(&self.hh, &self.lh, ConvPath::out_channels, "high output channels")?;
        check(&self.hl, &self.ll, ConvPath::out_channels, "low output channels")?;
        check(&self.hh, &self.hl, ConvPath::in_channels, "high input channels")?;
        check(&self.lh, &self.ll, ConvPath::in_channels, "low input channels")?;
        Ok(())
    }
}

/// Keeps every `stride`-th pixel (starting at the origin) of each plane.
fn subsample(x: &Tensor, stride: usize) -> Result<Tensor> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    if stride == 1 {
        return Ok(x.clone());
    }
    let (n, c, h, w) = x.dims4()?;
    let oh = (h + stride - 1) / stride;
    let ow = (w + stride - 1) / stride;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            let row = base + oy * stride * w;
            for ox in 0..ow {
                out.push(x.data()[row + ox * stride]);
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, oh, ow], out))
}

/// Octave convolution: runs each present path whose input part exists and
/// sums contributions per output frequency.
///
/// With stride 1 this computes
///   y_high = conv(x_high, W_hh) + upsample_bilinear2(conv(x_low, W_lh))
///   y_low  = conv(avg_pool2(x_high), W_hl) + conv(x_low, W_ll)
/// where absent paths or absent inputs contribute nothing. An output part
/// that receives no contribution is not produced. Strides greater than 1
/// subsample each path's convolution output before the frequency moves.
pub fn octconv(x: &OctFeature, w: &OctConvWeights, stride: usize, pad: usize) -> Result<OctFeature> {
    w.validate()?;
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    let run = |p: &ConvPath, input: &Tensor| -> Result<Tensor> {
        let y = conv2d(input, &p.weight, p.bias.as_deref(), pad)?;
        subsample(&y, stride)
    };
    let mut y_high: Option<Tensor> = None;
    if let (Some(p), Some(xh)) = (&w.hh, x.high()) {
        y_high = Some(run(p, xh)?);
    }
    if let (Some(p), Some(xl)) = (&w.lh, x.low()) {
        let t = upsample_bilinear2(&run(p, xl)?)?;
        y_high = Some(match y_high {
            Some(h) => h.add(&t)?,
            None => t,
        });
    }
    let mut y_low: Option<Tensor> = None;
    if let (Some(p), Some(xh)) = (&w.hl, x.high()) {
        y_low = Some(run(p, &avg_pool2(xh)?)?);
    }
    if let (Some(p), Some(xl)) = (&w.ll, x.low()) {
        let t = run(p, xl)?;
        y_low = Some(match y_low {
            Some(l) => l.add(&t)?,
            None => t,
        });
    }
    OctFeature::new(y_high, y_low)
}

/// Inference-time batch normalization parameters for one feature width.
#[derive(Debug, Clone)]
pub struct BnParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub eps: f32,
}

impl BnParams {
    /// Exact identity: unit gamma/var, zero beta/mean/eps.
    pub fn identity(c: usize) -> BnParams {
        BnParams {
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
            mean: vec![0.0; c],
            var: vec![1.0; c],
            eps: 0.0,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        batchnorm_infer(x, &self.gamma, &self.beta, &self.mean, &self.var, self.eps)
    }
}

/// A bias-free convolution (square odd kernel, "same" padding) followed by
/// batch normalization. The pointwise stages of every block use this shape.
#[derive(Debug, Clone)]
pub struct ConvBn {
    pub weight: Tensor,
    pub bn: BnParams,
}

impl ConvBn {
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, kh, kw) = self.weight.dims4()?;
        if kh != kw || kh % 2 == 0 {
            return Err(Error::Shape(format!(
                "expected a square odd kernel, got {:?}",
                self.weight.dims()
            )));
        }
        let y = conv2d(x, &self.weight, None, (kh - 1) / 2)?;
        self.bn.apply(&y)
    }
}

/// Depthwise convolution with "same" padding derived from the kernel.
fn dw_same(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (_, _, kh, kw) = w.dims4()?;
    if kh != kw || kh % 2 == 0 {
        return Err(Error::Shape(format!(
            "expected a square odd depthwise kernel, got {:?}",
            w.dims()
        )));
    }
    depthwise_conv2d(x, w, None, (kh - 1) / 2)
}

/// Parameters of one OCBlock. Which fields are present decides the wiring:
/// expansion runs per available input frequency, the depthwise stage owns
/// up to four paths exactly like [`octconv`] (kernels applied within each
/// frequency, pooling before high-to-low, upsampling after low-to-high),
/// and projection runs per produced output frequency.
#[derive(Debug, Clone, Default)]
pub struct OcBlockParams {
    pub expand_high: Option<ConvBn>,
    pub expand_low: Option<ConvBn>,
    pub dw_hh: Option<Tensor>,
    pub dw_hl: Option<Tensor>,
    pub dw_lh: Option<Tensor>,
    pub dw_ll: Option<Tensor>,
    pub dw_bn_high: Option<BnParams>,
    pub dw_bn_low: Option<BnParams>,
    pub project_high: Option<ConvBn>,
    pub project_low: Option<ConvBn>,
}

/// Inverted-residual OCBlock: per-frequency 1x1 expansion (batchnorm, relu),
/// a 3x3 octave depthwise stage (batchnorm, relu), and a linear 1x1
/// projection (batchnorm). Each frequency gains an additive residual from
/// the input when its input and output shapes match.
pub fn ocblock_general(x: &OctFeature, p: &OcBlockParams) -> Result<OctFeature> {
    let expand = |input: Option<&Tensor>,
                  cb: &Option<ConvBn>,
                  which: &str|
     -> Result<Option<Tensor>> {
        match (input, cb) {
            (Some(t), Some(cb)) => Ok(Some(cb.apply(t)?.relu())),
            (None, None) => Ok(None),
            (Some(_), None) => Err(Error::Shape(format!(
                "ocblock: {} input present but its expansion parameters are absent",
                which
            ))),
            (None, Some(_)) => Err(Error::Shape(format!(
                "ocblock: {} expansion parameters present but the input lacks that part",
                which
            ))),
        }
    };
    let h1 = expand(x.high(), &p.expand_high, "high")?;
    let l1 = expand(x.low(), &p.expand_low, "low")?;

    let need = |t: &Option<Tensor>, path: &str| -> Result<Tensor> {
        t.clone().ok_or_else(|| {
            Error::Shape(format!(
                "ocblock: depthwise path {} has no source frequency",
                path
            ))
        })
    };
    let mut dh: Option<Tensor> = None;
    if let Some(w) = &p.dw_hh {
        dh = Some(dw_same(&need(&h1, "high-to-high")?, w)?);
    }
    if let Some(w) = &p.dw_lh {
        let t = upsample_bilinear2(&dw_same(&need(&l1, "low-to-high")?, w)?)?;
        dh = Some(match dh {
            Some(d) => d.add(&t)?,
            None => t,
        });
    }
    let mut dl: Option<Tensor> = None;
    if let Some(w) = &p.dw_hl {
        dl = Some(dw_same(&avg_pool2(&need(&h1, "high-to-low")?)?, w)?);
    }
    if let Some(w) = &p.dw_ll {
        let t = dw_same(&need(&l1, "low-to-low")?, w)?;
        dl = Some(match dl {
            Some(d) => d.add(&t)?,
            None => t,
        });
    }

    let post_dw = |t: Option<Tensor>, bn: &Option<BnParams>, which: &str| -> Result<Option<Tensor>> {
        match (t, bn) {
            (Some(t), Some(bn)) => Ok(Some(bn.apply(&t)?.relu())),
            (None, None) => Ok(None),
            (Some(_), None) => Err(Error::Shape(format!(
                "ocblock: {} depthwise output produced but its batchnorm is absent",
                which
            ))),
            (None, Some(_)) => Err(Error::Shape(format!(
                "ocblock: {} depthwise batchnorm present but no path feeds it",
                which
            ))),
        }
    };
    let dh = post_dw(dh, &p.dw_bn_high, "high")?;
    let dl = post_dw(dl, &p.dw_bn_low, "low")?;

    let project = |t: &Option<Tensor>, cb: &Option<ConvBn>, which: &str| -> Result<Option<Tensor>> {
        match (t, cb) {
            (Some(t), Some(cb)) => Ok(Some(cb.apply(t)?)),
            (None, None) => Ok(None),
            (Some(_), None) => Err(Error::Shape(format!(
                "ocblock: {} features reach projection but its parameters are absent",
                which
            ))),
            (None, Some(_)) => Err(Error::Shape(format!(
                "ocblock: {} projection parameters present but no features reach it",
                which
            ))),
        }
    };
    let out_h = project(&dh, &p.project_high, "high")?;
    let out_l = project(&dl, &p.project_low, "low")?;

    let residual = |out: Option<Tensor>, input: Option<&Tensor>| -> Result<Option<Tensor>> {
        Ok(match (out, input) {
            (Some(o), Some(x)) if o.dims() == x.dims() => Some(x.add(&o)?),
            (o, _) => o,
        })
    };
    let out_h = residual(out_h, x.high())?;
    let out_l = residual(out_l, x.low())?;
    OctFeature::new(out_h, out_l)
}

/// OCBlock over a single-scale input that produces both frequencies.
pub fn ocblock_split(x: &Tensor, p: &OcBlockParams) -> Result<OctFeature> {
    let y = ocblock_general(&OctFeature::from_single(x.clone())?, p)?;
    if y.high().is_none() || y.low().is_none() {
        return Err(Error::Shape(
            "ocblock_split: parameters did not produce both frequencies".into(),
        ));
    }
    Ok(y)
}

/// OCBlock that fuses both frequencies into a single full-resolution output.
pub fn ocblock_merge(x: &OctFeature, p: &OcBlockParams) -> Result<Tensor> {
    if x.low().is_none() {
        return Err(Error::Shape(
            "ocblock_merge: input has no low-frequency part to fuse".into(),
        ));
    }
    ocblock_general(x, p)?.into_single()
}
