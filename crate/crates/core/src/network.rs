//! The full two-stage forward pass: segmentation branch, refinement branch,
//! and the composition of the final alpha matte.
//!
//! The segmentation branch (`sn_forward`) maps an image to 3-channel
//! trimap logits (background / foreground / unknown at channel 0 / 1 / 2)
//! plus two lower-resolution auxiliary logit maps. The refinement branch
//! (`mrn_forward`) consumes the image concatenated with the softmax of
//! those logits and predicts a raw alpha in [0, 1], attending to image
//! features inside the unknown region. `compose_alpha` keeps the raw alpha
//! only where the predicted class is "unknown", forces foreground to 1 and
//! background to 0.

use crate::arch::{build_plan, AttnPlan, BlockPlan, ConvPlan, NetPlan};
use crate::attention::{ena, EnaConfig};
use crate::config::NetConfig;
use crate::error::{Error, Result};
use crate::fusion::{cfm, CfmParams, ChannelAttentionParams};
use crate::octave::{
    ocblock_general, ocblock_split, BnParams, ConvBn, OcBlockParams, OctFeature,
};
use crate::params::{build_params, check_params, ParamSet};
use crate::tensor::{
    avg_pool2, concat_channels, conv2d, softmax_channels, upsample_bilinear2, Tensor,
};

/// Epsilon added to the running variance in every batch normalization.
pub const BN_EPS: f32 = 1e-5;

/// Output of the segmentation branch: full-resolution logits plus
/// auxiliary logits at ascending resolutions (quarter, then half).
#[derive(Debug, Clone)]
pub struct SegLogits {
    pub t: Tensor,
    pub aux: Vec<Tensor>,
}

/// Prefixes shape errors with the stage that raised them, so a failure
/// deep inside a block names the block.
fn at_stage<T>(stage: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Shape(m) => Error::Shape(format!("{}: {}", stage, m)),
        other => other,
    })
}

fn pool_n(x: &Tensor, times: usize) -> Result<Tensor> {
    let mut y = x.clone();
    for _ in 0..times {
        y = avg_pool2(&y)?;
    }
    Ok(y)
}

/// Index of the largest of three logits; ties keep the smallest index
/// (background over foreground over unknown).
fn argmax3(b: f32, f: f32, u: f32) -> usize {
    let mut best = 0;
    let mut val = b;
    if f > val {
        best = 1;
        val = f;
    }
    if u > val {
        best = 2;
    }
    best
}

/// Per-pixel indicator of the "unknown" class: 1.0 where the unknown
/// channel wins the 3-way argmax, 0.0 elsewhere. Input is N x 3 x H x W
/// logits (or probabilities; argmax is unaffected).
pub fn unknown_indicator(t: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = t.dims4()?;
    if c != 3 {
        return Err(Error::Shape(format!(
            "class map must have 3 channels, got {:?}",
            t.dims()
        )));
    }
    let plane = h * w;
    let data = t.data();
    let mut out = Vec::with_capacity(n * plane);
    for b in 0..n {
        let base = b * 3 * plane;
        for i in 0..plane {
            let am = argmax3(data[base + i], data[base + plane + i], data[base + 2 * plane + i]);
            out.push(if am == 2 { 1.0 } else { 0.0 });
        }
    }
    Tensor::new(vec![n, 1, h, w], out)
}

/// Per-pixel argmax of class logits rendered as trimap codes: background
/// pixels become 0.0, unknown pixels 0.5, foreground pixels 1.0. The
/// result is N x 1 x H x W and writes out as the 0/128/255 grayscale
/// convention used by the image codec.
pub fn class_trimap(t: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = t.dims4()?;
    if c != 3 {
        return Err(Error::Shape(format!(
            "class map must have 3 channels, got {:?}",
            t.dims()
        )));
    }
    let plane = h * w;
    let data = t.data();
    let mut out = Vec::with_capacity(n * plane);
    for b in 0..n {
        let base = b * 3 * plane;
        for i in 0..plane {
            let am = argmax3(data[base + i], data[base + plane + i], data[base + 2 * plane + i]);
            out.push(match am {
                1 => 1.0,
                2 => 0.5,
                _ => 0.0,
            });
        }
    }
    Tensor::new(vec![n, 1, h, w], out)
}

/// Final matte from class logits and the refined alpha: foreground pixels
/// become 1, background pixels 0, and unknown pixels take the refined
/// value clamped to [0, 1].
pub fn compose_alpha(t: &Tensor, alpha_r: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = t.dims4()?;
    if c != 3 {
        return Err(Error::Shape(format!(
            "class map must have 3 channels, got {:?}",
            t.dims()
        )));
    }
    let (an, ac, ah, aw) = alpha_r.dims4()?;
    if an != n || ac != 1 || ah != h || aw != w {
        return Err(Error::Shape(format!(
            "refined alpha {:?} does not match class map {:?}",
            alpha_r.dims(),
            t.dims()
        )));
    }
    let plane = h * w;
    let td = t.data();
    let ad = alpha_r.data();
    let mut out = Vec::with_capacity(n * plane);
    for b in 0..n {
        let tb = b * 3 * plane;
        let ab = b * plane;
        for i in 0..plane {
            let am = argmax3(td[tb + i], td[tb + plane + i], td[tb + 2 * plane + i]);
            out.push(match am {
                1 => 1.0,
                2 => ad[ab + i].clamp(0.0, 1.0),
                _ => 0.0,
            });
        }
    }
    Tensor::new(vec![n, 1, h, w], out)
}

/// Image features and unknown-region gate shared by the two attention
/// modules of the refinement branch.
struct AttnContext {
    img: Tensor,
    u: Tensor,
}

/// The assembled model: configuration, plan, and parameters. Forward
/// passes are pure functions of (image, parameters).
#[derive(Debug, Clone)]
pub struct Model {
    cfg: NetConfig,
    plan: NetPlan,
    params: ParamSet,
    ena_enabled: bool,
    cfm_enabled: bool,
}

impl Model {
    pub fn new(cfg: NetConfig, params: ParamSet) -> Result<Model> {
        let plan = build_plan(&cfg)?;
        check_params(&plan, &params)?;
        Ok(Model {
            cfg,
            plan,
            params,
            ena_enabled: true,
            cfm_enabled: true,
        })
    }

    /// Builds a model with freshly initialized parameters from the
    /// configuration's seed.
    pub fn from_config(cfg: &NetConfig) -> Result<Model> {
        let params = build_params(cfg, cfg.seed)?;
        Model::new(cfg.clone(), params)
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn plan(&self) -> &NetPlan {
        &self.plan
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Mutable access for ablations; replaced tensors keep their shapes.
    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Structurally detaches (or reattaches) the two attention modules.
    pub fn set_ena_enabled(&mut self, on: bool) {
        self.ena_enabled = on;
    }

    /// Structurally detaches (or reattaches) the cross-level fusion; the
    /// last segmentation decoder then skips from the plain level-2 output.
    pub fn set_cfm_enabled(&mut self, on: bool) {
        self.cfm_enabled = on;
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let (_, c, h, w) = image.dims4()?;
        let s = self.cfg.input_size;
        if c != 3 || h != s || w != s {
            return Err(Error::Shape(format!(
                "expected an N x 3 x {} x {} image, got {:?}",
                s,
                s,
                image.dims()
            )));
        }
        Ok(())
    }

    fn bn(&self, base: &str) -> Result<BnParams> {
        let vec = |suffix: &str| -> Result<Vec<f32>> {
            let t = self.params.get(&format!("{}.{}", base, suffix))?;
            if t.rank() != 1 {
                return Err(Error::Shape(format!(
                    "norm parameter {}.{} must be rank 1, got {:?}",
                    base,
                    suffix,
                    t.dims()
                )));
            }
            Ok(t.data().to_vec())
        };
        Ok(BnParams {
            gamma: vec("gamma")?,
            beta: vec("beta")?,
            mean: vec("mean")?,
            var: vec("var")?,
            eps: BN_EPS,
        })
    }

    fn conv_bn(&self, base: &str) -> Result<ConvBn> {
        Ok(ConvBn {
            weight: self.params.get(&format!("{}.weight", base))?.clone(),
            bn: self.bn(&format!("{}.bn", base))?,
        })
    }

    /// Collects the parameters of one block according to its plan entry.
    fn block(&self, plan: &BlockPlan) -> Result<OcBlockParams> {
        let b = &plan.name;
        let dw = |suffix: &str| -> Result<Tensor> {
            Ok(self.params.get(&format!("{}.dw.{}.weight", b, suffix))?.clone())
        };
        let mut p = OcBlockParams::default();
        if plan.in_high > 0 {
            p.expand_high = Some(self.conv_bn(&format!("{}.expand_h", b))?);
        }
        if plan.in_low > 0 {
            p.expand_low = Some(self.conv_bn(&format!("{}.expand_l", b))?);
        }
        if plan.in_high > 0 && plan.out_high > 0 {
            p.dw_hh = Some(dw("hh")?);
        }
        if plan.in_high > 0 && plan.out_low > 0 {
            p.dw_hl = Some(dw("hl")?);
        }
        if plan.in_low > 0 && plan.out_high > 0 {
            p.dw_lh = Some(dw("lh")?);
        }
        if plan.in_low > 0 && plan.out_low > 0 {
            p.dw_ll = Some(dw("ll")?);
        }
        if plan.out_high > 0 {
            p.dw_bn_high = Some(self.bn(&format!("{}.dw.bn_h", b))?);
            p.project_high = Some(self.conv_bn(&format!("{}.project_h", b))?);
        }
        if plan.out_low > 0 {
            p.dw_bn_low = Some(self.bn(&format!("{}.dw.bn_l", b))?);
            p.project_low = Some(self.conv_bn(&format!("{}.project_l", b))?);
        }
        Ok(p)
    }

    fn run_general(&self, x: &OctFeature, plan: &BlockPlan) -> Result<OctFeature> {
        at_stage(&plan.name, ocblock_general(x, &self.block(plan)?))
    }

    fn run_split(&self, x: &Tensor, plan: &BlockPlan) -> Result<OctFeature> {
        at_stage(&plan.name, ocblock_split(x, &self.block(plan)?))
    }

    /// Runs a single-scale (high-only) block on a plain tensor.
    fn run_single(&self, x: &Tensor, plan: &BlockPlan) -> Result<Tensor> {
        let p = self.block(plan)?;
        let f = OctFeature::from_single(x.clone())?;
        at_stage(&plan.name, ocblock_general(&f, &p)?.into_single())
    }

    /// Runs one encoder level of the split / generals / merge shape on a
    /// single-scale input, returning the merged single-scale output.
    fn run_level(&self, x: &Tensor, level: &[BlockPlan]) -> Result<Tensor> {
        let mut f = self.run_split(x, &level[0])?;
        for b in &level[1..level.len() - 1] {
            f = self.run_general(&f, b)?;
        }
        let last = level.last().expect("levels have at least two blocks");
        at_stage(&last.name, ocblock_general(&f, &self.block(last)?)?.into_single())
    }

    fn run_head(&self, x: &Tensor, plan: &ConvPlan) -> Result<Tensor> {
        let w = self.params.get(&format!("{}.weight", plan.name))?;
        let b = self.params.get(&format!("{}.bias", plan.name))?;
        at_stage(&plan.name, conv2d(x, w, Some(b.data()), (plan.k - 1) / 2))
    }

    fn cfm_params(&self) -> Result<CfmParams> {
        let base = &self.plan.sn_cfm.name;
        let get = |suffix: &str| -> Result<Tensor> {
            Ok(self.params.get(&format!("{}.{}", base, suffix))?.clone())
        };
        Ok(CfmParams {
            se: ChannelAttentionParams {
                reduce_weight: get("se.reduce.weight")?,
                reduce_bias: get("se.reduce.bias")?.data().to_vec(),
                expand_weight: get("se.expand.weight")?,
                expand_bias: get("se.expand.bias")?.data().to_vec(),
            },
            project: get("project.weight")?,
        })
    }

    fn attn_config(&self, plan: &AttnPlan) -> Result<EnaConfig> {
        let get = |suffix: &str| -> Result<Tensor> {
            Ok(self.params.get(&format!("{}.{}", plan.name, suffix))?.clone())
        };
        Ok(EnaConfig {
            k_groups: plan.k_groups,
            embed_channels: plan.embed,
            wq: get("wq")?,
            wk: get("wk")?,
            wv: get("wv")?,
            wout: get("wout")?,
        })
    }

    /// Segmentation branch: stem, four encoder levels, cross-level fusion,
    /// three decoders with additive skips, and the three logit heads.
    pub fn sn_forward(&self, image: &Tensor) -> Result<SegLogits> {
        self.check_image(image)?;
        let mut f = self.run_split(image, &self.plan.sn_stem)?;
        for b in &self.plan.sn_encoders[0] {
            f = self.run_general(&f, b)?;
        }
        // Only the full-resolution half of level 1 goes deeper.
        let (high, _) = f.into_parts();
        let e1 = high.ok_or_else(|| Error::Shape("sn.en1: lost high part".into()))?;

        let mut singles: Vec<Tensor> = Vec::with_capacity(3);
        let mut prev = e1;
        for level in &self.plan.sn_encoders[1..] {
            let x = avg_pool2(&prev)?;
            let y = self.run_level(&x, level)?;
            singles.push(y.clone());
            prev = y;
        }
        let (en2, en3, en4) = (&singles[0], &singles[1], &singles[2]);

        let skip2 = if self.cfm_enabled {
            at_stage("sn.cfm", cfm(en2, en4, &self.cfm_params()?))?
        } else {
            en2.clone()
        };

        let d4 = self.run_single(en4, &self.plan.sn_decoders[0])?;
        let d3 = self.run_single(
            &upsample_bilinear2(&d4)?.add(en3)?,
            &self.plan.sn_decoders[1],
        )?;
        let d2 = self.run_single(
            &upsample_bilinear2(&d3)?.add(&skip2)?,
            &self.plan.sn_decoders[2],
        )?;

        let aux3 = self.run_head(&d3, &self.plan.sn_heads[0])?;
        let aux2 = self.run_head(&d2, &self.plan.sn_heads[1])?;
        let t = self.run_head(&upsample_bilinear2(&d2)?, &self.plan.sn_heads[2])?;
        Ok(SegLogits {
            t,
            aux: vec![aux3, aux2],
        })
    }

    /// Image features and unknown gate at the attention resolution.
    fn attn_context(&self, image: &Tensor, t: &Tensor) -> Result<AttnContext> {
        let times = self.cfg.ena_level - 1;
        let img = self.run_single(&pool_n(image, times)?, &self.plan.mrn_img)?;
        let u = pool_n(&unknown_indicator(t)?, times)?;
        Ok(AttnContext { img, u })
    }

    /// Refinement branch: takes the image and the segmentation logits,
    /// returns the raw alpha in [0, 1].
    pub fn mrn_forward(&self, image: &Tensor, t: &Tensor) -> Result<Tensor> {
        self.check_image(image)?;
        let (n, _, h, w) = image.dims4()?;
        let (tn, tc, th, tw) = t.dims4()?;
        if tn != n || tc != 3 || th != h || tw != w {
            return Err(Error::Shape(format!(
                "segmentation logits {:?} do not match image {:?}",
                t.dims(),
                image.dims()
            )));
        }
        let seg = softmax_channels(t)?;
        let input = concat_channels(&[image, &seg])?;

        let mut f = self.run_split(&input, &self.plan.mrn_stem)?;
        for b in &self.plan.mrn_encoders[0] {
            f = self.run_general(&f, b)?;
        }
        let (high, _) = f.into_parts();
        let m1 = high.ok_or_else(|| Error::Shape("mrn.en1: lost high part".into()))?;

        let ctx = if self.ena_enabled {
            Some(self.attn_context(image, t)?)
        } else {
            None
        };

        let mut singles: Vec<Tensor> = Vec::with_capacity(3);
        let mut prev = m1.clone();
        for (idx, level) in self.plan.mrn_encoders[1..].iter().enumerate() {
            let lvl = idx + 2;
            let x = avg_pool2(&prev)?;
            let mut y = self.run_level(&x, level)?;
            if lvl == self.cfg.ena_level {
                if let Some(ctx) = &ctx {
                    let cfg = self.attn_config(&self.plan.mrn_ena_enc)?;
                    y = at_stage(
                        &self.plan.mrn_ena_enc.name,
                        ena(&y, &ctx.img, &ctx.img, Some(&ctx.u), &cfg),
                    )?;
                }
            }
            singles.push(y.clone());
            prev = y;
        }

        // Decoder skips per level: 4 has none, 3 and 2 use the encoder
        // outputs, 1 uses the full-resolution level-1 high feature.
        let skips: [Option<&Tensor>; 4] = [None, Some(&singles[1]), Some(&singles[0]), Some(&m1)];
        let mut d = singles[2].clone();
        for (i, bp) in self.plan.mrn_decoders.iter().enumerate() {
            let lvl = 4 - i;
            let x = match skips[i] {
                None => d,
                Some(skip) => at_stage(&bp.name, upsample_bilinear2(&d)?.add(skip))?,
            };
            d = self.run_single(&x, bp)?;
            if lvl == self.cfg.ena_level {
                if let Some(ctx) = &ctx {
                    let cfg = self.attn_config(&self.plan.mrn_ena_dec)?;
                    d = at_stage(
                        &self.plan.mrn_ena_dec.name,
                        ena(&d, &ctx.img, &ctx.img, Some(&ctx.u), &cfg),
                    )?;
                }
            }
        }
        let logits = self.run_head(&d, &self.plan.mrn_head)?;
        Ok(logits.sigmoid())
    }

    /// Full pipeline: segmentation, refinement, composition. Returns the
    /// matte and the segmentation logits.
    pub fn forward(&self, image: &Tensor) -> Result<(Tensor, SegLogits)> {
        let logits = self.sn_forward(image)?;
        let alpha_r = self.mrn_forward(image, &logits.t)?;
        let alpha = compose_alpha(&logits.t, &alpha_r)?;
        Ok((alpha, logits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> NetConfig {
        let mut cfg = NetConfig::default();
        cfg.input_size = 32;
        cfg.sn_widths = [8, 12, 16, 24];
        cfg.mrn_widths = [8, 12, 16, 24];
        cfg
    }

    fn image(n: usize, s: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = n * 3 * s * s;
        let data: Vec<f32> = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::new(vec![n, 3, s, s], data).unwrap()
    }

    #[test]
    fn sn_forward_emits_three_resolutions_deterministically() {
        let model = Model::from_config(&tiny_cfg()).unwrap();
        let x = image(2, 32, 1);
        let out = model.sn_forward(&x).unwrap();
        assert_eq!(out.t.dims(), &[2, 3, 32, 32]);
        assert_eq!(out.aux.len(), 2);
        assert_eq!(out.aux[0].dims(), &[2, 3, 8, 8]);
        assert_eq!(out.aux[1].dims(), &[2, 3, 16, 16]);
        let again = model.sn_forward(&x).unwrap();
        assert_eq!(out.t.data(), again.t.data());
        assert_eq!(out.aux[0].data(), again.aux[0].data());
    }

    #[test]
    fn sn_head_bias_dominates_class_choice() {
        let mut model = Model::from_config(&tiny_cfg()).unwrap();
        let bias = Tensor::new(vec![3], vec![0.0, 0.0, 10.0]).unwrap();
        for head in ["sn.head.aux3", "sn.head.aux2", "sn.head.final"] {
            model
                .params_mut()
                .replace(&format!("{}.bias", head), bias.clone())
                .unwrap();
        }
        let out = model.sn_forward(&image(1, 32, 2)).unwrap();
        let u = unknown_indicator(&out.t).unwrap();
        assert!(u.data().iter().all(|&v| v == 1.0), "unknown must win everywhere");
        for aux in &out.aux {
            let u = unknown_indicator(aux).unwrap();
            assert!(u.data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn mrn_forward_stays_inside_unit_interval() {
        let model = Model::from_config(&tiny_cfg()).unwrap();
        let x = image(1, 32, 3);
        let t = model.sn_forward(&x).unwrap().t;
        let a = model.mrn_forward(&x, &t).unwrap();
        assert_eq!(a.dims(), &[1, 1, 32, 32]);
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let again = model.mrn_forward(&x, &t).unwrap();
        assert_eq!(a.data(), again.data());
    }

    #[test]
    fn zero_attention_output_weights_equal_detached_attention() {
        let cfg = tiny_cfg();
        let mut zeroed = Model::from_config(&cfg).unwrap();
        for name in ["mrn.ena.enc.wout", "mrn.ena.dec.wout"] {
            let dims = zeroed.params().get(name).unwrap().dims().to_vec();
            zeroed
                .params_mut()
                .replace(name, Tensor::zeros(dims).unwrap())
                .unwrap();
        }
        let mut detached = Model::from_config(&cfg).unwrap();
        detached.set_ena_enabled(false);

        let x = image(1, 32, 4);
        let t = zeroed.sn_forward(&x).unwrap().t;
        let a = zeroed.mrn_forward(&x, &t).unwrap();
        let b = detached.mrn_forward(&x, &t).unwrap();
        assert_eq!(a.data(), b.data(), "dead attention branch must be exact");
    }

    #[test]
    fn zero_fusion_projection_equals_detached_fusion() {
        let cfg = tiny_cfg();
        let mut zeroed = Model::from_config(&cfg).unwrap();
        let dims = zeroed
            .params()
            .get("sn.cfm.project.weight")
            .unwrap()
            .dims()
            .to_vec();
        zeroed
            .params_mut()
            .replace("sn.cfm.project.weight", Tensor::zeros(dims).unwrap())
            .unwrap();
        let mut detached = Model::from_config(&cfg).unwrap();
        detached.set_cfm_enabled(false);

        let x = image(1, 32, 5);
        let a = zeroed.sn_forward(&x).unwrap();
        let b = detached.sn_forward(&x).unwrap();
        assert_eq!(a.t.data(), b.t.data(), "dead fusion branch must be exact");
    }

    #[test]
    fn compose_alpha_follows_class_decisions() {
        // Logit patterns: foreground wins, background wins, unknown wins.
        let t = Tensor::new(
            vec![1, 3, 1, 3],
            vec![
                0.0, 5.0, 1.0, // background channel
                3.0, 1.0, 1.0, // foreground channel
                1.0, 2.0, 4.0, // unknown channel
            ],
        )
        .unwrap();
        let a_r = Tensor::new(vec![1, 1, 1, 3], vec![0.9, 0.9, 0.37]).unwrap();
        let a = compose_alpha(&t, &a_r).unwrap();
        assert_eq!(a.data(), &[1.0, 0.0, 0.37]);
    }

    #[test]
    fn compose_alpha_clamps_and_ties_keep_lower_class() {
        // Equal logits everywhere: background wins every tie.
        let t = Tensor::filled(vec![1, 3, 2, 2], 0.7).unwrap();
        let a_r = Tensor::filled(vec![1, 1, 2, 2], 0.9).unwrap();
        let a = compose_alpha(&t, &a_r).unwrap();
        assert!(a.data().iter().all(|&v| v == 0.0));
        // Out-of-range refinements clamp on unknown pixels.
        let t = Tensor::new(vec![1, 3, 1, 2], vec![0.0, 0.0, 0.0, 0.0, 9.0, 9.0]).unwrap();
        let a_r = Tensor::new(vec![1, 1, 1, 2], vec![1.7, -0.3]).unwrap();
        let a = compose_alpha(&t, &a_r).unwrap();
        assert_eq!(a.data(), &[1.0, 0.0]);
    }

    #[test]
    fn class_maps_partition_every_pixel() {
        let model = Model::from_config(&tiny_cfg()).unwrap();
        let t = model.sn_forward(&image(1, 32, 6)).unwrap().t;
        let (n, _, h, w) = t.dims4().unwrap();
        let plane = h * w;
        let d = t.data();
        for b in 0..n {
            let base = b * 3 * plane;
            for i in 0..plane {
                let am = argmax3(d[base + i], d[base + plane + i], d[base + 2 * plane + i]);
                let f = u8::from(am == 1);
                let u = u8::from(am == 2);
                let bg = u8::from(am == 0);
                assert_eq!(f + u + bg, 1);
            }
        }
    }

    #[test]
    fn compose_alpha_is_monotone_in_refinement() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = Tensor::new(
            vec![1, 3, 4, 4],
            (0..48).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let lo_data: Vec<f32> = (0..16).map(|_| rng.gen_range(0.0..0.5)).collect();
        let hi_data: Vec<f32> = lo_data.iter().map(|v| v + 0.4).collect();
        let lo = compose_alpha(&t, &Tensor::new(vec![1, 1, 4, 4], lo_data).unwrap()).unwrap();
        let hi = compose_alpha(&t, &Tensor::new(vec![1, 1, 4, 4], hi_data).unwrap()).unwrap();
        for (a, b) in lo.data().iter().zip(hi.data()) {
            assert!(a <= b, "alpha must not decrease: {} vs {}", a, b);
        }
    }

    #[test]
    fn full_forward_shapes_and_range() {
        let model = Model::from_config(&tiny_cfg()).unwrap();
        let x = image(1, 32, 9);
        let (alpha, logits) = model.forward(&x).unwrap();
        assert_eq!(alpha.dims(), &[1, 1, 32, 32]);
        assert_eq!(logits.t.dims(), &[1, 3, 32, 32]);
        assert!(alpha.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn wrong_image_extents_are_rejected() {
        let model = Model::from_config(&tiny_cfg()).unwrap();
        let bad = Tensor::zeros(vec![1, 3, 16, 16]).unwrap();
        assert!(model.sn_forward(&bad).is_err());
        let four = Tensor::zeros(vec![1, 4, 32, 32]).unwrap();
        assert!(model.sn_forward(&four).is_err());
    }

    #[test]
    fn class_trimap_renders_argmax_as_codes() {
        // Pixel 0: background wins; pixel 1: foreground; pixel 2: unknown;
        // pixel 3: exact tie goes to the earlier class (background).
        let t = Tensor::new(
            vec![1, 3, 1, 4],
            vec![
                5.0, 0.0, 0.0, 1.0, // background channel
                0.0, 5.0, 0.0, 1.0, // foreground channel
                0.0, 0.0, 5.0, 1.0, // unknown channel
            ],
        )
        .unwrap();
        let m = class_trimap(&t).unwrap();
        assert_eq!(m.dims(), &[1, 1, 1, 4]);
        assert_eq!(m.data(), &[0.0, 1.0, 0.5, 0.0]);
        let two = Tensor::zeros(vec![1, 2, 1, 4]).unwrap();
        assert!(class_trimap(&two).is_err());
    }
}
