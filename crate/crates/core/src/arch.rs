//! Static network plan: every block, fusion module, attention module, and
//! head the two branches contain, with exact channel widths, resolutions,
//! and hierarchical parameter names.
//!
//! The plan is the single source of truth shared by parameter
//! initialization, the cost ledger, and forward-pass assembly, so a tensor
//! name that appears in one place is guaranteed to mean the same layer in
//! the others.
//!
//! Topology of the segmentation branch (square input of edge S):
//! a split stem decomposes the image into a two-frequency feature, level 1
//! stacks general blocks at full resolution, and levels 2..4 (at S/2, S/4,
//! S/8) each open with a split block, continue with general blocks, and
//! close with a merge block, pooling between levels. Only the
//! high-frequency half of level 1 feeds level 2. The deepest level is fused
//! into level 2 by channel attention (the skip used by the last decoder),
//! three decoders walk back up, and 3x3 heads emit logits at S/4, S/2, and
//! S. The refinement branch mirrors this with two blocks per level, four
//! decoders returning to full resolution, a side branch that turns the
//! pooled image into key/value features, and a symmetric pair of attention
//! modules at a configurable level.

use crate::config::NetConfig;
use crate::error::{Error, Result};

/// Splits a total channel width into (high, low) parts; `alpha` is the low
/// fraction, rounded half away from zero to a whole channel count.
pub fn split_channels(width: usize, alpha: f32) -> (usize, usize) {
    let low = (alpha as f64 * width as f64).round() as usize;
    let low = low.min(width);
    (width - low, low)
}

/// One OCBlock: channel widths per frequency (0 = absent part) and the
/// spatial edge of the high-frequency grid at this block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPlan {
    pub name: String,
    pub in_high: usize,
    pub in_low: usize,
    pub out_high: usize,
    pub out_low: usize,
    pub res: usize,
}

/// A plain convolution layer (head or projection) outside any block.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvPlan {
    pub name: String,
    pub out_c: usize,
    pub in_c: usize,
    pub k: usize,
    pub bias: bool,
    pub res: usize,
}

/// The cross-level fusion module: squeeze-excite widths plus the 1x1
/// projection onto the shallow feature.
#[derive(Debug, Clone, PartialEq)]
pub struct CfmPlan {
    pub name: String,
    pub shallow_c: usize,
    pub deep_c: usize,
    pub squeeze: usize,
    /// Spatial edge at which the projection runs (the shallow grid).
    pub out_res: usize,
}

/// One attention module: query-side width, key/value-side width, embedding
/// width, group count, and the grid edge it runs on.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnPlan {
    pub name: String,
    pub q_c: usize,
    pub kv_c: usize,
    pub embed: usize,
    pub k_groups: usize,
    pub res: usize,
}

/// Kind of one parameterized leaf layer, carrying everything the ledger
/// needs to count parameters and arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    /// `res` is the output grid edge; `depthwise` kernels have in_c = 1
    /// (per-channel filtering).
    Conv {
        out_c: usize,
        in_c: usize,
        k: usize,
        bias: bool,
        depthwise: bool,
        res: usize,
    },
    Bn {
        c: usize,
        res: usize,
    },
    Attn {
        q_c: usize,
        kv_c: usize,
        embed: usize,
        k_groups: usize,
        res: usize,
    },
}

/// A named leaf layer. Parameter tensors hang off the name with fixed
/// suffixes: convolutions own `.weight` (and `.bias` when biased), batch
/// norms own `.gamma`/`.beta`/`.mean`/`.var`, attention modules own
/// `.wq`/`.wk`/`.wv`/`.wout`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDecl {
    pub name: String,
    pub kind: LayerKind,
}

impl BlockPlan {
    fn expanded_high(&self) -> usize {
        2 * self.in_high
    }

    fn expanded_low(&self) -> usize {
        2 * self.in_low
    }

    /// Channels reaching the high-side projection (0 when no high output).
    pub fn dw_high_channels(&self) -> usize {
        if self.out_high == 0 {
            0
        } else if self.in_high > 0 {
            self.expanded_high()
        } else {
            self.expanded_low()
        }
    }

    /// Channels reaching the low-side projection (0 when no low output).
    pub fn dw_low_channels(&self) -> usize {
        if self.out_low == 0 {
            0
        } else if self.in_low > 0 {
            self.expanded_low()
        } else {
            self.expanded_high()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.in_high == 0 && self.in_low == 0 {
            return Err(Error::Config(format!("{}: block has no input part", self.name)));
        }
        if self.out_high == 0 && self.out_low == 0 {
            return Err(Error::Config(format!("{}: block has no output part", self.name)));
        }
        if self.res < 2 || self.res % 2 != 0 {
            return Err(Error::Config(format!(
                "{}: high-frequency grid edge {} cannot host a half-resolution part",
                self.name, self.res
            )));
        }
        // Cross-frequency depthwise exchange adds per-channel outputs of
        // the two expansions, which requires equal expanded widths whenever
        // two paths feed the same output frequency.
        let high_fed_by_both = self.out_high > 0 && self.in_high > 0 && self.in_low > 0;
        let low_fed_by_both = self.out_low > 0 && self.in_high > 0 && self.in_low > 0;
        if (high_fed_by_both || low_fed_by_both) && self.expanded_high() != self.expanded_low() {
            return Err(Error::Config(format!(
                "{}: high/low widths {}/{} must match for cross-frequency exchange",
                self.name, self.in_high, self.in_low
            )));
        }
        Ok(())
    }

    /// Leaf layers of this block, in execution order.
    pub fn layers(&self) -> Vec<LayerDecl> {
        let mut out = Vec::new();
        let conv = |name: String, oc: usize, ic: usize, k: usize, dw: bool, res: usize| LayerDecl {
            name,
            kind: LayerKind::Conv {
                out_c: oc,
                in_c: ic,
                k,
                bias: false,
                depthwise: dw,
                res,
            },
        };
        let bn = |name: String, c: usize, res: usize| LayerDecl {
            name,
            kind: LayerKind::Bn { c, res },
        };
        let (eh, el) = (self.expanded_high(), self.expanded_low());
        let low_res = self.res / 2;
        if self.in_high > 0 {
            out.push(conv(format!("{}.expand_h", self.name), eh, self.in_high, 1, false, self.res));
            out.push(bn(format!("{}.expand_h.bn", self.name), eh, self.res));
        }
        if self.in_low > 0 {
            out.push(conv(format!("{}.expand_l", self.name), el, self.in_low, 1, false, low_res));
            out.push(bn(format!("{}.expand_l.bn", self.name), el, low_res));
        }
        if self.in_high > 0 && self.out_high > 0 {
            out.push(conv(format!("{}.dw.hh", self.name), eh, 1, 3, true, self.res));
        }
        if self.in_high > 0 && self.out_low > 0 {
            out.push(conv(format!("{}.dw.hl", self.name), eh, 1, 3, true, low_res));
        }
        if self.in_low > 0 && self.out_high > 0 {
            out.push(conv(format!("{}.dw.lh", self.name), el, 1, 3, true, low_res));
        }
        if self.in_low > 0 && self.out_low > 0 {
            out.push(conv(format!("{}.dw.ll", self.name), el, 1, 3, true, low_res));
        }
        if self.out_high > 0 {
            out.push(bn(format!("{}.dw.bn_h", self.name), self.dw_high_channels(), self.res));
        }
        if self.out_low > 0 {
            out.push(bn(format!("{}.dw.bn_l", self.name), self.dw_low_channels(), low_res));
        }
        if self.out_high > 0 {
            let d = self.dw_high_channels();
            out.push(conv(format!("{}.project_h", self.name), self.out_high, d, 1, false, self.res));
            out.push(bn(format!("{}.project_h.bn", self.name), self.out_high, self.res));
        }
        if self.out_low > 0 {
            let d = self.dw_low_channels();
            out.push(conv(format!("{}.project_l", self.name), self.out_low, d, 1, false, low_res));
            out.push(bn(format!("{}.project_l.bn", self.name), self.out_low, low_res));
        }
        out
    }
}

impl ConvPlan {
    pub fn layers(&self) -> Vec<LayerDecl> {
        vec![LayerDecl {
            name: self.name.clone(),
            kind: LayerKind::Conv {
                out_c: self.out_c,
                in_c: self.in_c,
                k: self.k,
                bias: self.bias,
                depthwise: false,
                res: self.res,
            },
        }]
    }
}

impl CfmPlan {
    pub fn layers(&self) -> Vec<LayerDecl> {
        vec![
            LayerDecl {
                name: format!("{}.se.reduce", self.name),
                kind: LayerKind::Conv {
                    out_c: self.squeeze,
                    in_c: self.deep_c,
                    k: 1,
                    bias: true,
                    depthwise: false,
                    res: 1,
                },
            },
            LayerDecl {
                name: format!("{}.se.expand", self.name),
                kind: LayerKind::Conv {
                    out_c: self.deep_c,
                    in_c: self.squeeze,
                    k: 1,
                    bias: true,
                    depthwise: false,
                    res: 1,
                },
            },
            LayerDecl {
                name: format!("{}.project", self.name),
                kind: LayerKind::Conv {
                    out_c: self.shallow_c,
                    in_c: self.deep_c,
                    k: 1,
                    bias: false,
                    depthwise: false,
                    res: self.out_res,
                },
            },
        ]
    }
}

impl AttnPlan {
    pub fn layers(&self) -> Vec<LayerDecl> {
        vec![LayerDecl {
            name: self.name.clone(),
            kind: LayerKind::Attn {
                q_c: self.q_c,
                kv_c: self.kv_c,
                embed: self.embed,
                k_groups: self.k_groups,
                res: self.res,
            },
        }]
    }
}

/// The full two-branch network plan.
#[derive(Debug, Clone)]
pub struct NetPlan {
    pub sn_stem: BlockPlan,
    /// Encoder levels 1..=4, each a stack of blocks.
    pub sn_encoders: Vec<Vec<BlockPlan>>,
    pub sn_cfm: CfmPlan,
    /// Decoders in execution order: levels 4, 3, 2.
    pub sn_decoders: Vec<BlockPlan>,
    /// Heads in execution order: aux at S/4, aux at S/2, final at S.
    pub sn_heads: Vec<ConvPlan>,
    pub mrn_stem: BlockPlan,
    pub mrn_encoders: Vec<Vec<BlockPlan>>,
    /// Image side branch feeding attention keys/values.
    pub mrn_img: BlockPlan,
    pub mrn_ena_enc: AttnPlan,
    pub mrn_ena_dec: AttnPlan,
    /// Decoders in execution order: levels 4, 3, 2, 1.
    pub mrn_decoders: Vec<BlockPlan>,
    pub mrn_head: ConvPlan,
}

impl NetPlan {
    /// Every leaf layer of both branches, in forward-pass order.
    pub fn layers(&self) -> Vec<LayerDecl> {
        let mut out = Vec::new();
        out.extend(self.sn_stem.layers());
        for level in &self.sn_encoders {
            for b in level {
                out.extend(b.layers());
            }
        }
        out.extend(self.sn_cfm.layers());
        for b in &self.sn_decoders {
            out.extend(b.layers());
        }
        for h in &self.sn_heads {
            out.extend(h.layers());
        }
        out.extend(self.mrn_stem.layers());
        for level in &self.mrn_encoders {
            for b in level {
                out.extend(b.layers());
            }
        }
        out.extend(self.mrn_img.layers());
        out.extend(self.mrn_ena_enc.layers());
        out.extend(self.mrn_ena_dec.layers());
        for b in &self.mrn_decoders {
            out.extend(b.layers());
        }
        out.extend(self.mrn_head.layers());
        out
    }
}

/// Builds one encoder branch: a split stem from `stem_in` channels, then
/// four levels whose widths split evenly across frequencies. Levels 2..4
/// open with a split block and close with a merge block.
fn encoder_levels(
    prefix: &str,
    stem_in: usize,
    widths: &[usize; 4],
    blocks: &[usize; 4],
    alpha: f32,
    input_size: usize,
) -> Result<(BlockPlan, Vec<Vec<BlockPlan>>)> {
    let split = |w: usize| split_channels(w, alpha);
    let (h1, l1) = split(widths[0]);
    let stem = BlockPlan {
        name: format!("{}.stem", prefix),
        in_high: stem_in,
        in_low: 0,
        out_high: h1,
        out_low: l1,
        res: input_size,
    };
    stem.validate()?;
    let mut levels = Vec::with_capacity(4);
    // Level 1: general blocks at full resolution.
    let mut level1 = Vec::with_capacity(blocks[0]);
    for i in 0..blocks[0] {
        let b = BlockPlan {
            name: format!("{}.en1.block{}", prefix, i),
            in_high: h1,
            in_low: l1,
            out_high: h1,
            out_low: l1,
            res: input_size,
        };
        b.validate()?;
        level1.push(b);
    }
    levels.push(level1);
    // Levels 2..4: split, generals, merge; the input is the previous
    // level's single-scale output (level 1 contributes only its high part).
    let mut prev_single = h1;
    for lvl in 2..=4usize {
        let count = blocks[lvl - 1];
        if count < 2 {
            return Err(Error::Config(format!(
                "{} level {} needs at least 2 blocks (split and merge), got {}",
                prefix, lvl, count
            )));
        }
        let res = input_size >> (lvl - 1);
        let w = widths[lvl - 1];
        let (ch, cl) = split(w);
        let mut level = Vec::with_capacity(count);
        for i in 0..count {
            let (in_h, in_l, out_h, out_l) = if i == 0 {
                (prev_single, 0, ch, cl)
            } else if i == count - 1 {
                (ch, cl, w, 0)
            } else {
                (ch, cl, ch, cl)
            };
            let b = BlockPlan {
                name: format!("{}.en{}.block{}", prefix, lvl, i),
                in_high: in_h,
                in_low: in_l,
                out_high: out_h,
                out_low: out_l,
                res,
            };
            b.validate()?;
            level.push(b);
        }
        levels.push(level);
        prev_single = w;
    }
    Ok((stem, levels))
}

/// High-only decoder block mapping `in_c` to `out_c` at grid edge `res`.
fn decoder_block(name: String, in_c: usize, out_c: usize, res: usize) -> Result<BlockPlan> {
    let b = BlockPlan {
        name,
        in_high: in_c,
        in_low: 0,
        out_high: out_c,
        out_low: 0,
        res,
    };
    b.validate()?;
    Ok(b)
}

/// Output width of refinement decoder level `lvl` (4 down to 1): levels 4
/// and 3 emit the next-shallower level width; level 2 narrows to the
/// high half of level 1 (whose skip is the level-1 high feature), and
/// level 1 keeps that width.
fn mrn_decoder_out(widths: &[usize; 4], alpha: f32, lvl: usize) -> usize {
    match lvl {
        4 => widths[2],
        3 => widths[1],
        _ => split_channels(widths[0], alpha).0,
    }
}

/// Builds the complete plan for a validated configuration.
pub fn build_plan(cfg: &NetConfig) -> Result<NetPlan> {
    cfg.validate()?;
    let s = cfg.input_size;
    let (sn_stem, sn_encoders) =
        encoder_levels("sn", 3, &cfg.sn_widths, &cfg.sn_blocks, cfg.alpha_oct, s)?;
    let [w1, w2, w3, w4] = cfg.sn_widths;
    let _ = w1;
    let sn_cfm = CfmPlan {
        name: "sn.cfm".into(),
        shallow_c: w2,
        deep_c: w4,
        squeeze: (w4 / 4).max(1),
        out_res: s / 2,
    };
    let sn_decoders = vec![
        decoder_block("sn.de4.block0".into(), w4, w3, s / 8)?,
        decoder_block("sn.de3.block0".into(), w3, w2, s / 4)?,
        decoder_block("sn.de2.block0".into(), w2, w2, s / 2)?,
    ];
    let head = |name: &str, in_c: usize, out_c: usize, res: usize| ConvPlan {
        name: name.into(),
        out_c,
        in_c,
        k: 3,
        bias: true,
        res,
    };
    let sn_heads = vec![
        head("sn.head.aux3", w2, 3, s / 4),
        head("sn.head.aux2", w2, 3, s / 2),
        head("sn.head.final", w2, 3, s),
    ];

    let (mrn_stem, mrn_encoders) =
        encoder_levels("mrn", 6, &cfg.mrn_widths, &cfg.mrn_blocks, cfg.alpha_oct, s)?;
    let [m1, m2, m3, m4] = cfg.mrn_widths;
    let lvl = cfg.ena_level;
    let attn_res = s >> (lvl - 1);
    let enc_q = cfg.mrn_widths[lvl - 1];
    let dec_q = mrn_decoder_out(&cfg.mrn_widths, cfg.alpha_oct, lvl);
    let kv_c = m1;
    let mrn_img = BlockPlan {
        name: "mrn.img.block0".into(),
        in_high: 3,
        in_low: 0,
        out_high: kv_c,
        out_low: 0,
        res: attn_res,
    };
    mrn_img.validate()?;
    let attn = |name: &str, q_c: usize| -> Result<AttnPlan> {
        if q_c < 2 || q_c % 2 != 0 {
            return Err(Error::Config(format!(
                "{}: query width {} cannot halve into an embedding width",
                name, q_c
            )));
        }
        Ok(AttnPlan {
            name: name.into(),
            q_c,
            kv_c,
            embed: q_c / 2,
            k_groups: cfg.ena_k,
            res: attn_res,
        })
    };
    let mrn_ena_enc = attn("mrn.ena.enc", enc_q)?;
    let mrn_ena_dec = attn("mrn.ena.dec", dec_q)?;
    let mh1 = split_channels(m1, cfg.alpha_oct).0;
    let mrn_decoders = vec![
        decoder_block("mrn.de4.block0".into(), m4, m3, s / 8)?,
        decoder_block("mrn.de3.block0".into(), m3, m2, s / 4)?,
        decoder_block("mrn.de2.block0".into(), m2, mh1, s / 2)?,
        decoder_block("mrn.de1.block0".into(), mh1, mh1, s)?,
    ];
    let mrn_head = head("mrn.head", mh1, 1, s);
    Ok(NetPlan {
        sn_stem,
        sn_encoders,
        sn_cfm,
        sn_decoders,
        sn_heads,
        mrn_stem,
        mrn_encoders,
        mrn_img,
        mrn_ena_enc,
        mrn_ena_dec,
        mrn_decoders,
        mrn_head,
    })
}
