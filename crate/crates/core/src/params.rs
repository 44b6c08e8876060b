//! Named parameter storage and deterministic initialization.
//!
//! Every tensor is keyed by a hierarchical name from the network plan.
//! Initialization derives an independent stream cipher seed from the run
//! seed and the tensor name, so a given (seed, name) pair always produces
//! the same values no matter how many other tensors exist or in what order
//! they are built.

use indexmap::IndexMap;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{build_plan, LayerDecl, LayerKind, NetPlan};
use crate::config::NetConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered map of named parameter tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: IndexMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor under a fresh name; a second insert under the same
    /// name is an error rather than a silent overwrite.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{}`", name)));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    /// Replaces an existing tensor, keeping its shape.
    pub fn replace(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        match self.entries.get_mut(name) {
            None => Err(Error::MissingParam(name.to_string())),
            Some(slot) => {
                if slot.dims() != tensor.dims() {
                    return Err(Error::Shape(format!(
                        "replacement for `{}` has dims {:?}, expected {:?}",
                        name,
                        tensor.dims(),
                        slot.dims()
                    )));
                }
                *slot = tensor;
                Ok(())
            }
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values across all tensors.
    pub fn total_len(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn tensor_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ fnv1a64(name)))
}

/// Uniform weights in +-1/sqrt(fan_in), drawn from the tensor's own stream.
fn uniform_weight(seed: u64, name: &str, dims: Vec<usize>, fan_in: usize) -> Result<Tensor> {
    debug_assert!(fan_in > 0);
    let bound = 1.0 / (fan_in as f32).sqrt();
    let len = dims.iter().product();
    let mut rng = tensor_rng(seed, name);
    let data: Vec<f32> = (0..len).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(dims, data)
}

fn push_conv(
    set: &mut ParamSet,
    seed: u64,
    base: &str,
    out_c: usize,
    in_c: usize,
    k: usize,
    bias: bool,
    depthwise: bool,
) -> Result<()> {
    let name = format!("{}.weight", base);
    let (dims, fan_in) = if depthwise {
        (vec![out_c, 1, k, k], k * k)
    } else {
        (vec![out_c, in_c, k, k], in_c * k * k)
    };
    let w = uniform_weight(seed, &name, dims, fan_in)?;
    set.insert(name, w)?;
    if bias {
        set.insert(format!("{}.bias", base), Tensor::zeros(vec![out_c])?)?;
    }
    Ok(())
}

fn push_bn(set: &mut ParamSet, base: &str, c: usize) -> Result<()> {
    set.insert(format!("{}.gamma", base), Tensor::filled(vec![c], 1.0)?)?;
    set.insert(format!("{}.beta", base), Tensor::zeros(vec![c])?)?;
    set.insert(format!("{}.mean", base), Tensor::zeros(vec![c])?)?;
    set.insert(format!("{}.var", base), Tensor::filled(vec![c], 1.0)?)?;
    Ok(())
}

fn push_attn(
    set: &mut ParamSet,
    seed: u64,
    base: &str,
    q_c: usize,
    kv_c: usize,
    embed: usize,
) -> Result<()> {
    let proj = |set: &mut ParamSet, suffix: &str, out_c: usize, in_c: usize| -> Result<()> {
        let name = format!("{}.{}", base, suffix);
        let w = uniform_weight(seed, &name, vec![out_c, in_c, 1, 1], in_c)?;
        set.insert(name, w)
    };
    proj(set, "wq", embed, q_c)?;
    proj(set, "wk", embed, kv_c)?;
    proj(set, "wv", embed, kv_c)?;
    proj(set, "wout", q_c, embed)?;
    Ok(())
}

/// Materializes every parameter tensor a plan declares.
pub fn init_params(plan: &NetPlan, seed: u64) -> Result<ParamSet> {
    let mut set = ParamSet::new();
    for LayerDecl { name, kind } in plan.layers() {
        match kind {
            LayerKind::Conv {
                out_c,
                in_c,
                k,
                bias,
                depthwise,
                ..
            } => push_conv(&mut set, seed, &name, out_c, in_c, k, bias, depthwise)?,
            LayerKind::Bn { c, .. } => push_bn(&mut set, &name, c)?,
            LayerKind::Attn {
                q_c, kv_c, embed, ..
            } => push_attn(&mut set, seed, &name, q_c, kv_c, embed)?,
        }
    }
    Ok(set)
}

/// Builds the plan for `cfg` and initializes its parameters from `seed`.
pub fn build_params(cfg: &NetConfig, seed: u64) -> Result<ParamSet> {
    let plan = build_plan(cfg)?;
    init_params(&plan, seed)
}

/// Verifies that every tensor the plan's forward graph will ask for is
/// present with exactly the shape the plan implies.
pub fn check_params(plan: &NetPlan, params: &ParamSet) -> Result<()> {
    let want = |name: &str, dims: &[usize]| -> Result<()> {
        let t = params.get(name)?;
        if t.dims() != dims {
            return Err(Error::Shape(format!(
                "parameter `{}` has dims {:?}, expected {:?}",
                name,
                t.dims(),
                dims
            )));
        }
        Ok(())
    };
    for LayerDecl { name, kind } in plan.layers() {
        match kind {
            LayerKind::Conv {
                out_c,
                in_c,
                k,
                bias,
                depthwise,
                ..
            } => {
                let ic = if depthwise { 1 } else { in_c };
                want(&format!("{}.weight", name), &[out_c, ic, k, k])?;
                if bias {
                    want(&format!("{}.bias", name), &[out_c])?;
                }
            }
            LayerKind::Bn { c, .. } => {
                for suffix in ["gamma", "beta", "mean", "var"] {
                    want(&format!("{}.{}", name, suffix), &[c])?;
                }
            }
            LayerKind::Attn {
                q_c, kv_c, embed, ..
            } => {
                want(&format!("{}.wq", name), &[embed, q_c, 1, 1])?;
                want(&format!("{}.wk", name), &[embed, kv_c, 1, 1])?;
                want(&format!("{}.wv", name), &[embed, kv_c, 1, 1])?;
                want(&format!("{}.wout", name), &[q_c, embed, 1, 1])?;
            }
        }
    }
    Ok(())
}
