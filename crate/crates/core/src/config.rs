//! Network configuration: channel widths, block counts, attention
//! placement, and the initialization seed, plus a line-based config-file
//! parser (`key = value`, `#` comments).

use crate::error::{Error, Result};
use std::collections::BTreeSet;
use std::path::Path;

/// Declarative description of the two-stage network.
///
/// Block counts are architectural constants rather than file-configurable
/// knobs: the segmentation branch stacks [3, 4, 6, 4] blocks over its four
/// encoder levels, the refinement branch [2, 2, 2, 2], and every decoder
/// level uses a single block.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    /// Square input edge length; must be divisible by 16 (four pooling
    /// stages plus the half-resolution low-frequency branch).
    pub input_size: usize,
    /// Channel widths of the four segmentation-branch levels.
    pub sn_widths: [usize; 4],
    /// Channel widths of the four refinement-branch levels.
    pub mrn_widths: [usize; 4],
    /// Blocks per segmentation encoder level.
    pub sn_blocks: [usize; 4],
    /// Blocks per refinement encoder level.
    pub mrn_blocks: [usize; 4],
    /// Low-frequency channel fraction inside octave blocks.
    pub alpha_oct: f32,
    /// Attention group count k (perfect square).
    pub ena_k: usize,
    /// Encoder/decoder level (2, 3, or 4) that carries the attention pair.
    pub ena_level: usize,
    /// Seed for deterministic parameter initialization.
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            input_size: 512,
            sn_widths: [24, 40, 56, 80],
            mrn_widths: [24, 40, 56, 80],
            sn_blocks: [3, 4, 6, 4],
            mrn_blocks: [2, 2, 2, 2],
            alpha_oct: 0.5,
            ena_k: 16,
            ena_level: 3,
            seed: 0,
        }
    }
}

fn int_sqrt(n: usize) -> usize {
    let mut r = (n as f64).sqrt() as usize;
    while r > 0 && r * r > n {
        r -= 1;
    }
    while (r + 1).checked_mul(r + 1).map_or(false, |s| s <= n) {
        r += 1;
    }
    r
}

impl NetConfig {
    /// Checks every structural constraint the builders rely on.
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % 16 != 0 {
            return Err(Error::Config(format!(
                "input_size must be a positive multiple of 16, got {}",
                self.input_size
            )));
        }
        for (name, widths) in [("sn_widths", &self.sn_widths), ("mrn_widths", &self.mrn_widths)] {
            for &w in widths.iter() {
                if w == 0 || w % 2 != 0 {
                    return Err(Error::Config(format!(
                        "{} entries must be positive and even for the equal \
                         high/low frequency split, got {:?}",
                        name, widths
                    )));
                }
            }
        }
        for (name, blocks) in [("sn_blocks", &self.sn_blocks), ("mrn_blocks", &self.mrn_blocks)] {
            if blocks.iter().any(|&b| b == 0) {
                return Err(Error::Config(format!(
                    "{} entries must be positive, got {:?}",
                    name, blocks
                )));
            }
        }
        if !self.alpha_oct.is_finite() || !(0.0..=1.0).contains(&self.alpha_oct) {
            return Err(Error::Config(format!(
                "alpha_oct must lie in [0, 1], got {}",
                self.alpha_oct
            )));
        }
        if !(2..=4).contains(&self.ena_level) {
            return Err(Error::Config(format!(
                "ena_level must be 2, 3, or 4, got {}",
                self.ena_level
            )));
        }
        let r = int_sqrt(self.ena_k);
        if self.ena_k == 0 || r * r != self.ena_k {
            return Err(Error::Config(format!(
                "ena_k must be a positive perfect square, got {}",
                self.ena_k
            )));
        }
        let res = self.level_resolution(self.ena_level);
        if res % r != 0 {
            return Err(Error::Config(format!(
                "sqrt(ena_k) = {} must divide the level-{} feature edge {} \
                 (input_size {} over {} halvings)",
                r,
                self.ena_level,
                res,
                self.input_size,
                self.ena_level - 1
            )));
        }
        Ok(())
    }

    /// Spatial edge length of level `level` features (level 1 runs at full
    /// input resolution; each deeper level halves it).
    pub fn level_resolution(&self, level: usize) -> usize {
        self.input_size >> (level - 1)
    }
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value.parse().map_err(|_| {
        Error::Config(format!("{}: expected a non-negative integer, got `{}`", key, value))
    })
}

fn parse_widths(key: &str, value: &str) -> Result<[usize; 4]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(Error::Config(format!(
            "{}: expected 4 comma-separated widths, got {} in `{}`",
            key,
            parts.len(),
            value
        )));
    }
    let mut out = [0usize; 4];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = parse_usize(key, part)?;
    }
    Ok(out)
}

/// Parses the line-based config format: one `key = value` per line, `#`
/// starts a comment, blank lines ignored. Recognized keys: input_size,
/// sn_widths, mrn_widths, alpha_oct, ena_k, ena_level, seed. Unknown and
/// duplicate keys are errors; missing keys keep their defaults.
pub fn parse_config(text: &str) -> Result<NetConfig> {
    let mut cfg = NetConfig::default();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`, got `{}`", lineno, line))
        })?;
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(Error::Config(format!("line {}: duplicate key `{}`", lineno, key)));
        }
        match key {
            "input_size" => cfg.input_size = parse_usize(key, value)?,
            "sn_widths" => cfg.sn_widths = parse_widths(key, value)?,
            "mrn_widths" => cfg.mrn_widths = parse_widths(key, value)?,
            "alpha_oct" => {
                cfg.alpha_oct = value.parse().map_err(|_| {
                    Error::Config(format!("alpha_oct: expected a real number, got `{}`", value))
                })?
            }
            "ena_k" => cfg.ena_k = parse_usize(key, value)?,
            "ena_level" => cfg.ena_level = parse_usize(key, value)?,
            "seed" => {
                cfg.seed = value.parse().map_err(|_| {
                    Error::Config(format!("seed: expected an unsigned integer, got `{}`", value))
                })?
            }
            other => {
                return Err(Error::Config(format!("line {}: unknown key `{}`", lineno, other)))
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and parses a config file.
pub fn read_config(path: &Path) -> Result<NetConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {}", path.display(), e)))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        NetConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_all_keys_with_comments() {
        let text = "\
# full override
input_size = 64
sn_widths = 8, 8, 8, 8   # tiny
mrn_widths = 8,8,8,8
alpha_oct = 0.5
ena_k = 4
ena_level = 2
seed = 42
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.input_size, 64);
        assert_eq!(cfg.sn_widths, [8, 8, 8, 8]);
        assert_eq!(cfg.mrn_widths, [8, 8, 8, 8]);
        assert_eq!(cfg.alpha_oct, 0.5);
        assert_eq!(cfg.ena_k, 4);
        assert_eq!(cfg.ena_level, 2);
        assert_eq!(cfg.seed, 42);
        // Block counts are not file-configurable.
        assert_eq!(cfg.sn_blocks, [3, 4, 6, 4]);
        assert_eq!(cfg.mrn_blocks, [2, 2, 2, 2]);
    }

    #[test]
    fn missing_keys_keep_defaults() {
        let cfg = parse_config("input_size = 128\n").unwrap();
        let dflt = NetConfig::default();
        assert_eq!(cfg.input_size, 128);
        assert_eq!(cfg.sn_widths, dflt.sn_widths);
        assert_eq!(cfg.seed, dflt.seed);
    }

    #[test]
    fn unknown_and_duplicate_keys_are_errors() {
        assert!(parse_config("batch = 4\n").is_err());
        assert!(parse_config("seed = 1\nseed = 2\n").is_err());
        assert!(parse_config("just some words\n").is_err());
    }

    #[test]
    fn width_list_arity_is_checked() {
        assert!(parse_config("sn_widths = 8,8,8\n").is_err());
        assert!(parse_config("sn_widths = 8,8,8,8,8\n").is_err());
        assert!(parse_config("sn_widths = 8,eight,8,8\n").is_err());
    }

    #[test]
    fn validation_rejects_structural_violations() {
        let mut cfg = NetConfig::default();
        cfg.input_size = 100;
        assert!(cfg.validate().is_err(), "not a multiple of 16");

        let mut cfg = NetConfig::default();
        cfg.sn_widths = [7, 8, 8, 8];
        assert!(cfg.validate().is_err(), "odd width");

        let mut cfg = NetConfig::default();
        cfg.ena_level = 5;
        assert!(cfg.validate().is_err(), "level out of range");

        let mut cfg = NetConfig::default();
        cfg.ena_k = 12;
        assert!(cfg.validate().is_err(), "not a perfect square");

        let mut cfg = NetConfig::default();
        cfg.alpha_oct = 1.5;
        assert!(cfg.validate().is_err(), "alpha out of range");

        // sqrt(k) must divide the attention level's feature edge.
        let mut cfg = NetConfig::default();
        cfg.input_size = 48;
        cfg.ena_k = 25;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn level_resolution_halves_per_level() {
        let cfg = NetConfig::default();
        assert_eq!(cfg.level_resolution(1), 512);
        assert_eq!(cfg.level_resolution(2), 256);
        assert_eq!(cfg.level_resolution(3), 128);
        assert_eq!(cfg.level_resolution(4), 64);
    }
}
