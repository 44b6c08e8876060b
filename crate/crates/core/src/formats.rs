//! On-disk formats: a little-endian binary tensor container (`TSR1`), a
//! named-tensor archive for whole parameter sets (`WTS1`), and 8-bit
//! binary PGM/PPM images mapped to and from unit-range tensors.
//!
//! Both binary formats are parsed from byte slices so every truncation
//! error can cite the expected and actual byte counts.

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;
use std::path::Path;

const TENSOR_MAGIC: &[u8; 4] = b"TSR1";
const PARAMS_MAGIC: &[u8; 4] = b"WTS1";
const MAX_RANK: usize = 4;

fn need<'a>(bytes: &'a [u8], pos: usize, len: usize, what: &str) -> Result<&'a [u8]> {
    if pos + len > bytes.len() {
        return Err(Error::Format(format!(
            "{} truncated: expected {} bytes at offset {}, got {}",
            what,
            len,
            pos,
            bytes.len().saturating_sub(pos)
        )));
    }
    Ok(&bytes[pos..pos + len])
}

fn read_u32(bytes: &[u8], pos: usize, what: &str) -> Result<u32> {
    let b = need(bytes, pos, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

/// Serializes a tensor: magic, rank (u32), dims (u32 each), f32 payload,
/// all little endian.
pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses one tensor starting at `pos`, returning it with the position
/// just past its payload.
fn decode_tensor_at(bytes: &[u8], pos: usize) -> Result<(Tensor, usize)> {
    let magic = need(bytes, pos, 4, "tensor magic")?;
    if magic != TENSOR_MAGIC {
        return Err(Error::Format(format!(
            "bad tensor magic {:?}, expected {:?}",
            magic, TENSOR_MAGIC
        )));
    }
    let rank = read_u32(bytes, pos + 4, "tensor rank")? as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Format(format!(
            "tensor rank {} outside 1..={}",
            rank, MAX_RANK
        )));
    }
    let mut dims = Vec::with_capacity(rank);
    let mut cursor = pos + 8;
    for i in 0..rank {
        let d = read_u32(bytes, cursor, &format!("tensor dim {}", i))? as usize;
        if d == 0 {
            return Err(Error::Format("tensor dims must be positive".into()));
        }
        dims.push(d);
        cursor += 4;
    }
    let count: usize = dims.iter().product();
    let payload = need(bytes, cursor, 4 * count, "tensor payload")?;
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((Tensor::new(dims, data)?, cursor + 4 * count))
}

/// Parses a standalone tensor, rejecting trailing bytes.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let (t, end) = decode_tensor_at(bytes, 0)?;
    if end != bytes.len() {
        return Err(Error::Format(format!(
            "trailing bytes after tensor: expected {} total, got {}",
            end,
            bytes.len()
        )));
    }
    Ok(t)
}

/// Serializes a parameter set: magic, entry count (u32), then per entry a
/// u16 name length, the UTF-8 name, and the embedded tensor record.
pub fn encode_params(params: &ParamSet) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(PARAMS_MAGIC);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params.iter() {
        let len = u16::try_from(name.len()).map_err(|_| {
            Error::Format(format!("parameter name {:?} exceeds 65535 bytes", name))
        })?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&encode_tensor(tensor));
    }
    Ok(out)
}

/// Parses a parameter set, preserving entry order and rejecting duplicate
/// names and trailing bytes.
pub fn decode_params(bytes: &[u8]) -> Result<ParamSet> {
    let magic = need(bytes, 0, 4, "archive magic")?;
    if magic != PARAMS_MAGIC {
        return Err(Error::Format(format!(
            "bad archive magic {:?}, expected {:?}",
            magic, PARAMS_MAGIC
        )));
    }
    let count = read_u32(bytes, 4, "entry count")?;
    let mut pos = 8;
    let mut params = ParamSet::new();
    for i in 0..count {
        let lb = need(bytes, pos, 2, &format!("entry {} name length", i))?;
        let name_len = u16::from_le_bytes([lb[0], lb[1]]) as usize;
        let name_bytes = need(bytes, pos + 2, name_len, &format!("entry {} name", i))?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::Format(format!("entry {} name is not UTF-8", i)))?
            .to_string();
        let (tensor, end) = decode_tensor_at(bytes, pos + 2 + name_len)?;
        params.insert(name, tensor)?;
        pos = end;
    }
    if pos != bytes.len() {
        return Err(Error::Format(format!(
            "trailing bytes after archive: expected {} total, got {}",
            pos,
            bytes.len()
        )));
    }
    Ok(params)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes)
        .map_err(|e| Error::Format(format!("cannot write {}: {}", path.display(), e)))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Format(format!("cannot read {}: {}", path.display(), e)))
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    write_file(path.as_ref(), &encode_tensor(t))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_tensor(&read_file(path.as_ref())?)
}

pub fn save_params(path: impl AsRef<Path>, params: &ParamSet) -> Result<()> {
    write_file(path.as_ref(), &encode_params(params)?)
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ParamSet> {
    decode_params(&read_file(path.as_ref())?)
}

fn pnm_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("unexpected end of image header".into()));
    }
    Ok(std::str::from_utf8(&bytes[start..*pos])
        .map_err(|_| Error::Format("image header is not ASCII".into()))?
        .to_string())
}

fn pnm_dim(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = pnm_token(bytes, pos)?;
    let v: usize = tok
        .parse()
        .map_err(|_| Error::Format(format!("bad image {}: {:?}", what, tok)))?;
    if v == 0 {
        return Err(Error::Format(format!("image {} must be positive", what)));
    }
    Ok(v)
}

/// Reads a binary PGM (P5) or PPM (P6) image with maxval 255 into a unit
/// range tensor: 1 x 1 x H x W for grayscale, 1 x 3 x H x W planar RGB.
pub fn decode_image(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0usize;
    let magic = pnm_token(bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => {
            return Err(Error::Format(format!(
                "unsupported image magic {:?}, expected P5 or P6",
                other
            )))
        }
    };
    let w = pnm_dim(bytes, &mut pos, "width")?;
    let h = pnm_dim(bytes, &mut pos, "height")?;
    let maxval = pnm_dim(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!(
            "only maxval 255 images are supported, got {}",
            maxval
        )));
    }
    pos += 1; // single whitespace byte separating header from payload
    let count = w * h * channels;
    let payload = need(bytes, pos, count, "image payload")?;
    let mut data = vec![0.0f32; count];
    for y in 0..h {
        for x in 0..w {
            for c in 0..channels {
                data[c * h * w + y * w + x] =
                    payload[(y * w + x) * channels + c] as f32 / 255.0;
            }
        }
    }
    Tensor::new(vec![1, channels, h, w], data)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_image(&read_file(path.as_ref())?)
}

fn byte_of(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes a 1 x C x H x W tensor (C = 1 or 3) as binary PGM or PPM, each
/// value scaled by 255, rounded half away from zero, and clamped.
pub fn encode_image(t: &Tensor) -> Result<Vec<u8>> {
    let (n, c, h, w) = t.dims4()?;
    if n != 1 || (c != 1 && c != 3) {
        return Err(Error::Shape(format!(
            "image tensor must be 1 x 1|3 x H x W, got {:?}",
            t.dims()
        )));
    }
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{}\n{} {}\n255\n", magic, w, h).into_bytes();
    let d = t.data();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.push(byte_of(d[ch * h * w + y * w + x]));
            }
        }
    }
    Ok(out)
}

pub fn save_image(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    write_file(path.as_ref(), &encode_image(t)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(seed: u64, dims: Vec<usize>) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = dims.iter().product();
        Tensor::new(dims, (0..len).map(|_| rng.gen_range(-4.0..4.0)).collect()).unwrap()
    }

    #[test]
    fn tensor_record_round_trips_every_rank() {
        for (seed, dims) in [
            (1, vec![7]),
            (2, vec![3, 4]),
            (3, vec![2, 3, 4]),
            (4, vec![2, 3, 2, 2]),
        ] {
            let t = random_tensor(seed, dims);
            let back = decode_tensor(&encode_tensor(&t)).unwrap();
            assert_eq!(back.dims(), t.dims());
            assert_eq!(back.data(), t.data());
        }
    }

    #[test]
    fn tensor_record_preserves_edge_values_bitwise() {
        // Negative zero, subnormals, and the extremes of the finite range
        // must survive with their exact bit patterns.
        let t = Tensor::new(
            vec![5],
            vec![-0.0, f32::MIN_POSITIVE, f32::MAX, f32::MIN, 1e-40],
        )
        .unwrap();
        let back = decode_tensor(&encode_tensor(&t)).unwrap();
        for (a, b) in t.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn tensor_decode_rejects_bad_headers() {
        let good = encode_tensor(&random_tensor(5, vec![2, 2]));
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(decode_tensor(&bad_magic).is_err());
        let mut bad_rank = good.clone();
        bad_rank[4..8].copy_from_slice(&5u32.to_le_bytes());
        assert!(decode_tensor(&bad_rank).is_err());
        let mut trailing = good.clone();
        trailing.push(0);
        assert!(decode_tensor(&trailing).is_err());
    }

    #[test]
    fn truncation_errors_cite_expected_and_actual_counts() {
        let good = encode_tensor(&random_tensor(6, vec![2, 2]));
        let err = decode_tensor(&good[..good.len() - 4]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 16 bytes"), "message: {}", msg);
        assert!(msg.contains("got 12"), "message: {}", msg);
    }

    #[test]
    fn parameter_archive_round_trips_in_order() {
        let mut params = ParamSet::new();
        params.insert("b.weight", random_tensor(7, vec![2, 3])).unwrap();
        params.insert("a.bias", random_tensor(8, vec![4])).unwrap();
        let bytes = encode_params(&params).unwrap();
        let back = decode_params(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        let names: Vec<&str> = back.iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["b.weight", "a.bias"]);
        for (name, t) in params.iter() {
            assert_eq!(back.get(name).unwrap().data(), t.data());
        }
    }

    #[test]
    fn parameter_archive_rejects_duplicates_and_trailing_bytes() {
        let mut one = ParamSet::new();
        one.insert("w", random_tensor(9, vec![2])).unwrap();
        let single = encode_params(&one).unwrap();
        // Splice the same entry twice under a doubled count.
        let mut doubled = Vec::new();
        doubled.extend_from_slice(PARAMS_MAGIC);
        doubled.extend_from_slice(&2u32.to_le_bytes());
        doubled.extend_from_slice(&single[8..]);
        doubled.extend_from_slice(&single[8..]);
        assert!(decode_params(&doubled).is_err());
        let mut trailing = single.clone();
        trailing.push(7);
        assert!(decode_params(&trailing).is_err());
    }

    #[test]
    fn grayscale_image_round_trips_every_byte_value() {
        let mut bytes = Vec::from(*b"P5\n16 16\n255\n");
        bytes.extend((0..=255u8).collect::<Vec<u8>>());
        let t = decode_image(&bytes).unwrap();
        assert_eq!(t.dims(), &[1, 1, 16, 16]);
        assert_eq!(t.data()[128], 128.0 / 255.0);
        let back = encode_image(&t).unwrap();
        assert_eq!(back, bytes);
    }

    #[test]
    fn color_image_round_trips_and_is_planar() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut bytes = Vec::from(*b"P6\n4 2\n255\n");
        let pixels: Vec<u8> = (0..24).map(|_| rng.gen()).collect();
        bytes.extend_from_slice(&pixels);
        let t = decode_image(&bytes).unwrap();
        assert_eq!(t.dims(), &[1, 3, 2, 4]);
        // First pixel's green sample lands in the second plane.
        assert_eq!(t.data()[8], pixels[1] as f32 / 255.0);
        assert_eq!(encode_image(&t).unwrap(), bytes);
    }

    #[test]
    fn image_header_comments_and_whitespace_are_skipped() {
        let bytes = b"P5 # a comment\n# another\n 2\t2 \n255\n\x00\x40\x80\xff";
        let t = decode_image(bytes).unwrap();
        assert_eq!(t.dims(), &[1, 1, 2, 2]);
        assert_eq!(t.data()[3], 1.0);
    }

    #[test]
    fn image_decoding_rejects_bad_inputs() {
        assert!(decode_image(b"P4\n2 2\n255\n\x00\x00\x00\x00").is_err());
        assert!(decode_image(b"P5\n2 2\n65535\n\x00\x00\x00\x00").is_err());
        let err = decode_image(b"P5\n4 4\n255\n\x00\x00").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 16 bytes"), "message: {}", msg);
    }

    #[test]
    fn image_encoding_rounds_half_away_and_clamps() {
        let t = Tensor::new(vec![1, 1, 1, 4], vec![0.5, -0.2, 1.7, 0.0]).unwrap();
        let bytes = encode_image(&t).unwrap();
        let payload = &bytes[bytes.len() - 4..];
        assert_eq!(payload, &[128, 0, 255, 0]);
        let rgb = Tensor::zeros(vec![2, 3, 1, 1]).unwrap();
        assert!(encode_image(&rgb).is_err());
    }
}
