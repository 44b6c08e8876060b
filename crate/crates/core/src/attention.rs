//! Dense non-local attention and its efficient two-stage replacement:
//! long-range attention over strided site subsets followed by short-range
//! attention within contiguous spatial blocks.
//!
//! Sites of an H x W feature are indexed row-major. For a group count k
//! (a perfect square whose root divides both extents), the long-range stage
//! partitions sites by their coordinates modulo sqrt(k) and the short-range
//! stage partitions them into sqrt(k) x sqrt(k) tiles.

use crate::error::{Error, Result};
use crate::tensor::{concat_batch, conv2d, matmul, matmul_nt, slice_batch, softmax_rows, Tensor};

/// Largest integer r with r*r <= n.
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

/// Checks the group-count geometry: k is a positive perfect square whose
/// root divides both spatial extents. Returns sqrt(k).
fn check_groups(k: usize, h: usize, w: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::InvalidArgument("group count k must be positive".into()));
    }
    let r = int_sqrt(k);
    if r * r != k {
        return Err(Error::InvalidArgument(format!(
            "group count k = {} is not a perfect square",
            k
        )));
    }
    if h % r != 0 || w % r != 0 {
        return Err(Error::InvalidArgument(format!(
            "sqrt(k) = {} must divide both spatial extents {}x{}",
            r, h, w
        )));
    }
    Ok(r)
}

/// Flattens (1, C, H, W) into a (H*W, C) site matrix, row-major over sites.
#[cfg(test)]
fn to_sites(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if n != 1 {
        return Err(Error::InvalidArgument(format!(
            "site flattening expects a single batch element, got {}",
            n
        )));
    }
    let sites = h * w;
    let mut data = vec![0.0f32; sites * c];
    for ch in 0..c {
        for s in 0..sites {
            data[s * c + ch] = x.data()[ch * sites + s];
        }
    }
    Ok(Tensor::from_parts(vec![sites, c], data))
}

/// Dense non-local attention over flattened site matrices: each output row
/// is softmax(q_i . k_j)-weighted sum of value rows, a convex combination.
pub fn nonlocal_dense(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (nq, _) = q.dims2()?;
    let (nk, _) = k.dims2()?;
    let (nv, _) = v.dims2()?;
    if nk != nv {
        return Err(Error::Shape(format!(
            "nonlocal_dense: key rows {:?} and value rows {:?} differ",
            k.dims(),
            v.dims()
        )));
    }
    let _ = nq;
    let scores = matmul_nt(q, k)?;
    let probs = softmax_rows(&scores)?;
    matmul(&probs, v)
}

/// Multiplies a query feature by a single-channel gate, broadcast across
/// channels. Sites where the gate is zero carry zero query and therefore
/// receive uniform attention weights downstream. Gate values are expected
/// in [0, 1].
pub fn mask_query(x_q: &Tensor, u: &Tensor) -> Result<Tensor> {
    let (n, _, h, w) = x_q.dims4()?;
    let (un, uc, uh, uw) = u.dims4()?;
    if uc != 1 || (un, uh, uw) != (n, h, w) {
        return Err(Error::Shape(format!(
            "mask_query: gate {:?} does not match feature {:?} (want ({}, 1, {}, {}))",
            u.dims(),
            x_q.dims(),
            n,
            h,
            w
        )));
    }
    x_q.mul(u)
}

/// Splits the sites of a (1, C, H, W) tensor into k strided subsets.
///
/// Subset (a, b) with a, b in [0, sqrt(k)) collects the sites whose
/// coordinates satisfy y = a and x = b modulo sqrt(k), ordered row-major by
/// (y / sqrt(k), x / sqrt(k)). Subsets are returned as (n/k, C) matrices in
/// row-major (a, b) order; together they permute the full site list.
pub fn sample_partition(x: &Tensor, k: usize) -> Result<Vec<Tensor>> {
    let (n, c, h, w) = x.dims4()?;
    if n != 1 {
        return Err(Error::InvalidArgument(format!(
            "sample_partition expects a single batch element, got {}",
            n
        )));
    }
    let r = check_groups(k, h, w)?;
    let (gh, gw) = (h / r, w / r);
    let mut subsets = Vec::with_capacity(k);
    for a in 0..r {
        for b in 0..r {
            let mut data = vec![0.0f32; gh * gw * c];
            for gy in 0..gh {
                for gx in 0..gw {
                    let (y, xx) = (a + r * gy, b + r * gx);
                    let row = (gy * gw + gx) * c;
                    for ch in 0..c {
                        data[row + ch] = x.data()[(ch * h + y) * w + xx];
                    }
                }
            }
            subsets.push(Tensor::from_parts(vec![gh * gw, c], data));
        }
    }
    Ok(subsets)
}

/// Exact inverse of [`sample_partition`]: reassembles k subset matrices
/// into a (1, C, H, W) tensor, bit for bit.
pub fn merge_partition(subsets: &[Tensor], k: usize, h: usize, w: usize) -> Result<Tensor> {
    let r = check_groups(k, h, w)?;
    if subsets.len() != k {
        return Err(Error::Shape(format!(
            "merge_partition: got {} subsets for k = {}",
            subsets.len(),
            k
        )));
    }
    let (gh, gw) = (h / r, w / r);
    let (rows0, c) = subsets[0].dims2()?;
    if rows0 != gh * gw {
        return Err(Error::Shape(format!(
            "merge_partition: subsets hold {} rows, expected {}",
            rows0,
            gh * gw
        )));
    }
    for s in subsets {
        if s.dims() != [gh * gw, c] {
            return Err(Error::Shape(format!(
                "merge_partition: subset shape {:?} differs from {:?}",
                s.dims(),
                [gh * gw, c]
            )));
        }
    }
    let mut data = vec![0.0f32; c * h * w];
    for a in 0..r {
        for b in 0..r {
            let sub = &subsets[a * r + b];
            for gy in 0..gh {
                for gx in 0..gw {
                    let (y, xx) = (a + r * gy, b + r * gx);
                    let row = (gy * gw + gx) * c;
                    for ch in 0..c {
                        data[(ch * h + y) * w + xx] = sub.data()[row + ch];
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![1, c, h, w], data))
}

/// Splits sites into contiguous sqrt(k) x sqrt(k) tiles (n/k of them, each
/// holding k sites row-major within the tile), tiles ordered row-major.
fn block_partition(x: &Tensor, k: usize) -> Result<Vec<Tensor>> {
    let (n, c, h, w) = x.dims4()?;
    if n != 1 {
        return Err(Error::InvalidArgument(format!(
            "block_partition expects a single batch element, got {}",
            n
        )));
    }
    let r = check_groups(k, h, w)?;
    let (bh, bw) = (h / r, w / r);
    let mut blocks = Vec::with_capacity(bh * bw);
    for by in 0..bh {
        for bx in 0..bw {
            let mut data = vec![0.0f32; k * c];
            for dy in 0..r {
                for dx in 0..r {
                    let (y, xx) = (by * r + dy, bx * r + dx);
                    let row = (dy * r + dx) * c;
                    for ch in 0..c {
                        data[row + ch] = x.data()[(ch * h + y) * w + xx];
                    }
                }
            }
            blocks.push(Tensor::from_parts(vec![k, c], data));
        }
    }
    Ok(blocks)
}

/// Inverse of [`block_partition`].
fn block_merge(blocks: &[Tensor], k: usize, h: usize, w: usize) -> Result<Tensor> {
    let r = check_groups(k, h, w)?;
    let (bh, bw) = (h / r, w / r);
    if blocks.len() != bh * bw {
        return Err(Error::Shape(format!(
            "block_merge: got {} blocks, expected {}",
            blocks.len(),
            bh * bw
        )));
    }
    let (_, c) = blocks[0].dims2()?;
    let mut data = vec![0.0f32; c * h * w];
    for by in 0..bh {
        for bx in 0..bw {
            let block = &blocks[by * bw + bx];
            if block.dims() != [k, c] {
                return Err(Error::Shape(format!(
                    "block_merge: block shape {:?} differs from {:?}",
                    block.dims(),
                    [k, c]
                )));
            }
            for dy in 0..r {
                for dx in 0..r {
                    let (y, xx) = (by * r + dy, bx * r + dx);
                    let row = (dy * r + dx) * c;
                    for ch in 0..c {
                        data[(ch * h + y) * w + xx] = block.data()[row + ch];
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![1, c, h, w], data))
}

fn check_attention_inputs(x_q: &Tensor, x_k: &Tensor, x_v: &Tensor) -> Result<()> {
    let (qn, _, qh, qw) = x_q.dims4()?;
    let (kn, kc, kh, kw) = x_k.dims4()?;
    let (vn, _, vh, vw) = x_v.dims4()?;
    let (_, qc, _, _) = x_q.dims4()?;
    if (kn, kh, kw) != (qn, qh, qw) || (vn, vh, vw) != (qn, qh, qw) {
        return Err(Error::Shape(format!(
            "attention inputs disagree: q {:?}, k {:?}, v {:?}",
            x_q.dims(),
            x_k.dims(),
            x_v.dims()
        )));
    }
    if kc != qc {
        return Err(Error::Shape(format!(
            "query {:?} and key {:?} must share channels",
            x_q.dims(),
            x_k.dims()
        )));
    }
    Ok(())
}

/// Long-range stage: dense attention independently inside each of the k
/// strided site subsets, then merged back into feature layout. Batch
/// elements are processed independently.
pub fn longrange_attention(x_q: &Tensor, x_k: &Tensor, x_v: &Tensor, k: usize) -> Result<Tensor> {
    check_attention_inputs(x_q, x_k, x_v)?;
    let (n, _, h, w) = x_q.dims4()?;
    let mut outs = Vec::with_capacity(n);
    for b in 0..n {
        let qs = sample_partition(&slice_batch(x_q, b)?, k)?;
        let ks = sample_partition(&slice_batch(x_k, b)?, k)?;
        let vs = sample_partition(&slice_batch(x_v, b)?, k)?;
        let mut merged = Vec::with_capacity(k);
        for s in 0..k {
            merged.push(nonlocal_dense(&qs[s], &ks[s], &vs[s])?);
        }
        outs.push(merge_partition(&merged, k, h, w)?);
    }
    concat_batch(&outs.iter().collect::<Vec<_>>())
}

/// Short-range stage: dense attention inside each contiguous
/// sqrt(k) x sqrt(k) tile, with query rows taken from the long-range output
/// and key/value rows from the original projections.
pub fn shortrange_attention(a_g: &Tensor, x_k: &Tensor, x_v: &Tensor, k: usize) -> Result<Tensor> {
    check_attention_inputs(a_g, x_k, x_v)?;
    let (n, _, h, w) = a_g.dims4()?;
    let mut outs = Vec::with_capacity(n);
    for b in 0..n {
        let qs = block_partition(&slice_batch(a_g, b)?, k)?;
        let ks = block_partition(&slice_batch(x_k, b)?, k)?;
        let vs = block_partition(&slice_batch(x_v, b)?, k)?;
        let mut merged = Vec::with_capacity(qs.len());
        for s in 0..qs.len() {
            merged.push(nonlocal_dense(&qs[s], &ks[s], &vs[s])?);
        }
        outs.push(block_merge(&merged, k, h, w)?);
    }
    concat_batch(&outs.iter().collect::<Vec<_>>())
}

/// Configuration of one attention module: group count, embedding width,
/// and the four 1x1 projection kernels. `wq` reads the query-side feature,
/// `wk`/`wv` read the key/value-side feature, and `wout` maps the attended
/// result back to the query-side width for the residual sum.
#[derive(Debug, Clone)]
pub struct EnaConfig {
    pub k_groups: usize,
    pub embed_channels: usize,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wout: Tensor,
}

impl EnaConfig {
    fn validate(&self, c_q: usize, c_kv: usize) -> Result<()> {
        let want = |t: &Tensor, oc: usize, ic: usize, name: &str| -> Result<()> {
            if t.dims() != [oc, ic, 1, 1] {
                return Err(Error::Shape(format!(
                    "{} projection is {:?}, expected ({}, {}, 1, 1)",
                    name,
                    t.dims(),
                    oc,
                    ic
                )));
            }
            Ok(())
        };
        let e = self.embed_channels;
        if e == 0 {
            return Err(Error::InvalidArgument("embed_channels must be positive".into()));
        }
        want(&self.wq, e, c_q, "query")?;
        want(&self.wk, e, c_kv, "key")?;
        want(&self.wv, e, c_kv, "value")?;
        want(&self.wout, c_q, e, "output")?;
        Ok(())
    }
}

/// Full attention module over a query-side feature and a key/value-side
/// feature of the same spatial extents:
/// 1x1-project q/k/v to the embedding width, optionally gate the query,
/// run the long-range then short-range stages, project back, and add the
/// result to the query-side feature.
pub fn ena(
    x_q: &Tensor,
    x_k: &Tensor,
    x_v: &Tensor,
    u: Option<&Tensor>,
    config: &EnaConfig,
) -> Result<Tensor> {
    let (_, c_q, h, w) = x_q.dims4()?;
    let (_, c_kv, _, _) = x_k.dims4()?;
    config.validate(c_q, c_kv)?;
    check_groups(config.k_groups, h, w)?;
    let mut q = conv2d(x_q, &config.wq, None, 0)?;
    if let Some(u) = u {
        q = mask_query(&q, u)?;
    }
    let k = conv2d(x_k, &config.wk, None, 0)?;
    let v = conv2d(x_v, &config.wv, None, 0)?;
    let a_g = longrange_attention(&q, &k, &v, config.k_groups)?;
    let a_l = shortrange_attention(&a_g, &k, &v, config.k_groups)?;
    let back = conv2d(&a_l, &config.wout, None, 0)?;
    x_q.add(&back)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng_tensor(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
        let n: usize = dims.iter().product();
        let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(dims.to_vec(), data).unwrap()
    }

    #[test]
    fn dense_single_site_returns_value() {
        let q = Tensor::new(vec![1, 3], vec![0.3, -0.1, 2.0]).unwrap();
        let k = Tensor::new(vec![1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        let v = Tensor::new(vec![1, 2], vec![5.0, -7.0]).unwrap();
        let a = nonlocal_dense(&q, &k, &v).unwrap();
        assert_eq!(a.data(), v.data());
    }

    #[test]
    fn dense_zero_query_averages_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 8;
        let q = Tensor::zeros(vec![n, 4]).unwrap();
        let k = rng_tensor(&mut rng, &[n, 4]);
        let v = rng_tensor(&mut rng, &[n, 3]);
        let a = nonlocal_dense(&q, &k, &v).unwrap();
        for c in 0..3 {
            let mean: f32 = (0..n).map(|r| v.data()[r * 3 + c]).sum::<f32>() / n as f32;
            for r in 0..n {
                assert!((a.data()[r * 3 + c] - mean).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dense_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (n, cq, cv) = (16, 4, 4);
        let q = rng_tensor(&mut rng, &[n, cq]);
        let k = rng_tensor(&mut rng, &[n, cq]);
        let v = rng_tensor(&mut rng, &[n, cv]);
        let a = nonlocal_dense(&q, &k, &v).unwrap();
        for i in 0..n {
            // Oracle: explicit exponential weights normalized per row.
            let logits: Vec<f64> = (0..n)
                .map(|j| {
                    (0..cq)
                        .map(|c| q.data()[i * cq + c] as f64 * k.data()[j * cq + c] as f64)
                        .sum()
                })
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ws: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = ws.iter().sum();
            for c in 0..cv {
                let want: f64 = (0..n)
                    .map(|j| ws[j] / z * v.data()[j * cv + c] as f64)
                    .sum();
                let got = a.data()[i * cv + c] as f64;
                assert!((got - want).abs() < 1e-5, "row {} ch {}: {} vs {}", i, c, got, want);
            }
        }
    }

    #[test]
    fn dense_output_rows_are_convex_combinations() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (n, c) = (12, 3);
        let q = rng_tensor(&mut rng, &[n, c]);
        let k = rng_tensor(&mut rng, &[n, c]);
        let v = rng_tensor(&mut rng, &[n, c]);
        let a = nonlocal_dense(&q, &k, &v).unwrap();
        for ch in 0..c {
            let lo = (0..n).map(|r| v.data()[r * c + ch]).fold(f32::INFINITY, f32::min);
            let hi = (0..n).map(|r| v.data()[r * c + ch]).fold(f32::NEG_INFINITY, f32::max);
            for r in 0..n {
                let got = a.data()[r * c + ch];
                assert!(got >= lo - 1e-6 && got <= hi + 1e-6);
            }
        }
    }

    #[test]
    fn dense_is_linear_in_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let (n, c) = (9, 4);
        let q = rng_tensor(&mut rng, &[n, c]);
        let k = rng_tensor(&mut rng, &[n, c]);
        let v = rng_tensor(&mut rng, &[n, c]);
        let a1 = nonlocal_dense(&q, &k, &v).unwrap().scale(2.5).unwrap();
        let a2 = nonlocal_dense(&q, &k, &v.scale(2.5).unwrap()).unwrap();
        for (x, y) in a1.data().iter().zip(a2.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_rows_shift_invariance_literal() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = rng_tensor(&mut rng, &[4, 6]);
        // Add the same constant to every logit of every row; the constant
        // is a power of two so the additions are exact in f32.
        let shifted = x.add(&Tensor::filled(vec![4, 6], 8.0).unwrap()).unwrap();
        let a = softmax_rows(&x).unwrap();
        let b = softmax_rows(&shifted).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn mask_query_gates_sites() {
        let x = Tensor::new(vec![1, 2, 2, 2], vec![1., 2., 3., 4., 5., 6., 7., 8.]).unwrap();
        let ones = Tensor::filled(vec![1, 1, 2, 2], 1.0).unwrap();
        assert_eq!(mask_query(&x, &ones).unwrap().data(), x.data());
        let zeros = Tensor::zeros(vec![1, 1, 2, 2]).unwrap();
        assert!(mask_query(&x, &zeros).unwrap().data().iter().all(|&v| v == 0.0));
        let checker = Tensor::new(vec![1, 1, 2, 2], vec![1., 0., 0., 1.]).unwrap();
        assert_eq!(
            mask_query(&x, &checker).unwrap().data(),
            &[1., 0., 0., 4., 5., 0., 0., 8.]
        );
        // Channel extent of the gate must be 1.
        let wide = Tensor::zeros(vec![1, 2, 2, 2]).unwrap();
        assert!(mask_query(&x, &wide).is_err());
    }

    /// Tensor whose value at site (y, x) of channel c is c*1000 + y*W + x,
    /// handy for tracking where sites land.
    fn site_indexed(c: usize, h: usize, w: usize) -> Tensor {
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for s in 0..h * w {
                data.push((ch * 1000 + s) as f32);
            }
        }
        Tensor::new(vec![1, c, h, w], data).unwrap()
    }

    #[test]
    fn sample_partition_k1_is_row_major_flatten() {
        let x = site_indexed(2, 2, 3);
        let subs = sample_partition(&x, 1).unwrap();
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].dims(), &[6, 2]);
        for s in 0..6 {
            assert_eq!(subs[0].data()[s * 2], s as f32);
            assert_eq!(subs[0].data()[s * 2 + 1], (1000 + s) as f32);
        }
    }

    #[test]
    fn sample_partition_stride_lattice() {
        // 4x4 sites, k = 4: subset (0,0) holds sites (0,0), (0,2), (2,0), (2,2).
        let x = site_indexed(1, 4, 4);
        let subs = sample_partition(&x, 4).unwrap();
        assert_eq!(subs.len(), 4);
        assert_eq!(subs[0].data(), &[0., 2., 8., 10.]);
        // Subset (a, b) sits at list index a*sqrt(k) + b; (1, 0) is index 2.
        assert_eq!(subs[2].data(), &[4., 6., 12., 14.]);
    }

    #[test]
    fn sample_partition_is_a_permutation() {
        let x = site_indexed(1, 6, 4);
        let subs = sample_partition(&x, 4).unwrap();
        let mut seen: Vec<f32> = subs.iter().flat_map(|s| s.data().to_vec()).collect();
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let want: Vec<f32> = (0..24).map(|i| i as f32).collect();
        assert_eq!(seen, want);
    }

    #[test]
    fn sample_partition_rejects_bad_geometry() {
        let x = site_indexed(1, 4, 4);
        assert!(sample_partition(&x, 3).is_err(), "k not a perfect square");
        assert!(sample_partition(&x, 9).is_err(), "sqrt(k) does not divide extents");
        let batched = Tensor::zeros(vec![2, 1, 4, 4]).unwrap();
        assert!(sample_partition(&batched, 4).is_err());
    }

    #[test]
    fn merge_partition_round_trips_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for (h, w, k) in [(4, 4, 1), (4, 4, 4), (6, 6, 9), (8, 4, 16)] {
            if h % int_sqrt(k) != 0 || w % int_sqrt(k) != 0 {
                continue;
            }
            let x = rng_tensor(&mut rng, &[1, 3, h, w]);
            let subs = sample_partition(&x, k).unwrap();
            let back = merge_partition(&subs, k, h, w).unwrap();
            assert_eq!(back.data(), x.data());
            assert_eq!(back.dims(), x.dims());
        }
    }

    #[test]
    fn merge_partition_single_site_subsets() {
        // k = 4 on a 2x2 image: each subset is one site.
        let subs: Vec<Tensor> = (0..4)
            .map(|i| Tensor::new(vec![1, 1], vec![i as f32 * 10.0]).unwrap())
            .collect();
        let x = merge_partition(&subs, 4, 2, 2).unwrap();
        // Subset (a, b) holds site (a, b) here.
        assert_eq!(x.data(), &[0., 10., 20., 30.]);
    }

    #[test]
    fn longrange_k1_equals_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (h, w, c) = (4, 4, 3);
        let q = rng_tensor(&mut rng, &[1, c, h, w]);
        let k = rng_tensor(&mut rng, &[1, c, h, w]);
        let v = rng_tensor(&mut rng, &[1, c, h, w]);
        let long = longrange_attention(&q, &k, &v, 1).unwrap();
        let dense = nonlocal_dense(
            &to_sites(&q).unwrap(),
            &to_sites(&k).unwrap(),
            &to_sites(&v).unwrap(),
        )
        .unwrap();
        let back = merge_partition(&[dense], 1, h, w).unwrap();
        for (a, b) in long.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn longrange_k_equals_n_returns_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let (h, w, c) = (4, 4, 2);
        let q = rng_tensor(&mut rng, &[1, c, h, w]);
        let k = rng_tensor(&mut rng, &[1, c, h, w]);
        let v = rng_tensor(&mut rng, &[1, c, h, w]);
        let long = longrange_attention(&q, &k, &v, 16).unwrap();
        assert_eq!(long.data(), v.data());
    }

    #[test]
    fn longrange_block_constant_inputs_return_values() {
        // Values depend only on (y mod sqrt(k), x mod sqrt(k)), so every
        // subset is internally constant and attention degenerates to the
        // value rows.
        let (h, w, k) = (6, 6, 9);
        let r = 3;
        let build = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let table: Vec<f32> = (0..2 * r * r).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut data = Vec::new();
            for c in 0..2 {
                for y in 0..h {
                    for x in 0..w {
                        data.push(table[(c * r + y % r) * r + x % r]);
                    }
                }
            }
            Tensor::new(vec![1, 2, h, w], data).unwrap()
        };
        let (q, kk, v) = (build(19), build(20), build(21));
        let long = longrange_attention(&q, &kk, &v, k).unwrap();
        for (a, b) in long.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn shortrange_whole_image_block_equals_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let (h, w, c) = (4, 4, 3);
        let ag = rng_tensor(&mut rng, &[1, c, h, w]);
        let k = rng_tensor(&mut rng, &[1, c, h, w]);
        let v = rng_tensor(&mut rng, &[1, c, h, w]);
        // k = 16 makes one 4x4 tile covering everything.
        let short = shortrange_attention(&ag, &k, &v, 16).unwrap();
        let dense = nonlocal_dense(
            &to_sites(&ag).unwrap(),
            &to_sites(&k).unwrap(),
            &to_sites(&v).unwrap(),
        )
        .unwrap();
        // Within one whole-image tile, sites are in plain row-major order.
        let back = merge_partition(&[dense], 1, h, w).unwrap();
        for (a, b) in short.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn shortrange_k1_returns_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (h, w, c) = (3, 5, 2);
        let ag = rng_tensor(&mut rng, &[1, c, h, w]);
        let k = rng_tensor(&mut rng, &[1, c, h, w]);
        let v = rng_tensor(&mut rng, &[1, c, h, w]);
        let short = shortrange_attention(&ag, &k, &v, 1).unwrap();
        assert_eq!(short.data(), v.data());
    }

    #[test]
    fn shortrange_matches_per_block_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let (h, w, c, k) = (4, 4, 3, 4);
        let ag = rng_tensor(&mut rng, &[1, c, h, w]);
        let kk = rng_tensor(&mut rng, &[1, c, h, w]);
        let v = rng_tensor(&mut rng, &[1, c, h, w]);
        let short = shortrange_attention(&ag, &kk, &v, k).unwrap();
        // Oracle: loop the four 2x2 tiles and run dense attention in each.
        for (by, bx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let gather = |t: &Tensor| -> Tensor {
                let mut data = Vec::new();
                for dy in 0..2 {
                    for dx in 0..2 {
                        for ch in 0..c {
                            data.push(t.at4(0, ch, by * 2 + dy, bx * 2 + dx));
                        }
                    }
                }
                Tensor::new(vec![4, c], data).unwrap()
            };
            let want = nonlocal_dense(&gather(&ag), &gather(&kk), &gather(&v)).unwrap();
            for dy in 0..2 {
                for dx in 0..2 {
                    for ch in 0..c {
                        let got = short.at4(0, ch, by * 2 + dy, bx * 2 + dx);
                        let exp = want.data()[(dy * 2 + dx) * c + ch];
                        assert!((got - exp).abs() < 1e-5, "{} vs {}", got, exp);
                    }
                }
            }
        }
    }

    fn ena_config(rng: &mut ChaCha8Rng, k: usize, c_q: usize, c_kv: usize, e: usize) -> EnaConfig {
        EnaConfig {
            k_groups: k,
            embed_channels: e,
            wq: rng_tensor(rng, &[e, c_q, 1, 1]),
            wk: rng_tensor(rng, &[e, c_kv, 1, 1]),
            wv: rng_tensor(rng, &[e, c_kv, 1, 1]),
            wout: rng_tensor(rng, &[c_q, e, 1, 1]),
        }
    }

    #[test]
    fn ena_output_shape_matches_query_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let xq = rng_tensor(&mut rng, &[1, 6, 8, 8]);
        let ximg = rng_tensor(&mut rng, &[1, 3, 8, 8]);
        let cfg = ena_config(&mut rng, 16, 6, 3, 3);
        let y = ena(&xq, &ximg, &ximg, None, &cfg).unwrap();
        assert_eq!(y.dims(), xq.dims());
    }

    #[test]
    fn ena_zero_output_projection_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let xq = rng_tensor(&mut rng, &[1, 4, 4, 4]);
        let ximg = rng_tensor(&mut rng, &[1, 3, 4, 4]);
        let mut cfg = ena_config(&mut rng, 4, 4, 3, 2);
        cfg.wout = Tensor::zeros(vec![4, 2, 1, 1]).unwrap();
        let u = Tensor::new(
            vec![1, 1, 4, 4],
            (0..16).map(|i| (i % 2) as f32).collect(),
        )
        .unwrap();
        let y = ena(&xq, &ximg, &ximg, Some(&u), &cfg).unwrap();
        assert_eq!(y.data(), xq.data());
    }

    #[test]
    fn ena_k1_matches_composed_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let xq = rng_tensor(&mut rng, &[1, 4, 4, 4]);
        let ximg = rng_tensor(&mut rng, &[1, 2, 4, 4]);
        let cfg = ena_config(&mut rng, 1, 4, 2, 3);
        let y = ena(&xq, &ximg, &ximg, None, &cfg).unwrap();

        // Oracle: project, dense attention over all sites, degenerate short
        // stage (k = 1 returns the values), output projection, residual.
        let v = conv2d(&ximg, &cfg.wv, None, 0).unwrap();
        let back = conv2d(&v, &cfg.wout, None, 0).unwrap();
        let want = xq.add(&back).unwrap();
        for (a, b) in y.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn ena_rejects_bad_projection_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let xq = rng_tensor(&mut rng, &[1, 4, 4, 4]);
        let ximg = rng_tensor(&mut rng, &[1, 3, 4, 4]);
        let mut cfg = ena_config(&mut rng, 4, 4, 3, 2);
        cfg.wk = rng_tensor(&mut rng, &[2, 4, 1, 1]);
        assert!(ena(&xq, &ximg, &ximg, None, &cfg).is_err());
    }
}
