//! Attention computations: the VSA softmax reference, SSA in quadratic and
//! linear-aggregation form, and LRF-SSA (monolithic and causal streaming).
//!
//! All mechanisms operate per (t, b) slice on (n, d) token blocks. The local
//! receptive field term is a set of 3×3 depth-wise dilated kernels over the
//! token grid, applied to V with zero padding.

use crate::error::{Error, Result};
use crate::neuron::{sn_layer, LifParams};
use crate::tensor::{matmul, matmul_tn, DenseTensor, Shape4, SpikeTensor, TokenGrid};

/// Tap offsets of a 3×3 kernel in (row, col) units before dilation scaling.
/// Tap index = (i+1)*3 + (j+1) for i, j ∈ {-1, 0, 1}.
pub const KERNEL_TAPS: [(isize, isize); 9] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 0),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Per-token linear Q/K/V maps followed by spiking neurons.
#[derive(Debug, Clone)]
pub struct QkvProjection {
    pub d_in: usize,
    pub d_out: usize,
    /// Row-major (d_in × d_out) weight matrices.
    pub w_q: Vec<f64>,
    pub w_k: Vec<f64>,
    pub w_v: Vec<f64>,
    pub lif: LifParams,
}

impl QkvProjection {
    pub fn new(d_in: usize, d_out: usize, w_q: Vec<f64>, w_k: Vec<f64>, w_v: Vec<f64>, lif: LifParams) -> Result<Self> {
        let want = d_in * d_out;
        if w_q.len() != want || w_k.len() != want || w_v.len() != want {
            return Err(Error::ShapeMismatch(format!(
                "projection matrices must each hold {want} values"
            )));
        }
        Ok(QkvProjection { d_in, d_out, w_q, w_k, w_v, lif })
    }

    pub fn identity(d: usize, lif: LifParams) -> Self {
        let mut w = vec![0.0; d * d];
        for i in 0..d {
            w[i * d + i] = 1.0;
        }
        QkvProjection {
            d_in: d,
            d_out: d,
            w_q: w.clone(),
            w_k: w.clone(),
            w_v: w,
            lif,
        }
    }
}

/// Spiking projection without batch normalization: each output is SN{X·W}.
pub fn project_qkv(x: &SpikeTensor, proj: &QkvProjection) -> Result<(SpikeTensor, SpikeTensor, SpikeTensor)> {
    if x.shape.d != proj.d_in {
        return Err(Error::ShapeMismatch(format!(
            "input has {} channels, projection expects {}",
            x.shape.d, proj.d_in
        )));
    }
    let out_shape = Shape4::new(x.shape.t, x.shape.b, x.shape.n, proj.d_out)?;
    let project = |w: &[f64]| -> DenseTensor {
        let mut out = DenseTensor::zeros(out_shape);
        for t in 0..x.shape.t {
            for b in 0..x.shape.b {
                let xin = x.slice(t, b);
                let y = matmul(xin, w, x.shape.n, proj.d_in, proj.d_out);
                out.slice_mut(t, b).copy_from_slice(&y);
            }
        }
        out
    };
    let q = sn_layer(&project(&proj.w_q), &proj.lif);
    let k = sn_layer(&project(&proj.w_k), &proj.lif);
    let v = sn_layer(&project(&proj.w_v), &proj.lif);
    Ok((q, k, v))
}

fn check_same_shape(a: Shape4, b: Shape4, c: Shape4) -> Result<()> {
    if a != b || a != c {
        return Err(Error::ShapeMismatch("Q, K, V shapes differ".into()));
    }
    Ok(())
}

/// Vanilla softmax attention: softmax(QKᵀ/√d)·V per (t, b) slice.
pub fn vsa(q: &DenseTensor, k: &DenseTensor, v: &DenseTensor) -> Result<DenseTensor> {
    check_same_shape(q.shape, k.shape, v.shape)?;
    let Shape4 { t, b, n, d } = q.shape;
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = DenseTensor::zeros(q.shape);
    for ti in 0..t {
        for bi in 0..b {
            let qs = q.slice(ti, bi);
            let ks = k.slice(ti, bi);
            let vs = v.slice(ti, bi);
            let mut logits = matmul_nt(qs, ks, n, d);
            for row in logits.chunks_mut(n) {
                softmax_inplace_scaled(row, scale);
            }
            let y = matmul(&logits, vs, n, n, d);
            out.slice_mut(ti, bi).copy_from_slice(&y);
        }
    }
    Ok(out)
}

/// C (m×m') = A (m×d) · Bᵀ (with B m'×d).
fn matmul_nt(a: &[f64], b: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for e in 0..d {
                acc += a[i * d + e] * b[j * d + e];
            }
            c[i * n + j] = acc;
        }
    }
    c
}

fn softmax_inplace_scaled(row: &mut [f64], scale: f64) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max) * scale;
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v * scale - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// SSA via the explicit N×N score matrix: s·(Q Kᵀ)·V.
pub fn ssa_quadratic(q: &SpikeTensor, k: &SpikeTensor, v: &SpikeTensor, s: f64) -> Result<DenseTensor> {
    check_same_shape(q.shape, k.shape, v.shape)?;
    let Shape4 { t, b, n, d } = q.shape;
    let mut out = DenseTensor::zeros(q.shape);
    for ti in 0..t {
        for bi in 0..b {
            let scores = matmul_nt(q.slice(ti, bi), k.slice(ti, bi), n, d);
            let y = matmul(&scores, v.slice(ti, bi), n, n, d);
            let dst = out.slice_mut(ti, bi);
            for (o, yv) in dst.iter_mut().zip(y) {
                *o = s * yv;
            }
        }
    }
    Ok(out)
}

/// SSA via the reassociated d×d KV aggregate: s·Q·(Kᵀ V).
pub fn ssa_linear(q: &SpikeTensor, k: &SpikeTensor, v: &SpikeTensor, s: f64) -> Result<DenseTensor> {
    check_same_shape(q.shape, k.shape, v.shape)?;
    let Shape4 { t, b, n, d } = q.shape;
    let mut out = DenseTensor::zeros(q.shape);
    for ti in 0..t {
        for bi in 0..b {
            let kv = matmul_tn(k.slice(ti, bi), v.slice(ti, bi), n, d, d);
            let y = matmul(q.slice(ti, bi), &kv, n, d, d);
            let dst = out.slice_mut(ti, bi);
            for (o, yv) in dst.iter_mut().zip(y) {
                *o = s * yv;
            }
        }
    }
    Ok(out)
}

/// Dilation set plus per-dilation depth-wise 3×3 kernels and the
/// SSA scaling factor.
#[derive(Debug, Clone)]
pub struct LrfConfig {
    pub dilations: Vec<usize>,
    /// One kernel per dilation, tap-major: weights[di][tap * d + c].
    pub weights: Vec<Vec<f64>>,
    pub scale: f64,
    pub d: usize,
}

impl LrfConfig {
    pub fn new(dilations: Vec<usize>, weights: Vec<Vec<f64>>, scale: f64, d: usize) -> Result<Self> {
        if dilations.is_empty() || dilations.iter().any(|&x| x == 0) {
            return Err(Error::InvalidParam("dilations must be positive".into()));
        }
        if weights.len() != dilations.len() {
            return Err(Error::ShapeMismatch("one kernel required per dilation".into()));
        }
        for w in &weights {
            if w.len() != 9 * d {
                return Err(Error::ShapeMismatch(format!(
                    "each kernel must hold 9*{d} taps, got {}",
                    w.len()
                )));
            }
        }
        if !(scale > 0.0) {
            return Err(Error::InvalidParam("scale must be > 0".into()));
        }
        Ok(LrfConfig { dilations, weights, scale, d })
    }

    /// Kernels with every tap set to `value`; default dilations are {3, 5}.
    pub fn constant(dilations: Vec<usize>, value: f64, scale: f64, d: usize) -> Result<Self> {
        let weights = vec![vec![value; 9 * d]; dilations.len()];
        LrfConfig::new(dilations, weights, scale, d)
    }

    /// All-zero kernels: LRF-SSA degenerates to plain SSA.
    pub fn zero(dilations: Vec<usize>, scale: f64, d: usize) -> Result<Self> {
        LrfConfig::constant(dilations, 0.0, scale, d)
    }

    pub fn default_scale(d: usize) -> f64 {
        1.0 / (d as f64).sqrt()
    }
}

/// Adds the dilated local term of one (n, d) slice into `out`.
pub(crate) fn local_term_slice(v: &[f64], grid: &TokenGrid, d: usize, cfg: &LrfConfig, out: &mut [f64]) {
    let n = grid.len();
    debug_assert_eq!(v.len(), n * d);
    debug_assert_eq!(out.len(), n * d);
    for (dil, kernel) in cfg.dilations.iter().zip(&cfg.weights) {
        let dil = *dil as isize;
        for token in 0..n {
            for (tap, (di, dj)) in KERNEL_TAPS.iter().enumerate() {
                if let Some(src) = grid.neighbor_index(token, di * dil, dj * dil) {
                    let w = &kernel[tap * d..(tap + 1) * d];
                    let vs = &v[src * d..(src + 1) * d];
                    let dst = &mut out[token * d..(token + 1) * d];
                    for c in 0..d {
                        dst[c] += w[c] * vs[c];
                    }
                }
            }
        }
    }
}

/// Local receptive-field term over all (t, b) slices of V.
pub fn lrf_local_term(v: &SpikeTensor, grid: &TokenGrid, cfg: &LrfConfig) -> Result<DenseTensor> {
    lrf_local_term_dense(&v.as_dense(), grid, cfg)
}

/// Same local term on a dense tensor (used by LRF-Dyn over the scan output).
pub fn lrf_local_term_dense(v: &DenseTensor, grid: &TokenGrid, cfg: &LrfConfig) -> Result<DenseTensor> {
    let Shape4 { t, b, n, d } = v.shape;
    if grid.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "grid has {} tokens, tensor has {n}",
            grid.len()
        )));
    }
    if cfg.d != d {
        return Err(Error::ShapeMismatch(format!(
            "kernels built for {} channels, tensor has {d}",
            cfg.d
        )));
    }
    let mut out = DenseTensor::zeros(v.shape);
    for ti in 0..t {
        for bi in 0..b {
            let src = v.slice(ti, bi);
            // borrow juggling: compute into a scratch then copy
            let mut scratch = vec![0.0; n * d];
            local_term_slice(src, grid, d, cfg, &mut scratch);
            out.slice_mut(ti, bi).copy_from_slice(&scratch);
        }
    }
    Ok(out)
}

/// Pre-SN activations and their SN-wrapped spikes.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub pre_sn: DenseTensor,
    pub spikes: SpikeTensor,
}

/// LRF-SSA: s·Q(KᵀV) + local(V), wrapped in SN.
pub fn lrf_ssa(
    q: &SpikeTensor,
    k: &SpikeTensor,
    v: &SpikeTensor,
    grid: &TokenGrid,
    cfg: &LrfConfig,
    lif: &LifParams,
) -> Result<AttentionOutput> {
    let mut pre = ssa_linear(q, k, v, cfg.scale)?;
    let local = lrf_local_term(v, grid, cfg)?;
    for (p, l) in pre.data.iter_mut().zip(&local.data) {
        *p += *l;
    }
    let spikes = sn_layer(&pre, lif);
    Ok(AttentionOutput { pre_sn: pre, spikes })
}

/// Causal streaming form: tokens in raster order, maintaining the
/// running d×d accumulator Σ_{j≤n} k_jᵀ v_j. The accumulator includes the
/// diagonal term k_nᵀ v_n before q_n reads it. The local term over V is added
/// unchanged (it is not causally masked).
pub fn lrf_ssa_causal(
    q: &SpikeTensor,
    k: &SpikeTensor,
    v: &SpikeTensor,
    grid: &TokenGrid,
    cfg: &LrfConfig,
) -> Result<DenseTensor> {
    check_same_shape(q.shape, k.shape, v.shape)?;
    let Shape4 { t, b, n, d } = q.shape;
    if grid.len() != n {
        return Err(Error::ShapeMismatch("grid does not match token count".into()));
    }
    let mut out = DenseTensor::zeros(q.shape);
    for ti in 0..t {
        for bi in 0..b {
            let qs = q.slice(ti, bi);
            let ks = k.slice(ti, bi);
            let vs = v.slice(ti, bi);
            let mut scratch = vec![0.0; n * d];
            causal_global_slice(qs, ks, vs, n, d, cfg.scale, &mut scratch);
            local_term_slice(vs, grid, d, cfg, &mut scratch);
            out.slice_mut(ti, bi).copy_from_slice(&scratch);
        }
    }
    Ok(out)
}

/// Streaming causal global part: out[n] = s · q_n · Σ_{j≤n} k_jᵀ v_j.
pub(crate) fn causal_global_slice(q: &[f64], k: &[f64], v: &[f64], n: usize, d: usize, s: f64, out: &mut [f64]) {
    let mut acc = vec![0.0; d * d];
    for token in 0..n {
        let kr = &k[token * d..(token + 1) * d];
        let vr = &v[token * d..(token + 1) * d];
        for a in 0..d {
            if kr[a] == 0.0 {
                continue;
            }
            let row = &mut acc[a * d..(a + 1) * d];
            for c in 0..d {
                row[c] += kr[a] * vr[c];
            }
        }
        let qr = &q[token * d..(token + 1) * d];
        let dst = &mut out[token * d..(token + 1) * d];
        for c in 0..d {
            let mut acc_c = 0.0;
            for a in 0..d {
                acc_c += qr[a] * acc[a * d + c];
            }
            dst[c] += s * acc_c;
        }
    }
}

/// N×N SSA score matrix s·q_i·k_j for one (t, b) slice, for analysis use.
pub fn ssa_score_matrix(q: &SpikeTensor, k: &SpikeTensor, s: f64, t: usize, b: usize) -> Vec<f64> {
    let Shape4 { n, d, .. } = q.shape;
    let mut scores = matmul_nt(q.slice(t, b), k.slice(t, b), n, d);
    for v in scores.iter_mut() {
        *v *= s;
    }
    scores
}

/// Effective per-source attention weights of LRF-SSA: the SSA scores plus
/// the channel-mean kernel weight routed from each token to its neighbors.
pub fn lrf_effective_score_matrix(
    q: &SpikeTensor,
    k: &SpikeTensor,
    grid: &TokenGrid,
    cfg: &LrfConfig,
    t: usize,
    b: usize,
) -> Vec<f64> {
    let n = q.shape.n;
    let d = cfg.d;
    let mut scores = ssa_score_matrix(q, k, cfg.scale, t, b);
    for (dil, kernel) in cfg.dilations.iter().zip(&cfg.weights) {
        let dil = *dil as isize;
        for token in 0..n {
            for (tap, (di, dj)) in KERNEL_TAPS.iter().enumerate() {
                if let Some(src) = grid.neighbor_index(token, di * dil, dj * dil) {
                    let mean_w = kernel[tap * d..(tap + 1) * d].iter().sum::<f64>() / d as f64;
                    scores[token * n + src] += mean_w;
                }
            }
        }
    }
    scores
}
