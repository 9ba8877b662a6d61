//! Streaming-inference executors with exact auxiliary-storage accounting.
//!
//! Each mode runs token by token, allocating its global aggregation state
//! through an instrumented counter, and must reproduce the batch result of
//! the same mechanism to 1e-9. Only auxiliary aggregation values are
//! counted; per-token inputs and outputs are treated as streamed. Line
//! buffers needed by the local term are reported separately in
//! `local_buffer_values`.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{local_term_slice, LrfConfig};
use crate::dendrite::DendriticParams;
use crate::error::{Error, Result};
use crate::synth;
use crate::tensor::{DenseTensor, Shape4, SpikeTensor, TokenGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Full N×N score matrix, streamed multiply against V.
    SsaV1,
    /// d×d KᵀV aggregate, non-causal.
    SsaV2,
    /// Causal d×d running accumulator plus the local term.
    LrfSsaCausal,
    /// k×d dendritic state plus the local term.
    LrfDyn,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::SsaV1, Mode::SsaV2, Mode::LrfSsaCausal, Mode::LrfDyn];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::SsaV1 => "ssa_v1",
            Mode::SsaV2 => "ssa_v2",
            Mode::LrfSsaCausal => "lrf_ssa_causal",
            Mode::LrfDyn => "lrf_dyn",
        }
    }

    /// Whether the mode carries the dilated local term.
    pub fn has_local_term(&self) -> bool {
        matches!(self, Mode::LrfSsaCausal | Mode::LrfDyn)
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        match s {
            "ssa_v1" => Ok(Mode::SsaV1),
            "ssa_v2" => Ok(Mode::SsaV2),
            "lrf_ssa_causal" => Ok(Mode::LrfSsaCausal),
            "lrf_dyn" => Ok(Mode::LrfDyn),
            other => Err(Error::Domain(format!("unknown mode '{other}'"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Exact storage accounting for one streaming configuration.
#[derive(Debug, Clone, Serialize)]
pub struct MemProfile {
    pub mode: String,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    /// Peak live auxiliary real values of the global aggregation.
    pub peak_state_values: usize,
    /// Buffered token values required by the local term's window.
    pub local_buffer_values: usize,
    pub total: usize,
}

/// Deterministic live-value counter for the streaming executors.
#[derive(Debug, Default, Clone)]
pub struct Counter {
    current: usize,
    peak: usize,
}

impl Counter {
    pub fn new() -> Self {
        Counter::default()
    }

    pub fn alloc(&mut self, values: usize) {
        self.current += values;
        self.peak = self.peak.max(self.current);
    }

    pub fn free(&mut self, values: usize) {
        debug_assert!(values <= self.current, "freeing more than allocated");
        self.current -= values;
    }

    pub fn peak(&self) -> usize {
        self.peak
    }

    pub fn current(&self) -> usize {
        self.current
    }
}

/// Closed-form peak auxiliary state per mode: N² | d² | d² | k·d.
pub fn predicted_peak(mode: Mode, n: usize, d: usize, k: usize) -> usize {
    match mode {
        Mode::SsaV1 => n * n,
        Mode::SsaV2 | Mode::LrfSsaCausal => d * d,
        Mode::LrfDyn => k * d,
    }
}

/// Token values the local term must buffer: a (2·max_dilation + 1)-row
/// window of the raster, capped at the full sequence.
pub fn predicted_local_buffer(mode: Mode, grid: &TokenGrid, dilations: &[usize], d: usize) -> usize {
    if !mode.has_local_term() || dilations.is_empty() {
        return 0;
    }
    let max_dil = *dilations.iter().max().unwrap();
    let window_rows = (2 * max_dil + 1).min(grid.rows);
    (window_rows * grid.cols * d).min(grid.len() * d)
}

/// Streaming SSA version 1 on one (n, d) slice: materializes the full score
/// matrix s·QKᵀ, then streams V through it. Matches `ssa_quadratic`.
pub fn stream_ssa_v1_slice(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    n: usize,
    d: usize,
    s: f64,
    counter: &mut Counter,
) -> Vec<f64> {
    counter.alloc(n * n);
    let mut scores = vec![0.0; n * n];
    for i in 0..n {
        let qr = &q[i * d..(i + 1) * d];
        for j in 0..n {
            let kr = &k[j * d..(j + 1) * d];
            scores[i * n + j] = s * qr.iter().zip(kr).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        let dst = &mut out[i * d..(i + 1) * d];
        for j in 0..n {
            let w = scores[i * n + j];
            if w == 0.0 {
                continue;
            }
            let vr = &v[j * d..(j + 1) * d];
            for c in 0..d {
                dst[c] += w * vr[c];
            }
        }
    }
    counter.free(n * n);
    out
}

/// Streaming SSA version 2 on one slice: accumulates the d×d KᵀV aggregate
/// over all keys, then reads it per query. Matches `ssa_linear`.
pub fn stream_ssa_v2_slice(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    n: usize,
    d: usize,
    s: f64,
    counter: &mut Counter,
) -> Vec<f64> {
    counter.alloc(d * d);
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
    }
    let mut out = vec![0.0; n * d];
    for token in 0..n {
        let qr = &q[token * d..(token + 1) * d];
        let dst = &mut out[token * d..(token + 1) * d];
        for c in 0..d {
            let mut y = 0.0;
            for a in 0..d {
                y += qr[a] * acc[a * d + c];
            }
            dst[c] = s * y;
        }
    }
    counter.free(d * d);
    out
}

/// Streaming causal LRF-SSA on one slice: the running d×d accumulator read
/// after each token's rank-one update, plus the (unmasked) local term.
/// Matches `lrf_ssa_causal`.
pub fn stream_lrf_ssa_causal_slice(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    grid: &TokenGrid,
    cfg: &LrfConfig,
    counter: &mut Counter,
) -> Vec<f64> {
    let n = grid.len();
    let d = cfg.d;
    counter.alloc(d * d);
    let mut acc = vec![0.0; d * d];
    let mut out = vec![0.0; n * d];
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
            let mut y = 0.0;
            for a in 0..d {
                y += qr[a] * acc[a * d + c];
            }
            dst[c] = cfg.scale * y;
        }
    }
    counter.free(d * d);
    local_term_slice(v, grid, d, cfg, &mut out);
    out
}

/// Streaming LRF-Dyn on one slice: the k×d dendritic state advanced token by
/// token, plus the local term over the scan output. Matches the pre-SN
/// activations of `dendrite::lrf_dyn`.
pub fn stream_lrf_dyn_slice(
    tokens: &[f64],
    grid: &TokenGrid,
    params: &DendriticParams,
    cfg: &LrfConfig,
    counter: &mut Counter,
) -> Vec<f64> {
    let n = grid.len();
    let d = cfg.d;
    let k = params.k;
    counter.alloc(k * d);
    let mut state = vec![0.0; k * d];
    let mut next = vec![0.0; k * d];
    let mut out = vec![0.0; n * d];
    for token in 0..n {
        let tok = &tokens[token * d..(token + 1) * d];
        for a in 0..k {
            let row = &params.m_trans[a * k..(a + 1) * k];
            let dst = &mut next[a * d..(a + 1) * d];
            dst.iter_mut().for_each(|x| *x = 0.0);
            for (b, &m_ab) in row.iter().enumerate() {
                if m_ab == 0.0 {
                    continue;
                }
                let src = &state[b * d..(b + 1) * d];
                for c in 0..d {
                    dst[c] += m_ab * src[c];
                }
            }
            let g = params.gamma_in[a];
            for c in 0..d {
                dst[c] += g * tok[c];
            }
        }
        std::mem::swap(&mut state, &mut next);
        let dst = &mut out[token * d..(token + 1) * d];
        for c in 0..d {
            let mut acc = 0.0;
            for a in 0..k {
                acc += params.c_read[a] * state[a * d + c];
            }
            dst[c] = params.big_gamma[c] * acc;
        }
    }
    counter.free(k * d);
    local_term_slice(&out.clone(), grid, d, cfg, &mut out);
    out
}

/// Deterministic synthetic inputs shared by `profile` and the verification
/// suites: Bernoulli(0.3) spikes for the attention modes, uniform dense
/// tokens for the recurrence.
pub fn synthetic_inputs(seed: u64, n: usize, d: usize) -> (SpikeTensor, SpikeTensor, SpikeTensor, DenseTensor) {
    let shape = Shape4::new(1, 1, n, d).expect("positive dims");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = synth::random_spikes(&mut rng, shape, 0.3);
    let k = synth::random_spikes(&mut rng, shape, 0.3);
    let v = synth::random_spikes(&mut rng, shape, 0.3);
    let x = synth::random_dense(&mut rng, shape, -1.0, 1.0);
    (q, k, v, x)
}

/// Runs a streaming pass with instrumented counting and reports the exact
/// auxiliary-storage profile.
pub fn profile(
    mode: Mode,
    n: usize,
    d: usize,
    k: usize,
    grid: &TokenGrid,
    dilations: &[usize],
) -> Result<MemProfile> {
    if n == 0 || d == 0 || k == 0 {
        return Err(Error::InvalidParam("dimensions must be positive".into()));
    }
    if grid.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "grid holds {} tokens, profile requested n={n}",
            grid.len()
        )));
    }
    let (q, kk, v, x) = synthetic_inputs(7, n, d);
    let scale = LrfConfig::default_scale(d);
    let mut counter = Counter::new();
    match mode {
        Mode::SsaV1 => {
            stream_ssa_v1_slice(q.slice(0, 0), kk.slice(0, 0), v.slice(0, 0), n, d, scale, &mut counter);
        }
        Mode::SsaV2 => {
            stream_ssa_v2_slice(q.slice(0, 0), kk.slice(0, 0), v.slice(0, 0), n, d, scale, &mut counter);
        }
        Mode::LrfSsaCausal => {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let cfg = synth::random_lrf_config(&mut rng, dilations.to_vec(), scale, d);
            stream_lrf_ssa_causal_slice(q.slice(0, 0), kk.slice(0, 0), v.slice(0, 0), grid, &cfg, &mut counter);
        }
        Mode::LrfDyn => {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let cfg = synth::random_lrf_config(&mut rng, dilations.to_vec(), scale, d);
            let params = synth::random_stable_dendritic(&mut rng, k, d, 0.95);
            stream_lrf_dyn_slice(x.slice(0, 0), grid, &params, &cfg, &mut counter);
        }
    }
    let peak = counter.peak();
    let local = predicted_local_buffer(mode, grid, dilations, d);
    Ok(MemProfile {
        mode: mode.as_str().to_string(),
        n,
        d,
        k: if mode == Mode::LrfDyn { k } else { 1 },
        peak_state_values: peak,
        local_buffer_values: local,
        total: peak + local,
    })
}

/// One (n, d, k) point of a sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepPoint {
    pub n: usize,
    pub d: usize,
    pub k: usize,
}

/// Profiles every mode at every sweep point, using a 1×n raster grid.
pub fn compare(modes: &[Mode], sweep: &[SweepPoint], dilations: &[usize]) -> Result<Vec<MemProfile>> {
    if modes.is_empty() || sweep.is_empty() {
        return Err(Error::InvalidParam("compare needs at least one mode and one sweep point".into()));
    }
    let mut rows = Vec::with_capacity(modes.len() * sweep.len());
    for pt in sweep {
        let grid = TokenGrid::new(1, pt.n)?;
        for &mode in modes {
            rows.push(profile(mode, pt.n, pt.d, pt.k, &grid, dilations)?);
        }
    }
    Ok(rows)
}

/// Least-squares slope of ln(y) against ln(x) — growth exponent of a sweep.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidParam("need at least two matched points".into()));
    }
    if xs.iter().chain(ys).any(|&v| v <= 0.0) {
        return Err(Error::Domain("log-log fit requires positive values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if var == 0.0 {
        return Err(Error::Domain("x values are all equal".into()));
    }
    Ok(cov / var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{lrf_ssa_causal, ssa_linear, ssa_quadratic};
    use crate::dendrite;
    use crate::neuron::LifParams;
    use approx::assert_abs_diff_eq;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn profile_examples() {
        let grid = TokenGrid::new(4, 4).unwrap();
        let p = profile(Mode::SsaV1, 16, 8, 8, &grid, &[]).unwrap();
        assert_eq!(p.peak_state_values, 256);
        assert_eq!(p.local_buffer_values, 0);

        let grid = TokenGrid::new(1, 4).unwrap();
        let p = profile(Mode::SsaV2, 4, 512, 8, &grid, &[]).unwrap();
        assert_eq!(p.peak_state_values, 262_144);

        let p = profile(Mode::LrfDyn, 4, 512, 8, &grid, &[1]).unwrap();
        assert_eq!(p.peak_state_values, 4096);
        assert_eq!(262_144 / p.peak_state_values, 64);
    }

    #[test]
    fn counted_peak_matches_formula_for_all_modes() {
        for (rows, cols, d, k) in [(2usize, 3usize, 4usize, 2usize), (4, 4, 8, 8), (1, 10, 3, 5)] {
            let grid = TokenGrid::new(rows, cols).unwrap();
            let n = rows * cols;
            for mode in Mode::ALL {
                let p = profile(mode, n, d, k, &grid, &[1, 2]).unwrap();
                assert_eq!(
                    p.peak_state_values,
                    predicted_peak(mode, n, d, k),
                    "mode {mode} at n={n} d={d} k={k}"
                );
                assert_eq!(p.total, p.peak_state_values + p.local_buffer_values);
            }
        }
    }

    #[test]
    fn local_buffer_window_caps_at_sequence() {
        let grid = TokenGrid::new(8, 8).unwrap();
        // window of 2*2+1 = 5 rows
        assert_eq!(predicted_local_buffer(Mode::LrfSsaCausal, &grid, &[1, 2], 4), 5 * 8 * 4);
        // window larger than the grid: capped at n*d
        assert_eq!(predicted_local_buffer(Mode::LrfDyn, &grid, &[5], 4), 8 * 8 * 4);
        assert_eq!(predicted_local_buffer(Mode::SsaV2, &grid, &[5], 4), 0);
    }

    #[test]
    fn streaming_matches_batch_ssa() {
        let (q, k, v, _) = synthetic_inputs(3, 24, 6);
        let s = LrfConfig::default_scale(6);
        let mut c = Counter::new();
        let v1 = stream_ssa_v1_slice(q.slice(0, 0), k.slice(0, 0), v.slice(0, 0), 24, 6, s, &mut c);
        let batch = ssa_quadratic(&q, &k, &v, s).unwrap();
        assert!(max_abs_diff(&v1, batch.slice(0, 0)) <= 1e-9);
        assert_eq!(c.peak(), 24 * 24);
        assert_eq!(c.current(), 0);

        let mut c = Counter::new();
        let v2 = stream_ssa_v2_slice(q.slice(0, 0), k.slice(0, 0), v.slice(0, 0), 24, 6, s, &mut c);
        let batch = ssa_linear(&q, &k, &v, s).unwrap();
        assert!(max_abs_diff(&v2, batch.slice(0, 0)) <= 1e-9);
        assert_eq!(c.peak(), 36);
    }

    #[test]
    fn streaming_matches_batch_causal_lrf() {
        let grid = TokenGrid::new(4, 6).unwrap();
        let (q, k, v, _) = synthetic_inputs(9, 24, 5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let cfg = synth::random_lrf_config(&mut rng, vec![1, 2], LrfConfig::default_scale(5), 5);
        let mut c = Counter::new();
        let streamed =
            stream_lrf_ssa_causal_slice(q.slice(0, 0), k.slice(0, 0), v.slice(0, 0), &grid, &cfg, &mut c);
        let batch = lrf_ssa_causal(&q, &k, &v, &grid, &cfg).unwrap();
        assert!(max_abs_diff(&streamed, batch.slice(0, 0)) <= 1e-9);
        assert_eq!(c.peak(), 25);
    }

    #[test]
    fn streaming_matches_batch_lrf_dyn() {
        let grid = TokenGrid::new(3, 8).unwrap();
        let (_, _, _, x) = synthetic_inputs(5, 24, 6);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let cfg = synth::random_lrf_config(&mut rng, vec![1, 3], LrfConfig::default_scale(6), 6);
        let params = synth::random_stable_dendritic(&mut rng, 4, 6, 0.95);
        let mut c = Counter::new();
        let streamed = stream_lrf_dyn_slice(x.slice(0, 0), &grid, &params, &cfg, &mut c);
        let batch = dendrite::lrf_dyn(&x, &grid, &params, &cfg, &LifParams::default()).unwrap();
        assert!(max_abs_diff(&streamed, batch.pre_sn.slice(0, 0)) <= 1e-9);
        assert_eq!(c.peak(), 4 * 6);
    }

    #[test]
    fn compare_ratio_sweep() {
        let sweep: Vec<SweepPoint> = [64usize, 128, 256, 512]
            .iter()
            .map(|&d| SweepPoint { n: 4, d, k: 8 })
            .collect();
        let rows = compare(&[Mode::SsaV2, Mode::LrfDyn], &sweep, &[1]).unwrap();
        let mut ratios = Vec::new();
        for pair in rows.chunks(2) {
            ratios.push(pair[0].peak_state_values / pair[1].peak_state_values);
        }
        assert_eq!(ratios, vec![8, 16, 32, 64]);
    }

    #[test]
    fn ssa_v1_sweep_is_quadratic() {
        let ns = [8usize, 16, 32, 64, 128];
        let sweep: Vec<SweepPoint> = ns.iter().map(|&n| SweepPoint { n, d: 4, k: 2 }).collect();
        let rows = compare(&[Mode::SsaV1], &sweep, &[]).unwrap();
        assert_eq!(rows.len(), ns.len());
        let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.peak_state_values as f64).collect();
        let slope = loglog_slope(&xs, &ys).unwrap();
        assert_abs_diff_eq!(slope, 2.0, epsilon = 0.01);
    }

    #[test]
    fn counts_monotone_in_dimensions() {
        let base = predicted_peak(Mode::LrfDyn, 16, 8, 4);
        assert!(predicted_peak(Mode::LrfDyn, 16, 16, 4) >= base);
        assert!(predicted_peak(Mode::LrfDyn, 16, 8, 8) >= base);
        assert!(predicted_peak(Mode::SsaV1, 32, 8, 4) >= predicted_peak(Mode::SsaV1, 16, 8, 4));
    }

    #[test]
    fn mode_parsing_round_trips() {
        for mode in Mode::ALL {
            assert_eq!(mode.as_str().parse::<Mode>().unwrap(), mode);
        }
        assert!("softmax".parse::<Mode>().is_err());
    }
}
