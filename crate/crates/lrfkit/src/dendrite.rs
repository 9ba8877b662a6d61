//! LRF-Dyn: a k-dendrite linear recurrence over tokens with per-channel
//! readout, its impulse-response kernel, and the FFT convolution dual.
//!
//! The dendritic machinery (transition, input fan-in, readout) is shared
//! across channels; only the gain Γ is per channel, so the live state is
//! exactly k·d values.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::attention::{lrf_local_term_dense, AttentionOutput, LrfConfig};
use crate::error::{Error, Result};
use crate::neuron::{sn_layer, LifParams};
use crate::tensor::{DenseTensor, Shape4, TokenGrid};

/// Dendritic recurrence parameters: k×k transition, input fan-in γ,
/// readout weights 𝒞, per-channel gain Γ, optional score-aggregation
/// weights α (defaulting to the readout weights).
#[derive(Debug, Clone)]
pub struct DendriticParams {
    pub k: usize,
    /// Row-major k×k discrete transition matrix.
    pub m_trans: Vec<f64>,
    pub c_read: Vec<f64>,
    pub gamma_in: Vec<f64>,
    /// Per-channel gain, length d.
    pub big_gamma: Vec<f64>,
    pub alpha_k: Vec<f64>,
    spectral_radius: f64,
}

impl DendriticParams {
    pub fn new(
        k: usize,
        m_trans: Vec<f64>,
        c_read: Vec<f64>,
        gamma_in: Vec<f64>,
        big_gamma: Vec<f64>,
        alpha_k: Option<Vec<f64>>,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParam("dendrite count must be >= 1".into()));
        }
        if m_trans.len() != k * k || c_read.len() != k || gamma_in.len() != k {
            return Err(Error::ShapeMismatch("dendritic vector lengths must match k".into()));
        }
        if big_gamma.is_empty() {
            return Err(Error::InvalidParam("per-channel gain must be nonempty".into()));
        }
        let alpha_k = match alpha_k {
            Some(a) => {
                if a.len() != k {
                    return Err(Error::ShapeMismatch("alpha_k length must match k".into()));
                }
                a
            }
            None => c_read.clone(),
        };
        let rho = Self::spectral_radius(&m_trans, k);
        if !(rho < 1.0) {
            return Err(Error::UnstableTransition(rho));
        }
        Ok(DendriticParams {
            k,
            m_trans,
            c_read,
            gamma_in,
            big_gamma,
            alpha_k,
            spectral_radius: rho,
        })
    }

    /// Tridiagonal construction: diagonal entries 1 - 1/τ_i (explicit Euler
    /// with Δt = 1) and raw couplings β above/below the diagonal.
    pub fn tridiagonal(
        taus: &[f64],
        beta_upper: &[f64],
        beta_lower: &[f64],
        c_read: Vec<f64>,
        gamma_in: Vec<f64>,
        big_gamma: Vec<f64>,
        alpha_k: Option<Vec<f64>>,
    ) -> Result<Self> {
        let k = taus.len();
        if beta_upper.len() != k.saturating_sub(1) || beta_lower.len() != k.saturating_sub(1) {
            return Err(Error::ShapeMismatch("need k-1 couplings on each side".into()));
        }
        if taus.iter().any(|&t| t <= 1.0) {
            return Err(Error::InvalidParam("time constants must exceed 1".into()));
        }
        let mut m = vec![0.0; k * k];
        for i in 0..k {
            m[i * k + i] = 1.0 - 1.0 / taus[i];
        }
        for i in 0..k.saturating_sub(1) {
            m[i * k + i + 1] = beta_upper[i];
            m[(i + 1) * k + i] = beta_lower[i];
        }
        Self::new(k, m, c_read, gamma_in, big_gamma, alpha_k)
    }

    pub fn rho(&self) -> f64 {
        self.spectral_radius
    }

    pub fn channels(&self) -> usize {
        self.big_gamma.len()
    }

    /// Certified upper bound on the spectral radius: min over j of
    /// ‖M^(2^j)‖_F^(1/2^j) via repeated squaring. Always ≥ the true radius,
    /// so it is safe for decay-envelope checks over long horizons where the
    /// power-iteration estimate's small downward error would compound.
    pub fn rho_upper(&self) -> f64 {
        let k = self.k;
        let fro = |m: &[f64]| m.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut m = self.m_trans.clone();
        let mut best = fro(&m);
        let mut exponent = 1u32;
        for _ in 0..8 {
            let mut sq = vec![0.0; k * k];
            for i in 0..k {
                for l in 0..k {
                    let a = m[i * k + l];
                    if a == 0.0 {
                        continue;
                    }
                    for j in 0..k {
                        sq[i * k + j] += a * m[l * k + j];
                    }
                }
            }
            m = sq;
            exponent *= 2;
            let bound = fro(&m).powf(1.0 / exponent as f64);
            best = best.min(bound);
            if fro(&m) == 0.0 {
                break;
            }
        }
        best
    }

    /// Spectral-radius estimate by power iteration (50 iterations,
    /// tolerance 1e-10). The growth rate is taken as a geometric mean over
    /// the trailing iterations so complex-conjugate dominant pairs, whose
    /// norm oscillates, still converge.
    pub fn spectral_radius(m: &[f64], k: usize) -> f64 {
        debug_assert_eq!(m.len(), k * k);
        if k == 1 {
            return m[0].abs();
        }
        let mut v: Vec<f64> = (0..k).map(|i| 1.0 + 0.1 * i as f64).collect();
        let mut log_growth = 0.0;
        let mut tracked_iters = 0u32;
        let mut prev_estimate = f64::INFINITY;
        for iter in 0..50 {
            let mut next = vec![0.0; k];
            for i in 0..k {
                let row = &m[i * k..(i + 1) * k];
                next[i] = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            }
            let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            for x in next.iter_mut() {
                *x /= norm;
            }
            v = next;
            if iter >= 25 {
                log_growth += norm.ln();
                tracked_iters += 1;
                let estimate = (log_growth / tracked_iters as f64).exp();
                if (estimate - prev_estimate).abs() < 1e-10 {
                    return estimate;
                }
                prev_estimate = estimate;
            }
        }
        prev_estimate
    }
}

/// Dendritic membrane potentials, shape (k, d) flattened row-major.
#[derive(Debug, Clone)]
pub struct DynState {
    pub k: usize,
    pub d: usize,
    pub s: Vec<f64>,
}

impl DynState {
    pub fn zeros(k: usize, d: usize) -> Self {
        DynState { k, d, s: vec![0.0; k * d] }
    }
}

/// Impulse-response taps κ_c[m] = Γ[c]·𝒞ᵀ·M^m·γ, stored as (len × d).
#[derive(Debug, Clone)]
pub struct DynKernel {
    pub len: usize,
    pub d: usize,
    /// taps[m * d + c]
    pub taps: Vec<f64>,
    /// Channel-independent part 𝒞ᵀ·M^m·γ.
    pub base: Vec<f64>,
}

impl DynKernel {
    /// Verifies the geometric decay envelope |base[m]| ≤ C·ρ^m, with C
    /// measured on the head of the sequence.
    pub fn decays_within(&self, rho: f64, head: usize) -> bool {
        if rho <= 0.0 {
            return self.base.iter().skip(1).all(|&b| b == 0.0);
        }
        let head = head.min(self.len);
        let mut c_env: f64 = 1e-300;
        for m in 0..head {
            c_env = c_env.max(self.base[m].abs() / rho.powi(m as i32));
        }
        (head..self.len).all(|m| self.base[m].abs() <= c_env * rho.powi(m as i32) * (1.0 + 1e-9))
    }
}

/// Sequential token scan of the recurrence on one (n, d) slice. Strictly causal:
/// output n depends on tokens 0..=n only.
pub fn dyn_scan(tokens: &[f64], d: usize, params: &DendriticParams) -> Result<Vec<f64>> {
    check_channels(tokens, d, params)?;
    let n = tokens.len() / d;
    let k = params.k;
    let mut state = DynState::zeros(k, d);
    let mut out = vec![0.0; n * d];
    let mut next = vec![0.0; k * d];
    for token in 0..n {
        // s <- M s + γ ⊗ token
        for a in 0..k {
            let row = &params.m_trans[a * k..(a + 1) * k];
            let dst = &mut next[a * d..(a + 1) * d];
            dst.iter_mut().for_each(|x| *x = 0.0);
            for (b, &m_ab) in row.iter().enumerate() {
                if m_ab == 0.0 {
                    continue;
                }
                let src = &state.s[b * d..(b + 1) * d];
                for c in 0..d {
                    dst[c] += m_ab * src[c];
                }
            }
            let g = params.gamma_in[a];
            let tok = &tokens[token * d..(token + 1) * d];
            for c in 0..d {
                dst[c] += g * tok[c];
            }
        }
        std::mem::swap(&mut state.s, &mut next);
        // y_n[c] = Γ[c]·(𝒞ᵀ s[:,c])
        let dst = &mut out[token * d..(token + 1) * d];
        for c in 0..d {
            let mut acc = 0.0;
            for a in 0..k {
                acc += params.c_read[a] * state.s[a * d + c];
            }
            dst[c] = params.big_gamma[c] * acc;
        }
    }
    Ok(out)
}

fn check_channels(tokens: &[f64], d: usize, params: &DendriticParams) -> Result<()> {
    if d == 0 || tokens.len() % d != 0 {
        return Err(Error::ShapeMismatch("token buffer is not a multiple of d".into()));
    }
    if params.channels() != d {
        return Err(Error::ShapeMismatch(format!(
            "params carry {} channel gains, tokens have {d}",
            params.channels()
        )));
    }
    Ok(())
}

/// Kernel taps for positions m = 0..len-1, by iterated vector–matrix
/// products (never explicit matrix powers).
pub fn dyn_kernel(params: &DendriticParams, len: usize) -> Result<DynKernel> {
    if len == 0 {
        return Err(Error::InvalidParam("kernel length must be >= 1".into()));
    }
    let k = params.k;
    let d = params.channels();
    let mut w = params.gamma_in.clone();
    let mut base = Vec::with_capacity(len);
    let mut taps = vec![0.0; len * d];
    for m in 0..len {
        let b: f64 = params.c_read.iter().zip(&w).map(|(c, x)| c * x).sum();
        base.push(b);
        for c in 0..d {
            taps[m * d + c] = params.big_gamma[c] * b;
        }
        if m + 1 < len {
            let mut next = vec![0.0; k];
            for a in 0..k {
                let row = &params.m_trans[a * k..(a + 1) * k];
                next[a] = row.iter().zip(&w).map(|(x, y)| x * y).sum();
            }
            w = next;
        }
    }
    Ok(DynKernel { len, d, taps, base })
}

/// FFT dual of the scan: per channel, causal linear convolution of
/// the tokens with the kernel taps, via zero-padded transforms of length
/// nextpow2(2N).
pub fn dyn_fft(tokens: &[f64], d: usize, params: &DendriticParams) -> Result<Vec<f64>> {
    check_channels(tokens, d, params)?;
    let n = tokens.len() / d;
    let kernel = dyn_kernel(params, n)?;
    let len = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(len);
    let ifft = planner.plan_fft_inverse(len);

    let mut kf: Vec<Complex<f64>> = (0..len)
        .map(|i| Complex::new(if i < n { kernel.base[i] } else { 0.0 }, 0.0))
        .collect();
    fft.process(&mut kf);

    let mut out = vec![0.0; n * d];
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    for c in 0..d {
        for i in 0..len {
            buf[i] = Complex::new(if i < n { tokens[i * d + c] } else { 0.0 }, 0.0);
        }
        fft.process(&mut buf);
        for (x, k) in buf.iter_mut().zip(&kf) {
            *x *= *k;
        }
        ifft.process(&mut buf);
        let gain = params.big_gamma[c] / len as f64;
        for i in 0..n {
            out[i * d + c] = buf[i].re * gain;
        }
    }
    Ok(out)
}

/// Tensor-level scan over every (t, b) slice.
pub fn dyn_scan_tensor(tokens: &DenseTensor, params: &DendriticParams) -> Result<DenseTensor> {
    apply_per_slice(tokens, params, dyn_scan)
}

/// Tensor-level FFT form over every (t, b) slice.
pub fn dyn_fft_tensor(tokens: &DenseTensor, params: &DendriticParams) -> Result<DenseTensor> {
    apply_per_slice(tokens, params, dyn_fft)
}

fn apply_per_slice(
    tokens: &DenseTensor,
    params: &DendriticParams,
    f: fn(&[f64], usize, &DendriticParams) -> Result<Vec<f64>>,
) -> Result<DenseTensor> {
    let Shape4 { t, b, d, .. } = tokens.shape;
    let mut out = DenseTensor::zeros(tokens.shape);
    for ti in 0..t {
        for bi in 0..b {
            let y = f(tokens.slice(ti, bi), d, params)?;
            out.slice_mut(ti, bi).copy_from_slice(&y);
        }
    }
    Ok(out)
}

/// LRF-Dyn: the scan output plus the dilated local term over the
/// scan output itself, wrapped in SN.
pub fn lrf_dyn(
    tokens: &DenseTensor,
    grid: &TokenGrid,
    params: &DendriticParams,
    cfg: &LrfConfig,
    lif: &LifParams,
) -> Result<AttentionOutput> {
    if grid.len() != tokens.shape.n {
        return Err(Error::ShapeMismatch("grid does not match token count".into()));
    }
    let h = dyn_scan_tensor(tokens, params)?;
    let local = lrf_local_term_dense(&h, grid, cfg)?;
    let mut pre = h;
    for (p, l) in pre.data.iter_mut().zip(&local.data) {
        *p += *l;
    }
    let spikes = sn_layer(&pre, lif);
    Ok(AttentionOutput { pre_sn: pre, spikes })
}
