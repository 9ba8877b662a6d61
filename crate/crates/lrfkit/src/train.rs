//! Toy surrogate-gradient training: a one-block spiking model (SSA, LRF-SSA
//! or LRF-Dyn) on a synthetic motif-classification task, with manual
//! backprop, finite-difference gradient verification, CSV logs and a
//! versioned binary checkpoint.
//!
//! The spiking path uses the surrogate derivative at every threshold
//! crossing and backprop-through-time over the LIF states; the LRF-Dyn
//! recurrence is differentiated exactly with a k×d adjoint scan. A `smooth`
//! switch replaces every spike layer with the identity so the whole network
//! becomes differentiable and checkable against central differences.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read as IoRead, Write as IoWrite};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::KERNEL_TAPS;
use crate::dendrite::{dyn_scan, DendriticParams};
use crate::error::{Error, Result};
use crate::neuron::{surrogate_grad, LifParams, SurrogateSpec};
use crate::synth;
use crate::tensor::{matmul, matmul_tn, TokenGrid};

/// C (m×n) = A (m×p) · Bᵀ (n×p).
fn matmul_nt(a: &[f64], b: &[f64], m: usize, p: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * p);
    debug_assert_eq!(b.len(), n * p);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let ar = &a[i * p..(i + 1) * p];
        let cr = &mut c[i * n..(i + 1) * n];
        for (j, cj) in cr.iter_mut().enumerate() {
            let br = &b[j * p..(j + 1) * p];
            *cj = ar.iter().zip(br).map(|(x, y)| x * y).sum();
        }
    }
    c
}

const PATCH: usize = 9;
const MOTIF_SIDE: usize = 3;

/// 3×3 binary motifs, one per class: plus, X, horizontal bar, vertical bar.
const MOTIFS: [[u8; 9]; 4] = [
    [0, 1, 0, 1, 1, 1, 0, 1, 0],
    [1, 0, 1, 0, 1, 0, 1, 0, 1],
    [0, 0, 0, 1, 1, 1, 0, 0, 0],
    [0, 1, 0, 0, 1, 0, 0, 1, 0],
];

/// Synthetic classification task: one class-identifying 3×3 motif placed at
/// a random location on a binary noise grid.
#[derive(Debug, Clone)]
pub struct ToyTask {
    pub grid: TokenGrid,
    pub d_embed: usize,
    pub classes: usize,
    pub noise_p: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub seed: u64,
}

impl Default for ToyTask {
    fn default() -> Self {
        ToyTask {
            grid: TokenGrid::new(8, 8).expect("static dims"),
            d_embed: 16,
            classes: 4,
            noise_p: 0.1,
            train_samples: 2048,
            test_samples: 512,
            seed: 0,
        }
    }
}

/// One generated sample: the raw grid, per-token 3×3 patch features
/// (row-major, zero-padded at the borders) and the label.
#[derive(Debug, Clone)]
pub struct Sample {
    pub cells: Vec<f64>,
    pub patches: Vec<f64>,
    pub label: usize,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

impl ToyTask {
    /// Reproducible sample generation from (task seed, index); the label is
    /// index modulo classes, so every dataset slice is balanced.
    pub fn sample(&self, index: usize) -> Sample {
        let rows = self.grid.rows;
        let cols = self.grid.cols;
        assert!(rows >= MOTIF_SIDE && cols >= MOTIF_SIDE, "grid too small for a motif");
        let label = index % self.classes;
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ splitmix64(index as u64 + 1)));
        let mut cells: Vec<f64> = (0..rows * cols)
            .map(|_| if rng.random::<f64>() < self.noise_p { 1.0 } else { 0.0 })
            .collect();
        let r0 = rng.random_range(0..=rows - MOTIF_SIDE);
        let c0 = rng.random_range(0..=cols - MOTIF_SIDE);
        let motif = &MOTIFS[label % MOTIFS.len()];
        for mr in 0..MOTIF_SIDE {
            for mc in 0..MOTIF_SIDE {
                cells[(r0 + mr) * cols + c0 + mc] = motif[mr * MOTIF_SIDE + mc] as f64;
            }
        }
        let patches = extract_patches(&cells, rows, cols);
        Sample { cells, patches, label }
    }

    pub fn dataset(&self, start: usize, count: usize) -> Vec<Sample> {
        (start..start + count).map(|i| self.sample(i)).collect()
    }
}

/// Per-token 3×3 neighborhood features, zero-padded outside the grid.
pub fn extract_patches(cells: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut patches = vec![0.0; rows * cols * PATCH];
    for r in 0..rows {
        for c in 0..cols {
            let base = (r * cols + c) * PATCH;
            for pr in 0..MOTIF_SIDE {
                for pc in 0..MOTIF_SIDE {
                    let gr = r as isize + pr as isize - 1;
                    let gc = c as isize + pc as isize - 1;
                    if gr >= 0 && gr < rows as isize && gc >= 0 && gc < cols as isize {
                        patches[base + pr * MOTIF_SIDE + pc] = cells[gr as usize * cols + gc as usize];
                    }
                }
            }
        }
    }
    patches
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Ssa,
    LrfSsa,
    LrfDyn,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Ssa => "ssa",
            ModelKind::LrfSsa => "lrf_ssa",
            ModelKind::LrfDyn => "lrf_dyn",
        }
    }

    fn id(&self) -> f64 {
        match self {
            ModelKind::Ssa => 0.0,
            ModelKind::LrfSsa => 1.0,
            ModelKind::LrfDyn => 2.0,
        }
    }

    fn from_id(id: f64) -> Result<Self> {
        match id as i64 {
            0 => Ok(ModelKind::Ssa),
            1 => Ok(ModelKind::LrfSsa),
            2 => Ok(ModelKind::LrfDyn),
            other => Err(Error::Checkpoint(format!("unknown model kind id {other}"))),
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<ModelKind> {
        match s {
            "ssa" => Ok(ModelKind::Ssa),
            "lrf_ssa" => Ok(ModelKind::LrfSsa),
            "lrf_dyn" => Ok(ModelKind::LrfDyn),
            other => Err(Error::Domain(format!("unknown model kind '{other}'"))),
        }
    }
}

/// One-block spiking classifier: patch embedding, QKV (or V-only) spiking
/// projections, the selected attention mechanism, an output SN, mean-pool
/// and a linear head.
#[derive(Debug, Clone)]
pub struct ToyModel {
    pub kind: ModelKind,
    pub grid: TokenGrid,
    pub d: usize,
    pub classes: usize,
    pub timesteps: usize,
    pub dilations: Vec<usize>,
    pub scale: f64,
    pub lif: LifParams,
    pub surrogate: SurrogateSpec,
    /// Replace every spike layer with the identity (gradient checking).
    pub smooth: bool,
    pub w_embed: Vec<f64>,
    pub w_q: Vec<f64>,
    pub w_k: Vec<f64>,
    pub w_v: Vec<f64>,
    /// One tap-major 9×d kernel per dilation; empty for plain SSA.
    pub kernels: Vec<Vec<f64>>,
    /// Fixed (untrained) dendritic machinery for LRF-Dyn, normalized to a
    /// unit-L1 impulse response and unit per-channel gain.
    pub dendrite: Option<DendriticParams>,
    /// Trainable per-channel gain Γ applied to the scan output (LRF-Dyn).
    pub dyn_gain: Vec<f64>,
    pub w_head: Vec<f64>,
    pub b_head: Vec<f64>,
}

impl ToyModel {
    pub fn new(kind: ModelKind, task: &ToyTask, timesteps: usize, surrogate: SurrogateSpec, seed: u64) -> Result<Self> {
        if timesteps == 0 {
            return Err(Error::InvalidParam("need at least one timestep".into()));
        }
        let d = task.d_embed;
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x6d6f64656c));
        let uniform = |rng: &mut ChaCha8Rng, len: usize, a: f64| -> Vec<f64> {
            (0..len).map(|_| rng.random_range(-a..a)).collect()
        };
        // wide enough that the spiking layers fire at init: a silent network
        // has identically zero gradients through the multiplicative
        // attention block and never starts learning
        let w_embed = uniform(&mut rng, PATCH * d, 1.0);
        let b = 4.0 / (d as f64).sqrt();
        let (w_q, w_k) = if kind == ModelKind::LrfDyn {
            (Vec::new(), Vec::new())
        } else {
            (uniform(&mut rng, d * d, b), uniform(&mut rng, d * d, b))
        };
        let w_v = uniform(&mut rng, d * d, b);
        let dilations = if kind == ModelKind::Ssa { Vec::new() } else { vec![1, 2] };
        let kernels = dilations
            .iter()
            .map(|_| uniform(&mut rng, PATCH * d, 0.2))
            .collect();
        let (dendrite, dyn_gain) = if kind == ModelKind::LrfDyn {
            // normalize the random recurrence to a unit-L1 kernel so the
            // trainable gain controls the operating point
            let raw = synth::random_stable_dendritic(&mut rng, 4, d, 0.3);
            let kern = crate::dendrite::dyn_kernel(&raw, 64)?;
            let l1: f64 = kern.base.iter().map(|b| b.abs()).sum::<f64>().max(1e-12);
            let c_read: Vec<f64> = raw.c_read.iter().map(|c| c / l1).collect();
            let params = DendriticParams::new(
                raw.k,
                raw.m_trans.clone(),
                c_read,
                raw.gamma_in.clone(),
                vec![1.0; d],
                Some(raw.alpha_k.clone()),
            )?;
            (Some(params), vec![2.0; d])
        } else {
            (None, Vec::new())
        };
        let w_head = uniform(&mut rng, d * task.classes, 0.3);
        let b_head = vec![0.0; task.classes];
        Ok(ToyModel {
            kind,
            grid: task.grid.clone(),
            d,
            classes: task.classes,
            timesteps,
            dilations,
            scale: 1.0 / (d as f64).sqrt(),
            lif: LifParams::default(),
            surrogate,
            smooth: false,
            w_embed,
            w_q,
            w_k,
            w_v,
            kernels,
            dendrite,
            dyn_gain,
            w_head,
            b_head,
        })
    }

    pub fn with_smooth(mut self, smooth: bool) -> Self {
        self.smooth = smooth;
        self
    }

    fn n_tokens(&self) -> usize {
        self.grid.len()
    }

    /// Named trainable parameters, in a fixed order shared with `Grads`.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["w_embed".to_string()];
        if self.kind != ModelKind::LrfDyn {
            names.push("w_q".to_string());
            names.push("w_k".to_string());
        }
        names.push("w_v".to_string());
        for i in 0..self.kernels.len() {
            names.push(format!("kernel_{i}"));
        }
        if self.kind == ModelKind::LrfDyn {
            names.push("dyn_gain".to_string());
        }
        names.push("w_head".to_string());
        names.push("b_head".to_string());
        names
    }

    pub fn params(&self) -> Vec<(String, &Vec<f64>)> {
        let mut out = vec![("w_embed".to_string(), &self.w_embed)];
        if self.kind != ModelKind::LrfDyn {
            out.push(("w_q".to_string(), &self.w_q));
            out.push(("w_k".to_string(), &self.w_k));
        }
        out.push(("w_v".to_string(), &self.w_v));
        for (i, k) in self.kernels.iter().enumerate() {
            out.push((format!("kernel_{i}"), k));
        }
        if self.kind == ModelKind::LrfDyn {
            out.push(("dyn_gain".to_string(), &self.dyn_gain));
        }
        out.push(("w_head".to_string(), &self.w_head));
        out.push(("b_head".to_string(), &self.b_head));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out = vec![("w_embed".to_string(), &mut self.w_embed)];
        if self.kind != ModelKind::LrfDyn {
            out.push(("w_q".to_string(), &mut self.w_q));
            out.push(("w_k".to_string(), &mut self.w_k));
        }
        out.push(("w_v".to_string(), &mut self.w_v));
        for (i, k) in self.kernels.iter_mut().enumerate() {
            out.push((format!("kernel_{i}"), k));
        }
        if self.kind == ModelKind::LrfDyn {
            out.push(("dyn_gain".to_string(), &mut self.dyn_gain));
        }
        out.push(("w_head".to_string(), &mut self.w_head));
        out.push(("b_head".to_string(), &mut self.b_head));
        out
    }
}

/// Gradient accumulator matching `ToyModel::params` order.
#[derive(Debug, Clone)]
pub struct Grads {
    pub tensors: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(model: &ToyModel) -> Self {
        Grads {
            tensors: model.params().iter().map(|(_, p)| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            for v in t.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn zero(&mut self) {
        for t in &mut self.tensors {
            for v in t.iter_mut() {
                *v = 0.0;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// One LIF layer step for training: returns (membrane U, spikes S) and
/// advances the carried state H. Identity in smooth mode.
fn lif_train_step(h: &mut [f64], a: &[f64], lif: &LifParams, smooth: bool) -> (Vec<f64>, Vec<f64>) {
    if smooth {
        return (a.to_vec(), a.to_vec());
    }
    let mut u = vec![0.0; a.len()];
    let mut s = vec![0.0; a.len()];
    for i in 0..a.len() {
        u[i] = h[i] + a[i];
        s[i] = if u[i] >= lif.v_th { 1.0 } else { 0.0 };
        h[i] = lif.v_reset * s[i] + lif.tau * u[i] * (1.0 - s[i]);
    }
    (u, s)
}

/// Backward through one LIF step. `d_s` is the loss gradient w.r.t. the
/// spikes, `d_h` the carried gradient w.r.t. this step's outgoing state.
/// Returns the gradient w.r.t. the step input and overwrites `d_h` with the
/// carry for the previous step. The Θ derivative is the surrogate.
fn lif_train_backward(
    d_s: &[f64],
    d_h: &mut [f64],
    u: &[f64],
    lif: &LifParams,
    spec: &SurrogateSpec,
    smooth: bool,
) -> Vec<f64> {
    if smooth {
        return d_s.to_vec();
    }
    let mut d_in = vec![0.0; u.len()];
    for i in 0..u.len() {
        let s = if u[i] >= lif.v_th { 1.0 } else { 0.0 };
        let g = surrogate_grad(u[i], lif, spec);
        let dh_du = lif.tau * (1.0 - s) + (lif.v_reset - lif.tau * u[i]) * g;
        let du = d_s[i] * g + d_h[i] * dh_du;
        d_in[i] = du;
        d_h[i] = du;
    }
    d_in
}

/// Additive local term with the model's raw kernels (mirrors the inference
/// implementation but parameterized for training).
fn local_forward(
    v: &[f64],
    grid: &TokenGrid,
    d: usize,
    dilations: &[usize],
    kernels: &[Vec<f64>],
    out: &mut [f64],
) {
    for (dil, kernel) in dilations.iter().zip(kernels) {
        let dil = *dil as isize;
        for token in 0..grid.len() {
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

/// Backward of the local term: accumulates gradients w.r.t. the source
/// values and the kernel taps.
#[allow(clippy::too_many_arguments)]
fn local_backward(
    v: &[f64],
    d_out: &[f64],
    grid: &TokenGrid,
    d: usize,
    dilations: &[usize],
    kernels: &[Vec<f64>],
    d_v: &mut [f64],
    d_kernels: &mut [Vec<f64>],
) {
    for ((dil, kernel), d_kernel) in dilations.iter().zip(kernels).zip(d_kernels) {
        let dil = *dil as isize;
        for token in 0..grid.len() {
            for (tap, (di, dj)) in KERNEL_TAPS.iter().enumerate() {
                if let Some(src) = grid.neighbor_index(token, di * dil, dj * dil) {
                    let w = &kernel[tap * d..(tap + 1) * d];
                    let dw = &mut d_kernel[tap * d..(tap + 1) * d];
                    let g = &d_out[token * d..(token + 1) * d];
                    let vs = &v[src * d..(src + 1) * d];
                    let dvs = &mut d_v[src * d..(src + 1) * d];
                    for c in 0..d {
                        dvs[c] += w[c] * g[c];
                        dw[c] += vs[c] * g[c];
                    }
                }
            }
        }
    }
}

/// Exact adjoint of `dyn_scan`: gradient w.r.t. the token inputs given the
/// gradient w.r.t. the scan outputs, using a k×d adjoint state.
fn dyn_scan_backward(d_y: &[f64], d: usize, params: &DendriticParams) -> Vec<f64> {
    let k = params.k;
    let n = d_y.len() / d;
    let mut lam = vec![0.0; k * d];
    let mut lam_next = vec![0.0; k * d];
    let mut d_tokens = vec![0.0; n * d];
    for token in (0..n).rev() {
        // λ_n = Mᵀ λ_{n+1} + 𝒞 ⊗ (Γ ⊙ dY_n)
        for a in 0..k {
            let dst = &mut lam[a * d..(a + 1) * d];
            dst.iter_mut().for_each(|x| *x = 0.0);
            for b in 0..k {
                let m_ba = params.m_trans[b * k + a];
                if m_ba == 0.0 {
                    continue;
                }
                let src = &lam_next[b * d..(b + 1) * d];
                for c in 0..d {
                    dst[c] += m_ba * src[c];
                }
            }
            let cr = params.c_read[a];
            for c in 0..d {
                dst[c] += cr * params.big_gamma[c] * d_y[token * d + c];
            }
        }
        // ∂L/∂v_n[c] = Σ_a γ[a] λ_n[a,c]
        let dv = &mut d_tokens[token * d..(token + 1) * d];
        for c in 0..d {
            let mut acc = 0.0;
            for a in 0..k {
                acc += params.gamma_in[a] * lam[a * d + c];
            }
            dv[c] = acc;
        }
        std::mem::swap(&mut lam, &mut lam_next);
    }
    d_tokens
}

struct StepCache {
    u_q: Vec<f64>,
    u_k: Vec<f64>,
    u_v: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// KᵀV aggregate (SSA kinds) — reused in backward.
    g: Vec<f64>,
    /// Scan output before the per-channel gain (LRF-Dyn).
    h_base: Vec<f64>,
    /// Gained scan output (LRF-Dyn).
    h_scan: Vec<f64>,
    u_o: Vec<f64>,
    pooled: Vec<f64>,
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardCache {
    e: Vec<f64>,
    steps: Vec<StepCache>,
    /// Timestep-averaged class logits.
    pub logits: Vec<f64>,
}

impl ToyModel {
    /// Full forward pass; the returned cache carries every intermediate the
    /// backward pass reads.
    pub fn forward(&self, sample: &Sample) -> ForwardCache {
        let n = self.n_tokens();
        let d = self.d;
        debug_assert_eq!(sample.patches.len(), n * PATCH);
        let e = matmul(&sample.patches, &self.w_embed, n, PATCH, d);
        let has_qk = self.kind != ModelKind::LrfDyn;
        let a_q = if has_qk { matmul(&e, &self.w_q, n, d, d) } else { Vec::new() };
        let a_k = if has_qk { matmul(&e, &self.w_k, n, d, d) } else { Vec::new() };
        let a_v = matmul(&e, &self.w_v, n, d, d);

        let mut h_q = vec![0.0; n * d];
        let mut h_k = vec![0.0; n * d];
        let mut h_v = vec![0.0; n * d];
        let mut h_o = vec![0.0; n * d];
        let mut steps = Vec::with_capacity(self.timesteps);
        let mut logits = vec![0.0; self.classes];
        for _ in 0..self.timesteps {
            let (u_q, q) = if has_qk {
                lif_train_step(&mut h_q, &a_q, &self.lif, self.smooth)
            } else {
                (Vec::new(), Vec::new())
            };
            let (u_k, k) = if has_qk {
                lif_train_step(&mut h_k, &a_k, &self.lif, self.smooth)
            } else {
                (Vec::new(), Vec::new())
            };
            let (u_v, v) = lif_train_step(&mut h_v, &a_v, &self.lif, self.smooth);

            let (g, h_base, h_scan, mut pre) = match self.kind {
                ModelKind::Ssa | ModelKind::LrfSsa => {
                    let g = matmul_tn(&k, &v, n, d, d);
                    let mut pre = matmul(&q, &g, n, d, d);
                    for p in pre.iter_mut() {
                        *p *= self.scale;
                    }
                    if self.kind == ModelKind::LrfSsa {
                        local_forward(&v, &self.grid, d, &self.dilations, &self.kernels, &mut pre);
                    }
                    (g, Vec::new(), Vec::new(), pre)
                }
                ModelKind::LrfDyn => {
                    let params = self.dendrite.as_ref().expect("lrf_dyn model has dendrite params");
                    let h_base = dyn_scan(&v, d, params).expect("scan shapes fixed by construction");
                    let mut h_scan = h_base.clone();
                    for token in 0..n {
                        for c in 0..d {
                            h_scan[token * d + c] *= self.dyn_gain[c];
                        }
                    }
                    let mut pre = h_scan.clone();
                    local_forward(&h_scan, &self.grid, d, &self.dilations, &self.kernels, &mut pre);
                    (Vec::new(), h_base, h_scan, pre)
                }
            };
            pre.iter_mut().for_each(|p| debug_assert!(p.is_finite()));

            let (u_o, o) = lif_train_step(&mut h_o, &pre, &self.lif, self.smooth);
            let mut pooled = vec![0.0; d];
            for token in 0..n {
                for c in 0..d {
                    pooled[c] += o[token * d + c];
                }
            }
            for p in pooled.iter_mut() {
                *p /= n as f64;
            }
            for j in 0..self.classes {
                let mut z = self.b_head[j];
                for c in 0..d {
                    z += pooled[c] * self.w_head[c * self.classes + j];
                }
                logits[j] += z / self.timesteps as f64;
            }
            steps.push(StepCache { u_q, u_k, u_v, q, k, v, g, h_base, h_scan, u_o, pooled });
        }
        ForwardCache { e, steps, logits }
    }

    /// Mean firing rate of the (q, k, v, output) spike layers across
    /// timesteps — diagnostic for silent or saturated networks.
    pub fn spike_rates(&self, sample: &Sample) -> [f64; 4] {
        let cache = self.forward(sample);
        let mut rates = [0.0f64; 4];
        let mut counts = [0usize; 4];
        for step in &cache.steps {
            for (slot, spikes) in [(0, &step.q), (1, &step.k), (2, &step.v)] {
                rates[slot] += spikes.iter().sum::<f64>();
                counts[slot] += spikes.len();
            }
            let o_spikes = step.u_o.iter().filter(|&&u| u >= self.lif.v_th).count();
            rates[3] += o_spikes as f64;
            counts[3] += step.u_o.len();
        }
        for i in 0..4 {
            if counts[i] > 0 {
                rates[i] /= counts[i] as f64;
            }
        }
        rates
    }

    /// Softmax cross-entropy on the averaged logits.
    pub fn loss(&self, cache: &ForwardCache, label: usize) -> f64 {
        let max = cache.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + cache.logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        lse - cache.logits[label]
    }

    pub fn predict(&self, cache: &ForwardCache) -> usize {
        cache
            .logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Forward + full manual backward; gradients are accumulated into
    /// `grads`. Returns (loss, predicted class).
    pub fn loss_and_grads(&self, sample: &Sample, grads: &mut Grads) -> (f64, usize) {
        let n = self.n_tokens();
        let d = self.d;
        let has_qk = self.kind != ModelKind::LrfDyn;
        let cache = self.forward(sample);
        let loss = self.loss(&cache, sample.label);
        let predicted = self.predict(&cache);

        // dL/d(avg logits) = softmax(z) − one_hot(y)
        let max = cache.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = cache.logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        let mut d_logits: Vec<f64> = exp.iter().map(|e| e / total).collect();
        d_logits[sample.label] -= 1.0;

        // named gradient slots, in params() order
        let names = self.param_names();
        let slot = |name: &str| names.iter().position(|n| n == name).expect("known name");
        let i_embed = slot("w_embed");
        let i_v = slot("w_v");
        let i_head = slot("w_head");
        let i_bhead = slot("b_head");
        let (i_q, i_k) = if has_qk { (slot("w_q"), slot("w_k")) } else { (0, 0) };
        let kernel_base = if self.kernels.is_empty() { 0 } else { slot("kernel_0") };

        let mut d_a_q = vec![0.0; if has_qk { n * d } else { 0 }];
        let mut d_a_k = vec![0.0; if has_qk { n * d } else { 0 }];
        let mut d_a_v = vec![0.0; n * d];
        let mut carry_q = vec![0.0; n * d];
        let mut carry_k = vec![0.0; n * d];
        let mut carry_v = vec![0.0; n * d];
        let mut carry_o = vec![0.0; n * d];

        for step in cache.steps.iter().rev() {
            // head
            let d_z: Vec<f64> = d_logits.iter().map(|g| g / self.timesteps as f64).collect();
            for c in 0..d {
                for j in 0..self.classes {
                    grads.tensors[i_head][c * self.classes + j] += step.pooled[c] * d_z[j];
                }
            }
            for j in 0..self.classes {
                grads.tensors[i_bhead][j] += d_z[j];
            }
            let mut d_pooled = vec![0.0; d];
            for c in 0..d {
                for j in 0..self.classes {
                    d_pooled[c] += self.w_head[c * self.classes + j] * d_z[j];
                }
            }
            let mut d_o = vec![0.0; n * d];
            for token in 0..n {
                for c in 0..d {
                    d_o[token * d + c] = d_pooled[c] / n as f64;
                }
            }

            // output SN
            let d_pre = lif_train_backward(&d_o, &mut carry_o, &step.u_o, &self.lif, &self.surrogate, self.smooth);

            // attention block
            let (d_q, d_k, mut d_v) = match self.kind {
                ModelKind::Ssa | ModelKind::LrfSsa => {
                    let mut d_pre_global = d_pre.clone();
                    if self.kind == ModelKind::LrfSsa {
                        // the local term consumed d_pre directly
                        let mut d_v_local = vec![0.0; n * d];
                        let mut d_kern: Vec<Vec<f64>> = self.kernels.iter().map(|k| vec![0.0; k.len()]).collect();
                        local_backward(
                            &step.v,
                            &d_pre,
                            &self.grid,
                            d,
                            &self.dilations,
                            &self.kernels,
                            &mut d_v_local,
                            &mut d_kern,
                        );
                        for (i, dk) in d_kern.into_iter().enumerate() {
                            for (g, v) in grads.tensors[kernel_base + i].iter_mut().zip(dk) {
                                *g += v;
                            }
                        }
                        // global path below adds its own dV; start from local part
                        let mut d_v = d_v_local;
                        for p in d_pre_global.iter_mut() {
                            *p *= self.scale;
                        }
                        let d_q = matmul_nt(&d_pre_global, &step.g, n, d, d);
                        let d_g = matmul_tn(&step.q, &d_pre_global, n, d, d);
                        let d_k = matmul_nt(&step.v, &d_g, n, d, d);
                        let d_v_glob = matmul(&step.k, &d_g, n, d, d);
                        for (a, b) in d_v.iter_mut().zip(d_v_glob) {
                            *a += b;
                        }
                        (d_q, d_k, d_v)
                    } else {
                        for p in d_pre_global.iter_mut() {
                            *p *= self.scale;
                        }
                        let d_q = matmul_nt(&d_pre_global, &step.g, n, d, d);
                        let d_g = matmul_tn(&step.q, &d_pre_global, n, d, d);
                        let d_k = matmul_nt(&step.v, &d_g, n, d, d);
                        let d_v = matmul(&step.k, &d_g, n, d, d);
                        (d_q, d_k, d_v)
                    }
                }
                ModelKind::LrfDyn => {
                    let params = self.dendrite.as_ref().expect("lrf_dyn model has dendrite params");
                    // pre = h + local(h): gradient into h from both paths
                    let mut d_h = d_pre.clone();
                    let mut d_kern: Vec<Vec<f64>> = self.kernels.iter().map(|k| vec![0.0; k.len()]).collect();
                    local_backward(
                        &step.h_scan,
                        &d_pre,
                        &self.grid,
                        d,
                        &self.dilations,
                        &self.kernels,
                        &mut d_h,
                        &mut d_kern,
                    );
                    for (i, dk) in d_kern.into_iter().enumerate() {
                        for (g, v) in grads.tensors[kernel_base + i].iter_mut().zip(dk) {
                            *g += v;
                        }
                    }
                    // h = gain ⊙ h_base: split the gradient between the gain
                    // and the scan input
                    let i_gain = slot("dyn_gain");
                    let mut d_h_base = vec![0.0; n * d];
                    for token in 0..n {
                        for c in 0..d {
                            let idx = token * d + c;
                            grads.tensors[i_gain][c] += d_h[idx] * step.h_base[idx];
                            d_h_base[idx] = d_h[idx] * self.dyn_gain[c];
                        }
                    }
                    let d_v = dyn_scan_backward(&d_h_base, d, params);
                    (Vec::new(), Vec::new(), d_v)
                }
            };

            // projection SNs
            if has_qk {
                let dq_in = lif_train_backward(&d_q, &mut carry_q, &step.u_q, &self.lif, &self.surrogate, self.smooth);
                for (a, b) in d_a_q.iter_mut().zip(dq_in) {
                    *a += b;
                }
                let dk_in = lif_train_backward(&d_k, &mut carry_k, &step.u_k, &self.lif, &self.surrogate, self.smooth);
                for (a, b) in d_a_k.iter_mut().zip(dk_in) {
                    *a += b;
                }
            }
            let dv_in = lif_train_backward(&d_v, &mut carry_v, &step.u_v, &self.lif, &self.surrogate, self.smooth);
            for (a, b) in d_a_v.iter_mut().zip(dv_in) {
                *a += b;
            }
            // silence the unused warning when the block has no Q/K path
            let _ = &mut d_v;
        }

        // projections and embedding (their inputs are constant across time)
        let mut d_e = vec![0.0; n * d];
        if has_qk {
            let dwq = matmul_tn(&cache.e, &d_a_q, n, d, d);
            for (g, v) in grads.tensors[i_q].iter_mut().zip(dwq) {
                *g += v;
            }
            let dwk = matmul_tn(&cache.e, &d_a_k, n, d, d);
            for (g, v) in grads.tensors[i_k].iter_mut().zip(dwk) {
                *g += v;
            }
            for (a, b) in d_e.iter_mut().zip(matmul_nt(&d_a_q, &self.w_q, n, d, d)) {
                *a += b;
            }
            for (a, b) in d_e.iter_mut().zip(matmul_nt(&d_a_k, &self.w_k, n, d, d)) {
                *a += b;
            }
        }
        let dwv = matmul_tn(&cache.e, &d_a_v, n, d, d);
        for (g, v) in grads.tensors[i_v].iter_mut().zip(dwv) {
            *g += v;
        }
        for (a, b) in d_e.iter_mut().zip(matmul_nt(&d_a_v, &self.w_v, n, d, d)) {
            *a += b;
        }
        let dwe = matmul_tn(&sample.patches, &d_e, n, PATCH, d);
        for (g, v) in grads.tensors[i_embed].iter_mut().zip(dwe) {
            *g += v;
        }

        (loss, predicted)
    }
}

/// Mean loss and accuracy over a dataset (forward only).
pub fn evaluate(model: &ToyModel, samples: &[Sample]) -> (f64, f64) {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for s in samples {
        let cache = model.forward(s);
        loss += model.loss(&cache, s.label);
        if model.predict(&cache) == s.label {
            correct += 1;
        }
    }
    (loss / samples.len() as f64, correct as f64 / samples.len() as f64)
}

/// Compares analytic gradients against central finite differences on
/// `samples_per_run` randomly chosen parameter coordinates (at least 100
/// when the model has that many). Requires the smooth path.
pub fn grad_check(model: &ToyModel, sample: &Sample, epsilon: f64, seed: u64) -> Result<f64> {
    if !model.smooth {
        return Err(Error::InvalidParam("grad_check requires the smooth (non-spiking) path".into()));
    }
    if !(1e-6..=1e-4).contains(&epsilon) {
        return Err(Error::InvalidParam(format!("epsilon must lie in [1e-6, 1e-4], got {epsilon}")));
    }
    let mut grads = Grads::zeros_like(model);
    model.loss_and_grads(sample, &mut grads);
    if !grads.is_finite() {
        return Err(Error::Diverged("non-finite analytic gradient".into()));
    }

    let sizes: Vec<usize> = model.params().iter().map(|(_, p)| p.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = 100.min(total);
    let mut max_rel: f64 = 0.0;
    for _ in 0..count {
        let flat = rng.random_range(0..total);
        let (mut pi, mut idx) = (0usize, flat);
        while idx >= sizes[pi] {
            idx -= sizes[pi];
            pi += 1;
        }
        let probe = |delta: f64| -> f64 {
            let mut m = model.clone();
            m.params_mut()[pi].1[idx] += delta;
            let cache = m.forward(sample);
            m.loss(&cache, sample.label)
        };
        let numeric = (probe(epsilon) - probe(-epsilon)) / (2.0 * epsilon);
        let analytic = grads.tensors[pi][idx];
        if !numeric.is_finite() {
            return Err(Error::Diverged("non-finite finite-difference probe".into()));
        }
        if analytic.abs() < 1e-12 && numeric.abs() < 1e-12 {
            continue;
        }
        let rel = (analytic - numeric).abs() / f64::max(1e-6, analytic.abs() + numeric.abs());
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub surrogate: SurrogateSpec,
    pub timesteps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.15,
            momentum: 0.9,
            seed: 0,
            surrogate: SurrogateSpec::default(),
            timesteps: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParam("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParam("batch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParam("learning rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParam("momentum must lie in [0,1)".into()));
        }
        if self.timesteps == 0 {
            return Err(Error::InvalidParam("timesteps must be >= 1".into()));
        }
        Ok(())
    }
}

pub struct TrainOutcome {
    pub log: Vec<EpochStats>,
    pub model: ToyModel,
}

/// Minibatch SGD with momentum over the toy task. Deterministic for a fixed
/// (task, kind, cfg).
pub fn train_toy(task: &ToyTask, kind: ModelKind, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_set = task.dataset(0, task.train_samples);
    let test_set = task.dataset(task.train_samples, task.test_samples);
    let mut model = ToyModel::new(kind, task, cfg.timesteps, cfg.surrogate, cfg.seed)?;
    let mut grads = Grads::zeros_like(&model);
    let mut velocity: Vec<Vec<f64>> = grads.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0x73687566666c65));
    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut correct = 0usize;
        for batch in indices.chunks(cfg.batch_size) {
            grads.zero();
            for &i in batch {
                let (loss, predicted) = model.loss_and_grads(&train_set[i], &mut grads);
                if !loss.is_finite() {
                    return Err(Error::Diverged(format!("loss became non-finite at epoch {epoch}")));
                }
                epoch_loss += loss;
                if predicted == train_set[i].label {
                    correct += 1;
                }
            }
            grads.scale(1.0 / batch.len() as f64);
            if !grads.is_finite() {
                return Err(Error::Diverged(format!("gradient became non-finite at epoch {epoch}")));
            }
            for ((param, grad), vel) in model
                .params_mut()
                .into_iter()
                .zip(&grads.tensors)
                .zip(velocity.iter_mut())
            {
                for i in 0..grad.len() {
                    vel[i] = cfg.momentum * vel[i] + grad[i];
                    param.1[i] -= cfg.learning_rate * vel[i];
                }
            }
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let train_acc = correct as f64 / train_set.len() as f64;
        let (_, test_acc) = evaluate(&model, &test_set);
        log.push(EpochStats { epoch, train_loss, train_acc, test_acc });
    }
    Ok(TrainOutcome { log, model })
}

/// Trailing moving average of the per-epoch losses.
pub fn smoothed_losses(losses: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    losses
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let lo = i.saturating_sub(window - 1);
            let seg = &losses[lo..=i];
            seg.iter().sum::<f64>() / seg.len() as f64
        })
        .collect()
}

/// Largest consecutive rise of the window-smoothed loss over the final
/// `tail_frac` of epochs; ≤ 0 means monotone nonincreasing there.
pub fn max_smoothed_tail_rise(losses: &[f64], window: usize, tail_frac: f64) -> f64 {
    let smoothed = smoothed_losses(losses, window);
    let start = ((1.0 - tail_frac) * smoothed.len() as f64).floor() as usize;
    let tail = &smoothed[start.min(smoothed.len().saturating_sub(1))..];
    tail.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
}

/// CSV log: epoch, train_loss, train_acc, test_acc.
pub fn write_log_csv<W: IoWrite>(log: &[EpochStats], mut w: W) -> Result<()> {
    writeln!(w, "epoch,train_loss,train_acc,test_acc")?;
    for row in log {
        writeln!(
            w,
            "{},{:.12},{:.6},{:.6}",
            row.epoch, row.train_loss, row.train_acc, row.test_acc
        )?;
    }
    Ok(())
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"LRFKIT1\n";

fn write_entry<W: IoWrite>(w: &mut W, name: &str, dims: &[u64], data: &[f64]) -> Result<()> {
    let expect: u64 = dims.iter().product();
    debug_assert_eq!(expect as usize, data.len());
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_entry<R: IoRead>(r: &mut R) -> Result<(String, Vec<u64>, Vec<f64>)> {
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let name_len = u32::from_le_bytes(u32buf) as usize;
    if name_len > 1024 {
        return Err(Error::Checkpoint("entry name too long".into()));
    }
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
    r.read_exact(&mut u32buf)?;
    let ndim = u32::from_le_bytes(u32buf) as usize;
    if ndim > 8 {
        return Err(Error::Checkpoint("too many dimensions".into()));
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut u64buf = [0u8; 8];
    for _ in 0..ndim {
        r.read_exact(&mut u64buf)?;
        dims.push(u64::from_le_bytes(u64buf));
    }
    let len: u64 = dims.iter().product();
    if len > 16_000_000 {
        return Err(Error::Checkpoint("entry too large".into()));
    }
    let mut data = Vec::with_capacity(len as usize);
    for _ in 0..len {
        r.read_exact(&mut u64buf)?;
        data.push(f64::from_le_bytes(u64buf));
    }
    Ok((name, dims, data))
}

/// Serializes the model as named parameter arrays behind the "LRFKIT1"
/// header. Fixed (untrained) dendritic arrays are included so the model
/// reloads bit-identically.
pub fn save_checkpoint<P: AsRef<Path>>(model: &ToyModel, path: P) -> Result<()> {
    let mut entries: Vec<(String, Vec<u64>, Vec<f64>)> = Vec::new();
    let surr_kind = match model.surrogate.kind {
        crate::neuron::SurrogateKind::Rectangular => 0.0,
        crate::neuron::SurrogateKind::SigmoidDerivative => 1.0,
    };
    let mut meta = vec![
        model.kind.id(),
        model.d as f64,
        model.classes as f64,
        model.grid.rows as f64,
        model.grid.cols as f64,
        model.timesteps as f64,
        model.scale,
        model.lif.v_th,
        model.lif.v_reset,
        model.lif.tau,
        surr_kind,
        model.surrogate.width,
        model.dilations.len() as f64,
    ];
    meta.extend(model.dilations.iter().map(|&x| x as f64));
    let meta_len = meta.len() as u64;
    entries.push(("meta".to_string(), vec![meta_len], meta));
    entries.push((
        "w_embed".to_string(),
        vec![PATCH as u64, model.d as u64],
        model.w_embed.clone(),
    ));
    if model.kind != ModelKind::LrfDyn {
        entries.push(("w_q".to_string(), vec![model.d as u64, model.d as u64], model.w_q.clone()));
        entries.push(("w_k".to_string(), vec![model.d as u64, model.d as u64], model.w_k.clone()));
    }
    entries.push(("w_v".to_string(), vec![model.d as u64, model.d as u64], model.w_v.clone()));
    for (i, kern) in model.kernels.iter().enumerate() {
        entries.push((format!("kernel_{i}"), vec![PATCH as u64, model.d as u64], kern.clone()));
    }
    if let Some(p) = &model.dendrite {
        entries.push(("dyn_m".to_string(), vec![p.k as u64, p.k as u64], p.m_trans.clone()));
        entries.push(("dyn_c".to_string(), vec![p.k as u64], p.c_read.clone()));
        entries.push(("dyn_gamma".to_string(), vec![p.k as u64], p.gamma_in.clone()));
        entries.push(("dyn_big_gamma".to_string(), vec![p.channels() as u64], p.big_gamma.clone()));
        entries.push(("dyn_alpha".to_string(), vec![p.k as u64], p.alpha_k.clone()));
        entries.push(("dyn_gain".to_string(), vec![model.d as u64], model.dyn_gain.clone()));
    }
    entries.push((
        "w_head".to_string(),
        vec![model.d as u64, model.classes as u64],
        model.w_head.clone(),
    ));
    entries.push(("b_head".to_string(), vec![model.classes as u64], model.b_head.clone()));

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, dims, data) in &entries {
        write_entry(&mut w, name, dims, data)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a "LRFKIT1" checkpoint back into a model.
pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<ToyModel> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic; not an LRFKIT1 checkpoint".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    if count > 1024 {
        return Err(Error::Checkpoint("too many entries".into()));
    }
    let mut entries = std::collections::HashMap::new();
    for _ in 0..count {
        let (name, dims, data) = read_entry(&mut r)?;
        entries.insert(name, (dims, data));
    }
    let take = |entries: &mut std::collections::HashMap<String, (Vec<u64>, Vec<f64>)>, name: &str| -> Result<Vec<f64>> {
        entries
            .remove(name)
            .map(|(_, data)| data)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry '{name}'")))
    };
    let meta = take(&mut entries, "meta")?;
    if meta.len() < 13 {
        return Err(Error::Checkpoint("meta entry truncated".into()));
    }
    let kind = ModelKind::from_id(meta[0])?;
    let d = meta[1] as usize;
    let classes = meta[2] as usize;
    let grid = TokenGrid::new(meta[3] as usize, meta[4] as usize)?;
    let timesteps = meta[5] as usize;
    let scale = meta[6];
    let lif = LifParams::new(meta[7], meta[8], meta[9])?;
    let surrogate = SurrogateSpec::new(
        if meta[10] == 0.0 {
            crate::neuron::SurrogateKind::Rectangular
        } else {
            crate::neuron::SurrogateKind::SigmoidDerivative
        },
        meta[11],
    )?;
    let n_dil = meta[12] as usize;
    if meta.len() != 13 + n_dil {
        return Err(Error::Checkpoint("dilation list truncated".into()));
    }
    let dilations: Vec<usize> = meta[13..].iter().map(|&x| x as usize).collect();

    let w_embed = take(&mut entries, "w_embed")?;
    let (w_q, w_k) = if kind != ModelKind::LrfDyn {
        (take(&mut entries, "w_q")?, take(&mut entries, "w_k")?)
    } else {
        (Vec::new(), Vec::new())
    };
    let w_v = take(&mut entries, "w_v")?;
    let mut kernels = Vec::with_capacity(n_dil);
    for i in 0..n_dil {
        kernels.push(take(&mut entries, &format!("kernel_{i}"))?);
    }
    let (dendrite, dyn_gain) = if kind == ModelKind::LrfDyn {
        let m = take(&mut entries, "dyn_m")?;
        let c = take(&mut entries, "dyn_c")?;
        let g = take(&mut entries, "dyn_gamma")?;
        let bg = take(&mut entries, "dyn_big_gamma")?;
        let a = take(&mut entries, "dyn_alpha")?;
        let gain = take(&mut entries, "dyn_gain")?;
        let k = c.len();
        (Some(DendriticParams::new(k, m, c, g, bg, Some(a))?), gain)
    } else {
        (None, Vec::new())
    };
    let w_head = take(&mut entries, "w_head")?;
    let b_head = take(&mut entries, "b_head")?;

    let model = ToyModel {
        kind,
        grid,
        d,
        classes,
        timesteps,
        dilations,
        scale,
        lif,
        surrogate,
        smooth: false,
        w_embed,
        w_q,
        w_k,
        w_v,
        kernels,
        dendrite,
        dyn_gain,
        w_head,
        b_head,
    };
    // shape sanity
    if model.w_embed.len() != PATCH * d || model.w_head.len() != d * classes || model.b_head.len() != classes {
        return Err(Error::Checkpoint("parameter shapes inconsistent with meta".into()));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_task() -> ToyTask {
        ToyTask {
            grid: TokenGrid::new(4, 4).unwrap(),
            d_embed: 8,
            train_samples: 64,
            test_samples: 32,
            ..ToyTask::default()
        }
    }

    #[test]
    fn samples_are_reproducible_and_balanced() {
        let task = ToyTask::default();
        let a = task.sample(17);
        let b = task.sample(17);
        assert_eq!(a.cells, b.cells);
        assert_eq!(a.label, 17 % 4);
        let other = ToyTask { seed: 1, ..ToyTask::default() };
        assert_ne!(other.sample(17).cells, a.cells);
    }

    #[test]
    fn motif_box_is_clean() {
        // with zero noise, the grid holds exactly the motif cells
        let task = ToyTask { noise_p: 0.0, ..ToyTask::default() };
        for idx in 0..8 {
            let s = task.sample(idx);
            let ones = s.cells.iter().filter(|&&v| v == 1.0).count();
            let motif_ones = MOTIFS[s.label].iter().filter(|&&v| v == 1).count();
            assert_eq!(ones, motif_ones, "index {idx}");
        }
    }

    #[test]
    fn patch_extraction_oracle() {
        // 2×3 grid, cell values = index+1 for traceability
        let cells: Vec<f64> = (1..=6).map(|v| v as f64).collect();
        let patches = extract_patches(&cells, 2, 3);
        // token 0 = (0,0): rows -1..1, cols -1..1
        let p0 = &patches[0..9];
        assert_eq!(p0, &[0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 4.0, 5.0]);
        // token 4 = (1,1): full in-range except bottom row
        let p4 = &patches[4 * 9..5 * 9];
        assert_eq!(p4, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn quadratic_probe_linear_layer() {
        // L(W) = ½|Wx|²: analytic grad (Wx)xᵀ vs central differences
        let x = [0.3, -0.7, 1.1];
        let mut w = vec![0.2, -0.4, 0.5, 0.9, 0.1, -0.3];
        let loss = |w: &[f64]| -> f64 {
            let y0 = w[0] * x[0] + w[1] * x[1] + w[2] * x[2];
            let y1 = w[3] * x[0] + w[4] * x[1] + w[5] * x[2];
            0.5 * (y0 * y0 + y1 * y1)
        };
        let y = [
            w[0] * x[0] + w[1] * x[1] + w[2] * x[2],
            w[3] * x[0] + w[4] * x[1] + w[5] * x[2],
        ];
        let eps = 1e-5;
        for i in 0..6 {
            let analytic = y[i / 3] * x[i % 3];
            let orig = w[i];
            w[i] = orig + eps;
            let hi = loss(&w);
            w[i] = orig - eps;
            let lo = loss(&w);
            w[i] = orig;
            let numeric = (hi - lo) / (2.0 * eps);
            let rel = (analytic - numeric).abs() / f64::max(1e-6, analytic.abs() + numeric.abs());
            assert!(rel <= 1e-8, "coordinate {i}: rel {rel}");
        }
    }

    #[test]
    fn grad_check_smooth_paths() {
        let task = small_task();
        let sample = task.sample(3);
        for kind in [ModelKind::Ssa, ModelKind::LrfSsa, ModelKind::LrfDyn] {
            let model = ToyModel::new(kind, &task, 2, SurrogateSpec::default(), 5)
                .unwrap()
                .with_smooth(true);
            let err = grad_check(&model, &sample, 1e-5, 42).unwrap();
            assert!(err <= 1e-4, "{kind:?}: max rel error {err}");
        }
    }

    #[test]
    fn grad_check_requires_smooth() {
        let task = small_task();
        let model = ToyModel::new(ModelKind::Ssa, &task, 2, SurrogateSpec::default(), 5).unwrap();
        assert!(grad_check(&model, &task.sample(0), 1e-5, 0).is_err());
    }

    #[test]
    fn zero_input_gives_zero_gradient_for_linear_params() {
        let task = small_task();
        let model = ToyModel::new(ModelKind::LrfSsa, &task, 2, SurrogateSpec::default(), 5)
            .unwrap()
            .with_smooth(true);
        let n = task.grid.len();
        let sample = Sample {
            cells: vec![0.0; n],
            patches: vec![0.0; n * PATCH],
            label: 1,
        };
        let mut grads = Grads::zeros_like(&model);
        model.loss_and_grads(&sample, &mut grads);
        let names = model.param_names();
        for (name, g) in names.iter().zip(&grads.tensors) {
            if name == "b_head" {
                assert!(g.iter().any(|&v| v != 0.0), "bias grad should be nonzero");
            } else {
                assert!(g.iter().all(|&v| v == 0.0), "{name} should have zero grad");
            }
        }
    }

    #[test]
    fn surrogate_backward_matches_surrogate_grad_pointwise() {
        let lif = LifParams::default();
        let spec = SurrogateSpec::default();
        let u = vec![-0.5, 0.3, 1.0, 1.7];
        let d_s = vec![1.0; 4];
        let mut d_h = vec![0.0; 4];
        let d_in = lif_train_backward(&d_s, &mut d_h, &u, &lif, &spec, false);
        for i in 0..4 {
            assert_abs_diff_eq!(d_in[i], surrogate_grad(u[i], &lif, &spec), epsilon = 1e-15);
        }
    }

    #[test]
    fn untrained_model_is_at_chance() {
        // a single random init can correlate weakly with the labels, so
        // average the accuracy across several seeds
        let task = ToyTask::default();
        let test = task.dataset(task.train_samples, 512);
        let mut mean = 0.0;
        for seed in 0..5 {
            let model = ToyModel::new(ModelKind::LrfDyn, &task, 2, SurrogateSpec::default(), seed).unwrap();
            let (_, acc) = evaluate(&model, &test);
            mean += acc / 5.0;
        }
        assert!((mean - 0.25).abs() <= 0.06, "chance-level accuracy, got {mean}");
    }

    #[test]
    fn training_is_deterministic() {
        let task = small_task();
        let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
        let a = train_toy(&task, ModelKind::LrfSsa, &cfg).unwrap();
        let b = train_toy(&task, ModelKind::LrfSsa, &cfg).unwrap();
        for (x, y) in a.log.iter().zip(&b.log) {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
            assert_eq!(x.test_acc.to_bits(), y.test_acc.to_bits());
        }
    }

    #[test]
    fn short_training_reduces_loss() {
        let task = ToyTask {
            train_samples: 256,
            test_samples: 64,
            ..ToyTask::default()
        };
        let cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
        let out = train_toy(&task, ModelKind::LrfSsa, &cfg).unwrap();
        assert!(
            out.log.last().unwrap().train_loss < out.log[0].train_loss,
            "loss should drop: {:?}",
            out.log.iter().map(|e| e.train_loss).collect::<Vec<_>>()
        );
    }

    #[test]
    fn checkpoint_round_trip() {
        let task = small_task();
        let model = ToyModel::new(ModelKind::LrfDyn, &task, 2, SurrogateSpec::default(), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.lrfkit");
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.kind, model.kind);
        assert_eq!(loaded.w_embed, model.w_embed);
        assert_eq!(loaded.kernels, model.kernels);
        let s = task.sample(1);
        let a = model.forward(&s);
        let b = loaded.forward(&s);
        assert_eq!(a.logits, b.logits);
    }

    #[test]
    fn checkpoint_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.lrfkit");
        std::fs::write(&path, b"NOTLRF00garbage").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn smoothing_helpers() {
        let losses = vec![5.0, 4.0, 3.0, 2.5, 2.0, 1.9, 1.8, 1.8, 1.7, 1.6];
        let s = smoothed_losses(&losses, 3);
        assert_abs_diff_eq!(s[0], 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s[2], 4.0, epsilon = 1e-15);
        assert!(max_smoothed_tail_rise(&losses, 5, 0.8) <= 0.0);
        let bumpy = vec![5.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 3.0];
        assert!(max_smoothed_tail_rise(&bumpy, 5, 0.8) > 0.0);
    }

    #[test]
    fn csv_log_shape() {
        let log = vec![EpochStats {
            epoch: 0,
            train_loss: 1.5,
            train_acc: 0.5,
            test_acc: 0.4,
        }];
        let mut buf = Vec::new();
        write_log_csv(&log, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "epoch,train_loss,train_acc,test_acc");
        assert!(lines.next().unwrap().starts_with("0,1.5"));
    }
}
