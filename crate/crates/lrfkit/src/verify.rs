//! Named verification suites over the library's invariants: algebraic
//! equivalences, the receptive-radius/entropy grids, closed-form constants
//! and the streaming-memory accounting. The CLI `verify` command and the
//! acceptance harness both run these; each check reports a measured
//! residual against a pinned tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{
    check_theorem1, check_theorem2, closed_form_entropy_vsa, closed_form_mu, entropy, model_weights,
    uniform_local_weights, DistanceModel, MuKind, WeightKind,
};
use crate::attention::{lrf_local_term, lrf_ssa_causal, ssa_linear, ssa_quadratic, LrfConfig};
use crate::dendrite::{dyn_fft, dyn_kernel, dyn_scan};
use crate::membench::{self, Mode};
use crate::synth;
use crate::tensor::{Shape4, TokenGrid};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub residual: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, residual: f64, tolerance: f64, detail: String) -> Self {
        CheckResult {
            name: name.to_string(),
            passed: residual <= tolerance,
            residual,
            tolerance,
            detail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    All,
    Attention,
    Dyn,
    Analysis,
    Membench,
}

impl std::str::FromStr for Scope {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Scope> {
        match s {
            "all" => Ok(Scope::All),
            "attention" => Ok(Scope::Attention),
            "dyn" => Ok(Scope::Dyn),
            "analysis" => Ok(Scope::Analysis),
            "membench" => Ok(Scope::Membench),
            other => Err(crate::Error::Domain(format!("unknown scope '{other}'"))),
        }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Quadratic vs linear SSA over 100 seeded random spike triples.
pub fn ssa_associativity_check() -> CheckResult {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=64);
        let d = rng.random_range(1..=32);
        let t = rng.random_range(1..=4);
        let shape = Shape4::new(t, 1, n, d).expect("positive dims");
        let q = synth::random_spikes(&mut rng, shape, 0.3);
        let k = synth::random_spikes(&mut rng, shape, 0.3);
        let v = synth::random_spikes(&mut rng, shape, 0.3);
        let s = LrfConfig::default_scale(d);
        let quad = ssa_quadratic(&q, &k, &v, s).expect("matching shapes");
        let lin = ssa_linear(&q, &k, &v, s).expect("matching shapes");
        worst = worst.max(max_abs_diff(&quad.data, &lin.data));
    }
    CheckResult::new("ssa_associativity", worst, 1e-9, "100 seeds, N<=64, d<=32, T<=4".into())
}

/// Streaming causal LRF-SSA vs a brute-force causal oracle (explicit
/// triple loop) on 50 seeds, 4×4 grid, d = 8.
pub fn causal_decomposition_check() -> CheckResult {
    let grid = TokenGrid::new(4, 4).expect("static dims");
    let (n, d) = (16usize, 8usize);
    let shape = Shape4::new(1, 1, n, d).expect("positive dims");
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let q = synth::random_spikes(&mut rng, shape, 0.3);
        let k = synth::random_spikes(&mut rng, shape, 0.3);
        let v = synth::random_spikes(&mut rng, shape, 0.3);
        let cfg = synth::random_lrf_config(&mut rng, vec![1, 2], LrfConfig::default_scale(d), d);
        let streamed = lrf_ssa_causal(&q, &k, &v, &grid, &cfg).expect("matching shapes");

        // oracle: out[i] = s·Σ_{j<=i} (q_i·k_j)·v_j + local(V)
        let (qs, ks, vs) = (q.slice(0, 0), k.slice(0, 0), v.slice(0, 0));
        let mut oracle = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..=i {
                let mut dot = 0.0;
                for a in 0..d {
                    dot += qs[i * d + a] * ks[j * d + a];
                }
                for c in 0..d {
                    oracle[i * d + c] += cfg.scale * dot * vs[j * d + c];
                }
            }
        }
        let local = lrf_local_term(&v, &grid, &cfg).expect("matching shapes");
        for (o, l) in oracle.iter_mut().zip(local.slice(0, 0)) {
            *o += *l;
        }
        worst = worst.max(max_abs_diff(streamed.slice(0, 0), &oracle));
    }
    CheckResult::new("causal_decomposition", worst, 1e-9, "50 seeds, 4x4 grid, d=8".into())
}

/// LRF-SSA with all-zero kernels must reduce to plain SSA.
pub fn zero_kernel_degeneracy_check() -> CheckResult {
    let grid = TokenGrid::new(4, 4).expect("static dims");
    let shape = Shape4::new(2, 1, 16, 8).expect("positive dims");
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let q = synth::random_spikes(&mut rng, shape, 0.3);
    let k = synth::random_spikes(&mut rng, shape, 0.3);
    let v = synth::random_spikes(&mut rng, shape, 0.3);
    let cfg = LrfConfig::zero(vec![3, 5], LrfConfig::default_scale(8), 8).expect("valid config");
    let out = crate::attention::lrf_ssa(&q, &k, &v, &grid, &cfg, &crate::neuron::LifParams::default())
        .expect("matching shapes");
    let plain = ssa_linear(&q, &k, &v, cfg.scale).expect("matching shapes");
    let residual = max_abs_diff(&out.pre_sn.data, &plain.data);
    CheckResult::new("zero_kernel_degeneracy", residual, 1e-12, "zero local kernels".into())
}

/// Scan vs FFT over N ∈ {8, 64, 256, 1024}, 20 stable parameterizations
/// each. `perturb_tap` (test fixture) injects an error into the kernel path
/// to prove the check can fail.
pub fn scan_fft_duality_check(perturb_tap: Option<f64>) -> CheckResult {
    let cases = [(8usize, 4usize), (64, 16), (256, 32), (1024, 64)];
    let k = 8;
    let mut worst: f64 = 0.0;
    for (case_idx, &(n, d)) in cases.iter().enumerate() {
        for rep in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(5000 + case_idx as u64 * 100 + rep);
            let params = synth::random_stable_dendritic(&mut rng, k, d, 0.95);
            let shape = Shape4::new(1, 1, n, d).expect("positive dims");
            let x = synth::random_dense(&mut rng, shape, -1.0, 1.0);
            let scan = dyn_scan(x.slice(0, 0), d, &params).expect("valid shapes");
            let mut fft = dyn_fft(x.slice(0, 0), d, &params).expect("valid shapes");
            if let Some(eps) = perturb_tap {
                fft[0] += eps;
            }
            let scale = scan.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
            worst = worst.max(max_abs_diff(&scan, &fft) / scale);
        }
    }
    CheckResult::new(
        "scan_fft_duality",
        worst,
        1e-6,
        "N in {8,64,256,1024}, k=8, 20 stable parameterizations each".into(),
    )
}

/// Kernel taps must decay within the spectral-radius envelope.
pub fn kernel_decay_check() -> CheckResult {
    let mut failures = 0usize;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + seed);
        let params = synth::random_stable_dendritic(&mut rng, 8, 4, 0.95);
        let kernel = dyn_kernel(&params, 256).expect("positive length");
        if !kernel.decays_within(params.rho_upper(), 128) {
            failures += 1;
        }
    }
    CheckResult::new("kernel_decay", failures as f64, 0.0, "20 seeds, 256-tap kernels".into())
}

/// Strict causality of the scan: perturbing token j never changes outputs
/// before j.
pub fn scan_causality_check() -> CheckResult {
    let (n, d) = (32usize, 8usize);
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(11_000 + seed);
        let params = synth::random_stable_dendritic(&mut rng, 4, d, 0.95);
        let shape = Shape4::new(1, 1, n, d).expect("positive dims");
        let x = synth::random_dense(&mut rng, shape, -1.0, 1.0);
        let base = dyn_scan(x.slice(0, 0), d, &params).expect("valid shapes");
        let j = rng.random_range(1..n);
        let mut bumped = x.slice(0, 0).to_vec();
        bumped[j * d] += 10.0;
        let out = dyn_scan(&bumped, d, &params).expect("valid shapes");
        worst = worst.max(max_abs_diff(&base[..j * d], &out[..j * d]));
    }
    CheckResult::new("scan_causality", worst, 0.0, "10 seeds, perturbation at a random position".into())
}

/// The (α, β, N, λ, radius) grid shared by the two theorem checks.
pub fn theorem_grid() -> Vec<(DistanceModel, f64, usize)> {
    let mut grid = Vec::new();
    for &beta in &[0.005, 0.01, 0.05, 0.1] {
        for &n in &[32usize, 100, 256] {
            for &lambda in &[0.1, 0.5, 0.9] {
                for &radius in &[1usize, 2, 4] {
                    let model = DistanceModel::new(1.0, beta, n).expect("valid grid point");
                    grid.push((model, lambda, radius));
                }
            }
        }
    }
    grid
}

/// Receptive-radius ordering μ_vsa ≤ μ_lrf ≤ μ_ssa and the convex identity
/// over the full grid. Zero failures required.
pub fn theorem1_grid_check() -> CheckResult {
    let grid = theorem_grid();
    let total = grid.len();
    let mut vsa_failures = 0usize;
    let mut ssa_failures = 0usize;
    let mut identity_failures = 0usize;
    for (model, lambda, radius) in grid {
        let rep = check_theorem1(&model, lambda, radius).expect("valid grid point");
        if !rep.vsa_le_lrf {
            vsa_failures += 1;
        }
        if !rep.lrf_le_ssa {
            ssa_failures += 1;
        }
        if rep.identity_residual > 1e-12 {
            identity_failures += 1;
        }
    }
    let failures = vsa_failures + ssa_failures + identity_failures;
    CheckResult::new(
        "theorem1_grid",
        failures as f64,
        0.0,
        format!(
            "{total} grid points; vsa<=lrf failures: {vsa_failures}, lrf<=ssa failures: {ssa_failures}, identity failures: {identity_failures}"
        ),
    )
}

/// Chain-rule entropy bound on the full grid, ordering under the premise,
/// and the closed-form entropy sweep.
pub fn theorem2_grid_check() -> CheckResult {
    let grid = theorem_grid();
    let total = grid.len();
    let mut bound_failures = 0usize;
    let mut ordering_failures = 0usize;
    let mut premise_points = 0usize;
    for (model, lambda, radius) in grid {
        let local = uniform_local_weights(radius, model.n);
        let rep = check_theorem2(&model, lambda, &local).expect("valid grid point");
        if !rep.bound_holds {
            bound_failures += 1;
        }
        if rep.premise_holds {
            premise_points += 1;
            if !rep.ordering_holds {
                ordering_failures += 1;
            }
        }
    }
    let mut entropy_worst: f64 = 0.0;
    for n in 2..=200usize {
        for &r in &[0.1, 0.3, 0.5, 0.7, 0.9] {
            let model = DistanceModel::new(1.0, -(r as f64).ln(), n).expect("valid model");
            let closed = closed_form_entropy_vsa(&model, false).expect("r in (0,1)");
            let numeric = entropy(&model_weights(&model, WeightKind::Vsa)).expect("positive weights");
            entropy_worst = entropy_worst.max((closed - numeric).abs());
        }
    }
    let entropy_failures = usize::from(entropy_worst > 1e-9);
    let failures = bound_failures + ordering_failures + entropy_failures;
    CheckResult::new(
        "theorem2_grid",
        failures as f64,
        0.0,
        format!(
            "{total} grid points; bound failures: {bound_failures}, ordering failures under premise ({premise_points} points): {ordering_failures}, closed-form entropy max err: {entropy_worst:.3e}"
        ),
    )
}

/// Infinite-limit μ closed form against the truncated series (10⁶ terms).
pub fn closed_form_mu_check() -> CheckResult {
    let mut worst: f64 = 0.0;
    let mut ln2_err = 0.0;
    for &beta in &[3.0f64.ln(), 2.0f64.ln(), 0.1] {
        let model = DistanceModel::new(1.0, beta, 8).expect("valid model");
        let mu = closed_form_mu(&model, MuKind::VsaInf).expect("beta > 0");
        let r = (-beta).exp();
        let mut num = 0.0;
        let mut den = 0.0;
        let mut w = 1.0;
        for delta in 0..1_000_000usize {
            num += delta as f64 * w;
            den += w;
            w *= r;
        }
        let series = num / den;
        worst = worst.max((mu - series).abs());
        if (beta - 2.0f64.ln()).abs() < 1e-15 {
            ln2_err = (mu - 1.0).abs();
        }
    }
    CheckResult::new(
        "closed_form_mu",
        worst.max(ln2_err),
        1e-6,
        "beta in {ln 3, ln 2, 0.1}; series truncation 1e6; ln 2 case pinned to 1.0".into(),
    )
}

/// Exact peak-state accounting across the acceptance sweep, the pinned
/// d=512/k=8 ratio, and streaming-vs-batch agreement.
pub fn membench_suite() -> Vec<CheckResult> {
    let mut results = Vec::new();

    let mut mismatches = 0usize;
    let mut configs = 0usize;
    for &n in &[16usize, 64, 256] {
        for &d in &[64usize, 256, 512] {
            let grid = TokenGrid::new(1, n).expect("positive dims");
            for mode in Mode::ALL {
                configs += 1;
                let p = membench::profile(mode, n, d, 8, &grid, &[1, 2]).expect("valid profile");
                if p.peak_state_values != membench::predicted_peak(mode, n, d, 8) {
                    mismatches += 1;
                }
            }
        }
    }
    results.push(CheckResult::new(
        "peak_state_exact",
        mismatches as f64,
        0.0,
        format!("{configs} (mode, n, d) configurations"),
    ));

    let grid = TokenGrid::new(1, 16).expect("positive dims");
    let ssa = membench::profile(Mode::SsaV2, 16, 512, 8, &grid, &[]).expect("valid profile");
    let dynp = membench::profile(Mode::LrfDyn, 16, 512, 8, &grid, &[1]).expect("valid profile");
    let ratio = ssa.peak_state_values as f64 / dynp.peak_state_values as f64;
    results.push(CheckResult::new(
        "ratio_d512_k8",
        (ratio - 64.0).abs(),
        0.0,
        format!("d^2 / kd = {ratio}"),
    ));

    // streaming vs batch across all modes
    let grid = TokenGrid::new(4, 6).expect("positive dims");
    let (n, d, k) = (24usize, 6usize, 4usize);
    let (q, kk, v, x) = membench::synthetic_inputs(21, n, d);
    let scale = LrfConfig::default_scale(d);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let cfg = synth::random_lrf_config(&mut rng, vec![1, 2], scale, d);
    let params = synth::random_stable_dendritic(&mut rng, k, d, 0.95);
    let mut counter = membench::Counter::new();
    let mut worst: f64 = 0.0;

    let streamed = membench::stream_ssa_v1_slice(q.slice(0, 0), kk.slice(0, 0), v.slice(0, 0), n, d, scale, &mut counter);
    let batch = ssa_quadratic(&q, &kk, &v, scale).expect("matching shapes");
    worst = worst.max(max_abs_diff(&streamed, batch.slice(0, 0)));

    let streamed = membench::stream_ssa_v2_slice(q.slice(0, 0), kk.slice(0, 0), v.slice(0, 0), n, d, scale, &mut counter);
    let batch = ssa_linear(&q, &kk, &v, scale).expect("matching shapes");
    worst = worst.max(max_abs_diff(&streamed, batch.slice(0, 0)));

    let streamed =
        membench::stream_lrf_ssa_causal_slice(q.slice(0, 0), kk.slice(0, 0), v.slice(0, 0), &grid, &cfg, &mut counter);
    let batch = lrf_ssa_causal(&q, &kk, &v, &grid, &cfg).expect("matching shapes");
    worst = worst.max(max_abs_diff(&streamed, batch.slice(0, 0)));

    let streamed = membench::stream_lrf_dyn_slice(x.slice(0, 0), &grid, &params, &cfg, &mut counter);
    let batch = crate::dendrite::lrf_dyn(&x, &grid, &params, &cfg, &crate::neuron::LifParams::default())
        .expect("matching shapes");
    worst = worst.max(max_abs_diff(&streamed, batch.pre_sn.slice(0, 0)));

    results.push(CheckResult::new(
        "streaming_matches_batch",
        worst,
        1e-9,
        "all four modes on one seeded input".into(),
    ));
    results
}

pub fn attention_suite() -> Vec<CheckResult> {
    vec![
        ssa_associativity_check(),
        causal_decomposition_check(),
        zero_kernel_degeneracy_check(),
    ]
}

pub fn dyn_suite() -> Vec<CheckResult> {
    vec![
        scan_fft_duality_check(None),
        kernel_decay_check(),
        scan_causality_check(),
    ]
}

pub fn analysis_suite() -> Vec<CheckResult> {
    vec![theorem1_grid_check(), theorem2_grid_check(), closed_form_mu_check()]
}

pub fn suite(scope: Scope) -> Vec<CheckResult> {
    match scope {
        Scope::Attention => attention_suite(),
        Scope::Dyn => dyn_suite(),
        Scope::Analysis => analysis_suite(),
        Scope::Membench => membench_suite(),
        Scope::All => {
            let mut all = attention_suite();
            all.extend(dyn_suite());
            all.extend(analysis_suite());
            all.extend(membench_suite());
            all
        }
    }
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.passed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_and_dyn_suites_pass() {
        for r in attention_suite().into_iter().chain(dyn_suite()) {
            assert!(r.passed, "{}: residual {} > tolerance {}", r.name, r.residual, r.tolerance);
        }
    }

    #[test]
    fn membench_suite_passes() {
        for r in membench_suite() {
            assert!(r.passed, "{}: residual {} > tolerance {}", r.name, r.residual, r.tolerance);
        }
    }

    #[test]
    fn theorem2_and_mu_checks_pass() {
        let r = theorem2_grid_check();
        assert!(r.passed, "{}", r.detail);
        let r = closed_form_mu_check();
        assert!(r.passed, "{}", r.detail);
    }

    #[test]
    fn perturbed_kernel_tap_is_caught() {
        let r = scan_fft_duality_check(Some(1e-3));
        assert!(!r.passed);
        assert_eq!(r.name, "scan_fft_duality");
    }
}
