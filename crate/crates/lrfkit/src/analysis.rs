//! Receptive-radius and entropy analysis: the synthetic distance-decay
//! attention model, closed forms for its expected radius and entropy, the
//! locality/entropy ordering checks, and empirical measurement of real
//! score matrices over a token grid.
//!
//! Model-based quantities follow the one-position-per-distance convention
//! (Δ = 0..N-1, no multiplicity); `measure_attention` uses the true grid
//! multiplicities.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::TokenGrid;

/// Linear distance-decay similarity model: q_i·k_j ≈ α − βΔ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceModel {
    pub alpha: f64,
    pub beta: f64,
    pub n: usize,
}

impl DistanceModel {
    pub fn new(alpha: f64, beta: f64, n: usize) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidParam("alpha must be > 0".into()));
        }
        if !(beta >= 0.0) {
            return Err(Error::InvalidParam("beta must be >= 0".into()));
        }
        if n == 0 {
            return Err(Error::InvalidParam("n must be >= 1".into()));
        }
        Ok(DistanceModel { alpha, beta, n })
    }

    /// Whether the SSA weights stay positive over the whole support
    /// (β ≤ α/(N−1)); outside this range the SSA branch clips at zero.
    pub fn ssa_nonneg_everywhere(&self) -> bool {
        self.n == 1 || self.beta * (self.n as f64 - 1.0) <= self.alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    Vsa,
    Ssa,
}

/// Unnormalized weight per distance Δ = 0..N-1: exp(−βΔ) for VSA,
/// (α − βΔ)_+ for SSA.
pub fn model_weights(model: &DistanceModel, kind: WeightKind) -> Vec<f64> {
    (0..model.n)
        .map(|delta| {
            let delta = delta as f64;
            match kind {
                WeightKind::Vsa => (-model.beta * delta).exp(),
                WeightKind::Ssa => (model.alpha - model.beta * delta).max(0.0),
            }
        })
        .collect()
}

/// Normalizes a nonnegative weight vector into a distribution.
pub fn normalize(weights: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Domain("weights sum to zero; distribution undefined".into()));
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Expected receptive radius μ = Σ ŵ_j Δ_j of the normalized weights.
pub fn receptive_radius(weights: &[f64], distances: &[f64]) -> Result<f64> {
    if weights.len() != distances.len() {
        return Err(Error::ShapeMismatch("weights and distances differ in length".into()));
    }
    let w = normalize(weights)?;
    Ok(w.iter().zip(distances).map(|(w, d)| w * d).sum())
}

/// μ over the implicit support Δ = 0, 1, 2, ...
pub fn receptive_radius_seq(weights: &[f64]) -> Result<f64> {
    let distances: Vec<f64> = (0..weights.len()).map(|d| d as f64).collect();
    receptive_radius(weights, &distances)
}

/// Shannon entropy in nats of the normalized weights, with 0·log 0 = 0.
pub fn entropy(weights: &[f64]) -> Result<f64> {
    let w = normalize(weights)?;
    Ok(w.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum())
}

/// Binary entropy h(λ) in nats.
pub fn binary_entropy(lambda: f64) -> f64 {
    if lambda <= 0.0 || lambda >= 1.0 {
        0.0
    } else {
        -lambda * lambda.ln() - (1.0 - lambda) * (1.0 - lambda).ln()
    }
}

/// Convex combination (1−λ)·ssa + λ·local of two distributions on the same
/// support.
pub fn lrf_mix(ssa_weights: &[f64], local_weights: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("lambda must be in [0,1], got {lambda}")));
    }
    if ssa_weights.len() != local_weights.len() {
        return Err(Error::ShapeMismatch("mix operands differ in length".into()));
    }
    Ok(ssa_weights
        .iter()
        .zip(local_weights)
        .map(|(s, r)| (1.0 - lambda) * s + lambda * r)
        .collect())
}

/// Uniform local distribution supported on Δ ≤ radius, padded to length n.
pub fn uniform_local_weights(radius: usize, n: usize) -> Vec<f64> {
    let support = (radius + 1).min(n);
    let mut w = vec![0.0; n];
    for item in w.iter_mut().take(support) {
        *item = 1.0 / support as f64;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MuKind {
    VsaInf,
    SsaInf,
}

/// Closed-form expected radius in the infinite-length limit:
/// exp(−β)/(1−exp(−β)) for VSA, (N−1)(3α−β(2N−1)) / (3(2α−β(N−1))) for SSA.
pub fn closed_form_mu(model: &DistanceModel, kind: MuKind) -> Result<f64> {
    match kind {
        MuKind::VsaInf => {
            if !(model.beta > 0.0) {
                return Err(Error::Domain("vsa_inf diverges at beta = 0".into()));
            }
            let r = (-model.beta).exp();
            Ok(r / (1.0 - r))
        }
        MuKind::SsaInf => {
            let n = model.n as f64;
            let denom = 3.0 * (2.0 * model.alpha - model.beta * (n - 1.0));
            if denom == 0.0 {
                return Err(Error::Domain("ssa_inf denominator is zero".into()));
            }
            Ok((n - 1.0) * (3.0 * model.alpha - model.beta * (2.0 * n - 1.0)) / denom)
        }
    }
}

/// Closed-form entropy of the truncated geometric VSA distribution with
/// r = exp(−β); the `infinite` flag selects the N → ∞ limit.
pub fn closed_form_entropy_vsa(model: &DistanceModel, infinite: bool) -> Result<f64> {
    let r = (-model.beta).exp();
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::Domain(format!("r = exp(-beta) must lie in (0,1), got {r}")));
    }
    if infinite {
        return Ok(-(1.0 - r).ln() - r / (1.0 - r) * r.ln());
    }
    let n = model.n as f64;
    if model.n == 1 {
        return Ok(0.0);
    }
    let rn = r.powf(n);
    let h = ((1.0 - rn) / (1.0 - r)).ln()
        - r / (1.0 - r) * (1.0 - n * r.powf(n - 1.0) + (n - 1.0) * rn) / (1.0 - rn) * r.ln();
    Ok(h)
}

/// Outcome of the expected-radius ordering check.
#[derive(Debug, Clone, Serialize)]
pub struct Theorem1Report {
    pub mu_vsa: f64,
    pub mu_ssa: f64,
    pub mu_local: f64,
    pub mu_lrf: f64,
    pub identity_residual: f64,
    pub vsa_le_lrf: bool,
    pub lrf_le_ssa: bool,
    /// True when the stated premise μ_r ≤ μ_ssa is violated; the ordering
    /// booleans are then not meaningful failures.
    pub assumption_violated: bool,
}

/// Evaluates the receptive-radius ordering μ_vsa ≤ μ_lrf ≤ μ_ssa together
/// with the convex-combination identity
/// μ_lrf = (1−λ)μ_ssa + λμ_r.
pub fn check_theorem1(model: &DistanceModel, lambda: f64, local_radius: usize) -> Result<Theorem1Report> {
    let p_vsa = normalize(&model_weights(model, WeightKind::Vsa))?;
    let p_ssa = normalize(&model_weights(model, WeightKind::Ssa))?;
    let local = uniform_local_weights(local_radius, model.n);
    let mu_vsa = receptive_radius_seq(&p_vsa)?;
    let mu_ssa = receptive_radius_seq(&p_ssa)?;
    let mu_local = receptive_radius_seq(&local)?;
    let mu_lrf = (1.0 - lambda) * mu_ssa + lambda * mu_local;
    let mixed = lrf_mix(&p_ssa, &local, lambda)?;
    let mu_mixed = receptive_radius_seq(&mixed)?;
    Ok(Theorem1Report {
        mu_vsa,
        mu_ssa,
        mu_local,
        mu_lrf,
        identity_residual: (mu_mixed - mu_lrf).abs(),
        vsa_le_lrf: mu_vsa <= mu_lrf,
        lrf_le_ssa: mu_lrf <= mu_ssa,
        assumption_violated: mu_local > mu_ssa,
    })
}

/// Outcome of the entropy ordering / chain-rule bound check.
#[derive(Debug, Clone, Serialize)]
pub struct Theorem2Report {
    pub h_ssa: f64,
    pub h_local: f64,
    pub h_lrf: f64,
    pub chain_rule_bound: f64,
    pub bound_holds: bool,
    /// Sufficient premise for the unconditional ordering:
    /// H(R) ≤ H(ssa) − h(λ)/λ.
    pub premise_holds: bool,
    pub ordering_holds: bool,
}

/// Checks the chain-rule entropy bound
/// H(mix) ≤ h(λ) + (1−λ)H(ssa) + λH(R), and the ordering H(mix) ≤ H(ssa)
/// under the sufficient margin premise.
pub fn check_theorem2(model: &DistanceModel, lambda: f64, local_weights: &[f64]) -> Result<Theorem2Report> {
    let p_ssa = normalize(&model_weights(model, WeightKind::Ssa))?;
    let local = normalize(local_weights)?;
    let h_ssa = entropy(&p_ssa)?;
    let h_local = entropy(&local)?;
    let mixed = lrf_mix(&p_ssa, &local, lambda)?;
    let h_lrf = entropy(&mixed)?;
    let h_lambda = binary_entropy(lambda);
    let bound = h_lambda + (1.0 - lambda) * h_ssa + lambda * h_local;
    let premise_holds = if lambda == 0.0 {
        true
    } else {
        h_local <= h_ssa - h_lambda / lambda
    };
    Ok(Theorem2Report {
        h_ssa,
        h_local,
        h_lrf,
        chain_rule_bound: bound,
        bound_holds: h_lrf <= bound + 1e-12,
        premise_holds,
        ordering_holds: h_lrf <= h_ssa + 1e-12,
    })
}

/// Empirical distance statistics of a nonnegative N×N score matrix.
#[derive(Debug, Clone, Serialize)]
pub struct AttentionStats {
    /// Mean normalized weight per Manhattan-distance bucket; sums to 1.
    pub histogram: Vec<f64>,
    /// Expected receptive radius of the averaged distribution.
    pub mu: f64,
    /// Mean per-row entropy in nats.
    pub entropy: f64,
}

/// Row-normalizes `scores`, buckets mass by Manhattan distance on the grid,
/// and reports the averaged histogram, μ, and mean row entropy. Fully-zero
/// rows are excluded from the averages.
pub fn measure_attention(scores: &[f64], grid: &TokenGrid) -> Result<AttentionStats> {
    let n = grid.len();
    if scores.len() != n * n {
        return Err(Error::ShapeMismatch(format!(
            "expected {}x{} score matrix",
            n, n
        )));
    }
    if scores.iter().any(|&s| s < 0.0 || !s.is_finite()) {
        return Err(Error::Domain("scores must be nonnegative and finite".into()));
    }
    let max_dist = grid.rows - 1 + grid.cols - 1;
    let mut histogram = vec![0.0; max_dist + 1];
    let mut entropy_sum = 0.0;
    let mut live_rows = 0usize;
    for i in 0..n {
        let row = &scores[i * n..(i + 1) * n];
        let total: f64 = row.iter().sum();
        if total <= 0.0 {
            continue;
        }
        live_rows += 1;
        for (j, &w) in row.iter().enumerate() {
            let p = w / total;
            histogram[grid.manhattan_distance(i, j)?] += p;
            if p > 0.0 {
                entropy_sum -= p * p.ln();
            }
        }
    }
    if live_rows == 0 {
        return Err(Error::Domain("all score rows are zero".into()));
    }
    for h in histogram.iter_mut() {
        *h /= live_rows as f64;
    }
    let mu = histogram
        .iter()
        .enumerate()
        .map(|(d, w)| d as f64 * w)
        .sum();
    Ok(AttentionStats {
        histogram,
        mu,
        entropy: entropy_sum / live_rows as f64,
    })
}

/// Mean fraction of per-row attention mass within Manhattan distance
/// `radius`, rows normalized individually.
pub fn locality_fraction(scores: &[f64], grid: &TokenGrid, radius: usize) -> Result<f64> {
    let stats = measure_attention(scores, grid)?;
    Ok(stats.histogram.iter().take(radius + 1).sum())
}
