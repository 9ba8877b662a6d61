//! Seeded synthetic inputs shared by the verification suites, the CLI and
//! the test oracles.

use rand::Rng;

use crate::attention::LrfConfig;
use crate::dendrite::DendriticParams;
use crate::tensor::{DenseTensor, Shape4, SpikeTensor};

/// Bernoulli(p) spike tensor.
pub fn random_spikes<R: Rng>(rng: &mut R, shape: Shape4, p: f64) -> SpikeTensor {
    let data = (0..shape.len())
        .map(|_| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
        .collect();
    SpikeTensor { shape, data }
}

/// Uniform dense tensor over [lo, hi).
pub fn random_dense<R: Rng>(rng: &mut R, shape: Shape4, lo: f64, hi: f64) -> DenseTensor {
    let data = (0..shape.len()).map(|_| rng.random_range(lo..hi)).collect();
    DenseTensor { shape, data }
}

/// LRF kernels with nonnegative U(0,1) taps.
pub fn random_lrf_config<R: Rng>(rng: &mut R, dilations: Vec<usize>, scale: f64, d: usize) -> LrfConfig {
    let weights = dilations
        .iter()
        .map(|_| (0..9 * d).map(|_| rng.random::<f64>()).collect())
        .collect();
    LrfConfig::new(dilations, weights, scale, d).expect("generated config is valid")
}

/// Random stable dendritic parameterization: tridiagonal transition with
/// diagonal 1 - 1/τ_i (τ_i > 1) and small couplings, rescaled if needed so
/// the spectral radius stays below `radius_cap`.
pub fn random_stable_dendritic<R: Rng>(rng: &mut R, k: usize, d: usize, radius_cap: f64) -> DendriticParams {
    let taus: Vec<f64> = (0..k).map(|_| rng.random_range(1.25..8.0)).collect();
    let mut m = vec![0.0; k * k];
    for i in 0..k {
        m[i * k + i] = 1.0 - 1.0 / taus[i];
        if i + 1 < k {
            let b_up: f64 = rng.random_range(-0.15..0.15);
            let b_dn: f64 = rng.random_range(-0.15..0.15);
            m[i * k + i + 1] = b_up;
            m[(i + 1) * k + i] = b_dn;
        }
    }
    let rho = DendriticParams::spectral_radius(&m, k);
    if rho >= radius_cap {
        let shrink = radius_cap * 0.95 / rho;
        for v in m.iter_mut() {
            *v *= shrink;
        }
    }
    let c_read: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let gamma_in: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let big_gamma: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..1.5)).collect();
    DendriticParams::new(k, m, c_read, gamma_in, big_gamma, None).expect("generated params are stable")
}
