//! Leaky Integrate-and-Fire dynamics applied elementwise over tensors.
//!
//! One step: U = H + input, S = Θ(U − v_th) with Θ(0) = 1, then
//! H' = v_reset·S + τ·U·(1−S). The surrogate derivative of Θ backs the
//! training path.

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, SpikeTensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifParams {
    pub v_th: f64,
    pub v_reset: f64,
    pub tau: f64,
}

impl LifParams {
    pub fn new(v_th: f64, v_reset: f64, tau: f64) -> Result<Self> {
        if !(v_th > v_reset) {
            return Err(Error::InvalidParam(format!(
                "v_th ({v_th}) must exceed v_reset ({v_reset})"
            )));
        }
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::InvalidParam(format!("tau must be in (0,1], got {tau}")));
        }
        Ok(LifParams { v_th, v_reset, tau })
    }
}

impl Default for LifParams {
    fn default() -> Self {
        LifParams {
            v_th: 1.0,
            v_reset: 0.0,
            tau: 0.5,
        }
    }
}

/// Per-element pre-synaptic membrane potentials carried between timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct LifState {
    pub h: Vec<f64>,
}

impl LifState {
    pub fn zeros(len: usize) -> Self {
        LifState { h: vec![0.0; len] }
    }
}

/// One LIF timestep over a flat slice. Returns the binary spike values and
/// the updated state.
pub fn lif_step(state: &LifState, input: &[f64], params: &LifParams) -> Result<(Vec<f64>, LifState)> {
    if state.h.len() != input.len() {
        return Err(Error::ShapeMismatch(format!(
            "state has {} elements, input has {}",
            state.h.len(),
            input.len()
        )));
    }
    let mut spikes = vec![0.0; input.len()];
    let mut next = state.clone();
    lif_step_inplace(&mut next, input, params, &mut spikes);
    Ok((spikes, next))
}

/// In-place variant used by the hot loops. `spikes` must match `input` in length.
pub(crate) fn lif_step_inplace(state: &mut LifState, input: &[f64], params: &LifParams, spikes: &mut [f64]) {
    for i in 0..input.len() {
        let u = state.h[i] + input[i];
        let s = if u >= params.v_th { 1.0 } else { 0.0 };
        spikes[i] = s;
        state.h[i] = params.v_reset * s + params.tau * u * (1.0 - s);
    }
}

/// SN{·}: iterate LIF over the time axis with zero initial state.
pub fn sn_layer(x: &DenseTensor, params: &LifParams) -> SpikeTensor {
    let shape = x.shape;
    let mut out = vec![0.0; shape.len()];
    let slice_len = shape.n * shape.d;
    for b in 0..shape.b {
        let mut state = LifState::zeros(slice_len);
        for t in 0..shape.t {
            let off = shape.slice_offset(t, b);
            let input = &x.data[off..off + slice_len];
            lif_step_inplace(&mut state, input, params, &mut out[off..off + slice_len]);
        }
    }
    SpikeTensor { shape, data: out }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurrogateKind {
    Rectangular,
    SigmoidDerivative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateSpec {
    pub kind: SurrogateKind,
    pub width: f64,
}

impl SurrogateSpec {
    pub fn new(kind: SurrogateKind, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::InvalidParam(format!("surrogate width must be > 0, got {width}")));
        }
        Ok(SurrogateSpec { kind, width })
    }
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        SurrogateSpec {
            kind: SurrogateKind::SigmoidDerivative,
            width: 1.0,
        }
    }
}

/// Smooth stand-in for dΘ/dU at membrane potential `u`.
pub fn surrogate_grad(u: f64, params: &LifParams, spec: &SurrogateSpec) -> f64 {
    let x = u - params.v_th;
    match spec.kind {
        SurrogateKind::Rectangular => {
            if x.abs() <= spec.width / 2.0 {
                1.0 / spec.width
            } else {
                0.0
            }
        }
        SurrogateKind::SigmoidDerivative => {
            let s = 1.0 / (1.0 + (-x / spec.width).exp());
            s * (1.0 - s) / spec.width
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn threshold_crossing_then_reset() {
        let p = LifParams::new(1.0, 0.0, 0.5).unwrap();
        let (s, st) = lif_step(&LifState::zeros(1), &[1.2], &p).unwrap();
        assert_eq!(s, vec![1.0]);
        assert_eq!(st.h, vec![0.0]);
    }

    #[test]
    fn pure_decay() {
        let p = LifParams::new(1.0, 0.0, 0.5).unwrap();
        let state = LifState { h: vec![0.5] };
        let (s, st) = lif_step(&state, &[0.0], &p).unwrap();
        assert_eq!(s, vec![0.0]);
        assert_abs_diff_eq!(st.h[0], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn five_step_trace() {
        let p = LifParams::new(1.0, 0.0, 1.0).unwrap();
        let mut state = LifState::zeros(1);
        let mut spikes = Vec::new();
        let mut trace = Vec::new();
        for _ in 0..5 {
            let (s, st) = lif_step(&state, &[0.4], &p).unwrap();
            spikes.push(s[0]);
            trace.push(st.h[0]);
            state = st;
        }
        assert_eq!(spikes, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        for (got, want) in trace.iter().zip([0.4, 0.8, 0.0, 0.4, 0.8]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let p = LifParams::default();
        assert!(lif_step(&LifState::zeros(2), &[0.0], &p).is_err());
    }

    #[test]
    fn sn_layer_silent_and_saturating() {
        let shape = Shape4::new(3, 2, 4, 2).unwrap();
        let p = LifParams::default();
        let zero = DenseTensor::zeros(shape);
        assert!(sn_layer(&zero, &p).data.iter().all(|&v| v == 0.0));

        let ones = DenseTensor::from_vec(shape, vec![p.v_th; shape.len()]).unwrap();
        let s = sn_layer(&ones, &p);
        // every element reaches threshold at t=0 and every later step too
        assert!(s.slice(0, 0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sn_layer_matches_scalar_simulation() {
        let shape = Shape4::new(4, 2, 3, 2).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f64> = (0..shape.len()).map(|_| rng.random_range(-0.5..1.5)).collect();
        let x = DenseTensor::from_vec(shape, data).unwrap();
        let p = LifParams::default();
        let spikes = sn_layer(&x, &p);
        for b in 0..shape.b {
            for e in 0..shape.n * shape.d {
                let mut h = 0.0;
                for t in 0..shape.t {
                    let u = h + x.slice(t, b)[e];
                    let s = if u >= p.v_th { 1.0 } else { 0.0 };
                    h = p.v_reset * s + p.tau * u * (1.0 - s);
                    assert_eq!(spikes.slice(t, b)[e], s, "t={t} b={b} e={e}");
                }
            }
        }
    }

    #[test]
    fn potential_after_spike_is_reset() {
        let p = LifParams::new(1.0, -0.2, 0.9).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut state = LifState::zeros(16);
        for _ in 0..50 {
            let input: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..2.0)).collect();
            let (s, st) = lif_step(&state, &input, &p).unwrap();
            for i in 0..16 {
                if s[i] == 1.0 {
                    assert_eq!(st.h[i], p.v_reset);
                }
            }
            state = st;
        }
    }

    #[test]
    fn geometric_decay_without_input() {
        let p = LifParams::new(1.0, 0.0, 0.7).unwrap();
        let h0 = 0.9;
        let mut state = LifState { h: vec![h0] };
        for t in 1..=10 {
            let (_, st) = lif_step(&state, &[0.0], &p).unwrap();
            state = st;
            assert_abs_diff_eq!(state.h[0], h0 * p.tau.powi(t), epsilon = 1e-12);
        }
    }

    #[test]
    fn surrogate_values() {
        let p = LifParams::default();
        let rect = SurrogateSpec::new(SurrogateKind::Rectangular, 1.0).unwrap();
        let sig = SurrogateSpec::new(SurrogateKind::SigmoidDerivative, 1.0).unwrap();
        assert_abs_diff_eq!(surrogate_grad(p.v_th, &p, &rect), 1.0, epsilon = 1e-15);
        assert_eq!(surrogate_grad(p.v_th + 10.0, &p, &rect), 0.0);
        assert_abs_diff_eq!(surrogate_grad(p.v_th, &p, &sig), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn surrogate_integrates_to_one() {
        let p = LifParams::default();
        for spec in [
            SurrogateSpec::new(SurrogateKind::Rectangular, 0.8).unwrap(),
            SurrogateSpec::new(SurrogateKind::SigmoidDerivative, 0.3).unwrap(),
        ] {
            let lo = p.v_th - 40.0;
            let hi = p.v_th + 40.0;
            let steps = 4_000_000usize;
            let du = (hi - lo) / steps as f64;
            let mut total = 0.0;
            for i in 0..steps {
                let u = lo + (i as f64 + 0.5) * du;
                let g = surrogate_grad(u, &p, &spec);
                assert!(g >= 0.0);
                total += g * du;
            }
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-6);
        }
    }
}
