//! Python bindings: spike attention ops, the dendritic recurrence and its
//! FFT dual, receptive-radius/entropy analysis, streaming-memory profiling,
//! verification suites and the toy training loop.
//!
//! Tensors cross the boundary as flat row-major `list[float]` plus a
//! `(t, b, n, d)` shape tuple; everything returned is plain Python data.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::str::FromStr;

use lrfkit::analysis::{
    self, DistanceModel, MuKind, WeightKind,
};
use lrfkit::attention;
use lrfkit::dendrite;
use lrfkit::membench;
use lrfkit::neuron;
use lrfkit::synth;
use lrfkit::tensor::{DenseTensor, Shape4, SpikeTensor, TokenGrid};
use lrfkit::train;
use lrfkit::verify;

fn err(e: lrfkit::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn shape4(shape: (usize, usize, usize, usize)) -> PyResult<Shape4> {
    Shape4::new(shape.0, shape.1, shape.2, shape.3).map_err(err)
}

fn spikes(shape: Shape4, data: Vec<f64>) -> PyResult<SpikeTensor> {
    SpikeTensor::from_vec(shape, data).map_err(err)
}

fn dense(shape: Shape4, data: Vec<f64>) -> PyResult<DenseTensor> {
    DenseTensor::from_vec(shape, data).map_err(err)
}

/// LIF neuron constants (threshold, reset value, leak factor).
#[pyclass(name = "LifParams", skip_from_py_object)]
#[derive(Clone)]
struct PyLifParams {
    inner: neuron::LifParams,
}

#[pymethods]
impl PyLifParams {
    #[new]
    #[pyo3(signature = (v_th=1.0, v_reset=0.0, tau=0.5))]
    fn new(v_th: f64, v_reset: f64, tau: f64) -> PyResult<Self> {
        Ok(PyLifParams { inner: neuron::LifParams::new(v_th, v_reset, tau).map_err(err)? })
    }

    #[getter]
    fn v_th(&self) -> f64 {
        self.inner.v_th
    }

    #[getter]
    fn v_reset(&self) -> f64 {
        self.inner.v_reset
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau
    }
}

/// Local receptive-field configuration: one 3x3 depth-wise kernel per
/// dilation, tap-major (weights[tap * d + c]).
#[pyclass(name = "LrfConfig", skip_from_py_object)]
#[derive(Clone)]
struct PyLrfConfig {
    inner: attention::LrfConfig,
}

#[pymethods]
impl PyLrfConfig {
    #[new]
    fn new(dilations: Vec<usize>, weights: Vec<Vec<f64>>, scale: f64, d: usize) -> PyResult<Self> {
        Ok(PyLrfConfig { inner: attention::LrfConfig::new(dilations, weights, scale, d).map_err(err)? })
    }

    /// Kernels with every tap equal to `value`.
    #[staticmethod]
    fn constant(dilations: Vec<usize>, value: f64, scale: f64, d: usize) -> PyResult<Self> {
        Ok(PyLrfConfig { inner: attention::LrfConfig::constant(dilations, value, scale, d).map_err(err)? })
    }

    /// Seeded random kernels with taps in [0, 1).
    #[staticmethod]
    fn random(seed: u64, dilations: Vec<usize>, scale: f64, d: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PyLrfConfig { inner: synth::random_lrf_config(&mut rng, dilations, scale, d) }
    }

    #[staticmethod]
    fn default_scale(d: usize) -> f64 {
        attention::LrfConfig::default_scale(d)
    }
}

/// Shared dendritic recurrence: k x k tridiagonal transition, readout and
/// input couplings, per-channel gain.
#[pyclass(name = "DendriticParams", skip_from_py_object)]
#[derive(Clone)]
struct PyDendriticParams {
    inner: dendrite::DendriticParams,
}

#[pymethods]
impl PyDendriticParams {
    #[new]
    #[pyo3(signature = (k, m_trans, c_read, gamma_in, big_gamma, alpha_k=None))]
    fn new(
        k: usize,
        m_trans: Vec<f64>,
        c_read: Vec<f64>,
        gamma_in: Vec<f64>,
        big_gamma: Vec<f64>,
        alpha_k: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        Ok(PyDendriticParams {
            inner: dendrite::DendriticParams::new(k, m_trans, c_read, gamma_in, big_gamma, alpha_k)
                .map_err(err)?,
        })
    }

    /// Seeded random parameterization with spectral radius below `cap`.
    #[staticmethod]
    #[pyo3(signature = (seed, k, d, cap=0.95))]
    fn random_stable(seed: u64, k: usize, d: usize, cap: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PyDendriticParams { inner: synth::random_stable_dendritic(&mut rng, k, d, cap) }
    }

    /// Power-iteration estimate of the transition's spectral radius.
    fn rho(&self) -> f64 {
        self.inner.rho()
    }

    /// Certified upper bound on the spectral radius.
    fn rho_upper(&self) -> f64 {
        self.inner.rho_upper()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }
}

/// Elementwise LIF dynamics over a dense activation tensor; returns the
/// binary spike train, iterating membrane state across the t axis.
#[pyfunction]
fn sn_layer(x: Vec<f64>, shape: (usize, usize, usize, usize), lif: &PyLifParams) -> PyResult<Vec<f64>> {
    let x = dense(shape4(shape)?, x)?;
    Ok(neuron::sn_layer(&x, &lif.inner).data)
}

/// Softmax reference attention over dense tensors.
#[pyfunction]
fn vsa(
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    shape: (usize, usize, usize, usize),
) -> PyResult<Vec<f64>> {
    let sh = shape4(shape)?;
    Ok(attention::vsa(&dense(sh, q)?, &dense(sh, k)?, &dense(sh, v)?).map_err(err)?.data)
}

/// Spiking attention, quadratic order: s * (Q K^T) V.
#[pyfunction]
#[pyo3(signature = (q, k, v, shape, scale=None))]
fn ssa_quadratic(
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    shape: (usize, usize, usize, usize),
    scale: Option<f64>,
) -> PyResult<Vec<f64>> {
    let sh = shape4(shape)?;
    let s = scale.unwrap_or_else(|| attention::LrfConfig::default_scale(sh.d));
    Ok(attention::ssa_quadratic(&spikes(sh, q)?, &spikes(sh, k)?, &spikes(sh, v)?, s)
        .map_err(err)?
        .data)
}

/// Spiking attention, linear-aggregation order: s * Q (K^T V).
#[pyfunction]
#[pyo3(signature = (q, k, v, shape, scale=None))]
fn ssa_linear(
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    shape: (usize, usize, usize, usize),
    scale: Option<f64>,
) -> PyResult<Vec<f64>> {
    let sh = shape4(shape)?;
    let s = scale.unwrap_or_else(|| attention::LrfConfig::default_scale(sh.d));
    Ok(attention::ssa_linear(&spikes(sh, q)?, &spikes(sh, k)?, &spikes(sh, v)?, s)
        .map_err(err)?
        .data)
}

/// LRF-SSA: linear SSA plus the depth-wise dilated local term, wrapped in a
/// spiking layer. Returns (pre_sn, spikes).
#[pyfunction]
fn lrf_ssa(
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    shape: (usize, usize, usize, usize),
    rows: usize,
    cols: usize,
    cfg: &PyLrfConfig,
    lif: &PyLifParams,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let sh = shape4(shape)?;
    let grid = TokenGrid::new(rows, cols).map_err(err)?;
    let out = attention::lrf_ssa(
        &spikes(sh, q)?,
        &spikes(sh, k)?,
        &spikes(sh, v)?,
        &grid,
        &cfg.inner,
        &lif.inner,
    )
    .map_err(err)?;
    Ok((out.pre_sn.data, out.spikes.data))
}

/// Causal streaming LRF-SSA: raster-order running K^T V accumulator plus
/// the (non-causal) local term.
#[pyfunction]
fn lrf_ssa_causal(
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    shape: (usize, usize, usize, usize),
    rows: usize,
    cols: usize,
    cfg: &PyLrfConfig,
) -> PyResult<Vec<f64>> {
    let sh = shape4(shape)?;
    let grid = TokenGrid::new(rows, cols).map_err(err)?;
    Ok(
        attention::lrf_ssa_causal(&spikes(sh, q)?, &spikes(sh, k)?, &spikes(sh, v)?, &grid, &cfg.inner)
            .map_err(err)?
            .data,
    )
}

/// Sequential dendritic recurrence over one (n, d) token slice.
#[pyfunction]
fn dyn_scan(tokens: Vec<f64>, d: usize, params: &PyDendriticParams) -> PyResult<Vec<f64>> {
    dendrite::dyn_scan(&tokens, d, &params.inner).map_err(err)
}

/// FFT dual of the scan: causal convolution with the impulse-response kernel.
#[pyfunction]
fn dyn_fft(tokens: Vec<f64>, d: usize, params: &PyDendriticParams) -> PyResult<Vec<f64>> {
    dendrite::dyn_fft(&tokens, d, &params.inner).map_err(err)
}

/// Impulse-response kernel taps, flat (m, channel) row-major.
#[pyfunction]
fn dyn_kernel(params: &PyDendriticParams, len: usize) -> PyResult<Vec<f64>> {
    Ok(dendrite::dyn_kernel(&params.inner, len).map_err(err)?.taps)
}

/// Normalized distance weights of one mechanism ("vsa" or "ssa") under the
/// exponential/clipped-linear score model.
#[pyfunction]
fn model_weights(alpha: f64, beta: f64, n: usize, kind: &str) -> PyResult<Vec<f64>> {
    let model = DistanceModel::new(alpha, beta, n).map_err(err)?;
    let kind = match kind {
        "vsa" => WeightKind::Vsa,
        "ssa" => WeightKind::Ssa,
        other => return Err(PyValueError::new_err(format!("unknown kind '{other}'"))),
    };
    analysis::normalize(&analysis::model_weights(&model, kind)).map_err(err)
}

/// Expected receptive radius of a normalized weight sequence over distances
/// 0, 1, 2, ...
#[pyfunction]
fn receptive_radius(weights: Vec<f64>) -> PyResult<f64> {
    analysis::receptive_radius_seq(&weights).map_err(err)
}

/// Shannon entropy (nats) of a weight vector, normalizing if needed.
#[pyfunction]
fn entropy(weights: Vec<f64>) -> PyResult<f64> {
    analysis::entropy(&weights).map_err(err)
}

/// Closed-form infinite-lattice expected radius ("vsa" or "ssa").
#[pyfunction]
fn closed_form_mu(alpha: f64, beta: f64, n: usize, kind: &str) -> PyResult<f64> {
    let model = DistanceModel::new(alpha, beta, n).map_err(err)?;
    let kind = match kind {
        "vsa" => MuKind::VsaInf,
        "ssa" => MuKind::SsaInf,
        other => return Err(PyValueError::new_err(format!("unknown kind '{other}'"))),
    };
    analysis::closed_form_mu(&model, kind).map_err(err)
}

/// Closed-form entropy of the exponential weight family (finite or
/// infinite lattice).
#[pyfunction]
#[pyo3(signature = (alpha, beta, n, infinite=false))]
fn closed_form_entropy_vsa(alpha: f64, beta: f64, n: usize, infinite: bool) -> PyResult<f64> {
    let model = DistanceModel::new(alpha, beta, n).map_err(err)?;
    analysis::closed_form_entropy_vsa(&model, infinite).map_err(err)
}

/// Counted streaming-memory profile of one mode at one configuration.
#[pyfunction]
#[pyo3(signature = (mode, n, d, k=8, dilations=vec![3, 5]))]
fn mem_profile(py: Python<'_>, mode: &str, n: usize, d: usize, k: usize, dilations: Vec<usize>) -> PyResult<Py<PyDict>> {
    let mode = membench::Mode::from_str(mode).map_err(err)?;
    let grid = TokenGrid::new(1, n).map_err(err)?;
    let p = membench::profile(mode, n, d, k, &grid, &dilations).map_err(err)?;
    let dict = PyDict::new(py);
    dict.set_item("mode", p.mode)?;
    dict.set_item("n", p.n)?;
    dict.set_item("d", p.d)?;
    dict.set_item("k", p.k)?;
    dict.set_item("peak_state_values", p.peak_state_values)?;
    dict.set_item("local_buffer_values", p.local_buffer_values)?;
    dict.set_item("total", p.total)?;
    Ok(dict.into())
}

/// Runs a verification suite ("all", "attention", "dyn", "analysis",
/// "membench"); returns one dict per check.
#[pyfunction]
fn run_verify(py: Python<'_>, scope: &str) -> PyResult<Vec<Py<PyDict>>> {
    let scope = verify::Scope::from_str(scope).map_err(err)?;
    verify::suite(scope)
        .into_iter()
        .map(|c| {
            let dict = PyDict::new(py);
            dict.set_item("name", c.name)?;
            dict.set_item("passed", c.passed)?;
            dict.set_item("residual", c.residual)?;
            dict.set_item("tolerance", c.tolerance)?;
            dict.set_item("detail", c.detail)?;
            Ok(dict.into())
        })
        .collect()
}

/// Trains the toy motif classifier ("ssa", "lrf_ssa" or "lrf_dyn");
/// returns the per-epoch log as a list of dicts.
#[pyfunction]
#[pyo3(signature = (model, seed, epochs=50, learning_rate=None, batch_size=None, timesteps=None))]
fn train_toy(
    py: Python<'_>,
    model: &str,
    seed: u64,
    epochs: usize,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    timesteps: Option<usize>,
) -> PyResult<Vec<Py<PyDict>>> {
    let kind = train::ModelKind::from_str(model).map_err(err)?;
    let defaults = train::TrainConfig::default();
    let cfg = train::TrainConfig {
        epochs,
        seed,
        learning_rate: learning_rate.unwrap_or(defaults.learning_rate),
        batch_size: batch_size.unwrap_or(defaults.batch_size),
        timesteps: timesteps.unwrap_or(defaults.timesteps),
        ..defaults
    };
    let task = train::ToyTask::default();
    let outcome = train::train_toy(&task, kind, &cfg).map_err(err)?;
    outcome
        .log
        .into_iter()
        .map(|e| {
            let dict = PyDict::new(py);
            dict.set_item("epoch", e.epoch)?;
            dict.set_item("train_loss", e.train_loss)?;
            dict.set_item("train_acc", e.train_acc)?;
            dict.set_item("test_acc", e.test_acc)?;
            Ok(dict.into())
        })
        .collect()
}

/// Seeded Bernoulli spike tensor, flat row-major.
#[pyfunction]
fn random_spikes(seed: u64, shape: (usize, usize, usize, usize), p: f64) -> PyResult<Vec<f64>> {
    let sh = shape4(shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(synth::random_spikes(&mut rng, sh, p).data)
}

#[pymodule]
fn lrfkit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLifParams>()?;
    m.add_class::<PyLrfConfig>()?;
    m.add_class::<PyDendriticParams>()?;
    m.add_function(wrap_pyfunction!(sn_layer, m)?)?;
    m.add_function(wrap_pyfunction!(vsa, m)?)?;
    m.add_function(wrap_pyfunction!(ssa_quadratic, m)?)?;
    m.add_function(wrap_pyfunction!(ssa_linear, m)?)?;
    m.add_function(wrap_pyfunction!(lrf_ssa, m)?)?;
    m.add_function(wrap_pyfunction!(lrf_ssa_causal, m)?)?;
    m.add_function(wrap_pyfunction!(dyn_scan, m)?)?;
    m.add_function(wrap_pyfunction!(dyn_fft, m)?)?;
    m.add_function(wrap_pyfunction!(dyn_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(model_weights, m)?)?;
    m.add_function(wrap_pyfunction!(receptive_radius, m)?)?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(closed_form_mu, m)?)?;
    m.add_function(wrap_pyfunction!(closed_form_entropy_vsa, m)?)?;
    m.add_function(wrap_pyfunction!(mem_profile, m)?)?;
    m.add_function(wrap_pyfunction!(run_verify, m)?)?;
    m.add_function(wrap_pyfunction!(train_toy, m)?)?;
    m.add_function(wrap_pyfunction!(random_spikes, m)?)?;
    Ok(())
}
