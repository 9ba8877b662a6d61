//! Spiking attention with local receptive fields, at verification scale.
//!
//! The crate implements three attention mechanisms over binary spike trains
//! — SSA (quadratic and linear-aggregation forms), LRF-SSA (monolithic and
//! causal streaming forms), and LRF-Dyn (a dendritic state-space recurrence
//! with an FFT dual) — together with the analysis machinery that makes their
//! claimed properties checkable: receptive-radius and entropy statistics,
//! exact streaming-memory accounting, and a toy surrogate-gradient training
//! loop.

pub mod analysis;
pub mod attention;
pub mod dendrite;
pub mod error;
pub mod membench;
pub mod neuron;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
