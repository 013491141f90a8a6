//! Link-level simulation toolkit for OTFS (orthogonal time frequency space)
//! modulation over delay-Doppler channels.
//!
//! The crate covers the full chain needed for seeded Monte Carlo BER studies:
//!
//! - [`grid`]: frame geometry, QPSK constellation with Gray labeling, and the
//!   bit/symbol mapping shared by every other module.
//! - [`modem`]: the unitary ISFFT/SFFT pair between the delay-Doppler and
//!   time-frequency grids.
//! - [`channel`]: random multipath delay-Doppler channels, their sparse
//!   effective matrix, and channel + AWGN application.
//! - [`detect`]: three symbol detectors — mean-field variational Bayes
//!   (coordinate ascent on the evidence lower bound), Gaussian-approximation
//!   message passing, and exhaustive joint MAP for small grids.
//! - [`sim`]: the Monte Carlo harness: per-frame trials, BER sweeps,
//!   per-iteration traces, complexity benchmarks, and CSV/plot-script output.
//!
//! Everything is deterministic given a base seed; frames are independent and
//! safe to run concurrently.
//!
//! The `examples/` directory contains one runnable program per capability;
//! `src/main.rs` wraps the same library calls in a small CLI
//! (`simulate`, `sweep`, `trace`, `bench`, `oracle`).

pub mod channel;
pub mod detect;
pub mod error;
pub mod grid;
pub mod modem;
pub mod sim;

pub use channel::{ChannelConfig, Path, PathSet, SparseChannel};
pub use detect::{
    map_exhaustive, mp_detect, vb_detect, DetectionResult, DetectorConfig, MpConfig, Prior,
    Schedule, VbState, VbStatistics,
};
pub use error::{Error, Result};
pub use grid::{flat_index, unflatten, Constellation, DdIndex, FrameDims, ModulationScheme};
pub use modem::{isfft, sfft, DdGrid, TfGrid};
pub use sim::{BerRow, BerTable, SimConfig, TrialResult};
