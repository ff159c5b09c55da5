//! Quantum and hybrid solvers for DC power flow, simulated on a statevector.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: symmetric eigendecomposition, LU, phase unitaries.
//! - [`statevector`]: register layout, gates, inverse QFT, projection, sampling.
//! - [`qpe`]: phase-estimation circuit, closed-form fast path, success bounds.
//! - [`hhl`]: HHL with imperfect phase estimation and double post-selection.
//! - [`hybrid`]: single- and multiple-module hybrid phase-estimation solvers
//!   (HSPEA / HMPEA) with sign calibration and classical assembly.
//! - [`dcpf`]: grid ingestion, susceptance assembly, rescaling.
//! - [`harness`]: qubit budgets, parameter sweeps, the reproduction report.

use serde::{Deserialize, Serialize};

pub mod dcpf;
pub mod harness;
pub mod hhl;
pub mod hybrid;
pub mod linalg;
pub mod qpe;
pub mod statevector;

pub use dcpf::{classical_reference, scale_system, DcSystem, GridModel, ScaledDcSystem};
pub use hhl::{solve_hhl, HhlConfig, HhlResult};
pub use hybrid::{run_hmpea, run_hspea, solve_hybrid, HybridConfig, HybridStatistics};
pub use linalg::{eigh, SpectralDecomposition, SymMatrix};
pub use statevector::{RegisterLayout, StateVector};

/// How measurement statistics are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Exact amplitudes / probabilities, no shot noise.
    #[default]
    Exact,
    /// Seeded shot sampling.
    Sampled,
}

/// Which simulator produces the pre-measurement state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    /// Closed-form evolution in the eigenbasis; no qubit cap.
    #[default]
    FastPath,
    /// Gate-level statevector simulation, bounded by the simulator cap.
    Circuit,
}

pub const DEFAULT_SHOTS: u64 = 100_000;
