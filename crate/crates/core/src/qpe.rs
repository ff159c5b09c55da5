//! Phase estimation: the full circuit, the closed-form per-eigenvector fast
//! path, and the success-rate bounds for one or several estimation modules.

use std::f64::consts::PI;
use std::io::Write;
use std::ops::RangeInclusive;

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{matrix_phase_unitary, SpectralDecomposition};
use crate::statevector::{RegisterLayout, SimError, StateVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpeError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("eigenvalue {index} = {value} lies outside (0, 1); rescale the system first")]
    RescalingRequired { index: usize, value: f64 },
    #[error("n_redund = {0} is below 2; the failure bound is undefined")]
    RedundancyTooSmall(usize),
    #[error("n_accur must be at least 1")]
    NoAccuracyQubits,
    #[error("medium register in the circuit has {found} qubits, expected {expected}")]
    RegisterMismatch { expected: usize, found: usize },
}

/// Measured-register distribution after phase estimation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QpeOutcome {
    pub m: usize,
    /// Probability of each m-bit value.
    pub distribution: Vec<f64>,
    /// `per_eigenvalue[j][k]`: probability of value k given branch u_j.
    pub per_eigenvalue: Vec<Vec<f64>>,
    /// Branch weights `(C_p p_j)²`.
    pub weights: Vec<f64>,
}

/// `⌊λ·2^bits⌋`.
pub fn floor_bits(lambda: f64, bits: usize) -> u64 {
    (lambda * (1u64 << bits) as f64).floor() as u64
}

/// Formats the low `bits` bits of `value` MSB first.
pub fn bit_string(value: u64, bits: usize) -> String {
    (0..bits)
        .rev()
        .map(|b| if (value >> b) & 1 == 1 { '1' } else { '0' })
        .collect()
}

/// `⌈m_prec / n_accur⌉`.
pub fn module_count(m_prec: usize, n_accur: usize) -> usize {
    m_prec.div_ceil(n_accur)
}

/// `⟨k| QPE |0⟩` for eigenphase `phase` on an m-qubit register:
/// `2^{-m} Σ_x e^{2πix(phase − k/2^m)}`.
pub fn kernel_amplitude(phase: f64, m: usize, k: u64) -> Complex64 {
    let size = (1u64 << m) as f64;
    let d = phase - k as f64 / size;
    // e^{2πixd} only depends on d mod 1
    let d = d - d.round();
    if d.abs() < 1e-15 {
        return Complex64::new(1.0, 0.0);
    }
    let magnitude = (PI * size * d).sin() / (size * (PI * d).sin());
    Complex64::from_polar(magnitude, PI * (size - 1.0) * d)
}

pub fn kernel_amplitudes(phase: f64, m: usize) -> Vec<Complex64> {
    (0..1u64 << m).map(|k| kernel_amplitude(phase, m, k)).collect()
}

pub fn kernel_probabilities(phase: f64, m: usize) -> Vec<f64> {
    (0..1u64 << m)
        .map(|k| kernel_amplitude(phase, m, k).norm_sqr())
        .collect()
}

/// Eigenphase seen by a module whose unitary is `(e^{2πiB})^{multiplier}`.
pub fn module_phase(lambda: f64, multiplier: f64) -> f64 {
    (lambda * multiplier).rem_euclid(1.0)
}

fn check_spectrum(sd: &SpectralDecomposition) -> Result<(), QpeError> {
    for (index, &value) in sd.eigenvalues.iter().enumerate() {
        if !(value > 0.0 && value < 1.0) {
            return Err(QpeError::RescalingRequired { index, value });
        }
    }
    Ok(())
}

/// Hadamards on the medium register, controlled `U^{2^{m−k}}` from the k-th
/// medium qubit (k = 1 most significant), inverse QFT. `U = e^{2πiB·multiplier}`.
pub fn run_qpe_circuit(
    state: &mut StateVector,
    sd: &SpectralDecomposition,
    multiplier: f64,
) -> Result<(), QpeError> {
    let medium = state.layout().medium_qubits();
    let m = medium.len();
    state.apply_hadamard_block(&medium)?;
    for (k, &q) in medium.iter().enumerate() {
        let power = (1u64 << (m - 1 - k)) as f64;
        let u = pad_unitary(matrix_phase_unitary(sd, multiplier * power), state);
        state.apply_controlled_unitary(q, &u)?;
    }
    state.apply_inverse_qft(&medium)?;
    Ok(())
}

/// Exact adjoint of [`run_qpe_circuit`].
pub fn run_inverse_qpe_circuit(
    state: &mut StateVector,
    sd: &SpectralDecomposition,
    multiplier: f64,
) -> Result<(), QpeError> {
    let medium = state.layout().medium_qubits();
    let m = medium.len();
    state.apply_qft(&medium)?;
    for (k, &q) in medium.iter().enumerate().rev() {
        let power = (1u64 << (m - 1 - k)) as f64;
        let u = pad_unitary(matrix_phase_unitary(sd, multiplier * power), state).adjoint();
        state.apply_controlled_unitary(q, &u)?;
    }
    state.apply_hadamard_block(&medium)?;
    Ok(())
}

/// Embeds an N×N unitary into the 2^n_bottom bottom register, acting as the
/// identity on the padding states.
fn pad_unitary(u: crate::linalg::CMatrix, state: &StateVector) -> crate::linalg::CMatrix {
    let dim = 1usize << state.layout().n_bottom;
    if u.dim() == dim {
        return u;
    }
    let mut out = crate::linalg::CMatrix::identity(dim);
    for i in 0..u.dim() {
        for j in 0..u.dim() {
            out.set(i, j, u.get(i, j));
        }
    }
    out
}

/// Closed-form QPE marginal: each eigenvector branch evolves independently,
/// so the register distribution is the branch-weighted mixture of single
/// phase kernels. Cost O(N·2^m).
pub fn fast_path_distribution(sd: &SpectralDecomposition, m: usize) -> Result<QpeOutcome, QpeError> {
    fast_path_distribution_scaled(sd, m, 1.0)
}

pub fn fast_path_distribution_scaled(
    sd: &SpectralDecomposition,
    m: usize,
    multiplier: f64,
) -> Result<QpeOutcome, QpeError> {
    check_spectrum(sd)?;
    let weights: Vec<f64> = sd.projections.iter().map(|p| p * p).collect();
    let per_eigenvalue: Vec<Vec<f64>> = sd
        .eigenvalues
        .iter()
        .map(|&lambda| kernel_probabilities(module_phase(lambda, multiplier), m))
        .collect();
    let mut distribution = vec![0.0; 1 << m];
    for (w, cond) in weights.iter().zip(&per_eigenvalue) {
        for (d, p) in distribution.iter_mut().zip(cond) {
            *d += w * p;
        }
    }
    Ok(QpeOutcome {
        m,
        distribution,
        per_eigenvalue,
        weights,
    })
}

/// Medium-register distribution from the gate-level circuit on
/// `|0…0⟩ ⊗ |rhs⟩`, for cross-checking the fast path.
pub fn circuit_distribution(
    sd: &SpectralDecomposition,
    rhs: &[f64],
    n_accur: usize,
    n_redund: usize,
) -> Result<Vec<f64>, QpeError> {
    check_spectrum(sd)?;
    let layout = RegisterLayout::for_dimension(0, n_accur, n_redund, rhs.len())?;
    let mut state = StateVector::init_with_amplitudes(layout, rhs)?;
    run_qpe_circuit(&mut state, sd, 1.0)?;
    Ok(state.marginal_probabilities(&layout.medium_qubits())?)
}

/// `½ Σ |a_i − b_i|`.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Standard single-module failure bound `(2(2^n_redund − 2))^{-1}`.
pub fn failure_bound_single(n_redund: usize) -> Result<f64, QpeError> {
    if n_redund < 2 {
        return Err(QpeError::RedundancyTooSmall(n_redund));
    }
    Ok(1.0 / (2.0 * (2f64.powi(n_redund as i32) - 2.0)))
}

/// Lower bound on the joint success of `⌈m_prec/n_accur⌉` modules.
pub fn success_bound_multi(m_prec: usize, n_accur: usize, n_redund: usize) -> Result<f64, QpeError> {
    if n_accur == 0 {
        return Err(QpeError::NoAccuracyQubits);
    }
    let eps = failure_bound_single(n_redund)?;
    Ok((1.0 - eps).powi(module_count(m_prec, n_accur) as i32))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuccessCell {
    pub n_accur: usize,
    pub n_redund: usize,
    pub n_module: usize,
    pub p_success: f64,
}

/// [`success_bound_multi`] over a rectangular grid, n_accur-major.
pub fn success_surface(
    m_prec: usize,
    accur: RangeInclusive<usize>,
    redund: RangeInclusive<usize>,
) -> Result<Vec<SuccessCell>, QpeError> {
    let mut cells = Vec::new();
    for n_accur in accur {
        for n_redund in redund.clone() {
            cells.push(SuccessCell {
                n_accur,
                n_redund,
                n_module: module_count(m_prec, n_accur.max(1)),
                p_success: success_bound_multi(m_prec, n_accur, n_redund)?,
            });
        }
    }
    Ok(cells)
}

pub fn write_surface_csv<W: Write>(cells: &[SuccessCell], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in cells {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

/// Probability that the leading `n_accur` measured bits equal
/// `⌊phase·2^n_accur⌋`.
pub fn floor_match_probability(phase: f64, n_accur: usize, n_redund: usize) -> f64 {
    let m = n_accur + n_redund;
    let target = floor_bits(phase, n_accur);
    let lo = target << n_redund;
    (lo..lo + (1u64 << n_redund))
        .map(|k| kernel_amplitude(phase, m, k).norm_sqr())
        .sum()
}

/// Probability that the m-bit outcome lies within `2^n_redund − 1` steps
/// (cyclically) of `⌊phase·2^m⌋`, i.e. the estimate is within 2^{-n_accur}.
/// This is the event the single-module failure bound controls.
pub fn window_success_probability(phase: f64, n_accur: usize, n_redund: usize) -> f64 {
    let m = n_accur + n_redund;
    let size = 1i64 << m;
    let b = floor_bits(phase, m) as i64;
    let e = (1i64 << n_redund) - 1;
    (-e..=e)
        .map(|off| {
            let k = (b + off).rem_euclid(size) as u64;
            kernel_amplitude(phase, m, k).norm_sqr()
        })
        .sum()
}
