//! HHL under imperfect phase estimation.
//!
//! Pipeline: QPE on `n_accur + n_redund` medium qubits, an `R_y` rotation of
//! the top qubit keyed on the accuracy bits (amplitude `C/λ̃`), inverse QPE,
//! then post-selection on top = |1⟩ and medium = |0…0⟩.
//!
//! The fast path uses the fact that after post-selection each eigen-branch
//! `j` carries the amplitude `C·p_j·Σ_k |α_jk|²/λ̃(k)`, where `α_jk` is the
//! QPE kernel amplitude of outcome `k`; no 2^m-sized state is built.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dcpf::ScaledDcSystem;
use crate::linalg::{norm, normalized, SpectralDecomposition};
use crate::qpe::{self, kernel_amplitude, QpeError};
use crate::statevector::{bottom_qubits_for, sample_distribution, RegisterLayout, SimError, StateVector};
use crate::{Engine, Mode, DEFAULT_SHOTS};

const MIN_POSTSELECT: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HhlError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Qpe(#[from] QpeError),
    #[error("post-selection probability {probability:e} is degenerate")]
    DegeneratePostSelection { probability: f64 },
    #[error("eigenvalue {index} truncates to zero at {bits} bits")]
    InsufficientAccuracy { index: usize, bits: usize },
    #[error("reference vector has zero norm")]
    ZeroReference,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HhlConfig {
    pub n_accur: usize,
    pub n_redund: usize,
    pub mode: Mode,
    pub shots: u64,
    pub seed: u64,
    pub engine: Engine,
    /// Rotation constant `C`; defaults to `2^-n_accur`.
    pub rotation_constant: Option<f64>,
}

impl HhlConfig {
    pub fn new(n_accur: usize, n_redund: usize) -> Self {
        Self {
            n_accur,
            n_redund,
            mode: Mode::Exact,
            shots: DEFAULT_SHOTS,
            seed: 0,
            engine: Engine::FastPath,
            rotation_constant: None,
        }
    }

    pub fn with_engine(mut self, engine: Engine) -> Self {
        self.engine = engine;
        self
    }

    pub fn sampled(mut self, shots: u64, seed: u64) -> Self {
        self.mode = Mode::Sampled;
        self.shots = shots;
        self.seed = seed;
        self
    }

    pub fn total_qubits(&self, dim: usize) -> usize {
        1 + self.n_accur + self.n_redund + bottom_qubits_for(dim)
    }

    fn rotation(&self) -> Result<f64, HhlError> {
        let max = 2f64.powi(-(self.n_accur as i32));
        let c = self.rotation_constant.unwrap_or(max);
        if !(c > 0.0 && c <= max) {
            return Err(HhlError::Config(format!(
                "rotation constant {c} must lie in (0, 2^-{}]",
                self.n_accur
            )));
        }
        Ok(c)
    }

    fn validate(&self) -> Result<(), HhlError> {
        if self.n_accur == 0 {
            return Err(HhlError::Config("n_accur must be at least 1".into()));
        }
        if self.n_redund < 2 {
            return Err(HhlError::Config("n_redund must be at least 2".into()));
        }
        if self.mode == Mode::Sampled && self.shots == 0 {
            return Err(HhlError::Config("sampled mode needs at least one shot".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HhlResult {
    /// `|C_θ·θ̃⟩` over the system's N components.
    pub normalized_solution: Vec<f64>,
    /// P(top = |1⟩).
    pub postselect_prob_top: f64,
    /// P(medium = |0…0⟩ | top = |1⟩).
    pub postselect_prob_medium: f64,
    pub n_e_exp: f64,
    pub n_e_theory: f64,
    /// Probability mass that reached the λ̃ = 0 accuracy bin (rotated by 0).
    pub zero_bin_weight: f64,
    pub rotation_constant: f64,
    pub qubit_total: usize,
    /// Sampled mode reads magnitudes from shots and signs from the simulator.
    pub simulator_assisted_signs: bool,
}

/// `‖estimate − reference‖ / ‖reference‖`.
pub fn relative_error(estimate: &[f64], reference: &[f64]) -> Result<f64, HhlError> {
    let r = norm(reference);
    if r == 0.0 {
        return Err(HhlError::ZeroReference);
    }
    let diff: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(diff / r)
}

/// Normalized `Σ_j p_j u_j / λ̃_j` with `λ̃_j = ⌊λ_j 2^bits⌋ 2^{-bits}`.
pub fn theoretical_solution(sd: &SpectralDecomposition, n_accur: usize) -> Result<Vec<f64>, HhlError> {
    let truncated = truncated_eigenvalues(sd, n_accur)?;
    Ok(normalized(&sd.spectral_solve_with(|j, _| truncated[j])))
}

pub(crate) fn truncated_eigenvalues(sd: &SpectralDecomposition, bits: usize) -> Result<Vec<f64>, HhlError> {
    sd.eigenvalues
        .iter()
        .enumerate()
        .map(|(index, &l)| {
            let t = qpe::floor_bits(l, bits) as f64 / 2f64.powi(bits as i32);
            if t > 0.0 {
                Ok(t)
            } else {
                Err(HhlError::InsufficientAccuracy { index, bits })
            }
        })
        .collect()
}

/// Signed bottom amplitudes (length N) after both post-selections, and the
/// two post-selection probabilities.
struct PostSelected {
    bottom: Vec<f64>,
    prob_top: f64,
    prob_medium: f64,
    zero_bin_weight: f64,
}

fn fast_path(sys: &ScaledDcSystem, cfg: &HhlConfig, c: f64) -> Result<PostSelected, HhlError> {
    let sd = &sys.spectrum;
    for (index, &value) in sd.eigenvalues.iter().enumerate() {
        if !(value > 0.0 && value < 1.0) {
            return Err(QpeError::RescalingRequired { index, value }.into());
        }
    }
    let m = cfg.n_accur + cfg.n_redund;
    let accur_scale = 2f64.powi(cfg.n_accur as i32);
    // per branch: (Σ_k |α|² g(k), Σ_k |α|² g(k)², zero-bin mass) with g = C/λ̃
    let sums: Vec<(f64, f64, f64)> = sd
        .eigenvalues
        .iter()
        .map(|&lambda| {
            (0..1u64 << m)
                .into_par_iter()
                .map(|k| {
                    let w = kernel_amplitude(lambda, m, k).norm_sqr();
                    let v = k >> cfg.n_redund;
                    if v == 0 {
                        (0.0, 0.0, w)
                    } else {
                        let g = c * accur_scale / v as f64;
                        (w * g, w * g * g, 0.0)
                    }
                })
                .reduce(|| (0.0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2))
        })
        .collect();
    let n = sys.dim();
    let mut bottom = vec![0.0; n];
    let mut prob_top = 0.0;
    let mut zero_bin_weight = 0.0;
    for ((u, p), (g1, g2, z)) in sd.eigenvectors.iter().zip(&sd.projections).zip(&sums) {
        for (b, ui) in bottom.iter_mut().zip(u) {
            *b += p * g1 * ui;
        }
        prob_top += p * p * g2;
        zero_bin_weight += p * p * z;
    }
    let joint = norm(&bottom).powi(2);
    Ok(PostSelected {
        prob_medium: if prob_top > 0.0 { joint / prob_top } else { 0.0 },
        bottom,
        prob_top,
        zero_bin_weight,
    })
}

fn circuit(sys: &ScaledDcSystem, cfg: &HhlConfig, c: f64) -> Result<PostSelected, HhlError> {
    let layout = RegisterLayout::for_dimension(1, cfg.n_accur, cfg.n_redund, sys.dim())?;
    let mut state = StateVector::init_with_amplitudes(layout, &sys.p)?;
    qpe::run_qpe_circuit(&mut state, &sys.spectrum, 1.0)?;

    let accuracy = layout.accuracy_qubits();
    let zero_bin_weight = state.marginal_probabilities(&accuracy)?[0];
    let scale = 2f64.powi(cfg.n_accur as i32);
    state.apply_multiplexed_rotation(&accuracy, 0, |v| {
        if v == 0 {
            Some(0.0)
        } else {
            Some(2.0 * (c * scale / v as f64).asin())
        }
    })?;
    qpe::run_inverse_qpe_circuit(&mut state, &sys.spectrum, 1.0)?;

    let prob_top = postselect(&mut state, &[0], 1)?;
    let medium = layout.medium_qubits();
    let prob_medium = postselect(&mut state, &medium, 0)?;
    let mut fixed = vec![0];
    fixed.extend(&medium);
    let amps: Vec<Complex64> = state.slice_amplitudes(&fixed, 1 << medium.len(), &layout.bottom_qubits())?;
    // amplitudes are real up to rounding; fix the global phase by the largest entry
    let pivot = amps
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or(Complex64::new(1.0, 0.0));
    let phase = if pivot.re < 0.0 { -pivot / pivot.norm() } else { pivot / pivot.norm() };
    let bottom = amps[..sys.dim()].iter().map(|a| (a / phase).re).collect();
    Ok(PostSelected {
        bottom,
        prob_top,
        prob_medium,
        zero_bin_weight,
    })
}

fn postselect(state: &mut StateVector, qubits: &[usize], outcome: u64) -> Result<f64, HhlError> {
    match state.project(qubits, outcome) {
        Ok(p) if p >= MIN_POSTSELECT => Ok(p),
        Ok(p) => Err(HhlError::DegeneratePostSelection { probability: p }),
        Err(SimError::ImpossibleOutcome { probability, .. }) => {
            Err(HhlError::DegeneratePostSelection { probability })
        }
        Err(e) => Err(e.into()),
    }
}

pub fn solve_hhl(sys: &ScaledDcSystem, cfg: &HhlConfig) -> Result<HhlResult, HhlError> {
    cfg.validate()?;
    let c = cfg.rotation()?;
    let post = match cfg.engine {
        Engine::FastPath => fast_path(sys, cfg, c)?,
        Engine::Circuit => circuit(sys, cfg, c)?,
    };
    let joint = post.prob_top * post.prob_medium;
    if joint < MIN_POSTSELECT {
        return Err(HhlError::DegeneratePostSelection { probability: joint });
    }
    let exact = normalized(&post.bottom);
    let normalized_solution = match cfg.mode {
        Mode::Exact => exact,
        Mode::Sampled => {
            let probs: Vec<f64> = exact.iter().map(|a| a * a).collect();
            let hist = sample_distribution(&probs, cfg.shots, cfg.seed);
            exact
                .iter()
                .enumerate()
                .map(|(q, a)| {
                    let count = *hist.get(&(q as u64)).unwrap_or(&0) as f64;
                    a.signum() * (count / cfg.shots as f64).sqrt()
                })
                .collect()
        }
    };
    let reference = normalized(&sys.spectrum.spectral_solve());
    let theory = theoretical_solution(&sys.spectrum, cfg.n_accur)?;
    Ok(HhlResult {
        n_e_exp: relative_error(&normalized_solution, &reference)?,
        n_e_theory: relative_error(&theory, &reference)?,
        normalized_solution,
        postselect_prob_top: post.prob_top,
        postselect_prob_medium: post.prob_medium,
        zero_bin_weight: post.zero_bin_weight,
        rotation_constant: c,
        qubit_total: cfg.total_qubits(sys.dim()),
        simulator_assisted_signs: cfg.mode == Mode::Sampled,
    })
}
