//! Statevector kernel.
//!
//! Qubit ordering: registers are concatenated `top | medium | bottom`, with
//! the medium register split into accuracy qubits followed by redundant
//! qubits. Global qubit 0 is the most-significant bit of the amplitude
//! index, and within any register the first listed qubit is the
//! most-significant bit of that register's basis value. The bottom register
//! therefore occupies the low `n_bottom` bits and its blocks are contiguous.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::CMatrix;

/// Default simulator ceiling (2^24 complex doubles = 256 MiB).
pub const DEFAULT_MAX_QUBITS: usize = 24;
/// Environment override for [`DEFAULT_MAX_QUBITS`].
pub const MAX_QUBITS_ENV: &str = "QPF_MAX_QUBITS";

const NORM_TOLERANCE: f64 = 1e-10;
const UNITARY_TOLERANCE: f64 = 1e-10;
const MIN_OUTCOME_PROBABILITY: f64 = 1e-15;
const PARALLEL_THRESHOLD: usize = 1 << 14;

/// Simulator qubit cap, honouring `QPF_MAX_QUBITS`.
pub fn max_qubits() -> usize {
    std::env::var(MAX_QUBITS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_MAX_QUBITS)
}

/// The generator behind every seeded draw in the crate: ChaCha8 seeded
/// through `SeedableRng::seed_from_u64`.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("amplitudes are not normalized (norm {norm})")]
    Normalization { norm: f64 },
    #[error("{len} values do not fit a bottom register of {capacity} states")]
    BottomOverflow { len: usize, capacity: usize },
    #[error("qubit {qubit} out of range for a {total}-qubit register")]
    QubitOutOfRange { qubit: usize, total: usize },
    #[error("qubit {qubit} listed more than once")]
    DuplicateQubit { qubit: usize },
    #[error("operator dimension {found} does not match register dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("operator is not unitary (max |U†U - I| = {defect:e})")]
    NonUnitary { defect: f64 },
    #[error("no rotation angle for reachable control value {value}")]
    MissingAngle { value: u64 },
    #[error("outcome {outcome} has probability {probability:e}")]
    ImpossibleOutcome { outcome: u64, probability: f64 },
    #[error("{requested} qubits exceed the simulator cap of {cap}")]
    TooManyQubits { requested: usize, cap: usize },
    #[error("invalid register layout: {0}")]
    InvalidLayout(String),
}

/// Partition of the simulated qubits into top, medium (accuracy + redundant)
/// and bottom registers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegisterLayout {
    pub n_top: usize,
    pub n_accur: usize,
    pub n_redund: usize,
    pub n_bottom: usize,
}

impl RegisterLayout {
    pub fn new(
        n_top: usize,
        n_accur: usize,
        n_redund: usize,
        n_bottom: usize,
    ) -> Result<Self, SimError> {
        Self::with_cap(n_top, n_accur, n_redund, n_bottom, max_qubits())
    }

    pub fn with_cap(
        n_top: usize,
        n_accur: usize,
        n_redund: usize,
        n_bottom: usize,
        cap: usize,
    ) -> Result<Self, SimError> {
        if n_top > 1 {
            return Err(SimError::InvalidLayout(format!(
                "top register holds 0 or 1 qubits, got {n_top}"
            )));
        }
        if n_accur == 0 {
            return Err(SimError::InvalidLayout(
                "at least one accuracy qubit is required".into(),
            ));
        }
        let layout = Self {
            n_top,
            n_accur,
            n_redund,
            n_bottom,
        };
        if layout.total() > cap {
            return Err(SimError::TooManyQubits {
                requested: layout.total(),
                cap,
            });
        }
        Ok(layout)
    }

    /// Layout whose bottom register holds a `dim`-dimensional system.
    pub fn for_dimension(
        n_top: usize,
        n_accur: usize,
        n_redund: usize,
        dim: usize,
    ) -> Result<Self, SimError> {
        Self::new(n_top, n_accur, n_redund, bottom_qubits_for(dim))
    }

    pub fn total(&self) -> usize {
        self.n_top + self.n_accur + self.n_redund + self.n_bottom
    }

    pub fn n_medium(&self) -> usize {
        self.n_accur + self.n_redund
    }

    pub fn top_qubit(&self) -> Option<usize> {
        (self.n_top == 1).then_some(0)
    }

    pub fn medium_qubits(&self) -> Vec<usize> {
        (self.n_top..self.n_top + self.n_medium()).collect()
    }

    pub fn accuracy_qubits(&self) -> Vec<usize> {
        (self.n_top..self.n_top + self.n_accur).collect()
    }

    pub fn redundant_qubits(&self) -> Vec<usize> {
        let start = self.n_top + self.n_accur;
        (start..start + self.n_redund).collect()
    }

    pub fn bottom_qubits(&self) -> Vec<usize> {
        let start = self.n_top + self.n_medium();
        (start..start + self.n_bottom).collect()
    }
}

/// `⌈log2 dim⌉`.
pub fn bottom_qubits_for(dim: usize) -> usize {
    dim.max(1).next_power_of_two().trailing_zeros() as usize
}

/// Shot histogram keyed by register basis value.
pub type Histogram = BTreeMap<u64, u64>;

pub mod gates {
    use super::*;

    pub type Gate = [[Complex64; 2]; 2];

    const ZERO: Complex64 = Complex64::new(0.0, 0.0);
    const ONE: Complex64 = Complex64::new(1.0, 0.0);

    pub const HADAMARD: Gate = [
        [Complex64::new(FRAC_1_SQRT_2, 0.0), Complex64::new(FRAC_1_SQRT_2, 0.0)],
        [Complex64::new(FRAC_1_SQRT_2, 0.0), Complex64::new(-FRAC_1_SQRT_2, 0.0)],
    ];
    pub const PAULI_X: Gate = [[ZERO, ONE], [ONE, ZERO]];

    pub fn ry(angle: f64) -> Gate {
        let (s, c) = (angle / 2.0).sin_cos();
        [
            [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
            [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    layout: RegisterLayout,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// `|0⟩_top ⊗ |0…0⟩_medium ⊗ |values⟩_bottom`, zero-padding `values` to
    /// the bottom register size.
    pub fn init_with_amplitudes(
        layout: RegisterLayout,
        bottom_values: &[f64],
    ) -> Result<Self, SimError> {
        let capacity = 1usize << layout.n_bottom;
        if bottom_values.len() > capacity {
            return Err(SimError::BottomOverflow {
                len: bottom_values.len(),
                capacity,
            });
        }
        let norm = bottom_values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(SimError::Normalization { norm });
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << layout.total()];
        for (slot, v) in amplitudes.iter_mut().zip(bottom_values) {
            *slot = Complex64::new(*v, 0.0);
        }
        Ok(Self { layout, amplitudes })
    }

    /// Computational basis state `|index⟩`.
    pub fn basis(layout: RegisterLayout, index: usize) -> Self {
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << layout.total()];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Self { layout, amplitudes }
    }

    pub fn from_amplitudes(
        layout: RegisterLayout,
        amplitudes: Vec<Complex64>,
    ) -> Result<Self, SimError> {
        let expected = 1usize << layout.total();
        if amplitudes.len() != expected {
            return Err(SimError::DimensionMismatch {
                expected,
                found: amplitudes.len(),
            });
        }
        let state = Self { layout, amplitudes };
        let norm = state.norm_sqr().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(SimError::Normalization { norm });
        }
        Ok(state)
    }

    pub fn layout(&self) -> &RegisterLayout {
        &self.layout
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn num_qubits(&self) -> usize {
        self.layout.total()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    #[inline]
    fn shift_of(&self, qubit: usize) -> usize {
        self.num_qubits() - 1 - qubit
    }

    fn check_qubits(&self, qubits: &[usize]) -> Result<(), SimError> {
        let total = self.num_qubits();
        for (i, &q) in qubits.iter().enumerate() {
            if q >= total {
                return Err(SimError::QubitOutOfRange { qubit: q, total });
            }
            if qubits[..i].contains(&q) {
                return Err(SimError::DuplicateQubit { qubit: q });
            }
        }
        Ok(())
    }

    /// Basis value of `qubits` (first listed = MSB) within a global index.
    #[inline]
    fn register_value(index: usize, shifts: &[usize]) -> u64 {
        shifts
            .iter()
            .fold(0u64, |acc, &s| (acc << 1) | ((index >> s) & 1) as u64)
    }

    fn shifts(&self, qubits: &[usize]) -> Vec<usize> {
        qubits.iter().map(|&q| self.shift_of(q)).collect()
    }

    pub fn apply_single_qubit(&mut self, qubit: usize, gate: &gates::Gate) -> Result<(), SimError> {
        self.check_qubits(&[qubit])?;
        let stride = 1usize << self.shift_of(qubit);
        let g = *gate;
        let kernel = move |chunk: &mut [Complex64]| {
            let (lo, hi) = chunk.split_at_mut(stride);
            for (a0, a1) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x0, x1) = (*a0, *a1);
                *a0 = g[0][0] * x0 + g[0][1] * x1;
                *a1 = g[1][0] * x0 + g[1][1] * x1;
            }
        };
        if self.amplitudes.len() >= PARALLEL_THRESHOLD {
            self.amplitudes.par_chunks_mut(2 * stride).for_each(kernel);
        } else {
            self.amplitudes.chunks_mut(2 * stride).for_each(kernel);
        }
        Ok(())
    }

    pub fn apply_hadamard_block(&mut self, qubits: &[usize]) -> Result<(), SimError> {
        self.check_qubits(qubits)?;
        for &q in qubits {
            self.apply_single_qubit(q, &gates::HADAMARD)?;
        }
        Ok(())
    }

    /// Multiplies the bottom block of every amplitude whose `control` bit is
    /// set by `u`.
    pub fn apply_controlled_unitary(&mut self, control: usize, u: &CMatrix) -> Result<(), SimError> {
        self.check_qubits(&[control])?;
        if self.layout.bottom_qubits().contains(&control) {
            return Err(SimError::InvalidLayout(
                "control qubit lies inside the bottom register".into(),
            ));
        }
        let dim = 1usize << self.layout.n_bottom;
        if u.dim() != dim {
            return Err(SimError::DimensionMismatch {
                expected: dim,
                found: u.dim(),
            });
        }
        let defect = u.unitarity_defect();
        if defect > UNITARY_TOLERANCE {
            return Err(SimError::NonUnitary { defect });
        }
        let bit = 1usize << self.shift_of(control);
        let block_shift = self.layout.n_bottom;
        let kernel = |(block, chunk): (usize, &mut [Complex64])| {
            if (block << block_shift) & bit == 0 {
                return;
            }
            let out = u.mul_vec(chunk);
            chunk.copy_from_slice(&out);
        };
        if self.amplitudes.len() >= PARALLEL_THRESHOLD {
            self.amplitudes.par_chunks_mut(dim).enumerate().for_each(kernel);
        } else {
            self.amplitudes.chunks_mut(dim).enumerate().for_each(kernel);
        }
        Ok(())
    }

    fn apply_controlled_phase(&mut self, control: usize, target: usize, angle: f64) {
        let mask = (1usize << self.shift_of(control)) | (1usize << self.shift_of(target));
        let phase = Complex64::from_polar(1.0, angle);
        let kernel = |(i, a): (usize, &mut Complex64)| {
            if i & mask == mask {
                *a *= phase;
            }
        };
        if self.amplitudes.len() >= PARALLEL_THRESHOLD {
            self.amplitudes.par_iter_mut().enumerate().for_each(kernel);
        } else {
            self.amplitudes.iter_mut().enumerate().for_each(kernel);
        }
    }

    fn apply_swap(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let (sa, sb) = (self.shift_of(a), self.shift_of(b));
        for i in 0..self.amplitudes.len() {
            let (ba, bb) = ((i >> sa) & 1, (i >> sb) & 1);
            if ba == 1 && bb == 0 {
                let j = i ^ (1 << sa) ^ (1 << sb);
                self.amplitudes.swap(i, j);
            }
        }
    }

    /// `|x⟩ ↦ 2^{-m/2} Σ_y e^{2πixy/2^m}|y⟩` on `qubits` (MSB first).
    pub fn apply_qft(&mut self, qubits: &[usize]) -> Result<(), SimError> {
        self.check_qubits(qubits)?;
        let m = qubits.len();
        for j in 0..m {
            self.apply_single_qubit(qubits[j], &gates::HADAMARD)?;
            for k in (j + 1)..m {
                let angle = 2.0 * PI / (1u64 << (k - j + 1)) as f64;
                self.apply_controlled_phase(qubits[k], qubits[j], angle);
            }
        }
        for j in 0..m / 2 {
            self.apply_swap(qubits[j], qubits[m - 1 - j]);
        }
        Ok(())
    }

    /// Exact inverse of [`StateVector::apply_qft`].
    pub fn apply_inverse_qft(&mut self, qubits: &[usize]) -> Result<(), SimError> {
        self.check_qubits(qubits)?;
        let m = qubits.len();
        for j in 0..m / 2 {
            self.apply_swap(qubits[j], qubits[m - 1 - j]);
        }
        for j in (0..m).rev() {
            for k in ((j + 1)..m).rev() {
                let angle = -2.0 * PI / (1u64 << (k - j + 1)) as f64;
                self.apply_controlled_phase(qubits[k], qubits[j], angle);
            }
            self.apply_single_qubit(qubits[j], &gates::HADAMARD)?;
        }
        Ok(())
    }

    /// For every basis value `v` of `controls`, rotates `target` by
    /// `R_y(angle_of(v))`. `angle_of` returning `None` for a value that
    /// carries amplitude is an error.
    pub fn apply_multiplexed_rotation(
        &mut self,
        controls: &[usize],
        target: usize,
        angle_of: impl Fn(u64) -> Option<f64>,
    ) -> Result<(), SimError> {
        let mut all = controls.to_vec();
        all.push(target);
        self.check_qubits(&all)?;
        let shifts = self.shifts(controls);
        let tbit = 1usize << self.shift_of(target);
        let mut cache: BTreeMap<u64, Option<gates::Gate>> = BTreeMap::new();
        for i in 0..self.amplitudes.len() {
            if i & tbit != 0 {
                continue;
            }
            let j = i | tbit;
            let (x0, x1) = (self.amplitudes[i], self.amplitudes[j]);
            if x0.norm_sqr() == 0.0 && x1.norm_sqr() == 0.0 {
                continue;
            }
            let v = Self::register_value(i, &shifts);
            let gate = *cache.entry(v).or_insert_with(|| angle_of(v).map(gates::ry));
            let g = gate.ok_or(SimError::MissingAngle { value: v })?;
            self.amplitudes[i] = g[0][0] * x0 + g[0][1] * x1;
            self.amplitudes[j] = g[1][0] * x0 + g[1][1] * x1;
        }
        Ok(())
    }

    /// Probability of each basis value of `qubits`, indexed by value.
    pub fn marginal_probabilities(&self, qubits: &[usize]) -> Result<Vec<f64>, SimError> {
        self.check_qubits(qubits)?;
        let shifts = self.shifts(qubits);
        let mut probs = vec![0.0; 1 << qubits.len()];
        for (i, a) in self.amplitudes.iter().enumerate() {
            let p = a.norm_sqr();
            if p != 0.0 {
                probs[Self::register_value(i, &shifts) as usize] += p;
            }
        }
        Ok(probs)
    }

    /// Projects `qubits` onto `outcome`, renormalizes, and returns the
    /// pre-projection probability.
    pub fn project(&mut self, qubits: &[usize], outcome: u64) -> Result<f64, SimError> {
        self.check_qubits(qubits)?;
        let shifts = self.shifts(qubits);
        let probability: f64 = self
            .amplitudes
            .iter()
            .enumerate()
            .filter(|(i, _)| Self::register_value(*i, &shifts) == outcome)
            .map(|(_, a)| a.norm_sqr())
            .sum();
        if probability <= MIN_OUTCOME_PROBABILITY {
            return Err(SimError::ImpossibleOutcome {
                outcome,
                probability,
            });
        }
        let scale = 1.0 / probability.sqrt();
        for (i, a) in self.amplitudes.iter_mut().enumerate() {
            if Self::register_value(i, &shifts) == outcome {
                *a *= scale;
            } else {
                *a = Complex64::new(0.0, 0.0);
            }
        }
        Ok(probability)
    }

    /// Amplitudes over `free` qubits with `fixed` qubits held at `value`.
    pub fn slice_amplitudes(
        &self,
        fixed: &[usize],
        value: u64,
        free: &[usize],
    ) -> Result<Vec<Complex64>, SimError> {
        let mut all = fixed.to_vec();
        all.extend_from_slice(free);
        self.check_qubits(&all)?;
        let (fs, gs) = (self.shifts(fixed), self.shifts(free));
        let mut out = vec![Complex64::new(0.0, 0.0); 1 << free.len()];
        for (i, a) in self.amplitudes.iter().enumerate() {
            if Self::register_value(i, &fs) == value {
                out[Self::register_value(i, &gs) as usize] += *a;
            }
        }
        Ok(out)
    }

    /// `shots` independent draws of `qubits`, deterministic in `seed`.
    pub fn sample(&self, qubits: &[usize], shots: u64, seed: u64) -> Result<Histogram, SimError> {
        let probs = self.marginal_probabilities(qubits)?;
        Ok(sample_distribution(&probs, shots, seed))
    }
}

/// Draws `shots` samples from a probability vector indexed by outcome.
pub fn sample_distribution(probs: &[f64], shots: u64, seed: u64) -> Histogram {
    let mut hist = Histogram::new();
    if shots == 0 {
        return hist;
    }
    let dist = WeightedIndex::new(probs.iter().map(|p| p.max(0.0)))
        .expect("distribution has positive mass");
    let mut rng = seeded_rng(seed);
    for _ in 0..shots {
        *hist.entry(dist.sample(&mut rng) as u64).or_insert(0) += 1;
    }
    hist
}
