//! Hybrid phase-estimation solvers.
//!
//! HSPEA runs one phase estimation and measures accuracy bits together with
//! the bottom register. HMPEA cascades `⌈m_prec/n_accur⌉` modules; module `i`
//! uses `U^{2^{(i−1)n_accur}}` so its accuracy bits are the next chunk of the
//! eigenvalue string. Only the medium register is reset between modules; the
//! bottom register carries the branch correlation from one module to the next.
//!
//! In the eigenbasis, a module outcome `(a, r)` acts on the bottom register as
//! `Σ_j α_j(a, r)|u_j⟩⟨u_j|`. Tracing out `r`, the bottom density matrix after
//! outcome `a` is `ρ'_{jk} = ρ_{jk}·Σ_r α_j(a,r) conj(α_k(a,r))`. The exact
//! engine walks this tree over outcome prefixes; its cost is independent of the
//! redundant register width apart from building the per-module kernels.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dcpf::ScaledDcSystem;
use crate::hhl::{relative_error, HhlError};
use crate::linalg::SpectralDecomposition;
use crate::qpe::{
    self, bit_string, failure_bound_single, floor_bits, kernel_amplitudes, module_count, module_phase,
    window_success_probability, QpeError,
};
use crate::statevector::{bottom_qubits_for, seeded_rng, RegisterLayout, SimError, StateVector};
use crate::{Engine, Mode, DEFAULT_SHOTS};

pub const DEFAULT_SIGN_TOLERANCE: f64 = 0.05;
/// Leaves of the outcome tree are dense; this bounds `n_module·n_accur`.
pub const MAX_TREE_BITS: usize = 24;
const MAX_CIRCUIT_TRAJECTORIES: usize = 1 << 20;
const MAX_SIGN_BRANCHES: usize = 20;
const RESIDUAL_TIE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HybridError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Qpe(#[from] QpeError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Hhl(#[from] HhlError),
    #[error("eigenvalues collide at {bits} bits: {prefixes:?}")]
    BranchCollision { bits: usize, prefixes: Vec<String> },
    #[error("{modules} modules of {n_accur} bits exceed the {MAX_TREE_BITS}-bit outcome tree")]
    ModuleOverflow { modules: usize, n_accur: usize },
    #[error("circuit engine would track {trajectories} bottom-register trajectories")]
    CircuitTooLarge { trajectories: usize },
    #[error("no sign assignment for row {row} within tolerance; best residual {best_residual:.6}")]
    CalibrationFailure { row: usize, best_residual: f64 },
    #[error("sign search over {0} branches is too large")]
    TooManyBranches(usize),
    #[error("statistics have not been sign-calibrated")]
    NotCalibrated,
    #[error("branch {branch} has a zero truncated eigenvalue")]
    ZeroEigenvalue { branch: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HybridConfig {
    pub m_prec: usize,
    pub n_accur: usize,
    pub n_redund: usize,
    pub mode: Mode,
    pub shots: u64,
    pub seed: u64,
    pub engine: Engine,
    pub sign_tolerance: f64,
}

impl HybridConfig {
    pub fn new(m_prec: usize, n_accur: usize, n_redund: usize) -> Self {
        Self {
            m_prec,
            n_accur,
            n_redund,
            mode: Mode::Exact,
            shots: DEFAULT_SHOTS,
            seed: 0,
            engine: Engine::FastPath,
            sign_tolerance: DEFAULT_SIGN_TOLERANCE,
        }
    }

    /// Single-module configuration: `m_prec = n_accur`.
    pub fn single(n_accur: usize, n_redund: usize) -> Self {
        Self::new(n_accur, n_accur, n_redund)
    }

    pub fn sampled(mut self, shots: u64, seed: u64) -> Self {
        self.mode = Mode::Sampled;
        self.shots = shots;
        self.seed = seed;
        self
    }

    pub fn with_engine(mut self, engine: Engine) -> Self {
        self.engine = engine;
        self
    }

    pub fn n_module(&self) -> usize {
        module_count(self.m_prec, self.n_accur)
    }

    pub fn total_qubits(&self, dim: usize) -> usize {
        self.n_accur + self.n_redund + bottom_qubits_for(dim)
    }

    fn validate(&self) -> Result<(), HybridError> {
        if self.n_accur == 0 || self.m_prec == 0 {
            return Err(HybridError::Config("m_prec and n_accur must be at least 1".into()));
        }
        if self.n_redund < 2 {
            return Err(HybridError::Config("n_redund must be at least 2".into()));
        }
        if self.mode == Mode::Sampled && self.shots == 0 {
            return Err(HybridError::Config("sampled mode needs at least one shot".into()));
        }
        if self.n_module() * self.n_accur > MAX_TREE_BITS {
            return Err(HybridError::ModuleOverflow {
                modules: self.n_module(),
                n_accur: self.n_accur,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Branch {
    /// `⌊λ_j 2^{m_prec}⌋`.
    pub bits: u64,
    pub bit_string: String,
    /// Estimate of `C_p² p_j²`.
    pub joint_probability: f64,
    /// `|u_jq|` for `q = 0..N`, from `P(q | branch)`.
    pub magnitudes: Vec<f64>,
}

impl Branch {
    pub fn eigenvalue_estimate(&self, m_prec: usize) -> f64 {
        self.bits as f64 / 2f64.powi(m_prec as i32)
    }
}

/// Module index (1-based) at which two branches first produced different bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Divergence {
    pub first: usize,
    pub second: usize,
    pub module: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HybridStatistics {
    pub m_prec: usize,
    pub n_accur: usize,
    pub n_redund: usize,
    pub n_module: usize,
    pub mode: Mode,
    /// Claimed branches ordered by descending eigenvalue estimate.
    pub branches: Vec<Branch>,
    /// Probability mass outside all claimed branches.
    pub leakage: f64,
    pub divergence_log: Vec<Divergence>,
    /// `signed_products[j][q] ≈ C_p p_j u_jq`, set by [`HybridStatistics::apply_calibration`].
    pub signed_products: Option<Vec<Vec<f64>>>,
    pub ambiguous_rows: Vec<usize>,
}

impl HybridStatistics {
    pub fn apply_calibration(&mut self, cal: &SignCalibration) {
        self.signed_products = Some(cal.products.clone());
        self.ambiguous_rows = cal.ambiguous_rows.clone();
    }
}

/// Joint distribution over the concatenated module outcomes (leaf) and the
/// bottom register: `joint[leaf][q] = P(leaf, q)`.
struct LeafDistribution {
    leaf_bits: usize,
    joint: Vec<Vec<f64>>,
}

impl LeafDistribution {
    fn leaf_mass(&self) -> Vec<f64> {
        self.joint.iter().map(|row| row.iter().sum()).collect()
    }
}

fn check_collisions(sd: &SpectralDecomposition, bits: usize) -> Result<(), HybridError> {
    let mut seen: BTreeMap<u64, usize> = BTreeMap::new();
    for &l in &sd.eigenvalues {
        *seen.entry(floor_bits(l, bits)).or_insert(0) += 1;
    }
    let prefixes: Vec<String> = seen
        .iter()
        .filter(|(_, &c)| c > 1)
        .map(|(&v, _)| bit_string(v, bits))
        .collect();
    if prefixes.is_empty() {
        Ok(())
    } else {
        Err(HybridError::BranchCollision { bits, prefixes })
    }
}

fn check_spectrum(sd: &SpectralDecomposition) -> Result<(), HybridError> {
    for (index, &value) in sd.eigenvalues.iter().enumerate() {
        if !(value > 0.0 && value < 1.0) {
            return Err(QpeError::RescalingRequired { index, value }.into());
        }
    }
    Ok(())
}

/// `kraus[a][j*N + k] = Σ_r α_j(a, r) conj(α_k(a, r))` for one module.
fn module_kernels(sd: &SpectralDecomposition, multiplier: f64, n_accur: usize, n_redund: usize) -> Vec<Vec<Complex64>> {
    let m = n_accur + n_redund;
    let n = sd.dim();
    let amps: Vec<Vec<Complex64>> = sd
        .eigenvalues
        .iter()
        .map(|&l| kernel_amplitudes(module_phase(l, multiplier), m))
        .collect();
    (0..1u64 << n_accur)
        .into_par_iter()
        .map(|a| {
            let mut k = vec![Complex64::new(0.0, 0.0); n * n];
            for r in 0..1u64 << n_redund {
                let idx = ((a << n_redund) | r) as usize;
                for i in 0..n {
                    let ai = amps[i][idx];
                    for j in 0..n {
                        k[i * n + j] += ai * amps[j][idx].conj();
                    }
                }
            }
            k
        })
        .collect()
}

fn exact_leaves(sys: &ScaledDcSystem, cfg: &HybridConfig) -> LeafDistribution {
    let sd = &sys.spectrum;
    let n = sd.dim();
    let p = &sd.projections;
    let mut level: Vec<Vec<Complex64>> = vec![(0..n * n)
        .map(|idx| Complex64::new(p[idx / n] * p[idx % n], 0.0))
        .collect()];
    for i in 0..cfg.n_module() {
        let multiplier = 2f64.powi((i * cfg.n_accur) as i32);
        let kernels = module_kernels(sd, multiplier, cfg.n_accur, cfg.n_redund);
        level = level
            .par_iter()
            .flat_map_iter(|rho| {
                kernels
                    .iter()
                    .map(move |k| rho.iter().zip(k).map(|(x, y)| x * y).collect::<Vec<_>>())
            })
            .collect();
    }
    let joint = level
        .par_iter()
        .map(|rho| {
            (0..n)
                .map(|q| {
                    let mut s = 0.0;
                    for j in 0..n {
                        for k in 0..n {
                            s += rho[j * n + k].re * sd.eigenvectors[j][q] * sd.eigenvectors[k][q];
                        }
                    }
                    s.max(0.0)
                })
                .collect()
        })
        .collect();
    LeafDistribution {
        leaf_bits: cfg.n_module() * cfg.n_accur,
        joint,
    }
}

/// Gate-level cascade. Each leaf keeps the list of unnormalized bottom states
/// reached through the different redundant-register outcomes.
fn circuit_leaves(sys: &ScaledDcSystem, cfg: &HybridConfig) -> Result<LeafDistribution, HybridError> {
    let n = sys.dim();
    let layout = RegisterLayout::for_dimension(0, cfg.n_accur, cfg.n_redund, n)?;
    let nb = layout.n_bottom;
    let modules = cfg.n_module();
    let trajectories = 1usize
        .checked_shl(((cfg.n_accur + cfg.n_redund) * modules) as u32)
        .unwrap_or(usize::MAX);
    if trajectories > MAX_CIRCUIT_TRAJECTORIES {
        return Err(HybridError::CircuitTooLarge { trajectories });
    }
    let mut bottom0 = vec![Complex64::new(0.0, 0.0); 1 << nb];
    for (b, v) in bottom0.iter_mut().zip(&sys.p) {
        *b = Complex64::new(*v, 0.0);
    }
    let mut level: Vec<Vec<Vec<Complex64>>> = vec![vec![bottom0]];
    let accur_count = 1usize << cfg.n_accur;
    let redund_count = 1usize << cfg.n_redund;
    for i in 0..modules {
        let multiplier = 2f64.powi((i * cfg.n_accur) as i32);
        let mut next: Vec<Vec<Vec<Complex64>>> = Vec::with_capacity(level.len() * accur_count);
        for states in &level {
            let mut children = vec![Vec::new(); accur_count];
            for psi in states {
                let w: f64 = psi.iter().map(|a| a.norm_sqr()).sum();
                if w == 0.0 {
                    continue;
                }
                let scale = w.sqrt();
                let mut amps = vec![Complex64::new(0.0, 0.0); 1 << layout.total()];
                for (slot, a) in amps.iter_mut().zip(psi) {
                    *slot = a / scale;
                }
                let mut state = StateVector::from_amplitudes(layout, amps)?;
                qpe::run_qpe_circuit(&mut state, &sys.spectrum, multiplier)?;
                // medium qubits sit above the bottom register, so each medium
                // value owns a contiguous block of 2^nb amplitudes
                for (v, block) in state.amplitudes().chunks(1 << nb).enumerate() {
                    if block.iter().all(|a| a.norm_sqr() == 0.0) {
                        continue;
                    }
                    children[v / redund_count].push(block.iter().map(|a| a * scale).collect());
                }
            }
            next.extend(children);
        }
        level = next;
    }
    let joint = level
        .iter()
        .map(|states| {
            (0..n)
                .map(|q| states.iter().map(|psi| psi[q].norm_sqr()).sum())
                .collect()
        })
        .collect();
    Ok(LeafDistribution {
        leaf_bits: modules * cfg.n_accur,
        joint,
    })
}

/// Greedy branch claiming by descending mass until the claimed mass reaches
/// `1 − 2·ε·n_module` or N branches are found.
fn claim_branches(mass: &BTreeMap<u64, f64>, n: usize, threshold: f64) -> Vec<u64> {
    let mut ordered: Vec<(u64, f64)> = mass.iter().map(|(&k, &v)| (k, v)).collect();
    ordered.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut claimed = Vec::new();
    let mut total = 0.0;
    for (bits, m) in ordered {
        if claimed.len() == n || (!claimed.is_empty() && total >= threshold) || m <= 0.0 {
            break;
        }
        claimed.push(bits);
        total += m;
    }
    claimed.sort_unstable_by(|a, b| b.cmp(a));
    claimed
}

fn divergence_log(bits: &[u64], m_prec: usize, n_accur: usize) -> Vec<Divergence> {
    let mut log = Vec::new();
    for a in 0..bits.len() {
        for b in a + 1..bits.len() {
            let diff = bits[a] ^ bits[b];
            let lead = m_prec - 1 - (63 - diff.leading_zeros() as usize);
            log.push(Divergence {
                first: a,
                second: b,
                module: lead / n_accur + 1,
            });
        }
    }
    log
}

fn build_statistics(
    cfg: &HybridConfig,
    n: usize,
    branch_mass: BTreeMap<u64, f64>,
    branch_joint: BTreeMap<u64, Vec<f64>>,
) -> Result<HybridStatistics, HybridError> {
    let eps = failure_bound_single(cfg.n_redund)?;
    let threshold = 1.0 - 2.0 * eps * cfg.n_module() as f64;
    let claimed = claim_branches(&branch_mass, n, threshold);
    let branches: Vec<Branch> = claimed
        .iter()
        .map(|bits| {
            let mass = branch_mass[bits];
            let magnitudes = branch_joint[bits].iter().map(|v| (v / mass).max(0.0).sqrt()).collect();
            Branch {
                bits: *bits,
                bit_string: bit_string(*bits, cfg.m_prec),
                joint_probability: mass,
                magnitudes,
            }
        })
        .collect();
    let claimed_mass: f64 = branches.iter().map(|b| b.joint_probability).sum();
    let total: f64 = branch_mass.values().sum();
    Ok(HybridStatistics {
        m_prec: cfg.m_prec,
        n_accur: cfg.n_accur,
        n_redund: cfg.n_redund,
        n_module: cfg.n_module(),
        mode: cfg.mode,
        divergence_log: divergence_log(&claimed, cfg.m_prec, cfg.n_accur),
        branches,
        leakage: (total - claimed_mass).max(0.0),
        signed_products: None,
        ambiguous_rows: Vec::new(),
    })
}

fn exact_statistics(leaves: &LeafDistribution, cfg: &HybridConfig, n: usize) -> Result<HybridStatistics, HybridError> {
    let shift = leaves.leaf_bits - cfg.m_prec;
    let mut mass: BTreeMap<u64, f64> = BTreeMap::new();
    let mut joint: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for (leaf, row) in leaves.joint.iter().enumerate() {
        let s = (leaf as u64) >> shift;
        *mass.entry(s).or_insert(0.0) += row.iter().sum::<f64>();
        let acc = joint.entry(s).or_insert_with(|| vec![0.0; n]);
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    build_statistics(cfg, n, mass, joint)
}

/// Per shot: module outcomes are drawn one at a time from the conditional
/// distribution given the earlier modules, then the bottom register.
fn sampled_statistics(leaves: &LeafDistribution, cfg: &HybridConfig, n: usize) -> Result<HybridStatistics, HybridError> {
    let na = cfg.n_accur;
    let modules = cfg.n_module();
    let mut levels: Vec<Vec<f64>> = vec![leaves.leaf_mass()];
    for _ in 0..modules {
        let prev = levels.last().expect("non-empty");
        let up: Vec<f64> = prev.chunks(1 << na).map(|c| c.iter().sum()).collect();
        levels.push(up);
    }
    levels.reverse();
    let mut rng = seeded_rng(cfg.seed);
    let mut counts: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    let shift = leaves.leaf_bits - cfg.m_prec;
    for _ in 0..cfg.shots {
        let mut node = 0usize;
        for level in levels.iter().skip(1) {
            let children = &level[node << na..(node + 1) << na];
            node = (node << na) + draw(children, &mut rng);
        }
        let q = draw(&leaves.joint[node], &mut rng);
        counts.entry((node as u64) >> shift).or_insert_with(|| vec![0; n])[q] += 1;
    }
    let shots = cfg.shots as f64;
    let mass = counts
        .iter()
        .map(|(&s, c)| (s, c.iter().sum::<u64>() as f64 / shots))
        .collect();
    let joint = counts
        .iter()
        .map(|(&s, c)| (s, c.iter().map(|&v| v as f64 / shots).collect()))
        .collect();
    build_statistics(cfg, n, mass, joint)
}

fn draw(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = i;
            if u < w {
                return i;
            }
            u -= w;
        }
    }
    last
}

/// Multi-module hybrid phase estimation.
pub fn run_hmpea(sys: &ScaledDcSystem, cfg: &HybridConfig) -> Result<HybridStatistics, HybridError> {
    cfg.validate()?;
    check_spectrum(&sys.spectrum)?;
    check_collisions(&sys.spectrum, cfg.m_prec)?;
    let leaves = match cfg.engine {
        Engine::FastPath => exact_leaves(sys, cfg),
        Engine::Circuit => {
            RegisterLayout::for_dimension(0, cfg.n_accur, cfg.n_redund, sys.dim())?;
            circuit_leaves(sys, cfg)?
        }
    };
    match cfg.mode {
        Mode::Exact => exact_statistics(&leaves, cfg, sys.dim()),
        Mode::Sampled => sampled_statistics(&leaves, cfg, sys.dim()),
    }
}

/// Single-module hybrid phase estimation; requires `m_prec = n_accur`.
pub fn run_hspea(sys: &ScaledDcSystem, cfg: &HybridConfig) -> Result<HybridStatistics, HybridError> {
    if cfg.m_prec != cfg.n_accur {
        return Err(HybridError::Config(format!(
            "single-module run needs m_prec = n_accur, got {} and {}",
            cfg.m_prec, cfg.n_accur
        )));
    }
    run_hmpea(sys, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignCalibration {
    /// `products[j][q]`, signed.
    pub products: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub ambiguous_rows: Vec<usize>,
    pub tolerance: f64,
}

/// Per component row `q`, picks signs for `|C_p p_j u_jq| = √P_j·|u_jq|` so
/// that their sum matches `p_vec[q]`. The minimum-residual assignment wins;
/// equal residuals go to the lexicographically first (`+` before `−`).
pub fn calibrate_signs(stats: &HybridStatistics, p_vec: &[f64], tolerance: f64) -> Result<SignCalibration, HybridError> {
    let b = stats.branches.len();
    if b > MAX_SIGN_BRANCHES {
        return Err(HybridError::TooManyBranches(b));
    }
    let mags: Vec<Vec<f64>> = stats
        .branches
        .iter()
        .map(|br| br.magnitudes.iter().map(|u| br.joint_probability.sqrt() * u).collect())
        .collect();
    let mut products = vec![vec![0.0; p_vec.len()]; b];
    let mut residuals = Vec::with_capacity(p_vec.len());
    let mut ambiguous_rows = Vec::new();
    for (q, &target) in p_vec.iter().enumerate() {
        let mut best = (f64::INFINITY, 0u64);
        let mut passing = 0usize;
        for mask in 0..1u64 << b {
            let sum: f64 = (0..b)
                .map(|j| {
                    let negative = (mask >> (b - 1 - j)) & 1 == 1;
                    if negative {
                        -mags[j][q]
                    } else {
                        mags[j][q]
                    }
                })
                .sum();
            let r = (sum - target).abs();
            if r <= tolerance {
                passing += 1;
            }
            if r < best.0 - RESIDUAL_TIE {
                best = (r, mask);
            }
        }
        if best.0 > tolerance {
            return Err(HybridError::CalibrationFailure {
                row: q,
                best_residual: best.0,
            });
        }
        if passing > 1 {
            ambiguous_rows.push(q);
        }
        for (j, row) in products.iter_mut().enumerate() {
            let negative = (best.1 >> (b - 1 - j)) & 1 == 1;
            row[q] = if negative { -mags[j][q] } else { mags[j][q] };
        }
        residuals.push(best.0);
    }
    Ok(SignCalibration {
        products,
        residuals,
        ambiguous_rows,
        tolerance,
    })
}

/// `θ' = Σ_j (p_j u_j)/λ̃_j` from the calibrated products, returned in
/// physical units `θ'·2^{-s}/C_p`.
pub fn assemble_solution(stats: &HybridStatistics, scale_exponent: i32, c_p: f64) -> Result<Vec<f64>, HybridError> {
    let products = stats.signed_products.as_ref().ok_or(HybridError::NotCalibrated)?;
    let n = products.first().map_or(0, |r| r.len());
    let mut theta = vec![0.0; n];
    for (branch, (br, row)) in stats.branches.iter().zip(products).enumerate() {
        let lambda = br.eigenvalue_estimate(stats.m_prec);
        if lambda <= 0.0 {
            return Err(HybridError::ZeroEigenvalue { branch });
        }
        for (t, v) in theta.iter_mut().zip(row) {
            *t += v / lambda;
        }
    }
    let f = 2f64.powi(-scale_exponent) / c_p;
    Ok(theta.iter().map(|v| v * f).collect())
}

/// `Σ_j p_j u_j / λ̃_j` at `m_prec` bits, in physical units.
pub fn theoretical_theta(sys: &ScaledDcSystem, m_prec: usize) -> Result<Vec<f64>, HybridError> {
    let truncated = crate::hhl::truncated_eigenvalues(&sys.spectrum, m_prec)?;
    Ok(sys.unscale(&sys.spectrum.spectral_solve_with(|j, _| truncated[j])))
}

/// Relative error of the truncation-only solution at `m_prec` bits against
/// `reference` (physical units).
pub fn hybrid_theory_error(sys: &ScaledDcSystem, m_prec: usize, reference: &[f64]) -> Result<f64, HybridError> {
    Ok(relative_error(&theoretical_theta(sys, m_prec)?, reference)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HybridSolution {
    pub statistics: HybridStatistics,
    pub residuals: Vec<f64>,
    pub theta: Vec<f64>,
    pub theta_theory: Vec<f64>,
    pub reference: Vec<f64>,
    pub n_e_exp: f64,
    pub n_e_theory: f64,
    pub qubit_total: usize,
}

/// Statistics, sign calibration, assembly and both relative errors.
pub fn solve_hybrid(sys: &ScaledDcSystem, cfg: &HybridConfig) -> Result<HybridSolution, HybridError> {
    let mut statistics = run_hmpea(sys, cfg)?;
    let cal = calibrate_signs(&statistics, &sys.p, cfg.sign_tolerance)?;
    statistics.apply_calibration(&cal);
    let theta = assemble_solution(&statistics, sys.scale_exponent, sys.c_p)?;
    let reference = sys.unscale(&sys.spectrum.spectral_solve());
    let theta_theory = theoretical_theta(sys, cfg.m_prec)?;
    Ok(HybridSolution {
        n_e_exp: relative_error(&theta, &reference)?,
        n_e_theory: relative_error(&theta_theory, &reference)?,
        statistics,
        residuals: cal.residuals,
        theta,
        theta_theory,
        reference,
        qubit_total: cfg.total_qubits(sys.dim()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaRow {
    pub bit_string: String,
    /// `C_p² p_j²`.
    pub expected: f64,
    /// Accuracy-bin probability aggregated over redundant values.
    pub measured: f64,
    pub deviation: f64,
    /// Probability the m-bit estimate lands within `2^{-n_accur}` of `λ_j`.
    pub window_success: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub n_accur: usize,
    pub n_redund: usize,
    pub rows: Vec<LemmaRow>,
    pub max_deviation: f64,
    pub leakage: f64,
    pub failure_bound: f64,
    /// Every branch's window success is at least `1 − failure_bound`.
    pub within_bound: bool,
}

/// Compares accuracy-bin probabilities after one phase estimation with the
/// branch weights `C_p² p_j²`. Rows are ordered by descending eigenvalue.
pub fn lemma_check(sys: &ScaledDcSystem, n_accur: usize, n_redund: usize) -> Result<LemmaReport, HybridError> {
    let sd = &sys.spectrum;
    check_collisions(sd, n_accur)?;
    let failure_bound = failure_bound_single(n_redund)?;
    let outcome = qpe::fast_path_distribution(sd, n_accur + n_redund)?;
    let bins: Vec<f64> = outcome
        .distribution
        .chunks(1 << n_redund)
        .map(|c| c.iter().sum())
        .collect();
    let mut rows: Vec<LemmaRow> = sd
        .eigenvalues
        .iter()
        .zip(&outcome.weights)
        .map(|(&l, &w)| {
            let bin = floor_bits(l, n_accur);
            let measured = bins[bin as usize];
            LemmaRow {
                bit_string: bit_string(bin, n_accur),
                expected: w,
                measured,
                deviation: (measured - w).abs(),
                window_success: window_success_probability(l, n_accur, n_redund),
            }
        })
        .collect();
    rows.reverse();
    let claimed: f64 = rows.iter().map(|r| r.measured).sum();
    Ok(LemmaReport {
        n_accur,
        n_redund,
        max_deviation: rows.iter().map(|r| r.deviation).fold(0.0, f64::max),
        leakage: (1.0 - claimed).max(0.0),
        within_bound: rows.iter().all(|r| r.window_success >= 1.0 - failure_bound - 1e-10),
        failure_bound,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dcpf::{classical_reference, five_bus_system, scale_system, DcSystem};
    use crate::linalg::SymMatrix;

    fn five_bus() -> ScaledDcSystem {
        scale_system(&five_bus_system()).unwrap()
    }

    fn diag_system(values: &[f64], p: &[f64]) -> ScaledDcSystem {
        let d = DcSystem::new(SymMatrix::diagonal(values), p.to_vec()).unwrap();
        let s = scale_system(&d).unwrap();
        assert_eq!(s.scale_exponent, 0);
        s
    }

    #[test]
    fn diagonal_quarter_three_quarter() {
        let sys = diag_system(&[0.25, 0.75], &[0.6, 0.8]);
        let stats = run_hspea(&sys, &HybridConfig::single(2, 3)).unwrap();
        assert_eq!(stats.branches.len(), 2);
        assert_eq!(stats.branches[0].bit_string, "11");
        assert_eq!(stats.branches[1].bit_string, "01");
        assert!((stats.branches[0].joint_probability - 0.64).abs() < 1e-12);
        assert!((stats.branches[1].joint_probability - 0.36).abs() < 1e-12);
        assert!((stats.branches[0].magnitudes[1] - 1.0).abs() < 1e-12);
        assert!(stats.branches[0].magnitudes[0].abs() < 1e-6);
        assert!((stats.branches[1].magnitudes[0] - 1.0).abs() < 1e-12);
        assert!(stats.leakage < 1e-12);
    }

    #[test]
    fn single_exact_eigenvalue_is_deterministic() {
        let sys = diag_system(&[0.625], &[1.0]);
        let stats = run_hmpea(&sys, &HybridConfig::new(6, 1, 3)).unwrap();
        assert_eq!(stats.n_module, 6);
        assert_eq!(stats.branches.len(), 1);
        assert_eq!(stats.branches[0].bit_string, "101000");
        assert!((stats.branches[0].joint_probability - 1.0).abs() < 1e-12);
    }

    #[test]
    fn five_bus_strings_for_every_chunking() {
        let sys = five_bus();
        for n_accur in [1, 3, 9] {
            let stats = run_hmpea(&sys, &HybridConfig::new(9, n_accur, 7)).unwrap();
            let strings: Vec<&str> = stats.branches.iter().map(|b| b.bit_string.as_str()).collect();
            assert_eq!(strings, ["101110000", "011011011", "000111011", "000010110"]);
            assert_eq!(stats.n_module, 9usize.div_ceil(n_accur));
        }
    }

    #[test]
    fn divergence_modules_follow_prefixes() {
        let sys = five_bus();
        let stats = run_hmpea(&sys, &HybridConfig::new(9, 3, 7)).unwrap();
        let find = |a, b| {
            stats
                .divergence_log
                .iter()
                .find(|d| d.first == a && d.second == b)
                .unwrap()
                .module
        };
        // 101|110|000, 011|011|011, 000|111|011, 000|010|110
        assert_eq!(find(0, 1), 1);
        assert_eq!(find(2, 3), 2);
        assert_eq!(stats.divergence_log.len(), 6);
    }

    #[test]
    fn single_module_hmpea_equals_hspea() {
        let sys = five_bus();
        let a = run_hspea(&sys, &HybridConfig::single(6, 4)).unwrap();
        let b = run_hmpea(&sys, &HybridConfig::new(6, 6, 4)).unwrap();
        for (x, y) in a.branches.iter().zip(&b.branches) {
            assert_eq!(x.bits, y.bits);
            assert!((x.joint_probability - y.joint_probability).abs() < 1e-9);
        }
    }

    #[test]
    fn circuit_engine_matches_density_tree() {
        let sys = five_bus();
        for cfg in [
            HybridConfig::single(5, 3),
            HybridConfig::new(6, 2, 2),
            HybridConfig::new(5, 1, 3),
        ] {
            let fast = run_hmpea(&sys, &cfg).unwrap();
            let circ = run_hmpea(&sys, &cfg.clone().with_engine(Engine::Circuit)).unwrap();
            assert_eq!(fast.branches.len(), circ.branches.len());
            for (x, y) in fast.branches.iter().zip(&circ.branches) {
                assert_eq!(x.bits, y.bits);
                assert!((x.joint_probability - y.joint_probability).abs() < 1e-9);
                for (u, v) in x.magnitudes.iter().zip(&y.magnitudes) {
                    assert!((u - v).abs() < 1e-7);
                }
            }
            assert!((fast.leakage - circ.leakage).abs() < 1e-9);
        }
    }

    #[test]
    fn collisions_are_reported() {
        let sys = diag_system(&[0.25, 0.35], &[0.6, 0.8]);
        let err = run_hspea(&sys, &HybridConfig::single(2, 3)).unwrap_err();
        assert_eq!(
            err,
            HybridError::BranchCollision {
                bits: 2,
                prefixes: vec!["01".into()]
            }
        );
        assert!(run_hspea(&sys, &HybridConfig::single(4, 3)).is_ok());
    }

    #[test]
    fn hspea_rejects_multi_module() {
        let sys = five_bus();
        assert!(matches!(
            run_hspea(&sys, &HybridConfig::new(9, 3, 7)),
            Err(HybridError::Config(_))
        ));
    }

    #[test]
    fn all_positive_products_calibrate_positive() {
        let sys = diag_system(&[0.25, 0.75], &[0.6, 0.8]);
        let stats = run_hspea(&sys, &HybridConfig::single(2, 3)).unwrap();
        let cal = calibrate_signs(&stats, &sys.p, DEFAULT_SIGN_TOLERANCE).unwrap();
        assert!(cal.products.iter().flatten().all(|v| *v >= 0.0));
    }

    #[test]
    fn five_bus_signs_match_oracle() {
        let sys = five_bus();
        let stats = run_hmpea(&sys, &HybridConfig::new(9, 3, 7)).unwrap();
        let cal = calibrate_signs(&stats, &sys.p, DEFAULT_SIGN_TOLERANCE).unwrap();
        let sd = &sys.spectrum;
        let n = sd.dim();
        for (b, row) in cal.products.iter().enumerate() {
            let j = n - 1 - b;
            for (q, v) in row.iter().enumerate() {
                if cal.ambiguous_rows.contains(&q) {
                    continue;
                }
                let truth = sd.projections[j] * sd.eigenvectors[j][q];
                if truth.abs() > 1e-3 {
                    assert_eq!(v.signum(), truth.signum(), "branch {b} row {q}");
                }
            }
        }
        for (q, p) in sys.p.iter().enumerate() {
            let s: f64 = cal.products.iter().map(|r| r[q]).sum();
            assert!((s - p).abs() <= DEFAULT_SIGN_TOLERANCE);
        }
    }

    #[test]
    fn calibration_failure_reports_best_residual() {
        let sys = five_bus();
        let stats = run_hmpea(&sys, &HybridConfig::new(9, 3, 7)).unwrap();
        let mut far = sys.p.clone();
        far[0] += 5.0;
        match calibrate_signs(&stats, &far, DEFAULT_SIGN_TOLERANCE) {
            Err(HybridError::CalibrationFailure { row: 0, best_residual }) => assert!(best_residual > 3.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn assembly_requires_calibration() {
        let sys = five_bus();
        let stats = run_hmpea(&sys, &HybridConfig::new(9, 3, 7)).unwrap();
        assert_eq!(assemble_solution(&stats, 9, 1.0), Err(HybridError::NotCalibrated));
    }

    #[test]
    fn scalar_reciprocal() {
        let sys = diag_system(&[0.5], &[1.0]);
        let sol = solve_hybrid(&sys, &HybridConfig::new(4, 2, 3)).unwrap();
        assert!((sol.theta[0] - 2.0).abs() < 1e-12);
        assert!(sol.n_e_exp < 1e-12);
    }

    #[test]
    fn five_bus_hmpea_solution() {
        let sys = five_bus();
        let sol = solve_hybrid(&sys, &HybridConfig::new(9, 1, 7)).unwrap();
        for (t, e) in sol.theta.iter().zip([0.0084, 0.0046, 0.0059, 0.0116]) {
            assert!((t - e).abs() < 5e-4, "{t} vs {e}");
        }
        assert!((sol.n_e_theory - 0.0285).abs() < 1e-3);
    }

    #[test]
    fn large_precision_approaches_classical() {
        let sys = five_bus();
        let classical = classical_reference(&five_bus_system()).unwrap();
        let sol = solve_hybrid(&sys, &HybridConfig::new(16, 8, 10)).unwrap();
        let err = relative_error(&sol.theta, &classical.theta).unwrap();
        assert!(err < 2e-3, "{err}");
    }

    #[test]
    fn theory_error_cases() {
        let sys = five_bus();
        let reference = sys.unscale(&sys.spectrum.spectral_solve());
        let e9 = hybrid_theory_error(&sys, 9, &reference).unwrap();
        let e13 = hybrid_theory_error(&sys, 13, &reference).unwrap();
        assert!((e9 - 0.0285).abs() < 1e-3);
        assert!(e13 < e9);
        let exact = diag_system(&[0.25, 0.75], &[0.6, 0.8]);
        let r = exact.unscale(&exact.spectrum.spectral_solve());
        assert!(hybrid_theory_error(&exact, 2, &r).unwrap() < 1e-15);
    }

    #[test]
    fn lemma_report_cases() {
        let exact = diag_system(&[0.25, 0.75], &[0.6, 0.8]);
        let r = lemma_check(&exact, 2, 3).unwrap();
        assert!(r.max_deviation < 1e-12 && r.leakage < 1e-12 && r.within_bound);

        let sys = five_bus();
        let r7 = lemma_check(&sys, 9, 7).unwrap();
        let r11 = lemma_check(&sys, 9, 11).unwrap();
        assert!(r11.leakage < r7.leakage);
        assert!(r7.within_bound && r11.within_bound);
    }

    #[test]
    fn sampled_mode_is_seeded_and_consistent() {
        let sys = five_bus();
        let cfg = HybridConfig::new(9, 3, 7).sampled(100_000, 11);
        let a = run_hmpea(&sys, &cfg).unwrap();
        assert_eq!(a, run_hmpea(&sys, &cfg).unwrap());
        let exact = run_hmpea(&sys, &HybridConfig::new(9, 3, 7)).unwrap();
        for (x, y) in a.branches.iter().zip(&exact.branches) {
            assert_eq!(x.bits, y.bits);
            assert!((x.joint_probability - y.joint_probability).abs() < 0.01);
        }
        let total: f64 = a.branches.iter().map(|b| b.joint_probability).sum();
        assert!(total <= 1.0 + 1e-12);
    }

    #[test]
    fn config_validation() {
        let sys = five_bus();
        assert!(matches!(run_hmpea(&sys, &HybridConfig::new(9, 0, 7)), Err(HybridError::Config(_))));
        assert!(matches!(run_hmpea(&sys, &HybridConfig::new(9, 1, 1)), Err(HybridError::Config(_))));
        assert!(matches!(
            run_hmpea(&sys, &HybridConfig::new(30, 1, 7)),
            Err(HybridError::ModuleOverflow { .. })
        ));
    }
}
