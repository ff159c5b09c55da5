//! Dense real-symmetric linear algebra.
//!
//! Everything here is sized for the handful-of-buses systems the solvers
//! work on (n ≤ 16): cyclic Jacobi for the eigendecomposition, partial-pivot
//! LU for the classical reference and eigenbasis construction of the phase
//! unitaries `e^{2πiBt}`.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use thiserror::Error;

/// Off-diagonal Frobenius norm (relative to ‖B‖) at which Jacobi stops.
pub const JACOBI_TOLERANCE: f64 = 1e-14;
/// Sweep cap for the Jacobi eigensolver.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Pivots below this fraction of ‖m‖ are treated as zero.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix must have at least one row")]
    Empty,
    #[error("expected {expected} entries, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not symmetric at ({row}, {col}): {upper} != {lower}")]
    NotSymmetric {
        row: usize,
        col: usize,
        upper: f64,
        lower: f64,
    },
    #[error("matrix is singular: pivot {pivot} has magnitude {magnitude:e}")]
    Singular { pivot: usize, magnitude: f64 },
    #[error("Jacobi did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NoConvergence { sweeps: usize, off_norm: f64 },
}

/// Real symmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl SymMatrix {
    /// Builds a matrix from row-major entries, rejecting anything that is not
    /// exactly symmetric as stored.
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self, LinalgError> {
        if n == 0 {
            return Err(LinalgError::Empty);
        }
        if entries.len() != n * n {
            return Err(LinalgError::DimensionMismatch {
                expected: n * n,
                found: entries.len(),
            });
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let (upper, lower) = (entries[i * n + j], entries[j * n + i]);
                if upper != lower {
                    return Err(LinalgError::NotSymmetric {
                        row: i,
                        col: j,
                        upper,
                        lower,
                    });
                }
            }
        }
        Ok(Self { n, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let n = rows.len();
        let mut entries = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(LinalgError::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            entries.extend_from_slice(row);
        }
        Self::new(n, entries)
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        let mut entries = vec![0.0; n * n];
        for (i, v) in values.iter().enumerate() {
            entries[i * n + i] = *v;
        }
        Self { n, entries }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            n: self.n,
            entries: self.entries.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl fmt::Display for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.n {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v:.4}")).collect();
            writeln!(f, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

/// Eigen-pairs of a symmetric matrix plus, once a right-hand side has been
/// attached, the projections `p_j = ⟨u_j|rhs⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// `eigenvectors[j]` is the unit eigenvector for `eigenvalues[j]`.
    pub eigenvectors: Vec<Vec<f64>>,
    /// Empty until [`SpectralDecomposition::with_rhs`] is called.
    pub projections: Vec<f64>,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Attaches the projections of `rhs` onto each eigenvector.
    pub fn with_rhs(mut self, rhs: &[f64]) -> Self {
        self.projections = self
            .eigenvectors
            .iter()
            .map(|u| dot(u, rhs))
            .collect();
        self
    }

    /// `Σ_j λ_j u_j u_jᵀ`, row-major.
    pub fn reconstruct(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n * n];
        for (lambda, u) in self.eigenvalues.iter().zip(&self.eigenvectors) {
            for i in 0..n {
                for k in 0..n {
                    out[i * n + k] += lambda * u[i] * u[k];
                }
            }
        }
        out
    }

    /// `Σ_j (p_j / f(λ_j)) u_j`; the eigenvalue map lets callers substitute
    /// truncated eigenvalues.
    pub fn spectral_solve_with(&self, eigenvalue_of: impl Fn(usize, f64) -> f64) -> Vec<f64> {
        let n = self.dim();
        let mut x = vec![0.0; n];
        for (j, (u, p)) in self.eigenvectors.iter().zip(&self.projections).enumerate() {
            let lambda = eigenvalue_of(j, self.eigenvalues[j]);
            for (xi, ui) in x.iter_mut().zip(u) {
                *xi += p / lambda * ui;
            }
        }
        x
    }

    /// Exact solve `Σ_j (p_j/λ_j) u_j`.
    pub fn spectral_solve(&self) -> Vec<f64> {
        self.spectral_solve_with(|_, lambda| lambda)
    }
}

/// Cyclic Jacobi eigendecomposition.
///
/// Eigenvalues come back ascending and every eigenvector has its first
/// non-negligible component positive.
pub fn eigh(m: &SymMatrix) -> Result<SpectralDecomposition, LinalgError> {
    let n = m.dim();
    let mut a = m.entries.clone();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale = m.frobenius_norm().max(f64::MIN_POSITIVE);
    let off_norm = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = off_norm(&a) <= JACOBI_TOLERANCE * scale;
    let mut sweeps = 0;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A' = Jᵀ A J acting on rows/cols p, q
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
        converged = off_norm(&a) <= JACOBI_TOLERANCE * scale;
    }
    if !converged {
        return Err(LinalgError::NoConvergence {
            sweeps,
            off_norm: off_norm(&a),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
    let eigenvalues = order.iter().map(|&i| a[i * n + i]).collect();
    let eigenvectors = order
        .iter()
        .map(|&col| {
            let mut u: Vec<f64> = (0..n).map(|row| v[row * n + col]).collect();
            if let Some(first) = u.iter().find(|x| x.abs() > 1e-12) {
                if *first < 0.0 {
                    u.iter_mut().for_each(|x| *x = -*x);
                }
            }
            u
        })
        .collect();
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
        projections: Vec::new(),
    })
}

/// Gaussian elimination with partial pivoting.
pub fn lu_solve(m: &SymMatrix, rhs: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let n = m.dim();
    if rhs.len() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            found: rhs.len(),
        });
    }
    let threshold = PIVOT_TOLERANCE * m.frobenius_norm();
    let mut a = m.entries.clone();
    let mut b = rhs.to_vec();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap_or(col);
        let magnitude = a[pivot_row * n + col].abs();
        if magnitude <= threshold {
            return Err(LinalgError::Singular {
                pivot: col,
                magnitude,
            });
        }
        if pivot_row != col {
            for k in 0..n {
                a.swap(col * n + k, pivot_row * n + k);
            }
            b.swap(col, pivot_row);
        }
        let pivot = a[col * n + col];
        for row in (col + 1)..n {
            let factor = a[row * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = ((row + 1)..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row * n + row];
    }
    Ok(x)
}

/// Largest absolute row sum; every eigenvalue lies in `[-bound, bound]`.
pub fn gershgorin_bound(m: &SymMatrix) -> f64 {
    (0..m.dim())
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Dense complex square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    n: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![Complex64::new(0.0, 0.0); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self, LinalgError> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(LinalgError::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { n, data })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: Complex64) {
        self.data[i * self.n + j] = value;
    }

    pub fn matmul(&self, other: &CMatrix) -> CMatrix {
        let n = self.n;
        let mut out = CMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self.get(i, k);
                if aik == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += aik * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn adjoint(&self) -> CMatrix {
        let n = self.n;
        let mut out = CMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.data[j * n + i] = self.get(i, j).conj();
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    /// Largest entry of `|U†U − I|`.
    pub fn unitarity_defect(&self) -> f64 {
        let prod = self.adjoint().matmul(self);
        let id = CMatrix::identity(self.n);
        prod.data
            .iter()
            .zip(&id.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &CMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// `e^{2πiλt}` with the phase reduced mod 1 before exponentiation, which keeps
/// full precision when `t` is a large power of two.
pub fn phase_factor(lambda: f64, t: f64) -> Complex64 {
    let turns = (lambda * t).rem_euclid(1.0);
    Complex64::from_polar(1.0, 2.0 * PI * turns)
}

/// `U = Σ_j e^{2πiλ_j t} u_j u_jᵀ`.
pub fn matrix_phase_unitary(sd: &SpectralDecomposition, t: f64) -> CMatrix {
    let n = sd.dim();
    let mut u = CMatrix::zeros(n);
    for (lambda, vec) in sd.eigenvalues.iter().zip(&sd.eigenvectors) {
        let phase = phase_factor(*lambda, t);
        for i in 0..n {
            for k in 0..n {
                u.data[i * n + k] += phase * (vec[i] * vec[k]);
            }
        }
    }
    u
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalized(a: &[f64]) -> Vec<f64> {
    let n = norm(a);
    a.iter().map(|x| x / n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn five_bus_b() -> SymMatrix {
        SymMatrix::from_rows(&[
            vec![224.7319, -35.5872, 0.0, -156.25],
            vec![-35.5872, 128.1798, -92.5926, 0.0],
            vec![0.0, -92.5926, 126.2626, 0.0],
            vec![-156.25, 0.0, 0.0, 189.92],
        ])
        .unwrap()
    }

    fn random_sym(n: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
        let mut e = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v: f64 = rng.random_range(-1.0..1.0);
                e[i * n + j] = v;
                e[j * n + i] = v;
            }
        }
        SymMatrix::new(n, e).unwrap()
    }

    #[test]
    fn rejects_asymmetric_entries() {
        let err = SymMatrix::new(2, vec![1.0, 2.0, 3.0, 1.0]).unwrap_err();
        assert!(matches!(err, LinalgError::NotSymmetric { row: 0, col: 1, .. }));
        assert_eq!(SymMatrix::new(0, vec![]).unwrap_err(), LinalgError::Empty);
    }

    #[test]
    fn eigh_identity_is_standard_basis() {
        let sd = eigh(&SymMatrix::identity(4)).unwrap();
        assert!(sd.eigenvalues.iter().all(|&l| (l - 1.0).abs() < 1e-15));
        for (j, u) in sd.eigenvectors.iter().enumerate() {
            for (i, x) in u.iter().enumerate() {
                assert_eq!(*x, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn eigh_largest_scaled_eigenvalue_prefix() {
        let sd = eigh(&five_bus_b().scaled(2f64.powi(-9))).unwrap();
        let top = *sd.eigenvalues.last().unwrap();
        assert!((368.0 / 512.0..369.0 / 512.0).contains(&top), "{top}");
        assert_eq!(format!("{:09b}", (top * 512.0).floor() as u64), "101110000");
    }

    #[test]
    fn eigh_random_reconstruction_and_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let m = random_sym(3, &mut rng);
        let sd = eigh(&m).unwrap();
        let rec = sd.reconstruct();
        for (a, b) in rec.iter().zip(m.entries()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(sd.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        for i in 0..3 {
            for j in 0..3 {
                let d = dot(&sd.eigenvectors[i], &sd.eigenvectors[j]);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((d - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eigh_residuals_and_sign_convention_up_to_16() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=16 {
            let m = random_sym(n, &mut rng);
            let sd = eigh(&m).unwrap();
            let bnorm = m.frobenius_norm();
            for (lambda, u) in sd.eigenvalues.iter().zip(&sd.eigenvectors) {
                let bu = m.mul_vec(u);
                let r: f64 = bu
                    .iter()
                    .zip(u)
                    .map(|(a, b)| (a - lambda * b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(r <= 1e-10 * bnorm, "n={n} residual {r}");
                let first = u.iter().find(|x| x.abs() > 1e-12).unwrap();
                assert!(*first > 0.0);
            }
            let rec = sd.reconstruct();
            let err: f64 = rec
                .iter()
                .zip(m.entries())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(err <= 1e-10 * bnorm);
        }
    }

    #[test]
    fn lu_solve_five_bus() {
        let p = [-0.1113, -0.2623, 0.3169, 0.9046];
        let theta = lu_solve(&five_bus_b(), &p).unwrap();
        let expected = [0.0082, 0.0043, 0.0057, 0.0115];
        for (t, e) in theta.iter().zip(expected) {
            assert!((t - e).abs() < 5e-4, "{t} vs {e}");
        }
        let r = five_bus_b().mul_vec(&theta);
        let res: f64 = r.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(res <= 1e-10 * norm(&p));
    }

    #[test]
    fn lu_solve_identity_and_hilbert() {
        assert_eq!(
            lu_solve(&SymMatrix::identity(2), &[1.0, 2.0]).unwrap(),
            vec![1.0, 2.0]
        );
        let h = SymMatrix::from_rows(&[
            vec![1.0, 1.0 / 2.0, 1.0 / 3.0],
            vec![1.0 / 2.0, 1.0 / 3.0, 1.0 / 4.0],
            vec![1.0 / 3.0, 1.0 / 4.0, 1.0 / 5.0],
        ])
        .unwrap();
        let rhs = h.mul_vec(&[1.0, 1.0, 1.0]);
        let x = lu_solve(&h, &rhs).unwrap();
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-8));
    }

    #[test]
    fn lu_solve_reports_singular_pivot() {
        let m = SymMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let err = lu_solve(&m, &[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, LinalgError::Singular { pivot: 1, .. }));
    }

    #[test]
    fn lu_matches_spectral_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 2..8 {
            // diagonally dominant keeps the condition number small
            let mut m = random_sym(n, &mut rng);
            let mut e = m.entries().to_vec();
            for i in 0..n {
                e[i * n + i] += n as f64 + 1.0;
            }
            m = SymMatrix::new(n, e).unwrap();
            let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = lu_solve(&m, &rhs).unwrap();
            let y = eigh(&m).unwrap().with_rhs(&rhs).spectral_solve();
            for (a, b) in x.iter().zip(&y) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gershgorin_values() {
        assert!((gershgorin_bound(&five_bus_b()) - 416.5691).abs() < 1e-9);
        assert_eq!(gershgorin_bound(&SymMatrix::identity(3)), 1.0);
        assert_eq!(gershgorin_bound(&SymMatrix::diagonal(&[2.0, 5.0])), 5.0);
    }

    #[test]
    fn phase_unitary_trivial_cases() {
        let sd = eigh(&five_bus_b().scaled(2f64.powi(-9))).unwrap();
        assert!(matrix_phase_unitary(&sd, 0.0).max_abs_diff(&CMatrix::identity(4)) < 1e-12);
        let half = eigh(&SymMatrix::diagonal(&[0.5])).unwrap();
        let u = matrix_phase_unitary(&half, 1.0);
        assert!((u.get(0, 0) - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn phase_unitary_eigenphases_match_scalar_exponentials() {
        let sd = eigh(&five_bus_b().scaled(2f64.powi(-9))).unwrap();
        let u = matrix_phase_unitary(&sd, 1.0);
        assert!(u.unitarity_defect() < 1e-12);
        for (lambda, v) in sd.eigenvalues.iter().zip(&sd.eigenvectors) {
            let cv: Vec<Complex64> = v.iter().map(|x| Complex64::new(*x, 0.0)).collect();
            let uv = u.mul_vec(&cv);
            let expected = Complex64::from_polar(1.0, 2.0 * PI * lambda);
            for (a, b) in uv.iter().zip(&cv) {
                assert!((a - expected * b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn phase_unitary_is_a_group_homomorphism() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [2, 4, 7] {
            let sd = eigh(&random_sym(n, &mut rng)).unwrap();
            let (t1, t2) = (rng.random_range(0.0..8.0), rng.random_range(0.0..8.0));
            let lhs = matrix_phase_unitary(&sd, t1).matmul(&matrix_phase_unitary(&sd, t2));
            let rhs = matrix_phase_unitary(&sd, t1 + t2);
            assert!(lhs.max_abs_diff(&rhs) < 1e-11);
        }
    }
}
