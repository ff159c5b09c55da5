//! DC power flow front end: grid ingestion, susceptance assembly with slack
//! removal, power-of-two rescaling into the unit interval, and the classical
//! reference solve.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{eigh, gershgorin_bound, lu_solve, norm, LinalgError, SpectralDecomposition, SymMatrix};

pub type BusId = u32;

const FIVE_BUS_MATRIX: &str = include_str!("../fixtures/five_bus.txt");
const FIVE_BUS_GRID: &str = include_str!("../fixtures/five_bus.toml");

#[derive(Debug, Error)]
pub enum DcpfError {
    #[error("grid document: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("duplicate bus id {0}")]
    DuplicateBus(BusId),
    #[error("expected exactly one slack bus, found {0}")]
    SlackCount(usize),
    #[error("branch {index} ({from}-{to}): reactance must be positive, got {x}")]
    NonPositiveReactance {
        index: usize,
        from: BusId,
        to: BusId,
        x: f64,
    },
    #[error("branch {index} references unknown bus {bus}")]
    UnknownBus { index: usize, bus: BusId },
    #[error("branch {index} connects bus {bus} to itself")]
    SelfLoop { index: usize, bus: BusId },
    #[error("buses {0:?} are not connected to the slack bus")]
    Disconnected(Vec<BusId>),
    #[error("matrix fixture line {line}: {message}")]
    Fixture { line: usize, message: String },
    #[error("system matrix is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("injection vector is zero")]
    ZeroInjection,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusType {
    Slack,
    Pq,
    Pv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: BusId,
    #[serde(rename = "type")]
    pub kind: BusType,
    /// Net active injection, per-unit.
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub from: BusId,
    pub to: BusId,
    /// Series reactance, per-unit.
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridModel {
    pub buses: Vec<Bus>,
    #[serde(default)]
    pub branches: Vec<Line>,
}

impl GridModel {
    pub fn slack(&self) -> Option<&Bus> {
        self.buses.iter().find(|b| b.kind == BusType::Slack)
    }

    fn validate(&self) -> Result<(), DcpfError> {
        let mut ids = BTreeSet::new();
        for b in &self.buses {
            if !ids.insert(b.id) {
                return Err(DcpfError::DuplicateBus(b.id));
            }
        }
        let slacks = self.buses.iter().filter(|b| b.kind == BusType::Slack).count();
        if slacks != 1 {
            return Err(DcpfError::SlackCount(slacks));
        }
        let mut adjacency: BTreeMap<BusId, Vec<BusId>> = ids.iter().map(|&id| (id, Vec::new())).collect();
        for (index, l) in self.branches.iter().enumerate() {
            for bus in [l.from, l.to] {
                if !ids.contains(&bus) {
                    return Err(DcpfError::UnknownBus { index, bus });
                }
            }
            if l.from == l.to {
                return Err(DcpfError::SelfLoop { index, bus: l.from });
            }
            if l.x.is_nan() || l.x <= 0.0 {
                return Err(DcpfError::NonPositiveReactance {
                    index,
                    from: l.from,
                    to: l.to,
                    x: l.x,
                });
            }
            adjacency.get_mut(&l.from).unwrap().push(l.to);
            adjacency.get_mut(&l.to).unwrap().push(l.from);
        }
        // every bus must reach the slack, otherwise the reduced B is singular
        let slack = self.slack().unwrap().id;
        let mut seen = BTreeSet::from([slack]);
        let mut queue = VecDeque::from([slack]);
        while let Some(bus) = queue.pop_front() {
            for &next in &adjacency[&bus] {
                if seen.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        let unreached: Vec<BusId> = ids.difference(&seen).copied().collect();
        if !unreached.is_empty() {
            return Err(DcpfError::Disconnected(unreached));
        }
        Ok(())
    }
}

/// Parses and validates a grid document (TOML; unknown keys rejected).
pub fn load_grid(source: &str) -> Result<GridModel, DcpfError> {
    let grid: GridModel = toml::from_str(source)?;
    grid.validate()?;
    Ok(grid)
}

/// Reduced DC system `P = Bθ` over the non-slack buses.
#[derive(Debug, Clone, PartialEq)]
pub struct DcSystem {
    pub b: SymMatrix,
    pub p: Vec<f64>,
    pub bus_order: Vec<BusId>,
}

impl DcSystem {
    pub fn new(b: SymMatrix, p: Vec<f64>) -> Result<Self, DcpfError> {
        if p.len() != b.dim() {
            return Err(LinalgError::DimensionMismatch {
                expected: b.dim(),
                found: p.len(),
            }
            .into());
        }
        let bus_order = (1..=b.dim() as BusId).collect();
        Ok(Self { b, p, bus_order })
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }
}

/// `B_ij = −Σ 1/x_ij`, `B_ii = Σ_k 1/x_ik`, slack row and column removed.
pub fn build_b_matrix(g: &GridModel) -> Result<DcSystem, DcpfError> {
    g.validate()?;
    let slack = g.slack().unwrap().id;
    let bus_order: Vec<BusId> = g.buses.iter().filter(|b| b.id != slack).map(|b| b.id).collect();
    let index: BTreeMap<BusId, usize> = bus_order.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let n = bus_order.len();
    let mut entries = vec![0.0; n * n];
    for l in &g.branches {
        let y = 1.0 / l.x;
        let (a, b) = (index.get(&l.from), index.get(&l.to));
        if let Some(&i) = a {
            entries[i * n + i] += y;
        }
        if let Some(&j) = b {
            entries[j * n + j] += y;
        }
        if let (Some(&i), Some(&j)) = (a, b) {
            entries[i * n + j] -= y;
            entries[j * n + i] -= y;
        }
    }
    let p = bus_order
        .iter()
        .map(|id| g.buses.iter().find(|b| b.id == *id).unwrap().p)
        .collect();
    Ok(DcSystem {
        b: SymMatrix::new(n, entries)?,
        p,
        bus_order,
    })
}

/// Plain-text fixture: N rows of N matrix entries, then one row holding the
/// N-entry injection vector. `#` starts a comment; blank lines are skipped.
pub fn load_matrix_fixture(source: &str) -> Result<DcSystem, DcpfError> {
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (i, raw) in source.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| DcpfError::Fixture {
                    line: i + 1,
                    message: format!("`{tok}` is not a number"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((i + 1, values));
    }
    let Some((_, first)) = rows.first() else {
        return Err(DcpfError::Fixture {
            line: 1,
            message: "no data rows".into(),
        });
    };
    let n = first.len();
    for (line, values) in &rows {
        if values.len() != n {
            return Err(DcpfError::Fixture {
                line: *line,
                message: format!("expected {n} values, found {}", values.len()),
            });
        }
    }
    if rows.len() != n + 1 {
        let line = rows.last().map(|r| r.0).unwrap_or(1);
        return Err(DcpfError::Fixture {
            line,
            message: format!("expected {} rows ({n} matrix + 1 vector), found {}", n + 1, rows.len()),
        });
    }
    let p = rows.pop().unwrap().1;
    let matrix: Vec<Vec<f64>> = rows.into_iter().map(|r| r.1).collect();
    DcSystem::new(SymMatrix::from_rows(&matrix)?, p)
}

/// The bundled IEEE 5-bus system (ground-truth matrix fixture).
pub fn five_bus_system() -> DcSystem {
    load_matrix_fixture(FIVE_BUS_MATRIX).expect("bundled fixture parses")
}

/// The bundled IEEE 5-bus grid document.
pub fn five_bus_grid() -> GridModel {
    load_grid(FIVE_BUS_GRID).expect("bundled grid parses")
}

pub fn five_bus_grid_source() -> &'static str {
    FIVE_BUS_GRID
}

pub fn five_bus_matrix_source() -> &'static str {
    FIVE_BUS_MATRIX
}

/// Rescaled system handed to the quantum solvers: `B' = B·2^{-s}` with its
/// spectrum in (0, 1), and `C_p·P` of unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledDcSystem {
    pub b_scaled: SymMatrix,
    pub p: Vec<f64>,
    pub scale_exponent: i32,
    pub c_p: f64,
    /// Eigenpairs of `b_scaled` with projections of `p` attached.
    pub spectrum: SpectralDecomposition,
}

impl ScaledDcSystem {
    pub fn dim(&self) -> usize {
        self.p.len()
    }

    /// Maps a scaled-unit solution `θ'` back to physical angles.
    pub fn unscale(&self, theta_scaled: &[f64]) -> Vec<f64> {
        let f = 2f64.powi(-self.scale_exponent) / self.c_p;
        theta_scaled.iter().map(|v| v * f).collect()
    }
}

/// Smallest `s ≥ 0` with `gershgorin(B) < 2^s`.
pub fn scale_exponent_for(bound: f64) -> i32 {
    let mut s = 0;
    while bound >= 2f64.powi(s) {
        s += 1;
    }
    s
}

pub fn scale_system(d: &DcSystem) -> Result<ScaledDcSystem, DcpfError> {
    let s = scale_exponent_for(gershgorin_bound(&d.b));
    let b_scaled = d.b.scaled(2f64.powi(-s));
    let pn = norm(&d.p);
    if pn == 0.0 {
        return Err(DcpfError::ZeroInjection);
    }
    let c_p = 1.0 / pn;
    let p: Vec<f64> = d.p.iter().map(|v| v * c_p).collect();
    let spectrum = eigh(&b_scaled)?.with_rhs(&p);
    let smallest = spectrum.eigenvalues[0];
    if smallest <= 0.0 {
        return Err(DcpfError::NotPositiveDefinite(smallest * 2f64.powi(s)));
    }
    Ok(ScaledDcSystem {
        b_scaled,
        p,
        scale_exponent: s,
        c_p,
        spectrum,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassicalSolution {
    pub theta: Vec<f64>,
    pub normalized: Vec<f64>,
}

pub fn classical_reference(d: &DcSystem) -> Result<ClassicalSolution, DcpfError> {
    let theta = lu_solve(&d.b, &d.p)?;
    let n = norm(&theta);
    let normalized = theta.iter().map(|v| v / n).collect();
    Ok(ClassicalSolution { theta, normalized })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qpe::floor_bits;

    const FIVE_BUS_B: [[f64; 4]; 4] = [
        [224.7319, -35.5872, 0.0, -156.25],
        [-35.5872, 128.1798, -92.5926, 0.0],
        [0.0, -92.5926, 126.2626, 0.0],
        [-156.25, 0.0, 0.0, 189.92],
    ];
    const P26: [f64; 4] = [-0.1113, -0.2623, 0.3169, 0.9046];

    #[test]
    fn grid_fixture_reproduces_reduced_matrix() {
        let g = five_bus_grid();
        assert_eq!(g.buses.len(), 5);
        assert_eq!(g.slack().unwrap().id, 4);
        let d = build_b_matrix(&g).unwrap();
        assert_eq!(d.bus_order, vec![1, 2, 3, 5]);
        for (i, row) in FIVE_BUS_B.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert!((d.b.get(i, j) - v).abs() < 1e-4, "({i},{j})");
            }
        }
        assert_eq!(d.p, P26.to_vec());
    }

    #[test]
    fn matrix_fixture_matches_grid_matrix() {
        let d = five_bus_system();
        for (i, row) in FIVE_BUS_B.iter().enumerate() {
            assert_eq!(d.b.row(i), row);
        }
        assert_eq!(d.p, P26.to_vec());
    }

    #[test]
    fn grid_validation_errors() {
        let two_slack = r#"
            buses = [{ id = 1, type = "slack", p = 0.0 }, { id = 2, type = "slack", p = 0.0 }]
            branches = [{ from = 1, to = 2, x = 0.1 }]
        "#;
        assert!(matches!(load_grid(two_slack), Err(DcpfError::SlackCount(2))));

        let no_branches = r#"buses = [{ id = 1, type = "slack", p = 0.0 }, { id = 2, type = "pq", p = 1.0 }]"#;
        assert!(matches!(load_grid(no_branches), Err(DcpfError::Disconnected(v)) if v == vec![2]));

        let dup = r#"
            buses = [{ id = 1, type = "slack", p = 0.0 }, { id = 1, type = "pq", p = 0.0 }]
        "#;
        assert!(matches!(load_grid(dup), Err(DcpfError::DuplicateBus(1))));

        let neg = r#"
            buses = [{ id = 1, type = "slack", p = 0.0 }, { id = 2, type = "pq", p = 0.0 }]
            branches = [{ from = 1, to = 2, x = -0.1 }]
        "#;
        assert!(matches!(load_grid(neg), Err(DcpfError::NonPositiveReactance { index: 0, .. })));

        let unknown_key = r#"
            buses = [{ id = 1, type = "slack", p = 0.0, q = 1.0 }]
        "#;
        let err = load_grid(unknown_key).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(err.contains("unknown field"), "{err}");
    }

    #[test]
    fn hand_assembled_systems() {
        let two = r#"
            buses = [{ id = 1, type = "pq", p = 0.7 }, { id = 2, type = "slack", p = -0.7 }]
            branches = [{ from = 1, to = 2, x = 0.5 }]
        "#;
        let d = build_b_matrix(&load_grid(two).unwrap()).unwrap();
        assert_eq!(d.b.entries(), &[2.0]);
        assert_eq!(d.p, vec![0.7]);

        let star = r#"
            buses = [
                { id = 0, type = "slack", p = 0.0 },
                { id = 1, type = "pq", p = 0.1 },
                { id = 2, type = "pq", p = 0.2 },
                { id = 3, type = "pq", p = 0.3 },
            ]
            branches = [{ from = 0, to = 1, x = 1.0 }, { from = 0, to = 2, x = 1.0 }, { from = 0, to = 3, x = 1.0 }]
        "#;
        let d = build_b_matrix(&load_grid(star).unwrap()).unwrap();
        assert_eq!(d.b, SymMatrix::identity(3));
    }

    #[test]
    fn scaling_of_five_bus() {
        let sys = scale_system(&five_bus_system()).unwrap();
        assert_eq!(sys.scale_exponent, 9);
        assert!((sys.c_p - 1.0).abs() < 1e-4);
        let strings: Vec<u64> = sys.spectrum.eigenvalues.iter().rev().map(|&l| floor_bits(l, 9)).collect();
        assert_eq!(strings, vec![0b101110000, 0b011011011, 0b000111011, 0b000010110]);
        assert!(sys.spectrum.eigenvalues.iter().all(|&l| l > 0.0 && l < 1.0));
        assert!(gershgorin_bound(&sys.b_scaled) < 1.0);
    }

    #[test]
    fn scaling_keeps_small_matrices() {
        let d = DcSystem::new(SymMatrix::diagonal(&[0.5]), vec![1.0]).unwrap();
        let sys = scale_system(&d).unwrap();
        assert_eq!(sys.scale_exponent, 0);
        assert_eq!(sys.b_scaled, d.b);
        // bound exactly a power of two still lands strictly inside (0, 1)
        let d = DcSystem::new(SymMatrix::diagonal(&[1.0, 0.5]), vec![1.0, 0.0]).unwrap();
        assert_eq!(scale_system(&d).unwrap().scale_exponent, 1);
    }

    #[test]
    fn scaling_rejects_indefinite() {
        let d = DcSystem::new(SymMatrix::diagonal(&[1.0, -0.5]), vec![1.0, 0.0]).unwrap();
        assert!(matches!(scale_system(&d), Err(DcpfError::NotPositiveDefinite(_))));
    }

    #[test]
    fn classical_reference_values() {
        let sol = classical_reference(&five_bus_system()).unwrap();
        for (t, e) in sol.theta.iter().zip([0.0082, 0.0043, 0.0057, 0.0115]) {
            assert!((t - e).abs() < 5e-4);
        }
        for (t, e) in sol.normalized.iter().zip([0.5173, 0.2740, 0.3595, 0.7267]) {
            assert!((t - e).abs() < 5e-4);
        }
        let d = DcSystem::new(SymMatrix::identity(2).scaled(2.0), vec![1.0, 1.0]).unwrap();
        assert_eq!(classical_reference(&d).unwrap().theta, vec![0.5, 0.5]);
    }

    #[test]
    fn fixture_diagnostics_carry_line_numbers() {
        let err = load_matrix_fixture("1 0\n0 x\n1 1\n").unwrap_err();
        assert!(matches!(err, DcpfError::Fixture { line: 2, .. }));
        let err = load_matrix_fixture("1 0\n0 1 2\n1 1\n").unwrap_err();
        assert!(matches!(err, DcpfError::Fixture { line: 2, .. }));
        let err = load_matrix_fixture("1 0\n0 1\n").unwrap_err();
        assert!(matches!(err, DcpfError::Fixture { .. }));
    }
}
