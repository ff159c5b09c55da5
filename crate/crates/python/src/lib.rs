//! Python bindings: grid systems, the three quantum solvers, budgets, sweeps
//! and the reproduction report. Results come back as plain dicts and lists.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;
use serde_json::Value;

use qpflow_core::dcpf;
use qpflow_core::harness::{self, Algorithm, ReproduceOptions, SweepSpec};
use qpflow_core::hhl::{self, HhlConfig};
use qpflow_core::hybrid::{self, HybridConfig};
use qpflow_core::linalg::SymMatrix;
use qpflow_core::qpe;
use qpflow_core::{Engine, Mode};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, json_to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    json_to_py(py, &serde_json::to_value(value).map_err(value_error)?)
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    match mode {
        "exact" => Ok(Mode::Exact),
        "sampled" => Ok(Mode::Sampled),
        other => Err(value_error(format!("unknown mode `{other}`"))),
    }
}

fn parse_engine(engine: &str) -> PyResult<Engine> {
    match engine {
        "fast-path" | "fast_path" => Ok(Engine::FastPath),
        "circuit" => Ok(Engine::Circuit),
        other => Err(value_error(format!("unknown engine `{other}`"))),
    }
}

/// Reduced DC power flow system `B θ = P`.
#[pyclass(name = "DcSystem", module = "qpflow", from_py_object)]
#[derive(Clone)]
struct PyDcSystem {
    inner: dcpf::DcSystem,
}

#[pymethods]
impl PyDcSystem {
    #[new]
    fn new(b: Vec<Vec<f64>>, p: Vec<f64>) -> PyResult<Self> {
        let m = SymMatrix::from_rows(&b).map_err(value_error)?;
        let inner = dcpf::DcSystem::new(m, p).map_err(value_error)?;
        Ok(Self { inner })
    }

    /// The bundled five-bus system.
    #[staticmethod]
    fn five_bus() -> Self {
        Self {
            inner: dcpf::five_bus_system(),
        }
    }

    /// Builds B and P from a TOML grid description.
    #[staticmethod]
    fn from_grid_toml(source: &str) -> PyResult<Self> {
        let grid = dcpf::load_grid(source).map_err(value_error)?;
        let inner = dcpf::build_b_matrix(&grid).map_err(value_error)?;
        Ok(Self { inner })
    }

    /// Parses the whitespace matrix format (B rows, then P).
    #[staticmethod]
    fn from_matrix_text(source: &str) -> PyResult<Self> {
        let inner = dcpf::load_matrix_fixture(source).map_err(value_error)?;
        Ok(Self { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn b(&self) -> Vec<Vec<f64>> {
        (0..self.inner.dim()).map(|i| self.inner.b.row(i).to_vec()).collect()
    }

    #[getter]
    fn p(&self) -> Vec<f64> {
        self.inner.p.clone()
    }

    fn classical<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &dcpf::classical_reference(&self.inner).map_err(value_error)?)
    }

    fn scaled(&self) -> PyResult<PyScaledSystem> {
        let inner = dcpf::scale_system(&self.inner).map_err(value_error)?;
        Ok(PyScaledSystem { inner })
    }

    fn __repr__(&self) -> String {
        format!("DcSystem(dim={})", self.inner.dim())
    }
}

/// System rescaled so its spectrum lies in (0, 1).
#[pyclass(name = "ScaledSystem", module = "qpflow", skip_from_py_object)]
#[derive(Clone)]
struct PyScaledSystem {
    inner: dcpf::ScaledDcSystem,
}

#[pymethods]
impl PyScaledSystem {
    #[getter]
    fn scale_exponent(&self) -> i32 {
        self.inner.scale_exponent
    }

    #[getter]
    fn c_p(&self) -> f64 {
        self.inner.c_p
    }

    /// Ascending.
    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.spectrum.eigenvalues.clone()
    }

    #[getter]
    fn eigenvectors(&self) -> Vec<Vec<f64>> {
        self.inner.spectrum.eigenvectors.clone()
    }

    #[getter]
    fn projections(&self) -> Vec<f64> {
        self.inner.spectrum.projections.clone()
    }

    /// Floor-truncated eigenvalue bit strings, largest eigenvalue first.
    fn eigenvalue_strings(&self, bits: usize) -> Vec<String> {
        self.inner
            .spectrum
            .eigenvalues
            .iter()
            .rev()
            .map(|&l| qpe::bit_string(qpe::floor_bits(l, bits), bits))
            .collect()
    }

    fn theoretical_hhl_solution(&self, n_accur: usize) -> PyResult<Vec<f64>> {
        hhl::theoretical_solution(&self.inner.spectrum, n_accur).map_err(value_error)
    }

    #[pyo3(signature = (n_accur, n_redund, mode="exact", shots=100_000, seed=0, engine="fast-path", rotation_constant=None))]
    #[allow(clippy::too_many_arguments)]
    fn solve_hhl<'py>(
        &self,
        py: Python<'py>,
        n_accur: usize,
        n_redund: usize,
        mode: &str,
        shots: u64,
        seed: u64,
        engine: &str,
        rotation_constant: Option<f64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cfg = HhlConfig {
            n_accur,
            n_redund,
            mode: parse_mode(mode)?,
            shots,
            seed,
            engine: parse_engine(engine)?,
            rotation_constant,
        };
        let sys = self.inner.clone();
        let r = py.detach(move || hhl::solve_hhl(&sys, &cfg)).map_err(value_error)?;
        to_py(py, &r)
    }

    #[pyo3(signature = (m_prec, n_accur, n_redund, mode="exact", shots=100_000, seed=0, engine="fast-path"))]
    #[allow(clippy::too_many_arguments)]
    fn solve_hmpea<'py>(
        &self,
        py: Python<'py>,
        m_prec: usize,
        n_accur: usize,
        n_redund: usize,
        mode: &str,
        shots: u64,
        seed: u64,
        engine: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mut cfg = HybridConfig::new(m_prec, n_accur, n_redund);
        cfg.mode = parse_mode(mode)?;
        cfg.shots = shots;
        cfg.seed = seed;
        cfg.engine = parse_engine(engine)?;
        let sys = self.inner.clone();
        let r = py.detach(move || hybrid::solve_hybrid(&sys, &cfg)).map_err(value_error)?;
        to_py(py, &r)
    }

    #[pyo3(signature = (n_accur, n_redund, mode="exact", shots=100_000, seed=0))]
    fn solve_hspea<'py>(
        &self,
        py: Python<'py>,
        n_accur: usize,
        n_redund: usize,
        mode: &str,
        shots: u64,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        self.solve_hmpea(py, n_accur, n_accur, n_redund, mode, shots, seed, "fast-path")
    }

    fn lemma_check<'py>(&self, py: Python<'py>, n_accur: usize, n_redund: usize) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &hybrid::lemma_check(&self.inner, n_accur, n_redund).map_err(value_error)?)
    }

    #[pyo3(signature = (algorithm, precision_from, precision_to, n_redund, n_accur=1, mode="exact", shots=100_000, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn sweep<'py>(
        &self,
        py: Python<'py>,
        algorithm: &str,
        precision_from: usize,
        precision_to: usize,
        n_redund: Vec<usize>,
        n_accur: usize,
        mode: &str,
        shots: u64,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let algorithm: Algorithm = algorithm.parse().map_err(value_error)?;
        let mut spec = SweepSpec::new(algorithm, precision_from..=precision_to, n_redund);
        spec.n_accur = n_accur;
        spec.mode = parse_mode(mode)?;
        spec.shots = shots;
        spec.seed = seed;
        let sys = self.inner.clone();
        let records = py.detach(move || harness::run_sweep(&sys, &spec));
        to_py(py, &records)
    }
}

#[pyfunction]
#[pyo3(signature = (algorithm, precision, n_redund, n_accur=1, n_bottom=2))]
fn qubit_budget<'py>(
    py: Python<'py>,
    algorithm: &str,
    precision: usize,
    n_redund: usize,
    n_accur: usize,
    n_bottom: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let algorithm: Algorithm = algorithm.parse().map_err(value_error)?;
    to_py(py, &harness::qubit_budget(algorithm, precision, n_redund, n_accur, n_bottom))
}

#[pyfunction]
fn failure_bound_single(n_redund: usize) -> PyResult<f64> {
    qpe::failure_bound_single(n_redund).map_err(value_error)
}

#[pyfunction]
fn success_bound_multi(m_prec: usize, n_accur: usize, n_redund: usize) -> PyResult<f64> {
    qpe::success_bound_multi(m_prec, n_accur, n_redund).map_err(value_error)
}

#[pyfunction]
fn relative_error(estimate: Vec<f64>, reference: Vec<f64>) -> PyResult<f64> {
    hhl::relative_error(&estimate, &reference).map_err(value_error)
}

/// Runs the acceptance experiments; returns `(all_passed, items)`.
#[pyfunction]
#[pyo3(signature = (system=None, seeds=vec![1, 2, 3, 4, 5], shots=100_000))]
fn reproduce_paper<'py>(
    py: Python<'py>,
    system: Option<PyDcSystem>,
    seeds: Vec<u64>,
    shots: u64,
) -> PyResult<(bool, Bound<'py, PyAny>)> {
    let system = system.map_or_else(dcpf::five_bus_system, |s| s.inner);
    let opts = ReproduceOptions {
        seeds,
        shots,
        ..ReproduceOptions::default()
    };
    let report = py.detach(move || harness::reproduce_paper(&system, &opts));
    Ok((report.all_passed(), to_py(py, &report.items)?))
}

#[pymodule]
pub fn qpflow(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDcSystem>()?;
    m.add_class::<PyScaledSystem>()?;
    m.add_function(wrap_pyfunction!(qubit_budget, m)?)?;
    m.add_function(wrap_pyfunction!(failure_bound_single, m)?)?;
    m.add_function(wrap_pyfunction!(success_bound_multi, m)?)?;
    m.add_function(wrap_pyfunction!(relative_error, m)?)?;
    m.add_function(wrap_pyfunction!(reproduce_paper, m)?)?;
    Ok(())
}
