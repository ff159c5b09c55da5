use pyo3::prelude::*;
use pyo3::types::PyDict;
use qpflow::qpflow;

#[test]
fn module_exposes_solvers() {
    pyo3::append_to_inittab!(qpflow);
    Python::initialize();
    Python::attach(|py| {
        let locals = PyDict::new(py);
        py.run(
            c"
import qpflow
s = qpflow.DcSystem.five_bus().scaled()
strings = s.eigenvalue_strings(9)
hhl = s.solve_hhl(9, 7)
budget = qpflow.qubit_budget('hhl', 9, 7)
try:
    qpflow.DcSystem.from_matrix_text('1 2\\n3 x\\n1 1\\n')
    raised = False
except ValueError:
    raised = True
",
            None,
            Some(&locals),
        )
        .unwrap();
        let strings: Vec<String> = locals.get_item("strings").unwrap().unwrap().extract().unwrap();
        assert_eq!(strings[3], "000010110");
        let hhl = locals.get_item("hhl").unwrap().unwrap();
        let theory: f64 = hhl.get_item("n_e_theory").unwrap().extract().unwrap();
        assert!((theory - 0.0129).abs() < 5e-4);
        let budget = locals.get_item("budget").unwrap().unwrap();
        let medium: usize = budget.get_item("medium").unwrap().extract().unwrap();
        assert_eq!(medium, 16);
        let raised: bool = locals.get_item("raised").unwrap().unwrap().extract().unwrap();
        assert!(raised);
    });
}
