use pyo3::prelude::*;
use pyo3::types::PyDict;
use pyo3::wrap_pymodule;

fn run(code: &std::ffi::CStr) {
    Python::attach(|py| {
        let module = wrap_pymodule!(closedloop_py::closedloop_py)(py);
        let globals = PyDict::new(py);
        globals.set_item("cl", module).unwrap();
        if let Err(e) = py.run(code, Some(&globals), None) {
            e.display(py);
            panic!("python check failed");
        }
    });
}

#[test]
fn affine_problem_contracts_at_rho() {
    run(c"
p = cl.AffineProblem(2.0, 0.5, [1.0])
assert p.rho == 0.25
x_bar, ratios = p.equilibrium([0.0])
assert abs(x_bar[0] - 2.0 / 3.0) < 1e-10
assert ratios and all(abs(r - 0.25) < 1e-8 for r in ratios)
g = cl.AffineProblem(2.0, 0.5, [1.0], sigma=0.3)
assert abs(g.equilibrium([0.0])[0][0] - 2.0 / 3.0) < 1e-10
");
}

#[test]
fn walk_space_and_saddle() {
    run(c"
w = cl.WalkSpace.lazy_graph(2, [(0, 1, 1.0)], 0.3)
assert abs(w.kappa_global() - 0.6) < 1e-12
s = cl.Saddle(2.0, 2.0, 0.2, 1.0, 0.2, 0.0, 1.0)
x, y = s.equilibrium()
assert abs(x - 0.42453) < 1e-5 and abs(y - 0.23585) < 1e-5
");
}

#[test]
fn errors_surface_as_value_errors() {
    run(c"
try:
    cl.Scenario.from_json('{\"kind\": \"flow1\"}')
except ValueError as e:
    assert 'instance' in str(e)
else:
    raise AssertionError('accepted')
try:
    cl.WalkSpace.lazy_graph(2, [(0, 1, 1.0)], 2.0)
except ValueError:
    pass
else:
    raise AssertionError('accepted')
");
}
