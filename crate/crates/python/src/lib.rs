//! Python bindings: scenarios, affine closed-loop problems, saddle instances
//! and random walk spaces.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use closedloop::curvature::{invariant_measure, ricci_global, ricci_kappa, tau_kappa_table, Measure, RandomWalkSpace};
use closedloop::distmap::{euclidean, w1, DecisionMap, Distribution};
use closedloop::equilibrium::repeated_minimization;
use closedloop::flow1::integrate_smi;
use closedloop::operators::{ClosedLoopProblem, MonotoneOracle, RandomField};
use closedloop::primaldual::{pd_equilibrium, PDState, SaddleInstance};
use closedloop::scenario::{run_scenario, validate_config, ScenarioConfig};
use closedloop::Vector;

fn py_err(e: closedloop::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A validated scenario config.
#[pyclass(name = "Scenario", module = "closedloop_py", frozen)]
struct PyScenario {
    config: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            config: validate_config(text).map_err(py_err)?,
        })
    }

    /// Normalized config with defaults filled and derived constants echoed.
    fn to_json(&self) -> String {
        self.config.to_json_string()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.config.kind.name()
    }

    #[getter]
    fn rho(&self) -> Option<f64> {
        self.config.derived.rho
    }

    /// Returns `(exit_code, report_json, csv_or_none)`.
    fn run(&self, py: Python<'_>) -> (i32, String, Option<String>) {
        let config = self.config.clone();
        let run = py.detach(move || run_scenario(&config));
        (run.exit_code(), run.report.to_json_string(), run.csv)
    }
}

/// `B(x, ξ) = μx − ξ` with `ξ ∼ δ_{εx+θ0}`, or `N(εx+θ0, σ²)` when `sigma`
/// is given (scalar only).
#[pyclass(name = "AffineProblem", module = "closedloop_py", frozen)]
struct PyAffineProblem {
    problem: ClosedLoopProblem,
}

#[pymethods]
impl PyAffineProblem {
    #[new]
    #[pyo3(signature = (mu, epsilon, theta0, sigma=None))]
    fn new(mu: f64, epsilon: f64, theta0: Vec<f64>, sigma: Option<f64>) -> PyResult<Self> {
        if !(mu > 0.0) || theta0.is_empty() {
            return Err(PyValueError::new_err("mu must be positive and theta0 nonempty"));
        }
        let map = match sigma {
            Some(s) if theta0.len() == 1 => DecisionMap::gaussian_affine(epsilon, theta0[0], s).map_err(py_err)?,
            Some(_) => return Err(PyValueError::new_err("the Gaussian family is scalar")),
            None => DecisionMap::dirac_affine(epsilon, Vector::from_vec(theta0)),
        };
        Ok(Self {
            problem: ClosedLoopProblem::new(MonotoneOracle::zero(), RandomField::affine(mu, mu), map, mu),
        })
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.problem.rho()
    }

    #[getter]
    fn max_step(&self) -> f64 {
        self.problem.max_step()
    }

    /// Returns `(x_bar, observed_ratios)`.
    #[pyo3(signature = (x0, tol=1e-12, max_outer=10_000))]
    fn equilibrium(&self, py: Python<'_>, x0: Vec<f64>, tol: f64, max_outer: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let r = py
            .detach(|| repeated_minimization(&self.problem, &Vector::from_vec(x0), tol, max_outer))
            .map_err(py_err)?;
        Ok((r.x_bar.iter().copied().collect(), r.ratios))
    }

    /// Returns `(times, states)` of the first-order flow.
    fn flow(&self, py: Python<'_>, x0: Vec<f64>, t0: f64, t_end: f64, h: f64) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let traj = py
            .detach(|| integrate_smi(&self.problem, &Vector::from_vec(x0), t0, t_end, h))
            .map_err(py_err)?;
        let states = traj.states.iter().map(|x| x.iter().copied().collect()).collect();
        Ok((traj.times, states))
    }
}

/// Scalar saddle instance with affine decision-dependent noise on both sides.
#[pyclass(name = "Saddle", module = "closedloop_py", frozen)]
struct PySaddle {
    instance: SaddleInstance,
}

#[pymethods]
impl PySaddle {
    #[new]
    fn new(mu_p: f64, mu_d: f64, eps_p: f64, theta_p: f64, eps_d: f64, theta_d: f64, k: f64) -> PyResult<Self> {
        if !(mu_p > 0.0 && mu_d > 0.0) {
            return Err(PyValueError::new_err("mu_p and mu_d must be positive"));
        }
        Ok(Self {
            instance: SaddleInstance::scalar_affine(mu_p, mu_d, eps_p, theta_p, eps_d, theta_d, k),
        })
    }

    #[getter]
    fn tilde_rho(&self) -> f64 {
        self.instance.tilde_rho()
    }

    #[pyo3(signature = (x0=0.0, y0=0.0, tol=1e-12))]
    fn equilibrium(&self, x0: f64, y0: f64, tol: f64) -> PyResult<(f64, f64)> {
        let r = pd_equilibrium(&self.instance, &PDState::scalar(x0, y0), tol).map_err(py_err)?;
        Ok((r.x_bar[0], r.x_bar[1]))
    }
}

/// Finite metric random walk space.
#[pyclass(name = "WalkSpace", module = "closedloop_py", frozen)]
struct PyWalkSpace {
    space: RandomWalkSpace,
}

#[pymethods]
impl PyWalkSpace {
    #[staticmethod]
    fn lazy_graph(n: usize, edges: Vec<(usize, usize, f64)>, alpha: f64) -> PyResult<Self> {
        Ok(Self {
            space: RandomWalkSpace::lazy_graph(n, &edges, alpha).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            space: RandomWalkSpace::from_json(text).map_err(py_err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.space.len()
    }

    fn kappa(&self, x: usize, y: usize) -> PyResult<f64> {
        ricci_kappa(&self.space, x, y).map_err(py_err)
    }

    fn kappa_global(&self) -> PyResult<f64> {
        ricci_global(&self.space).map_err(py_err)
    }

    /// Returns `(tau_hat, kappa, pair)`.
    fn tau_kappa(&self) -> PyResult<(f64, f64, (usize, usize))> {
        let t = tau_kappa_table(&self.space).map_err(py_err)?;
        Ok((t.tau_hat, t.kappa, t.pair))
    }

    /// Returns `(weights, residual)`.
    #[pyo3(signature = (tol=1e-12))]
    fn invariant_measure(&self, tol: f64) -> PyResult<(Vec<f64>, f64)> {
        let inv = invariant_measure(&self.space, tol).map_err(py_err)?;
        Ok((inv.upsilon.weights().to_vec(), inv.residual))
    }

    fn w1(&self, nu1: Vec<f64>, nu2: Vec<f64>) -> PyResult<f64> {
        let a = Measure::new(nu1).map_err(py_err)?;
        let b = Measure::new(nu2).map_err(py_err)?;
        self.space.w1(&a, &b).map_err(py_err)
    }
}

/// W1 between two finite measures in Euclidean space.
#[pyfunction]
fn w1_finite(p_points: Vec<Vec<f64>>, p_weights: Vec<f64>, q_points: Vec<Vec<f64>>, q_weights: Vec<f64>) -> PyResult<f64> {
    let build = |points: Vec<Vec<f64>>, weights: Vec<f64>| -> PyResult<Distribution> {
        if points.len() != weights.len() {
            return Err(PyValueError::new_err("points and weights differ in length"));
        }
        Distribution::finite(points.into_iter().map(Vector::from_vec).zip(weights).collect()).map_err(py_err)
    };
    w1(&build(p_points, p_weights)?, &build(q_points, q_weights)?, &euclidean).map_err(py_err)
}

#[pymodule]
pub fn closedloop_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyAffineProblem>()?;
    m.add_class::<PySaddle>()?;
    m.add_class::<PyWalkSpace>()?;
    m.add_function(wrap_pyfunction!(w1_finite, m)?)?;
    Ok(())
}
