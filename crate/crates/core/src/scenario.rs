//! Declarative scenarios: a JSON config names an instance from a closed
//! catalog of parametric families, a solver setup and bound checks; running
//! it yields a CSV trajectory and a JSON report.

use std::collections::BTreeMap;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Exp1};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::curvature::{invariant_measure, nstep, tau_kappa_table, verify_contraction_with, Measure, RandomWalkSpace};
use crate::distmap::DecisionMap;
use crate::equilibrium::repeated_minimization;
use crate::flow1::{check_speed_bounds_tol, integrate_smi_with, noise_floor, tail_rate, w1_decay_report, Scheme, SmiOptions};
use crate::flow2::{check_lyapunov_decay_with, gradient_integral_estimate, integrate_isehd, lyapunov_trace, ISEHDConfig};
use crate::numerics::{TimeSeries, Vector};
use crate::operators::{ClosedLoopProblem, MonotoneOracle, RandomField};
use crate::primaldual::{
    check_pd_decay_with, integrate_ispds, integrate_spds_with, pd_energy_series, pd_equilibrium, PDState, SaddleInstance,
    ISPDS_RHO_LIMIT,
};
use crate::trajectory::{fmt_f64, BoundReport, Trajectory};
use crate::{Error, Result};

const DEFAULT_T0: f64 = 1.0;
const DEFAULT_TOL: f64 = 1e-12;
const DEFAULT_MAX_OUTER: usize = 10_000;
const DEFAULT_CURVATURE_STEPS: usize = 50;
const DEFAULT_CONTRACTION_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Equilibrium,
    Flow1,
    Flow2,
    Spds,
    Ispds,
    Curvature,
    W1,
}

impl Kind {
    const ALL: [(&'static str, Kind); 7] = [
        ("equilibrium", Kind::Equilibrium),
        ("flow1", Kind::Flow1),
        ("flow2", Kind::Flow2),
        ("spds", Kind::Spds),
        ("ispds", Kind::Ispds),
        ("curvature", Kind::Curvature),
        ("w1", Kind::W1),
    ];

    pub fn name(self) -> &'static str {
        Self::ALL.iter().find(|(_, k)| *k == self).map(|(n, _)| *n).expect("listed")
    }

    fn is_flow(self) -> bool {
        matches!(self, Kind::Flow1 | Kind::Flow2 | Kind::Spds | Kind::Ispds | Kind::W1)
    }
}

/// Closed catalog of instance families.
///
/// The affine families use `B(x, ξ) = μx − ξ` (so `β = 1`, `L = μ`) with the
/// noise centred at `εx + θ0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Instance {
    AffineDirac { mu: f64, epsilon: f64, theta0: Vec<f64> },
    AffineGauss { mu: f64, epsilon: f64, theta0: f64, sigma: f64 },
    /// Affine-Dirac field plus the normal cone of the nonnegative orthant.
    ProjectedQuadratic { mu: f64, epsilon: f64, theta0: Vec<f64> },
    ScalarSaddle {
        mu_p: f64,
        mu_d: f64,
        eps_p: f64,
        theta_p: f64,
        eps_d: f64,
        theta_d: f64,
        k: f64,
    },
    /// Lazy walk on a weighted graph with the shortest-path metric.
    GraphWalk { n: usize, edges: Vec<(usize, usize, f64)>, alpha: f64 },
}

impl Instance {
    pub fn family(&self) -> &'static str {
        match self {
            Instance::AffineDirac { .. } => "affine_dirac",
            Instance::AffineGauss { .. } => "affine_gauss",
            Instance::ProjectedQuadratic { .. } => "projected_quadratic",
            Instance::ScalarSaddle { .. } => "scalar_saddle",
            Instance::GraphWalk { .. } => "graph_walk",
        }
    }

    /// State dimension; the stacked `(x, y)` for saddles, the point count for walks.
    pub fn dim(&self) -> usize {
        match self {
            Instance::AffineDirac { theta0, .. } | Instance::ProjectedQuadratic { theta0, .. } => theta0.len(),
            Instance::AffineGauss { .. } => 1,
            Instance::ScalarSaddle { .. } => 2,
            Instance::GraphWalk { n, .. } => *n,
        }
    }

    /// The instance as a closed-loop problem; walks have none.
    pub fn problem(&self) -> Result<ClosedLoopProblem> {
        let affine = |mu: f64, a: MonotoneOracle, map: DecisionMap| {
            ClosedLoopProblem::new(a, RandomField::affine(mu, mu), map, mu).with_name(self.family())
        };
        match self {
            Instance::AffineDirac { mu, epsilon, theta0 } => Ok(affine(
                *mu,
                MonotoneOracle::zero(),
                DecisionMap::dirac_affine(*epsilon, Vector::from_vec(theta0.clone())),
            )),
            Instance::AffineGauss {
                mu,
                epsilon,
                theta0,
                sigma,
            } => Ok(affine(
                *mu,
                MonotoneOracle::zero(),
                DecisionMap::gaussian_affine(*epsilon, *theta0, *sigma)?,
            )),
            Instance::ProjectedQuadratic { mu, epsilon, theta0 } => Ok(affine(
                *mu,
                MonotoneOracle::nonnegative_cone(),
                DecisionMap::dirac_affine(*epsilon, Vector::from_vec(theta0.clone())),
            )),
            Instance::ScalarSaddle { .. } => Ok(self.saddle()?.product_problem()),
            Instance::GraphWalk { .. } => Err(Error::constraint("instance.family", "graph walks define no operator")),
        }
    }

    pub fn saddle(&self) -> Result<SaddleInstance> {
        match *self {
            Instance::ScalarSaddle {
                mu_p,
                mu_d,
                eps_p,
                theta_p,
                eps_d,
                theta_d,
                k,
            } => Ok(SaddleInstance::scalar_affine(mu_p, mu_d, eps_p, theta_p, eps_d, theta_d, k)),
            _ => Err(Error::constraint("instance.family", "expected scalar_saddle")),
        }
    }

    pub fn space(&self) -> Result<RandomWalkSpace> {
        match self {
            Instance::GraphWalk { n, edges, alpha } => RandomWalkSpace::lazy_graph(*n, edges, *alpha),
            _ => Err(Error::constraint("instance.family", "expected graph_walk")),
        }
    }

    fn supports(&self, kind: Kind) -> bool {
        use Instance::*;
        match kind {
            Kind::Equilibrium => !matches!(self, GraphWalk { .. }),
            Kind::Flow1 | Kind::W1 => matches!(self, AffineDirac { .. } | AffineGauss { .. } | ProjectedQuadratic { .. }),
            Kind::Flow2 => matches!(self, AffineDirac { .. } | AffineGauss { .. }),
            Kind::Spds | Kind::Ispds => matches!(self, ScalarSaddle { .. }),
            Kind::Curvature => matches!(self, GraphWalk { .. }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    pub tol: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_outer: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheme: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Outputs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub json_path: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckType {
    /// The kind's theoretical envelope on the grid.
    Envelope,
    /// Fitted rate at least `rate_multiplier·theoretical·(1 − tolerance)`.
    Rate,
    /// The damping/coupling condition on the constants (flow2, ispds).
    DampingCondition,
    /// One-step W1 contraction on random measure pairs (curvature).
    Contraction,
}

impl CheckType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "envelope" => CheckType::Envelope,
            "rate" => CheckType::Rate,
            "damping_condition" => CheckType::DampingCondition,
            "contraction" => CheckType::Contraction,
            _ => return None,
        })
    }

    fn default_tolerance(self) -> f64 {
        match self {
            CheckType::Envelope => 1e-6,
            CheckType::Rate => 1e-2,
            CheckType::DampingCondition => 0.0,
            CheckType::Contraction => 1e-9,
        }
    }

    fn applies_to(self, kind: Kind) -> bool {
        match self {
            CheckType::Envelope => true,
            CheckType::Rate => kind != Kind::Equilibrium,
            CheckType::DampingCondition => matches!(kind, Kind::Flow2 | Kind::Ispds),
            CheckType::Contraction => kind == Kind::Curvature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRequest {
    #[serde(rename = "type")]
    pub check: CheckType,
    pub rate_multiplier: f64,
    pub tolerance: f64,
    /// Non-strict checks only produce warnings.
    pub strict: bool,
}

/// Constants recomputed from the instance and echoed back.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Derived {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lipschitz_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_const: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_bound: Option<f64>,
}

impl Derived {
    fn entries(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("rho", self.rho),
            ("beta_tau", self.beta_tau),
            ("mu", self.mu),
            ("lipschitz_l", self.lipschitz_l),
            ("gamma_const", self.gamma_const),
            ("omega_bound", self.omega_bound),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub kind: Kind,
    pub instance: Instance,
    pub solver: SolverConfig,
    pub outputs: Outputs,
    pub checks: Vec<CheckRequest>,
    pub derived: Derived,
}

impl ScenarioConfig {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn t0(&self) -> f64 {
        self.solver.t0.unwrap_or(DEFAULT_T0)
    }
}

// ---------------------------------------------------------------------------
// Parsing

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

struct Obj<'a> {
    path: String,
    map: &'a Map<String, Value>,
}

impl<'a> Obj<'a> {
    fn new(value: &'a Value, path: &str) -> Result<Self> {
        match value {
            Value::Object(map) => Ok(Self { path: path.into(), map }),
            _ => Err(Error::schema(if path.is_empty() { "$" } else { path }, "expected an object")),
        }
    }

    fn at(&self, key: &str) -> String {
        join(&self.path, key)
    }

    fn deny_unknown(&self, allowed: &[&str]) -> Result<()> {
        match self.map.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::schema(self.at(k), "unknown field")),
            None => Ok(()),
        }
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.map.get(key).filter(|v| !v.is_null())
    }

    fn req<T>(&self, key: &str, read: impl Fn(&Value, &str) -> Result<T>) -> Result<T> {
        match self.get(key) {
            Some(v) => read(v, &self.at(key)),
            None => Err(Error::schema(self.at(key), "missing required field")),
        }
    }

    fn opt<T>(&self, key: &str, read: impl Fn(&Value, &str) -> Result<T>) -> Result<Option<T>> {
        self.get(key).map(|v| read(v, &self.at(key))).transpose()
    }
}

fn num(v: &Value, path: &str) -> Result<f64> {
    match v.as_f64() {
        Some(x) if x.is_finite() => Ok(x),
        _ => Err(Error::schema(path, "expected a finite number")),
    }
}

fn uint(v: &Value, path: &str) -> Result<u64> {
    v.as_u64().ok_or_else(|| Error::schema(path, "expected a nonnegative integer"))
}

fn usize_(v: &Value, path: &str) -> Result<usize> {
    Ok(uint(v, path)? as usize)
}

fn string(v: &Value, path: &str) -> Result<String> {
    v.as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::schema(path, "expected a string"))
}

fn boolean(v: &Value, path: &str) -> Result<bool> {
    v.as_bool().ok_or_else(|| Error::schema(path, "expected a boolean"))
}

fn num_list(v: &Value, path: &str) -> Result<Vec<f64>> {
    let items = v.as_array().ok_or_else(|| Error::schema(path, "expected an array of numbers"))?;
    items.iter().enumerate().map(|(i, x)| num(x, &format!("{path}[{i}]"))).collect()
}

/// A number or a nonempty array of numbers.
fn num_or_list(v: &Value, path: &str) -> Result<Vec<f64>> {
    if v.is_number() {
        return Ok(vec![num(v, path)?]);
    }
    let list = num_list(v, path)?;
    if list.is_empty() {
        return Err(Error::constraint(path, "must not be empty"));
    }
    Ok(list)
}

fn positive(x: f64, path: &str) -> Result<f64> {
    if x > 0.0 {
        Ok(x)
    } else {
        Err(Error::constraint(path, format!("must be positive, got {x}")))
    }
}

fn parse_instance(value: &Value) -> Result<Instance> {
    let o = Obj::new(value, "instance")?;
    let family = o.req("family", string)?;
    let pos = |key: &str| -> Result<f64> { positive(o.req(key, num)?, &o.at(key)) };
    let instance = match family.as_str() {
        "affine_dirac" | "projected_quadratic" => {
            o.deny_unknown(&["family", "mu", "epsilon", "theta0"])?;
            let (mu, epsilon, theta0) = (pos("mu")?, o.req("epsilon", num)?, o.req("theta0", num_or_list)?);
            if family == "affine_dirac" {
                Instance::AffineDirac { mu, epsilon, theta0 }
            } else {
                Instance::ProjectedQuadratic { mu, epsilon, theta0 }
            }
        }
        "affine_gauss" => {
            o.deny_unknown(&["family", "mu", "epsilon", "theta0", "sigma"])?;
            Instance::AffineGauss {
                mu: pos("mu")?,
                epsilon: o.req("epsilon", num)?,
                theta0: o.req("theta0", num)?,
                sigma: pos("sigma")?,
            }
        }
        "scalar_saddle" => {
            o.deny_unknown(&["family", "mu_p", "mu_d", "eps_p", "theta_p", "eps_d", "theta_d", "k"])?;
            Instance::ScalarSaddle {
                mu_p: pos("mu_p")?,
                mu_d: pos("mu_d")?,
                eps_p: o.req("eps_p", num)?,
                theta_p: o.req("theta_p", num)?,
                eps_d: o.req("eps_d", num)?,
                theta_d: o.req("theta_d", num)?,
                k: o.req("k", num)?,
            }
        }
        "graph_walk" => {
            o.deny_unknown(&["family", "n", "edges", "alpha"])?;
            let edges_path = o.at("edges");
            let raw = o.req("edges", |v, p| v.as_array().cloned().ok_or_else(|| Error::schema(p, "expected an array")))?;
            let edges = raw
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    let p = format!("{edges_path}[{i}]");
                    match e.as_array().map(|a| a.as_slice()) {
                        Some([a, b, w]) => Ok((usize_(a, &p)?, usize_(b, &p)?, positive(num(w, &p)?, &p)?)),
                        Some([a, b]) => Ok((usize_(a, &p)?, usize_(b, &p)?, 1.0)),
                        _ => Err(Error::schema(p, "expected [i, j] or [i, j, weight]")),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let alpha = o.req("alpha", num)?;
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::constraint(o.at("alpha"), "must lie in [0, 1]"));
            }
            let n = match o.opt("n", usize_)? {
                Some(n) => n,
                None => edges.iter().map(|(i, j, _)| i.max(j) + 1).max().unwrap_or(0),
            };
            if n < 2 {
                return Err(Error::constraint(o.at("n"), "a walk needs at least two points"));
            }
            if let Some((k, _)) = edges.iter().enumerate().find(|(_, (i, j, _))| *i >= n || *j >= n || i == j) {
                return Err(Error::constraint(format!("{edges_path}[{k}]"), "endpoint out of range or self-loop"));
            }
            Instance::GraphWalk { n, edges, alpha }
        }
        other => return Err(Error::schema(o.at("family"), format!("unknown family {other:?}"))),
    };
    Ok(instance)
}

fn parse_kind(value: Option<&Value>) -> Result<Kind> {
    let name = match value {
        Some(v) => string(v, "kind")?,
        None => return Err(Error::schema("kind", "missing required field")),
    };
    Kind::ALL
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, k)| *k)
        .ok_or_else(|| Error::schema("kind", format!("unknown kind {name:?}")))
}

/// Constants of the instance as seen by the kind's theory.
fn derive(kind: Kind, instance: &Instance, omega: Option<f64>) -> Result<Derived> {
    match instance {
        Instance::GraphWalk { .. } => Ok(Derived::default()),
        Instance::ScalarSaddle { .. } => {
            let s = instance.saddle()?;
            Ok(Derived {
                rho: Some(s.tilde_rho()),
                beta_tau: Some(s.tau * s.tilde_beta()),
                mu: Some(s.tilde_mu()),
                lipschitz_l: Some(s.lipschitz_total()),
                ..Derived::default()
            })
        }
        _ => {
            let p = instance.problem()?;
            let mut d = Derived {
                rho: Some(p.rho()),
                beta_tau: Some(p.beta_tau()),
                mu: Some(p.mu),
                lipschitz_l: Some(p.b.lipschitz_l),
                ..Derived::default()
            };
            if kind == Kind::Flow2 {
                let check = p.damping_check(omega.unwrap_or(0.0));
                d.gamma_const = Some(2.0 * p.mu.sqrt());
                d.omega_bound = Some(check.omega_bound);
            }
            Ok(d)
        }
    }
}

const SOLVER_KEYS: &[&str] = &[
    "h", "t0", "T", "tol", "seed", "max_outer", "x0", "v0", "omega", "scheme", "steps", "samples",
];

fn solver_keys(kind: Kind) -> &'static [&'static str] {
    match kind {
        Kind::Equilibrium => &["tol", "seed", "max_outer", "x0"],
        Kind::Flow1 | Kind::W1 | Kind::Spds => &["h", "t0", "T", "tol", "seed", "max_outer", "x0", "scheme"],
        Kind::Flow2 => &["h", "t0", "T", "tol", "seed", "max_outer", "x0", "v0", "omega"],
        Kind::Ispds => &["h", "t0", "T", "tol", "seed", "max_outer", "x0", "v0"],
        Kind::Curvature => &["tol", "seed", "steps", "samples"],
    }
}

fn parse_solver(value: Option<&Value>, kind: Kind, instance: &Instance) -> Result<SolverConfig> {
    let empty = Value::Object(Map::new());
    let o = Obj::new(value.unwrap_or(&empty), "solver")?;
    o.deny_unknown(SOLVER_KEYS)?;
    if let Some(k) = o.map.keys().find(|k| !solver_keys(kind).contains(&k.as_str())) {
        return Err(Error::schema(o.at(k), format!("not used by kind {:?}", kind.name())));
    }
    let dim = instance.dim();
    let vec_of_dim = |key: &str| -> Result<Option<Vec<f64>>> {
        let v = o.opt(key, num_or_list)?;
        if let Some(v) = &v {
            if v.len() != dim {
                return Err(Error::constraint(o.at(key), format!("expected {dim} entries, got {}", v.len())));
            }
        }
        Ok(v)
    };
    let keys = solver_keys(kind);
    let has = |k: &str| keys.contains(&k);

    let tol = positive(o.opt("tol", num)?.unwrap_or(DEFAULT_TOL), &o.at("tol"))?;
    let seed = o.opt("seed", uint)?.unwrap_or(0);
    let mut s = SolverConfig {
        h: None,
        t0: None,
        t_end: None,
        tol,
        seed,
        max_outer: None,
        x0: None,
        v0: None,
        omega: None,
        scheme: None,
        steps: None,
        samples: None,
    };
    if has("max_outer") {
        let m = o.opt("max_outer", usize_)?.unwrap_or(DEFAULT_MAX_OUTER);
        if m == 0 {
            return Err(Error::constraint(o.at("max_outer"), "must be at least 1"));
        }
        s.max_outer = Some(m);
    }
    if has("x0") {
        let x0 = vec_of_dim("x0")?.unwrap_or_else(|| vec![0.0; dim]);
        if matches!(instance, Instance::ProjectedQuadratic { .. }) && x0.iter().any(|v| *v < 0.0) {
            return Err(Error::constraint(o.at("x0"), "must lie in the nonnegative orthant"));
        }
        s.x0 = Some(x0);
    }
    if has("v0") {
        s.v0 = Some(vec_of_dim("v0")?.unwrap_or_else(|| vec![0.0; dim]));
    }
    if has("omega") {
        let omega = o.req("omega", num)?;
        if omega < 0.0 {
            return Err(Error::constraint(o.at("omega"), "must be nonnegative"));
        }
        s.omega = Some(omega);
    }
    if has("scheme") {
        let scheme = o.opt("scheme", string)?.unwrap_or_else(|| "forward_backward".into());
        if !matches!(scheme.as_str(), "forward_backward" | "rk4") {
            return Err(Error::schema(o.at("scheme"), "expected \"forward_backward\" or \"rk4\""));
        }
        if scheme == "rk4" && matches!(instance, Instance::ProjectedQuadratic { .. }) {
            return Err(Error::constraint(o.at("scheme"), "rk4 needs a smooth A"));
        }
        s.scheme = Some(scheme);
    }
    if has("steps") {
        let steps = o.opt("steps", usize_)?.unwrap_or(DEFAULT_CURVATURE_STEPS);
        if steps == 0 {
            return Err(Error::constraint(o.at("steps"), "must be at least 1"));
        }
        s.steps = Some(steps);
        s.samples = Some(o.opt("samples", usize_)?.unwrap_or(DEFAULT_CONTRACTION_SAMPLES));
    }
    if kind.is_flow() {
        let t0 = positive(o.opt("t0", num)?.unwrap_or(DEFAULT_T0), &o.at("t0"))?;
        let (h_default, span_default) = flow_defaults(kind, instance)?;
        let t_end = o.opt("T", num)?.unwrap_or(t0 + span_default);
        if !(t_end > t0) {
            return Err(Error::constraint(o.at("T"), format!("T = {t_end} must exceed t0 = {t0}")));
        }
        s.h = Some(positive(o.opt("h", num)?.unwrap_or(h_default), &o.at("h"))?);
        s.t0 = Some(t0);
        s.t_end = Some(t_end);
    }
    Ok(s)
}

/// Default step and horizon length per kind.
fn flow_defaults(kind: Kind, instance: &Instance) -> Result<(f64, f64)> {
    Ok(match kind {
        Kind::Flow1 | Kind::W1 | Kind::Spds => {
            let p = instance.problem()?;
            let gap = p.mu - p.beta_tau();
            let span = if gap > 0.0 { 12.0 / gap } else { 10.0 };
            (1e-3f64.min(p.max_step()), span)
        }
        Kind::Flow2 => {
            let p = instance.problem()?;
            (1e-3 / p.mu.sqrt(), 20.0)
        }
        Kind::Ispds => (1e-3, 20.0),
        Kind::Equilibrium | Kind::Curvature => (0.0, 0.0),
    })
}

fn parse_checks(value: Option<&Value>, kind: Kind) -> Result<Vec<CheckRequest>> {
    let Some(value) = value.filter(|v| !v.is_null()) else {
        return Ok(Vec::new());
    };
    let items = value.as_array().ok_or_else(|| Error::schema("checks", "expected an array"))?;
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let o = Obj::new(item, &format!("checks[{i}]"))?;
            o.deny_unknown(&["type", "rate_multiplier", "tolerance", "strict"])?;
            let name = o.req("type", string)?;
            let check = CheckType::parse(&name).ok_or_else(|| Error::schema(o.at("type"), format!("unknown check {name:?}")))?;
            if !check.applies_to(kind) {
                return Err(Error::constraint(o.at("type"), format!("{name:?} does not apply to kind {:?}", kind.name())));
            }
            let rate_multiplier = positive(o.opt("rate_multiplier", num)?.unwrap_or(1.0), &o.at("rate_multiplier"))?;
            let tolerance = o.opt("tolerance", num)?.unwrap_or(check.default_tolerance());
            if tolerance < 0.0 {
                return Err(Error::constraint(o.at("tolerance"), "must be nonnegative"));
            }
            Ok(CheckRequest {
                check,
                rate_multiplier,
                tolerance,
                strict: o.opt("strict", boolean)?.unwrap_or(true),
            })
        })
        .collect()
}

fn parse_outputs(value: Option<&Value>) -> Result<Outputs> {
    let Some(value) = value.filter(|v| !v.is_null()) else {
        return Ok(Outputs::default());
    };
    let o = Obj::new(value, "outputs")?;
    o.deny_unknown(&["csv_path", "json_path"])?;
    Ok(Outputs {
        csv_path: o.opt("csv_path", string)?,
        json_path: o.opt("json_path", string)?,
    })
}

/// Any supplied `derived` entry must agree with the recomputed value.
fn cross_check_derived(value: Option<&Value>, derived: &Derived) -> Result<()> {
    let Some(value) = value.filter(|v| !v.is_null()) else {
        return Ok(());
    };
    let o = Obj::new(value, "derived")?;
    let entries = derived.entries();
    o.deny_unknown(&entries.map(|(k, _)| k))?;
    for (key, computed) in entries {
        let Some(given) = o.opt(key, num)? else { continue };
        match computed {
            Some(c) if (given - c).abs() <= 1e-12 * c.abs().max(1.0) => {}
            Some(c) => return Err(Error::constraint(o.at(key), format!("given {given}, computed {c}"))),
            None => return Err(Error::schema(o.at(key), "not defined for this instance")),
        }
    }
    Ok(())
}

/// Parse, fill defaults and cross-check a scenario config.
pub fn validate_config(raw: &str) -> Result<ScenarioConfig> {
    let value: Value = serde_json::from_str(raw)?;
    validate_value(&value)
}

pub fn validate_value(value: &Value) -> Result<ScenarioConfig> {
    let o = Obj::new(value, "")?;
    o.deny_unknown(&["name", "kind", "instance", "solver", "outputs", "checks", "derived"])?;
    let kind = parse_kind(o.get("kind"))?;
    let instance = parse_instance(o.get("instance").ok_or_else(|| Error::schema("instance", "missing required field"))?)?;
    if !instance.supports(kind) {
        return Err(Error::constraint(
            "instance.family",
            format!("{:?} does not support kind {:?}", instance.family(), kind.name()),
        ));
    }
    let solver = parse_solver(o.get("solver"), kind, &instance)?;
    let derived = derive(kind, &instance, solver.omega)?;
    cross_check_derived(o.get("derived"), &derived)?;
    Ok(ScenarioConfig {
        name: o.opt("name", string)?,
        kind,
        checks: parse_checks(o.get("checks"), kind)?,
        outputs: parse_outputs(o.get("outputs"))?,
        instance,
        solver,
        derived,
    })
}

// ---------------------------------------------------------------------------
// Running

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    #[serde(rename = "type")]
    pub check: CheckType,
    pub rate_multiplier: f64,
    pub tolerance: f64,
    pub strict: bool,
    pub satisfied: bool,
    pub max_violation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Violation,
    Error,
}

/// JSON report of one scenario run; see `docs/report-schema.md`.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub kind: Kind,
    pub family: String,
    pub status: Status,
    pub exit_code: i32,
    pub equilibrium: Option<Vec<f64>>,
    pub fitted_rate: Option<f64>,
    pub theoretical_rate: Option<f64>,
    pub bound_satisfied: Option<bool>,
    pub max_violation: Option<f64>,
    pub checks: Vec<CheckOutcome>,
    pub derived: Derived,
    pub metrics: BTreeMap<String, Value>,
    pub warnings: Vec<String>,
    pub error: Option<ErrorReport>,
    pub runtime_seconds: f64,
    pub timestamp: u64,
}

impl Report {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub report: Report,
    pub csv: Option<String>,
}

impl ScenarioRun {
    pub fn exit_code(&self) -> i32 {
        self.report.exit_code
    }
}

/// Intermediate result of one kind before the report is assembled.
#[derive(Default)]
struct Outcome {
    equilibrium: Option<Vec<f64>>,
    fitted_rate: Option<f64>,
    theoretical_rate: Option<f64>,
    checks: Vec<CheckOutcome>,
    metrics: BTreeMap<String, Value>,
    warnings: Vec<String>,
    csv: Option<String>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn outcome(req: &CheckRequest, satisfied: bool, max_violation: f64, note: Option<String>) -> CheckOutcome {
    CheckOutcome {
        check: req.check,
        rate_multiplier: req.rate_multiplier,
        tolerance: req.tolerance,
        strict: req.strict,
        satisfied,
        max_violation: finite(max_violation),
        note,
    }
}

fn rate_outcome(req: &CheckRequest, fitted: Option<f64>, theoretical: Option<f64>) -> CheckOutcome {
    match (fitted, theoretical) {
        (Some(f), Some(t)) => {
            let target = req.rate_multiplier * t * (1.0 - req.tolerance);
            outcome(req, f >= target, target - f, None)
        }
        _ => outcome(req, false, f64::NAN, Some("rate unavailable".into())),
    }
}

fn bound_outcome(req: &CheckRequest, report: &BoundReport) -> CheckOutcome {
    outcome(req, report.max_violation <= req.tolerance, report.max_violation, None)
}

/// Envelope checks always evaluate the multiplier-1 bound first so the CSV
/// envelope column is the theoretical one.
fn envelope_multipliers(checks: &[CheckRequest]) -> Vec<f64> {
    let mut m = vec![1.0];
    for c in checks.iter().filter(|c| c.check == CheckType::Envelope) {
        if !m.contains(&c.rate_multiplier) {
            m.push(c.rate_multiplier);
        }
    }
    m
}

fn trajectory_csv(traj: &Trajectory, extra: &[(&str, &[f64])]) -> Result<String> {
    traj.to_csv_string(extra)
}

fn run_equilibrium(config: &ScenarioConfig) -> Result<Outcome> {
    let s = &config.solver;
    let x0 = Vector::from_vec(s.x0.clone().expect("filled by validation"));
    let max_outer = s.max_outer.unwrap_or(DEFAULT_MAX_OUTER);
    let report = match &config.instance {
        Instance::ScalarSaddle { .. } => {
            pd_equilibrium(&config.instance.saddle()?, &PDState::split(&x0, 1), s.tol)?
        }
        inst => repeated_minimization(&inst.problem()?, &x0, s.tol, max_outer)?,
    };
    let rho = config.derived.rho.unwrap_or(f64::NAN);
    let max_ratio = report.ratios.iter().copied().fold(f64::NAN, f64::max);
    let mut out = Outcome {
        equilibrium: Some(report.x_bar.iter().copied().collect()),
        fitted_rate: finite(max_ratio),
        theoretical_rate: finite(rho),
        ..Outcome::default()
    };
    for req in &config.checks {
        let bound = req.rate_multiplier * rho;
        let worst = report.ratios.iter().map(|r| r - bound).fold(f64::NEG_INFINITY, f64::max);
        out.checks.push(if report.ratios.is_empty() {
            outcome(req, true, f64::NAN, Some("no ratios above the noise floor".into()))
        } else {
            outcome(req, worst <= req.tolerance, worst, None)
        });
    }
    out.metrics.insert("outer_iterations".into(), json!(report.outer_iterations));
    out.metrics.insert("inner_iterations".into(), json!(report.inner_iterations));
    out.metrics.insert("residual".into(), json!(finite(report.residual)));
    out.metrics.insert("error_bound".into(), json!(finite(report.error_bound)));
    out.metrics.insert("ratios".into(), json!(report.ratios));

    let dim = x0.len();
    let mut csv = String::from("k");
    for i in 0..dim {
        csv.push_str(&format!(",x_{i}"));
    }
    csv.push_str(",step\n");
    for (k, x) in report.iterates.iter().enumerate() {
        csv.push_str(&k.to_string());
        for v in x.iter() {
            csv.push(',');
            csv.push_str(&fmt_f64(*v));
        }
        let step = if k == 0 { f64::NAN } else { (x - &report.iterates[k - 1]).norm() };
        csv.push(',');
        csv.push_str(&fmt_f64(step));
        csv.push('\n');
    }
    out.csv = Some(csv);
    Ok(out)
}

fn smi_options(config: &ScenarioConfig) -> SmiOptions {
    SmiOptions {
        scheme: match config.solver.scheme.as_deref() {
            Some("rk4") => Scheme::Rk4,
            _ => Scheme::ForwardBackward,
        },
        frozen_at: None,
    }
}

fn flow_window(config: &ScenarioConfig) -> (f64, f64, f64) {
    let s = &config.solver;
    (
        s.t0.expect("filled by validation"),
        s.t_end.expect("filled by validation"),
        s.h.expect("filled by validation"),
    )
}

/// flow1, spds and w1 share the first-order trajectory and distance envelope.
fn run_first_order(config: &ScenarioConfig) -> Result<Outcome> {
    let s = &config.solver;
    let (t0, t_end, h) = flow_window(config);
    let x0 = Vector::from_vec(s.x0.clone().expect("filled by validation"));
    let opts = smi_options(config);
    let (problem, traj, x_bar) = match &config.instance {
        Instance::ScalarSaddle { .. } => {
            let inst = config.instance.saddle()?;
            let z_bar = pd_equilibrium(&inst, &PDState::split(&x0, 1), s.tol)?.x_bar;
            let traj = integrate_spds_with(&inst, &PDState::split(&x0, 1), t0, t_end, h, &opts)?;
            (inst.product_problem(), traj, z_bar)
        }
        inst => {
            let problem = inst.problem()?;
            let x_bar = repeated_minimization(&problem, &x0, s.tol, s.max_outer.unwrap_or(DEFAULT_MAX_OUTER))?.x_bar;
            let traj = integrate_smi_with(&problem, &x0, t0, t_end, h, &opts)?;
            (problem, traj, x_bar)
        }
    };
    let rate = problem.mu - problem.beta_tau();
    let mut out = Outcome {
        equilibrium: Some(x_bar.iter().copied().collect()),
        theoretical_rate: finite(rate).filter(|r| *r > 0.0),
        ..Outcome::default()
    };
    out.metrics.insert("steps".into(), json!(traj.len() - 1));
    out.metrics.insert("h".into(), json!(traj.meta.h));
    out.metrics.insert("solver".into(), json!(traj.meta.solver));
    out.metrics
        .insert("final_distance".into(), json!((traj.last_state() - &x_bar).norm()));

    let mut reports = Vec::new();
    for mult in envelope_multipliers(&config.checks) {
        if config.kind == Kind::W1 {
            reports.push((mult, w1_envelope(&traj, &problem, &x_bar, mult)?));
        } else {
            reports.push((mult, check_speed_bounds_tol(&traj, &x_bar, &problem, mult, 0.0)?));
        }
    }
    let base = &reports[0].1;
    out.fitted_rate = finite(base.fitted_rate);
    for req in &config.checks {
        out.checks.push(match req.check {
            CheckType::Envelope => {
                let r = &reports.iter().find(|(m, _)| *m == req.rate_multiplier).expect("computed").1;
                bound_outcome(req, r)
            }
            _ => rate_outcome(req, out.fitted_rate, out.theoretical_rate),
        });
    }
    let observed_name = if config.kind == Kind::W1 { "w1" } else { "distance" };
    out.csv = Some(trajectory_csv(
        &traj,
        &[(observed_name, &base.observed.values), ("envelope", &base.envelope.values)],
    )?);
    Ok(out)
}

/// `W1(m_{x(t)}, m_x̄) ≤ τ‖x0 − x̄‖e^{−mult(μ−βτ)(t−t0)}`.
fn w1_envelope(traj: &Trajectory, problem: &ClosedLoopProblem, x_bar: &Vector, mult: f64) -> Result<BoundReport> {
    let observed = w1_decay_report(traj, problem, x_bar)?;
    let d0 = (&traj.states[0] - x_bar).norm();
    let rate = mult * (problem.mu - problem.beta_tau());
    let t0 = traj.times[0];
    let envelope = TimeSeries {
        times: traj.times.clone(),
        values: traj
            .times
            .iter()
            .map(|t| problem.map.tau * d0 * (-rate * (t - t0)).exp())
            .collect(),
    };
    let fitted = tail_rate(&observed, noise_floor(x_bar) * problem.map.tau.max(1e-300));
    Ok(BoundReport::new(observed, envelope, fitted, 0.0))
}

fn run_flow2(config: &ScenarioConfig) -> Result<Outcome> {
    let s = &config.solver;
    let (t0, t_end, h) = flow_window(config);
    let omega = s.omega.expect("filled by validation");
    let x0 = Vector::from_vec(s.x0.clone().expect("filled by validation"));
    let v0 = Vector::from_vec(s.v0.clone().expect("filled by validation"));
    let problem = config.instance.problem()?;
    let x_bar = repeated_minimization(&problem, &x0, s.tol, s.max_outer.unwrap_or(DEFAULT_MAX_OUTER))?.x_bar;
    let cfg = ISEHDConfig::new(omega, problem.mu, t0, t_end).with_step(h);
    let damping = problem.damping_check(omega);
    let mut out = Outcome {
        equilibrium: Some(x_bar.iter().copied().collect()),
        theoretical_rate: Some(problem.mu.sqrt() / 4.0),
        ..Outcome::default()
    };
    if !damping.ok {
        out.warnings.push(format!(
            "damping condition violated: omega = {omega} (bound {}), 16 rho^2 + omega = {}",
            damping.omega_bound,
            16.0 * damping.rho * damping.rho + omega
        ));
    } else if damping.at_boundary() {
        out.warnings.push("damping condition holds only at its boundary".into());
    }
    let traj = integrate_isehd(&problem, &x0, &v0, &cfg)?;
    let trace = lyapunov_trace(&traj, &problem, &x_bar, &cfg)?;
    let gi = gradient_integral_estimate(&traj, &problem, &x_bar, problem.mu)?;
    out.metrics.insert("omega_margin".into(), json!(finite(damping.omega_margin)));
    out.metrics.insert("rho_margin".into(), json!(finite(damping.rho_margin)));
    out.metrics.insert("damping_ok".into(), json!(damping.ok));
    out.metrics.insert("gradient_integral_c".into(), json!(finite(gi.c_estimate)));
    out.metrics.insert("steps".into(), json!(traj.len() - 1));
    out.metrics.insert("h".into(), json!(traj.meta.h));
    out.metrics
        .insert("final_distance".into(), json!((traj.last_state() - &x_bar).norm()));

    let mut reports = Vec::new();
    for mult in envelope_multipliers(&config.checks) {
        let tol = config
            .checks
            .iter()
            .find(|c| c.check == CheckType::Envelope && c.rate_multiplier == mult)
            .map_or(1e-6, |c| c.tolerance);
        reports.push((mult, check_lyapunov_decay_with(&trace, problem.mu, mult, tol)));
    }
    let base = &reports[0].1;
    out.fitted_rate = finite(base.fitted_rate);
    for req in &config.checks {
        out.checks.push(match req.check {
            CheckType::Envelope => {
                let r = &reports.iter().find(|(m, _)| *m == req.rate_multiplier).expect("computed").1;
                let mut o = outcome(req, r.satisfied, r.max_violation, None);
                if !damping.ok {
                    o.satisfied = false;
                    o.note = Some("damping condition violated".into());
                }
                o
            }
            CheckType::DampingCondition => outcome(
                req,
                damping.ok,
                (-damping.omega_margin).max(-damping.rho_margin),
                None,
            ),
            _ => rate_outcome(req, out.fitted_rate, out.theoretical_rate),
        });
    }
    out.csv = Some(trajectory_csv(
        &traj,
        &[("energy", &trace.energy), ("envelope", &base.envelope.values)],
    )?);
    Ok(out)
}

fn run_ispds(config: &ScenarioConfig) -> Result<Outcome> {
    let s = &config.solver;
    let (t0, t_end, h) = flow_window(config);
    let inst = config.instance.saddle()?;
    let z0 = PDState::split(&Vector::from_vec(s.x0.clone().expect("filled by validation")), 1);
    let zdot0 = PDState::split(&Vector::from_vec(s.v0.clone().expect("filled by validation")), 1);
    let z_bar_vec = pd_equilibrium(&inst, &z0, s.tol)?.x_bar;
    let z_bar = PDState::split(&z_bar_vec, 1);
    let mu = inst.tilde_mu();
    let rho = inst.tilde_rho();
    let condition_ok = rho < ISPDS_RHO_LIMIT;
    let mut out = Outcome {
        equilibrium: Some(z_bar_vec.iter().copied().collect()),
        theoretical_rate: Some(mu.sqrt() / 4.0),
        ..Outcome::default()
    };
    if !condition_ok {
        out.warnings.push(format!("coupling condition violated: rho = {rho} >= {ISPDS_RHO_LIMIT}"));
    }
    let traj = integrate_ispds(&inst, &z0, &zdot0, t0, t_end, h)?;
    let (gaps, energy, sandwich) = pd_energy_series(&traj, &inst, &z_bar, mu)?;
    out.metrics.insert("sandwich_max_violation".into(), json!(finite(sandwich)));
    out.metrics.insert("steps".into(), json!(traj.len() - 1));
    out.metrics.insert("h".into(), json!(traj.meta.h));
    out.metrics
        .insert("final_distance".into(), json!((traj.last_state() - &z_bar_vec).norm()));

    let v0 = energy[0];
    let envelope: Vec<f64> = traj.times.iter().map(|t| v0 * (-(mu.sqrt() / 4.0) * (t - t0)).exp()).collect();
    let gap_series = TimeSeries {
        times: traj.times.clone(),
        values: gaps.clone(),
    };
    out.fitted_rate = finite(tail_rate(&gap_series, 1e3 * f64::EPSILON * v0.max(f64::MIN_POSITIVE)));
    for req in &config.checks {
        out.checks.push(match req.check {
            CheckType::Envelope if condition_ok => {
                let r = check_pd_decay_with(&traj, &inst, &z_bar, mu, req.rate_multiplier, req.tolerance)?;
                outcome(req, r.satisfied, r.envelope.max_violation.max(r.sandwich_max_violation), None)
            }
            CheckType::Envelope => outcome(req, false, f64::NAN, Some("coupling condition violated".into())),
            CheckType::DampingCondition => outcome(req, condition_ok, rho - ISPDS_RHO_LIMIT, None),
            _ => rate_outcome(req, out.fitted_rate, out.theoretical_rate),
        });
    }
    out.csv = Some(trajectory_csv(
        &traj,
        &[("gap", &gaps), ("energy", &energy), ("envelope", &envelope)],
    )?);
    Ok(out)
}

fn random_measure(n: usize, rng: &mut ChaCha8Rng) -> Result<Measure> {
    let w: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    Measure::normalized(w)
}

fn run_curvature(config: &ScenarioConfig) -> Result<Outcome> {
    let s = &config.solver;
    let space = config.instance.space()?;
    let table = tau_kappa_table(&space)?;
    let inv = invariant_measure(&space, s.tol)?;
    let kappa = table.kappa;
    let steps = s.steps.unwrap_or(DEFAULT_CURVATURE_STEPS);
    let start = table.pair.0;

    let mut w = Vec::with_capacity(steps + 1);
    for n in 0..=steps {
        w.push(space.w1(&nstep(&space, start, n)?, &inv.upsilon)?);
    }
    let times: Vec<f64> = (0..=steps).map(|n| n as f64).collect();
    let series = TimeSeries {
        times: times.clone(),
        values: w.clone(),
    };
    let fitted = tail_rate(&series, 1e3 * f64::EPSILON);
    let theoretical = (kappa > 0.0 && kappa < 1.0).then(|| -(1.0 - kappa).ln());
    let envelope_for = |mult: f64| -> Vec<f64> {
        times
            .iter()
            .map(|n| w[0] * (1.0 - kappa).max(0.0).powf(mult * n))
            .collect()
    };

    let mut out = Outcome {
        equilibrium: Some(inv.upsilon.weights().to_vec()),
        fitted_rate: finite(fitted),
        theoretical_rate: theoretical,
        ..Outcome::default()
    };
    out.metrics.insert("kappa".into(), json!(kappa));
    out.metrics.insert("tau_hat".into(), json!(table.tau_hat));
    out.metrics.insert("pair".into(), json!([table.pair.0, table.pair.1]));
    out.metrics.insert("identity_residual".into(), json!(table.identity_residual));
    out.metrics.insert("invariant_residual".into(), json!(inv.residual));
    out.metrics.insert("invariant_iterations".into(), json!(inv.iterations));
    if kappa <= 0.0 {
        out.warnings.push(format!("kappa = {kappa} is not positive; no contraction rate applies"));
    }

    for req in &config.checks {
        out.checks.push(match req.check {
            CheckType::Envelope => {
                let env = envelope_for(req.rate_multiplier);
                let worst = w.iter().zip(&env).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max);
                outcome(req, worst <= req.tolerance, worst, None)
            }
            CheckType::Contraction => {
                let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
                let samples = s.samples.unwrap_or(DEFAULT_CONTRACTION_SAMPLES);
                let mut worst = f64::NEG_INFINITY;
                for _ in 0..samples {
                    let a = random_measure(space.len(), &mut rng)?;
                    let b = random_measure(space.len(), &mut rng)?;
                    let c = verify_contraction_with(&space, &a, &b, kappa)?;
                    worst = worst.max(c.lhs - c.rhs);
                }
                outcome(req, worst <= req.tolerance, worst, None)
            }
            _ => rate_outcome(req, out.fitted_rate, out.theoretical_rate),
        });
    }

    let base = envelope_for(1.0);
    let mut csv = String::from("n,w1,envelope\n");
    for n in 0..=steps {
        csv.push_str(&format!("{n},{},{}\n", fmt_f64(w[n]), fmt_f64(base[n])));
    }
    out.csv = Some(csv);
    Ok(out)
}

fn error_kind(e: &Error) -> String {
    let dbg = format!("{e:?}");
    dbg.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error").to_string()
}

/// Run a validated scenario. Errors are captured in the report, never raised.
pub fn run_scenario(config: &ScenarioConfig) -> ScenarioRun {
    let started = Instant::now();
    let result = match config.kind {
        Kind::Equilibrium => run_equilibrium(config),
        Kind::Flow1 | Kind::Spds | Kind::W1 => run_first_order(config),
        Kind::Flow2 => run_flow2(config),
        Kind::Ispds => run_ispds(config),
        Kind::Curvature => run_curvature(config),
    };
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let mut report = Report {
        name: config.name.clone(),
        kind: config.kind,
        family: config.instance.family().into(),
        status: Status::Error,
        exit_code: 1,
        equilibrium: None,
        fitted_rate: None,
        theoretical_rate: None,
        bound_satisfied: None,
        max_violation: None,
        checks: Vec::new(),
        derived: config.derived.clone(),
        metrics: BTreeMap::new(),
        warnings: Vec::new(),
        error: None,
        runtime_seconds: 0.0,
        timestamp,
    };
    let csv = match result {
        Ok(out) => {
            let mut warnings = out.warnings;
            for c in out.checks.iter().filter(|c| !c.strict && !c.satisfied) {
                warnings.push(format!("non-strict {:?} check not satisfied", c.check));
            }
            let strict_ok = out.checks.iter().filter(|c| c.strict).all(|c| c.satisfied);
            report.status = if strict_ok { Status::Ok } else { Status::Violation };
            report.exit_code = if strict_ok { 0 } else { 2 };
            report.equilibrium = out.equilibrium;
            report.fitted_rate = out.fitted_rate;
            report.theoretical_rate = out.theoretical_rate;
            report.bound_satisfied = (!out.checks.is_empty()).then_some(strict_ok);
            report.max_violation = out
                .checks
                .iter()
                .filter_map(|c| c.max_violation)
                .reduce(f64::max);
            report.checks = out.checks;
            report.metrics = out.metrics;
            report.warnings = warnings;
            out.csv
        }
        Err(e) => {
            report.error = Some(ErrorReport {
                kind: error_kind(&e),
                message: e.to_string(),
            });
            None
        }
    };
    report.runtime_seconds = started.elapsed().as_secs_f64();
    ScenarioRun { report, csv }
}

/// Run and write the configured outputs; `csv_path`/`json_path` override the
/// config. Returns the exit status.
pub fn execute(config: &ScenarioConfig, csv_path: Option<&str>, json_path: Option<&str>) -> Result<ScenarioRun> {
    let run = run_scenario(config);
    if let (Some(path), Some(csv)) = (csv_path.or(config.outputs.csv_path.as_deref()), &run.csv) {
        std::fs::write(path, csv)?;
    }
    if let Some(path) = json_path.or(config.outputs.json_path.as_deref()) {
        std::fs::write(path, run.report.to_json_string() + "\n")?;
    }
    Ok(run)
}

/// Report with the wall-clock fields removed, for determinism comparisons.
pub fn comparable_report(report_json: &str) -> Result<Value> {
    let mut v: Value = serde_json::from_str(report_json)?;
    if let Value::Object(map) = &mut v {
        map.remove("timestamp");
        map.remove("runtime_seconds");
    }
    Ok(v)
}

/// Human-readable verdict lines for a report file.
pub fn summarize_report(report_json: &str) -> Result<String> {
    let v: Value = serde_json::from_str(report_json)?;
    let o = Obj::new(&v, "")?;
    let field = |k: &str| o.get(k).map_or("-".to_string(), |x| x.to_string());
    let mut lines = vec![format!(
        "{} [{}] status={} exit={}",
        o.get("name").and_then(Value::as_str).unwrap_or("(unnamed)"),
        o.get("kind").and_then(Value::as_str).unwrap_or("?"),
        o.get("status").and_then(Value::as_str).unwrap_or("?"),
        field("exit_code"),
    )];
    lines.push(format!(
        "  equilibrium={} fitted_rate={} theoretical_rate={}",
        field("equilibrium"),
        field("fitted_rate"),
        field("theoretical_rate")
    ));
    if let Some(checks) = o.get("checks").and_then(Value::as_array) {
        for c in checks {
            let verdict = if c.get("satisfied").and_then(Value::as_bool) == Some(true) { "PASS" } else { "FAIL" };
            lines.push(format!(
                "  {verdict} {} x{} tol={} max_violation={}",
                c.get("type").and_then(Value::as_str).unwrap_or("?"),
                c.get("rate_multiplier").map_or("-".into(), Value::to_string),
                c.get("tolerance").map_or("-".into(), Value::to_string),
                c.get("max_violation").map_or("-".into(), Value::to_string),
            ));
        }
    }
    if let Some(warnings) = o.get("warnings").and_then(Value::as_array) {
        for w in warnings {
            lines.push(format!("  warning: {}", w.as_str().unwrap_or("")));
        }
    }
    if let Some(err) = o.get("error").filter(|e| !e.is_null()) {
        lines.push(format!(
            "  error: {}",
            err.get("message").and_then(Value::as_str).unwrap_or("unknown")
        ));
    }
    Ok(lines.join("\n"))
}
