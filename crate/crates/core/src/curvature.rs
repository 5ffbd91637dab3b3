//! Finite metric random walk spaces: coarse Ricci curvature, convolution of
//! measures with the kernel, n-step kernels and invariant measures.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distmap::transport;
use crate::{Error, Result};

const NORMALIZATION_TOL: f64 = 1e-12;
const ROW_TOL: f64 = 1e-9;
const TRIANGLE_CHECK_MAX: usize = 50;

/// Probability vector on the points of a space.
#[derive(Debug, Clone, PartialEq)]
pub struct Measure {
    weights: Vec<f64>,
}

impl Measure {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidDistribution("empty measure".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidDistribution("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidDistribution(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { weights })
    }

    /// Rescale nonnegative weights to unit mass.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidDistribution("total mass must be positive".into()));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn dirac(n: usize, x: usize) -> Self {
        let mut weights = vec![0.0; n];
        weights[x] = 1.0;
        Self { weights }
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// `[X, d, m]` on finitely many points, kernel rows `m_x` stored row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomWalkSpace {
    points: Vec<String>,
    metric: DMatrix<f64>,
    kernel: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SpaceRepr {
    Full {
        #[serde(default)]
        points: Option<Vec<String>>,
        metric: Vec<Vec<f64>>,
        kernel: Vec<Vec<f64>>,
    },
    Graph {
        #[serde(default)]
        points: Option<Vec<String>>,
        edges: Vec<(usize, usize, f64)>,
        walk: String,
        alpha: f64,
    },
}

impl RandomWalkSpace {
    pub fn new(points: Vec<String>, metric: DMatrix<f64>, kernel: DMatrix<f64>) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(Error::InvalidSpace("at least two points are required".into()));
        }
        if metric.shape() != (n, n) || kernel.shape() != (n, n) {
            return Err(Error::InvalidSpace(format!(
                "metric {:?} and kernel {:?} must both be {n}x{n}",
                metric.shape(),
                kernel.shape()
            )));
        }
        let scale = metric.iter().fold(0.0f64, |a, d| a.max(d.abs()));
        let slack = 1e-12 * scale.max(1.0);
        for i in 0..n {
            if metric[(i, i)] != 0.0 {
                return Err(Error::InvalidSpace(format!("d({i},{i}) = {} is not zero", metric[(i, i)])));
            }
            for j in 0..n {
                let d = metric[(i, j)];
                if !d.is_finite() || (i != j && !(d > 0.0)) {
                    return Err(Error::InvalidSpace(format!("d({i},{j}) = {d} must be positive and finite")));
                }
                if (d - metric[(j, i)]).abs() > slack {
                    return Err(Error::InvalidSpace(format!("metric is not symmetric at ({i},{j})")));
                }
            }
        }
        if n <= TRIANGLE_CHECK_MAX {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        if metric[(i, k)] > metric[(i, j)] + metric[(j, k)] + slack {
                            return Err(Error::InvalidSpace(format!(
                                "triangle inequality fails for ({i},{j},{k})"
                            )));
                        }
                    }
                }
            }
        }
        let mut kernel = kernel;
        for i in 0..n {
            let mut row = kernel.row_mut(i);
            if row.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
                return Err(Error::InvalidSpace(format!("kernel row {i} has a negative entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidSpace(format!("kernel row {i} sums to {total}")));
            }
            row /= total;
        }
        Ok(Self { points, metric, kernel })
    }

    /// Lazy walk on a weighted undirected graph: stay with probability
    /// `alpha`, otherwise move to a uniformly chosen neighbour. The metric is
    /// the shortest-path distance.
    pub fn lazy_graph(n: usize, edges: &[(usize, usize, f64)], alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidSpace(format!("alpha = {alpha} must lie in [0, 1]")));
        }
        let mut dist = DMatrix::from_element(n, n, f64::INFINITY);
        let mut neighbours = vec![Vec::new(); n];
        for i in 0..n {
            dist[(i, i)] = 0.0;
        }
        for &(i, j, w) in edges {
            if i >= n || j >= n || i == j || !(w > 0.0) || !w.is_finite() {
                return Err(Error::InvalidSpace(format!("invalid edge ({i}, {j}, {w})")));
            }
            dist[(i, j)] = dist[(i, j)].min(w);
            dist[(j, i)] = dist[(j, i)].min(w);
            if !neighbours[i].contains(&j) {
                neighbours[i].push(j);
                neighbours[j].push(i);
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let via = dist[(i, k)] + dist[(k, j)];
                    if via < dist[(i, j)] {
                        dist[(i, j)] = via;
                    }
                }
            }
        }
        if dist.iter().any(|d| d.is_infinite()) {
            return Err(Error::InvalidSpace("graph is not connected".into()));
        }
        let mut kernel = DMatrix::zeros(n, n);
        for (i, nb) in neighbours.iter().enumerate() {
            if nb.is_empty() {
                return Err(Error::InvalidSpace(format!("vertex {i} is isolated")));
            }
            kernel[(i, i)] = alpha;
            for &j in nb {
                kernel[(i, j)] += (1.0 - alpha) / nb.len() as f64;
            }
        }
        Self::new((0..n).map(|i| i.to_string()).collect(), dist, kernel)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_value(serde_json::from_str(text)?)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        match serde_json::from_value::<SpaceRepr>(value)? {
            SpaceRepr::Full { points, metric, kernel } => {
                let n = metric.len();
                let to_matrix = |rows: &[Vec<f64>], what: &str| -> Result<DMatrix<f64>> {
                    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                        return Err(Error::InvalidSpace(format!("{what} must be {n}x{n}")));
                    }
                    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
                };
                let points = points.unwrap_or_else(|| (0..n).map(|i| i.to_string()).collect());
                Self::new(points, to_matrix(&metric, "metric")?, to_matrix(&kernel, "kernel")?)
            }
            SpaceRepr::Graph { points, edges, walk, alpha } => {
                if walk != "lazy" {
                    return Err(Error::InvalidSpace(format!("unknown walk {walk:?}; expected \"lazy\"")));
                }
                let n = points
                    .as_ref()
                    .map(|p| p.len())
                    .unwrap_or_else(|| edges.iter().map(|(i, j, _)| i.max(j) + 1).max().unwrap_or(0));
                let mut space = Self::lazy_graph(n, &edges, alpha)?;
                if let Some(p) = points {
                    space.points = p;
                }
                Ok(space)
            }
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
        };
        serde_json::to_value(SpaceRepr::Full {
            points: Some(self.points.clone()),
            metric: rows(&self.metric),
            kernel: rows(&self.kernel),
        })
        .expect("plain numbers serialize")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[String] {
        &self.points
    }

    pub fn metric(&self) -> &DMatrix<f64> {
        &self.metric
    }

    /// `m_x` as a measure.
    pub fn kernel_row(&self, x: usize) -> Measure {
        Measure {
            weights: self.kernel.row(x).iter().copied().collect(),
        }
    }

    /// Exact `W1` between two measures on the space.
    pub fn w1(&self, nu1: &Measure, nu2: &Measure) -> Result<f64> {
        for nu in [nu1, nu2] {
            if nu.len() != self.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.len(),
                    got: nu.len(),
                });
            }
        }
        if nu1 == nu2 {
            return Ok(0.0);
        }
        Ok(transport::solve(&nu1.weights, &nu2.weights, &self.metric)?.cost.max(0.0))
    }

    fn pair_ratio(&self, x: usize, y: usize) -> Result<f64> {
        Ok(self.w1(&self.kernel_row(x), &self.kernel_row(y))? / self.metric[(x, y)])
    }

    /// All unordered pairs with their ratio `W1(m_x, m_y)/d(x, y)`.
    fn pair_ratios(&self) -> Result<Vec<((usize, usize), f64)>> {
        let n = self.len();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        pairs
            .into_par_iter()
            .map(|(i, j)| self.pair_ratio(i, j).map(|r| ((i, j), r)))
            .collect()
    }
}

/// `κ(x, y) = 1 − W1(m_x, m_y)/d(x, y)`.
pub fn ricci_kappa(space: &RandomWalkSpace, x: usize, y: usize) -> Result<f64> {
    if x == y {
        return Err(Error::SamePoint);
    }
    if x >= space.len() || y >= space.len() {
        return Err(Error::InvalidSpace(format!("index out of range for {} points", space.len())));
    }
    Ok(1.0 - space.pair_ratio(x, y)?)
}

/// `κ = min_{x ≠ y} κ(x, y)`.
pub fn ricci_global(space: &RandomWalkSpace) -> Result<f64> {
    Ok(tau_kappa_table(space)?.kappa)
}

/// `(ν⋆m)_j = Σ_x ν_x·m_x(j)`.
pub fn convolve(nu: &Measure, space: &RandomWalkSpace) -> Result<Measure> {
    if nu.len() != space.len() {
        return Err(Error::DimensionMismatch {
            expected: space.len(),
            got: nu.len(),
        });
    }
    let n = space.len();
    let mut out = vec![0.0; n];
    for (x, w) in nu.weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o += w * space.kernel[(x, j)];
        }
    }
    Ok(Measure { weights: out })
}

/// `m_x^{*n}`; `δ_x` for `n = 0`.
pub fn nstep(space: &RandomWalkSpace, x: usize, n: usize) -> Result<Measure> {
    let mut nu = Measure::dirac(space.len(), x);
    for _ in 0..n {
        nu = convolve(&nu, space)?;
    }
    Ok(nu)
}

#[derive(Debug, Clone)]
pub struct InvariantMeasure {
    pub upsilon: Measure,
    pub iterations: usize,
    /// `W1(υ⋆m, υ)` at return.
    pub residual: f64,
    /// With `κ > 0`: whether `W1(ν_n, υ) ≤ (1−κ)^n W1(ν_0, υ)` held along the run.
    pub geometric_rate_ok: Option<bool>,
}

const POWER_BUDGET: usize = 100_000;

/// Power iteration of [`convolve`] from the uniform measure until
/// `W1(ν⋆m, ν) ≤ tol`.
pub fn invariant_measure(space: &RandomWalkSpace, tol: f64) -> Result<InvariantMeasure> {
    if !(tol > 0.0) {
        return Err(Error::constraint("tol", "must be positive"));
    }
    let mut history = vec![Measure::uniform(space.len())];
    let mut residual = f64::INFINITY;
    for it in 0..POWER_BUDGET {
        let cur = history.last().expect("non-empty");
        let next = convolve(cur, space)?;
        residual = space.w1(&next, cur)?;
        if residual <= tol {
            let kappa = ricci_global(space)?;
            let upsilon = next;
            let geometric_rate_ok = if kappa > 0.0 {
                // υ is within residual/κ of the true invariant measure.
                let slack = 2.0 * residual / kappa + 1e-12;
                let d0 = space.w1(&history[0], &upsilon)?;
                let mut ok = true;
                for (n, nu) in history.iter().enumerate() {
                    let dn = space.w1(nu, &upsilon)?;
                    ok &= dn <= (1.0 - kappa).powi(n as i32) * (d0 + slack) + slack;
                }
                Some(ok)
            } else {
                None
            };
            return Ok(InvariantMeasure {
                upsilon,
                iterations: it + 1,
                residual,
                geometric_rate_ok,
            });
        }
        if history.len() < 10_000 {
            history.push(next);
        } else {
            *history.last_mut().expect("non-empty") = next;
        }
    }
    Err(Error::NoConvergence {
        iterations: POWER_BUDGET,
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

/// `W1(ν1⋆m, ν2⋆m) ≤ (1 − κ)·W1(ν1, ν2)` with `κ = ricci_global`.
pub fn verify_contraction(space: &RandomWalkSpace, nu1: &Measure, nu2: &Measure) -> Result<ContractionCheck> {
    verify_contraction_with(space, nu1, nu2, ricci_global(space)?)
}

/// As [`verify_contraction`] with a precomputed curvature lower bound `kappa`.
pub fn verify_contraction_with(
    space: &RandomWalkSpace,
    nu1: &Measure,
    nu2: &Measure,
    kappa: f64,
) -> Result<ContractionCheck> {
    if nu1 == nu2 {
        return Err(Error::EqualMeasures);
    }
    let lhs = space.w1(&convolve(nu1, space)?, &convolve(nu2, space)?)?;
    let rhs = (1.0 - kappa) * space.w1(nu1, nu2)?;
    Ok(ContractionCheck {
        lhs,
        rhs,
        ok: lhs <= rhs + 1e-9,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TauKappaTable {
    /// `max W1(m_x, m_y)/d(x, y)`.
    pub tau_hat: f64,
    pub kappa: f64,
    /// A pair attaining both extremes.
    pub pair: (usize, usize),
    /// `|κ + τ̂ − 1|`.
    pub identity_residual: f64,
    /// `1 − τ̂ ≤ κ ≤ 1`.
    pub bounds_hold: bool,
}

pub fn tau_kappa_table(space: &RandomWalkSpace) -> Result<TauKappaTable> {
    let ratios = space.pair_ratios()?;
    let (pair, tau_hat) = ratios
        .iter()
        .copied()
        .fold(((0, 1), f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    let kappa = 1.0 - tau_hat;
    Ok(TauKappaTable {
        tau_hat,
        kappa,
        pair,
        identity_residual: (kappa + tau_hat - 1.0).abs(),
        bounds_hold: 1.0 - tau_hat <= kappa + 1e-15 && kappa <= 1.0,
    })
}
