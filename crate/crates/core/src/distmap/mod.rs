//! Probability distributions on `Xi ⊂ R^m`, exact W1 distances and
//! decision-dependent distribution maps `x ↦ m_x`.

pub mod transport;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::numerics::{adaptive_quad, gauss_hermite, is_finite, Vector};
use crate::{Error, Result};

/// Default number of Gauss-Hermite nodes for Gaussian expectations.
pub const DEFAULT_QUAD_POINTS: usize = 32;

const WEIGHT_TOL: f64 = 1e-12;
const RENORMALIZE_TOL: f64 = 1e-9;

/// A probability measure with a finite representation.
///
/// `Product` is the independent coupling of its factors; samples are the
/// concatenation of the factor samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionRepr", into = "DistributionRepr")]
pub enum Distribution {
    Finite { atoms: Vec<(Vector, f64)> },
    Gaussian1D { mean: f64, std: f64 },
    Dirac { point: Vector },
    Product(Vec<Distribution>),
}

impl Distribution {
    /// Weighted atoms; weights within `1e-9` of unit total are renormalized.
    pub fn finite(atoms: Vec<(Vector, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidDistribution("no atoms".into()));
        }
        let dim = atoms[0].0.len();
        if dim == 0 {
            return Err(Error::InvalidDistribution("zero-dimensional atom".into()));
        }
        for (p, w) in &atoms {
            if p.len() != dim {
                return Err(Error::InvalidDistribution(
                    "atoms have different dimensions".into(),
                ));
            }
            if !is_finite(p) || !w.is_finite() || *w < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "invalid atom weight {w} or non-finite point"
                )));
            }
        }
        let total: f64 = atoms.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > RENORMALIZE_TOL {
            return Err(Error::InvalidDistribution(format!(
                "weights sum to {total}, not 1"
            )));
        }
        let atoms = if (total - 1.0).abs() > WEIGHT_TOL {
            atoms.into_iter().map(|(p, w)| (p, w / total)).collect()
        } else {
            atoms
        };
        Ok(Distribution::Finite { atoms })
    }

    /// Atoms on the real line.
    pub fn finite_1d(points: &[f64], weights: &[f64]) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: weights.len(),
            });
        }
        Self::finite(
            points
                .iter()
                .zip(weights)
                .map(|(p, w)| (Vector::from_element(1, *p), *w))
                .collect(),
        )
    }

    pub fn gaussian(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0) || !std.is_finite() || !mean.is_finite() {
            return Err(Error::InvalidDistribution(format!(
                "Gaussian needs finite mean and std > 0 (got {mean}, {std})"
            )));
        }
        Ok(Distribution::Gaussian1D { mean, std })
    }

    pub fn dirac(point: Vector) -> Self {
        Distribution::Dirac { point }
    }

    pub fn dirac_1d(x: f64) -> Self {
        Distribution::Dirac {
            point: Vector::from_element(1, x),
        }
    }

    pub fn product(factors: Vec<Distribution>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidDistribution("empty product".into()));
        }
        Ok(Distribution::Product(factors))
    }

    /// Dimension of the sample space.
    pub fn dim(&self) -> usize {
        match self {
            Distribution::Finite { atoms } => atoms[0].0.len(),
            Distribution::Gaussian1D { .. } => 1,
            Distribution::Dirac { point } => point.len(),
            Distribution::Product(fs) => fs.iter().map(Distribution::dim).sum(),
        }
    }

    /// Atoms for finite and Dirac measures, `None` otherwise.
    pub fn atoms(&self) -> Option<Vec<(Vector, f64)>> {
        match self {
            Distribution::Finite { atoms } => Some(atoms.clone()),
            Distribution::Dirac { point } => Some(vec![(point.clone(), 1.0)]),
            _ => None,
        }
    }

    /// Quadrature atoms: exact for discrete measures, Gauss-Hermite for
    /// Gaussians, tensorised for products.
    pub fn quadrature_atoms(&self, quad_points: usize) -> Vec<(Vector, f64)> {
        match self {
            Distribution::Finite { atoms } => atoms.clone(),
            Distribution::Dirac { point } => vec![(point.clone(), 1.0)],
            Distribution::Gaussian1D { mean, std } => {
                let rule = gauss_hermite(quad_points.max(1));
                let norm = std::f64::consts::PI.sqrt();
                rule.0
                    .iter()
                    .zip(&rule.1)
                    .map(|(x, w)| {
                        (
                            Vector::from_element(1, mean + std::f64::consts::SQRT_2 * std * x),
                            w / norm,
                        )
                    })
                    .collect()
            }
            Distribution::Product(factors) => {
                let mut acc: Vec<(Vec<f64>, f64)> = vec![(Vec::new(), 1.0)];
                for f in factors {
                    let fa = f.quadrature_atoms(quad_points);
                    acc = acc
                        .iter()
                        .flat_map(|(p, w)| {
                            fa.iter().map(move |(q, v)| {
                                let mut pt = p.clone();
                                pt.extend(q.iter());
                                (pt, w * v)
                            })
                        })
                        .collect();
                }
                acc.into_iter()
                    .map(|(p, w)| (Vector::from_vec(p), w))
                    .collect()
            }
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distribution::Finite { atoms } => write!(f, "finite({} atoms)", atoms.len()),
            Distribution::Gaussian1D { mean, std } => write!(f, "N({mean}, {std}^2)"),
            Distribution::Dirac { point } => write!(f, "dirac({:?})", point.as_slice()),
            Distribution::Product(fs) => write!(f, "product({} factors)", fs.len()),
        }
    }
}

/// JSON wire form: `{"type":"finite","atoms":[[[..point..], weight], ...]}`,
/// `{"type":"gauss1d","mean":..,"std":..}`, `{"type":"dirac","point":[..]}`,
/// `{"type":"product","factors":[..]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum DistributionRepr {
    Finite { atoms: Vec<(Vec<f64>, f64)> },
    Gauss1d { mean: f64, std: f64 },
    Dirac { point: Vec<f64> },
    Product { factors: Vec<Distribution> },
}

impl TryFrom<DistributionRepr> for Distribution {
    type Error = Error;

    fn try_from(r: DistributionRepr) -> Result<Self> {
        match r {
            DistributionRepr::Finite { atoms } => Distribution::finite(
                atoms
                    .into_iter()
                    .map(|(p, w)| (Vector::from_vec(p), w))
                    .collect(),
            ),
            DistributionRepr::Gauss1d { mean, std } => Distribution::gaussian(mean, std),
            DistributionRepr::Dirac { point } => {
                if point.is_empty() || point.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidDistribution("invalid Dirac point".into()));
                }
                Ok(Distribution::dirac(Vector::from_vec(point)))
            }
            DistributionRepr::Product { factors } => Distribution::product(factors),
        }
    }
}

impl From<Distribution> for DistributionRepr {
    fn from(d: Distribution) -> Self {
        match d {
            Distribution::Finite { atoms } => DistributionRepr::Finite {
                atoms: atoms
                    .into_iter()
                    .map(|(p, w)| (p.as_slice().to_vec(), w))
                    .collect(),
            },
            Distribution::Gaussian1D { mean, std } => DistributionRepr::Gauss1d { mean, std },
            Distribution::Dirac { point } => DistributionRepr::Dirac {
                point: point.as_slice().to_vec(),
            },
            Distribution::Product(factors) => DistributionRepr::Product { factors },
        }
    }
}

/// Ground metric on `Xi`.
pub type Metric = dyn Fn(&Vector, &Vector) -> f64 + Send + Sync;

pub fn euclidean(a: &Vector, b: &Vector) -> f64 {
    (a - b).norm()
}

/// Exact Wasserstein-1 distance between `p` and `q` under `metric`.
///
/// Discrete pairs are solved as a transportation problem. Pairs involving a
/// Gaussian must be one-dimensional and use `|·|` through the CDF identity
/// `W1 = ∫ |F_p - F_q|`. Products are combined as `sqrt(Σ W1(p_i, q_i)^2)`,
/// which is exact for Dirac factors and an upper bound otherwise.
pub fn w1(p: &Distribution, q: &Distribution, metric: &Metric) -> Result<f64> {
    use Distribution::*;
    match (p, q) {
        (Product(ps), Product(qs)) => {
            if ps.len() != qs.len() {
                return Err(Error::IncompatibleVariants(
                    "products with different numbers of factors".into(),
                ));
            }
            let mut total = 0.0;
            for (a, b) in ps.iter().zip(qs) {
                total += w1(a, b, metric)?.powi(2);
            }
            Ok(total.sqrt())
        }
        (Product(_), _) | (_, Product(_)) => Err(Error::IncompatibleVariants(
            "product against non-product".into(),
        )),
        (Gaussian1D { mean: m1, std: s1 }, Gaussian1D { mean: m2, std: s2 }) if s1 == s2 => {
            Ok((m1 - m2).abs())
        }
        (Gaussian1D { .. }, _) | (_, Gaussian1D { .. }) => {
            if p.dim() != 1 || q.dim() != 1 {
                return Err(Error::IncompatibleVariants(
                    "Gaussian measures are only comparable on the real line".into(),
                ));
            }
            for d in [p, q] {
                if let Some(atoms) = d.atoms() {
                    check_metric(&atoms, metric)?;
                }
            }
            w1_line(p, q)
        }
        (Dirac { point: a }, Dirac { point: b }) => {
            check_dims(a.len(), b.len())?;
            check_metric(&[(a.clone(), 1.0), (b.clone(), 1.0)], metric)?;
            Ok(metric(a, b))
        }
        _ => {
            let pa = p.atoms().expect("discrete");
            let qa = q.atoms().expect("discrete");
            check_dims(p.dim(), q.dim())?;
            check_metric(&pa, metric)?;
            check_metric(&qa, metric)?;
            w1_discrete(&pa, &qa, metric)
        }
    }
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::IncompatibleVariants(format!(
            "sample spaces of dimension {a} and {b}"
        )));
    }
    Ok(())
}

fn check_metric(atoms: &[(Vector, f64)], metric: &Metric) -> Result<()> {
    for (p, _) in atoms {
        let d = metric(p, p);
        if d != 0.0 {
            return Err(Error::DegenerateMetric(d));
        }
    }
    Ok(())
}

/// Transportation-problem W1 between two weighted atom lists.
pub fn w1_discrete(p: &[(Vector, f64)], q: &[(Vector, f64)], metric: &Metric) -> Result<f64> {
    let cost = DMatrix::from_fn(p.len(), q.len(), |i, j| metric(&p[i].0, &q[j].0));
    let supply: Vec<f64> = p.iter().map(|a| a.1).collect();
    let demand: Vec<f64> = q.iter().map(|a| a.1).collect();
    Ok(transport::solve(&supply, &demand, &cost)?.cost.max(0.0))
}

/// Prepared one-dimensional CDF with `O(log n)` evaluation.
enum LineCdf {
    Steps { points: Vec<f64>, cumulative: Vec<f64> },
    Normal(Normal),
}

impl LineCdf {
    fn new(d: &Distribution) -> Self {
        match d {
            Distribution::Gaussian1D { mean, std } => {
                LineCdf::Normal(Normal::new(*mean, *std).expect("validated Gaussian"))
            }
            _ => {
                let mut atoms: Vec<(f64, f64)> = d
                    .atoms()
                    .expect("discrete")
                    .into_iter()
                    .map(|(p, w)| (p[0], w))
                    .collect();
                atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut acc = 0.0;
                let cumulative = atoms
                    .iter()
                    .map(|(_, w)| {
                        acc += w;
                        acc
                    })
                    .collect();
                LineCdf::Steps {
                    points: atoms.into_iter().map(|a| a.0).collect(),
                    cumulative,
                }
            }
        }
    }

    fn eval(&self, x: f64) -> f64 {
        match self {
            LineCdf::Normal(n) => n.cdf(x),
            LineCdf::Steps { points, cumulative } => {
                let k = points.partition_point(|p| *p <= x);
                if k == 0 {
                    0.0
                } else {
                    cumulative[k - 1]
                }
            }
        }
    }

    fn frozen(&self, x: f64) -> Option<f64> {
        match self {
            LineCdf::Normal(_) => None,
            LineCdf::Steps { .. } => Some(self.eval(x)),
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match self {
            LineCdf::Normal(_) => Vec::new(),
            LineCdf::Steps { points, .. } => points.clone(),
        }
    }

    fn support_hull(&self) -> (f64, f64) {
        match self {
            LineCdf::Normal(n) => {
                use statrs::statistics::Distribution as _;
                let (m, s) = (n.mean().unwrap(), n.std_dev().unwrap());
                (m - 12.0 * s, m + 12.0 * s)
            }
            LineCdf::Steps { points, .. } => (points[0], points[points.len() - 1]),
        }
    }
}

/// `∫ |F_p - F_q| dx` on the line, split at every atom.
fn w1_line(p: &Distribution, q: &Distribution) -> Result<f64> {
    let (fp, fq) = (LineCdf::new(p), LineCdf::new(q));
    let (lo_p, hi_p) = fp.support_hull();
    let (lo_q, hi_q) = fq.support_hull();
    let (lo, hi) = (lo_p.min(lo_q), hi_p.max(hi_q));
    let mut cuts = fp.breakpoints();
    cuts.extend(fq.breakpoints());
    cuts.push(lo);
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let pieces = (cuts.len() - 1).max(1);
    let tol = 1e-11 / pieces as f64;
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a <= 0.0 {
            continue;
        }
        // Step CDFs are constant on each open piece: freeze them at the midpoint.
        let mid = 0.5 * (a + b);
        let (sp, sq) = (fp.frozen(mid), fq.frozen(mid));
        let f = |x: f64| (sp.unwrap_or_else(|| fp.eval(x)) - sq.unwrap_or_else(|| fq.eval(x))).abs();
        total += adaptive_quad(f, a, b, tol.max(1e-15 * (b - a)))?;
    }
    Ok(total)
}

/// The family `x ↦ m_x` with declared W1-Lipschitz constant `tau`.
#[derive(Clone)]
pub struct DecisionMap {
    kernel: Arc<dyn Fn(&Vector) -> Distribution + Send + Sync>,
    pub tau: f64,
}

impl fmt::Debug for DecisionMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DecisionMap").field("tau", &self.tau).finish()
    }
}

impl DecisionMap {
    pub fn new<K>(kernel: K, tau: f64) -> Self
    where
        K: Fn(&Vector) -> Distribution + Send + Sync + 'static,
    {
        Self {
            kernel: Arc::new(kernel),
            tau,
        }
    }

    pub fn kernel(&self, x: &Vector) -> Distribution {
        (self.kernel)(x)
    }

    /// `m_x ≡ m`.
    pub fn constant(m: Distribution) -> Self {
        Self::new(move |_| m.clone(), 0.0)
    }

    /// `x ↦ δ_{slope·x + offset}`, `tau = |slope|`.
    pub fn dirac_affine(slope: f64, offset: Vector) -> Self {
        Self::new(move |x| Distribution::dirac(x * slope + &offset), slope.abs())
    }

    /// `x ↦ N(slope·x + offset, std²)` for scalar `x`, `tau = |slope|`.
    pub fn gaussian_affine(slope: f64, offset: f64, std: f64) -> Result<Self> {
        Distribution::gaussian(offset, std)?;
        Ok(Self::new(
            move |x| Distribution::Gaussian1D {
                mean: slope * x[0] + offset,
                std,
            },
            slope.abs(),
        ))
    }

    /// `(x, y) ↦ m^p_x ⊗ m^d_y` on the concatenated state, split after
    /// `primal_dim` coordinates.
    pub fn product(primal: DecisionMap, dual: DecisionMap, primal_dim: usize, tau: f64) -> Self {
        Self::new(
            move |z| {
                let x = z.rows(0, primal_dim).into_owned();
                let y = z.rows(primal_dim, z.len() - primal_dim).into_owned();
                Distribution::Product(vec![primal.kernel(&x), dual.kernel(&y)])
            },
            tau,
        )
    }
}

/// Largest observed ratio `W1(m_x, m_y) / ‖x - y‖` over the probe pairs.
pub fn estimate_tau(map: &DecisionMap, probes: &[(Vector, Vector)], metric: &Metric) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::NoProbes);
    }
    let mut best = 0.0f64;
    for (x, y) in probes {
        let d = (x - y).norm();
        if d == 0.0 {
            return Err(Error::SamePoint);
        }
        best = best.max(w1(&map.kernel(x), &map.kernel(y), metric)? / d);
    }
    Ok(best)
}

/// `E_{ξ∼p} h(ξ)`, exact for discrete measures and by Gauss-Hermite otherwise.
pub fn expect_vector<H>(p: &Distribution, h: H, quad_points: usize) -> Result<Vector>
where
    H: Fn(&Vector) -> Vector,
{
    let mut acc: Option<Vector> = None;
    for (xi, w) in p.quadrature_atoms(quad_points) {
        let v = h(&xi);
        if !is_finite(&v) {
            return Err(Error::NonFiniteIntegrand);
        }
        acc = Some(match acc {
            None => v * w,
            Some(a) => a + v * w,
        });
    }
    acc.ok_or(Error::NonFiniteIntegrand)
}

pub fn expect_scalar<H>(p: &Distribution, h: H, quad_points: usize) -> Result<f64>
where
    H: Fn(&Vector) -> f64,
{
    Ok(expect_vector(p, |xi| Vector::from_element(1, h(xi)), quad_points)?[0])
}

/// Seeded Monte Carlo estimate of `E h(ξ)` for integrands where quadrature is
/// not appropriate.
pub fn expect_monte_carlo<H>(p: &Distribution, h: H, samples: usize, seed: u64) -> Result<Vector>
where
    H: Fn(&Vector) -> Vector,
{
    if samples == 0 {
        return Err(Error::NonFiniteIntegrand);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc: Option<Vector> = None;
    for _ in 0..samples {
        let xi = sample(p, &mut rng)?;
        let v = h(&xi);
        if !is_finite(&v) {
            return Err(Error::NonFiniteIntegrand);
        }
        acc = Some(match acc {
            None => v,
            Some(a) => a + v,
        });
    }
    Ok(acc.expect("samples > 0") / samples as f64)
}

fn sample(p: &Distribution, rng: &mut ChaCha8Rng) -> Result<Vector> {
    Ok(match p {
        Distribution::Dirac { point } => point.clone(),
        Distribution::Finite { atoms } => {
            let idx = WeightedIndex::new(atoms.iter().map(|a| a.1))
                .map_err(|e| Error::InvalidDistribution(e.to_string()))?;
            atoms[idx.sample(rng)].0.clone()
        }
        Distribution::Gaussian1D { mean, std } => {
            let n = rand_distr::Normal::new(*mean, *std)
                .map_err(|e| Error::InvalidDistribution(e.to_string()))?;
            Vector::from_element(1, n.sample(rng))
        }
        Distribution::Product(fs) => {
            let mut parts = Vec::new();
            for f in fs {
                parts.extend(sample(f, rng)?.iter());
            }
            Vector::from_vec(parts)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    fn line(x: f64) -> Vector {
        dvector![x]
    }

    #[test]
    fn w1_examples() {
        let d0 = Distribution::dirac_1d(0.0);
        let d1 = Distribution::dirac_1d(1.0);
        assert_eq!(w1(&d0, &d1, &euclidean).unwrap(), 1.0);

        let p = Distribution::finite_1d(&[0.0, 1.0, 3.0], &[0.2, 0.5, 0.3]).unwrap();
        assert_abs_diff_eq!(w1(&p, &p, &euclidean).unwrap(), 0.0, epsilon = 1e-15);

        let n0 = Distribution::gaussian(0.0, 1.0).unwrap();
        let n3 = Distribution::gaussian(3.0, 1.0).unwrap();
        assert_abs_diff_eq!(w1(&n0, &n3, &euclidean).unwrap(), 3.0, epsilon = 1e-12);

        let half = Distribution::finite_1d(&[0.0, 1.0], &[0.5, 0.5]).unwrap();
        let mid = Distribution::dirac_1d(0.5);
        assert_abs_diff_eq!(w1(&half, &mid, &euclidean).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn gaussian_quadrature_path_matches_shift() {
        // Unequal std forces the CDF integral; against a Dirac at the mean
        // the distance is the mean absolute deviation sigma*sqrt(2/pi).
        let n = Distribution::gaussian(1.0, 2.0).unwrap();
        let d = Distribution::dirac_1d(1.0);
        let expected = 2.0 * (2.0 / std::f64::consts::PI).sqrt();
        assert_abs_diff_eq!(w1(&n, &d, &euclidean).unwrap(), expected, epsilon = 1e-9);
        assert_abs_diff_eq!(w1(&d, &n, &euclidean).unwrap(), expected, epsilon = 1e-9);
    }

    #[test]
    fn gaussian_pair_with_different_std() {
        // Quantile gap for N(0,1) vs N(0,2) is |u| z_p, integral is E|Z| = sqrt(2/pi).
        let a = Distribution::gaussian(0.0, 1.0).unwrap();
        let b = Distribution::gaussian(0.0, 2.0).unwrap();
        let expected = (2.0 / std::f64::consts::PI).sqrt();
        assert_abs_diff_eq!(w1(&a, &b, &euclidean).unwrap(), expected, epsilon = 1e-9);
    }

    #[test]
    fn incompatible_and_degenerate() {
        let n = Distribution::gaussian(0.0, 1.0).unwrap();
        let d2 = Distribution::dirac(dvector![0.0, 1.0]);
        assert!(matches!(
            w1(&n, &d2, &euclidean),
            Err(Error::IncompatibleVariants(_))
        ));
        let bad = |_: &Vector, _: &Vector| 1.0;
        let d = Distribution::dirac_1d(0.0);
        assert!(matches!(w1(&d, &d, &bad), Err(Error::DegenerateMetric(_))));
    }

    #[test]
    fn weights_renormalize_or_fail() {
        let ok = Distribution::finite_1d(&[0.0, 1.0], &[0.5, 0.5 + 5e-10]).unwrap();
        let Distribution::Finite { atoms } = ok else { unreachable!() };
        assert_abs_diff_eq!(atoms[0].1 + atoms[1].1, 1.0, epsilon = 1e-15);
        assert!(Distribution::finite_1d(&[0.0, 1.0], &[0.5, 0.6]).is_err());
        assert!(Distribution::finite_1d(&[0.0, 1.0], &[1.5, -0.5]).is_err());
        assert!(Distribution::gaussian(0.0, 0.0).is_err());
    }

    #[test]
    fn json_wire_format() {
        let d = Distribution::finite(vec![(dvector![0.0, 1.0], 0.25), (dvector![2.0, 3.0], 0.75)]).unwrap();
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(s, r#"{"type":"finite","atoms":[[[0.0,1.0],0.25],[[2.0,3.0],0.75]]}"#);
        let g: Distribution = serde_json::from_str(r#"{"type":"gauss1d","mean":1.0,"std":2.0}"#).unwrap();
        assert_eq!(g, Distribution::Gaussian1D { mean: 1.0, std: 2.0 });
        let p: Distribution = serde_json::from_str(r#"{"type":"dirac","point":[0.5]}"#).unwrap();
        assert_eq!(p, Distribution::dirac_1d(0.5));
        assert!(serde_json::from_str::<Distribution>(r#"{"type":"gauss1d","mean":1.0,"std":-1.0}"#).is_err());
        let back: Distribution = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn estimate_tau_examples() {
        let probes: Vec<(Vector, Vector)> = vec![(line(0.0), line(1.0)), (line(-2.0), line(3.5)), (line(0.1), line(0.2))];
        let c = DecisionMap::constant(Distribution::dirac_1d(1.0));
        assert_eq!(estimate_tau(&c, &probes, &euclidean).unwrap(), 0.0);
        let d = DecisionMap::dirac_affine(0.5, line(0.0));
        assert_abs_diff_eq!(estimate_tau(&d, &probes, &euclidean).unwrap(), 0.5, epsilon = 1e-12);
        let g = DecisionMap::gaussian_affine(0.2, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(estimate_tau(&g, &probes, &euclidean).unwrap(), 0.2, epsilon = 1e-12);
        assert!(matches!(estimate_tau(&d, &[], &euclidean), Err(Error::NoProbes)));
    }

    #[test]
    fn dirac_scaling_tau_is_exact() {
        for c in [-3.0, -0.7, 0.0, 0.25, 2.0] {
            let map = DecisionMap::dirac_affine(c, dvector![0.0, 0.0]);
            let probes = vec![(dvector![0.0, 1.0], dvector![2.0, -1.0]), (dvector![1.0, 1.0], dvector![1.5, 0.0])];
            assert_abs_diff_eq!(estimate_tau(&map, &probes, &euclidean).unwrap(), c.abs(), epsilon = 1e-14);
        }
    }

    #[test]
    fn expectation_examples() {
        let id = |x: &Vector| x.clone();
        assert_eq!(expect_vector(&Distribution::dirac_1d(2.0), id, 8).unwrap()[0], 2.0);
        let two = Distribution::finite_1d(&[0.0, 4.0], &[0.5, 0.5]).unwrap();
        assert_eq!(expect_vector(&two, id, 8).unwrap()[0], 2.0);
        let n = Distribution::gaussian(1.0, 2.0).unwrap();
        for q in [2, 3, 32] {
            let m2 = expect_scalar(&n, |x| x[0] * x[0], q).unwrap();
            assert_abs_diff_eq!(m2, 5.0, epsilon = 1e-12);
        }
        let bad = expect_vector(&two, |_| dvector![f64::INFINITY], 8);
        assert!(matches!(bad, Err(Error::NonFiniteIntegrand)));
    }

    #[test]
    fn product_expectation_and_w1() {
        let p = Distribution::product(vec![
            Distribution::finite_1d(&[0.0, 2.0], &[0.5, 0.5]).unwrap(),
            Distribution::gaussian(3.0, 1.0).unwrap(),
        ])
        .unwrap();
        let m = expect_vector(&p, |z| z.clone(), 8).unwrap();
        assert_abs_diff_eq!(m[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m[1], 3.0, epsilon = 1e-12);
        let a = Distribution::product(vec![Distribution::dirac_1d(0.0), Distribution::dirac_1d(0.0)]).unwrap();
        let b = Distribution::product(vec![Distribution::dirac_1d(3.0), Distribution::dirac_1d(4.0)]).unwrap();
        assert_abs_diff_eq!(w1(&a, &b, &euclidean).unwrap(), 5.0, epsilon = 1e-14);
    }

    #[test]
    fn monte_carlo_is_seeded() {
        let n = Distribution::gaussian(1.0, 0.5).unwrap();
        let a = expect_monte_carlo(&n, |x| x.clone(), 20_000, 7).unwrap();
        let b = expect_monte_carlo(&n, |x| x.clone(), 20_000, 7).unwrap();
        assert_eq!(a, b);
        assert_abs_diff_eq!(a[0], 1.0, epsilon = 0.02);
    }
}
