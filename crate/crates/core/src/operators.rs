//! Operator oracles for the closed-loop inclusion `0 ∈ A(x) + B_{m_x}(x)`.
//!
//! `A` is carried by its resolvent (with an optional single-valued forward
//! map), `B(x, ξ)` is a random field averaged against the decision-dependent
//! distribution, and [`UniformModulus`] holds the uniform-monotonicity
//! machinery used for the convergence envelopes.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::distmap::{expect_scalar, expect_vector, DecisionMap, Distribution, DEFAULT_QUAD_POINTS};
use crate::numerics::{adaptive_quad, invert_monotone, Vector};
use crate::{Error, Result};

pub type VecField = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
pub type Resolvent = Arc<dyn Fn(f64, &Vector) -> Vector + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&Vector) -> f64 + Send + Sync>;
pub type FieldFn = Arc<dyn Fn(&Vector, &Vector) -> Vector + Send + Sync>;
pub type FieldPotential = Arc<dyn Fn(&Vector, &Vector) -> f64 + Send + Sync>;

/// Maximal monotone operator `A`, accessed through `J_{λA} = (Id + λA)^{-1}`.
#[derive(Clone)]
pub struct MonotoneOracle {
    forward: Option<VecField>,
    resolvent: Resolvent,
    potential: Option<ScalarFn>,
    domain: Arc<dyn Fn(&Vector) -> bool + Send + Sync>,
    /// Strong-monotonicity modulus of `A` alone.
    pub mu_a: f64,
}

impl fmt::Debug for MonotoneOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MonotoneOracle")
            .field("smooth", &self.forward.is_some())
            .field("mu_a", &self.mu_a)
            .finish()
    }
}

impl MonotoneOracle {
    pub fn from_resolvent<R>(resolvent: R, mu_a: f64) -> Self
    where
        R: Fn(f64, &Vector) -> Vector + Send + Sync + 'static,
    {
        Self {
            forward: None,
            resolvent: Arc::new(resolvent),
            potential: None,
            domain: Arc::new(|_| true),
            mu_a,
        }
    }

    pub fn with_forward<F>(mut self, forward: F) -> Self
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        self.forward = Some(Arc::new(forward));
        self
    }

    pub fn with_potential<P>(mut self, potential: P) -> Self
    where
        P: Fn(&Vector) -> f64 + Send + Sync + 'static,
    {
        self.potential = Some(Arc::new(potential));
        self
    }

    pub fn with_domain<D>(mut self, domain: D) -> Self
    where
        D: Fn(&Vector) -> bool + Send + Sync + 'static,
    {
        self.domain = Arc::new(domain);
        self
    }

    /// `A = 0`: identity resolvent, zero potential.
    pub fn zero() -> Self {
        Self::from_resolvent(|_, v| v.clone(), 0.0)
            .with_forward(|x| Vector::zeros(x.len()))
            .with_potential(|_| 0.0)
    }

    /// `A(x) = M x` for a monotone matrix `M`; the resolvent is a linear solve.
    ///
    /// The potential `½ xᵀMx` is attached when `M` is symmetric.
    pub fn linear(m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        let sym = (&m - m.transpose()).norm() <= 1e-14 * (1.0 + m.norm());
        let mu_a = if sym {
            m.clone().symmetric_eigenvalues().min().max(0.0)
        } else {
            ((&m + m.transpose()) * 0.5).symmetric_eigenvalues().min().max(0.0)
        };
        let mf = m.clone();
        let mr = m.clone();
        let oracle = Self::from_resolvent(
            move |lambda, v| {
                let sys = DMatrix::<f64>::identity(n, n) + &mr * lambda;
                sys.lu().solve(v).unwrap_or_else(|| v.clone())
            },
            mu_a,
        )
        .with_forward(move |x| &mf * x);
        if sym {
            oracle.with_potential(move |x| 0.5 * x.dot(&(&m * x)))
        } else {
            oracle
        }
    }

    /// Normal cone of the nonnegative orthant; the resolvent is the projection.
    pub fn nonnegative_cone() -> Self {
        Self::from_resolvent(|_, v| v.map(|c| c.max(0.0)), 0.0)
            .with_domain(|x| x.iter().all(|c| *c >= 0.0))
            .with_potential(|x| if x.iter().all(|c| *c >= 0.0) { 0.0 } else { f64::INFINITY })
    }

    /// `A = ∇g` for a smooth convex `g` with `lipschitz`-continuous gradient.
    /// The resolvent solves `u + λ∇g(u) = v` by a contracting gradient scheme.
    pub fn gradient<G>(grad: G, lipschitz: f64, mu_a: f64) -> Self
    where
        G: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        let grad: VecField = Arc::new(grad);
        let g2 = Arc::clone(&grad);
        let mut oracle = Self::from_resolvent(
            move |lambda, v| {
                let step = 1.0 / (1.0 + lambda * lipschitz);
                let mut u = v.clone();
                for _ in 0..10_000 {
                    let r = &u - v + g2(&u) * lambda;
                    if r.norm() <= 1e-15 * (1.0 + v.norm()) {
                        break;
                    }
                    u -= r * step;
                }
                u
            },
            mu_a,
        );
        oracle.forward = Some(grad);
        oracle
    }

    pub fn is_smooth(&self) -> bool {
        self.forward.is_some()
    }

    pub fn forward(&self, x: &Vector) -> Result<Vector> {
        self.forward
            .as_ref()
            .map(|f| f(x))
            .ok_or(Error::ForwardUnavailable)
    }

    pub fn resolvent(&self, lambda: f64, v: &Vector) -> Vector {
        (self.resolvent)(lambda, v)
    }

    pub fn in_domain(&self, x: &Vector) -> bool {
        (self.domain)(x)
    }

    pub fn potential(&self, x: &Vector) -> Result<f64> {
        self.potential
            .as_ref()
            .map(|p| p(x))
            .ok_or(Error::PotentialUnavailable)
    }

    pub fn has_potential(&self) -> bool {
        self.potential.is_some()
    }

    /// Worst violation of `‖Jv − Jw‖² ≤ ⟨Jv − Jw, v − w⟩` over sample pairs.
    pub fn firm_nonexpansiveness_gap(&self, lambda: f64, pairs: &[(Vector, Vector)]) -> f64 {
        pairs
            .iter()
            .map(|(v, w)| {
                let d = self.resolvent(lambda, v) - self.resolvent(lambda, w);
                d.norm_squared() - d.dot(&(v - w))
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Worst `‖v − J_{λA}(v + λA v)‖` over samples; needs the forward map.
    pub fn resolvent_consistency_gap(&self, lambda: f64, samples: &[Vector]) -> Result<f64> {
        let mut worst = 0.0f64;
        for v in samples {
            let fwd = self.forward(v)?;
            worst = worst.max((v - self.resolvent(lambda, &(v + fwd * lambda))).norm());
        }
        Ok(worst)
    }
}

/// Random field `B(x, ξ)` with its declared constants.
#[derive(Clone)]
pub struct RandomField {
    eval: FieldFn,
    potential: Option<FieldPotential>,
    /// Lipschitz constant of `ξ ↦ B(x, ξ)`.
    pub beta: f64,
    /// Lipschitz constant of `x ↦ B_{m_x}(x)`.
    pub lipschitz_l: f64,
}

impl fmt::Debug for RandomField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RandomField")
            .field("beta", &self.beta)
            .field("lipschitz_l", &self.lipschitz_l)
            .finish()
    }
}

impl RandomField {
    pub fn new<B>(eval: B, beta: f64, lipschitz_l: f64) -> Self
    where
        B: Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static,
    {
        Self {
            eval: Arc::new(eval),
            potential: None,
            beta,
            lipschitz_l,
        }
    }

    /// Attach `f(x, ξ)` with `B = ∇_x f`.
    pub fn with_potential<P>(mut self, potential: P) -> Self
    where
        P: Fn(&Vector, &Vector) -> f64 + Send + Sync + 'static,
    {
        self.potential = Some(Arc::new(potential));
        self
    }

    /// `B(x, ξ) = mu·x − ξ`, the gradient of `f(x, ξ) = mu/2‖x‖² − ⟨ξ, x⟩`.
    pub fn affine(mu: f64, lipschitz_l: f64) -> Self {
        Self::new(move |x, xi| x * mu - xi, 1.0, lipschitz_l)
            .with_potential(move |x, xi| 0.5 * mu * x.norm_squared() - xi.dot(x))
    }

    pub fn zero() -> Self {
        Self::new(|x, _| Vector::zeros(x.len()), 0.0, 0.0).with_potential(|_, _| 0.0)
    }

    pub fn eval(&self, x: &Vector, xi: &Vector) -> Vector {
        (self.eval)(x, xi)
    }

    pub fn potential(&self, x: &Vector, xi: &Vector) -> Result<f64> {
        self.potential
            .as_ref()
            .map(|p| p(x, xi))
            .ok_or(Error::PotentialUnavailable)
    }

    pub fn has_potential(&self) -> bool {
        self.potential.is_some()
    }

    /// Largest observed `‖B(x,ξ) − B(x,ζ)‖ / ‖ξ − ζ‖`.
    pub fn observed_beta(&self, samples: &[(Vector, Vector, Vector)]) -> f64 {
        samples
            .iter()
            .filter(|(_, xi, zeta)| (xi - zeta).norm() > 0.0)
            .map(|(x, xi, zeta)| (self.eval(x, xi) - self.eval(x, zeta)).norm() / (xi - zeta).norm())
            .fold(0.0, f64::max)
    }
}

/// Modulus `φ` of uniform monotonicity with the reference level `a`.
#[derive(Clone)]
pub struct UniformModulus {
    phi: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub a_ref: f64,
}

impl fmt::Debug for UniformModulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UniformModulus").field("a_ref", &self.a_ref).finish()
    }
}

const THETA_TOL: f64 = 1e-13;
const THETA_INV_TOL: f64 = 1e-12;
const THETA_PROBES: usize = 64;

impl UniformModulus {
    pub fn new<P>(phi: P, a_ref: f64) -> Self
    where
        P: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            phi: Arc::new(phi),
            a_ref,
        }
    }

    /// `φ(t) = mu·t`.
    pub fn strong(mu: f64, a_ref: f64) -> Self {
        Self::new(move |t| mu * t, a_ref)
    }

    pub fn phi(&self, t: f64) -> f64 {
        (self.phi)(t)
    }

    /// `φ̃(t) = φ(t) − βτ·t`.
    pub fn phi_tilde(&self, beta_tau: f64, t: f64) -> f64 {
        self.phi(t) - beta_tau * t
    }

    /// Smallest observed `φ̃(t)` over the probes; positive when the gap
    /// condition holds there.
    pub fn min_gap(&self, beta_tau: f64, probes: &[f64]) -> f64 {
        probes
            .iter()
            .map(|t| self.phi_tilde(beta_tau, *t) / t)
            .fold(f64::INFINITY, f64::min)
    }

    /// `θ(z) = ∫_z^a ds / φ̃(s)`, integrated in `ln s`.
    pub fn theta(&self, beta_tau: f64, z: f64) -> Result<f64> {
        if !(z > 0.0) || z > self.a_ref {
            return Err(Error::InvalidHorizon(format!(
                "theta needs 0 < z <= a = {} (got {z})",
                self.a_ref
            )));
        }
        if z == self.a_ref {
            return Ok(0.0);
        }
        let (lo, hi) = (z.ln(), self.a_ref.ln());
        for k in 0..=THETA_PROBES {
            let s = (lo + (hi - lo) * k as f64 / THETA_PROBES as f64).exp();
            if !(self.phi_tilde(beta_tau, s) > 0.0) {
                return Err(Error::ModulusGapViolated(s));
            }
        }
        let integrand = |u: f64| {
            let s = u.exp();
            let gap = self.phi_tilde(beta_tau, s);
            if gap > 0.0 {
                s / gap
            } else {
                f64::NAN
            }
        };
        match adaptive_quad(integrand, lo, hi, THETA_TOL) {
            Err(Error::NonFiniteIntegrand) => Err(Error::ModulusGapViolated(z)),
            other => other,
        }
    }

    /// Inverse of `θ` at level `s ≥ 0`.
    pub fn theta_inv(&self, beta_tau: f64, s: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return Err(Error::InvalidHorizon(format!("theta^-1 needs s >= 0 (got {s})")));
        }
        if s == 0.0 {
            return Ok(self.a_ref);
        }
        let mut z_min = 0.5 * self.a_ref;
        let mut halvings = 0;
        while self.theta(beta_tau, z_min)? <= s {
            z_min *= 0.5;
            halvings += 1;
            if halvings > 1000 || z_min < f64::MIN_POSITIVE {
                return Err(Error::TargetUnreachable(s));
            }
        }
        let log_z = invert_monotone(
            |u| self.theta(beta_tau, u.exp().min(self.a_ref)).unwrap_or(f64::NAN),
            s,
            z_min.ln(),
            self.a_ref.ln(),
            THETA_INV_TOL,
        )?;
        Ok(log_z.exp())
    }
}

/// `0 ∈ A(x) + B_{m_x}(x)` with its declared constants.
#[derive(Clone, Debug)]
pub struct ClosedLoopProblem {
    pub a: MonotoneOracle,
    pub b: RandomField,
    pub map: DecisionMap,
    /// Strong-monotonicity modulus of `F_m = A + B_m` (0 when only a uniform
    /// modulus is known).
    pub mu: f64,
    pub modulus: Option<UniformModulus>,
    pub quad_points: usize,
    /// Optional hard cap on explicit step sizes (tighter than the default rule).
    pub step_cap: Option<f64>,
    /// Optional override of the inner forward-backward step `1/(L + μ)`.
    pub inner_step: Option<f64>,
    pub name: String,
}

impl ClosedLoopProblem {
    pub fn new(a: MonotoneOracle, b: RandomField, map: DecisionMap, mu: f64) -> Self {
        Self {
            a,
            b,
            map,
            mu,
            modulus: None,
            quad_points: DEFAULT_QUAD_POINTS,
            step_cap: None,
            inner_step: None,
            name: String::from("problem"),
        }
    }

    pub fn with_modulus(mut self, modulus: UniformModulus) -> Self {
        self.modulus = Some(modulus);
        self
    }

    pub fn with_quad_points(mut self, quad_points: usize) -> Self {
        self.quad_points = quad_points;
        self
    }

    pub fn with_inner_step(mut self, lambda: f64) -> Self {
        self.inner_step = Some(lambda);
        self
    }

    /// Step of the inner forward-backward solver.
    pub fn inner_step(&self) -> f64 {
        let scale = self.b.lipschitz_l + self.mu.max(0.0);
        self.inner_step
            .unwrap_or(if scale > 0.0 { 1.0 / scale } else { 1.0 })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn beta_tau(&self) -> f64 {
        self.b.beta * self.map.tau
    }

    /// `ρ = βτ/μ`; infinite when no strong modulus is declared.
    pub fn rho(&self) -> f64 {
        if self.mu > 0.0 {
            self.beta_tau() / self.mu
        } else {
            f64::INFINITY
        }
    }

    /// Largest admissible explicit step `1 / (2(L + βτ))`, or the cap if tighter.
    pub fn max_step(&self) -> f64 {
        let h = 0.5 / (self.b.lipschitz_l + self.beta_tau());
        self.step_cap.map_or(h, |c| c.min(h))
    }

    /// `B_m(x) = E_{ξ∼m} B(x, ξ)`.
    pub fn b_m(&self, m: &Distribution, x: &Vector) -> Result<Vector> {
        expect_vector(m, |xi| self.b.eval(x, xi), self.quad_points)
    }

    /// `F_{m_x}(x) = A(x) + B_{m_x}(x)` where `A` is single-valued.
    pub fn closed_loop_field(&self, x: &Vector) -> Result<Vector> {
        Ok(self.a.forward(x)? + self.b_m(&self.map.kernel(x), x)?)
    }

    /// `F_{m_x̄}(x) = A(x) + B_{m_x̄}(x)`, the operator frozen at `x̄`.
    pub fn frozen_field(&self, x_bar: &Vector, x: &Vector) -> Result<Vector> {
        Ok(self.a.forward(x)? + self.b_m(&self.map.kernel(x_bar), x)?)
    }

    /// Gap `e_x̄(x) = B_{m_x}(x) − B_{m_x̄}(x)`.
    pub fn gap_e(&self, x_bar: &Vector, x: &Vector) -> Result<Vector> {
        if x == x_bar {
            return Ok(Vector::zeros(x.len()));
        }
        Ok(self.b_m(&self.map.kernel(x), x)? - self.b_m(&self.map.kernel(x_bar), x)?)
    }

    /// Largest `‖e(x) − e(z)‖ / ‖x − z‖` over probes; the gap is
    /// `(2L + βτ)`-Lipschitz.
    pub fn verify_gap_lipschitz(&self, x_bar: &Vector, probes: &[(Vector, Vector)]) -> Result<f64> {
        if probes.is_empty() {
            return Err(Error::NoProbes);
        }
        let mut worst = 0.0f64;
        for (x, z) in probes {
            let d = (x - z).norm();
            if d == 0.0 {
                return Err(Error::SamePoint);
            }
            worst = worst.max((self.gap_e(x_bar, x)? - self.gap_e(x_bar, z)?).norm() / d);
        }
        Ok(worst)
    }

    pub fn gap_lipschitz_bound(&self) -> f64 {
        2.0 * self.b.lipschitz_l + self.beta_tau()
    }

    /// Smallest observed `⟨F_m(x) − F_m(y), x − y⟩ / ‖x − y‖²` at fixed `m`.
    pub fn observed_monotonicity(&self, m: &Distribution, pairs: &[(Vector, Vector)]) -> Result<f64> {
        let mut worst = f64::INFINITY;
        for (x, y) in pairs {
            let d = x - y;
            let n2 = d.norm_squared();
            if n2 == 0.0 {
                continue;
            }
            let fx = self.a.forward(x)? + self.b_m(m, x)?;
            let fy = self.a.forward(y)? + self.b_m(m, y)?;
            worst = worst.min((fx - fy).dot(&d) / n2);
        }
        Ok(worst)
    }

    /// `G_m(x) = g(x) + E_{ξ∼m} f(x, ξ)` from the attached potentials.
    pub fn potential(&self, m: &Distribution, x: &Vector) -> Result<f64> {
        if !self.b.has_potential() {
            return Err(Error::PotentialUnavailable);
        }
        let g = self.a.potential(x)?;
        let f = expect_scalar(
            m,
            |xi| self.b.potential(x, xi).unwrap_or(f64::NAN),
            self.quad_points,
        )?;
        Ok(g + f)
    }
}
