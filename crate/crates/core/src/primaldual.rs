//! Saddle points of `L(x, y) = f_{m^p}(x) + g(x) + ⟨y, Kx⟩ − h(y) − r_{m^d}(y)`
//! with decision-dependent primal and dual distributions.
//!
//! The instance is lifted to a [`ClosedLoopProblem`] on the product space:
//! `A = diag(∂g, ∂h)` keeps its resolvent, while the skew block
//! `[[0, Kᵀ], [−K, 0]]` is folded into the random field and handled forward.

use nalgebra::{dvector, DMatrix};

use crate::distmap::{expect_scalar, DecisionMap, Distribution, DEFAULT_QUAD_POINTS};
use crate::equilibrium::{repeated_minimization, EquilibriumReport};
use crate::flow1::{integrate_smi_with, uniform_grid, SmiOptions, DEFAULT_BOUND_TOL};
use crate::numerics::{is_finite, rk4_step, TimeSeries, Vector};
use crate::operators::{ClosedLoopProblem, MonotoneOracle, RandomField};
use crate::trajectory::{BoundReport, Trajectory, TrajectoryMeta};
use crate::{Error, Result};

/// Largest `ρ̃` for which the inertial Lagrangian-gap envelope is proved.
pub const ISPDS_RHO_LIMIT: f64 = std::f64::consts::SQRT_2 / 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PDState {
    pub x: Vector,
    pub y: Vector,
}

impl PDState {
    pub fn new(x: Vector, y: Vector) -> Self {
        Self { x, y }
    }

    pub fn scalar(x: f64, y: f64) -> Self {
        Self::new(dvector![x], dvector![y])
    }

    pub fn stacked(&self) -> Vector {
        Vector::from_iterator(self.x.len() + self.y.len(), self.x.iter().chain(self.y.iter()).copied())
    }

    pub fn split(z: &Vector, primal_dim: usize) -> Self {
        Self {
            x: z.rows(0, primal_dim).into_owned(),
            y: z.rows(primal_dim, z.len() - primal_dim).into_owned(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SaddleInstance {
    /// Gradient field `∇_x f(x, ξ)` with its potential `f`.
    pub f_field: RandomField,
    /// Gradient field `∇_y r(y, ζ)` with its potential `r`.
    pub r_field: RandomField,
    pub g: MonotoneOracle,
    pub h: MonotoneOracle,
    /// Coupling `K`, shape `(dual_dim, primal_dim)`.
    pub k: DMatrix<f64>,
    pub map_p: DecisionMap,
    pub map_d: DecisionMap,
    pub mu_p: f64,
    pub mu_d: f64,
    /// Sensitivity of `(x, y) ↦ m^p_x ⊗ m^d_y`.
    pub tau: f64,
    pub quad_points: usize,
    pub name: String,
}

impl SaddleInstance {
    /// Scalar instance `f = μ_p/2·x² − ξx`, `r = μ_d/2·y² − ζy` with
    /// `ξ ∼ δ_{ε_p x + θ_p}`, `ζ ∼ δ_{ε_d y + θ_d}` and `g = h = 0`.
    pub fn scalar_affine(mu_p: f64, mu_d: f64, eps_p: f64, theta_p: f64, eps_d: f64, theta_d: f64, k: f64) -> Self {
        Self {
            f_field: RandomField::affine(mu_p, mu_p),
            r_field: RandomField::affine(mu_d, mu_d),
            g: MonotoneOracle::zero(),
            h: MonotoneOracle::zero(),
            k: DMatrix::from_element(1, 1, k),
            map_p: DecisionMap::dirac_affine(eps_p, dvector![theta_p]),
            map_d: DecisionMap::dirac_affine(eps_d, dvector![theta_d]),
            mu_p,
            mu_d,
            tau: eps_p.abs().max(eps_d.abs()),
            quad_points: DEFAULT_QUAD_POINTS,
            name: "scalar_saddle".into(),
        }
    }

    pub fn primal_dim(&self) -> usize {
        self.k.ncols()
    }

    pub fn dual_dim(&self) -> usize {
        self.k.nrows()
    }

    pub fn tilde_mu(&self) -> f64 {
        self.mu_p.min(self.mu_d)
    }

    pub fn tilde_beta(&self) -> f64 {
        self.f_field.beta.max(self.r_field.beta)
    }

    pub fn tilde_l(&self) -> f64 {
        self.f_field.lipschitz_l.max(self.r_field.lipschitz_l)
    }

    /// `ρ̃ = τβ̃/μ̃`.
    pub fn tilde_rho(&self) -> f64 {
        self.tau * self.tilde_beta() / self.tilde_mu()
    }

    pub fn k_norm(&self) -> f64 {
        if self.k.is_empty() {
            return 0.0;
        }
        self.k.clone().singular_values().max()
    }

    /// Lipschitz constant of the smooth part `L + B` on the product space.
    pub fn lipschitz_total(&self) -> f64 {
        self.tilde_l() + self.k_norm()
    }

    /// `x ↦ m^p_x ⊗ m^d_y` on the stacked state.
    pub fn product_map(&self) -> DecisionMap {
        DecisionMap::product(self.map_p.clone(), self.map_d.clone(), self.primal_dim(), self.tau)
    }

    /// The instance as a closed-loop problem on `H × K`.
    ///
    /// Both the inner step and the explicit step cap are `μ̃/(L̃ + ‖K‖)²`,
    /// the forward-backward contraction range for the skew-coupled field.
    pub fn product_problem(&self) -> ClosedLoopProblem {
        let n = self.primal_dim();
        let m = self.dual_dim();
        let split = move |z: &Vector| (z.rows(0, n).into_owned(), z.rows(n, m).into_owned());
        let join = move |a: Vector, b: Vector| Vector::from_iterator(n + m, a.iter().chain(b.iter()).copied());

        let (g, h) = (self.g.clone(), self.h.clone());
        let (gd, hd) = (self.g.clone(), self.h.clone());
        let mut a = MonotoneOracle::from_resolvent(
            move |lambda, v| {
                let (x, y) = split(v);
                join(g.resolvent(lambda, &x), h.resolvent(lambda, &y))
            },
            self.g.mu_a.min(self.h.mu_a),
        )
        .with_domain(move |z| {
            let (x, y) = split(z);
            gd.in_domain(&x) && hd.in_domain(&y)
        });
        if self.g.is_smooth() && self.h.is_smooth() {
            let (g, h) = (self.g.clone(), self.h.clone());
            a = a.with_forward(move |z| {
                let (x, y) = split(z);
                match (g.forward(&x), h.forward(&y)) {
                    (Ok(gx), Ok(hy)) => join(gx, hy),
                    _ => Vector::from_element(n + m, f64::NAN),
                }
            });
        }

        let xi_dim = self.map_p.kernel(&Vector::zeros(n)).dim();
        let (f, r, k) = (self.f_field.clone(), self.r_field.clone(), self.k.clone());
        let b = RandomField::new(
            move |z, w| {
                let (x, y) = split(z);
                let xi = w.rows(0, xi_dim).into_owned();
                let zeta = w.rows(xi_dim, w.len() - xi_dim).into_owned();
                join(f.eval(&x, &xi) + k.transpose() * &y, r.eval(&y, &zeta) - &k * &x)
            },
            self.tilde_beta(),
            self.lipschitz_total(),
        );
        let lip = self.lipschitz_total();
        let step = self.tilde_mu() / (lip * lip);
        let mut problem = ClosedLoopProblem::new(a, b, self.product_map(), self.tilde_mu())
            .with_quad_points(self.quad_points)
            .with_inner_step(step)
            .with_name(self.name.clone());
        problem.step_cap = Some(step);
        problem
    }

    /// `L_{m^p, m^d}(x, y)` from the attached potentials.
    pub fn lagrangian(&self, m_p: &Distribution, m_d: &Distribution, z: &PDState) -> Result<f64> {
        let f = expect_scalar(
            m_p,
            |xi| self.f_field.potential(&z.x, xi).unwrap_or(f64::NAN),
            self.quad_points,
        )?;
        let r = expect_scalar(
            m_d,
            |zeta| self.r_field.potential(&z.y, zeta).unwrap_or(f64::NAN),
            self.quad_points,
        )?;
        if !f.is_finite() || !r.is_finite() {
            return Err(Error::PotentialUnavailable);
        }
        let g = self.g.potential(&z.x)?;
        let h = self.h.potential(&z.y)?;
        Ok(f + g + z.y.dot(&(&self.k * &z.x)) - h - r)
    }
}

/// `T = A + L + B` at `z` with the kernels `m_p`, `m_d` held fixed.
pub fn pd_operator_t(instance: &SaddleInstance, m_p: &Distribution, m_d: &Distribution, z: &PDState) -> Result<PDState> {
    let fx = instance.f_field.clone();
    let bx = crate::distmap::expect_vector(m_p, |xi| fx.eval(&z.x, xi), instance.quad_points)?;
    let ry = crate::distmap::expect_vector(m_d, |zeta| instance.r_field.eval(&z.y, zeta), instance.quad_points)?;
    let gx = instance.g.forward(&z.x)?;
    let hy = instance.h.forward(&z.y)?;
    Ok(PDState {
        x: bx + gx + instance.k.transpose() * &z.y,
        y: ry + hy - &instance.k * &z.x,
    })
}

/// `⟨L z, z⟩` for the skew block; zero up to rounding.
pub fn skew_pairing(instance: &SaddleInstance, z: &PDState) -> f64 {
    let lx = instance.k.transpose() * &z.y;
    let ly = -(&instance.k * &z.x);
    lx.dot(&z.x) + ly.dot(&z.y)
}

/// Picard iteration of `S(x, y) = zer(T_{m^p_x, m^d_y})` from `z0`.
pub fn pd_equilibrium(instance: &SaddleInstance, z0: &PDState, tol: f64) -> Result<EquilibriumReport> {
    let rho = instance.tilde_rho();
    if !(rho < 1.0) {
        return Err(Error::ConditionViolated { rho, limit: 1.0 });
    }
    repeated_minimization(&instance.product_problem(), &z0.stacked(), tol, 10_000)
}

/// First-order flow `Ż + T_{m_Z}(Z) ∋ 0` by forward-backward steps on the
/// product space.
pub fn integrate_spds(instance: &SaddleInstance, z0: &PDState, t0: f64, t_end: f64, h: f64) -> Result<Trajectory> {
    integrate_spds_with(instance, z0, t0, t_end, h, &SmiOptions::default())
}

pub fn integrate_spds_with(
    instance: &SaddleInstance,
    z0: &PDState,
    t0: f64,
    t_end: f64,
    h: f64,
    options: &SmiOptions,
) -> Result<Trajectory> {
    let mut traj = integrate_smi_with(&instance.product_problem(), &z0.stacked(), t0, t_end, h, options)?;
    traj.meta.solver = format!("spds-{}", options.scheme.name());
    Ok(traj)
}

/// `Z̈ + 2√μ̃ Ż + T_{m_Z}(Z) + L Ż/√μ̃ = 0`: the Lagrangian gradients taken at
/// the extrapolated points `(x, y + ẏ/√μ̃)` and `(x + ẋ/√μ̃, y)`.
/// RK4 on `(Z, Ż)`; needs smooth `g` and `h`.
pub fn integrate_ispds(
    instance: &SaddleInstance,
    z0: &PDState,
    zdot0: &PDState,
    t0: f64,
    t_end: f64,
    h: f64,
) -> Result<Trajectory> {
    if !instance.g.is_smooth() || !instance.h.is_smooth() {
        return Err(Error::NonSmoothA);
    }
    let mu = instance.tilde_mu();
    let sqrt_mu = mu.sqrt();
    let stiffness = 2.0 * sqrt_mu + instance.k_norm() / sqrt_mu + (instance.lipschitz_total() + mu).sqrt();
    if h * stiffness > 1.0 {
        return Err(Error::StepTooLarge {
            h,
            h_max: 1.0 / stiffness,
        });
    }
    let problem = instance.product_problem();
    if !problem.a.in_domain(&z0.stacked()) {
        return Err(Error::DomainViolation);
    }
    let (times, h_eff) = uniform_grid(t0, t_end, h)?;
    let n = instance.primal_dim();
    let d = n + instance.dual_dim();
    let skew = |v: &Vector| -> Vector {
        let p = PDState::split(v, n);
        PDState {
            x: instance.k.transpose() * &p.y,
            y: -(&instance.k * &p.x),
        }
        .stacked()
    };
    let rhs = |s: &Vector| -> Vector {
        let z = s.rows(0, d).into_owned();
        let v = s.rows(d, d).into_owned();
        let Ok(t) = problem.closed_loop_field(&z) else {
            return Vector::from_element(2 * d, f64::NAN);
        };
        let acc = -&v * (2.0 * sqrt_mu) - t - skew(&v) / sqrt_mu;
        Vector::from_iterator(2 * d, v.iter().chain(acc.iter()).copied())
    };
    let z0s = z0.stacked();
    let v0s = zdot0.stacked();
    let mut s = Vector::from_iterator(2 * d, z0s.iter().chain(v0s.iter()).copied());
    let mut states = vec![z0s];
    let mut velocities = vec![v0s];
    for _ in 1..times.len() {
        s = rk4_step(&s, rhs, h_eff)?;
        if !is_finite(&s) {
            return Err(Error::NonFiniteField);
        }
        states.push(s.rows(0, d).into_owned());
        velocities.push(s.rows(d, d).into_owned());
    }
    Ok(Trajectory {
        times,
        states,
        velocities: Some(velocities),
        meta: TrajectoryMeta {
            solver: "ispds-rk4".into(),
            h: h_eff,
            problem: instance.name.clone(),
        },
    })
}

/// `L_{m_x̄, m_ȳ}(x, ȳ) − L_{m_x̄, m_ȳ}(x̄, y)`.
pub fn lagrangian_gap(instance: &SaddleInstance, z: &PDState, z_bar: &PDState) -> Result<f64> {
    let m_p = instance.map_p.kernel(&z_bar.x);
    let m_d = instance.map_d.kernel(&z_bar.y);
    let upper = instance.lagrangian(&m_p, &m_d, &PDState::new(z.x.clone(), z_bar.y.clone()))?;
    let lower = instance.lagrangian(&m_p, &m_d, &PDState::new(z_bar.x.clone(), z.y.clone()))?;
    Ok(upper - lower)
}

#[derive(Debug, Clone)]
pub struct PdDecayReport {
    /// Lagrangian gap against `V(t0)·e^{−(√μ̃/4)(t−t0)}`.
    pub envelope: BoundReport,
    /// `max(μ̃/2·‖Z − z̄‖² − gap)`; nonpositive when the lower bound holds.
    pub sandwich_max_violation: f64,
    /// `V(t) = gap + ½‖√μ̃(Z − z̄) + Ż‖²` along the grid.
    pub energy: Vec<f64>,
    pub satisfied: bool,
}

/// Lagrangian gap, `V(t) = gap + ½‖√μ̃(Z − z̄) + Ż‖²` and the worst excess
/// `μ̃/2‖Z − z̄‖² − gap` along a trajectory with stored velocities.
pub fn pd_energy_series(
    traj: &Trajectory,
    instance: &SaddleInstance,
    z_bar: &PDState,
    tilde_mu: f64,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let vel = traj
        .velocities
        .as_ref()
        .ok_or_else(|| Error::constraint("trajectory", "velocities are required"))?;
    let n = instance.primal_dim();
    let zb = z_bar.stacked();
    let sqrt_mu = tilde_mu.sqrt();
    let mut gaps = Vec::with_capacity(traj.len());
    let mut energy = Vec::with_capacity(traj.len());
    let mut sandwich = f64::NEG_INFINITY;
    for (z, zdot) in traj.states.iter().zip(vel) {
        let gap = lagrangian_gap(instance, &PDState::split(z, n), z_bar)?;
        let dist = (z - &zb).norm();
        let v = (z - &zb) * sqrt_mu + zdot;
        sandwich = sandwich.max(0.5 * tilde_mu * dist * dist - gap);
        energy.push(gap + 0.5 * v.norm_squared());
        gaps.push(gap);
    }
    Ok((gaps, energy, sandwich))
}

/// Both sides of `μ̃/2‖Z − z̄‖² ≤ gap(t) ≤ V(t0)e^{−(√μ̃/4)(t−t0)}` on the grid.
pub fn check_pd_decay(traj: &Trajectory, instance: &SaddleInstance, z_bar: &PDState, tilde_mu: f64) -> Result<PdDecayReport> {
    check_pd_decay_with(traj, instance, z_bar, tilde_mu, 1.0, DEFAULT_BOUND_TOL)
}

/// As [`check_pd_decay`] with the exponent scaled by `rate_multiplier` and an
/// absolute tolerance on the upper side. The lower side allows `10⁻⁹`.
pub fn check_pd_decay_with(
    traj: &Trajectory,
    instance: &SaddleInstance,
    z_bar: &PDState,
    tilde_mu: f64,
    rate_multiplier: f64,
    tolerance: f64,
) -> Result<PdDecayReport> {
    let rho = instance.tilde_rho();
    if !(rho < ISPDS_RHO_LIMIT) {
        return Err(Error::ConditionViolated {
            rho,
            limit: ISPDS_RHO_LIMIT,
        });
    }
    let (gaps, energy, sandwich) = pd_energy_series(traj, instance, z_bar, tilde_mu)?;
    let t0 = traj.times[0];
    let v0 = energy[0];
    let rate = rate_multiplier * tilde_mu.sqrt() / 4.0;
    let envelope = TimeSeries {
        times: traj.times.clone(),
        values: traj.times.iter().map(|t| v0 * (-rate * (t - t0)).exp()).collect(),
    };
    let observed = TimeSeries {
        times: traj.times.clone(),
        values: gaps,
    };
    let fitted = crate::flow1::tail_rate(&observed, 1e3 * f64::EPSILON * v0.max(f64::MIN_POSITIVE));
    let report = BoundReport::new(observed, envelope, fitted, tolerance);
    let satisfied = report.satisfied && sandwich <= 1e-9;
    Ok(PdDecayReport {
        envelope: report,
        sandwich_max_violation: sandwich,
        energy,
        satisfied,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::solve_inner;
    use crate::flow1::{check_speed_bounds, integrate_smi};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn scalar() -> SaddleInstance {
        SaddleInstance::scalar_affine(2.0, 2.0, 0.2, 1.0, 0.2, 0.0, 1.0)
    }

    fn z_bar() -> PDState {
        // 1.8x + y = 1, −x + 1.8y = 0.
        let y = 1.0 / 4.24;
        PDState::scalar(1.8 * y, y)
    }

    #[test]
    fn constants() {
        let s = scalar();
        assert_eq!(s.tilde_mu(), 2.0);
        assert_eq!(s.tilde_beta(), 1.0);
        assert_abs_diff_eq!(s.tilde_rho(), 0.1, epsilon = 1e-15);
        assert!(s.tilde_rho() < ISPDS_RHO_LIMIT);
        assert_abs_diff_eq!(s.k_norm(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn operator_examples() {
        let s = scalar();
        let z = PDState::scalar(1.0, 2.0);
        let t = pd_operator_t(&s, &Distribution::dirac_1d(0.5), &Distribution::dirac_1d(0.25), &z).unwrap();
        // (2·1 − 0.5 + 2, 2·2 − 0.25 − 1)
        assert_abs_diff_eq!(t.x[0], 3.5, epsilon = 1e-15);
        assert_abs_diff_eq!(t.y[0], 2.75, epsilon = 1e-15);

        let zb = z_bar();
        let t = pd_operator_t(&s, &s.map_p.kernel(&zb.x), &s.map_d.kernel(&zb.y), &zb).unwrap();
        assert!(t.stacked().norm() <= 1e-15);

        let mut decoupled = scalar();
        decoupled.k = DMatrix::zeros(1, 1);
        let t = pd_operator_t(&decoupled, &Distribution::dirac_1d(1.0), &Distribution::dirac_1d(0.0), &z).unwrap();
        assert_eq!((t.x[0], t.y[0]), (1.0, 4.0));
    }

    #[test]
    fn equilibrium_of_scalar_instance() {
        let r = pd_equilibrium(&scalar(), &PDState::scalar(0.0, 0.0), 1e-12).unwrap();
        let zb = z_bar();
        assert_abs_diff_eq!(r.x_bar[0], zb.x[0], epsilon = 1e-10);
        assert_abs_diff_eq!(r.x_bar[1], zb.y[0], epsilon = 1e-10);
        assert_abs_diff_eq!(r.x_bar[0], 0.42453, epsilon = 1e-5);
        assert_abs_diff_eq!(r.x_bar[1], 0.23585, epsilon = 1e-5);
        assert!(r.residual <= 1e-11);
    }

    #[test]
    fn decoupled_equilibrium_matches_scalar_fixed_points() {
        let mut s = scalar();
        s.k = DMatrix::zeros(1, 1);
        let r = pd_equilibrium(&s, &PDState::scalar(3.0, -3.0), 1e-12).unwrap();
        assert_abs_diff_eq!(r.x_bar[0], 1.0 / 1.8, epsilon = 1e-11);
        assert_abs_diff_eq!(r.x_bar[1], 0.0, epsilon = 1e-11);
    }

    #[test]
    fn constant_kernels_need_one_outer_step() {
        let mut s = scalar();
        s.map_p = DecisionMap::constant(Distribution::dirac_1d(1.0));
        s.map_d = DecisionMap::constant(Distribution::dirac_1d(0.0));
        s.tau = 0.0;
        let r = pd_equilibrium(&s, &PDState::scalar(0.0, 0.0), 1e-12).unwrap();
        let p = s.product_problem();
        let once = solve_inner(&p, &p.map.kernel(&r.iterates[0]), &r.iterates[0], 1e-13, 100_000).unwrap();
        assert!((&once - &r.iterates[1]).norm() <= 1e-12);
        assert_eq!(r.outer_iterations, 2);
    }

    #[test]
    fn rho_above_one_is_rejected() {
        let s = SaddleInstance::scalar_affine(1.0, 1.0, 1.5, 0.0, 1.5, 0.0, 1.0);
        assert!(matches!(
            pd_equilibrium(&s, &PDState::scalar(0.0, 0.0), 1e-10),
            Err(Error::ConditionViolated { .. })
        ));
    }

    #[test]
    fn spds_converges_and_stays_at_equilibrium() {
        let s = scalar();
        let zb = z_bar();
        let rate = s.tilde_mu() - s.tau * s.tilde_beta();
        let t_end = 12.0 / rate + 1.0;
        let h = s.product_problem().max_step();
        let traj = integrate_spds(&s, &PDState::scalar(0.0, 0.0), 0.0, t_end, h).unwrap();
        assert!((traj.last_state() - zb.stacked()).norm() <= 1e-5);
        let report = check_speed_bounds(&traj, &zb.stacked(), &s.product_problem(), 1.0).unwrap();
        assert!(report.satisfied);

        let still = integrate_spds(&s, &zb, 0.0, 2.0, h).unwrap();
        assert!(still.states.iter().all(|z| (z - zb.stacked()).norm() <= 1e-14));
    }

    #[test]
    fn spds_with_strong_coupling_spirals_in() {
        let s = SaddleInstance::scalar_affine(2.0, 2.0, 0.2, 1.0, 0.2, 0.0, 10.0);
        let zb = pd_equilibrium(&s, &PDState::scalar(0.0, 0.0), 1e-12).unwrap().x_bar;
        // The linear skew flow attains the envelope exactly, and an explicit
        // step contracts by sqrt((1 − hμ)² + h²‖K‖²) > e^{−hμ}; RK4 keeps the
        // excess below the check tolerance.
        let opts = SmiOptions {
            scheme: crate::flow1::Scheme::Rk4,
            frozen_at: None,
        };
        let traj = integrate_spds_with(&s, &PDState::scalar(1.0, 1.0), 0.0, 10.0, 1e-3, &opts).unwrap();
        assert!((traj.last_state() - &zb).norm() <= 1e-4);
        let angle = |z: &Vector| (z[1] - zb[1]).atan2(z[0] - zb[0]);
        let turns = traj.states.windows(2).filter(|w| angle(&w[0]).signum() != angle(&w[1]).signum()).count();
        assert!(turns >= 4, "only {turns} half-turns");
        let report = check_speed_bounds(&traj, &zb, &s.product_problem(), 1.0).unwrap();
        assert!(report.satisfied, "violation {}", report.max_violation);
    }

    #[test]
    fn ispds_decay_and_sandwich() {
        let s = scalar();
        let zb = z_bar();
        let traj = integrate_ispds(&s, &PDState::scalar(0.0, 0.0), &PDState::scalar(0.0, 0.0), 0.0, 30.0, 1e-3).unwrap();
        assert!((traj.last_state() - zb.stacked()).norm() <= 1e-6);
        let report = check_pd_decay(&traj, &s, &zb, s.tilde_mu()).unwrap();
        assert!(report.satisfied, "envelope {} sandwich {}", report.envelope.max_violation, report.sandwich_max_violation);
        let head = integrate_ispds(&s, &PDState::scalar(0.0, 0.0), &PDState::scalar(0.0, 0.0), 0.0, 8.0, 1e-3).unwrap();
        let fitted = check_pd_decay(&head, &s, &zb, s.tilde_mu()).unwrap().envelope.fitted_rate;
        assert!(fitted >= s.tilde_mu().sqrt() / 4.0);
    }

    #[test]
    fn ispds_stationary_at_equilibrium() {
        let s = scalar();
        let zb = z_bar();
        let traj = integrate_ispds(&s, &zb, &PDState::scalar(0.0, 0.0), 0.0, 2.0, 1e-2).unwrap();
        assert!(traj.states.iter().all(|z| (z - zb.stacked()).norm() <= 1e-14));
        let report = check_pd_decay(&traj, &s, &zb, 2.0).unwrap();
        assert!(report.energy.iter().all(|v| v.abs() <= 1e-20));
    }

    #[test]
    fn ispds_without_gap_term() {
        let mut s = scalar();
        s.map_p = DecisionMap::constant(Distribution::dirac_1d(1.0));
        s.map_d = DecisionMap::constant(Distribution::dirac_1d(0.0));
        s.tau = 0.0;
        // KKT: 2x − 1 + y = 0, 2y − x = 0.
        let zb = PDState::scalar(0.4, 0.2);
        let traj = integrate_ispds(&s, &PDState::scalar(-1.0, 1.0), &PDState::scalar(0.0, 0.0), 0.0, 25.0, 1e-3).unwrap();
        assert!((traj.last_state() - zb.stacked()).norm() <= 1e-6);
        assert!(check_pd_decay(&traj, &s, &zb, 2.0).unwrap().satisfied);
    }

    #[test]
    fn condition_and_smoothness_guards() {
        let s = SaddleInstance::scalar_affine(2.0, 2.0, 1.0, 1.0, 1.0, 0.0, 1.0);
        assert_abs_diff_eq!(s.tilde_rho(), 0.5, epsilon = 1e-15);
        let traj = integrate_ispds(&s, &PDState::scalar(0.0, 0.0), &PDState::scalar(0.0, 0.0), 0.0, 1.0, 1e-2).unwrap();
        assert!(matches!(
            check_pd_decay(&traj, &s, &z_bar(), 2.0),
            Err(Error::ConditionViolated { .. })
        ));
        let mut cone = scalar();
        cone.g = MonotoneOracle::nonnegative_cone();
        assert!(matches!(
            integrate_ispds(&cone, &PDState::scalar(0.0, 0.0), &PDState::scalar(0.0, 0.0), 0.0, 1.0, 1e-2),
            Err(Error::NonSmoothA)
        ));
        // SPDS still runs with the projection resolvent.
        let h = cone.product_problem().max_step();
        assert!(integrate_spds(&cone, &PDState::scalar(1.0, 0.0), 0.0, 1.0, h).is_ok());
    }

    #[test]
    fn gap_examples() {
        let s = scalar();
        let zb = z_bar();
        assert_abs_diff_eq!(lagrangian_gap(&s, &zb, &zb).unwrap(), 0.0, epsilon = 1e-15);
        let (xb, yb) = (zb.x[0], zb.y[0]);
        let l = |x: f64, y: f64| x * x - (0.2 * xb + 1.0) * x + x * y - y * y + 0.2 * yb * y;
        assert_abs_diff_eq!(
            lagrangian_gap(&s, &PDState::scalar(0.0, 0.0), &zb).unwrap(),
            l(0.0, yb) - l(xb, 0.0),
            epsilon = 1e-14
        );
    }

    #[test]
    fn decoupled_flow_matches_scalar_flow() {
        let mut s = scalar();
        s.k = DMatrix::zeros(1, 1);
        let h = 0.01;
        let pd = integrate_spds(&s, &PDState::scalar(0.0, 2.0), 0.0, 3.0, h).unwrap();
        let primal = ClosedLoopProblem::new(
            MonotoneOracle::zero(),
            RandomField::affine(2.0, 2.0),
            DecisionMap::dirac_affine(0.2, dvector![1.0]),
            2.0,
        );
        let single = integrate_smi(&primal, &dvector![0.0], 0.0, 3.0, h).unwrap();
        for (z, x) in pd.states.iter().zip(&single.states) {
            assert_eq!(z[0], x[0]);
        }
    }

    proptest! {
        #[test]
        fn skew_block_is_orthogonal(x in -10.0f64..10.0, y in -10.0f64..10.0, k in -5.0f64..5.0) {
            let mut s = scalar();
            s.k = DMatrix::from_element(1, 1, k);
            prop_assert!(skew_pairing(&s, &PDState::scalar(x, y)).abs() <= 1e-12);
        }

        #[test]
        fn gap_dominates_quadratic_growth(x in -10.0f64..10.0, y in -10.0f64..10.0) {
            let s = scalar();
            let zb = z_bar();
            let z = PDState::scalar(x, y);
            let gap = lagrangian_gap(&s, &z, &zb).unwrap();
            let d2 = (z.stacked() - zb.stacked()).norm_squared();
            prop_assert!(gap >= 0.5 * s.tilde_mu() * d2 - 1e-9);
        }
    }
}
