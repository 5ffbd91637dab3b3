//! Inertial dynamics with viscous and explicit Hessian-driven damping,
//!
//! `ẍ + γẋ + ∇G_{m_x̄}(x) + ω d/dt ∇G_{m_x̄}(x) + e_x̄(x) + ω d/dt e_x̄(x) = 0`,
//!
//! integrated through the equivalent first-order `(x, y)` system so that the
//! time derivative of the merely Lipschitz gap never has to be evaluated.
//! Only the smooth case `A = ∇g` is supported.

use std::fmt;
use std::sync::Arc;

use crate::distmap::{euclidean, w1};
use crate::flow1::{noise_floor, tail_rate, uniform_grid, DEFAULT_BOUND_TOL};
use crate::numerics::{is_finite, rk4_step_t, TimeSeries, Vector};
use crate::operators::ClosedLoopProblem;
use crate::trajectory::{BoundReport, Trajectory, TrajectoryMeta};
use crate::{Error, Result};

/// Viscous damping `γ(t)` with its derivative.
#[derive(Clone)]
pub enum Damping {
    /// `γ ≡ 2√μ`.
    Tuned,
    Custom {
        gamma: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        gamma_dot: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for Damping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Damping::Tuned => f.write_str("Tuned"),
            Damping::Custom { .. } => f.write_str("Custom"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ISEHDConfig {
    pub omega: f64,
    pub mu: f64,
    pub t0: f64,
    pub t_end: f64,
    pub h: f64,
    pub damping: Damping,
}

impl ISEHDConfig {
    /// Tuned damping `γ = 2√μ` and the default step `10⁻³/√μ`.
    pub fn new(omega: f64, mu: f64, t0: f64, t_end: f64) -> Self {
        Self {
            omega,
            mu,
            t0,
            t_end,
            h: 1e-3 / mu.sqrt(),
            damping: Damping::Tuned,
        }
    }

    pub fn with_step(mut self, h: f64) -> Self {
        self.h = h;
        self
    }

    pub fn gamma_const(&self) -> f64 {
        2.0 * self.mu.sqrt()
    }

    pub fn gamma(&self, t: f64) -> f64 {
        match &self.damping {
            Damping::Tuned => self.gamma_const(),
            Damping::Custom { gamma, .. } => gamma(t),
        }
    }

    pub fn gamma_dot(&self, t: f64) -> f64 {
        match &self.damping {
            Damping::Tuned => 0.0,
            Damping::Custom { gamma_dot, .. } => gamma_dot(t),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.omega >= 0.0) || !self.omega.is_finite() {
            return Err(Error::constraint("omega", "must be nonnegative"));
        }
        if !(self.mu > 0.0) {
            return Err(Error::constraint("mu", "must be positive"));
        }
        Ok(())
    }
}

/// Slack in the two damping inequalities; both must be positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampingCheck {
    pub ok: bool,
    pub rho: f64,
    /// `min(1/(2√μ), √μ/(2√2(2L+βτ)))`.
    pub omega_bound: f64,
    /// `omega_bound − ω`.
    pub omega_margin: f64,
    /// `1 − 16ρ² − ω`.
    pub rho_margin: f64,
}

impl DampingCheck {
    /// Either inequality holds with equality.
    pub fn at_boundary(&self) -> bool {
        self.omega_margin == 0.0 || self.rho_margin == 0.0
    }
}

pub fn check_damping_condition(mu: f64, lipschitz_l: f64, beta: f64, tau: f64, omega: f64) -> DampingCheck {
    let bt = beta * tau;
    let rho = bt / mu;
    let omega_bound = (0.5 / mu.sqrt()).min(mu.sqrt() / (2.0 * 2f64.sqrt() * (2.0 * lipschitz_l + bt)));
    let omega_margin = omega_bound - omega;
    let rho_margin = 1.0 - 16.0 * rho * rho - omega;
    DampingCheck {
        ok: omega_margin > 0.0 && rho_margin > 0.0,
        rho,
        omega_bound,
        omega_margin,
        rho_margin,
    }
}

impl ClosedLoopProblem {
    pub fn damping_check(&self, omega: f64) -> DampingCheck {
        check_damping_condition(self.mu, self.b.lipschitz_l, self.b.beta, self.map.tau, omega)
    }
}

fn stack(a: &Vector, b: &Vector) -> Vector {
    Vector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

fn split(z: &Vector, n: usize) -> (Vector, Vector) {
    (z.rows(0, n).into_owned(), z.rows(n, n).into_owned())
}

fn nan_like(n: usize) -> Vector {
    Vector::from_element(n, f64::NAN)
}

fn check_step(problem: &ClosedLoopProblem, config: &ISEHDConfig) -> Result<()> {
    let lip = problem.b.lipschitz_l + problem.mu;
    let stiffness = config.gamma(config.t0).abs() + config.omega * lip + lip.sqrt();
    if config.h * stiffness > 1.0 {
        return Err(Error::StepTooLarge {
            h: config.h,
            h_max: 1.0 / stiffness,
        });
    }
    Ok(())
}

/// RK4 on the `(x, y)` system with `y(t0)` chosen so that `ẋ(t0) = v0`.
/// For `ω = 0` the second-order system is integrated directly in `(x, ẋ)`.
pub fn integrate_isehd(problem: &ClosedLoopProblem, x0: &Vector, v0: &Vector, config: &ISEHDConfig) -> Result<Trajectory> {
    config.validate()?;
    if !problem.a.is_smooth() {
        return Err(Error::NonSmoothA);
    }
    if x0.len() != v0.len() {
        return Err(Error::DimensionMismatch {
            expected: x0.len(),
            got: v0.len(),
        });
    }
    check_step(problem, config)?;
    let (times, _) = uniform_grid(config.t0, config.t_end, config.h)?;
    let n = x0.len();
    let omega = config.omega;
    let field = |x: &Vector| problem.closed_loop_field(x);

    let (mut z, solver) = if omega > 0.0 {
        // ∇G_{m_x̄}(x0) + e_x̄(x0) is the closed-loop field at x0 for any x̄.
        let f0 = field(x0)?;
        let y0 = -(v0 * omega) - &f0 * (omega * omega) + x0 * (1.0 - omega * config.gamma(config.t0));
        (stack(x0, &y0), "isehd-xy-rk4")
    } else {
        (stack(x0, v0), "heavy-ball-rk4")
    };
    let rhs = |t: f64, z: &Vector| -> Vector {
        let (x, w) = split(z, n);
        let Ok(f) = field(&x) else { return nan_like(2 * n) };
        let g = config.gamma(t);
        if omega > 0.0 {
            let dx = -&f * omega + &x * (1.0 / omega - g) - &w / omega;
            let dy = &x * (1.0 / omega - g - config.gamma_dot(t) * omega) - &w / omega;
            stack(&dx, &dy)
        } else {
            stack(&w, &(-&w * g - f))
        }
    };
    let velocity = |t: f64, z: &Vector| -> Result<Vector> {
        let (x, w) = split(z, n);
        if omega > 0.0 {
            Ok(-field(&x)? * omega + &x * (1.0 / omega - config.gamma(t)) - &w / omega)
        } else {
            Ok(w)
        }
    };

    let mut states = Vec::with_capacity(times.len());
    let mut velocities = Vec::with_capacity(times.len());
    states.push(x0.clone());
    velocities.push(v0.clone());
    for w in times.windows(2) {
        z = rk4_step_t(w[0], &z, rhs, w[1] - w[0])?;
        if !is_finite(&z) {
            return Err(Error::NonFiniteField);
        }
        states.push(z.rows(0, n).into_owned());
        velocities.push(velocity(w[1], &z)?);
    }
    Ok(Trajectory {
        meta: TrajectoryMeta {
            solver: solver.into(),
            h: times[1] - times[0],
            problem: problem.name.clone(),
        },
        times,
        states,
        velocities: Some(velocities),
    })
}

/// RK4 on the second-order form in `(x, ẋ)`, with `d/dt F(x(t))` taken as a
/// central difference of the closed-loop field along `ẋ`. Exact up to
/// rounding when the field is affine; used to cross-check the `(x, y)` route.
pub fn integrate_isehd_direct(
    problem: &ClosedLoopProblem,
    x0: &Vector,
    v0: &Vector,
    config: &ISEHDConfig,
) -> Result<Trajectory> {
    config.validate()?;
    if !problem.a.is_smooth() {
        return Err(Error::NonSmoothA);
    }
    check_step(problem, config)?;
    let (times, _) = uniform_grid(config.t0, config.t_end, config.h)?;
    let n = x0.len();
    let omega = config.omega;
    let rhs = |t: f64, z: &Vector| -> Vector {
        let (x, v) = split(z, n);
        let Ok(f) = problem.closed_loop_field(&x) else { return nan_like(2 * n) };
        let mut acc = -&v * config.gamma(t) - f;
        if omega > 0.0 && v.norm() > 0.0 {
            let delta = 1e-4 * (1.0 + x.norm()) / v.norm();
            let (Ok(fp), Ok(fm)) = (
                problem.closed_loop_field(&(&x + &v * delta)),
                problem.closed_loop_field(&(&x - &v * delta)),
            ) else {
                return nan_like(2 * n);
            };
            acc -= (fp - fm) * (omega / (2.0 * delta));
        }
        stack(&v, &acc)
    };
    let mut z = stack(x0, v0);
    let mut states = vec![x0.clone()];
    let mut velocities = vec![v0.clone()];
    for w in times.windows(2) {
        z = rk4_step_t(w[0], &z, rhs, w[1] - w[0])?;
        let (x, v) = split(&z, n);
        states.push(x);
        velocities.push(v);
    }
    Ok(Trajectory {
        meta: TrajectoryMeta {
            solver: "isehd-direct-rk4".into(),
            h: times[1] - times[0],
            problem: problem.name.clone(),
        },
        times,
        states,
        velocities: Some(velocities),
    })
}

#[derive(Debug, Clone)]
pub struct LyapunovTrace {
    pub times: Vec<f64>,
    /// `V = gap + ½‖v‖²`.
    pub energy: Vec<f64>,
    /// `G_{m_x̄}(x) − G*`.
    pub gap: Vec<f64>,
    /// `‖v‖` with `v = √μ(x − x̄) + ẋ + ω∇G_{m_x̄}(x)`.
    pub vnorm: Vec<f64>,
    /// `‖x − x̄‖`, kept for the quadratic-growth sandwich.
    pub distance: Vec<f64>,
    /// `‖∇G_{m_x̄}(x)‖`.
    pub gradnorm: Vec<f64>,
}

impl LyapunovTrace {
    pub fn energy_series(&self) -> TimeSeries {
        TimeSeries {
            times: self.times.clone(),
            values: self.energy.clone(),
        }
    }
}

pub fn lyapunov_trace(
    traj: &Trajectory,
    problem: &ClosedLoopProblem,
    x_bar: &Vector,
    config: &ISEHDConfig,
) -> Result<LyapunovTrace> {
    let vel = traj
        .velocities
        .as_ref()
        .ok_or_else(|| Error::constraint("trajectory", "velocities are required"))?;
    let m_bar = problem.map.kernel(x_bar);
    let g_star = problem.potential(&m_bar, x_bar)?;
    let sqrt_mu = config.mu.sqrt();
    let mut trace = LyapunovTrace {
        times: traj.times.clone(),
        energy: Vec::with_capacity(traj.len()),
        gap: Vec::with_capacity(traj.len()),
        vnorm: Vec::with_capacity(traj.len()),
        distance: Vec::with_capacity(traj.len()),
        gradnorm: Vec::with_capacity(traj.len()),
    };
    for (x, xdot) in traj.states.iter().zip(vel) {
        let grad = problem.frozen_field(x_bar, x)?;
        let gap = problem.potential(&m_bar, x)? - g_star;
        let v = (x - x_bar) * sqrt_mu + xdot + &grad * config.omega;
        let vn = v.norm();
        trace.energy.push(gap + 0.5 * vn * vn);
        trace.gap.push(gap);
        trace.vnorm.push(vn);
        trace.distance.push((x - x_bar).norm());
        trace.gradnorm.push(grad.norm());
    }
    Ok(trace)
}

/// `V(t) ≤ V(t0)·e^{−(√μ/4)(t−t0)}` together with `gap ≤ envelope` and
/// `μ/2·‖x − x̄‖² ≤ gap + 10⁻⁹`.
///
/// `max_violation` is the worst of `V − envelope` and the sandwich excess; the
/// tolerance is `10⁻⁶·V(t0)` plus `10⁻¹⁴` absolute.
pub fn check_lyapunov_decay(trace: &LyapunovTrace, mu: f64) -> BoundReport {
    check_lyapunov_decay_with(trace, mu, 1.0, DEFAULT_BOUND_TOL)
}

/// As [`check_lyapunov_decay`] with the envelope exponent scaled by
/// `rate_multiplier` and tolerance `rel_tol·V(t0) + 10⁻¹⁴`.
pub fn check_lyapunov_decay_with(trace: &LyapunovTrace, mu: f64, rate_multiplier: f64, rel_tol: f64) -> BoundReport {
    let t0 = trace.times[0];
    let v0 = trace.energy[0];
    let rate = rate_multiplier * mu.sqrt() / 4.0;
    let envelope = TimeSeries {
        times: trace.times.clone(),
        values: trace.times.iter().map(|t| v0 * (-rate * (t - t0)).exp()).collect(),
    };
    let observed = trace.energy_series();
    let tolerance = rel_tol * v0 + 1e-14;
    let fitted = tail_rate(&observed, 1e3 * f64::EPSILON * v0.max(f64::MIN_POSITIVE));
    let mut report = BoundReport::new(observed, envelope, fitted, tolerance);
    let sandwich = trace
        .distance
        .iter()
        .zip(&trace.gap)
        .map(|(d, g)| 0.5 * mu * d * d - g - 1e-9)
        .fold(f64::NEG_INFINITY, f64::max);
    let gap_excess = trace
        .gap
        .iter()
        .zip(&report.envelope.values)
        .map(|(g, e)| g - e)
        .fold(f64::NEG_INFINITY, f64::max);
    report.max_violation = report.max_violation.max(sandwich);
    report.satisfied = report.max_violation <= tolerance && gap_excess <= tolerance;
    report
}

#[derive(Debug, Clone)]
pub struct GradientIntegral {
    /// `I(t) = e^{−√μ t}∫_{t0}^t e^{√μ s}‖∇G_{m_x̄}(x(s))‖² ds`.
    pub integral: TimeSeries,
    /// `I(t)·e^{(√μ/4)(t − t0)}`.
    pub ratio: TimeSeries,
    /// Empirical constant: the largest ratio on the grid.
    pub c_estimate: f64,
}

/// Weighted gradient integral by the trapezoid rule, accumulated with the
/// exponential weight folded into each step to avoid overflow.
pub fn gradient_integral_estimate(
    traj: &Trajectory,
    problem: &ClosedLoopProblem,
    x_bar: &Vector,
    mu: f64,
) -> Result<GradientIntegral> {
    let s = mu.sqrt();
    let g: Vec<f64> = traj
        .states
        .iter()
        .map(|x| problem.frozen_field(x_bar, x).map(|v| v.norm_squared()))
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(g.len());
    let mut acc = 0.0;
    values.push(0.0);
    for k in 1..g.len() {
        let h = traj.times[k] - traj.times[k - 1];
        let decay = (-s * h).exp();
        acc = decay * acc + 0.5 * h * (decay * g[k - 1] + g[k]);
        values.push(acc);
    }
    let t0 = traj.times[0];
    let ratio: Vec<f64> = traj
        .times
        .iter()
        .zip(&values)
        .map(|(t, i)| i * (0.25 * s * (t - t0)).exp())
        .collect();
    let c_estimate = ratio.iter().copied().fold(0.0, f64::max);
    Ok(GradientIntegral {
        integral: TimeSeries {
            times: traj.times.clone(),
            values,
        },
        ratio: TimeSeries {
            times: traj.times.clone(),
            values: ratio,
        },
        c_estimate,
    })
}

/// `W1(m_{x(t)}, m_x̄)` against `τ·√(2V(t0)/μ)·e^{−(√μ/8)(t−t0)}`.
pub fn w1_decay_report_2nd(
    traj: &Trajectory,
    problem: &ClosedLoopProblem,
    x_bar: &Vector,
    v0: f64,
    mu: f64,
) -> Result<BoundReport> {
    let target = problem.map.kernel(x_bar);
    let values = traj
        .states
        .iter()
        .map(|x| w1(&problem.map.kernel(x), &target, &euclidean))
        .collect::<Result<Vec<f64>>>()?;
    let t0 = traj.times[0];
    let scale = problem.map.tau * (2.0 * v0 / mu).sqrt();
    let envelope = TimeSeries {
        times: traj.times.clone(),
        values: traj
            .times
            .iter()
            .map(|t| scale * (-(mu.sqrt() / 8.0) * (t - t0)).exp())
            .collect(),
    };
    let observed = TimeSeries {
        times: traj.times.clone(),
        values,
    };
    let fitted = tail_rate(&observed, noise_floor(x_bar) * problem.map.tau.max(1e-300));
    Ok(BoundReport::new(observed, envelope, fitted, DEFAULT_BOUND_TOL))
}
