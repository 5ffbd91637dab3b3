//! First-order closed-loop flow `ẋ(t) + F_{m_{x(t)}}(x(t)) ∋ 0`.
//!
//! The default discretization is semi-implicit: backward on `A` through its
//! resolvent and forward on the averaged field,
//! `x_{k+1} = J_{hA}(x_k − h·B_{m_{x_k}}(x_k))`.

use crate::distmap::{euclidean, w1};
use crate::numerics::{fit_exponential_rate, is_finite, rk4_step, TimeSeries, Vector};
use crate::operators::ClosedLoopProblem;
use crate::trajectory::{BoundReport, Trajectory, TrajectoryMeta};
use crate::{Error, Result};

/// Absolute slack used when deciding whether an envelope holds.
pub const DEFAULT_BOUND_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    /// `x_{k+1} = J_{hA}(x_k − h·B_{m_{x_k}}(x_k))`.
    #[default]
    ForwardBackward,
    /// Classical RK4 on `ẋ = −F_{m_x}(x)`; needs a single-valued `A`.
    Rk4,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::ForwardBackward => "forward-backward",
            Scheme::Rk4 => "rk4",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SmiOptions {
    pub scheme: Scheme,
    /// Evaluate the field as `B_{m_x̄}(x) + e_x̄(x)` with the measure frozen at
    /// this point instead of the instantaneous `B_{m_x}(x)`.
    pub frozen_at: Option<Vector>,
}

/// Uniform grid `t0, t0 + h', …, t_end` with `h' ≤ h` dividing the horizon.
pub(crate) fn uniform_grid(t0: f64, t_end: f64, h: f64) -> Result<(Vec<f64>, f64)> {
    if !(t0 >= 0.0) || !(t_end > t0) || !t_end.is_finite() {
        return Err(Error::InvalidHorizon(format!(
            "need 0 <= t0 < T, got t0 = {t0}, T = {t_end}"
        )));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidHorizon(format!("step must be positive, got {h}")));
    }
    let span = t_end - t0;
    let steps = ((span / h) - 1e-9).ceil().max(1.0) as usize;
    let h_eff = span / steps as f64;
    let times = (0..=steps)
        .map(|k| if k == steps { t_end } else { t0 + k as f64 * h_eff })
        .collect();
    Ok((times, h_eff))
}

/// Integrate the flow on `[t0, t_end]` with the default scheme.
pub fn integrate_smi(problem: &ClosedLoopProblem, x0: &Vector, t0: f64, t_end: f64, h: f64) -> Result<Trajectory> {
    integrate_smi_with(problem, x0, t0, t_end, h, &SmiOptions::default())
}

pub fn integrate_smi_with(
    problem: &ClosedLoopProblem,
    x0: &Vector,
    t0: f64,
    t_end: f64,
    h: f64,
    options: &SmiOptions,
) -> Result<Trajectory> {
    let h_max = problem.max_step();
    if h > h_max * (1.0 + 1e-12) {
        return Err(Error::StepTooLarge { h, h_max });
    }
    if !problem.a.in_domain(x0) {
        return Err(Error::DomainViolation);
    }
    if options.scheme == Scheme::Rk4 && !problem.a.is_smooth() {
        return Err(Error::NonSmoothA);
    }
    let (times, h_eff) = uniform_grid(t0, t_end, h)?;
    let field_b = |x: &Vector| -> Result<Vector> {
        match &options.frozen_at {
            None => problem.b_m(&problem.map.kernel(x), x),
            Some(x_bar) => Ok(problem.b_m(&problem.map.kernel(x_bar), x)? + problem.gap_e(x_bar, x)?),
        }
    };

    let mut states = Vec::with_capacity(times.len());
    states.push(x0.clone());
    for w in times.windows(2) {
        let dt = w[1] - w[0];
        let x = states.last().expect("non-empty");
        let next = match options.scheme {
            Scheme::ForwardBackward => problem.a.resolvent(dt, &(x - field_b(x)? * dt)),
            Scheme::Rk4 => {
                let field = |z: &Vector| match (problem.a.forward(z), field_b(z)) {
                    (Ok(a), Ok(b)) => -(a + b),
                    _ => Vector::from_element(z.len(), f64::NAN),
                };
                rk4_step(x, field, dt)?
            }
        };
        if !is_finite(&next) {
            return Err(Error::NonFiniteField);
        }
        states.push(next);
    }
    let solver = match options.frozen_at {
        None => options.scheme.name().to_string(),
        Some(_) => format!("{}-frozen", options.scheme.name()),
    };
    Ok(Trajectory {
        times,
        states,
        velocities: None,
        meta: TrajectoryMeta {
            solver,
            h: h_eff,
            problem: problem.name.clone(),
        },
    })
}

/// Sup-norm gap between the forward-backward and RK4 paths; `O(h)`.
pub fn scheme_discrepancy(problem: &ClosedLoopProblem, x0: &Vector, t0: f64, t_end: f64, h: f64) -> Result<f64> {
    let fb = integrate_smi(problem, x0, t0, t_end, h)?;
    let rk = integrate_smi_with(
        problem,
        x0,
        t0,
        t_end,
        h,
        &SmiOptions {
            scheme: Scheme::Rk4,
            frozen_at: None,
        },
    )?;
    Ok(fb
        .states
        .iter()
        .zip(&rk.states)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max))
}

/// Decay rate fitted over the last half of the horizon, restricted to values
/// above `floor`. NaN when fewer than three samples survive.
pub(crate) fn tail_rate(series: &TimeSeries, floor: f64) -> f64 {
    let (Some(&t0), Some(&t1)) = (series.times.first(), series.times.last()) else {
        return f64::NAN;
    };
    let tail = series.window(0.5 * (t0 + t1), t1);
    let (times, values): (Vec<f64>, Vec<f64>) = tail
        .times
        .iter()
        .zip(&tail.values)
        .filter(|(_, v)| **v > floor)
        .map(|(t, v)| (*t, *v))
        .unzip();
    let kept = TimeSeries { times, values };
    fit_exponential_rate(&kept, f64::NEG_INFINITY, f64::INFINITY).map_or(f64::NAN, |f| f.rate)
}

fn check_not_diverging(observed: &TimeSeries) -> Result<()> {
    let n = observed.len();
    if n < 2 {
        return Ok(());
    }
    let start = observed.values[(3 * (n - 1)) / 4];
    let end = observed.values[n - 1];
    if end > start * (1.0 + 1e-9) + 1e-12 {
        return Err(Error::EquilibriumMismatch);
    }
    Ok(())
}

/// Distance envelope in the strongly monotone case:
/// `‖x0 − x̄‖·e^{−rate_multiplier·(μ − βτ)(t − t0)}`.
pub fn check_speed_bounds(
    traj: &Trajectory,
    x_bar: &Vector,
    problem: &ClosedLoopProblem,
    rate_multiplier: f64,
) -> Result<BoundReport> {
    check_speed_bounds_tol(traj, x_bar, problem, rate_multiplier, DEFAULT_BOUND_TOL)
}

pub fn check_speed_bounds_tol(
    traj: &Trajectory,
    x_bar: &Vector,
    problem: &ClosedLoopProblem,
    rate_multiplier: f64,
    tolerance: f64,
) -> Result<BoundReport> {
    if problem.mu > 0.0 && problem.rho() < 1.0 {
        let observed = traj.distance_series(x_bar);
        check_not_diverging(&observed)?;
        let rate = rate_multiplier * (problem.mu - problem.beta_tau());
        let t0 = traj.times[0];
        let d0 = observed.values[0];
        let envelope = TimeSeries {
            times: observed.times.clone(),
            values: observed.times.iter().map(|t| d0 * (-rate * (t - t0)).exp()).collect(),
        };
        let floor = noise_floor(x_bar);
        Ok(BoundReport::new(observed.clone(), envelope, tail_rate(&observed, floor), tolerance))
    } else {
        check_speed_bounds_uniform(traj, x_bar, problem, rate_multiplier, tolerance)
    }
}

/// Envelope from the uniform modulus: `θ^{-1}(rate_multiplier·(t − t0) + θ(‖x0 − x̄‖))`.
pub fn check_speed_bounds_uniform(
    traj: &Trajectory,
    x_bar: &Vector,
    problem: &ClosedLoopProblem,
    rate_multiplier: f64,
    tolerance: f64,
) -> Result<BoundReport> {
    let modulus = problem
        .modulus
        .as_ref()
        .ok_or(Error::ConditionViolated {
            rho: problem.rho(),
            limit: 1.0,
        })?;
    let observed = traj.distance_series(x_bar);
    check_not_diverging(&observed)?;
    let bt = problem.beta_tau();
    let t0 = traj.times[0];
    let d0 = observed.values[0];
    let envelope_values = if d0 == 0.0 {
        vec![0.0; observed.len()]
    } else {
        let theta0 = modulus.theta(bt, d0)?;
        observed
            .times
            .iter()
            .map(|t| modulus.theta_inv(bt, rate_multiplier * (t - t0) + theta0))
            .collect::<Result<Vec<f64>>>()?
    };
    let envelope = TimeSeries {
        times: observed.times.clone(),
        values: envelope_values,
    };
    let floor = noise_floor(x_bar);
    Ok(BoundReport::new(observed.clone(), envelope, tail_rate(&observed, floor), tolerance))
}

pub(crate) fn noise_floor(x_bar: &Vector) -> f64 {
    1e3 * f64::EPSILON * (1.0 + x_bar.norm())
}

/// `W1(m_{x(t)}, m_x̄)` along the trajectory, in the Euclidean ground metric.
pub fn w1_decay_report(traj: &Trajectory, problem: &ClosedLoopProblem, x_bar: &Vector) -> Result<TimeSeries> {
    let target = problem.map.kernel(x_bar);
    let values = traj
        .states
        .iter()
        .map(|x| w1(&problem.map.kernel(x), &target, &euclidean))
        .collect::<Result<Vec<f64>>>()?;
    Ok(TimeSeries {
        times: traj.times.clone(),
        values,
    })
}
