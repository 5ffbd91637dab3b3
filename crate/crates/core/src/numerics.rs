//! Shared numerical kernels: dense vectors, one-step RK4, adaptive quadrature,
//! monotone inversion, Gauss-Hermite nodes and exponential-rate fitting.
//!
//! Everything here is a pure function of its inputs.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DVector;

use crate::{Error, Result};

/// Finite-dimensional state vector. The Hilbert space of the model is `R^n`.
pub type Vector = DVector<f64>;

/// Scalar samples on a strictly increasing time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: times.len(),
                got: values.len(),
            });
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidHorizon(
                "time grid must be strictly increasing".into(),
            ));
        }
        Ok(Self { times, values })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sub-window `[t_a, t_b]` of a series, inclusive on both ends.
    pub fn window(&self, t_a: f64, t_b: f64) -> TimeSeries {
        let (times, values) = self
            .times
            .iter()
            .zip(&self.values)
            .filter(|(t, _)| **t >= t_a && **t <= t_b)
            .map(|(t, v)| (*t, *v))
            .unzip();
        TimeSeries { times, values }
    }
}

pub fn is_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn checked(v: Vector) -> Result<Vector> {
    if is_finite(&v) {
        Ok(v)
    } else {
        Err(Error::NonFiniteField)
    }
}

/// One classical Runge-Kutta step of an autonomous field.
pub fn rk4_step<F>(state: &Vector, field: F, h: f64) -> Result<Vector>
where
    F: Fn(&Vector) -> Vector,
{
    rk4_step_t(0.0, state, |_, x| field(x), h)
}

/// One classical Runge-Kutta step of a non-autonomous field `(t, x) -> f(t, x)`.
pub fn rk4_step_t<F>(t: f64, state: &Vector, field: F, h: f64) -> Result<Vector>
where
    F: Fn(f64, &Vector) -> Vector,
{
    let k1 = checked(field(t, state))?;
    let k2 = checked(field(t + 0.5 * h, &(state + &k1 * (0.5 * h))))?;
    let k3 = checked(field(t + 0.5 * h, &(state + &k2 * (0.5 * h))))?;
    let k4 = checked(field(t + h, &(state + &k3 * h)))?;
    checked(state + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Least-squares fit of `ln v = intercept - rate * t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub rate: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn fit_exponential_rate(series: &TimeSeries, t_a: f64, t_b: f64) -> Result<RateFit> {
    let win = series.window(t_a, t_b);
    if win.len() < 3 {
        return Err(Error::EmptyWindow(t_a, t_b));
    }
    if let Some((t, v)) = win.times.iter().zip(&win.values).find(|(_, v)| **v <= 0.0) {
        return Err(Error::NonPositiveValue {
            time: *t,
            value: *v,
        });
    }
    let n = win.len() as f64;
    let logs: Vec<f64> = win.values.iter().map(|v| v.ln()).collect();
    let t_mean = win.times.iter().sum::<f64>() / n;
    let y_mean = logs.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (t, y) in win.times.iter().zip(&logs) {
        let dt = t - t_mean;
        let dy = y - y_mean;
        sxy += dt * dy;
        sxx += dt * dt;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * t_mean;
    // A flat log series is fitted exactly.
    let y_scale = logs.iter().fold(1.0f64, |acc, y| acc.max(y.abs()));
    let r2 = if syy <= (16.0 * f64::EPSILON * y_scale).powi(2) * n {
        1.0
    } else {
        let ss_res: f64 = win
            .times
            .iter()
            .zip(&logs)
            .map(|(t, y)| (y - intercept - slope * t).powi(2))
            .sum();
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(RateFit {
        rate: -slope,
        intercept,
        r2,
    })
}

/// Fit over the tail window (last half of the horizon by default).
pub fn fit_tail_rate(series: &TimeSeries, tail_fraction: f64) -> Result<RateFit> {
    let (Some(&t0), Some(&t1)) = (series.times.first(), series.times.last()) else {
        return Err(Error::EmptyWindow(0.0, 0.0));
    };
    fit_exponential_rate(series, t1 - tail_fraction * (t1 - t0), t1)
}

const QUAD_MAX_DEPTH: u32 = 48;
const QUAD_MAX_EVALS: usize = 5_000_000;

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_quad<F>(f: F, a: f64, b: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(a < b) || !(tol > 0.0) {
        return Err(Error::InvalidHorizon(format!(
            "quadrature needs a < b and tol > 0 (a = {a}, b = {b}, tol = {tol})"
        )));
    }
    let mut evals = 0usize;
    let mut eval = |x: f64| -> Result<f64> {
        evals += 1;
        if evals > QUAD_MAX_EVALS {
            return Err(Error::ToleranceNotReached { tol });
        }
        let y = f(x);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::NonFiniteIntegrand)
        }
    };
    let fa = eval(a)?;
    let fb = eval(b)?;
    let m = 0.5 * (a + b);
    let fm = eval(m)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(&mut eval, a, b, fa, fm, fb, whole, tol, QUAD_MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<E>(
    eval: &mut E,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64>
where
    E: FnMut(f64) -> Result<f64>,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = eval(lm)?;
    let frm = eval(rm)?;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::ToleranceNotReached { tol });
    }
    Ok(
        simpson_rec(eval, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
            + simpson_rec(eval, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?,
    )
}

/// Solve `f(z) = target` for strictly monotone `f` by bisection on `[lo, hi]`.
pub fn invert_monotone<F>(f: F, target: f64, lo: f64, hi: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let g = |z: f64| f(z) - target;
    let (mut a, mut b) = (lo, hi);
    let (ga, gb) = (g(a), g(b));
    if ga.abs() <= tol {
        return Ok(a);
    }
    if gb.abs() <= tol {
        return Ok(b);
    }
    if !(ga.is_finite() && gb.is_finite()) || ga.signum() == gb.signum() {
        return Err(Error::BracketInvalid { lo, hi });
    }
    let increasing = gb > ga;
    for _ in 0..2000 {
        let m = 0.5 * (a + b);
        if m <= a.min(b) || m >= a.max(b) {
            return Ok(m);
        }
        let gm = g(m);
        if gm.abs() <= tol {
            return Ok(m);
        }
        if (gm < 0.0) == increasing {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

type Rule = Arc<(Vec<f64>, Vec<f64>)>;

/// Gauss-Hermite rule for the weight `exp(-x^2)`: `n` nodes and weights.
pub fn gauss_hermite(n: usize) -> Arc<(Vec<f64>, Vec<f64>)> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Rule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().expect("quadrature cache poisoned").get(&n) {
        return Arc::clone(rule);
    }
    let rule = Arc::new(gauss_hermite_nodes(n));
    cache
        .lock()
        .expect("quadrature cache poisoned")
        .insert(n, Arc::clone(&rule));
    rule
}

// Newton iteration on the orthonormal Hermite recurrence with the usual
// asymptotic initial guesses.
fn gauss_hermite_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Hermite rule needs at least one node");
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = (j + 1) as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    // Nodes ascending.
    x.reverse();
    w.reverse();
    (x, w)
}
