//! Equilibrium `x̄` with `0 ∈ F_{m_x̄}(x̄)` by repeated minimization: the
//! Picard iteration `x_{k+1} = zer(F_{m_{x_k}})`.

use crate::distmap::Distribution;
use crate::numerics::{is_finite, Vector};
use crate::operators::ClosedLoopProblem;
use crate::{Error, Result};

/// Consecutive expanding outer steps tolerated before giving up.
const EXPANSION_PATIENCE: usize = 10;
/// Ratios are reported only where the distance to `x̄` dominates the error in
/// `x̄` by this factor.
const RATIO_SIGNAL: f64 = 1e9;

#[derive(Debug, Clone)]
pub struct EquilibriumReport {
    pub x_bar: Vector,
    /// `x_0, x_1, …` with the last entry equal to `x_bar`.
    pub iterates: Vec<Vector>,
    /// `‖x_{k+1} − x̄‖ / ‖x_k − x̄‖` above the accuracy floor of `x̄`.
    pub ratios: Vec<f64>,
    pub rho_declared: f64,
    /// `‖F_{m_x̄}(x̄)‖` when `A` is single-valued, else the inner residual.
    pub residual: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// A posteriori bound on `‖x̄_computed − x̄‖`.
    pub error_bound: f64,
}

impl EquilibriumReport {
    /// Largest reported ratio, or 0 when there are none.
    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().copied().fold(0.0, f64::max)
    }
}

/// Zero of `F_m = A + B_m` for a fixed `m`, by forward-backward splitting.
///
/// Returns `u` with `‖u − J_{λA}(u − λB_m(u))‖ / λ ≤ tol`.
pub fn solve_inner(
    problem: &ClosedLoopProblem,
    m: &Distribution,
    x_init: &Vector,
    tol: f64,
    max_iter: usize,
) -> Result<Vector> {
    solve_inner_counted(problem, m, x_init, tol, max_iter).map(|(u, _, _)| u)
}

/// As [`solve_inner`], also returning the residual and iteration count.
pub fn solve_inner_counted(
    problem: &ClosedLoopProblem,
    m: &Distribution,
    x_init: &Vector,
    tol: f64,
    max_iter: usize,
) -> Result<(Vector, f64, usize)> {
    if !(tol > 0.0) {
        return Err(Error::constraint("tol", "must be positive"));
    }
    let lambda = problem.inner_step();
    let mut u = x_init.clone();
    let mut best = (f64::INFINITY, u.clone());
    for it in 0..max_iter.max(1) {
        let next = problem.a.resolvent(lambda, &(&u - problem.b_m(m, &u)? * lambda));
        if !is_finite(&next) {
            return Err(Error::NonFiniteField);
        }
        let residual = (&u - &next).norm() / lambda;
        if residual <= tol {
            return Ok((next, residual, it + 1));
        }
        if residual < best.0 {
            best = (residual, next.clone());
        }
        u = next;
    }
    Err(Error::MaxIterExceeded {
        iterations: max_iter,
        residual: best.0,
        best: best.1,
    })
}

const INNER_MAX_ITER: usize = 100_000;

/// Picard iteration `x_{k+1} = zer(F_{m_{x_k}})` from `x0`.
///
/// With `ρ < 1` the loop stops on the a posteriori Banach test
/// `‖x_{k+1} − x_k‖ ≤ tol·(1−ρ)/max(1,ρ)`. With `ρ ≥ 1` a uniform modulus is
/// required and the loop stops once `‖x_{k+1} − x_k‖ ≤ tol`.
pub fn repeated_minimization(
    problem: &ClosedLoopProblem,
    x0: &Vector,
    tol: f64,
    max_outer: usize,
) -> Result<EquilibriumReport> {
    if !(tol > 0.0) {
        return Err(Error::constraint("tol", "must be positive"));
    }
    let rho = problem.rho();
    let contracting = rho < 1.0;
    if !contracting && problem.modulus.is_none() {
        return Err(Error::ConditionViolated { rho, limit: 1.0 });
    }
    let stop = if contracting {
        tol * (1.0 - rho) / rho.max(1.0)
    } else {
        tol
    };
    let lambda = problem.inner_step();
    let decay = if contracting { rho } else { 1.0 };

    let mut iterates = vec![x0.clone()];
    let mut inner_total = 0usize;
    let mut inner_tol = tol * 0.1;
    let mut last_step = f64::INFINITY;
    let mut expanding = 0usize;
    let mut last_residual = f64::NAN;
    for _ in 0..max_outer {
        let x = iterates.last().expect("non-empty");
        let floor = 8.0 * f64::EPSILON * (1.0 + x.norm()) / lambda;
        let m = problem.map.kernel(x);
        let (next, residual, n) = solve_inner_counted(problem, &m, x, inner_tol.max(floor), INNER_MAX_ITER)?;
        inner_total += n;
        last_residual = residual;
        let step = (&next - x).norm();
        expanding = if step > last_step { expanding + 1 } else { 0 };
        if expanding >= EXPANSION_PATIENCE {
            return Err(Error::NoContraction(expanding));
        }
        last_step = step;
        iterates.push(next);
        inner_tol *= decay;
        if step <= stop {
            return Ok(finish(problem, iterates, rho, last_residual, last_step, inner_total));
        }
    }
    let best = iterates.pop().expect("non-empty");
    Err(Error::MaxIterExceeded {
        iterations: max_outer,
        residual: if last_step.is_finite() { last_step } else { last_residual },
        best,
    })
}

fn finish(
    problem: &ClosedLoopProblem,
    iterates: Vec<Vector>,
    rho: f64,
    inner_residual: f64,
    last_step: f64,
    inner_iterations: usize,
) -> EquilibriumReport {
    let x_bar = iterates.last().expect("non-empty").clone();
    let residual = problem
        .closed_loop_field(&x_bar)
        .map(|f| f.norm())
        .unwrap_or(inner_residual);
    let error_bound = if rho < 1.0 {
        rho / (1.0 - rho) * last_step + 4.0 * f64::EPSILON * x_bar.norm()
    } else {
        f64::NAN
    };
    let floor = if error_bound.is_finite() {
        (RATIO_SIGNAL * error_bound).max(1e-14)
    } else {
        1e-14
    };
    let ratios = contraction_diagnostics_above(&iterates[..iterates.len() - 1], &x_bar, floor);
    EquilibriumReport {
        x_bar,
        outer_iterations: iterates.len() - 1,
        iterates,
        ratios,
        rho_declared: rho,
        residual,
        inner_iterations,
        error_bound,
    }
}

/// `‖x_{k+1} − x̄‖ / ‖x_k − x̄‖`, skipping terms whose denominator is below 1e-14.
pub fn contraction_diagnostics(iterates: &[Vector], x_bar: &Vector) -> Result<Vec<f64>> {
    if iterates.len() < 2 {
        return Err(Error::TooFewIterates);
    }
    Ok(ratios_with(iterates, x_bar, |_, den| den >= 1e-14))
}

/// Ratios restricted to pairs whose numerator exceeds `floor`, so that the
/// error of an approximate `x̄` cannot dominate.
pub fn contraction_diagnostics_above(iterates: &[Vector], x_bar: &Vector, floor: f64) -> Vec<f64> {
    ratios_with(iterates, x_bar, |num, den| num > floor && den > floor)
}

fn ratios_with(iterates: &[Vector], x_bar: &Vector, keep: impl Fn(f64, f64) -> bool) -> Vec<f64> {
    iterates
        .windows(2)
        .filter_map(|w| {
            let den = (&w[0] - x_bar).norm();
            let num = (&w[1] - x_bar).norm();
            keep(num, den).then(|| num / den)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distmap::DecisionMap;
    use crate::operators::{MonotoneOracle, RandomField, UniformModulus};
    use approx::assert_abs_diff_eq;
    use nalgebra::{dvector, DMatrix};
    use proptest::prelude::*;

    fn affine(eps: f64) -> ClosedLoopProblem {
        ClosedLoopProblem::new(
            MonotoneOracle::zero(),
            RandomField::affine(2.0, 2.0),
            DecisionMap::dirac_affine(eps, dvector![1.0]),
            2.0,
        )
    }

    #[test]
    fn inner_linear_solve() {
        let p = affine(0.5);
        let u = solve_inner(&p, &Distribution::dirac_1d(1.0), &dvector![0.0], 1e-12, 1000).unwrap();
        assert_abs_diff_eq!(u[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn inner_projected_stationarity() {
        let p = ClosedLoopProblem::new(
            MonotoneOracle::nonnegative_cone(),
            RandomField::new(|x, _| x.add_scalar(1.0), 0.0, 1.0),
            DecisionMap::constant(Distribution::dirac_1d(3.0)),
            1.0,
        );
        let u = solve_inner(&p, &Distribution::dirac_1d(3.0), &dvector![5.0], 1e-12, 1000).unwrap();
        assert_eq!(u[0], 0.0);
    }

    #[test]
    fn inner_at_zero_takes_one_step() {
        let p = affine(0.5);
        let (u, _, n) =
            solve_inner_counted(&p, &Distribution::dirac_1d(1.0), &dvector![0.5], 1e-12, 1000).unwrap();
        assert_eq!(n, 1);
        assert_eq!(u[0], 0.5);
    }

    #[test]
    fn inner_budget_reports_best() {
        let p = affine(0.5);
        let err = solve_inner(&p, &Distribution::dirac_1d(1.0), &dvector![100.0], 1e-15, 3).unwrap_err();
        assert!(matches!(err, Error::MaxIterExceeded { iterations: 3, .. }));
    }

    #[test]
    fn picard_iterates_follow_linear_recursion() {
        let p = affine(0.5);
        let r = repeated_minimization(&p, &dvector![0.0], 1e-13, 200).unwrap();
        let expected = [0.0, 0.5, 0.625, 0.65625];
        for (x, e) in r.iterates.iter().zip(expected) {
            assert_abs_diff_eq!(x[0], e, epsilon = 1e-13);
        }
        assert_abs_diff_eq!(r.x_bar[0], 2.0 / 3.0, epsilon = 1e-12);
        assert!(!r.ratios.is_empty());
        for q in &r.ratios {
            assert_abs_diff_eq!(*q, 0.25, epsilon = 1e-8);
        }
        assert!(r.residual <= 1e-13);
    }

    #[test]
    fn constant_kernel_converges_in_one_step() {
        let p = ClosedLoopProblem::new(
            MonotoneOracle::zero(),
            RandomField::affine(2.0, 2.0),
            DecisionMap::constant(Distribution::dirac_1d(1.0)),
            2.0,
        );
        let r = repeated_minimization(&p, &dvector![7.0], 1e-12, 50).unwrap();
        assert_abs_diff_eq!(r.iterates[1][0], 0.5, epsilon = 1e-12);
        assert_eq!(r.outer_iterations, 2);
    }

    #[test]
    fn start_at_equilibrium_returns_immediately() {
        let p = affine(0.5);
        let xb = dvector![2.0 / 3.0];
        let r = repeated_minimization(&p, &xb, 1e-12, 50).unwrap();
        assert_eq!(r.outer_iterations, 1);
        assert!(r.ratios.is_empty());
        assert_abs_diff_eq!(r.x_bar[0], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn diagnostics_examples() {
        let xb = dvector![1.0];
        let geo: Vec<Vector> = (0..10).map(|k| dvector![1.0 + 0.5f64.powi(k)]).collect();
        for q in contraction_diagnostics(&geo, &xb).unwrap() {
            assert_abs_diff_eq!(q, 0.5, epsilon = 1e-15);
        }
        assert!(contraction_diagnostics(&[xb.clone(), xb.clone()], &xb).unwrap().is_empty());
        assert!(matches!(contraction_diagnostics(std::slice::from_ref(&xb), &xb), Err(Error::TooFewIterates)));
    }

    #[test]
    fn expanding_map_without_modulus_is_rejected() {
        let p = ClosedLoopProblem::new(
            MonotoneOracle::zero(),
            RandomField::affine(1.0, 1.0),
            DecisionMap::dirac_affine(2.0, dvector![0.0]),
            1.0,
        );
        assert!(matches!(
            repeated_minimization(&p, &dvector![1.0], 1e-10, 50),
            Err(Error::ConditionViolated { .. })
        ));
    }

    #[test]
    fn expanding_map_with_modulus_reports_no_contraction() {
        let p = ClosedLoopProblem::new(
            MonotoneOracle::zero(),
            RandomField::affine(1.0, 1.0),
            DecisionMap::dirac_affine(2.0, dvector![0.0]),
            1.0,
        )
        .with_modulus(UniformModulus::strong(1.0, 1.0));
        assert!(matches!(
            repeated_minimization(&p, &dvector![1.0], 1e-10, 50),
            Err(Error::NoContraction(_))
        ));
    }

    #[test]
    fn gaussian_kernel_and_linear_a() {
        // A = diag(1, 3), B(x, ξ) = x − ξ with ξ ∼ N(0.3 x_1 + 1, 1) on each axis
        // through the mean: x̄ solves (A + I) x = 0.3 x + e.
        let a = MonotoneOracle::linear(DMatrix::from_diagonal(&dvector![1.0, 3.0]));
        let b = RandomField::affine(1.0, 1.0);
        let map = DecisionMap::new(
            |x: &Vector| {
                Distribution::product(vec![
                    Distribution::gaussian(0.3 * x[0] + 1.0, 1.0).unwrap(),
                    Distribution::gaussian(0.3 * x[1] + 1.0, 1.0).unwrap(),
                ])
                .unwrap()
            },
            0.3,
        );
        let p = ClosedLoopProblem::new(a, b, map, 2.0);
        let r = repeated_minimization(&p, &dvector![0.0, 0.0], 1e-11, 200).unwrap();
        assert_abs_diff_eq!(r.x_bar[0], 1.0 / 1.7, epsilon = 1e-10);
        assert_abs_diff_eq!(r.x_bar[1], 1.0 / 3.7, epsilon = 1e-10);
        assert!(r.max_ratio() <= r.rho_declared + 0.05);
    }

    proptest! {
        #[test]
        fn uniqueness_from_distant_starts(a in -20.0f64..20.0, gap in 1.0f64..20.0, eps in -0.9f64..0.9) {
            let p = affine(eps);
            let tol = 1e-11;
            let r1 = repeated_minimization(&p, &dvector![a], tol, 500).unwrap();
            let r2 = repeated_minimization(&p, &dvector![a + gap], tol, 500).unwrap();
            prop_assert!((&r1.x_bar - &r2.x_bar).norm() <= 10.0 * tol);
        }

        #[test]
        fn equilibrium_is_a_fixed_point(a in -20.0f64..20.0, eps in -0.9f64..0.9) {
            let p = affine(eps);
            let tol = 1e-11;
            let r = repeated_minimization(&p, &dvector![a], tol, 500).unwrap();
            let again = solve_inner(&p, &p.map.kernel(&r.x_bar), &r.x_bar, tol, 1000).unwrap();
            prop_assert!((again - &r.x_bar).norm() <= tol);
        }

        #[test]
        fn error_decays_monotonically(a in -20.0f64..20.0, eps in -0.9f64..0.9) {
            let p = affine(eps);
            let r = repeated_minimization(&p, &dvector![a], 1e-11, 500).unwrap();
            let d: Vec<f64> = r.iterates.iter().map(|x| (x - &r.x_bar).norm()).collect();
            for w in d[1..].windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
        }
    }
}
