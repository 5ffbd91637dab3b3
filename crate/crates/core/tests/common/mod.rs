//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// W1 between finite measures by enumerating every basic solution of the
/// transportation polytope: each vertex is supported on `m + n − 1` cells,
/// so trying every such cell subset and keeping the feasible ones finds the
/// LP optimum.
pub fn brute_force_w1(p: &[(Vec<f64>, f64)], q: &[(Vec<f64>, f64)]) -> f64 {
    let (m, n) = (p.len(), q.len());
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let cost = |i: usize, j: usize| -> f64 {
        p[i].0
            .iter()
            .zip(&q[j].0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let rhs = DVector::from_iterator(m + n, p.iter().map(|a| a.1).chain(q.iter().map(|b| b.1)));
    let k = m + n - 1;
    let mut best = f64::INFINITY;
    for subset in combinations(cells.len(), k) {
        let a = DMatrix::from_fn(m + n, k, |r, c| {
            let (i, j) = cells[subset[c]];
            if (r < m && r == i) || (r >= m && r - m == j) {
                1.0
            } else {
                0.0
            }
        });
        let Ok(x) = a.clone().svd(true, true).solve(&rhs, 1e-12) else {
            continue;
        };
        if (&a * &x - &rhs).amax() > 1e-10 || x.iter().any(|v| *v < -1e-12) {
            continue;
        }
        let c: f64 = subset
            .iter()
            .zip(x.iter())
            .map(|(&s, &f)| {
                let (i, j) = cells[s];
                f * cost(i, j)
            })
            .sum();
        best = best.min(c);
    }
    best
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// `e^{M(t − t0)} z0` on a grid.
pub fn linear_reference(m: &DMatrix<f64>, z0: &DVector<f64>, times: &[f64]) -> Vec<DVector<f64>> {
    times.iter().map(|t| (m * (t - times[0])).exp() * z0).collect()
}

/// For `ẍ + c1 ẋ + a(x − x̄) = 0`, the state `(x − x̄, ẋ)` evolves by this matrix.
pub fn damped_oscillator(a: f64, c1: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -a, -c1])
}

/// Least-squares slope of `ln w` against the index, over entries above `floor`.
pub fn log_slope(w: &[f64], floor: f64) -> f64 {
    let pts: Vec<(f64, f64)> = w
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > floor)
        .map(|(i, v)| (i as f64, v.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
