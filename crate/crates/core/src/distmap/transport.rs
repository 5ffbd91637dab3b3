//! Exact balanced transportation problem by the transportation (network)
//! simplex method: north-west corner start, dual potentials on the basis tree,
//! and cycle pivots.

use nalgebra::DMatrix;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub cost: f64,
    /// Nonzero entries `(source, sink, mass)` in the original indexing.
    pub flows: Vec<(usize, usize, f64)>,
}

/// Minimum-cost coupling between `supply` and `demand` under `cost`.
///
/// Both marginals must be nonnegative with (numerically) equal totals. Zero-mass
/// sources and sinks are dropped before solving.
pub fn solve(supply: &[f64], demand: &[f64], cost: &DMatrix<f64>) -> Result<TransportPlan> {
    if cost.nrows() != supply.len() || cost.ncols() != demand.len() {
        return Err(Error::TransportFailed(format!(
            "cost matrix is {}x{} but marginals have {} and {} entries",
            cost.nrows(),
            cost.ncols(),
            supply.len(),
            demand.len()
        )));
    }
    if supply.iter().chain(demand).any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::TransportFailed("negative or non-finite mass".into()));
    }
    let rows: Vec<usize> = (0..supply.len()).filter(|&i| supply[i] > 0.0).collect();
    let cols: Vec<usize> = (0..demand.len()).filter(|&j| demand[j] > 0.0).collect();
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::TransportFailed("empty marginal".into()));
    }
    let total_s: f64 = rows.iter().map(|&i| supply[i]).sum();
    let total_d: f64 = cols.iter().map(|&j| demand[j]).sum();
    if (total_s - total_d).abs() > 1e-9 * total_s.max(total_d) {
        return Err(Error::TransportFailed(format!(
            "unbalanced marginals: {total_s} vs {total_d}"
        )));
    }
    let a: Vec<f64> = rows.iter().map(|&i| supply[i]).collect();
    let b: Vec<f64> = cols.iter().map(|&j| demand[j] * total_s / total_d).collect();
    let c = DMatrix::from_fn(rows.len(), cols.len(), |i, j| cost[(rows[i], cols[j])]);
    if c.iter().any(|x| !x.is_finite()) {
        return Err(Error::TransportFailed("non-finite cost".into()));
    }

    let flow = Simplex::new(a, b, c.clone()).run()?;
    let mut plan = TransportPlan {
        cost: 0.0,
        flows: Vec::new(),
    };
    for (i, j, x) in flow {
        if x > 0.0 {
            plan.cost += x * c[(i, j)];
            plan.flows.push((rows[i], cols[j], x));
        }
    }
    Ok(plan)
}

struct Simplex {
    m: usize,
    n: usize,
    cost: DMatrix<f64>,
    /// Basic cells and their flows; always exactly `m + n - 1` entries.
    basis: Vec<(usize, usize, f64)>,
    is_basic: DMatrix<bool>,
}

impl Simplex {
    fn new(mut a: Vec<f64>, mut b: Vec<f64>, cost: DMatrix<f64>) -> Self {
        let (m, n) = (a.len(), b.len());
        // North-west corner. Advancing exactly one index per cell keeps the
        // staircase a spanning tree even when row and column empty together.
        let mut basis = Vec::with_capacity(m + n - 1);
        let mut is_basic = DMatrix::from_element(m, n, false);
        let (mut i, mut j) = (0, 0);
        loop {
            let x = a[i].min(b[j]);
            basis.push((i, j, x));
            is_basic[(i, j)] = true;
            a[i] -= x;
            b[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if j == n - 1 || (i < m - 1 && a[i] <= b[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self {
            m,
            n,
            cost,
            basis,
            is_basic,
        }
    }

    fn potentials(&self) -> (Vec<f64>, Vec<f64>) {
        let (m, n) = (self.m, self.n);
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); m + n];
        for (k, &(i, j, _)) in self.basis.iter().enumerate() {
            adj[i].push(k);
            adj[m + j].push(k);
        }
        let mut pot = vec![f64::NAN; m + n];
        pot[0] = 0.0;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            for &k in &adj[node] {
                let (i, j, _) = self.basis[k];
                let c = self.cost[(i, j)];
                if node < m {
                    if pot[m + j].is_nan() {
                        pot[m + j] = c - pot[i];
                        stack.push(m + j);
                    }
                } else if pot[i].is_nan() {
                    pot[i] = c - pot[m + j];
                    stack.push(i);
                }
            }
        }
        let v = pot.split_off(m);
        (pot, v)
    }

    /// Basis indices along the tree path from column node `j` to row node `i`.
    fn tree_path(&self, i: usize, j: usize) -> Vec<usize> {
        let (m, n) = (self.m, self.n);
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); m + n];
        for (k, &(r, c, _)) in self.basis.iter().enumerate() {
            adj[r].push(k);
            adj[m + c].push(k);
        }
        let start = m + j;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; m + n];
        let mut seen = vec![false; m + n];
        seen[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            if node == i {
                break;
            }
            for &k in &adj[node] {
                let (r, c, _) = self.basis[k];
                let other = if node < m { m + c } else { r };
                if !seen[other] {
                    seen[other] = true;
                    parent[other] = Some((node, k));
                    queue.push_back(other);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = i;
        while node != start {
            let (prev, k) = parent[node].expect("basis is a spanning tree");
            path.push(k);
            node = prev;
        }
        path.reverse();
        path
    }

    fn run(mut self) -> Result<Vec<(usize, usize, f64)>> {
        let (m, n) = (self.m, self.n);
        let scale = 1.0 + self.cost.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
        let eps = 1e-12 * scale;
        let budget = 50 * (m + n) * (m + n) + 1000;
        let mut degenerate_run = 0usize;
        for _ in 0..budget {
            let (u, v) = self.potentials();
            let bland = degenerate_run > m + n;
            let mut entering: Option<(usize, usize, f64)> = None;
            // Index loops: (i, j) address the cost matrix, the basis mask and both potentials.
            #[allow(clippy::needless_range_loop)]
            'scan: for i in 0..m {
                for j in 0..n {
                    if self.is_basic[(i, j)] {
                        continue;
                    }
                    let r = self.cost[(i, j)] - u[i] - v[j];
                    if r < -eps {
                        if bland {
                            entering = Some((i, j, r));
                            break 'scan;
                        }
                        if entering.is_none_or(|(_, _, best)| r < best) {
                            entering = Some((i, j, r));
                        }
                    }
                }
            }
            let Some((ei, ej, _)) = entering else {
                return Ok(self.basis);
            };
            let path = self.tree_path(ei, ej);
            // Path edges alternate sign starting with a decrease on the edge
            // that shares column `ej` with the entering cell.
            let mut theta = f64::INFINITY;
            let mut leave = usize::MAX;
            for (pos, &k) in path.iter().enumerate() {
                if pos % 2 == 0 && self.basis[k].2 < theta {
                    theta = self.basis[k].2;
                    leave = k;
                }
            }
            for (pos, &k) in path.iter().enumerate() {
                if pos % 2 == 0 {
                    self.basis[k].2 = (self.basis[k].2 - theta).max(0.0);
                } else {
                    self.basis[k].2 += theta;
                }
            }
            degenerate_run = if theta == 0.0 { degenerate_run + 1 } else { 0 };
            let (li, lj, _) = self.basis[leave];
            self.is_basic[(li, lj)] = false;
            self.is_basic[(ei, ej)] = true;
            self.basis[leave] = (ei, ej, theta);
        }
        Err(Error::TransportFailed(format!(
            "no optimal basis after {budget} pivots"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_source_is_direct() {
        let cost = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        let plan = solve(&[1.0], &[0.5, 0.5], &cost).unwrap();
        assert_abs_diff_eq!(plan.cost, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn shifted_line_measures() {
        // Three equal atoms on {0,1,2} vs {1,2,3}: every unit moves by one.
        let cost = DMatrix::from_fn(3, 3, |i, j| (i as f64 - (j as f64 + 1.0)).abs());
        let w = [1.0 / 3.0; 3];
        let plan = solve(&w, &w, &cost).unwrap();
        assert_abs_diff_eq!(plan.cost, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn marginals_are_respected() {
        let supply = [0.1, 0.4, 0.2, 0.3];
        let demand = [0.25, 0.25, 0.5];
        let cost = DMatrix::from_fn(4, 3, |i, j| ((i * 7 + j * 3) % 5) as f64);
        let plan = solve(&supply, &demand, &cost).unwrap();
        let mut rows = [0.0; 4];
        let mut cols = [0.0; 3];
        for &(i, j, x) in &plan.flows {
            rows[i] += x;
            cols[j] += x;
        }
        for i in 0..4 {
            assert_abs_diff_eq!(rows[i], supply[i], epsilon = 1e-12);
        }
        for j in 0..3 {
            assert_abs_diff_eq!(cols[j], demand[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn unbalanced_is_rejected() {
        let cost = DMatrix::zeros(1, 1);
        assert!(solve(&[1.0], &[0.5], &cost).is_err());
    }
}
