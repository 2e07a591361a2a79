//! Transportation-problem network simplex with northwest-corner start and
//! tree-based dual potentials.

use crate::{Error, Result};

/// Optimal vertex of a transportation problem with its dual certificate.
#[derive(Clone, Debug)]
pub struct TransportSolution {
    /// Cells `(i, j, flow)` with positive flow.
    pub flows: Vec<(usize, usize, f64)>,
    /// Row potentials.
    pub u: Vec<f64>,
    /// Column potentials; `u_i + v_j ≤ c_ij` everywhere.
    pub v: Vec<f64>,
    pub cost: f64,
    pub pivots: usize,
}

impl TransportSolution {
    /// `Σ u_i a_i + Σ v_j b_j`.
    pub fn dual_value(&self, supply: &[f64], demand: &[f64]) -> f64 {
        self.u.iter().zip(supply).map(|(a, b)| a * b).sum::<f64>()
            + self.v.iter().zip(demand).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Minimizes `Σ c_ij π_ij` over couplings of `supply` and `demand`; `cost` is row-major `m × n`.
pub fn solve_transport(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<TransportSolution> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 || cost.len() != m * n {
        return Err(Error::arg("transport problem dimensions inconsistent"));
    }
    if supply.iter().chain(demand).any(|&a| !(a >= 0.0) || !a.is_finite()) {
        return Err(Error::arg("marginals must be finite and nonnegative"));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::arg("costs must be finite"));
    }
    let (sa, sb) = (supply.iter().sum::<f64>(), demand.iter().sum::<f64>());
    if (sa - sb).abs() > 1e-9 * sa.max(sb).max(1.0) {
        return Err(Error::MassMismatch(sa, sb));
    }
    let rows: Vec<usize> = (0..m).filter(|&i| supply[i] > 0.0).collect();
    let cols: Vec<usize> = (0..n).filter(|&j| demand[j] > 0.0).collect();
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::arg("marginals carry no mass"));
    }
    let sub_cost: Vec<f64> = rows.iter().flat_map(|&i| cols.iter().map(move |&j| cost[i * n + j])).collect();
    let sub_a: Vec<f64> = rows.iter().map(|&i| supply[i]).collect();
    let sub_b: Vec<f64> = cols.iter().map(|&j| demand[j]).collect();
    let core = simplex(&sub_a, &sub_b, &sub_cost)?;

    let mut u = vec![f64::NAN; m];
    let mut v = vec![f64::NAN; n];
    for (k, &i) in rows.iter().enumerate() {
        u[i] = core.u[k];
    }
    for (k, &j) in cols.iter().enumerate() {
        v[j] = core.v[k];
    }
    // Extend potentials to null rows and columns by c-transforms, keeping feasibility.
    for j in 0..n {
        if v[j].is_nan() {
            v[j] = rows.iter().map(|&i| cost[i * n + j] - u[i]).fold(f64::INFINITY, f64::min);
        }
    }
    for i in 0..m {
        if u[i].is_nan() {
            u[i] = (0..n).map(|j| cost[i * n + j] - v[j]).fold(f64::INFINITY, f64::min);
        }
    }
    let flows: Vec<(usize, usize, f64)> = core
        .flows
        .iter()
        .filter(|c| c.2 > 0.0)
        .map(|&(i, j, f)| (rows[i], cols[j], f))
        .collect();
    let cost_value = flows.iter().map(|&(i, j, f)| f * cost[i * n + j]).sum();
    Ok(TransportSolution { flows, u, v, cost: cost_value, pivots: core.pivots })
}

struct Core {
    flows: Vec<(usize, usize, f64)>,
    u: Vec<f64>,
    v: Vec<f64>,
    pivots: usize,
}

fn simplex(a: &[f64], b: &[f64], c: &[f64]) -> Result<Core> {
    let (m, n) = (a.len(), b.len());
    let nodes = m + n;
    // Northwest-corner basis, m + n − 1 cells including degenerate ones.
    let mut basis: Vec<(usize, usize, f64)> = Vec::with_capacity(nodes - 1);
    {
        let (mut s, mut d) = (a.to_vec(), b.to_vec());
        let (mut i, mut j) = (0, 0);
        loop {
            let x = s[i].min(d[j]).max(0.0);
            basis.push((i, j, x));
            s[i] -= x;
            d[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if i == m - 1 {
                j += 1;
            } else if j == n - 1 || s[i] <= d[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
    }
    let scale = c.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1e-300);
    let eps = 1e-12 * scale;
    let total = m * n;
    let block = ((total as f64).sqrt() as usize * 4).max(64).min(total);

    let mut pot = vec![0.0; nodes];
    let mut parent = vec![usize::MAX; nodes];
    let mut parent_edge = vec![usize::MAX; nodes];
    let mut depth = vec![0usize; nodes];
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nodes];
    let mut queue = Vec::with_capacity(nodes);
    let mut start = 0usize;
    let mut pivots = 0usize;
    let mut degenerate_run = 0usize;
    let max_pivots = 50 * nodes * nodes + 10_000;

    loop {
        // Tree structure and potentials.
        for l in adj.iter_mut() {
            l.clear();
        }
        for (e, &(i, j, _)) in basis.iter().enumerate() {
            adj[i].push((m + j, e));
            adj[m + j].push((i, e));
        }
        parent.iter_mut().for_each(|p| *p = usize::MAX);
        queue.clear();
        queue.push(0);
        parent[0] = 0;
        pot[0] = 0.0;
        depth[0] = 0;
        let mut head = 0;
        while head < queue.len() {
            let u = queue[head];
            head += 1;
            for &(w, e) in &adj[u] {
                if parent[w] == usize::MAX {
                    parent[w] = u;
                    parent_edge[w] = e;
                    depth[w] = depth[u] + 1;
                    let (i, j, _) = basis[e];
                    pot[w] = c[i * n + j] - pot[u];
                    queue.push(w);
                }
            }
        }
        if queue.len() != nodes {
            return Err(Error::Solver("basis is not a spanning tree".into()));
        }

        // Pricing.
        let bland = degenerate_run > nodes;
        let mut entering: Option<(usize, f64)> = None;
        if bland {
            for cell in 0..total {
                let (i, j) = (cell / n, cell % n);
                let r = c[cell] - pot[i] - pot[m + j];
                if r < -eps {
                    entering = Some((cell, r));
                    break;
                }
            }
        } else {
            let mut scanned = 0;
            let mut pos = start;
            while scanned < total {
                let end = (pos + block).min(total);
                for cell in pos..end {
                    let (i, j) = (cell / n, cell % n);
                    let r = c[cell] - pot[i] - pot[m + j];
                    if r < -eps && entering.is_none_or(|(_, best)| r < best) {
                        entering = Some((cell, r));
                    }
                }
                scanned += end - pos;
                pos = if end == total { 0 } else { end };
                if entering.is_some() {
                    break;
                }
            }
            start = pos;
        }
        let Some((cell, _)) = entering else {
            let u = pot[..m].to_vec();
            let v = pot[m..].to_vec();
            return Ok(Core { flows: basis, u, v, pivots });
        };
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::Solver("network simplex iteration limit".into()));
        }
        let (ei, ej) = (cell / n, cell % n);

        // Cycle: column ej up to the common ancestor, then down to row ei.
        let mut up_col = Vec::new();
        let mut up_row = Vec::new();
        let (mut x, mut y) = (m + ej, ei);
        while depth[x] > depth[y] {
            up_col.push(parent_edge[x]);
            x = parent[x];
        }
        while depth[y] > depth[x] {
            up_row.push(parent_edge[y]);
            y = parent[y];
        }
        while x != y {
            up_col.push(parent_edge[x]);
            x = parent[x];
            up_row.push(parent_edge[y]);
            y = parent[y];
        }
        up_row.reverse();
        let cycle: Vec<usize> = up_col.into_iter().chain(up_row).collect();

        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (k, &e) in cycle.iter().enumerate() {
            if k % 2 == 0 {
                let f = basis[e].2;
                let better = if bland {
                    f < theta || (f == theta && (basis[e].0, basis[e].1) < (basis[leave].0, basis[leave].1))
                } else {
                    f < theta
                };
                if better {
                    theta = f;
                    leave = e;
                }
            }
        }
        for (k, &e) in cycle.iter().enumerate() {
            if k % 2 == 0 {
                basis[e].2 = (basis[e].2 - theta).max(0.0);
            } else {
                basis[e].2 += theta;
            }
        }
        basis[leave] = (ei, ej, theta);
        if theta > 0.0 {
            degenerate_run = 0;
        } else {
            degenerate_run += 1;
        }
    }
}

/// Cost of the northwest-corner plan; optimal when `cost` is a Monge array.
pub fn northwest_corner_cost(supply: &[f64], demand: &[f64], cost: &[f64]) -> f64 {
    let n = demand.len();
    let (mut s, mut d) = (supply.to_vec(), demand.to_vec());
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    while i < s.len() && j < n {
        let x = s[i].min(d[j]).max(0.0);
        total += x * cost[i * n + j];
        s[i] -= x;
        d[j] -= x;
        if s[i] <= d[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute force over vertices of a 2×3 transportation polytope by gridding the free cells.
    fn brute_2x3(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        let steps = 400;
        for s0 in 0..=steps {
            for s1 in 0..=steps {
                let x00 = b[0].min(a[0]) * s0 as f64 / steps as f64;
                let x01 = b[1].min(a[0] - x00).max(0.0) * s1 as f64 / steps as f64;
                let x02 = a[0] - x00 - x01;
                let (x10, x11, x12) = (b[0] - x00, b[1] - x01, b[2] - x02);
                if [x02, x10, x11, x12].iter().any(|v| *v < -1e-12) {
                    continue;
                }
                let v = x00 * c[0] + x01 * c[1] + x02 * c[2] + x10 * c[3] + x11 * c[4] + x12 * c[5];
                best = best.min(v);
            }
        }
        best
    }

    #[test]
    fn northwest_corner_is_optimal_on_the_line() {
        let x: Vec<f64> = (0..7).map(|i| i as f64 * 0.5).collect();
        let cost: Vec<f64> = x.iter().flat_map(|a| x.iter().map(move |b| (a - b).abs().powf(2.5))).collect();
        let a = [0.1, 0.0, 0.3, 0.2, 0.1, 0.3, 0.0];
        let b = [0.0, 0.25, 0.05, 0.1, 0.2, 0.1, 0.3];
        let lp = solve_transport(&a, &b, &cost).unwrap().cost;
        assert!((northwest_corner_cost(&a, &b, &cost) - lp).abs() < 1e-12);
    }

    #[test]
    fn three_node_path_example() {
        let d = [0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0];
        let s = solve_transport(&[0.5, 0.5, 0.0], &[0.0, 0.5, 0.5], &d).unwrap();
        assert!((s.cost - 1.0).abs() < 1e-14);
    }

    #[test]
    fn identical_marginals_give_diagonal() {
        let d = [0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0];
        let mu = [0.2, 0.3, 0.5];
        let s = solve_transport(&mu, &mu, &d).unwrap();
        assert_eq!(s.cost, 0.0);
        assert!(s.flows.iter().all(|&(i, j, _)| i == j));
    }

    #[test]
    fn mismatch_is_an_error() {
        assert!(matches!(solve_transport(&[1.0], &[0.5], &[0.0]), Err(Error::MassMismatch(..))));
    }

    #[test]
    fn anti_monge_cost_needs_pivots() {
        let c = [1.0, 0.0, 0.0, 1.0];
        let s = solve_transport(&[0.5, 0.5], &[0.5, 0.5], &c).unwrap();
        assert!(s.cost.abs() < 1e-15);
        assert!(s.pivots > 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn matches_brute_force_2x3(
            a0 in 0.05f64..0.95,
            b in proptest::collection::vec(0.05f64..1.0, 3),
            c in proptest::collection::vec(0.0f64..5.0, 6),
        ) {
            let a = [a0, 1.0 - a0];
            let tb: f64 = b.iter().sum();
            let b: Vec<f64> = b.iter().map(|v| v / tb).collect();
            let s = solve_transport(&a, &b, &c).unwrap();
            let brute = brute_2x3(&a, &b, &c);
            prop_assert!(s.cost <= brute + 1e-12);
            prop_assert!(s.cost >= brute - 0.05);
        }

        #[test]
        fn primal_dual_certificate(
            a in proptest::collection::vec(0.0f64..1.0, 1..12),
            b in proptest::collection::vec(0.0f64..1.0, 1..12),
            seed in 0u64..1000,
        ) {
            let ta: f64 = a.iter().sum();
            let tb: f64 = b.iter().sum();
            prop_assume!(ta > 1e-3 && tb > 1e-3);
            let a: Vec<f64> = a.iter().map(|v| v / ta).collect();
            let b: Vec<f64> = b.iter().map(|v| v / tb).collect();
            let (m, n) = (a.len(), b.len());
            let c: Vec<f64> = (0..m * n).map(|k| (((k as u64 + 1) * (seed + 7)) % 97) as f64 / 10.0).collect();
            let s = solve_transport(&a, &b, &c).unwrap();
            for i in 0..m {
                let row: f64 = s.flows.iter().filter(|f| f.0 == i).map(|f| f.2).sum();
                prop_assert!((row - a[i]).abs() < 1e-10);
                for j in 0..n {
                    prop_assert!(s.u[i] + s.v[j] <= c[i * n + j] + 1e-9);
                }
            }
            for j in 0..n {
                let col: f64 = s.flows.iter().filter(|f| f.1 == j).map(|f| f.2).sum();
                prop_assert!((col - b[j]).abs() < 1e-10);
            }
            prop_assert!((s.cost - s.dual_value(&a, &b)).abs() < 1e-9);
            prop_assert!(s.flows.len() < m + n);
        }
    }
}
