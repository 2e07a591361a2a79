//! Coupled random walks: exact path-space LP, Markovian dynamic program, Monte Carlo
//! estimators, Markov composition, pathwise coupling certificates and Feynman–Kac sampling.
//!
//! Times are in the semigroup clock: a horizon `t` runs the chain of `L` for time `t`,
//! so the trapezoid weight of a step of length `τ` at a pair state is `τ p k̂`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::Semigroup;
use crate::eulerian::{CheckReport, Entry};
use crate::ot::{northwest_corner_cost, solve_transport};
use crate::space::{CurvatureField, PairTable, Space};
use crate::{Error, Result};

/// Largest number of joint paths the explicit LP may carry.
pub const PATH_LP_LIMIT: usize = 10_000_000;
/// Kernel entries below this are dropped before rows are renormalized.
const KERNEL_FLOOR: f64 = 1e-14;

type Coupling = Vec<(usize, usize, f64)>;

/// Uniform time grid with the transition matrix of one step.
#[derive(Clone, Debug)]
pub struct PathLattice {
    n: usize,
    tau: f64,
    steps: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl PathLattice {
    /// `steps` steps of length `tau`; `steps = 0` allows `tau = 0`.
    pub fn new(space: &Space, tau: f64, steps: usize) -> Result<Self> {
        if !(tau >= 0.0) || !tau.is_finite() || (steps > 0 && tau == 0.0) {
            return Err(Error::arg(format!("step length {tau} invalid for {steps} steps")));
        }
        let n = space.len();
        let rows = if tau > 0.0 {
            let k = Semigroup::heat(space).kernel(tau)?;
            (0..n)
                .map(|x| {
                    let raw: Vec<(usize, f64)> =
                        (0..n).map(|y| (y, k[(x, y)])).filter(|&(_, v)| v > KERNEL_FLOOR).collect();
                    let total: f64 = raw.iter().map(|e| e.1).sum();
                    raw.into_iter().map(|(y, v)| (y, v / total)).collect()
                })
                .collect()
        } else {
            (0..n).map(|x| vec![(x, 1.0)]).collect()
        };
        Ok(PathLattice { n, tau, steps, rows })
    }

    /// Lattice reaching horizon `t` in `steps` steps.
    pub fn horizon(space: &Space, t: f64, steps: usize) -> Result<Self> {
        if !(t >= 0.0) {
            return Err(Error::NegativeTime(t));
        }
        if steps == 0 && t > 0.0 {
            return Err(Error::arg("positive horizon needs at least one step"));
        }
        Self::new(space, if steps == 0 { 0.0 } else { t / steps as f64 }, steps)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Grid times `m τ`.
    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|m| m as f64 * self.tau).collect()
    }

    /// Sparse transition row of `x`.
    pub fn row(&self, x: usize) -> &[(usize, f64)] {
        &self.rows[x]
    }

    /// Law after `m` steps from `mu`.
    pub fn marginal(&self, mu: &[f64], m: usize) -> Vec<f64> {
        let mut cur = mu.to_vec();
        for _ in 0..m {
            let mut next = vec![0.0; self.n];
            for (x, &w) in cur.iter().enumerate() {
                if w != 0.0 {
                    for &(y, p) in &self.rows[x] {
                        next[y] += w * p;
                    }
                }
            }
            cur = next;
        }
        cur
    }

    fn paths(&self, mu: &[f64]) -> Vec<(Vec<usize>, f64)> {
        let mut out: Vec<(Vec<usize>, f64)> =
            mu.iter().enumerate().filter(|e| *e.1 > 0.0).map(|(x, &w)| (vec![x], w)).collect();
        for _ in 0..self.steps {
            let mut next = Vec::with_capacity(out.len() * self.n);
            for (path, w) in &out {
                for &(y, p) in &self.rows[*path.last().unwrap()] {
                    let mut q = path.clone();
                    q.push(y);
                    next.push((q, w * p));
                }
            }
            out = next;
        }
        out
    }
}

/// Trapezoid exponent `τ p (k̂₀/2 + k̂₁ + … + k̂_N/2)` along a pair path.
fn path_exponent(table: &PairTable, tau: f64, p: f64, pairs: impl ExactSizeIterator<Item = (usize, usize)>) -> f64 {
    let last = pairs.len().saturating_sub(1);
    let mut s = 0.0;
    for (m, (x, y)) in pairs.enumerate() {
        let w = if m == 0 || m == last { 0.5 } else { 1.0 };
        s += w * table.get(x, y);
    }
    if last == 0 {
        0.0
    } else {
        tau * p * s
    }
}

/// Explicit joint law of a pair of paths on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledPathLaw {
    pub n: usize,
    pub tau: f64,
    pub paths: Vec<(Vec<(usize, usize)>, f64)>,
}

impl CoupledPathLaw {
    pub fn steps(&self) -> usize {
        self.paths.first().map_or(0, |p| p.0.len() - 1)
    }

    /// Path law of the first (`which = 0`) or second walker.
    pub fn marginal(&self, which: usize) -> BTreeMap<Vec<usize>, f64> {
        let mut out = BTreeMap::new();
        for (path, w) in &self.paths {
            let key: Vec<usize> = path.iter().map(|&(x, y)| if which == 0 { x } else { y }).collect();
            *out.entry(key).or_insert(0.0) += w;
        }
        out
    }

    /// Law of the first `m` steps.
    pub fn restrict(&self, m: usize) -> Result<CoupledPathLaw> {
        if m > self.steps() {
            return Err(Error::arg("restriction beyond the law's horizon"));
        }
        let mut merged: BTreeMap<Vec<(usize, usize)>, f64> = BTreeMap::new();
        for (path, w) in &self.paths {
            *merged.entry(path[..=m].to_vec()).or_insert(0.0) += w;
        }
        Ok(CoupledPathLaw { n: self.n, tau: self.tau, paths: merged.into_iter().collect() })
    }

    /// Law of the pair at step `m`.
    pub fn pair_law(&self, m: usize) -> BTreeMap<(usize, usize), f64> {
        let mut out = BTreeMap::new();
        for (path, w) in &self.paths {
            *out.entry(path[m]).or_insert(0.0) += w;
        }
        out
    }

    /// `E[exp(trapezoid p k̂) d^p(terminal)]`.
    pub fn cost(&self, space: &Space, table: &PairTable, p: f64) -> f64 {
        self.paths
            .iter()
            .map(|(path, w)| {
                let (x, y) = *path.last().unwrap();
                w * path_exponent(table, self.tau, p, path.iter().copied()).exp() * space.d(x, y).powf(p)
            })
            .sum()
    }
}

/// Glues `kernel(x, y)` onto every path of `nu` ending at `(x, y)`.
pub fn markov_compose(
    nu: &CoupledPathLaw,
    mut kernel: impl FnMut(usize, usize) -> Result<CoupledPathLaw>,
) -> Result<CoupledPathLaw> {
    let mut cache: BTreeMap<(usize, usize), CoupledPathLaw> = BTreeMap::new();
    let mut paths = Vec::new();
    let mut tau = nu.tau;
    for (path, w) in &nu.paths {
        let end = *path.last().unwrap();
        if let std::collections::btree_map::Entry::Vacant(slot) = cache.entry(end) {
            let k = kernel(end.0, end.1)?;
            if k.paths.iter().any(|(q, _)| q[0] != end) {
                return Err(Error::arg(format!("kernel at {end:?} does not start at the pair")));
            }
            slot.insert(k);
        }
        let k = &cache[&end];
        if nu.steps() > 0 && k.steps() > 0 && (k.tau - nu.tau).abs() > 1e-12 * nu.tau {
            return Err(Error::StepMismatch(nu.tau, k.tau));
        }
        if nu.steps() == 0 {
            tau = k.tau;
        }
        for (q, v) in &k.paths {
            let mut joined = path.clone();
            joined.extend_from_slice(&q[1..]);
            paths.push((joined, w * v));
        }
    }
    Ok(CoupledPathLaw { n: nu.n, tau, paths })
}

/// Explicit LP size caps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactCaps {
    pub max_nodes: usize,
    pub max_steps: usize,
}

impl Default for ExactCaps {
    fn default() -> Self {
        ExactCaps { max_nodes: 4, max_steps: 3 }
    }
}

/// `Auto` reduces constant tables to terminal transport; `PathLp` always solves the path LP.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExactMode {
    Auto,
    PathLp,
}

#[derive(Clone, Debug)]
pub struct ExactSolution {
    /// `W_p^{k̂}(μ₁, μ₂, t)`.
    pub value: f64,
    /// Optimal joint law when the path LP ran.
    pub law: Option<CoupledPathLaw>,
    pub reduced: bool,
}

fn check_pair(space: &Space, mu1: &[f64], mu2: &[f64], p: f64) -> Result<()> {
    space.check_fn(mu1, "mu1")?;
    space.check_fn(mu2, "mu2")?;
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::arg(format!("p = {p} must lie in [1, inf)")));
    }
    Ok(())
}

fn is_constant(table: &PairTable) -> bool {
    table.max() - table.min() <= 1e-15 * table.max().abs().max(1.0)
}

/// Exact perturbed cost over all joint path laws with the given marginal path laws.
#[allow(clippy::too_many_arguments)]
pub fn perturbed_cost_exact_with(
    space: &Space,
    table: &PairTable,
    mu1: &[f64],
    mu2: &[f64],
    p: f64,
    t: f64,
    steps: usize,
    caps: ExactCaps,
    mode: ExactMode,
) -> Result<ExactSolution> {
    check_pair(space, mu1, mu2, p)?;
    let lattice = PathLattice::horizon(space, t, steps)?;
    if mode == ExactMode::Auto && is_constant(table) {
        // Deterministic weight: the path LP collapses onto the terminal marginals.
        let k = table.get(0, 0);
        let (a, b) = (lattice.marginal(mu1, steps), lattice.marginal(mu2, steps));
        let w = solve_transport(&a, &b, &crate::transport::power_cost(space, p))?.cost.max(0.0);
        let expo = if steps == 0 { 0.0 } else { p * k * t };
        return Ok(ExactSolution { value: (expo.exp() * w).powf(1.0 / p), law: None, reduced: true });
    }
    let n = space.len();
    let joint = (n as f64).powi(2 * (steps as i32 + 1));
    if n > caps.max_nodes || steps > caps.max_steps || joint > PATH_LP_LIMIT as f64 {
        return Err(Error::CapExceeded(format!(
            "path LP with {n} nodes and {steps} steps exceeds caps {caps:?}; use the DP or MC engine"
        )));
    }
    let p1 = lattice.paths(mu1);
    let p2 = lattice.paths(mu2);
    let tau = lattice.tau();
    let mut cost = Vec::with_capacity(p1.len() * p2.len());
    for (a, _) in &p1 {
        for (b, _) in &p2 {
            let e = path_exponent(table, tau, p, a.iter().copied().zip(b.iter().copied()));
            cost.push(e.exp() * space.d(*a.last().unwrap(), *b.last().unwrap()).powf(p));
        }
    }
    let supply: Vec<f64> = p1.iter().map(|e| e.1).collect();
    let demand: Vec<f64> = p2.iter().map(|e| e.1).collect();
    let sol = solve_transport(&supply, &demand, &cost)?;
    let paths = sol
        .flows
        .iter()
        .map(|&(i, j, w)| (p1[i].0.iter().copied().zip(p2[j].0.iter().copied()).collect(), w))
        .collect();
    Ok(ExactSolution {
        value: sol.cost.max(0.0).powf(1.0 / p),
        law: Some(CoupledPathLaw { n, tau, paths }),
        reduced: false,
    })
}

/// Exact perturbed cost with default caps.
pub fn perturbed_cost_exact(
    space: &Space,
    table: &PairTable,
    mu1: &[f64],
    mu2: &[f64],
    p: f64,
    t: f64,
    steps: usize,
) -> Result<f64> {
    Ok(perturbed_cost_exact_with(space, table, mu1, mu2, p, t, steps, ExactCaps::default(), ExactMode::Auto)?.value)
}

/// Backward sweep over Markovian couplings; stage `j` serves every horizon `j τ`.
#[derive(Clone, Debug)]
pub struct DpSolution {
    pub lattice: PathLattice,
    pub p: f64,
    weights: PairTable,
    /// `U_j` for `j = 0..=steps`.
    stages: Vec<Vec<f64>>,
    /// Optimal one-step couplings realizing `Opt(U_j)`, per pair state.
    plans: Vec<Vec<Coupling>>,
}

/// Runs the sweep for `lattice.steps()` stages.
pub fn dp_sweep(space: &Space, table: &PairTable, p: f64, lattice: PathLattice) -> Result<DpSolution> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::arg(format!("p = {p} must lie in [1, inf)")));
    }
    let n = space.len();
    let tau = lattice.tau();
    let weights = table.map(|k| (tau * p * k).exp());
    let mut u0 = vec![0.0; n * n];
    for x in 0..n {
        for y in 0..n {
            u0[x * n + y] = (0.5 * tau * p * table.get(x, y)).exp() * space.d(x, y).powf(p);
        }
    }
    let mut stages = vec![u0];
    let mut plans = Vec::with_capacity(lattice.steps());
    for _ in 0..lattice.steps() {
        let prev = stages.last().unwrap();
        let solved: Vec<(f64, Coupling)> = (0..n * n)
            .into_par_iter()
            .map(|s| one_step_opt(&lattice, prev, s / n, s % n))
            .collect::<Result<_>>()?;
        let next = solved.iter().enumerate().map(|(s, (v, _))| weights.get(s / n, s % n) * v).collect();
        plans.push(solved.into_iter().map(|e| e.1).collect());
        stages.push(next);
    }
    Ok(DpSolution { lattice, p, weights, stages, plans })
}

/// `min_π Σ π U` over couplings of the rows of `x` and `y`.
fn one_step_opt(lattice: &PathLattice, u: &[f64], x: usize, y: usize) -> Result<(f64, Coupling)> {
    let n = lattice.len();
    let (rx, ry) = (lattice.row(x), lattice.row(y));
    if x == y && u[x * n + x] == 0.0 && rx.iter().all(|&(z, _)| u[z * n + z] == 0.0) {
        return Ok((0.0, rx.iter().map(|&(z, w)| (z, z, w)).collect()));
    }
    let a: Vec<f64> = rx.iter().map(|e| e.1).collect();
    let b: Vec<f64> = ry.iter().map(|e| e.1).collect();
    let c: Vec<f64> = rx.iter().flat_map(|&(i, _)| ry.iter().map(move |&(j, _)| u[i * n + j])).collect();
    let sol = solve_transport(&a, &b, &c)?;
    Ok((sol.cost, sol.flows.into_iter().map(|(i, j, w)| (rx[i].0, ry[j].0, w)).collect()))
}

impl DpSolution {
    fn terminal(&self, horizon: usize) -> Result<Vec<f64>> {
        if horizon >= self.stages.len() {
            return Err(Error::arg(format!("horizon {horizon} beyond the sweep's {} stages", self.stages.len() - 1)));
        }
        let n = self.lattice.len();
        let tau = self.lattice.tau();
        let mut v = self.stages[horizon].clone();
        for (s, val) in v.iter_mut().enumerate() {
            *val *= (-0.5 * tau * self.p * self.weights_k(s / n, s % n)).exp();
        }
        Ok(v)
    }

    fn weights_k(&self, x: usize, y: usize) -> f64 {
        let tau = self.lattice.tau();
        if tau == 0.0 {
            0.0
        } else {
            self.weights.get(x, y).ln() / (tau * self.p)
        }
    }

    /// Optimal initial coupling and the `p`-th power of the cost at `horizon` steps.
    fn initial(&self, mu1: &[f64], mu2: &[f64], horizon: usize) -> Result<(f64, Coupling)> {
        let v = self.terminal(horizon)?;
        let sol = solve_transport(mu1, mu2, &v)?;
        Ok((sol.cost.max(0.0), sol.flows))
    }

    /// Markovian upper bound on `W_p^{k̂}` at `horizon` steps.
    pub fn value(&self, mu1: &[f64], mu2: &[f64], horizon: usize) -> Result<f64> {
        Ok(self.initial(mu1, mu2, horizon)?.0.powf(1.0 / self.p))
    }

    /// Values for horizons `0..=steps`.
    pub fn curve(&self, mu1: &[f64], mu2: &[f64]) -> Result<Vec<f64>> {
        (0..self.stages.len()).map(|m| self.value(mu1, mu2, m)).collect()
    }

    /// Policy attaining the DP value at `horizon` steps.
    pub fn policy(&self, mu1: &[f64], mu2: &[f64], horizon: usize) -> Result<CouplingPolicy> {
        let (_, initial) = self.initial(mu1, mu2, horizon)?;
        let steps = (0..horizon).map(|m| self.plans[horizon - 1 - m].clone()).collect();
        Ok(CouplingPolicy { n: self.lattice.len(), tau: self.lattice.tau(), initial, steps })
    }

    /// One-step couplings minimizing the terminal-weighted cost, per pair state.
    pub fn one_step_plans(&self) -> Option<&[Coupling]> {
        self.plans.first().map(|v| v.as_slice())
    }
}

/// Markovian upper bound on the perturbed cost.
pub fn perturbed_cost_dp(
    space: &Space,
    table: &PairTable,
    mu1: &[f64],
    mu2: &[f64],
    p: f64,
    t: f64,
    steps: usize,
) -> Result<f64> {
    check_pair(space, mu1, mu2, p)?;
    let dp = dp_sweep(space, table, p, PathLattice::horizon(space, t, steps)?)?;
    dp.value(mu1, mu2, steps)
}

/// Initial pair law and per-step, per-pair-state one-step couplings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CouplingPolicy {
    pub n: usize,
    pub tau: f64,
    pub initial: Coupling,
    /// `steps[m][x n + y]` couples the rows of `x` and `y` at step `m`.
    pub steps: Vec<Vec<Coupling>>,
}

impl CouplingPolicy {
    /// Product couplings throughout.
    pub fn independent(lattice: &PathLattice, mu1: &[f64], mu2: &[f64]) -> Self {
        let n = lattice.len();
        let product = |a: &[(usize, f64)], b: &[(usize, f64)]| -> Coupling {
            a.iter().flat_map(|&(i, u)| b.iter().map(move |&(j, v)| (i, j, u * v))).collect()
        };
        let s1: Vec<(usize, f64)> = mu1.iter().copied().enumerate().filter(|e| e.1 > 0.0).collect();
        let s2: Vec<(usize, f64)> = mu2.iter().copied().enumerate().filter(|e| e.1 > 0.0).collect();
        let step: Vec<Coupling> =
            (0..n * n).map(|s| product(lattice.row(s / n), lattice.row(s % n))).collect();
        CouplingPolicy { n, tau: lattice.tau(), initial: product(&s1, &s2), steps: vec![step; lattice.steps()] }
    }

    /// Exact joint path law generated by the policy.
    pub fn law(&self) -> CoupledPathLaw {
        let mut paths: Vec<(Vec<(usize, usize)>, f64)> =
            self.initial.iter().map(|&(x, y, w)| (vec![(x, y)], w)).collect();
        for step in &self.steps {
            let mut next = Vec::new();
            for (path, w) in &paths {
                let (x, y) = *path.last().unwrap();
                for &(a, b, v) in &step[x * self.n + y] {
                    let mut q = path.clone();
                    q.push((a, b));
                    next.push((q, w * v));
                }
            }
            paths = next;
        }
        CoupledPathLaw { n: self.n, tau: self.tau, paths }
    }

    fn sample_path(&self, rng: &mut ChaCha8Rng, cum_init: &[f64], cums: &[Vec<Vec<f64>>]) -> Vec<(usize, usize)> {
        let pick = |rng: &mut ChaCha8Rng, cum: &[f64]| -> usize {
            let u = rng.random::<f64>() * cum.last().copied().unwrap_or(0.0);
            cum.partition_point(|&c| c <= u).min(cum.len() - 1)
        };
        let i = pick(rng, cum_init);
        let mut state = (self.initial[i].0, self.initial[i].1);
        let mut path = Vec::with_capacity(self.steps.len() + 1);
        path.push(state);
        for (m, step) in self.steps.iter().enumerate() {
            let s = state.0 * self.n + state.1;
            let k = pick(rng, &cums[m][s]);
            let e = step[s][k];
            state = (e.0, e.1);
            path.push(state);
        }
        path
    }

    fn cumulative(&self) -> (Vec<f64>, Vec<Vec<Vec<f64>>>) {
        let cum = |c: &Coupling| -> Vec<f64> {
            let mut acc = 0.0;
            c.iter().map(|e| {
                acc += e.2;
                acc
            })
            .collect()
        };
        let init = cum(&self.initial);
        let steps = self.steps.iter().map(|st| st.iter().map(cum).collect()).collect();
        (init, steps)
    }

    /// Samples `samples` pair paths with one ChaCha stream per path index.
    pub fn sample(&self, samples: usize, seed: u64) -> Vec<Vec<(usize, usize)>> {
        let (ci, cs) = self.cumulative();
        (0..samples)
            .into_par_iter()
            .map(|i| {
                let mut rng = path_rng(seed, i as u64);
                self.sample_path(&mut rng, &ci, &cs)
            })
            .collect()
    }
}

fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Sample mean and standard error of `E[exp(trapezoid p k̂) d^p]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl McEstimate {
    fn from_values(values: &[f64]) -> Self {
        let s = values.len() as f64;
        let mean = values.iter().sum::<f64>() / s;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (s - 1.0)
        } else {
            0.0
        };
        McEstimate { mean, std_err: (var / s).sqrt(), samples: values.len() }
    }

    /// Cost `mean^{1/p}` with a delta-method standard error.
    pub fn cost(&self, p: f64) -> (f64, f64) {
        let v = self.mean.max(0.0).powf(1.0 / p);
        let se = if v > 0.0 { self.std_err * v / (p * self.mean) } else { 0.0 };
        (v, se)
    }
}

/// Monte Carlo estimate of the cost of a coupling policy.
pub fn perturbed_cost_mc(
    space: &Space,
    table: &PairTable,
    policy: &CouplingPolicy,
    p: f64,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if samples == 0 {
        return Err(Error::arg("Monte Carlo needs at least one sample"));
    }
    if policy.n != space.len() {
        return Err(Error::arg("policy size differs from space size"));
    }
    let paths = policy.sample(samples, seed);
    let values: Vec<f64> = paths
        .par_iter()
        .map(|path| {
            let (x, y) = *path.last().unwrap();
            path_exponent(table, policy.tau, p, path.iter().copied()).exp() * space.d(x, y).powf(p)
        })
        .collect();
    Ok(McEstimate::from_values(&values))
}

/// Nonincrease of the perturbed cost over a `t`-grid of multiples of `t_max/steps`;
/// exact for constant tables, the Markovian upper bound otherwise.
#[allow(clippy::too_many_arguments)]
pub fn check_pte(
    space: &Space,
    table: &PairTable,
    mu1: &[f64],
    mu2: &[f64],
    p: f64,
    ts: &[f64],
    steps: usize,
) -> Result<CheckReport> {
    check_pair(space, mu1, mu2, p)?;
    let (tau, idx) = grid_indices(ts, steps)?;
    let values: Vec<f64> = if is_constant(table) {
        let caps = ExactCaps::default();
        idx.iter()
            .map(|&m| {
                perturbed_cost_exact_with(space, table, mu1, mu2, p, m as f64 * tau, m, caps, ExactMode::Auto)
                    .map(|e| e.value)
            })
            .collect::<Result<_>>()?
    } else {
        let dp = dp_sweep(space, table, p, PathLattice::new(space, tau, steps)?)?;
        idx.iter().map(|&m| dp.value(mu1, mu2, m)).collect::<Result<_>>()?
    };
    let entries = ts
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| Entry { label: format!("t={}->{}", t[0], t[1]), residual: v[0] - v[1] })
        .collect();
    Ok(CheckReport::from_entries(&format!("PTE_{p}"), entries, 2e-2)
        .param("p", p)
        .param("t_grid", ts)
        .param("steps", steps)
        .param("engine", if is_constant(table) { "exact" } else { "dp" })
        .param("curve", &values))
}

/// Perturbed cost between every pair of Diracs at grid horizons; `values[m][x n + y]`.
/// Constant tables use the exact terminal reduction, others the Markovian sweep.
pub fn dirac_cost_curves(space: &Space, table: &PairTable, p: f64, tau: f64, horizons: &[usize]) -> Result<Vec<Vec<f64>>> {
    let n = space.len();
    let max = horizons.iter().copied().max().unwrap_or(0);
    if is_constant(table) {
        let heat = Semigroup::heat(space);
        let k = table.get(0, 0);
        let cost = crate::transport::power_cost(space, p);
        return horizons
            .iter()
            .map(|&m| {
                let t = m as f64 * tau;
                let kernel = heat.kernel(t)?;
                let rows: Vec<Vec<f64>> =
                    (0..n).map(|x| (0..n).map(|y| kernel[(x, y)].max(0.0)).collect()).collect();
                let scale = (p * k * t).exp();
                (0..n * n)
                    .into_par_iter()
                    .map(|s| {
                        let (x, y) = (s / n, s % n);
                        if x == y {
                            return Ok(0.0);
                        }
                        let a = normalize(&rows[x]);
                        let b = normalize(&rows[y]);
                        let w = if space.is_segment() {
                            northwest_corner_cost(&a, &b, &cost)
                        } else {
                            solve_transport(&a, &b, &cost)?.cost
                        };
                        Ok((scale * w.max(0.0)).powf(1.0 / p))
                    })
                    .collect()
            })
            .collect();
    }
    let dp = dp_sweep(space, table, p, PathLattice::new(space, tau, max)?)?;
    horizons
        .iter()
        .map(|&m| Ok(dp.terminal(m)?.into_iter().map(|v| v.max(0.0).powf(1.0 / p)).collect()))
        .collect()
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter().map(|a| a / s).collect()
}

fn grid_indices(ts: &[f64], steps: usize) -> Result<(f64, Vec<usize>)> {
    if ts.len() < 2 || ts.windows(2).any(|w| !(w[1] > w[0])) || ts[0] < 0.0 {
        return Err(Error::arg("t-grid must be increasing, nonnegative, with at least two points"));
    }
    if steps == 0 {
        return Err(Error::arg("positive horizon needs at least one step"));
    }
    let t_max = *ts.last().unwrap();
    let tau = t_max / steps as f64;
    let idx = ts
        .iter()
        .map(|&t| {
            let m = (t / tau).round();
            if (m * tau - t).abs() > 1e-9 * t_max.max(1.0) {
                Err(Error::arg(format!("t = {t} is not a multiple of the step {tau}")))
            } else {
                Ok(m as usize)
            }
        })
        .collect::<Result<_>>()?;
    Ok((tau, idx))
}

/// Nonincrease of the perturbed cost for every pair of Diracs; entries are per pair.
pub fn check_pte_diracs(space: &Space, table: &PairTable, p: f64, ts: &[f64], steps: usize) -> Result<CheckReport> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::arg(format!("p = {p} must lie in [1, inf)")));
    }
    let (tau, idx) = grid_indices(ts, steps)?;
    let curves = dirac_cost_curves(space, table, p, tau, &idx)?;
    let n = space.len();
    let mut entries = Vec::new();
    for x in 0..n {
        for y in x + 1..n {
            let s = x * n + y;
            let worst = curves.windows(2).map(|w| w[0][s] - w[1][s]).fold(f64::INFINITY, f64::min);
            entries.push(Entry { label: format!("({x},{y})"), residual: worst });
        }
    }
    Ok(CheckReport::from_entries(&format!("PTE_{p}"), entries, 2e-2)
        .param("p", p)
        .param("t_grid", ts)
        .param("steps", steps)
        .param("engine", if is_constant(table) { "exact" } else { "dp" }))
}

/// `p` escalation for pathwise certificates.
pub const PCP_P_SCHEDULE: [f64; 3] = [4.0, 8.0, 16.0];
/// Largest ratio between positive one-step costs the LP resolves reliably.
const PCP_COST_RANGE: f64 = 1e10;

/// Sampled pathwise contraction certificate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PcpCertificate {
    pub level: u32,
    pub horizon: usize,
    pub p: f64,
    pub seed: u64,
    pub samples: usize,
    pub tolerance: f64,
    /// Per path `max_{s≤t} d(t) e^{∫₀ᵗ k̄} / [d(s) e^{∫₀ˢ k̄}]`.
    pub worst_ratios: Vec<f64>,
    pub violation_fraction: f64,
}

/// Per-path worst contraction ratio with the pair-state table `k̄`.
pub fn worst_ratio(space: &Space, table: &PairTable, tau: f64, path: &[(usize, usize)]) -> f64 {
    let mut integral = 0.0;
    let mut running_min = f64::INFINITY;
    let mut worst: f64 = 1.0;
    for (m, &(x, y)) in path.iter().enumerate() {
        if m > 0 {
            let (a, b) = path[m - 1];
            integral += 0.5 * tau * (table.get(a, b) + table.get(x, y));
        }
        let amp = space.d(x, y) * integral.exp();
        running_min = running_min.min(amp);
        let ratio = if amp == 0.0 {
            1.0
        } else if running_min == 0.0 {
            f64::INFINITY
        } else {
            amp / running_min
        };
        worst = worst.max(ratio);
    }
    worst
}

/// Dyadic one-step DP couplings composed over `2^level · horizon` steps, sampled.
#[allow(clippy::too_many_arguments)]
pub fn build_pcp(
    space: &Space,
    table: &PairTable,
    initial: &[(usize, usize, f64)],
    level: u32,
    horizon: usize,
    samples: usize,
    seed: u64,
    tolerance: f64,
) -> Result<PcpCertificate> {
    if level > 12 {
        return Err(Error::arg(format!("dyadic level {level} exceeds 12")));
    }
    if samples == 0 || horizon == 0 {
        return Err(Error::arg("certificate needs samples and a positive horizon"));
    }
    let n = space.len();
    if initial.iter().any(|&(x, y, w)| x >= n || y >= n || !(w >= 0.0)) {
        return Err(Error::arg("initial pair law invalid"));
    }
    let tau = 0.5f64.powi(level as i32);
    let lattice = PathLattice::new(space, tau, 1)?;
    let mut chosen = None;
    for &p in PCP_P_SCHEDULE.iter() {
        let positive: Vec<f64> = (0..n)
            .flat_map(|x| (0..n).map(move |y| (x, y)))
            .filter(|&(x, y)| x != y)
            .map(|(x, y)| (0.5 * tau * p * table.get(x, y)).exp() * space.d(x, y).powf(p))
            .collect();
        let range = positive.iter().cloned().fold(0.0, f64::max) / positive.iter().cloned().fold(f64::INFINITY, f64::min);
        if n > 1 && !(range <= PCP_COST_RANGE) {
            continue;
        }
        chosen = Some((p, dp_sweep(space, table, p, lattice.clone())?));
    }
    let (p, dp) = chosen.ok_or_else(|| Error::Solver("no p in the schedule keeps the one-step LP well conditioned".into()))?;
    let plans = dp.one_step_plans().map(|s| s.to_vec()).unwrap_or_default();
    let total = (1usize << level) * horizon;
    let policy = CouplingPolicy { n, tau, initial: initial.to_vec(), steps: vec![plans; total] };
    let paths = policy.sample(samples, seed);
    let worst_ratios: Vec<f64> = paths.par_iter().map(|path| worst_ratio(space, table, tau, path)).collect();
    let violations = worst_ratios.iter().filter(|&&r| !(r <= 1.0 + tolerance)).count();
    Ok(PcpCertificate {
        level,
        horizon,
        p,
        seed,
        samples,
        tolerance,
        violation_fraction: violations as f64 / samples as f64,
        worst_ratios,
    })
}

/// Per-start-node sample means and standard errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FkEstimate {
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    pub samples: usize,
}

/// `E_x[exp(−∫₀ᵗ q k(X_r) dr) f(X_t)]` for every node, with exact exponential holding times.
pub fn feynman_kac_mc(
    space: &Space,
    field: &CurvatureField,
    q: f64,
    t: f64,
    f: &[f64],
    samples: usize,
    seed: u64,
) -> Result<FkEstimate> {
    let starts: Vec<usize> = (0..space.len()).collect();
    feynman_kac_mc_at(space, field, q, t, f, &starts, samples, seed)
}

/// Feynman–Kac estimate at the given start nodes; entries follow `starts`.
#[allow(clippy::too_many_arguments)]
pub fn feynman_kac_mc_at(
    space: &Space,
    field: &CurvatureField,
    q: f64,
    t: f64,
    f: &[f64],
    starts: &[usize],
    samples: usize,
    seed: u64,
) -> Result<FkEstimate> {
    space.check_fn(f, "f")?;
    for &x in starts {
        space.check_node(x)?;
    }
    if !(t >= 0.0) {
        return Err(Error::NegativeTime(t));
    }
    if samples == 0 {
        return Err(Error::arg("Monte Carlo needs at least one sample"));
    }
    let n = space.len();
    let totals: Vec<f64> = (0..n).map(|x| space.rates(x).iter().map(|e| e.1).sum()).collect();
    let walk = |x0: usize, i: usize| -> f64 {
        let mut rng = path_rng(seed, (x0 * samples + i) as u64);
        let (mut x, mut time, mut expo) = (x0, 0.0, 0.0);
        loop {
            let r = totals[x];
            let hold = if r > 0.0 { -(1.0 - rng.random::<f64>()).ln() / r } else { f64::INFINITY };
            if time + hold >= t {
                expo += (t - time) * q * field.k[x];
                return (-expo).exp() * f[x];
            }
            expo += hold * q * field.k[x];
            time += hold;
            let mut u = rng.random::<f64>() * r;
            let rates = space.rates(x);
            let mut next = rates.last().unwrap().0;
            for &(y, w) in rates {
                if u < w {
                    next = y;
                    break;
                }
                u -= w;
            }
            x = next;
        }
    };
    let mut mean = Vec::with_capacity(starts.len());
    let mut std_err = Vec::with_capacity(starts.len());
    for &x in starts {
        let vals: Vec<f64> = (0..samples).into_par_iter().map(|i| walk(x, i)).collect();
        let e = McEstimate::from_values(&vals);
        mean.push(e.mean);
        std_err.push(e.std_err);
    }
    Ok(FkEstimate { mean, std_err, samples })
}
