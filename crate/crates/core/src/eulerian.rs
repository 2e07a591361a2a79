//! Eulerian checkers: Bochner inequalities, gradient estimates, their local
//! and hierarchical variants, and the exponent self-improvement map.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calculus::{apply_generator, gamma, gamma2, gamma_sq, Semigroup};
use crate::space::{CurvatureField, Space};
use crate::{Error, Result};

/// One labelled signed residual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub label: String,
    pub residual: f64,
}

/// Outcome of a residual check. Positive residual means the inequality holds with margin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub condition: String,
    pub instance: String,
    pub params: BTreeMap<String, serde_json::Value>,
    pub worst_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub witness: String,
    pub diagnostic: bool,
    pub entries: Vec<Entry>,
}

impl CheckReport {
    /// Report whose worst residual is the minimum over `entries`.
    pub fn from_entries(condition: &str, entries: Vec<Entry>, tolerance: f64) -> Self {
        let mut worst = f64::INFINITY;
        let mut witness = String::new();
        for e in &entries {
            if e.residual < worst || e.residual.is_nan() {
                worst = e.residual;
                witness = e.label.clone();
            }
        }
        if entries.is_empty() {
            worst = 0.0;
        }
        CheckReport {
            condition: condition.to_string(),
            instance: String::new(),
            params: BTreeMap::new(),
            worst_residual: worst,
            tolerance,
            pass: worst >= -tolerance,
            witness,
            diagnostic: false,
            entries,
        }
    }

    pub fn single(condition: &str, label: &str, residual: f64, tolerance: f64) -> Self {
        Self::from_entries(condition, vec![Entry { label: label.into(), residual }], tolerance)
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self.pass = self.worst_residual >= -tolerance;
        self
    }

    pub fn with_instance(mut self, instance: &str) -> Self {
        self.instance = instance.to_string();
        self
    }

    pub fn param(mut self, key: &str, value: impl Serialize) -> Self {
        self.params.insert(key.to_string(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
        self
    }

    pub fn as_diagnostic(mut self) -> Self {
        self.diagnostic = true;
        self
    }

    /// Residual recorded under `label`.
    pub fn entry(&self, label: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.label == label).map(|e| e.residual)
    }
}

/// Named test functions `f` and nonnegative weights `φ` for bank sweeps.
#[derive(Clone, Debug)]
pub struct TestBank {
    pub fs: Vec<(String, Vec<f64>)>,
    pub phis: Vec<(String, Vec<f64>)>,
}

fn smooth_bump(r: f64) -> f64 {
    if r.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r * r)).exp()
    }
}

fn smoothstep(z: f64) -> f64 {
    let z = z.clamp(0.0, 1.0);
    z * z * (3.0 - 2.0 * z)
}

impl TestBank {
    /// Seeded bank: coordinates, bumps, low eigenfunctions and 50 random smooth functions.
    pub fn new(space: &Space, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = space.len();
        let eig = Semigroup::heat(space).eigenfunctions();
        let mut fs: Vec<(String, Vec<f64>)> = Vec::new();
        let mut phis: Vec<(String, Vec<f64>)> = vec![("one".into(), vec![1.0; n])];
        match space.coordinates() {
            Some(x) => {
                let (a, b) = (x[0], x[n - 1]);
                let len = b - a;
                let mid = 0.5 * (a + b);
                let pi = std::f64::consts::PI;
                // Coordinate adapted to the zero-flux boundary: slope 1 at the centre, 0 at the ends.
                fs.push(("coordinate".into(), x.iter().map(|&v| len / pi * (pi * (v - mid) / len).sin()).collect()));
                for (j, (_, f)) in eig.iter().enumerate().skip(1).take(4) {
                    fs.push((format!("eigen-{j}"), f.clone()));
                }
                for &c in &[0.25, 0.4, 0.6, 0.75] {
                    let (centre, radius) = (a + c * len, len / 6.0);
                    fs.push((format!("bump-{c}"), x.iter().map(|&v| smooth_bump((v - centre) / radius)).collect()));
                }
                for i in 0..50 {
                    let coeffs: Vec<f64> = (1..=6).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let f = x
                        .iter()
                        .map(|&v| {
                            coeffs
                                .iter()
                                .enumerate()
                                .map(|(j, c)| c / (j + 1) as f64 * ((j + 1) as f64 * pi * (v - a) / len).cos())
                                .sum()
                        })
                        .collect();
                    fs.push((format!("random-{i}"), f));
                }
                let h = space.spacing().unwrap();
                for (_, f) in fs.iter_mut() {
                    let slope = f.windows(2).map(|w| (w[1] - w[0]).abs() / h).fold(0.0, f64::max);
                    if slope > 0.0 {
                        f.iter_mut().for_each(|v| *v /= slope);
                    }
                }
                for &c in &[0.3, 0.5, 0.7] {
                    let (centre, radius) = (a + c * len, len / 8.0);
                    phis.push((format!("bump-{c}"), x.iter().map(|&v| smooth_bump((v - centre) / radius)).collect()));
                }
                for &c in &[0.35, 0.65] {
                    let (centre, radius, width) = (a + c * len, len / 6.0, len / 12.0);
                    phis.push((
                        format!("ball-{c}"),
                        x.iter().map(|&v| smoothstep((radius - (v - centre).abs()) / width)).collect(),
                    ));
                }
            }
            None => {
                for x in 0..n {
                    let mut f = vec![0.0; n];
                    f[x] = 1.0;
                    fs.push((format!("indicator-{x}"), f.clone()));
                    phis.push((format!("indicator-{x}"), f));
                    fs.push((format!("distance-{x}"), (0..n).map(|y| space.d(x, y)).collect()));
                    phis.push((format!("ball-{x}"), (0..n).map(|y| if space.d(x, y) <= 1.0 { 1.0 } else { 0.0 }).collect()));
                }
                for (j, (_, f)) in eig.iter().enumerate().skip(1) {
                    fs.push((format!("eigen-{j}"), f.clone()));
                }
                for i in 0..50 {
                    fs.push((format!("random-{i}"), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()));
                }
                for (_, f) in fs.iter_mut() {
                    let g = gamma_sq(space, f).into_iter().fold(0.0, f64::max);
                    if g > 0.0 {
                        let s = g.sqrt();
                        f.iter_mut().for_each(|v| *v /= s);
                    }
                }
            }
        }
        for (_, phi) in phis.iter_mut() {
            let mass = space.integrate(phi);
            phi.iter_mut().for_each(|v| *v /= mass);
        }
        TestBank { fs, phis }
    }
}

fn pow_half(g: f64, q: f64) -> f64 {
    g.max(0.0).powf(q / 2.0)
}

/// `Γ^{q/2-1}·Γ(f, Lf)` with the convention `0^{q/2-1}·0 = 0`.
fn weighted_cross(g: f64, cross: f64, q: f64) -> f64 {
    if g <= 0.0 {
        0.0
    } else {
        g.powf(q / 2.0 - 1.0) * cross
    }
}

/// Both forms of the `q`-Bochner residual: the defining form and the first-order form.
pub fn be_residual(space: &Space, field: &CurvatureField, q: f64, f: &[f64], phi: &[f64]) -> Result<(f64, f64)> {
    if !(q >= 1.0) {
        return Err(Error::arg(format!("exponent q = {q} must be >= 1")));
    }
    space.check_fn(f, "f")?;
    space.check_fn(phi, "phi")?;
    if phi.iter().any(|&v| v < 0.0) {
        return Err(Error::arg("phi must be nonnegative"));
    }
    let g = gamma_sq(space, f);
    let lf = apply_generator(space, f);
    let cross = gamma(space, f, &lf);
    let gq: Vec<f64> = g.iter().map(|&v| pow_half(v, q)).collect();
    let lphi = apply_generator(space, phi);
    let gq_phi = gamma(space, &gq, phi);
    let m = space.measure();
    let mut def = 0.0;
    let mut first = 0.0;
    for x in 0..space.len() {
        let wc = weighted_cross(g[x], cross[x], q);
        let curv = field.k[x] * gq[x] * phi[x];
        def += m[x] * (gq[x] * lphi[x] / q - wc * phi[x] - curv);
        first += m[x] * (-(gq_phi[x] / q + wc * phi[x]) - curv);
    }
    Ok((def, first))
}

/// `q`-Bochner residual for one `(f, φ)`; the first-order form is recorded alongside.
pub fn check_be_q(space: &Space, field: &CurvatureField, q: f64, f: &[f64], phi: &[f64]) -> Result<CheckReport> {
    let (def, first) = be_residual(space, field, q, f, phi)?;
    let scale = def.abs().max(first.abs()).max(1.0);
    if (def - first).abs() > 1e-10 * scale {
        return Err(Error::Solver(format!("integration by parts mismatch: {def} vs {first}")));
    }
    Ok(CheckReport::from_entries(
        "BE_q",
        vec![Entry { label: "definition".into(), residual: def }, Entry { label: "first-order".into(), residual: first }],
        5e-2,
    )
    .param("q", q))
}

/// Minimum `q`-Bochner residual over a test bank; one entry per `f` (worst `φ`).
pub fn be_sweep(space: &Space, field: &CurvatureField, q: f64, bank: &TestBank) -> Result<CheckReport> {
    let mut entries = Vec::with_capacity(bank.fs.len());
    for (fname, f) in &bank.fs {
        let mut worst = (f64::INFINITY, String::new());
        for (pname, phi) in &bank.phis {
            let (def, first) = be_residual(space, field, q, f, phi)?;
            if (def - first).abs() > 1e-10 * def.abs().max(1.0) {
                return Err(Error::Solver(format!("integration by parts mismatch on {fname}/{pname}")));
            }
            if def < worst.0 {
                worst = (def, pname.clone());
            }
        }
        entries.push(Entry { label: format!("{fname}/{}", worst.1), residual: worst.0 });
    }
    Ok(CheckReport::from_entries("BE_q", entries, 5e-2).param("q", q))
}

/// Local Bochner residual with `φ` supported in the open ball `B_radius(center)`.
pub fn check_be_local(
    space: &Space,
    field: &CurvatureField,
    q: f64,
    f: &[f64],
    phi: &[f64],
    center: usize,
    radius: f64,
) -> Result<CheckReport> {
    space.check_node(center)?;
    space.check_fn(phi, "phi")?;
    if let Some(x) = (0..space.len()).find(|&x| phi[x] != 0.0 && !(space.d(center, x) < radius)) {
        return Err(Error::arg(format!("phi is nonzero at node {x}, outside the ball")));
    }
    Ok(check_be_q(space, field, q, f, phi)?.param("center", center).param("radius", radius))
}

/// Lipschitz partition of unity subordinate to the balls `B_δᵢ(zᵢ)`.
pub fn partition_of_unity(space: &Space, balls: &[(usize, f64)]) -> Result<Vec<Vec<f64>>> {
    let n = space.len();
    let mut prev = vec![0.0; n];
    let mut acc = vec![0.0; n];
    let mut out = Vec::with_capacity(balls.len());
    for &(z, delta) in balls {
        space.check_node(z)?;
        if !(delta > 0.0) {
            return Err(Error::arg("ball radius must be positive"));
        }
        for x in 0..n {
            let outside = (0..n).filter(|&y| !(space.d(z, y) < delta)).map(|y| space.d(x, y)).fold(f64::INFINITY, f64::min);
            let outside = if outside.is_finite() { outside } else { delta };
            acc[x] += 2.0 / delta * outside;
        }
        let star: Vec<f64> = acc.iter().map(|v| v.min(1.0)).collect();
        out.push(star.iter().zip(&prev).map(|(a, b)| a - b).collect());
        prev = star;
    }
    if prev.iter().any(|&v| v < 1.0) {
        return Err(Error::arg("balls do not cover the space deeply enough for a partition of unity"));
    }
    Ok(out)
}

/// Sum of localized residuals over a partition of unity against the global residual.
pub fn local_global_aggregation(
    space: &Space,
    field: &CurvatureField,
    q: f64,
    f: &[f64],
    phi: &[f64],
    balls: &[(usize, f64)],
) -> Result<(f64, f64)> {
    let etas = partition_of_unity(space, balls)?;
    let mut sum = 0.0;
    for (eta, &(z, delta)) in etas.iter().zip(balls) {
        let local: Vec<f64> = phi.iter().zip(eta).map(|(p, e)| p * e).collect();
        sum += check_be_local(space, field, q, f, &local, z, delta)?.entry("definition").unwrap_or(0.0);
    }
    let global = be_residual(space, field, q, f, phi)?.0;
    Ok((sum, global))
}

/// Cached heat and Schrödinger semigroups for gradient-estimate sweeps.
pub struct GradientChecker<'a> {
    space: &'a Space,
    heat: Semigroup,
    schr: Vec<(f64, Semigroup)>,
    field: CurvatureField,
}

impl<'a> GradientChecker<'a> {
    pub fn new(space: &'a Space, field: &CurvatureField) -> Self {
        GradientChecker { space, heat: Semigroup::heat(space), schr: Vec::new(), field: field.clone() }
    }

    fn schrodinger(&mut self, q: f64) -> &Semigroup {
        if let Some(i) = self.schr.iter().position(|(p, _)| *p == q) {
            return &self.schr[i].1;
        }
        self.schr.push((q, Semigroup::schrodinger(self.space, &self.field, q)));
        &self.schr.last().unwrap().1
    }

    /// `min_x [P^{qk}_t Γ(f)^{q/2} − Γ(P_t f)^{q/2}]` with the minimizing node.
    pub fn residual(&mut self, q: f64, t: f64, f: &[f64]) -> Result<(f64, usize)> {
        if !(q >= 1.0) {
            return Err(Error::arg(format!("exponent q = {q} must be >= 1")));
        }
        self.space.check_fn(f, "f")?;
        let gq: Vec<f64> = gamma_sq(self.space, f).iter().map(|&g| pow_half(g, q)).collect();
        let pf = self.heat.apply(t, f)?;
        let lhs: Vec<f64> = gamma_sq(self.space, &pf).iter().map(|&g| pow_half(g, q)).collect();
        let rhs = self.schrodinger(q).apply(t, &gq)?;
        let mut best = (f64::INFINITY, 0);
        for x in 0..self.space.len() {
            let r = rhs[x] - lhs[x];
            if r < best.0 {
                best = (r, x);
            }
        }
        Ok(best)
    }

    /// Jensen sub-residual `min_x [P^{q'k}_t g^{q'/q} − (P^{qk}_t g)^{q'/q}]` with `g = Γ(f)^{q/2}`.
    pub fn jensen_residual(&mut self, q: f64, q2: f64, t: f64, f: &[f64]) -> Result<f64> {
        let g: Vec<f64> = gamma_sq(self.space, f).iter().map(|&v| pow_half(v, q)).collect();
        let r = q2 / q;
        let lifted: Vec<f64> = g.iter().map(|v| v.powf(r)).collect();
        let a = self.schrodinger(q2).apply(t, &lifted)?;
        let b = self.schrodinger(q).apply(t, &g)?;
        Ok((0..self.space.len()).map(|x| a[x] - b[x].max(0.0).powf(r)).fold(f64::INFINITY, f64::min))
    }

    /// Minimum gradient-estimate residual over a bank and a time grid.
    pub fn sweep(&mut self, q: f64, ts: &[f64], bank: &TestBank) -> Result<CheckReport> {
        let mut entries = Vec::new();
        for (name, f) in &bank.fs {
            let mut worst = (f64::INFINITY, String::new());
            for &t in ts {
                let (r, x) = self.residual(q, t, f)?;
                if r < worst.0 {
                    worst = (r, format!("{name}/t={t}/node={x}"));
                }
            }
            entries.push(Entry { label: worst.1, residual: worst.0 });
        }
        Ok(CheckReport::from_entries("GE_q", entries, 5e-2).param("q", q).param("t_grid", ts))
    }
}

/// `q`-gradient estimate residual at time `t` for one `f`.
pub fn check_ge_q(space: &Space, field: &CurvatureField, q: f64, t: f64, f: &[f64]) -> Result<CheckReport> {
    let (r, x) = GradientChecker::new(space, field).residual(q, t, f)?;
    Ok(CheckReport::single("GE_q", &format!("node={x}"), r, 5e-2).param("q", q).param("t", t))
}

/// Hierarchy check: Jensen sub-residual, and `GE_q ≥ 0 ⇒ GE_{q'} ≥ −1e-9`.
pub fn check_ge_hierarchy(
    space: &Space,
    field: &CurvatureField,
    q: f64,
    q2: f64,
    t: f64,
    f: &[f64],
) -> Result<CheckReport> {
    if !(q >= 1.0) || q2 < q {
        return Err(Error::arg(format!("need 1 <= q <= q', got q = {q}, q' = {q2}")));
    }
    let mut checker = GradientChecker::new(space, field);
    let (rq, _) = checker.residual(q, t, f)?;
    let (rq2, _) = checker.residual(q2, t, f)?;
    let jensen = checker.jensen_residual(q, q2, t, f)?;
    let implication = if rq >= 0.0 { rq2 } else { 0.0 };
    Ok(CheckReport::from_entries(
        "GE_hierarchy",
        vec![
            Entry { label: "jensen".into(), residual: jensen },
            Entry { label: "implication".into(), residual: implication },
        ],
        1e-9,
    )
    .param("q", q)
    .param("q_prime", q2)
    .param("t", t)
    .param("ge_q", rq)
    .param("ge_q_prime", rq2))
}

/// `P(r) = r − 1/(4(r+1))`.
pub fn exponent_map(r: f64) -> f64 {
    r - 1.0 / (4.0 * (r + 1.0))
}

/// Result of the exponent self-improvement search.
#[derive(Clone, Debug, Serialize)]
pub struct SelfImprovement {
    pub n: usize,
    pub q_prime: f64,
    pub iterates: Vec<f64>,
}

/// Minimal `n ≥ 1` and `q' ≥ 2` with `Pⁿ(q') = ε` to within `1e-12`.
pub fn self_improvement_exponents(eps: f64) -> Result<SelfImprovement> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::arg("epsilon must be positive"));
    }
    let iterate = |r: f64, n: usize| (0..n).fold(r, |acc, _| exponent_map(acc));
    let mut n = 1;
    let mut r = exponent_map(2.0);
    while r > eps {
        r = exponent_map(r);
        n += 1;
    }
    let mut hi = 4.0;
    while iterate(hi, n) < eps {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Solver("exponent search bound exhausted".into()));
        }
    }
    let mut lo = 2.0;
    let mut mid = lo;
    for _ in 0..400 {
        mid = 0.5 * (lo + hi);
        let v = iterate(mid, n);
        if (v - eps).abs() <= 1e-12 {
            break;
        }
        if v < eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (iterate(mid, n) - eps).abs() > 1e-12 {
        return Err(Error::Solver("exponent bisection did not converge".into()));
    }
    let mut iterates = vec![mid];
    for _ in 0..n {
        iterates.push(exponent_map(*iterates.last().unwrap()));
    }
    Ok(SelfImprovement { n, q_prime: mid, iterates })
}

/// Nodes at graph distance ≥ 2 from the boundary of a segment; all nodes otherwise.
fn interior_nodes(space: &Space) -> Vec<usize> {
    let n = space.len();
    if space.is_segment() && n > 4 {
        (2..n - 2).collect()
    } else {
        (0..n).collect()
    }
}

/// Diagnostic `min_x [4(γ₂(f) − kΓ(f))Γ(f) − Γ(Γ(f))]` over interior nodes.
pub fn check_iterated_gamma(space: &Space, field: &CurvatureField, f: &[f64]) -> Result<CheckReport> {
    space.check_fn(f, "f")?;
    let g = gamma_sq(space, f);
    let g2 = gamma2(space, f);
    let gg = gamma_sq(space, &g);
    let entries = interior_nodes(space)
        .into_iter()
        .map(|x| Entry { label: format!("node={x}"), residual: 4.0 * (g2[x] - field.k[x] * g[x]) * g[x] - gg[x] })
        .collect();
    Ok(CheckReport::from_entries("iterated_gamma", entries, 5e-2).as_diagnostic())
}
