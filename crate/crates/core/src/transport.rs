//! Optimal transport on finite spaces, Hopf–Lax evolution, 1-D displacement
//! interpolation and the Lagrangian checkers.

use serde::{Deserialize, Serialize};

use crate::calculus::{entropy_of_masses, Semigroup};
use crate::eulerian::{CheckReport, Entry};
use crate::ot::solve_transport;
use crate::space::{CurvatureField, PairTable, Space};
use crate::{Error, Result};

/// Optimal coupling of two probability vectors for the cost `d^p`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransportPlan {
    /// Cells `(x, y, mass)` with positive mass.
    pub entries: Vec<(usize, usize, f64)>,
    /// `Σ π d^p`.
    pub cost: f64,
    pub p: f64,
    /// Dual potentials with `u_x + v_y ≤ d^p(x, y)`.
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

fn check_prob(space: &Space, mu: &[f64], what: &str) -> Result<()> {
    space.check_fn(mu, what)?;
    if mu.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::arg(format!("{what} must be nonnegative")));
    }
    Ok(())
}

/// Optimal plan for an arbitrary node-pair cost table.
pub fn transport_with_cost(mu: &[f64], nu: &[f64], cost: &[f64], p: f64) -> Result<TransportPlan> {
    let s = solve_transport(mu, nu, cost)?;
    Ok(TransportPlan { entries: s.flows, cost: s.cost, p, u: s.u, v: s.v })
}

/// `d^p` cost table.
pub fn power_cost(space: &Space, p: f64) -> Vec<f64> {
    space.metric().transpose().iter().map(|d| d.powf(p)).collect()
}

/// `W_p(μ, ν)` and an optimal vertex plan for probability vectors of node masses.
pub fn wasserstein(space: &Space, mu: &[f64], nu: &[f64], p: f64) -> Result<(f64, TransportPlan)> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::arg(format!("p = {p} must lie in [1, inf)")));
    }
    check_prob(space, mu, "mu")?;
    check_prob(space, nu, "nu")?;
    let plan = transport_with_cost(mu, nu, &power_cost(space, p), p)?;
    Ok((plan.cost.max(0.0).powf(1.0 / p), plan))
}

/// `Q_s f(x) = min_y f(y) + d^p(x, y)/(p s^{p−1})`.
pub fn hopf_lax(space: &Space, f: &[f64], s: f64, p: f64) -> Result<Vec<f64>> {
    space.check_fn(f, "f")?;
    if !(s >= 0.0) {
        return Err(Error::arg("Hopf-Lax time must be nonnegative"));
    }
    if !(p >= 1.0) {
        return Err(Error::arg("Hopf-Lax exponent must be at least 1"));
    }
    if s == 0.0 {
        return Ok(f.to_vec());
    }
    let n = space.len();
    let denom = p * s.powf(p - 1.0);
    Ok((0..n)
        .map(|x| (0..n).map(|y| f[y] + space.d(x, y).powf(p) / denom).fold(f64::INFINITY, f64::min))
        .collect())
}

/// Discrete local slope `max_{y~x} |g(x) − g(y)|/d(x, y)`.
pub fn local_slope(space: &Space, g: &[f64]) -> Vec<f64> {
    (0..space.len())
        .map(|x| space.neighbors(x).iter().map(|&(y, _)| (g[x] - g[y]).abs() / space.d(x, y)).fold(0.0, f64::max))
        .collect()
}

/// Diagnostic for `∂_s Q_s f + |D Q_s f|^q / q ≤ 0` on an `s`-grid; reported as `−max`.
pub fn check_hamilton_jacobi(space: &Space, f: &[f64], p: f64, s_grid: &[f64]) -> Result<CheckReport> {
    if s_grid.len() < 2 || s_grid.windows(2).any(|w| !(w[1] > w[0])) || s_grid[0] < 0.0 {
        return Err(Error::arg("s-grid must be increasing, nonnegative, with at least two points"));
    }
    if !(p > 1.0) {
        return Err(Error::arg("Hamilton-Jacobi check needs p > 1"));
    }
    let q = p / (p - 1.0);
    let mut entries = Vec::new();
    let mut prev = hopf_lax(space, f, s_grid[0], p)?;
    for w in s_grid.windows(2) {
        let next = hopf_lax(space, f, w[1], p)?;
        let slope = local_slope(space, &prev);
        let ds = w[1] - w[0];
        let worst = (0..space.len())
            .map(|x| (next[x] - prev[x]) / ds + slope[x].powf(q) / q)
            .fold(f64::NEG_INFINITY, f64::max);
        entries.push(Entry { label: format!("s={}", w[0]), residual: -worst });
        prev = next;
    }
    Ok(CheckReport::from_entries("hamilton_jacobi", entries, 5e-2).param("p", p).as_diagnostic())
}

/// `W_p^p/p − max_f [∫Q₁f dμ − ∫f dν]` over the dual potential and the given functions.
pub fn kantorovich_gap(space: &Space, mu: &[f64], nu: &[f64], p: f64, bank: &[Vec<f64>]) -> Result<f64> {
    let (_, plan) = wasserstein(space, mu, nu, p)?;
    let dual_f: Vec<f64> = plan.v.iter().map(|v| -v / p).collect();
    let value = |f: &[f64]| -> Result<f64> {
        let q1 = hopf_lax(space, f, 1.0, p)?;
        Ok(q1.iter().zip(mu).map(|(a, b)| a * b).sum::<f64>() - f.iter().zip(nu).map(|(a, b)| a * b).sum::<f64>())
    };
    let mut best = value(&dual_f)?;
    for f in bank {
        best = best.max(value(f)?);
    }
    Ok(plan.cost / p - best)
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
const GL4: [(f64, f64); 4] = [
    (0.069_431_844_202_973_71, 0.173_927_422_568_726_93),
    (0.330_009_478_207_571_9, 0.326_072_577_431_273_07),
    (0.669_990_521_792_428_1, 0.326_072_577_431_273_07),
    (0.930_568_155_797_026_3, 0.173_927_422_568_726_93),
];

/// Composite Gauss–Legendre nodes on `[0, 1]` with panels split at the breakpoints.
pub fn s_quadrature(breaks: &[f64], panels: usize) -> Vec<(f64, f64)> {
    let mut cuts = vec![0.0];
    for &b in breaks {
        if b > 0.0 && b < 1.0 {
            cuts.push(b);
        }
    }
    cuts.push(1.0);
    let mut out = Vec::new();
    for w in cuts.windows(2) {
        let len = (w[1] - w[0]) / panels as f64;
        for k in 0..panels {
            let lo = w[0] + k as f64 * len;
            for &(x, wt) in &GL4 {
                out.push((lo + x * len, wt * len));
            }
        }
    }
    out
}

/// `g(s, t) = min{s(1−t), t(1−s)}`.
pub fn green(s: f64, t: f64) -> f64 {
    (s * (1.0 - t)).min(t * (1.0 - s))
}

/// Quadrature value of `∫₀¹ g(s, t) ds`.
pub fn green_integral(t: f64) -> f64 {
    s_quadrature(&[t], 8).iter().map(|&(s, w)| w * green(s, t)).sum()
}

/// Piece of a monotone coupling: on a mass interval of length `mass`, both quantile
/// functions are affine, running from `start = (X₀, X₁)` to `end = (X₀, X₁)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanPiece {
    pub mass: f64,
    pub start: (f64, f64),
    pub end: (f64, f64),
}

/// Monotone coupling of two grid measures with cell-uniform densities.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeodesicPlan {
    pub pieces: Vec<PlanPiece>,
    a: f64,
    h: f64,
    n: usize,
}

/// `∫₀¹ |α + βθ|^p dθ`.
fn abs_pow_integral(alpha: f64, beta: f64, p: f64) -> f64 {
    if beta.abs() <= 1e-14 * alpha.abs().max(1e-300) {
        return alpha.abs().powf(p);
    }
    let f = |z: f64| z.signum() * z.abs().powf(p + 1.0) / (p + 1.0);
    (f(alpha + beta) - f(alpha)) / beta
}

impl GeodesicPlan {
    /// Grid masses of `μ_t` with proportional re-binning.
    pub fn interpolate(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        let left = self.a - 0.5 * self.h;
        let cell = |z: f64| (((z - left) / self.h).floor().max(0.0) as usize).min(self.n - 1);
        for pc in &self.pieces {
            let lo = (1.0 - t) * pc.start.0 + t * pc.start.1;
            let hi = (1.0 - t) * pc.end.0 + t * pc.end.1;
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            let width = hi - lo;
            if width <= 1e-12 * self.h {
                out[cell(0.5 * (lo + hi))] += pc.mass;
                continue;
            }
            let (c0, c1) = (cell(lo), cell(hi));
            for c in c0..=c1 {
                let cl = left + c as f64 * self.h;
                let overlap = (hi.min(cl + self.h) - lo.max(cl)).max(0.0);
                out[c] += pc.mass * overlap / width;
            }
        }
        out
    }

    /// `W_p^p` of the coupled measures.
    pub fn cost(&self, p: f64) -> f64 {
        self.pieces
            .iter()
            .map(|pc| {
                let d0 = pc.start.1 - pc.start.0;
                let d1 = pc.end.1 - pc.end.0;
                pc.mass * abs_pow_integral(d0, d1 - d0, p)
            })
            .sum()
    }

    fn k_at(&self, k: &[f64], z: f64) -> f64 {
        let c = ((z - self.a) / self.h).clamp(0.0, (self.n - 1) as f64);
        let i = (c.floor() as usize).min(self.n - 2);
        let w = c - i as f64;
        (1.0 - w) * k[i] + w * k[i + 1]
    }

    /// `∫₀¹ w(s) ∫ k(γ_s) |γ̇|^p dπ ds` with `w` integrated by the given `s`-rule.
    pub fn curvature_integral(&self, k: &[f64], p: f64, rule: &[(f64, f64)], weight: impl Fn(f64) -> f64) -> f64 {
        let mut total = 0.0;
        for pc in &self.pieces {
            let mut inner = 0.0;
            for &(th, wt) in &GL4 {
                let x0 = pc.start.0 + th * (pc.end.0 - pc.start.0);
                let x1 = pc.start.1 + th * (pc.end.1 - pc.start.1);
                let speed = (x1 - x0).abs().powf(p);
                if speed == 0.0 {
                    continue;
                }
                let along: f64 = rule.iter().map(|&(s, ws)| ws * weight(s) * self.k_at(k, (1.0 - s) * x0 + s * x1)).sum();
                inner += wt * speed * along;
            }
            total += pc.mass * inner;
        }
        total
    }

    /// Quadrature atoms `(x₀, x₁, mass)` of the plan.
    pub fn atoms(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for pc in &self.pieces {
            for &(th, wt) in &GL4 {
                let x0 = pc.start.0 + th * (pc.end.0 - pc.start.0);
                let x1 = pc.start.1 + th * (pc.end.1 - pc.start.1);
                out.push((x0, x1, pc.mass * wt));
            }
        }
        out
    }
}

fn normalized(mu: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = mu.iter().sum();
    if !(total > 0.0) || mu.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::arg("measure must be nonnegative with positive mass"));
    }
    Ok(mu.iter().map(|v| v / total).collect())
}

/// Monotone coupling of two grid measures on a segment, masses spread uniformly over cells.
pub fn displacement_interpolation_1d(space: &Space, mu0: &[f64], mu1: &[f64]) -> Result<GeodesicPlan> {
    let (a, h) = match space.kind() {
        crate::space::SpaceKind::Segment1d { a, h, .. } => (*a, *h),
        _ => return Err(Error::NotSegment("displacement_interpolation_1d")),
    };
    check_prob(space, mu0, "mu0")?;
    check_prob(space, mu1, "mu1")?;
    let (m0, m1) = (normalized(mu0)?, normalized(mu1)?);
    let n = space.len();
    let cum = |m: &[f64]| {
        let mut c = vec![0.0; n + 1];
        for i in 0..n {
            c[i + 1] = c[i] + m[i];
        }
        c[n] = 1.0;
        c
    };
    let (f0, f1) = (cum(&m0), cum(&m1));
    let quant = |f: &[f64], m: &[f64], i: usize, u: f64| -> f64 {
        let lo = a + i as f64 * h - 0.5 * h;
        if m[i] > 0.0 {
            lo + h * ((u - f[i]) / m[i]).clamp(0.0, 1.0)
        } else {
            lo + 0.5 * h
        }
    };
    let mut pieces = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    while i < n && m0[i] == 0.0 {
        i += 1;
    }
    while j < n && m1[j] == 0.0 {
        j += 1;
    }
    while i < n && j < n {
        let next = f0[i + 1].min(f1[j + 1]);
        if next > u {
            pieces.push(PlanPiece {
                mass: next - u,
                start: (quant(&f0, &m0, i, u), quant(&f1, &m1, j, u)),
                end: (quant(&f0, &m0, i, next), quant(&f1, &m1, j, next)),
            });
            u = next;
        }
        if f0[i + 1] <= next {
            i += 1;
            while i < n && m0[i] == 0.0 {
                i += 1;
            }
        }
        if f1[j + 1] <= next {
            j += 1;
            while j < n && m1[j] == 0.0 {
                j += 1;
            }
        }
    }
    Ok(GeodesicPlan { pieces, a, h, n })
}

/// `W_p` between two grid measures with cell-uniform densities.
pub fn wasserstein_1d(space: &Space, mu0: &[f64], mu1: &[f64], p: f64) -> Result<f64> {
    Ok(displacement_interpolation_1d(space, mu0, mu1)?.cost(p).powf(1.0 / p))
}

const QUAD_PANELS: usize = 8;

/// Convexity residual of the entropy along the displacement interpolation at time `t`.
pub fn cd_residual(space: &Space, field: &CurvatureField, plan: &GeodesicPlan, t: f64) -> Result<f64> {
    let e0 = entropy_of_masses(space, &plan.interpolate(0.0));
    let e1 = entropy_of_masses(space, &plan.interpolate(1.0));
    let et = entropy_of_masses(space, &plan.interpolate(t));
    let rule = s_quadrature(&[t], QUAD_PANELS);
    let corr = plan.curvature_integral(&field.k, 2.0, &rule, |s| green(s, t));
    Ok((1.0 - t) * e0 + t * e1 - et - corr)
}

fn check_t_grid(ts: &[f64]) -> Result<()> {
    if ts.is_empty() || ts.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::arg("t-grid must be a nonempty subset of [0, 1]"));
    }
    Ok(())
}

/// Entropy convexity with the Green-kernel curvature correction; minimum over the `t`-grid.
pub fn check_cd(space: &Space, field: &CurvatureField, mu0: &[f64], mu1: &[f64], ts: &[f64]) -> Result<CheckReport> {
    check_t_grid(ts)?;
    let plan = displacement_interpolation_1d(space, mu0, mu1)?;
    let mut entries = Vec::new();
    for &t in ts {
        entries.push(Entry { label: format!("t={t}"), residual: cd_residual(space, field, &plan, t)? });
    }
    Ok(CheckReport::from_entries("CD", entries, 5e-2).param("t_grid", ts))
}

/// Evolution variational inequality residual at time `t` with forward step `delta`.
pub fn evi_residual(
    space: &Space,
    field: &CurvatureField,
    heat: &Semigroup,
    mu0: &[f64],
    nu: &[f64],
    t: f64,
    delta: f64,
) -> Result<f64> {
    let clamp = |v: Vec<f64>| v.into_iter().map(|x| x.max(0.0)).collect::<Vec<f64>>();
    let mt = clamp(heat.apply_masses(t, mu0)?);
    let md = clamp(heat.apply_masses(t + delta, mu0)?);
    let plan = displacement_interpolation_1d(space, &mt, nu)?;
    let w_now = plan.cost(2.0);
    let w_next = displacement_interpolation_1d(space, &md, nu)?.cost(2.0);
    let rule = s_quadrature(&[], QUAD_PANELS);
    let corr = plan.curvature_integral(&field.k, 2.0, &rule, |s| 1.0 - s);
    let ent_nu = entropy_of_masses(space, &normalized(nu)?);
    let ent_t = entropy_of_masses(space, &normalized(&mt)?);
    Ok(ent_nu - ent_t - 0.5 * (w_next - w_now) / delta - corr)
}

/// Forward-difference residual, Richardson value `2r(δ/2) − r(δ)` and the next-level pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Richardson {
    pub t: f64,
    pub r_delta: f64,
    pub r_half: f64,
    pub r_quarter: f64,
}

impl Richardson {
    pub fn extrapolated(&self) -> (f64, f64) {
        (2.0 * self.r_half - self.r_delta, 2.0 * self.r_quarter - self.r_half)
    }

    /// Ratio of the plain change to the extrapolated change from `δ` to `δ/2`.
    pub fn reduction(&self) -> f64 {
        let plain = (self.r_delta - self.r_half).abs();
        let (e1, e2) = self.extrapolated();
        plain / (e1 - e2).abs().max(f64::MIN_POSITIVE)
    }
}

/// EVI along the heat flow from `μ₀` against `ν`; minimum over the `t`-grid.
pub fn check_evi(
    space: &Space,
    field: &CurvatureField,
    mu0: &[f64],
    nu: &[f64],
    ts: &[f64],
    delta: f64,
) -> Result<CheckReport> {
    if !space.is_segment() {
        return Err(Error::NotSegment("check_evi"));
    }
    if ts.is_empty() || ts.windows(2).any(|w| !(w[1] > w[0])) || ts[0] < 0.0 {
        return Err(Error::arg("t-grid must be increasing and nonnegative"));
    }
    let step = ts.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if !(delta > 0.0) || (ts.len() > 1 && !(delta < step)) {
        return Err(Error::arg(format!("delta = {delta} must lie in (0, t-grid step)")));
    }
    let heat = Semigroup::heat(space);
    let mut entries = Vec::new();
    let mut rich = Vec::new();
    for &t in ts {
        let r = |d: f64| evi_residual(space, field, &heat, mu0, nu, t, d);
        let rec = Richardson { t, r_delta: r(delta)?, r_half: r(delta / 2.0)?, r_quarter: r(delta / 4.0)? };
        entries.push(Entry { label: format!("t={t}"), residual: rec.r_delta });
        rich.push(rec);
    }
    Ok(CheckReport::from_entries("EVI", entries, 1e-1).param("t_grid", ts).param("delta", delta).param("richardson", rich))
}

/// First-order transport inequality at `(x, y)` for `k̂` and `k̄`.
pub fn differential_transport_residual(
    space: &Space,
    field: &CurvatureField,
    heat: &Semigroup,
    x: usize,
    y: usize,
    p: f64,
    delta: f64,
) -> Result<CheckReport> {
    space.check_node(x)?;
    space.check_node(y)?;
    if !(delta > 0.0) {
        return Err(Error::arg("delta must be positive"));
    }
    let n = space.len();
    let mut ex = vec![0.0; n];
    ex[x] = 1.0;
    let mut ey = vec![0.0; n];
    ey[y] = 1.0;
    let clamp = |v: Vec<f64>| v.into_iter().map(|a| a.max(0.0)).collect::<Vec<f64>>();
    let a = clamp(heat.apply_masses(delta, &ex)?);
    let b = clamp(heat.apply_masses(delta, &ey)?);
    let dp = space.d(x, y).powf(p);
    let moved = if x == y { 0.0 } else { wasserstein(space, &a, &b, p)?.1.cost };
    let slope = (moved - dp) / delta;
    let hat = -p * field.k_hat(x, y) * dp - slope;
    let bar = -p * field.k_bar(x, y) * dp - slope;
    Ok(CheckReport::from_entries(
        "differential_transport",
        vec![Entry { label: "k_hat".into(), residual: hat }, Entry { label: "k_bar".into(), residual: bar }],
        1e-1,
    )
    .param("x", x)
    .param("y", y)
    .param("p", p)
    .param("delta", delta))
}

/// `d⁰_{p,k,t}` for all pairs: `d · [geodesic average of P^{pk}_t 1]^{1/p}`, minimized over geodesics.
pub fn vertical_cost_table(space: &Space, field: &CurvatureField, p: f64, t: f64) -> Result<PairTable> {
    if !(t >= 0.0) {
        return Err(Error::NegativeTime(t));
    }
    let n = space.len();
    let w = Semigroup::schrodinger(space, field, p).apply(t, &vec![1.0; n])?;
    let mut table = vec![0.0; n * n];
    for x in 0..n {
        for y in x..n {
            let d = space.d(x, y);
            if !d.is_finite() {
                return Err(Error::NoGeodesic { x, y });
            }
            let avg = if let Some(h) = space.spacing() {
                let (lo, hi) = (x.min(y), x.max(y));
                if lo == hi {
                    w[lo]
                } else {
                    (lo..hi).map(|i| 0.5 * h * (w[i] + w[i + 1])).sum::<f64>() / ((hi - lo) as f64 * h)
                }
            } else {
                space
                    .shortest_path_geodesics(x, y)?
                    .iter()
                    .map(|g| g.average(&w))
                    .fold(f64::INFINITY, f64::min)
            };
            let v = d * avg.max(0.0).powf(1.0 / p);
            table[x * n + y] = v;
            table[y * n + x] = v;
        }
    }
    Ok(PairTable::from_fn(n, |i, j| table[i * n + j]))
}

/// `d⁰_{p,k,t}(x, y)`.
pub fn vertical_cost(space: &Space, field: &CurvatureField, x: usize, y: usize, p: f64, t: f64) -> Result<f64> {
    space.check_node(x)?;
    space.check_node(y)?;
    Ok(vertical_cost_table(space, field, p, t)?.get(x, y))
}

/// Chained minimum `d_{p,k,t}` of the vertical cost.
pub fn chained_vertical_cost(table: &PairTable) -> PairTable {
    let n = table.len();
    let mut d: Vec<f64> = table.values().to_vec();
    for k in 0..n {
        for i in 0..n {
            let dik = d[i * n + k];
            for j in 0..n {
                let c = dik + d[k * n + j];
                if c < d[i * n + j] {
                    d[i * n + j] = c;
                }
            }
        }
    }
    PairTable::from_fn(n, |i, j| d[i * n + j])
}

/// `W_p(H_tμ, H_tν) ≤ W_{p,k,t}(μ, ν) ≤ W⁰_{p,k,t}(μ, ν)`.
pub fn check_vertical_contraction(
    space: &Space,
    field: &CurvatureField,
    mu: &[f64],
    nu: &[f64],
    p: f64,
    t: f64,
) -> Result<CheckReport> {
    check_prob(space, mu, "mu")?;
    check_prob(space, nu, "nu")?;
    let d0 = vertical_cost_table(space, field, p, t)?;
    let chained = chained_vertical_cost(&d0);
    let heat = Semigroup::heat(space);
    let clamp = |v: Vec<f64>| v.into_iter().map(|a| a.max(0.0)).collect::<Vec<f64>>();
    let (a, b) = (clamp(heat.apply_masses(t, mu)?), clamp(heat.apply_masses(t, nu)?));
    let w_heat = wasserstein(space, &a, &b, p)?.0;
    let pow = |t: &PairTable| t.values().iter().map(|v| v.powf(p)).collect::<Vec<f64>>();
    let w_chain = transport_with_cost(mu, nu, &pow(&chained), p)?.cost.max(0.0).powf(1.0 / p);
    let w_vert = transport_with_cost(mu, nu, &pow(&d0), p)?.cost.max(0.0).powf(1.0 / p);
    let tol = space.spacing().unwrap_or(1e-9);
    Ok(CheckReport::from_entries(
        "vertical_contraction",
        vec![
            Entry { label: "heat_vs_chained".into(), residual: w_chain - w_heat },
            Entry { label: "chained_vs_vertical".into(), residual: w_vert - w_chain },
        ],
        tol,
    )
    .param("p", p)
    .param("t", t))
}

/// `−p ∫∫ k̂ |γ̇|^p dπ_t ds − [W_p^p(t+δ) − W_p^p(t)]/δ` along the heat flow.
#[allow(clippy::too_many_arguments)]
pub fn derivative_of_wp(
    space: &Space,
    table: &PairTable,
    heat: &Semigroup,
    mu: &[f64],
    nu: &[f64],
    p: f64,
    t: f64,
    delta: f64,
) -> Result<CheckReport> {
    if !(delta > 0.0) {
        return Err(Error::arg("delta must be positive"));
    }
    check_prob(space, mu, "mu")?;
    check_prob(space, nu, "nu")?;
    let clamp = |v: Vec<f64>| v.into_iter().map(|a| a.max(0.0)).collect::<Vec<f64>>();
    let (a0, b0) = (clamp(heat.apply_masses(t, mu)?), clamp(heat.apply_masses(t, nu)?));
    let (a1, b1) = (clamp(heat.apply_masses(t + delta, mu)?), clamp(heat.apply_masses(t + delta, nu)?));
    let (_, plan) = wasserstein(space, &a0, &b0, p)?;
    let (_, next) = wasserstein(space, &a1, &b1, p)?;
    let curv: f64 = plan.entries.iter().map(|&(x, y, m)| m * table.get(x, y) * space.d(x, y).powf(p)).sum();
    let residual = -p * curv - (next.cost - plan.cost) / delta;
    Ok(CheckReport::single("derivative_wp", "plan", residual, 1e-1).param("p", p).param("t", t).param("delta", delta))
}
