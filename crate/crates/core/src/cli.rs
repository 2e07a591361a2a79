//! Experiment runner: configs, suites and report files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calculus::Semigroup;
use crate::coupling::{
    build_pcp, check_pte, check_pte_diracs, feynman_kac_mc_at, perturbed_cost_dp, perturbed_cost_exact_with,
    perturbed_cost_mc, dp_sweep, ExactCaps, ExactMode, PathLattice,
};
use crate::eulerian::{
    be_sweep, check_ge_hierarchy, check_iterated_gamma, self_improvement_exponents, CheckReport, Entry,
    GradientChecker, TestBank,
};
use crate::registry::{self, Instance};
use crate::space::{load_space, CurvatureField, Space};
use crate::transport::{
    check_cd, check_evi, check_hamilton_jacobi, check_vertical_contraction, derivative_of_wp,
    differential_transport_residual, green_integral, kantorovich_gap, Richardson,
};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Eulerian,
    Lagrangian,
    Coupling,
    Equivalence,
    All,
}

impl Suite {
    fn needs_seed(self) -> bool {
        matches!(self, Suite::Coupling | Suite::Equivalence | Suite::All)
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown suite {s:?}")))
    }
}

/// Curvature override applied on top of the registry or file curvature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CurvatureSpec {
    Constant { value: f64 },
    Values { values: Vec<f64> },
    Shift { by: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub ge_times: Vec<f64>,
    pub pte_times: Vec<f64>,
    pub pte_steps: usize,
    pub cd_times: Vec<f64>,
    pub evi_times: Vec<f64>,
    pub evi_delta: f64,
    pub transport_delta: f64,
    pub transport_pairs: usize,
    pub vertical_time: f64,
    pub exact_time: f64,
    pub exact_steps: usize,
    /// Run the exact engine as a path LP even when it exceeds the caps.
    pub force_path_lp: bool,
    pub samples: usize,
    pub fk_samples: usize,
    pub fk_q: Vec<f64>,
    pub fk_times: Vec<f64>,
    pub pcp_level: u32,
    pub pcp_horizon: usize,
    pub pcp_tolerance: f64,
    /// Node count of the coarse chain used for sampled couplings on segments.
    pub coarse_nodes: usize,
    pub bank_seed: u64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            p: vec![2.0, 3.0],
            q: vec![1.0, 1.5, 2.0, 3.0, 4.0],
            ge_times: vec![0.1, 0.5],
            pte_times: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            pte_steps: 5,
            cd_times: (1..10).map(|i| i as f64 / 10.0).collect(),
            evi_times: vec![0.1, 0.2, 0.3, 0.5],
            evi_delta: 1e-3,
            transport_delta: 1e-3,
            transport_pairs: 10,
            vertical_time: 0.2,
            exact_time: 0.3,
            exact_steps: 3,
            force_path_lp: false,
            samples: 10_000,
            fk_samples: 20_000,
            fk_q: vec![1.0, 2.0],
            fk_times: vec![0.1, 0.5],
            pcp_level: 6,
            pcp_horizon: 1,
            pcp_tolerance: 0.05,
            coarse_nodes: 41,
            bank_seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Registry instance name.
    #[serde(default)]
    pub space: Option<String>,
    /// Space file; exclusive with `space`.
    #[serde(default)]
    pub space_file: Option<PathBuf>,
    /// Node count override for segment registry instances.
    #[serde(default)]
    pub nodes: Option<usize>,
    #[serde(default)]
    pub curvature: Option<CurvatureSpec>,
    #[serde(default)]
    pub mu: Option<Vec<f64>>,
    #[serde(default)]
    pub nu: Option<Vec<f64>>,
    pub suite: Suite,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Per-condition tolerance overrides.
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.space, &self.space_file) {
            (Some(name), None) => {
                if !registry::NAMES.contains(&name.as_str()) {
                    return Err(Error::Config(format!("unknown registry instance {name:?}")));
                }
            }
            (None, Some(_)) => {}
            _ => return Err(Error::Config("exactly one of space and space_file must be given".into())),
        }
        if self.suite.needs_seed() && self.seed.is_none() {
            return Err(Error::Config(format!("suite {:?} runs Monte Carlo engines and needs a seed", self.suite)));
        }
        for (k, &v) in &self.tolerances {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("tolerance {k} = {v} must be positive")));
            }
        }
        let pr = &self.params;
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if pr.p.is_empty() || pr.p.iter().any(|&p| !(p >= 1.0) || !p.is_finite()) {
            return bad("p values must be finite and >= 1");
        }
        if pr.q.iter().chain(&pr.fk_q).any(|&q| !(q >= 1.0) || !q.is_finite()) {
            return bad("q values must be finite and >= 1");
        }
        let grids = [&pr.ge_times, &pr.cd_times, &pr.evi_times, &pr.fk_times];
        if grids.iter().any(|g| g.is_empty() || g.iter().any(|t| !(*t >= 0.0) || !t.is_finite())) {
            return bad("time grids must be nonempty and nonnegative");
        }
        if pr.cd_times.iter().any(|t| *t > 1.0) {
            return bad("CD times must lie in [0, 1]");
        }
        if pr.pte_times.len() < 2 || pr.pte_times.windows(2).any(|w| !(w[1] > w[0])) || pr.pte_times[0] < 0.0 {
            return bad("PTE times must be increasing with at least two points");
        }
        if pr.pte_steps == 0 || pr.samples == 0 || pr.fk_samples == 0 || pr.pcp_horizon == 0 || pr.exact_steps == 0 {
            return bad("steps, samples and horizons must be positive");
        }
        if !(pr.evi_delta > 0.0) || !(pr.transport_delta > 0.0) || !(pr.pcp_tolerance > 0.0) {
            return bad("deltas and tolerances must be positive");
        }
        if !(pr.vertical_time >= 0.0) || !(pr.exact_time > 0.0) {
            return bad("vertical_time must be nonnegative and exact_time positive");
        }
        if pr.pcp_level > 12 {
            return bad("pcp_level must be at most 12");
        }
        if pr.coarse_nodes < 3 {
            return bad("coarse_nodes must be at least 3");
        }
        Ok(())
    }
}

/// Column-labelled data series written as CSV.
#[derive(Clone, Debug, Serialize)]
pub struct Curve {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub instance: String,
    pub suite: Suite,
    pub seed: Option<u64>,
    pub nodes: usize,
    pub config: ExperimentConfig,
    pub pass: bool,
    pub reports: Vec<CheckReport>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: Report,
    pub curves: Vec<Curve>,
}

impl RunOutcome {
    pub fn pass(&self) -> bool {
        self.report.pass
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    inst: Instance,
    reports: Vec<CheckReport>,
    curves: Vec<Curve>,
}

fn apply_curvature(space: &Space, base: Option<Vec<f64>>, spec: &Option<CurvatureSpec>) -> Result<CurvatureField> {
    let field = match (spec, base) {
        (Some(CurvatureSpec::Constant { value }), _) => CurvatureField::constant(space, *value)?,
        (Some(CurvatureSpec::Values { values }), _) => CurvatureField::new(space, values.clone())?,
        (Some(CurvatureSpec::Shift { by }), Some(k)) => CurvatureField::new(space, k)?.shifted(*by),
        (None, Some(k)) => CurvatureField::new(space, k)?,
        (_, None) => return Err(Error::Config("space file carries no curvature; give one in the config".into())),
    };
    Ok(field)
}

fn dirac(n: usize, x: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[x] = 1.0;
    v
}

fn check_measure(v: &[f64], n: usize, what: &str) -> Result<()> {
    if v.len() != n || v.iter().any(|a| !(*a >= 0.0)) || (v.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("{what} must be a probability vector of length {n}")));
    }
    Ok(())
}

/// Resolves the configured space, curvature and measures; `nodes` overrides segment resolution.
fn resolve(cfg: &ExperimentConfig, nodes: Option<usize>) -> Result<Instance> {
    let mut inst = if let Some(name) = &cfg.space {
        let inst = registry::build(name, nodes.or(cfg.nodes)).map_err(|e| Error::Config(e.to_string()))?;
        let base = Some(inst.field.k.clone());
        let field = apply_curvature(&inst.space, base, &cfg.curvature).map_err(|e| Error::Config(e.to_string()))?;
        Instance { field, ..inst }
    } else {
        let path = cfg.space_file.as_ref().unwrap();
        let (space, k) = load_space(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let field = apply_curvature(&space, k, &cfg.curvature).map_err(|e| Error::Config(e.to_string()))?;
        let n = space.len();
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Instance {
            name,
            description: String::new(),
            mu: dirac(n, n / 4),
            nu: dirac(n, 3 * n / 4),
            space,
            field,
        }
    };
    if nodes.is_none() {
        let n = inst.space.len();
        if let Some(mu) = &cfg.mu {
            check_measure(mu, n, "mu")?;
            inst.mu = mu.clone();
        }
        if let Some(nu) = &cfg.nu {
            check_measure(nu, n, "nu")?;
            inst.nu = nu.clone();
        }
    }
    Ok(inst)
}

impl Ctx<'_> {
    fn push(&mut self, report: CheckReport) {
        let mut r = report.with_instance(&self.inst.name);
        if let Some(&tol) = self.cfg.tolerances.get(&r.condition) {
            r = r.with_tolerance(tol);
        }
        self.reports.push(r);
    }

    fn params(&self) -> &Params {
        &self.cfg.params
    }

    /// Coarse chain for sampled couplings: segment registry instances are rebuilt.
    fn coarse(&self) -> Result<Instance> {
        let coarse_ok = self.cfg.space.is_some()
            && self.inst.space.is_segment()
            && !matches!(self.cfg.curvature, Some(CurvatureSpec::Values { .. }));
        if coarse_ok && self.inst.space.len() > self.params().coarse_nodes {
            resolve(self.cfg, Some(self.params().coarse_nodes))
        } else {
            Ok(self.inst.clone())
        }
    }
}

fn ge_sweep(space: &Space, field: &CurvatureField, q: f64, ts: &[f64], bank: &TestBank) -> Result<CheckReport> {
    let r = GradientChecker::new(space, field).sweep(q, ts, bank)?;
    Ok(CheckReport { condition: format!("GE_{q}"), ..r })
}

fn be(space: &Space, field: &CurvatureField, q: f64, bank: &TestBank) -> Result<CheckReport> {
    let r = be_sweep(space, field, q, bank)?;
    Ok(CheckReport { condition: format!("BE_{q}"), ..r })
}

fn suite_eulerian(ctx: &mut Ctx) -> Result<()> {
    let (space, field) = (ctx.inst.space.clone(), ctx.inst.field.clone());
    let pr = ctx.params().clone();
    let bank = TestBank::new(&space, pr.bank_seed);
    for &q in &pr.q {
        ctx.push(be(&space, &field, q, &bank)?);
        ctx.push(ge_sweep(&space, &field, q, &pr.ge_times, &bank)?);
    }
    let mut qs = pr.q.clone();
    qs.sort_by(f64::total_cmp);
    qs.dedup();
    for w in qs.windows(2) {
        let mut entries = Vec::new();
        for (name, f) in bank.fs.iter().take(8) {
            let r = check_ge_hierarchy(&space, &field, w[0], w[1], pr.ge_times[0], f)?;
            entries.push(Entry { label: name.clone(), residual: r.worst_residual });
        }
        ctx.push(
            CheckReport::from_entries(&format!("GE_hierarchy_{}_{}", w[0], w[1]), entries, 1e-9)
                .param("t", pr.ge_times[0]),
        );
    }
    let mut entries = Vec::new();
    for (name, f) in &bank.fs {
        let r = check_iterated_gamma(&space, &field, f)?;
        entries.push(Entry { label: format!("{name}/{}", r.witness), residual: r.worst_residual });
    }
    ctx.push(CheckReport::from_entries("iterated_gamma", entries, 5e-2).as_diagnostic());
    let si = self_improvement_exponents(0.1)?;
    let err = si.iterates.last().map_or(0.0, |v| (v - 0.1).abs());
    ctx.push(
        CheckReport::single("self_improvement", "eps=0.1", -err, 1e-12)
            .param("n", si.n)
            .param("q_prime", si.q_prime)
            .as_diagnostic(),
    );
    Ok(())
}

fn pick_pairs(n: usize, count: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| loop {
            let (x, y) = (rng.random_range(0..n), rng.random_range(0..n));
            if x != y {
                break (x, y);
            }
        })
        .collect()
}

fn suite_lagrangian(ctx: &mut Ctx) -> Result<()> {
    let inst = ctx.inst.clone();
    let (space, field) = (&inst.space, &inst.field);
    let pr = ctx.params().clone();
    let bank = TestBank::new(space, pr.bank_seed);
    for &p in &pr.p {
        let gap = kantorovich_gap(space, &inst.mu, &inst.nu, p, &[])?;
        ctx.push(CheckReport::single(&format!("kantorovich_gap_{p}"), "gap", -gap, 1e-8).param("gap", gap));
    }
    let heat = Semigroup::heat(space);
    let pairs = pick_pairs(space.len(), pr.transport_pairs, pr.bank_seed);
    for &p in &pr.p {
        let mut hat = Vec::new();
        let mut order = Vec::new();
        for &(x, y) in &pairs {
            let r = differential_transport_residual(space, field, &heat, x, y, p, pr.transport_delta)?;
            let (h, b) = (r.entry("k_hat").unwrap(), r.entry("k_bar").unwrap());
            hat.push(Entry { label: format!("({x},{y})"), residual: h });
            order.push(Entry { label: format!("({x},{y})"), residual: h - b });
        }
        ctx.push(
            CheckReport::from_entries(&format!("differential_transport_{p}"), hat, 1e-1)
                .param("delta", pr.transport_delta),
        );
        ctx.push(CheckReport::from_entries(&format!("differential_transport_order_{p}"), order, 1e-12));
        let v = check_vertical_contraction(space, field, &inst.mu, &inst.nu, p, pr.vertical_time)?;
        ctx.push(CheckReport { condition: format!("vertical_contraction_{p}"), ..v });
        let d = derivative_of_wp(space, field.k_hat_table(), &heat, &inst.mu, &inst.nu, p, 0.0, pr.transport_delta)?;
        ctx.push(CheckReport { condition: format!("derivative_wp_{p}"), ..d });
    }
    if let Some((_, f)) = bank.fs.first() {
        ctx.push(check_hamilton_jacobi(space, f, 2.0, &[0.25, 0.5, 0.75, 1.0])?);
    }
    let green: Vec<Entry> = pr
        .cd_times
        .iter()
        .map(|&t| Entry { label: format!("t={t}"), residual: -(green_integral(t) - t * (1.0 - t) / 2.0).abs() })
        .collect();
    ctx.push(CheckReport::from_entries("green_quadrature", green, 1e-6));
    if space.is_segment() {
        let cd = check_cd(space, field, &inst.mu, &inst.nu, &pr.cd_times)?;
        ctx.push(cd);
        let evi = check_evi(space, field, &inst.mu, &inst.nu, &pr.evi_times, pr.evi_delta)?;
        let rich: Vec<Richardson> = serde_json::from_value(evi.params["richardson"].clone()).unwrap_or_default();
        let entries = rich
            .iter()
            .map(|r| Entry { label: format!("t={}", r.t), residual: r.reduction() - 2.0 })
            .collect();
        ctx.push(evi);
        ctx.push(CheckReport::from_entries("EVI_richardson", entries, 1e-12));
    }
    Ok(())
}

fn pte_reports(ctx: &mut Ctx, p: f64) -> Result<CheckReport> {
    let (space, field) = (ctx.inst.space.clone(), ctx.inst.field.clone());
    let pr = ctx.params().clone();
    let hat = check_pte_diracs(&space, field.k_hat_table(), p, &pr.pte_times, pr.pte_steps)?.param("table", "k_hat");
    if field.k_hat_table() != field.k_bar_table() {
        let bar = check_pte_diracs(&space, field.k_bar_table(), p, &pr.pte_times, pr.pte_steps)?;
        ctx.push(CheckReport { condition: format!("PTE_{p}_bar"), ..bar.param("table", "k_bar") });
    }
    Ok(hat)
}

fn pcp_report(ctx: &mut Ctx) -> Result<()> {
    let pr = ctx.params().clone();
    let coarse = ctx.coarse()?;
    let initial: Vec<(usize, usize, f64)> = coarse
        .mu
        .iter()
        .enumerate()
        .filter(|e| *e.1 > 0.0)
        .flat_map(|(x, &a)| coarse.nu.iter().enumerate().filter(|e| *e.1 > 0.0).map(move |(y, &b)| (x, y, a * b)))
        .collect();
    let cert = build_pcp(
        &coarse.space,
        coarse.field.k_bar_table(),
        &initial,
        pr.pcp_level,
        pr.pcp_horizon,
        pr.samples,
        ctx.cfg.seed.unwrap_or(0),
        pr.pcp_tolerance,
    )?;
    let mut sorted = cert.worst_ratios.clone();
    sorted.sort_by(f64::total_cmp);
    let bins = 20;
    let hi = 1.0 + 10.0 * pr.pcp_tolerance;
    let mut counts = vec![0usize; bins + 1];
    for r in &cert.worst_ratios {
        let b = (((r - 1.0) / (hi - 1.0)) * bins as f64).floor();
        counts[if b.is_finite() { (b.max(0.0) as usize).min(bins) } else { bins }] += 1;
    }
    ctx.curves.push(Curve {
        name: "pcp_ratio_histogram".into(),
        header: vec!["ratio_lo".into(), "count".into()],
        rows: counts
            .iter()
            .enumerate()
            .map(|(i, &c)| vec![1.0 + (hi - 1.0) * i as f64 / bins as f64, c as f64])
            .collect(),
    });
    ctx.push(
        CheckReport::single("PCP", "violation_fraction", -cert.violation_fraction, 1e-2)
            .param("level", cert.level)
            .param("horizon", cert.horizon)
            .param("p", cert.p)
            .param("seed", cert.seed)
            .param("samples", cert.samples)
            .param("ratio_tolerance", cert.tolerance)
            .param("nodes", coarse.space.len())
            .param("median_ratio", sorted[sorted.len() / 2])
            .param("max_ratio", sorted.last().copied().unwrap_or(1.0)),
    );
    Ok(())
}

fn suite_coupling(ctx: &mut Ctx) -> Result<()> {
    let pr = ctx.params().clone();
    let seed = ctx.cfg.seed.unwrap_or(0);
    for &p in &pr.p {
        let r = pte_reports(ctx, p)?;
        ctx.push(r);
        let inst = ctx.inst.clone();
        let curve = check_pte(&inst.space, inst.field.k_hat_table(), &inst.mu, &inst.nu, p, &pr.pte_times, pr.pte_steps)?;
        let values: Vec<f64> = serde_json::from_value(curve.params["curve"].clone()).unwrap_or_default();
        ctx.curves.push(Curve {
            name: format!("pte_curve_p{p}"),
            header: vec!["t".into(), "cost".into()],
            rows: pr.pte_times.iter().zip(&values).map(|(&t, &v)| vec![t, v]).collect(),
        });
        ctx.push(CheckReport { condition: format!("PTE_{p}_pair"), ..curve });
    }
    engine_ordering(ctx, seed)?;
    pcp_report(ctx)?;
    let inst = ctx.inst.clone();
    let n = inst.space.len();
    let starts: Vec<usize> = if n <= 8 { (0..n).collect() } else { vec![0, n / 4, n / 2, 3 * n / 4, n - 1] };
    let f: Vec<f64> = (0..n).map(|x| (std::f64::consts::PI * x as f64 / (n - 1).max(1) as f64).cos()).collect();
    let mut entries = Vec::new();
    for &q in &pr.fk_q {
        let sg = Semigroup::schrodinger(&inst.space, &inst.field, q);
        for &t in &pr.fk_times {
            let exact = sg.apply(t, &f)?;
            let est = feynman_kac_mc_at(&inst.space, &inst.field, q, t, &f, &starts, pr.fk_samples, seed)?;
            for (i, &x) in starts.iter().enumerate() {
                let diff = (est.mean[i] - exact[x]).abs();
                let z = if est.std_err[i] > 0.0 { diff / est.std_err[i] } else if diff < 1e-12 { 0.0 } else { f64::INFINITY };
                entries.push(Entry { label: format!("q={q}/t={t}/node={x}"), residual: 3.0 - z });
            }
        }
    }
    ctx.push(CheckReport::from_entries("feynman_kac", entries, 1e-12).param("samples", pr.fk_samples));
    Ok(())
}

fn engine_ordering(ctx: &mut Ctx, seed: u64) -> Result<()> {
    let pr = ctx.params().clone();
    let caps = ExactCaps::default();
    let inst = ctx.coarse()?;
    let table = inst.field.k_hat_table();
    let constant = table.max() == table.min();
    let feasible = constant || (inst.space.len() <= caps.max_nodes && pr.exact_steps <= caps.max_steps);
    if !feasible && !pr.force_path_lp {
        return Ok(());
    }
    let mode = if pr.force_path_lp { ExactMode::PathLp } else { ExactMode::Auto };
    let p = pr.p[0];
    let (t, steps) = (pr.exact_time, pr.exact_steps);
    let exact = perturbed_cost_exact_with(&inst.space, table, &inst.mu, &inst.nu, p, t, steps, caps, mode)?;
    let lattice = PathLattice::horizon(&inst.space, t, steps)?;
    let dp = dp_sweep(&inst.space, table, p, lattice)?;
    let dv = dp.value(&inst.mu, &inst.nu, steps)?;
    let mc = perturbed_cost_mc(&inst.space, table, &dp.policy(&inst.mu, &inst.nu, steps)?, p, pr.samples, seed)?;
    let dpp = dv.powf(p);
    let entries = vec![
        Entry { label: "dp-exact".into(), residual: dpp - exact.value.powf(p) },
        Entry { label: "mc+3se-dp".into(), residual: mc.mean + 3.0 * mc.std_err - dpp },
    ];
    ctx.push(
        CheckReport::from_entries("engine_ordering", entries, 1e-9)
            .param("exact", exact.value)
            .param("dp", dv)
            .param("mc_mean", mc.mean)
            .param("mc_std_err", mc.std_err)
            .param("gap", dv - exact.value)
            .param("nodes", inst.space.len())
            .param("p", p)
            .param("t", t)
            .param("steps", steps),
    );
    debug_assert!((perturbed_cost_dp(&inst.space, table, &inst.mu, &inst.nu, p, t, steps)? - dv).abs() < 1e-12);
    Ok(())
}

/// Kuwada pairs `(p, q)` with `1/p + 1/q = 1`.
pub const KUWADA_PAIRS: [(f64, f64); 2] = [(2.0, 2.0), (3.0, 1.5)];
/// Sign band for the duality cross-check.
pub const KUWADA_BAND: f64 = 2e-2;

fn kuwada(ctx: &mut Ctx) -> Result<()> {
    let (space, field) = (ctx.inst.space.clone(), ctx.inst.field.clone());
    let pr = ctx.params().clone();
    let bank = TestBank::new(&space, pr.bank_seed);
    let mut entries = Vec::new();
    let mut detail = Vec::new();
    for (p, q) in KUWADA_PAIRS {
        let ge = ge_sweep(&space, &field, q, &pr.ge_times, &bank)?.worst_residual;
        let pte = check_pte_diracs(&space, field.k_hat_table(), p, &pr.pte_times, pr.pte_steps)?.worst_residual;
        let agree = (ge >= -KUWADA_BAND) == (pte >= -KUWADA_BAND);
        entries.push(Entry { label: format!("p={p},q={q}"), residual: if agree { 0.0 } else { -1.0 } });
        detail.push(serde_json::json!({ "p": p, "q": q, "ge": ge, "pte": pte }));
    }
    ctx.push(CheckReport::from_entries("kuwada_agreement", entries, 1e-12).param("band", KUWADA_BAND).param("pairs", detail));
    Ok(())
}

fn suite_equivalence(ctx: &mut Ctx) -> Result<()> {
    let inst = ctx.inst.clone();
    let pr = ctx.params().clone();
    let bank = TestBank::new(&inst.space, pr.bank_seed);
    ctx.push(be(&inst.space, &inst.field, 2.0, &bank)?);
    ctx.push(ge_sweep(&inst.space, &inst.field, 2.0, &pr.ge_times, &bank)?);
    if inst.space.is_segment() {
        ctx.push(check_cd(&inst.space, &inst.field, &inst.mu, &inst.nu, &pr.cd_times)?);
        ctx.push(check_evi(&inst.space, &inst.field, &inst.mu, &inst.nu, &pr.evi_times, pr.evi_delta)?);
    }
    let pte = pte_reports(ctx, 2.0)?;
    ctx.push(pte);
    pcp_report(ctx)?;
    kuwada(ctx)
}

/// Runs the configured suite in memory.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let inst = resolve(cfg, None)?;
    let mut ctx = Ctx { cfg, inst, reports: Vec::new(), curves: Vec::new() };
    match cfg.suite {
        Suite::Eulerian => suite_eulerian(&mut ctx)?,
        Suite::Lagrangian => suite_lagrangian(&mut ctx)?,
        Suite::Coupling => suite_coupling(&mut ctx)?,
        Suite::Equivalence => suite_equivalence(&mut ctx)?,
        Suite::All => {
            suite_eulerian(&mut ctx)?;
            suite_lagrangian(&mut ctx)?;
            suite_coupling(&mut ctx)?;
            kuwada(&mut ctx)?;
        }
    }
    let pass = ctx.reports.iter().all(|r| r.pass || r.diagnostic);
    let report = Report {
        schema_version: SCHEMA_VERSION,
        instance: ctx.inst.name.clone(),
        suite: cfg.suite,
        seed: cfg.seed,
        nodes: ctx.inst.space.len(),
        config: cfg.clone(),
        pass,
        reports: ctx.reports,
    };
    Ok(RunOutcome { report, curves: ctx.curves })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Writes `report.json`, `report.meta.json`, `summary.csv` and one CSV per curve.
pub fn write_outputs(outcome: &RunOutcome, dir: &Path, started: SystemTime, elapsed: f64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut json = serde_json::to_vec_pretty(&outcome.report)?;
    json.push(b'\n');
    let header: Vec<String> = ["condition", "instance", "worst_residual", "tolerance", "pass", "diagnostic", "witness"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let summary = csv_bytes(
        &header,
        outcome.report.reports.iter().map(|r| {
            vec![
                r.condition.clone(),
                r.instance.clone(),
                format!("{:e}", r.worst_residual),
                format!("{:e}", r.tolerance),
                r.pass.to_string(),
                r.diagnostic.to_string(),
                r.witness.clone(),
            ]
        }),
    )?;
    let mut curves = Vec::new();
    for c in &outcome.curves {
        let body = csv_bytes(&c.header, c.rows.iter().map(|row| row.iter().map(|v| format!("{v:e}")).collect()))?;
        curves.push((dir.join(format!("{}.csv", c.name)), body));
    }
    for (path, body) in &curves {
        write_atomic(path, body)?;
    }
    write_atomic(&dir.join("summary.csv"), &summary)?;
    let since = started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let meta = serde_json::json!({ "started_unix": since, "elapsed_seconds": elapsed });
    write_atomic(&dir.join("report.meta.json"), &serde_json::to_vec_pretty(&meta)?)?;
    write_atomic(&dir.join("report.json"), &json)
}

/// Command-line overrides for `run`.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub suite: Option<String>,
}

/// Loads, runs and writes a config; returns the outcome.
pub fn execute(config: &Path, overrides: &Overrides) -> Result<RunOutcome> {
    let mut cfg = ExperimentConfig::from_file(config)?;
    if let (Some(file), Some(dir)) = (&cfg.space_file, config.parent()) {
        if file.is_relative() {
            cfg.space_file = Some(dir.join(file));
        }
    }
    if let Some(seed) = overrides.seed {
        cfg.seed = Some(seed);
    }
    if let Some(s) = &overrides.suite {
        cfg.suite = s.parse()?;
    }
    let out = overrides.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("curvlab-out"));
    let started = SystemTime::now();
    let clock = Instant::now();
    let outcome = run(&cfg)?;
    write_outputs(&outcome, &out, started, clock.elapsed().as_secs_f64())?;
    Ok(outcome)
}

/// Exit status: 0 pass, 1 failing check, 2 invalid config, 3 cap exceeded.
pub fn exit_code(result: &Result<RunOutcome>) -> i32 {
    match result {
        Ok(o) if o.pass() => 0,
        Ok(_) => 1,
        Err(Error::Config(_)) | Err(Error::Json(_)) => 2,
        Err(Error::CapExceeded(_)) => 3,
        Err(_) => 1,
    }
}
