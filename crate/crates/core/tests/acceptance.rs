//! Acceptance checks 1 to 12; prints one PASS/FAIL line per criterion.
//! Set `ACCEPTANCE_STRICT=1` to exit nonzero when any criterion fails.

use std::time::Instant;

use curvlab::calculus::Semigroup;
use curvlab::cli::{self, ExperimentConfig, KUWADA_BAND, KUWADA_PAIRS};
use curvlab::coupling::{
    build_pcp, check_pte_diracs, dp_sweep, feynman_kac_mc, perturbed_cost_exact_with, perturbed_cost_mc, ExactCaps,
    ExactMode, PathLattice,
};
use curvlab::eulerian::{be_sweep, GradientChecker, TestBank};
use curvlab::registry::{self, Instance, NAMES};
use curvlab::space::{Edge, Space};
use curvlab::transport::{
    check_cd, check_evi, differential_transport_residual, green_integral, kantorovich_gap, wasserstein, Richardson,
};
use curvlab::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GE_TIMES: [f64; 2] = [0.1, 0.5];
const PTE_TIMES: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
const PTE_STEPS: usize = 5;
const BANK_SEED: u64 = 7;

type Outcome = Result<(bool, String)>;
type Criterion = (&'static str, fn() -> Outcome);

fn ge(inst: &Instance, q: f64) -> Result<f64> {
    let bank = TestBank::new(&inst.space, BANK_SEED);
    Ok(GradientChecker::new(&inst.space, &inst.field).sweep(q, &GE_TIMES, &bank)?.worst_residual)
}

fn be(inst: &Instance, q: f64) -> Result<f64> {
    let bank = TestBank::new(&inst.space, BANK_SEED);
    Ok(be_sweep(&inst.space, &inst.field, q, &bank)?.worst_residual)
}

fn constant_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut ok = true;
    let cases = [("two-state", None, ExactCaps { max_nodes: 2, max_steps: 8 }, ExactMode::PathLp), ("ou-constK", Some(20), ExactCaps::default(), ExactMode::Auto)];
    for (name, nodes, caps, mode) in cases {
        let inst = registry::build(name, nodes)?;
        let k = inst.field.lower_bound();
        let heat = Semigroup::heat(&inst.space);
        for n in [2, 4, 8] {
            for t in [0.1, 0.3] {
                let v = perturbed_cost_exact_with(&inst.space, inst.field.k_hat_table(), &inst.mu, &inst.nu, 2.0, t, n, caps, mode)?.value;
                let (a, b) = (heat.apply_masses(t, &inst.mu)?, heat.apply_masses(t, &inst.nu)?);
                let target = (k * t).exp() * wasserstein(&inst.space, &a, &b, 2.0)?.0;
                let err = (v - target).abs();
                ok &= err <= 0.5 / n as f64;
                worst = worst.max(err * n as f64);
            }
        }
    }
    Ok((ok, format!("max N*|exact - e^(Kt) W2| = {worst:.3e} (bound 0.5)")))
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Result<Space> {
    let mut edges = Vec::new();
    for j in 1..n {
        let i = rng.random_range(0..j);
        edges.push(Edge { i, j, length: rng.random_range(0.5..2.0), weight: rng.random_range(0.2..2.0) });
    }
    for _ in 0..n / 2 {
        let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
        if i != j {
            edges.push(Edge { i, j, length: rng.random_range(0.5..2.0), weight: rng.random_range(0.2..2.0) });
        }
    }
    let measure = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    Space::graph(n, edges, measure)
}

fn random_measure(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random::<f64>() }).collect();
    let s: f64 = w.iter().sum();
    if s == 0.0 {
        let mut v = vec![0.0; n];
        v[0] = 1.0;
        return v;
    }
    w.into_iter().map(|v| v / s).collect()
}

fn kantorovich() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let n = rng.random_range(3..=50);
        let space = random_graph(&mut rng, n)?;
        let (mu, nu) = (random_measure(&mut rng, n), random_measure(&mut rng, n));
        let bank: Vec<Vec<f64>> = TestBank::new(&space, i).fs.into_iter().map(|(_, f)| f).collect();
        for p in [1.0, 2.0, 3.0] {
            worst = worst.max(kantorovich_gap(&space, &mu, &nu, p, &bank)?.abs());
        }
    }
    Ok((worst <= 1e-8, format!("max |gap| = {worst:.3e} over 20 graphs x p in {{1,2,3}}")))
}

fn improves(coarse: f64, fine: f64) -> bool {
    let (vc, vf) = ((-coarse).max(0.0), (-fine).max(0.0));
    vc <= 1e-9 || vf <= vc / 1.5
}

fn be_ge_equivalence() -> Outcome {
    let mut ok = true;
    let mut msg = Vec::new();
    for name in ["ou-constK", "ou-variable"] {
        let (c, f) = (registry::build(name, None)?, registry::build(name, Some(241))?);
        let (gc, gf, bc, bf) = (ge(&c, 2.0)?, ge(&f, 2.0)?, be(&c, 2.0)?, be(&f, 2.0)?);
        ok &= gc >= -5e-2 && bc >= -5e-2 && improves(gc, gf) && improves(bc, bf);
        msg.push(format!("{name}: GE2 {gc:.2e}->{gf:.2e}, BE2 {bc:.2e}->{bf:.2e}"));
    }
    Ok((ok, msg.join("; ")))
}

fn q_independence() -> Outcome {
    let mut worst = f64::INFINITY;
    for name in ["ou-constK", "ou-variable"] {
        let inst = registry::build(name, None)?;
        for q in [1.0, 1.5, 3.0, 4.0] {
            worst = worst.min(ge(&inst, q)?).min(be(&inst, q)?);
        }
    }
    Ok((worst >= -5e-2, format!("min GE_q/BE_q residual = {worst:.3e}")))
}

fn cd() -> Outcome {
    let inst = registry::build("gauss-pair-1d", None)?;
    let ts: Vec<f64> = (1..10).map(|i| i as f64 / 10.0).collect();
    let r = check_cd(&inst.space, &inst.field, &inst.mu, &inst.nu, &ts)?.worst_residual;
    let quad = ts.iter().map(|&t| (green_integral(t) - t * (1.0 - t) / 2.0).abs()).fold(0.0, f64::max);
    Ok((r >= -5e-2 && quad <= 1e-6, format!("min CD residual = {r:.3e}, Green quadrature error = {quad:.1e}")))
}

fn evi() -> Outcome {
    let inst = registry::build("gauss-pair-1d", None)?;
    let rep = check_evi(&inst.space, &inst.field, &inst.mu, &inst.nu, &[0.1, 0.2, 0.3, 0.5], 1e-3)?;
    let rich: Vec<Richardson> = serde_json::from_value(rep.params["richardson"].clone())?;
    let red = rich.iter().map(Richardson::reduction).fold(f64::INFINITY, f64::min);
    let r = rep.worst_residual;
    Ok((r >= -1e-1 && red >= 2.0, format!("min EVI residual = {r:.3e}, min Richardson reduction = {red:.2e}")))
}

fn kuwada() -> Outcome {
    let mut ok = true;
    let mut bad = Vec::new();
    for name in NAMES {
        let inst = registry::build(name, None)?;
        for (p, q) in KUWADA_PAIRS {
            let g = ge(&inst, q)?;
            let t = check_pte_diracs(&inst.space, inst.field.k_hat_table(), p, &PTE_TIMES, PTE_STEPS)?.worst_residual;
            if (g >= -KUWADA_BAND) != (t >= -KUWADA_BAND) {
                ok = false;
                bad.push(format!("{name} (p={p},q={q}): GE {g:.2e} vs PTE {t:.2e}"));
            }
        }
    }
    let msg = if bad.is_empty() { "all instances agree".to_string() } else { format!("disagree: {}", bad.join("; ")) };
    Ok((ok, msg))
}

fn differential_transport() -> Outcome {
    let inst = registry::build("ou-variable", None)?;
    let heat = Semigroup::heat(&inst.space);
    let n = inst.space.len();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = f64::INFINITY;
    let mut witness = (0, 0);
    for _ in 0..10 {
        let (x, y) = loop {
            let (x, y) = (rng.random_range(0..n), rng.random_range(0..n));
            if x != y {
                break (x, y);
            }
        };
        let r = differential_transport_residual(&inst.space, &inst.field, &heat, x, y, 2.0, 1e-3)?.entry("k_hat").unwrap();
        if r < worst {
            (worst, witness) = (r, (x, y));
        }
    }
    let cycle = registry::build("four-cycle", None)?;
    let heat = Semigroup::heat(&cycle.space);
    let mut order = true;
    for x in 0..4 {
        for y in 0..4 {
            if x != y {
                let r = differential_transport_residual(&cycle.space, &cycle.field, &heat, x, y, 2.0, 1e-3)?;
                order &= r.entry("k_bar").unwrap() <= r.entry("k_hat").unwrap();
            }
        }
    }
    Ok((
        worst >= -1e-1 && order,
        format!("min k_hat residual = {worst:.3e} at {witness:?}; four-cycle k_bar <= k_hat: {order}"),
    ))
}

fn engine_ordering() -> Outcome {
    let (p, t, steps) = (2.0, 0.3, 3);
    let mut ok = true;
    let mut msg = Vec::new();
    for name in NAMES {
        let inst = registry::build(name, None)?;
        let table = inst.field.k_hat_table();
        let exact = match perturbed_cost_exact_with(&inst.space, table, &inst.mu, &inst.nu, p, t, steps, ExactCaps::default(), ExactMode::Auto) {
            Ok(e) => e.value,
            Err(curvlab::Error::CapExceeded(_)) => continue,
            Err(e) => return Err(e),
        };
        let dp = dp_sweep(&inst.space, table, p, PathLattice::horizon(&inst.space, t, steps)?)?;
        let dv = dp.value(&inst.mu, &inst.nu, steps)?;
        let mc = perturbed_cost_mc(&inst.space, table, &dp.policy(&inst.mu, &inst.nu, steps)?, p, 10_000, 9)?;
        ok &= exact <= dv + 1e-9 && dv.powf(p) <= mc.mean + 3.0 * mc.std_err;
        msg.push(format!("{name}: gap {:.2e}", dv - exact));
    }
    Ok((ok, msg.join(", ")))
}

fn pcp() -> Outcome {
    let run = |name: &str, level: u32| -> Result<f64> {
        let inst = registry::build(name, Some(41))?;
        let n = inst.space.len();
        Ok(build_pcp(&inst.space, inst.field.k_bar_table(), &[(n / 4, 3 * n / 4, 1.0)], level, 1, 10_000, 5, 0.05)?
            .violation_fraction)
    };
    let main = run("ou-constK", 6)?;
    let fr: Vec<f64> = [4, 6, 8].iter().map(|&l| run("ou-variable", l)).collect::<Result<_>>()?;
    let mono = fr.windows(2).all(|w| w[1] <= w[0]);
    Ok((
        main <= 0.01 && mono,
        format!("ou-constK violation fraction {main:.4}; ou-variable levels 4/6/8: {fr:.4?}"),
    ))
}

fn feynman_kac() -> Outcome {
    let inst = registry::build("three-chain", None)?;
    let f = [1.0, -0.5, 2.0];
    let mut worst: f64 = 0.0;
    for q in [1.0, 2.0] {
        for t in [0.1, 0.5] {
            let exact = Semigroup::schrodinger(&inst.space, &inst.field, q).apply(t, &f)?;
            let est = feynman_kac_mc(&inst.space, &inst.field, q, t, &f, 1_000_000, 11)?;
            for ((m, se), e) in est.mean.iter().zip(&est.std_err).zip(&exact) {
                worst = worst.max((m - e).abs() / se);
            }
        }
    }
    Ok((worst <= 3.0, format!("max |z| = {worst:.2}")))
}

fn determinism() -> Outcome {
    let cfg: ExperimentConfig = serde_json::from_str(r#"{"space":"gauss-pair-1d","suite":"all","seed":42}"#)?;
    let dir = tempfile::tempdir()?;
    let mut bytes = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("run{i}"));
        let outcome = cli::run(&cfg)?;
        cli::write_outputs(&outcome, &out, std::time::SystemTime::now(), 0.0)?;
        bytes.push(std::fs::read(out.join("report.json"))?);
    }
    Ok((bytes[0] == bytes[1], format!("report.json {} bytes, identical: {}", bytes[0].len(), bytes[0] == bytes[1])))
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("constant-curvature identity", constant_identity),
        ("Kantorovich duality", kantorovich),
        ("BE/GE equivalence", be_ge_equivalence),
        ("hierarchy and q-independence", q_independence),
        ("CD convexity", cd),
        ("EVI", evi),
        ("Kuwada duality", kuwada),
        ("differential transport", differential_transport),
        ("engine ordering", engine_ordering),
        ("pathwise coupling", pcp),
        ("Feynman-Kac", feynman_kac),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let clock = Instant::now();
        let (pass, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        failures += usize::from(!pass);
        let status = if pass { "PASS" } else { "FAIL" };
        println!("{status} criterion {:>2} {name}: {detail} [{:.1}s]", i + 1, clock.elapsed().as_secs_f64());
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failures, criteria.len());
    if failures > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
