//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use gsmlab::bodies::*;
use gsmlab::estimators::worst_case_risk_search;
use gsmlab::experiments::*;
use gsmlab::mc::McEstimate;
use gsmlab::sampling_priors::*;
use gsmlab::testing::*;
use gsmlab::RngStreamSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CHI2_REL_TOL: f64 = 1e-12;
const CHI2_RUNTIME: Duration = Duration::from_secs(10);
const TV_TOL: f64 = 1e-12;
const TV_TARGET: f64 = 1.0 / 16.0;
const CI_MULTIPLE: f64 = 3.0;
const GOF_MAX_ERROR: f64 = 0.28;
const LFHT_MAX_ERROR: f64 = 0.28;
const SELECTION_SLACK: f64 = 0.02;
const GOF_SLOPE: (f64, f64) = (2.0, 2.9);
const EST_SLOPE: (f64, f64) = (2.3, 3.1);
const RATE_RUNTIME: Duration = Duration::from_secs(30 * 60);
const TRADEOFF_RATIO: f64 = 6.0;
const TAIL_ENERGY_TOL: f64 = 1e-6;
const DELTA: f64 = 1.0 / 32.0;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn c01_chi2_enumeration() -> Verdict {
    let start = Instant::now();
    let mut r = rng(101);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let (exact, bf): (f64, f64) = if case % 2 == 0 {
            let dim = r.gen_range(1..=10);
            let theta = ThetaVector::new((0..dim).map(|_| r.gen_range(-1.0..1.0)).collect());
            let n = r.gen_range(1..=10);
            (
                chi2_two_point_exact(&theta, n),
                chi2_bruteforce_enum(&ProductPrior::TwoPointSym(theta), n, DEFAULT_PAIR_LIMIT).map_err(|e| e.to_string())?,
            )
        } else {
            let d = r.gen_range(1..=6);
            let (h, rr, m) = (r.gen_range(0.0..1.0), r.gen_range(-1.5..1.5), r.gen_range(1..=10));
            let prior = ProductPrior::ternary(d, h, rr).map_err(|e| e.to_string())?;
            (chi2_ternary_exact(d, h, rr, m), chi2_bruteforce_enum(&prior, m, DEFAULT_PAIR_LIMIT).map_err(|e| e.to_string())?)
        };
        let rel = if exact == 0.0 { bf.abs() } else { (bf - exact).abs() / exact.abs() };
        worst = worst.max(rel);
    }
    let took = start.elapsed();
    check(
        worst <= CHI2_REL_TOL && took < CHI2_RUNTIME,
        format!("max relative error {worst:.2e} over 100 cases in {took:.2?}"),
    )
}

fn c02_ingster_domination() -> Verdict {
    let mut r = rng(202);
    let mut violations = 0;
    for case in 0..1000 {
        let dim = r.gen_range(1..=12);
        let theta = if case % 50 == 0 {
            ThetaVector::zeros(dim)
        } else {
            ThetaVector::new((0..dim).map(|_| r.gen_range(-1.0..1.0)).collect())
        };
        let n = r.gen_range(1..=30);
        let (exact, bound) = (chi2_two_point_exact(&theta, n), ingster_bound_two_point(&theta, n));
        let ok = if theta.is_zero() { exact == 0.0 && bound == 0.0 } else { exact < bound };
        if !ok {
            violations += 1;
            eprintln!("domination violated: theta = {:?}, n = {n}, exact = {exact:e}, bound = {bound:e}", theta.coords());
        }
    }
    check(violations == 0, format!("{violations} violations in 1000 cases"))
}

fn c03_tv_bound() -> Verdict {
    let mut worst = 0.0f64;
    let mut regime = true;
    for &eps in &[0.5f64, 0.25, 0.1] {
        let b = tv_upper_bound_gof(eps.powf(-0.8), eps.powf(0.4) / 16.0, 8.0 * eps.powf(1.2), eps.powf(-2.4) / 64.0)
            .map_err(|e| e.to_string())?;
        worst = worst.max((b.value - TV_TARGET).abs());
        regime &= b.in_regime;
    }
    check(worst <= TV_TOL && regime, format!("max deviation from 1/16 is {worst:.2e}, in regime: {regime}"))
}

fn c04_soft_threshold_risk() -> Verdict {
    let eps = 0.25f64;
    let spec = soft_threshold_for(eps).map_err(|e| e.to_string())?;
    let n = ((eps / 8.0).powf(-8.0 / 3.0) * 4.0 * (1.0 / eps).ln()).ceil() as u64;
    let body = counterexample_body::<f64>(64).map_err(|e| e.to_string())?;
    let w = worst_case_risk_search(&body, &spec, n, 500, RngStreamSpec::root(404)).map_err(|e| e.to_string())?;
    check(
        w.risk.mean <= eps * eps + CI_MULTIPLE * w.risk.ci_radius,
        format!(
            "n = {n}, worst risk {:.5} +- {:.5} over {} candidates vs eps^2 = {}",
            w.risk.mean,
            w.risk.ci_radius,
            w.candidates,
            eps * eps
        ),
    )
}

fn c05_two_part_errors() -> Verdict {
    let eps = 0.25f64;
    let n = (eps.powf(-2.4) * (16.0 / eps).ln()).ceil() as u64;
    let body = counterexample_body::<f64>(64).map_err(|e| e.to_string())?;
    let problems = gof_two_part_problems(&body, eps).map_err(|e| e.to_string())?;
    let e = estimate_worst_error_rates(&problems, n, 0, 4000, RngStreamSpec::root(505), SamplingMode::Means)
        .map_err(|e| e.to_string())?;
    check(
        e.max_error() <= GOF_MAX_ERROR,
        format!("n = {n}, type I {:.4}, type II {:.4} (+-{:.4}), limit {GOF_MAX_ERROR}", e.type1, e.type2, e.ci_radius),
    )
}

fn c06_lfht_moments() -> Verdict {
    let (d, n, m) = (5usize, 200u64, 200u64);
    let tx = ThetaVector::new(vec![0.5 / (d as f64).sqrt(); d]);
    let ty = ThetaVector::zeros(d);
    let sep = tx.sub(&ty).norm_sq();
    let (mu, var) = lfht_projection_moments(sep, d, n, m);
    let s = RngStreamSpec::root(606);
    let stats: Vec<f64> = gsmlab::mc::run_trials(10_000, |k| {
        let means = sample_lfht_means(&tx, &ty, &tx, n, m, s.child(k), SamplingMode::FullData);
        lfht_projection_test_mean(&means.x(), &means.y(), &means.z, d).unwrap().statistic
    });
    let mean_est = McEstimate::from_values(&stats);
    let sq: Vec<f64> = stats.iter().map(|t| (t - mu).powi(2)).collect();
    let var_est = McEstimate::from_values(&sq);
    check(
        mean_est.covers(mu, CI_MULTIPLE) && var_est.covers(var, CI_MULTIPLE),
        format!(
            "mean {:.5} +- {:.5} vs {mu:.5}, variance {:.6} +- {:.6} vs {var:.6}",
            mean_est.mean, mean_est.ci_radius, var_est.mean, var_est.ci_radius
        ),
    )
}

fn c07_quadratic_region() -> Verdict {
    let eps = 0.5f64;
    let body = LpBody::constant(2.0, 1.0, 16).map_err(|e| e.to_string())?;
    let d = truncation_dim(&body, eps / 3.0).map_err(|e| e.to_string())?;
    let m = (96.0 / (eps * eps)).ceil() as u64;
    let mut n = (96.0 * (d as f64).sqrt() / (eps * eps)).ceil() as u64;
    let need = 768.0 * d as f64 / eps.powi(4);
    while ((m * n) as f64) < need {
        n += 1;
    }
    let in_region = lfht_region_predicate(&body, eps, m, n, DELTA, RegionKind::SufficientQuad).map_err(|e| e.to_string())?;
    let mut problems = lfht_pair_problems(&body, eps, DELTA).map_err(|e| e.to_string())?;
    if let Alternative::Single(spike) = worst_case_alternative(&body, eps, AlternativeKind::GofSpike).map_err(|e| e.to_string())? {
        problems.push(ErrorProblem::Lfht {
            test: LfhtTest::Projection { d },
            theta_x: spike,
            theta_y: ThetaVector::zeros(16),
        });
    }
    for p in &mut problems {
        if let ErrorProblem::Lfht { test, .. } = p {
            *test = LfhtTest::Projection { d };
        }
    }
    let e = estimate_worst_error_rates(&problems, n, m, 2000, RngStreamSpec::root(707), SamplingMode::Means)
        .map_err(|e| e.to_string())?;
    check(
        in_region && e.max_error() <= LFHT_MAX_ERROR,
        format!("d = {d}, m = {m}, n = {n}, max error {:.4} (+-{:.4})", e.max_error(), e.ci_radius),
    )
}

fn c08_selection() -> Verdict {
    let eps = 0.3f64;
    let n = 1_000_000u64;
    let body = LpBody::one_over_t(1.0, 200).map_err(|e| e.to_string())?;
    let du = d_u(&body, n, eps, DELTA, 200).map_err(|e| e.to_string())?;
    let Alternative::Pair(ex, ey) = worst_case_alternative(&body, eps, AlternativeKind::LfhtPair).map_err(|e| e.to_string())? else {
        return Err("pair expected".into());
    };
    // A second pair with part of its separation past d_u.
    let b = 1.0 / (2.0 * (du + 1) as f64);
    let mut tail = ThetaVector::spike(200, 1, 0.5).coords().to_vec();
    tail[du] = b;
    let pairs = [(ex, ey), (ThetaVector::new(tail), ThetaVector::zeros(200))];
    let trials = 3000u64;
    let mut worst = 1.0f64;
    for (i, (tx, ty)) in pairs.iter().enumerate() {
        let s = RngStreamSpec::root(808).child(i as u64);
        let hits: Vec<bool> = gsmlab::mc::run_trials(trials, |k| {
            let means = sample_lfht_means(tx, ty, tx, n, 1, s.child(k), SamplingMode::Means);
            let sel = lfht_select_coordinates(&means.x_first, &means.y_first, n, &body, eps, DELTA).unwrap();
            let captured: f64 = sel.selected.iter().map(|&t| (tx.get(t) - ty.get(t)).powi(2)).sum();
            sel.selected.len() <= 2 * du && captured >= eps * eps / 2.0
        });
        worst = worst.min(hits.iter().filter(|&&h| h).count() as f64 / trials as f64);
    }
    let need = 1.0 - DELTA - SELECTION_SLACK;
    check(worst >= need, format!("d_u = {du}, joint event frequency {worst:.4} (need {need:.4})"))
}

fn c09_rate_slopes() -> Verdict {
    let start = Instant::now();
    let body = counterexample_body::<f64>(64).map_err(|e| e.to_string())?;
    let grid = [0.5f64, 0.35, 0.25, 0.18, 0.125];
    let mut gof = Vec::new();
    let mut est = Vec::new();
    for (i, &eps) in grid.iter().enumerate() {
        let s = RngStreamSpec::root(909).child(i as u64);
        let g = gof_sample_complexity(&body, eps, 1 << 24, 2000, s.child(0), SamplingMode::Means).map_err(|e| e.to_string())?;
        let e = estimation_sample_complexity(&body, eps, 1 << 24, 500, s.child(1)).map_err(|e| e.to_string())?;
        if g.status != SearchStatus::Resolved || e.status != SearchStatus::Resolved {
            return Err(format!("search unresolved at eps = {eps}"));
        }
        gof.push((eps, g.n as f64));
        est.push((eps, e.n as f64));
    }
    let gf = rate_exponent_fit(&gof).map_err(|e| e.to_string())?;
    let ef = rate_exponent_fit(&est).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    check(
        (GOF_SLOPE.0..=GOF_SLOPE.1).contains(&gf.slope) && (EST_SLOPE.0..=EST_SLOPE.1).contains(&ef.slope) && took < RATE_RUNTIME,
        format!(
            "testing slope {:.3} (+-{:.3}), estimation slope {:.3} (+-{:.3}) in {took:.1?}",
            gf.slope, gf.stderr, ef.slope, ef.stderr
        ),
    )
}

fn c10_tradeoff() -> Verdict {
    let eps = 0.3f64;
    let body = counterexample_body::<f64>(200).map_err(|e| e.to_string())?;
    let problems = lfht_pair_problems(&body, eps, DELTA).map_err(|e| e.to_string())?;
    let root = RngStreamSpec::root(1010);
    let trials = 1500;
    let m_cap = 1u64 << 22;
    // Smallest n that works with (nearly) unlimited Z samples.
    let floor = sample_complexity_search(
        |n, s| estimate_worst_error_rates(&problems, n, m_cap, trials, s, SamplingMode::Means),
        0.25,
        2,
        1 << 20,
        root.child(0),
    )
    .map_err(|e| e.to_string())?;
    if floor.status != SearchStatus::Resolved {
        return Err("n floor search unresolved".into());
    }
    let mut products = Vec::new();
    for k in 1..=6u32 {
        let n = (floor.n as f64 * 2f64.powf(k as f64 / 2.0)).round() as u64;
        let out = sample_complexity_search(
            |m, s| estimate_worst_error_rates(&problems, n, m, trials, s, SamplingMode::Means),
            0.25,
            1,
            m_cap,
            root.child(k as u64),
        )
        .map_err(|e| e.to_string())?;
        if out.status != SearchStatus::Resolved {
            return Err(format!("m search unresolved at n = {n}"));
        }
        products.push((n, out.n, out.n as f64 * (n as f64).powf(1.5)));
    }
    let hi = products.iter().map(|p| p.2).fold(0.0, f64::max);
    let lo = products.iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
    let listing: Vec<String> = products.iter().map(|(n, m, _)| format!("({n},{m})")).collect();
    check(
        hi / lo <= TRADEOFF_RATIO,
        format!("n floor {}, (n, m_min) {}, max/min of m n^1.5 = {:.2}", floor.n, listing.join(" "), hi / lo),
    )
}

// Maximizes the tail energy over the boundary by coordinate-wise golden
// section search on the direction, from every vertex and a few random starts.
fn tail_energy_search(p: f64, tail: &[f64], r: &mut ChaCha8Rng) -> f64 {
    if tail.is_empty() {
        return 0.0;
    }
    let k = tail.len();
    let value = |u: &[f64]| -> f64 {
        let g: f64 = u.iter().zip(tail).map(|(x, a)| (x / a).powf(p)).sum();
        if g == 0.0 {
            return 0.0;
        }
        let s = g.powf(-1.0 / p);
        u.iter().map(|x| (x * s).powi(2)).sum()
    };
    let mut starts: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    starts.push(vec![1.0; k]);
    for _ in 0..4 {
        starts.push((0..k).map(|_| r.gen_range(0.0..1.0)).collect());
    }
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut best = 0.0f64;
    for mut u in starts {
        for _ in 0..60 {
            for i in 0..k {
                let (mut lo, mut hi) = (0.0f64, 1.0f64);
                for _ in 0..80 {
                    let a = hi - phi * (hi - lo);
                    let b = lo + phi * (hi - lo);
                    u[i] = a;
                    let fa = value(&u);
                    u[i] = b;
                    let fb = value(&u);
                    if fa < fb {
                        lo = a;
                    } else {
                        hi = b;
                    }
                }
                let mid = (lo + hi) / 2.0;
                let cands = [0.0, mid, 1.0];
                let vals: Vec<f64> = cands
                    .iter()
                    .map(|&c| {
                        u[i] = c;
                        value(&u)
                    })
                    .collect();
                let j = (0..3).max_by(|&x, &y| vals[x].partial_cmp(&vals[y]).unwrap()).unwrap();
                u[i] = cands[j];
                if u.iter().all(|&x| x == 0.0) {
                    u[i] = 1.0;
                }
            }
        }
        best = best.max(value(&u));
    }
    best
}

fn random_body(r: &mut ChaCha8Rng, max_dim: usize) -> LpBody<f64> {
    let p = r.gen_range(0.5..6.0);
    let dim = r.gen_range(1..=max_dim);
    let mut radii: Vec<f64> = (0..dim).map(|_| r.gen_range(0.01..2.0)).collect();
    radii.sort_by(|a, b| b.partial_cmp(a).unwrap());
    LpBody::new(p, radii).unwrap()
}

fn c11_geometry() -> Verdict {
    let mut r = rng(1111);
    let mut kol_fail = 0;
    for _ in 0..50 {
        let body = random_body(&mut r, 40);
        let eps = r.gen_range(0.01..1.0);
        kol_fail += (!kol_inequality_check(&body, eps).map_err(|e| e.to_string())?) as u32;
    }
    let mut order_fail = 0;
    for _ in 0..1000 {
        let body = random_body(&mut r, 40);
        let n = r.gen_range(1..1_000_000u64);
        let eps = r.gen_range(0.001..2.0);
        let lo = d_l(&body, n, eps).map_err(|e| e.to_string())?;
        let hi = d_u(&body, n, eps, DELTA, body.ambient_dim()).map_err(|e| e.to_string())?;
        order_fail += (lo > hi) as u32;
    }
    let mut worst = 0.0f64;
    for _ in 0..40 {
        let body = random_body(&mut r, 6);
        for d in 0..=body.ambient_dim() {
            let exact = tail_sup_energy(&body, d).map_err(|e| e.to_string())?;
            let search = tail_energy_search(body.p(), &body.radii()[d..], &mut r);
            worst = worst.max((exact - search).abs() / exact.max(1e-300));
        }
    }
    check(
        kol_fail == 0 && order_fail == 0 && worst <= TAIL_ENERGY_TOL,
        format!("{kol_fail} kol failures / 50, {order_fail} d_l > d_u / 1000, tail energy rel gap {worst:.2e}"),
    )
}

fn run_cli(bin: &str, command: &str, config: &Path, out: &Path, workers: usize) -> Result<Vec<u8>, String> {
    let status = Command::new(bin)
        .args([command, "--config"])
        .arg(config)
        .args(["--workers", &workers.to_string(), "--out"])
        .arg(out)
        .env_remove("GSMLAB_SEED")
        .status()
        .map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("{command} exited with {status}"));
    }
    std::fs::read(out.join("results.csv")).map_err(|e| e.to_string())
}

fn c12_cli_determinism() -> Verdict {
    let bin = env!("CARGO_BIN_EXE_gsmlab");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let body = r#""body": {"p": 1, "radii": "one_over_t", "D_max": 40, "infinite": true}"#;
    let configs = [
        ("dims", format!(r#"{{{body}, "eps_grid": [0.3, 0.1], "n_grid": [10, 1000]}}"#)),
        ("est-risk", format!(r#"{{{body}, "eps": 0.3, "n_grid": [50, 200], "trials": 200, "seed": 4}}"#)),
        ("gof", format!(r#"{{{body}, "eps": 0.35, "n_grid": [40, 80], "trials": 500, "seed": 5}}"#)),
        ("lfht", format!(r#"{{{body}, "eps": 0.3, "n": 300, "m_grid": [50, 100], "trials": 500, "seed": 6}}"#)),
        ("region", format!(r#"{{{body}, "eps": 0.3, "n_grid": [150, 600], "m_grid": [40, 200], "trials": 300, "seed": 7}}"#)),
        ("rate-fit", format!(r#"{{{body}, "eps_grid": [0.5, 0.35, 0.25], "trials": 400, "seed": 8}}"#)),
    ];
    let mut mismatched = Vec::new();
    for (command, cfg) in &configs {
        let path = dir.path().join(format!("{command}.json"));
        std::fs::write(&path, cfg).map_err(|e| e.to_string())?;
        let outs: Vec<Vec<u8>> = [1usize, 4, 16]
            .iter()
            .map(|&w| run_cli(bin, command, &path, &dir.path().join(format!("{command}-{w}")), w))
            .collect::<Result<_, _>>()?;
        if outs.windows(2).any(|w| w[0] != w[1]) {
            mismatched.push(*command);
        }
    }
    check(
        mismatched.is_empty(),
        format!("{} commands compared at 1/4/16 workers, mismatched: {:?}", configs.len(), mismatched),
    )
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("chi-square closed forms vs enumeration", c01_chi2_enumeration),
        ("chi-square domination bound", c02_ingster_domination),
        ("total variation bound at 1/16", c03_tv_bound),
        ("soft-threshold worst-case risk", c04_soft_threshold_risk),
        ("two-part goodness-of-fit errors", c05_two_part_errors),
        ("likelihood-free statistic moments", c06_lfht_moments),
        ("quadratic likelihood-free region", c07_quadratic_region),
        ("coordinate selection event", c08_selection),
        ("sample complexity slopes", c09_rate_slopes),
        ("m n^(3/2) tradeoff", c10_tradeoff),
        ("body geometry checks", c11_geometry),
        ("CLI determinism across workers", c12_cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let verdict = f();
        let took = start.elapsed();
        match verdict {
            Ok(d) => println!("criterion {:2} PASS  {name}: {d} [{took:.1?}]", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:2} FAIL  {name}: {d} [{took:.1?}]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
