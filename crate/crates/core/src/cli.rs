//! The `gsmlab` command line: config parsing, experiment dispatch and
//! result files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bodies::{dim_profile, kol_inequality_check, LpBody};
use crate::error::GsmError;
use crate::estimators::{worst_case_risk_search, EstimatorSpec};
use crate::experiments::{
    estimate_worst_error_rates, estimation_sample_complexity, gof_sample_complexity, gof_two_part_problems,
    lfht_pair_problems, lfht_region_map, rate_exponent_fit, soft_threshold_for, ErrorProblem, GofTest, LfhtTest,
    SearchStatus,
};
use crate::rng::RngStreamSpec;
use crate::sampling_priors::SamplingMode;
use crate::bodies::truncation_dim;
use crate::testing::{gof_threshold_analytic, two_part_dims};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_UNRESOLVED: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Environment variable that overrides the config seed.
pub const SEED_ENV: &str = "GSMLAB_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Dims,
    EstRisk,
    Gof,
    Lfht,
    Region,
    RateFit,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Dims => "dims",
            Command::EstRisk => "est-risk",
            Command::Gof => "gof",
            Command::Lfht => "lfht",
            Command::Region => "region",
            Command::RateFit => "rate-fit",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gsmlab", version, about = "Testing and estimation experiments over lp bodies")]
pub struct Args {
    pub command: Command,
    /// JSON config file, or a summary.json from an earlier run.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory, overriding `output_path`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RadiiRule {
    Explicit(Vec<f64>),
    Named(String),
    Constant { constant: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyConfig {
    pub p: f64,
    pub radii: RadiiRule,
    #[serde(alias = "D_max", default)]
    pub d_max: Option<usize>,
    /// Treat the radii as the leading part of an infinite sequence.
    #[serde(default)]
    pub infinite: bool,
}

impl BodyConfig {
    pub fn build(&self) -> Result<LpBody<f64>, CliError> {
        let need_dim = || self.d_max.ok_or_else(|| CliError::Config("body.d_max is required for this radii rule".into()));
        let body = match &self.radii {
            RadiiRule::Explicit(r) => LpBody::new(self.p, r.clone())?,
            RadiiRule::Named(name) if name == "one_over_t" => LpBody::one_over_t(self.p, need_dim()?)?,
            RadiiRule::Named(name) => return Err(CliError::Config(format!("unknown radii rule {name:?}"))),
            RadiiRule::Constant { constant } => LpBody::constant(self.p, *constant, need_dim()?)?,
        };
        Ok(body.with_infinite_prefix(self.infinite))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GofTestKind {
    #[default]
    TwoPart,
    Projection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LfhtTestKind {
    #[default]
    Full,
    Projection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RateTask {
    #[default]
    Gof,
    Estimation,
}

fn default_delta() -> f64 {
    1.0 / 32.0
}

fn default_trials() -> u64 {
    1000
}

fn default_level() -> f64 {
    0.05
}

fn default_output() -> String {
    "gsmlab-out".into()
}

fn default_n_max() -> u64 {
    1 << 24
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub command: Option<Command>,
    pub body: BodyConfig,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub eps_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub n: Option<u64>,
    #[serde(default)]
    pub n_grid: Option<Vec<u64>>,
    #[serde(default)]
    pub m: Option<u64>,
    #[serde(default)]
    pub m_grid: Option<Vec<u64>>,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_path: String,
    #[serde(default)]
    pub sampling: SamplingMode,
    /// Estimator for `est-risk`; soft thresholding tuned to eps by default.
    #[serde(default)]
    pub estimator: Option<EstimatorSpec<f64>>,
    #[serde(default)]
    pub gof_test: GofTestKind,
    /// Level of the calibrated projection test in `gof`.
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub lfht_test: LfhtTestKind,
    #[serde(default)]
    pub task: RateTask,
    #[serde(default = "default_n_max")]
    pub n_max: u64,
}

impl Config {
    fn eps_list(&self) -> Result<Vec<f64>, CliError> {
        let v = match (&self.eps_grid, self.eps) {
            (Some(g), _) => g.clone(),
            (None, Some(e)) => vec![e],
            (None, None) => return Err(CliError::Config("eps or eps_grid is required".into())),
        };
        if v.is_empty() || v.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(CliError::Config("eps values must be positive".into()));
        }
        Ok(v)
    }

    fn grid(single: Option<u64>, grid: &Option<Vec<u64>>, name: &str, default: Option<u64>) -> Result<Vec<u64>, CliError> {
        let v = match (grid, single.or(default)) {
            (Some(g), _) => g.clone(),
            (None, Some(x)) => vec![x],
            (None, None) => return Err(CliError::Config(format!("{name} or {name}_grid is required"))),
        };
        if v.is_empty() || v.contains(&0) {
            return Err(CliError::Config(format!("{name} values must be positive")));
        }
        Ok(v)
    }

    fn n_list(&self, default: Option<u64>) -> Result<Vec<u64>, CliError> {
        Self::grid(self.n, &self.n_grid, "n", default)
    }

    fn m_list(&self) -> Result<Vec<u64>, CliError> {
        Self::grid(self.m, &self.m_grid, "m", None)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("output error: {0}")]
    Output(String),
    #[error(transparent)]
    Library(#[from] GsmError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Library(GsmError::Numeric(_)) => EXIT_NUMERIC,
            _ => EXIT_CONFIG,
        }
    }
}

/// A results table rendered with fixed formatting.
#[derive(Debug, Default)]
struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

fn f(x: f64) -> String {
    format!("{x:.16e}")
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn render(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        s
    }
}

struct Outcome {
    table: Table,
    results: Value,
    unresolved: bool,
}

/// Loads a config file. A summary from an earlier run is accepted and its
/// embedded config used.
pub fn load_config(path: &Path) -> Result<Config, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut value: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    if value.get("results").is_some() {
        if let Some(inner) = value.get_mut("config") {
            value = inner.take();
        }
    }
    serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))
}

/// Applies command-line and environment overrides.
pub fn resolve(mut cfg: Config, args: &Args, env_seed: Option<String>) -> Result<Config, CliError> {
    if let Some(c) = cfg.command {
        if c != args.command {
            return Err(CliError::Config(format!(
                "config is for {:?} but {:?} was requested",
                c.name(),
                args.command.name()
            )));
        }
    }
    cfg.command = Some(args.command);
    if let Some(s) = env_seed {
        cfg.seed = s
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV} must be an unsigned integer, got {s:?}")))?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(o) = &args.out {
        cfg.output_path = o.to_string_lossy().into_owned();
    }
    if cfg.trials == 0 {
        return Err(CliError::Config("trials must be positive".into()));
    }
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(CliError::Config("delta must lie in (0, 1)".into()));
    }
    Ok(cfg)
}

fn run_dims(cfg: &Config, body: &LpBody<f64>) -> Result<Outcome, CliError> {
    let mut table = Table::new(&[
        "eps",
        "n",
        "delta",
        "d_coordinate_kolmogorov",
        "kolmogorov_exhausted",
        "d_truncation",
        "d_u",
        "d_l",
        "kol_check",
    ]);
    let mut results = Vec::new();
    for eps in cfg.eps_list()? {
        for n in cfg.n_list(Some(1))? {
            let p = dim_profile(body, eps, n, cfg.delta)?;
            let kol = kol_inequality_check(body, eps)?;
            table.push(vec![
                f(eps),
                n.to_string(),
                f(cfg.delta),
                p.coordinate_kolmogorov.to_string(),
                p.coordinate_kolmogorov_exhausted.to_string(),
                p.truncation.to_string(),
                p.d_u.to_string(),
                p.d_l.to_string(),
                kol.to_string(),
            ]);
            results.push(json!({
                "eps": eps, "n": n,
                "d_coordinate_kolmogorov": p.coordinate_kolmogorov,
                "kolmogorov_exhausted": p.coordinate_kolmogorov_exhausted,
                "d_truncation": p.truncation, "d_u": p.d_u, "d_l": p.d_l, "kol_check": kol,
            }));
        }
    }
    Ok(Outcome {
        table,
        results: Value::Array(results),
        unresolved: false,
    })
}

fn estimator_label(spec: &EstimatorSpec<f64>) -> (String, f64, usize) {
    match *spec {
        EstimatorSpec::EmpiricalMean => ("empirical_mean".into(), 0.0, 0),
        EstimatorSpec::Projection { d } => ("projection".into(), 0.0, d),
        EstimatorSpec::SoftThreshold { lambda, d_trunc } => ("soft_threshold".into(), lambda, d_trunc),
    }
}

fn run_est_risk(cfg: &Config, body: &LpBody<f64>, root: RngStreamSpec) -> Result<Outcome, CliError> {
    let mut table = Table::new(&["eps", "n", "estimator", "lambda", "d", "candidates", "worst_risk", "ci_radius", "eps_sq"]);
    let mut results = Vec::new();
    let mut row = 0u64;
    for eps in cfg.eps_list()? {
        let spec = match cfg.estimator {
            Some(s) => s,
            None => soft_threshold_for(eps)?,
        };
        let (name, lambda, d) = estimator_label(&spec);
        for n in cfg.n_list(None)? {
            let w = worst_case_risk_search(body, &spec, n, cfg.trials, root.child(row))?;
            row += 1;
            table.push(vec![
                f(eps),
                n.to_string(),
                name.clone(),
                f(lambda),
                d.to_string(),
                w.candidates.to_string(),
                f(w.risk.mean),
                f(w.risk.ci_radius),
                f(eps * eps),
            ]);
            results.push(json!({"eps": eps, "n": n, "estimator": spec, "worst_risk": w.risk, "worst_theta": w.theta}));
        }
    }
    Ok(Outcome {
        table,
        results: Value::Array(results),
        unresolved: false,
    })
}

fn rates_header() -> Table {
    Table::new(&["eps", "n", "m", "trials", "type1", "type2", "ci_radius", "max_error"])
}

fn push_rates(table: &mut Table, results: &mut Vec<Value>, eps: f64, n: u64, m: u64, e: &crate::experiments::ErrorEstimate) {
    table.push(vec![
        f(eps),
        n.to_string(),
        m.to_string(),
        e.trials.to_string(),
        f(e.type1),
        f(e.type2),
        f(e.ci_radius),
        f(e.max_error()),
    ]);
    results.push(json!({"eps": eps, "n": n, "m": m, "estimate": e}));
}

fn run_gof(cfg: &Config, body: &LpBody<f64>, root: RngStreamSpec) -> Result<Outcome, CliError> {
    let mut table = rates_header();
    let mut results = Vec::new();
    let mut row = 0u64;
    for eps in cfg.eps_list()? {
        for n in cfg.n_list(None)? {
            let mut problems = gof_two_part_problems(body, eps)?;
            if cfg.gof_test == GofTestKind::Projection {
                let d = two_part_dims(eps)?.0.min(body.ambient_dim());
                let threshold = gof_threshold_analytic(d, n, cfg.level)?;
                for p in &mut problems {
                    if let ErrorProblem::Gof { test, .. } = p {
                        *test = GofTest::Projection { d, threshold };
                    }
                }
            }
            let e = estimate_worst_error_rates(&problems, n, 0, cfg.trials, root.child(row), cfg.sampling)?;
            row += 1;
            push_rates(&mut table, &mut results, eps, n, 0, &e);
        }
    }
    Ok(Outcome {
        table,
        results: Value::Array(results),
        unresolved: false,
    })
}

fn run_lfht(cfg: &Config, body: &LpBody<f64>, root: RngStreamSpec) -> Result<Outcome, CliError> {
    let mut table = rates_header();
    let mut results = Vec::new();
    let mut row = 0u64;
    for eps in cfg.eps_list()? {
        let mut problems = lfht_pair_problems(body, eps, cfg.delta)?;
        if cfg.lfht_test == LfhtTestKind::Projection {
            let d = truncation_dim(body, eps / 3.0)?;
            for p in &mut problems {
                if let ErrorProblem::Lfht { test, .. } = p {
                    *test = LfhtTest::Projection { d };
                }
            }
        }
        for n in cfg.n_list(None)? {
            for m in cfg.m_list()? {
                let e = estimate_worst_error_rates(&problems, n, m, cfg.trials, root.child(row), cfg.sampling)?;
                row += 1;
                push_rates(&mut table, &mut results, eps, n, m, &e);
            }
        }
    }
    Ok(Outcome {
        table,
        results: Value::Array(results),
        unresolved: false,
    })
}

fn run_region(cfg: &Config, body: &LpBody<f64>, root: RngStreamSpec) -> Result<Outcome, CliError> {
    let mut table = Table::new(&[
        "eps",
        "m",
        "n",
        "type1",
        "type2",
        "ci_radius",
        "feasible",
        "sufficient_quad",
        "sufficient_lp",
        "necessary_lp",
    ]);
    let mut results = Vec::new();
    for (i, eps) in cfg.eps_list()?.into_iter().enumerate() {
        let map = lfht_region_map(
            body,
            eps,
            &cfg.m_list()?,
            &cfg.n_list(None)?,
            cfg.trials,
            cfg.delta,
            root.child(i as u64),
            cfg.sampling,
        )?;
        for c in &map.cells {
            table.push(vec![
                f(eps),
                c.m.to_string(),
                c.n.to_string(),
                f(c.type1),
                f(c.type2),
                f(c.ci_radius),
                c.feasible.to_string(),
                c.sufficient_quad.to_string(),
                c.sufficient_lp.to_string(),
                c.necessary_lp.to_string(),
            ]);
        }
        results.push(serde_json::to_value(&map).expect("region map serializes"));
    }
    Ok(Outcome {
        table,
        results: Value::Array(results),
        unresolved: false,
    })
}

fn run_rate_fit(cfg: &Config, body: &LpBody<f64>, root: RngStreamSpec) -> Result<Outcome, CliError> {
    let mut table = Table::new(&["eps", "n_star", "status", "revalidated", "probes"]);
    let mut rows = Vec::new();
    let mut points = Vec::new();
    let mut unresolved = false;
    for (i, eps) in cfg.eps_list()?.into_iter().enumerate() {
        let s = root.child(i as u64);
        let out = match cfg.task {
            RateTask::Gof => gof_sample_complexity(body, eps, cfg.n_max, cfg.trials, s, cfg.sampling)?,
            RateTask::Estimation => estimation_sample_complexity(body, eps, cfg.n_max, cfg.trials, s)?,
        };
        let resolved = out.status == SearchStatus::Resolved;
        unresolved |= !resolved;
        if resolved {
            points.push((eps, out.n as f64));
        }
        table.push(vec![
            f(eps),
            out.n.to_string(),
            if resolved { "resolved" } else { "unresolved" }.into(),
            out.revalidated.to_string(),
            out.probes.len().to_string(),
        ]);
        rows.push(json!({"eps": eps, "search": out}));
    }
    let fit = if unresolved {
        Value::Null
    } else {
        serde_json::to_value(rate_exponent_fit(&points)?).expect("fit serializes")
    };
    Ok(Outcome {
        table,
        results: json!({"searches": rows, "fit": fit}),
        unresolved,
    })
}

fn write_outputs(dir: &Path, csv: &str, summary: &Value) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Output(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    std::fs::write(dir.join("results.csv"), csv).map_err(io)?;
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    std::fs::write(dir.join("summary.json"), text).map_err(io)?;
    Ok(())
}

/// Runs a resolved config; returns the exit code.
pub fn execute(cfg: &Config, workers: Option<usize>) -> Result<i32, CliError> {
    let start = Instant::now();
    let body = cfg.body.build()?;
    let command = cfg.command.ok_or_else(|| CliError::Config("no command".into()))?;
    let root = RngStreamSpec::root(cfg.seed);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            return Err(CliError::Config("workers must be positive".into()));
        }
        pool = pool.num_threads(w);
    }
    let pool = pool.build().map_err(|e| CliError::Config(e.to_string()))?;
    let outcome = pool.install(|| match command {
        Command::Dims => run_dims(cfg, &body),
        Command::EstRisk => run_est_risk(cfg, &body, root),
        Command::Gof => run_gof(cfg, &body, root),
        Command::Lfht => run_lfht(cfg, &body, root),
        Command::Region => run_region(cfg, &body, root),
        Command::RateFit => run_rate_fit(cfg, &body, root),
    })?;
    let summary = json!({
        "command": command.name(),
        "seed": cfg.seed,
        "trials": cfg.trials,
        "wall_time": start.elapsed().as_secs_f64(),
        "results": outcome.results,
        "config": cfg,
    });
    write_outputs(Path::new(&cfg.output_path), &outcome.table.render(), &summary)?;
    Ok(if outcome.unresolved { EXIT_UNRESOLVED } else { EXIT_OK })
}

/// Entry point shared by the binary and tests.
pub fn run_with_args<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = load_config(&args.config)
        .and_then(|c| resolve(c, &args, std::env::var(SEED_ENV).ok()))
        .and_then(|c| execute(&c, args.workers));
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("gsmlab: {e}");
            e.exit_code()
        }
    }
}
