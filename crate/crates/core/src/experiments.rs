//! Error-rate estimation, sample-complexity search and rate fitting.

use serde::Serialize;

use crate::bodies::{membership, LpBody, ThetaVector};
use crate::estimators::{lambda_power_schedule, worst_case_risk_search, EstimatorSpec};
use crate::error::{invalid, GsmError, Result};
use crate::mc::{run_trials, Z95};
use crate::rng::RngStreamSpec;
use crate::sampling_priors::{sample_lfht_means, LfhtMeans, SamplingMode};
use crate::scalar::Real;
use crate::testing::{
    gof_projection_test_mean, gof_two_part_test_mean, lfht_full_test_mean, lfht_projection_test_mean,
    lfht_region_predicate, two_part_dims, RegionKind,
};

/// Estimated error probabilities of a test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorEstimate {
    pub type1: f64,
    pub type2: f64,
    pub trials: u64,
    /// `1.96 sqrt(p(1-p)/trials)` for the larger of the two rates.
    pub ci_radius: f64,
    pub seed: u64,
}

impl ErrorEstimate {
    pub fn from_counts(type1_errors: u64, type2_errors: u64, trials: u64, seed: u64) -> Self {
        let t = trials.max(1) as f64;
        let (type1, type2) = (type1_errors as f64 / t, type2_errors as f64 / t);
        let p = type1.max(type2);
        Self {
            type1,
            type2,
            trials,
            ci_radius: Z95 * (p * (1.0 - p) / t).sqrt(),
            seed,
        }
    }

    pub fn max_error(&self) -> f64 {
        self.type1.max(self.type2)
    }

    /// Whether the upper confidence bound of the larger rate is within
    /// `target`.
    pub fn meets(&self, target: f64) -> bool {
        self.max_error() + self.ci_radius <= target
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GofTest<T> {
    Projection { d: usize, threshold: T },
    TwoPart { eps: T },
}

#[derive(Debug, Clone, PartialEq)]
pub enum LfhtTest<T> {
    Projection { d: usize },
    Full { body: LpBody<T>, eps: T, delta: T },
}

/// A test together with the hypotheses it is run under.
#[derive(Debug, Clone, PartialEq)]
pub enum ErrorProblem<T> {
    /// Null `theta = 0` against `alternative`.
    Gof { test: GofTest<T>, alternative: ThetaVector<T> },
    /// `Z ~ P_X` against `Z ~ P_Y`.
    Lfht { test: LfhtTest<T>, theta_x: ThetaVector<T>, theta_y: ThetaVector<T> },
}

fn gof_rejects<T: Real>(test: &GofTest<T>, mean: &crate::sampling_priors::SampleMean<T>) -> Result<bool> {
    Ok(match test {
        GofTest::Projection { d, threshold } => gof_projection_test_mean(mean, *d, *threshold).rejects(),
        GofTest::TwoPart { eps } => gof_two_part_test_mean(mean, *eps)?.rejects(),
    })
}

fn lfht_rejects<T: Real>(test: &LfhtTest<T>, means: &LfhtMeans<T>) -> Result<bool> {
    Ok(match test {
        LfhtTest::Projection { d } => lfht_projection_test_mean(&means.x(), &means.y(), &means.z, *d)?.rejects(),
        LfhtTest::Full { body, eps, delta } => lfht_full_test_mean(means, body, *eps, *delta)?.decision.rejects(),
    })
}

/// Simulated type I and type II error rates. Trial `k` draws its data from
/// `stream.child(k)`.
pub fn estimate_error_rates<T: Real>(
    problem: &ErrorProblem<T>,
    n: u64,
    m: u64,
    trials: u64,
    stream: RngStreamSpec,
    mode: SamplingMode,
) -> Result<ErrorEstimate> {
    if n == 0 || trials == 0 {
        return Err(invalid("need n >= 1 and trials >= 1"));
    }
    let outcomes: Vec<Result<(bool, bool)>> = match problem {
        ErrorProblem::Gof { test, alternative } => {
            let null = ThetaVector::zeros(alternative.support_dim());
            run_trials(trials, |k| {
                let s = stream.child(k);
                let under_null = mode.mean(&null, n, s.child(0));
                let under_alt = mode.mean(alternative, n, s.child(1));
                Ok((gof_rejects(test, &under_null)?, !gof_rejects(test, &under_alt)?))
            })
        }
        ErrorProblem::Lfht { test, theta_x, theta_y } => {
            if m == 0 {
                return Err(invalid("need m >= 1"));
            }
            run_trials(trials, |k| {
                let s = stream.child(k);
                let h0 = sample_lfht_means(theta_x, theta_y, theta_x, n, m, s.child(0), mode);
                let h1 = sample_lfht_means(theta_x, theta_y, theta_y, n, m, s.child(1), mode);
                Ok((lfht_rejects(test, &h0)?, !lfht_rejects(test, &h1)?))
            })
        }
    };
    let (mut e1, mut e2) = (0u64, 0u64);
    for o in outcomes {
        let (a, b) = o?;
        e1 += a as u64;
        e2 += b as u64;
    }
    Ok(ErrorEstimate::from_counts(e1, e2, trials, stream.master_seed))
}

/// Largest type I and type II rates over several problems, problem `i`
/// using `stream.child(i)`.
pub fn estimate_worst_error_rates<T: Real>(
    problems: &[ErrorProblem<T>],
    n: u64,
    m: u64,
    trials: u64,
    stream: RngStreamSpec,
    mode: SamplingMode,
) -> Result<ErrorEstimate> {
    if problems.is_empty() {
        return Err(invalid("no problems given"));
    }
    let mut e1 = 0u64;
    let mut e2 = 0u64;
    for (i, p) in problems.iter().enumerate() {
        let e = estimate_error_rates(p, n, m, trials, stream.child(i as u64), mode)?;
        e1 = e1.max((e.type1 * trials as f64).round() as u64);
        e2 = e2.max((e.type2 * trials as f64).round() as u64);
    }
    Ok(ErrorEstimate::from_counts(e1, e2, trials, stream.master_seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    Resolved,
    /// No sample size up to the cap met the target.
    Unresolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Probe {
    pub n: u64,
    /// Error rate or risk measured at `n`.
    pub max_error: f64,
    pub ci_radius: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchOutcome {
    pub status: SearchStatus,
    /// Smallest passing size found, or the cap when unresolved.
    pub n: u64,
    pub probes: Vec<Probe>,
    /// Whether `n` also passed on an independent stream.
    pub revalidated: bool,
}

/// Smallest `n` in `[n_min, n_max]` for which `probe` passes, assuming
/// passing is monotone in `n`: doubling from `n_min`, then bisection. Every
/// probe gets a fresh stream and the result is re-checked on an independent
/// one.
pub fn search_smallest_passing<F>(mut probe: F, n_min: u64, n_max: u64, stream: RngStreamSpec) -> Result<SearchOutcome>
where
    F: FnMut(u64, RngStreamSpec) -> Result<Probe>,
{
    if n_min == 0 || n_max < n_min {
        return Err(invalid(format!("bad search range [{n_min}, {n_max}]")));
    }
    let mut probes: Vec<Probe> = Vec::new();
    let mut run = |n: u64, probes: &mut Vec<Probe>| -> Result<bool> {
        let p = probe(n, stream.child(probes.len() as u64))?;
        probes.push(p);
        Ok(p.passed)
    };

    let mut lo = n_min - 1;
    let mut n = n_min;
    let mut hi = loop {
        if run(n, &mut probes)? {
            break n;
        }
        lo = n;
        if n == n_max {
            return Ok(SearchOutcome {
                status: SearchStatus::Unresolved,
                n: n_max,
                probes,
                revalidated: false,
            });
        }
        n = n.saturating_mul(2).min(n_max);
    };
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if run(mid, &mut probes)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let check = probe(hi, stream.child(u64::MAX))?;
    Ok(SearchOutcome {
        status: SearchStatus::Resolved,
        n: hi,
        probes,
        revalidated: check.passed,
    })
}

/// [`search_smallest_passing`] on error rates: a size passes when the larger
/// error rate plus its confidence radius is at most `target`.
pub fn sample_complexity_search<F>(
    mut oracle: F,
    target: f64,
    n_min: u64,
    n_max: u64,
    stream: RngStreamSpec,
) -> Result<SearchOutcome>
where
    F: FnMut(u64, RngStreamSpec) -> Result<ErrorEstimate>,
{
    search_smallest_passing(
        |n, s| {
            let e = oracle(n, s)?;
            Ok(Probe {
                n,
                max_error: e.max_error(),
                ci_radius: e.ci_radius,
                passed: e.meets(target),
            })
        },
        n_min,
        n_max,
        stream,
    )
}

/// Two-part test problems against the energy and spike alternatives.
pub fn gof_two_part_problems<T: Real>(body: &LpBody<T>, eps: T) -> Result<Vec<ErrorProblem<T>>> {
    [AlternativeKind::GofEnergy, AlternativeKind::GofSpike]
        .iter()
        .map(|&k| match worst_case_alternative(body, eps, k)? {
            Alternative::Single(v) => Ok(ErrorProblem::Gof {
                test: GofTest::TwoPart { eps },
                alternative: v,
            }),
            Alternative::Pair(..) => unreachable!("single kinds yield single vectors"),
        })
        .collect()
}

/// Sample size the two-part test needs to keep both errors below 1/4.
pub fn gof_sample_complexity<T: Real>(
    body: &LpBody<T>,
    eps: T,
    n_max: u64,
    trials: u64,
    stream: RngStreamSpec,
    mode: SamplingMode,
) -> Result<SearchOutcome> {
    let problems = gof_two_part_problems(body, eps)?;
    sample_complexity_search(
        |n, s| estimate_worst_error_rates(&problems, n, 0, trials, s, mode),
        0.25,
        1,
        n_max,
        stream,
    )
}

/// Soft thresholding at `(eps/8)^(4/3)` on the first `ceil(2/eps)`
/// coordinates.
pub fn soft_threshold_for<T: Real>(eps: T) -> Result<EstimatorSpec<T>> {
    Ok(EstimatorSpec::SoftThreshold {
        lambda: lambda_power_schedule(eps)?,
        d_trunc: two_part_dims(eps)?.1,
    })
}

/// Sample size at which the worst simulated soft-threshold risk, plus its
/// confidence radius, drops to `eps^2`.
pub fn estimation_sample_complexity<T: Real>(
    body: &LpBody<T>,
    eps: T,
    n_max: u64,
    trials: u64,
    stream: RngStreamSpec,
) -> Result<SearchOutcome> {
    let spec = soft_threshold_for(eps)?;
    let target = (eps * eps).to_f64_lossy();
    search_smallest_passing(
        |n, s| {
            let w = worst_case_risk_search(body, &spec, n, trials, s)?;
            let (mean, ci) = (w.risk.mean.to_f64_lossy(), w.risk.ci_radius.to_f64_lossy());
            Ok(Probe {
                n,
                max_error: mean,
                ci_radius: ci,
                passed: mean + ci <= target,
            })
        },
        1,
        n_max,
        stream,
    )
}

/// Least-squares fit of `ln n*` on `ln(1/eps)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope.
    pub stderr: f64,
    /// `(eps, n*)` pairs used.
    pub points: Vec<(f64, f64)>,
}

pub fn rate_exponent_fit(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.len() < 3 {
        return Err(GsmError::DegenerateFit("need at least three points".into()));
    }
    if points.iter().any(|&(e, n)| !(e > 0.0 && n > 0.0)) {
        return Err(invalid("eps and n* must be positive"));
    }
    let xs: Vec<f64> = points.iter().map(|p| (1.0 / p.0).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 1e-300 {
        return Err(GsmError::DegenerateFit("all eps values are identical".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(FitResult {
        slope,
        intercept,
        stderr: (ssr / (k - 2.0) / sxx).sqrt(),
        points: points.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlternativeKind {
    /// Energy `eps` spread evenly over as many leading coordinates (at most
    /// `ceil(eps^(-4/5))`) as the body allows.
    GofEnergy,
    /// `eps * e_t` at the last coordinate `t` the body allows.
    GofSpike,
    /// `(GofEnergy, 0)`.
    LfhtPair,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Alternative<T> {
    Single(ThetaVector<T>),
    Pair(ThetaVector<T>, ThetaVector<T>),
}

/// Hard alternatives at separation exactly `eps`, all inside the body.
pub fn worst_case_alternative<T: Real>(body: &LpBody<T>, eps: T, kind: AlternativeKind) -> Result<Alternative<T>> {
    let dim = body.ambient_dim();
    let too_large = || invalid(format!("eps = {eps} leaves no alternative inside the body"));
    if !(eps > T::zero()) {
        return Err(invalid("eps must be positive"));
    }
    let energy = || -> Result<ThetaVector<T>> {
        let (d, _) = two_part_dims(eps)?;
        for k in (1..=d.min(dim)).rev() {
            let mut c = vec![T::zero(); dim];
            c[..k].iter_mut().for_each(|x| *x = eps / T::count(k).sqrt());
            let v = ThetaVector::new(c);
            if membership(body, &v)? {
                return Ok(v);
            }
        }
        Err(too_large())
    };
    let out = match kind {
        AlternativeKind::GofEnergy => Alternative::Single(energy()?),
        AlternativeKind::LfhtPair => Alternative::Pair(energy()?, ThetaVector::zeros(dim)),
        AlternativeKind::GofSpike => {
            let t = (1..=dim)
                .rev()
                .find(|&t| membership(body, &ThetaVector::spike(dim, t, eps)).unwrap_or(false))
                .ok_or_else(too_large)?;
            Alternative::Single(ThetaVector::spike(dim, t, eps))
        }
    };
    Ok(out)
}

/// One `(m, n)` grid point of a region map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionCell {
    pub m: u64,
    pub n: u64,
    pub type1: f64,
    pub type2: f64,
    pub ci_radius: f64,
    /// Simulated maximal error plus radius is at most 1/4.
    pub feasible: bool,
    pub sufficient_quad: bool,
    pub sufficient_lp: bool,
    pub necessary_lp: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionMap {
    pub eps: f64,
    pub cells: Vec<RegionCell>,
}

/// LFHT problems used for region maps: the energy pair in both orders.
pub fn lfht_pair_problems<T: Real>(body: &LpBody<T>, eps: T, delta: T) -> Result<Vec<ErrorProblem<T>>> {
    let Alternative::Pair(a, b) = worst_case_alternative(body, eps, AlternativeKind::LfhtPair)? else {
        unreachable!("pair kind yields a pair")
    };
    let test = LfhtTest::Full {
        body: body.clone(),
        eps,
        delta,
    };
    Ok(vec![
        ErrorProblem::Lfht {
            test: test.clone(),
            theta_x: a.clone(),
            theta_y: b.clone(),
        },
        ErrorProblem::Lfht {
            test,
            theta_x: b,
            theta_y: a,
        },
    ])
}

/// Simulated feasibility of the split test on an `(m, n)` grid next to the
/// closed-form region predicates. Cell `i` uses `stream.child(i)`.
#[allow(clippy::too_many_arguments)]
pub fn lfht_region_map<T: Real>(
    body: &LpBody<T>,
    eps: T,
    m_grid: &[u64],
    n_grid: &[u64],
    trials: u64,
    delta: T,
    stream: RngStreamSpec,
    mode: SamplingMode,
) -> Result<RegionMap> {
    let problems = lfht_pair_problems(body, eps, delta)?;
    let mut cells = Vec::with_capacity(m_grid.len() * n_grid.len());
    for &m in m_grid {
        for &n in n_grid {
            let e = estimate_worst_error_rates(&problems, n, m, trials, stream.child(cells.len() as u64), mode)?;
            cells.push(RegionCell {
                m,
                n,
                type1: e.type1,
                type2: e.type2,
                ci_radius: e.ci_radius,
                feasible: e.meets(0.25),
                sufficient_quad: lfht_region_predicate(body, eps, m, n, delta, RegionKind::SufficientQuad)?,
                sufficient_lp: lfht_region_predicate(body, eps, m, n, delta, RegionKind::SufficientLp)?,
                necessary_lp: lfht_region_predicate(body, eps, m, n, delta, RegionKind::NecessaryLp)?,
            });
        }
    }
    Ok(RegionMap {
        eps: eps.to_f64_lossy(),
        cells,
    })
}
