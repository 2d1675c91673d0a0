//! Goodness-of-fit and likelihood-free hypothesis tests.
//!
//! Every test depends on the data only through column means, so each has a
//! `*_mean` form taking [`SampleMean`]s alongside the dataset form.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::bodies::{coordinate_kolmogorov_dim, d_l, d_u, truncation_dim, LpBody};
use crate::error::{invalid, GsmError, Result};
use crate::mc::run_trials;
use crate::rng::RngStreamSpec;
use crate::sampling_priors::{sample_mean, Dataset, LfhtDataset, LfhtMeans, SampleMean};
use crate::scalar::{compensated_sum, Real};
use crate::bodies::ThetaVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    AcceptH0,
    RejectH0,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestDecision<T> {
    pub decision: Decision,
    pub statistic: T,
    pub threshold: T,
}

impl<T> TestDecision<T> {
    pub fn rejects(&self) -> bool {
        self.decision == Decision::RejectH0
    }
}

fn decide<T: Real>(statistic: T, threshold: T) -> TestDecision<T> {
    TestDecision {
        decision: if statistic >= threshold {
            Decision::RejectH0
        } else {
            Decision::AcceptH0
        },
        statistic,
        threshold,
    }
}

/// `ceil(x)` that ignores rounding noise just above an integer.
pub(crate) fn ceil_tol<T: Real>(x: T) -> usize {
    let c = (x * (T::one() - T::rel_slack())).ceil();
    c.to_usize().unwrap_or(usize::MAX).max(1)
}

fn sq_norm_prefix<T: Real>(v: &[T], d: usize) -> T {
    compensated_sum(v.iter().take(d).map(|&x| x * x))
}

/// Rejects when the squared norm of the first `d` means reaches `threshold`.
pub fn gof_projection_test_mean<T: Real>(mean: &SampleMean<T>, d: usize, threshold: T) -> TestDecision<T> {
    decide(sq_norm_prefix(&mean.mean, d), threshold)
}

pub fn gof_projection_test<T: Real>(data: &Dataset<T>, d: usize, threshold: T) -> TestDecision<T> {
    gof_projection_test_mean(&data.sample_mean(), d, threshold)
}

/// Empirical `(1 - level)` quantile of the projection statistic under the
/// null.
pub fn calibrate_gof_threshold<T: Real>(d: usize, n: u64, level: T, trials: u64, stream: RngStreamSpec) -> Result<T> {
    if !(level > T::zero() && level < T::one()) {
        return Err(invalid("level must lie in (0, 1)"));
    }
    if d == 0 || n == 0 || trials == 0 {
        return Err(invalid("calibration needs d, n and trials positive"));
    }
    let null = ThetaVector::<T>::zeros(d);
    let mut stats = run_trials(trials, |k| sq_norm_prefix(&sample_mean(&null, n, stream.child(k)).mean, d));
    stats.sort_by(|a, b| a.partial_cmp(b).expect("finite statistic"));
    let idx = ceil_tol((T::one() - level) * T::of(trials as f64)).min(trials as usize) - 1;
    Ok(stats[idx])
}

/// `chi^2_d` quantile at `1 - level`, divided by `n`.
pub fn gof_threshold_analytic<T: Real>(d: usize, n: u64, level: T) -> Result<T> {
    if !(level > T::zero() && level < T::one()) {
        return Err(invalid("level must lie in (0, 1)"));
    }
    if d == 0 || n == 0 {
        return Err(invalid("d and n must be positive"));
    }
    let dist = ChiSquared::new(d as f64).map_err(|e| invalid(e.to_string()))?;
    Ok(T::of(dist.inverse_cdf(1.0 - level.to_f64_lossy()) / n as f64))
}

/// Outcome of the two-part test with both branch statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoPartDecision<T> {
    pub decision: Decision,
    /// Coordinates in the energy branch.
    pub d: usize,
    /// Last coordinate inspected by the max branch.
    pub cutoff: usize,
    pub energy: T,
    pub energy_threshold: T,
    pub max_abs: T,
    pub max_threshold: T,
}

impl<T> TwoPartDecision<T> {
    pub fn rejects(&self) -> bool {
        self.decision == Decision::RejectH0
    }
}

/// `(ceil(eps^(-4/5)), ceil(2/eps))`.
pub fn two_part_dims<T: Real>(eps: T) -> Result<(usize, usize)> {
    if !(eps > T::zero() && eps.is_finite()) {
        return Err(invalid("eps must be positive"));
    }
    Ok((ceil_tol(eps.powf(T::of(-0.8))), ceil_tol(T::of(2.0) / eps)))
}

/// Rejects when the energy of the first `d` means exceeds `eps^2 / 2` or
/// some mean in `d+1..=D` exceeds `eps^(6/5)` in absolute value.
pub fn gof_two_part_test_mean<T: Real>(mean: &SampleMean<T>, eps: T) -> Result<TwoPartDecision<T>> {
    let (d, cutoff) = two_part_dims(eps)?;
    if mean.dim() < cutoff {
        return Err(GsmError::DimensionMismatch {
            expected: cutoff,
            got: mean.dim(),
        });
    }
    let energy = sq_norm_prefix(&mean.mean, d);
    let max_abs = mean.mean[d.min(cutoff)..cutoff]
        .iter()
        .fold(T::zero(), |m, x| m.max(x.abs()));
    let energy_threshold = eps * eps / T::of(2.0);
    let max_threshold = eps.powf(T::of(1.2));
    let reject = energy > energy_threshold || max_abs > max_threshold;
    Ok(TwoPartDecision {
        decision: if reject {
            Decision::RejectH0
        } else {
            Decision::AcceptH0
        },
        d,
        cutoff,
        energy,
        energy_threshold,
        max_abs,
        max_threshold,
    })
}

pub fn gof_two_part_test<T: Real>(data: &Dataset<T>, eps: T) -> Result<TwoPartDecision<T>> {
    gof_two_part_test_mean(&data.sample_mean(), eps)
}

fn lfht_statistic<T: Real>(x: &[T], y: &[T], z: &[T], coords: impl Iterator<Item = usize>) -> T {
    compensated_sum(coords.map(|i| {
        let a = x[i] - z[i];
        let b = y[i] - z[i];
        a * a - b * b
    }))
}

/// `||P_d(X - Z)||^2 - ||P_d(Y - Z)||^2`; rejects `Z ~ P_X` when it is >= 0.
pub fn lfht_projection_test_mean<T: Real>(
    x: &SampleMean<T>,
    y: &SampleMean<T>,
    z: &SampleMean<T>,
    d: usize,
) -> Result<TestDecision<T>> {
    let dim = x.dim().min(y.dim()).min(z.dim());
    if d > dim {
        return Err(GsmError::DimensionMismatch { expected: dim, got: d });
    }
    Ok(decide(lfht_statistic(&x.mean, &y.mean, &z.mean, 0..d), T::zero()))
}

pub fn lfht_projection_test<T: Real>(data: &LfhtDataset<T>, d: usize) -> Result<TestDecision<T>> {
    lfht_projection_test_mean(&data.x.sample_mean(), &data.y.sample_mean(), &data.z.sample_mean(), d)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateSelection {
    /// Selected coordinates, 1-based and increasing.
    pub selected: Vec<usize>,
    pub d_u_used: usize,
    pub delta_used: f64,
}

/// Keeps the first `d_u` coordinates plus every later coordinate where the
/// first-half means of `X` and `Y` differ by at least
/// `4 sqrt(2 ln(2D/delta) / n)`, with `D` the body dimension and `n` the full
/// sample size.
pub fn lfht_select_coordinates<T: Real>(
    x_first: &SampleMean<T>,
    y_first: &SampleMean<T>,
    n: u64,
    body: &LpBody<T>,
    eps: T,
    delta: T,
) -> Result<CoordinateSelection> {
    let dim = body.ambient_dim();
    if x_first.dim() < dim || y_first.dim() < dim {
        return Err(GsmError::DimensionMismatch {
            expected: dim,
            got: x_first.dim().min(y_first.dim()),
        });
    }
    let du = d_u(body, n, eps, delta, dim)?;
    let cut = T::of(4.0) * (T::of(2.0) * (T::of(2.0) * T::count(dim) / delta).ln() / T::of(n as f64)).sqrt();
    let mut selected: Vec<usize> = (1..=du).collect();
    selected.extend((du..dim).filter(|&i| (x_first.mean[i] - y_first.mean[i]).abs() >= cut).map(|i| i + 1));
    Ok(CoordinateSelection {
        selected,
        d_u_used: du,
        delta_used: delta.to_f64_lossy(),
    })
}

/// Projection statistic over the selected coordinates.
pub fn lfht_selected_test<T: Real>(
    x: &SampleMean<T>,
    y: &SampleMean<T>,
    z: &SampleMean<T>,
    selection: &CoordinateSelection,
) -> Result<TestDecision<T>> {
    let dim = x.dim().min(y.dim()).min(z.dim());
    if let Some(&last) = selection.selected.last() {
        if last > dim {
            return Err(GsmError::DimensionMismatch { expected: dim, got: last });
        }
    }
    Ok(decide(
        lfht_statistic(&x.mean, &y.mean, &z.mean, selection.selected.iter().map(|&t| t - 1)),
        T::zero(),
    ))
}

/// Body and accuracy the split test works with: infinite prefixes are cut to
/// the coordinate Kolmogorov dimension at `eps/3` and the accuracy becomes
/// `eps/3`.
pub fn lfht_working_body<T: Real>(body: &LpBody<T>, eps: T) -> Result<(LpBody<T>, T)> {
    if body.is_infinite_prefix() {
        let third = eps / T::of(3.0);
        let dc = coordinate_kolmogorov_dim(body, third)?.dim;
        Ok((body.truncated(dc)?, third))
    } else {
        Ok((body.clone(), eps))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FullTestOutcome<T> {
    pub decision: TestDecision<T>,
    pub selection: CoordinateSelection,
}

/// Split test: coordinates are selected on the first halves of `X` and `Y`
/// and the projection statistic is evaluated on the second halves and `Z`.
pub fn lfht_full_test_mean<T: Real>(
    means: &LfhtMeans<T>,
    body: &LpBody<T>,
    eps: T,
    delta: T,
) -> Result<FullTestOutcome<T>> {
    if means.n() < 2 {
        return Err(invalid("split test needs n >= 2"));
    }
    let (work, eps_w) = lfht_working_body(body, eps)?;
    let selection = lfht_select_coordinates(&means.x_first, &means.y_first, means.n(), &work, eps_w, delta)?;
    let decision = lfht_selected_test(&means.x_second, &means.y_second, &means.z, &selection)?;
    Ok(FullTestOutcome { decision, selection })
}

pub fn lfht_full_test<T: Real>(data: &LfhtDataset<T>, body: &LpBody<T>, eps: T, delta: T) -> Result<FullTestOutcome<T>> {
    if data.x.n() < 2 {
        return Err(invalid("split test needs n >= 2"));
    }
    lfht_full_test_mean(&data.means(), body, eps, delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    SufficientQuad,
    SufficientLp,
    NecessaryLp,
}

/// Whether `(m, n)` satisfies the closed-form sample-size conditions.
pub fn lfht_region_predicate<T: Real>(
    body: &LpBody<T>,
    eps: T,
    m: u64,
    n: u64,
    delta: T,
    kind: RegionKind,
) -> Result<bool> {
    if !(eps > T::zero()) {
        return Err(invalid("eps must be positive"));
    }
    let (mt, nt) = (T::of(m as f64), T::of(n as f64));
    let e2 = eps * eps;
    let e4 = e2 * e2;
    let check = |c_m: f64, c_n: f64, c_mn: f64, d: usize| {
        let d = T::count(d);
        mt >= T::of(c_m) / e2 && nt >= T::of(c_n) * d.sqrt() / e2 && mt * nt >= T::of(c_mn) * d / e4
    };
    Ok(match kind {
        RegionKind::SufficientQuad => check(96.0, 96.0, 768.0, truncation_dim(body, eps / T::of(3.0))?),
        RegionKind::SufficientLp => {
            let (work, eps_w) = lfht_working_body(body, eps)?;
            check(32.0, 32.0, 512.0, d_u(&work, n, eps_w, delta, work.ambient_dim())?)
        }
        RegionKind::NecessaryLp => {
            let d = T::count(d_l(body, n, eps)?);
            mt >= T::one() / e2 && nt >= d.sqrt() / (T::of(2.0) * e2) && mt * nt >= d / (T::of(96.0) * e4)
        }
    })
}

/// Mean and variance of the projection statistic on `d` coordinates when
/// `Z ~ P_X`, with `sep` the squared projected distance between the means.
pub fn lfht_projection_moments<T: Real>(sep: T, d: usize, n: u64, m: u64) -> (T, T) {
    let (n, m, d) = (T::of(n as f64), T::of(m as f64), T::count(d));
    let four = T::of(4.0);
    let var = (four / m + four / n) * sep + four * d / (n * n) + T::of(8.0) * d / (m * n);
    (-sep, var)
}
