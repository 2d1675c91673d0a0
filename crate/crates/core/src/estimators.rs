//! Estimators of the mean sequence and their squared-error risk.

use serde::{Deserialize, Serialize};

use crate::bodies::{boundary_scale, LpBody, ThetaVector};
use crate::error::{invalid, Result};
use crate::mc::{run_trials, McEstimate};
use crate::rng::RngStreamSpec;
use crate::sampling_priors::{Dataset, SampleMean, SamplingMode};
use crate::scalar::{compensated_sum, Real};
use crate::sampling_priors::theta_star_construct;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorSpec<T> {
    EmpiricalMean,
    /// Column means on the first `d` coordinates, zero after.
    Projection { d: usize },
    /// Soft thresholding at `lambda` on the first `d_trunc` coordinates,
    /// zero after.
    SoftThreshold { lambda: T, d_trunc: usize },
}

/// `sign(x) * max(|x| - lambda, 0)`.
#[inline]
pub fn sth<T: Real>(x: T, lambda: T) -> T {
    let shrunk = x.abs() - lambda;
    if shrunk > T::zero() {
        shrunk.copysign(x)
    } else {
        T::zero()
    }
}

/// Threshold `sqrt(max(2 ln(2D / (n eps^2)), 0) / n)`.
pub fn lambda_schedule<T: Real>(n: u64, dim: usize, eps: T) -> Result<T> {
    if n == 0 || dim == 0 || !(eps > T::zero()) {
        return Err(invalid("lambda schedule needs n, D, eps > 0"));
    }
    let nt = T::of(n as f64);
    let inner = (T::of(2.0) * T::count(dim) / (nt * eps * eps)).ln() * T::of(2.0);
    Ok((inner.max(T::zero()) / nt).sqrt())
}

/// Threshold `(eps / 8)^(4/3)`, which depends on the accuracy only.
pub fn lambda_power_schedule<T: Real>(eps: T) -> Result<T> {
    if !(eps > T::zero()) {
        return Err(invalid("eps must be positive"));
    }
    Ok((eps / T::of(8.0)).powf(T::of(4.0 / 3.0)))
}

/// Applies the estimator to column means.
pub fn estimate_from_mean<T: Real>(spec: &EstimatorSpec<T>, mean: &SampleMean<T>) -> ThetaVector<T> {
    let m = &mean.mean;
    let coords = match *spec {
        EstimatorSpec::EmpiricalMean => m.clone(),
        EstimatorSpec::Projection { d } => m
            .iter()
            .enumerate()
            .map(|(i, &x)| if i < d { x } else { T::zero() })
            .collect(),
        EstimatorSpec::SoftThreshold { lambda, d_trunc } => m
            .iter()
            .enumerate()
            .map(|(i, &x)| if i < d_trunc { sth(x, lambda) } else { T::zero() })
            .collect(),
    };
    ThetaVector::new(coords)
}

pub fn estimate<T: Real>(spec: &EstimatorSpec<T>, data: &Dataset<T>) -> ThetaVector<T> {
    estimate_from_mean(spec, &data.sample_mean())
}

/// `(1/n) exp(-n lambda^2 / 2) + min(theta^2, 1/n + lambda^2)`.
pub fn per_coord_risk_bound<T: Real>(theta: T, n: u64, lambda: T) -> T {
    let inv_n = T::one() / T::of(n as f64);
    inv_n * (-T::of(n as f64) * lambda * lambda / T::of(2.0)).exp() + (theta * theta).min(inv_n + lambda * lambda)
}

/// Upper bound on the soft-threshold risk: the per-coordinate bound on the
/// kept coordinates plus the discarded energy.
pub fn soft_threshold_risk_bound<T: Real>(theta: &ThetaVector<T>, n: u64, lambda: T, d_trunc: usize) -> T {
    compensated_sum(theta.coords().iter().enumerate().map(|(i, &x)| {
        if i < d_trunc {
            per_coord_risk_bound(x, n, lambda)
        } else {
            x * x
        }
    }))
}

/// `d/n + sum_{t>d} theta_t^2`.
pub fn projection_risk_exact<T: Real>(theta: &ThetaVector<T>, d: usize, n: u64) -> T {
    let tail = compensated_sum(theta.coords().iter().skip(d).map(|&x| x * x));
    T::count(d) / T::of(n as f64) + tail
}

/// Squared-error risk by simulation, drawing column means directly.
pub fn mc_risk<T: Real>(
    spec: &EstimatorSpec<T>,
    theta: &ThetaVector<T>,
    n: u64,
    trials: u64,
    stream: RngStreamSpec,
) -> Result<McEstimate<T>> {
    mc_risk_with(spec, theta, n, trials, stream, SamplingMode::Means)
}

pub fn mc_risk_with<T: Real>(
    spec: &EstimatorSpec<T>,
    theta: &ThetaVector<T>,
    n: u64,
    trials: u64,
    stream: RngStreamSpec,
    mode: SamplingMode,
) -> Result<McEstimate<T>> {
    if n == 0 || trials < 2 {
        return Err(invalid("mc_risk needs n >= 1 and at least 2 trials"));
    }
    let losses = run_trials(trials, |k| {
        let mean = mode.mean(theta, n, stream.child(k));
        estimate_from_mean(spec, &mean).sub(theta).norm_sq()
    });
    Ok(McEstimate::from_values(&losses))
}

/// Candidate parameters for the worst-case risk search: zero, boundary
/// spikes on every coordinate, boundary-scaled uniform fills of the leading
/// `1, 2, 4, ...` coordinates, and cap maximizers around the noise level of
/// the estimator.
pub fn risk_candidates<T: Real>(body: &LpBody<T>, spec: &EstimatorSpec<T>, n: u64) -> Result<Vec<ThetaVector<T>>> {
    let dim = body.ambient_dim();
    let mut out = vec![ThetaVector::zeros(dim)];
    for t in 1..=dim {
        out.push(ThetaVector::spike(dim, t, body.radius(t)));
    }
    let mut k = 1;
    loop {
        let k_eff = k.min(dim);
        let mut dir = vec![T::zero(); dim];
        dir[..k_eff].iter_mut().for_each(|x| *x = T::one());
        let dir = ThetaVector::new(dir);
        out.push(dir.scaled(boundary_scale(body, &dir)?));
        if k_eff == dim {
            break;
        }
        k *= 2;
    }
    let noise = T::one() / T::of(n as f64)
        + match *spec {
            EstimatorSpec::SoftThreshold { lambda, .. } => lambda * lambda,
            _ => T::zero(),
        };
    for &mult in &[0.25, 0.5, 1.0, 2.0, 4.0, 16.0] {
        out.push(theta_star_construct(body, noise * T::of(mult))?);
    }
    Ok(out)
}

/// Worst simulated risk over [`risk_candidates`]. A lower bound on the
/// maximal risk over the body.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstCase<T> {
    pub theta: ThetaVector<T>,
    pub risk: McEstimate<T>,
    pub candidates: usize,
}

/// Every candidate reuses `stream`, so comparisons between candidates are
/// paired.
pub fn worst_case_risk_search<T: Real>(
    body: &LpBody<T>,
    spec: &EstimatorSpec<T>,
    n: u64,
    trials: u64,
    stream: RngStreamSpec,
) -> Result<WorstCase<T>> {
    let cands = risk_candidates(body, spec, n)?;
    let mut best: Option<(usize, McEstimate<T>)> = None;
    for (i, c) in cands.iter().enumerate() {
        let r = mc_risk(spec, c, n, trials, stream)?;
        if best.as_ref().is_none_or(|(_, b)| r.mean > b.mean) {
            best = Some((i, r));
        }
    }
    let (i, risk) = best.expect("candidate list is never empty");
    Ok(WorstCase {
        theta: cands[i].clone(),
        risk,
        candidates: cands.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn sth_examples() {
        assert_eq!(sth(3.0, 1.0), 2.0);
        assert_eq!(sth(-3.0, 1.0), -2.0);
        assert_eq!(sth(0.5, 1.0), 0.0);
        assert_eq!(sth(-1.0, 1.0), 0.0);
        assert_eq!(sth(2.5f32, 0.0), 2.5);
    }

    #[test]
    fn lambda_examples() {
        assert_relative_eq!(lambda_schedule(2, 4, 1.0).unwrap(), 4f64.ln().sqrt(), max_relative = 1e-15);
        assert_relative_eq!(lambda_schedule(2, 4, 1.0).unwrap(), 1.17741, max_relative = 1e-5);
        assert_eq!(lambda_schedule(1000, 4, 1.0).unwrap(), 0.0);
        assert!(lambda_schedule(0, 4, 1.0).is_err());
        assert_relative_eq!(lambda_power_schedule(8.0).unwrap(), 1.0);
    }

    #[test]
    fn risk_bound_example() {
        assert_relative_eq!(per_coord_risk_bound(0.0, 2, 2.0), 0.5 * (-4f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(per_coord_risk_bound(0.0, 2, 2.0), 0.009158, max_relative = 1e-3);
    }

    #[test]
    fn estimate_shapes() {
        let mean = SampleMean { n: 4, mean: vec![1.0, -0.2, 0.7] };
        assert_eq!(estimate_from_mean(&EstimatorSpec::EmpiricalMean, &mean).coords(), &[1.0, -0.2, 0.7]);
        assert_eq!(estimate_from_mean(&EstimatorSpec::Projection { d: 2 }, &mean).coords(), &[1.0, -0.2, 0.0]);
        let st = EstimatorSpec::SoftThreshold { lambda: 0.5, d_trunc: 2 };
        assert_eq!(estimate_from_mean(&st, &mean).coords(), &[0.5, 0.0, 0.0]);
    }

    #[test]
    fn empirical_mean_risk_is_dim_over_n() {
        let theta = ThetaVector::new(vec![0.4, -0.3, 0.0, 1.0, 2.0]);
        let r = mc_risk(&EstimatorSpec::EmpiricalMean, &theta, 10, 20_000, RngStreamSpec::root(1)).unwrap();
        assert!(r.covers(0.5, 3.0), "{r:?}");
    }

    #[test]
    fn projection_risk_matches_closed_form() {
        let theta = ThetaVector::new(vec![0.4, -0.3, 0.2, 0.1]);
        let r = mc_risk(&EstimatorSpec::Projection { d: 2 }, &theta, 8, 20_000, RngStreamSpec::root(2)).unwrap();
        let exact = projection_risk_exact(&theta, 2, 8);
        assert_relative_eq!(exact, 0.25 + 0.05, max_relative = 1e-14);
        assert!(r.covers(exact, 3.0), "{r:?}");
    }

    #[test]
    fn full_data_and_means_agree() {
        let theta = ThetaVector::new(vec![0.4_f64, 0.0, 0.2]);
        let spec = EstimatorSpec::SoftThreshold { lambda: 0.1, d_trunc: 3 };
        let a = mc_risk_with(&spec, &theta, 20, 4000, RngStreamSpec::root(3), SamplingMode::Means).unwrap();
        let b = mc_risk_with(&spec, &theta, 20, 4000, RngStreamSpec::root(4), SamplingMode::FullData).unwrap();
        assert!((a.mean - b.mean).abs() <= 3.0 * (a.ci_radius.powi(2) + b.ci_radius.powi(2)).sqrt());
    }

    #[test]
    fn worst_projection_candidate_is_next_spike() {
        let body = LpBody::new(1.0, vec![1.0, 0.6, 0.5, 0.3, 0.2]).unwrap();
        let (d, n) = (2, 50);
        let w = worst_case_risk_search(&body, &EstimatorSpec::Projection { d }, n, 2000, RngStreamSpec::root(5)).unwrap();
        let exact = d as f64 / n as f64 + 0.25;
        assert_eq!(w.theta, ThetaVector::spike(5, 3, 0.5));
        assert!(w.risk.covers(exact, 3.0), "{:?}", w.risk);
    }

    #[test]
    fn candidates_are_members() {
        let body = LpBody::<f64>::one_over_t(1.5, 12).unwrap();
        let spec = EstimatorSpec::SoftThreshold { lambda: 0.05, d_trunc: 6 };
        for c in risk_candidates(&body, &spec, 100).unwrap() {
            assert!(crate::bodies::membership(&body, &c).unwrap());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn soft_threshold_under_bound(coords in prop::collection::vec(-1.0f64..1.0, 1..6), n in 1u64..200, lambda in 0.0f64..1.0, seed in 0u64..1000) {
            let theta = ThetaVector::new(coords);
            let d = theta.support_dim();
            let spec = EstimatorSpec::SoftThreshold { lambda, d_trunc: d };
            let r = mc_risk(&spec, &theta, n, 2000, RngStreamSpec::root(seed)).unwrap();
            prop_assert!(r.mean <= soft_threshold_risk_bound(&theta, n, lambda, d) + 3.0 * r.ci_radius);
        }
    }
}
