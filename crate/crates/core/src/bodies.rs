//! Weighted lp bodies and the effective dimensions derived from them.
//!
//! A body is `{theta : sum_t |theta_t|^p / a_t^p <= 1}` with non-increasing
//! radii `a_1 >= a_2 >= ...`. Bodies with infinitely many coordinates are
//! stored as a finite prefix and flagged with [`LpBody::is_infinite_prefix`].
//!
//! Dimension arguments count leading coordinates: `d` means coordinates
//! `1..=d`, i.e. `radii[..d]`.

use serde::Serialize;

use crate::error::{invalid, GsmError, Result};
use crate::scalar::{compensated_sum, log_sum_exp, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct LpBody<T> {
    p: T,
    radii: Vec<T>,
    infinite_prefix: bool,
}

impl<T: Real> LpBody<T> {
    pub fn new(p: T, radii: Vec<T>) -> Result<Self> {
        if !(p.is_finite() && p > T::zero()) {
            return Err(invalid(format!("exponent p must be positive and finite, got {p}")));
        }
        if radii.is_empty() {
            return Err(invalid("body needs at least one coordinate"));
        }
        if radii.iter().any(|a| !(a.is_finite() && *a > T::zero())) {
            return Err(invalid("radii must be positive and finite"));
        }
        if radii.windows(2).any(|w| w[1] > w[0]) {
            return Err(invalid("radii must be non-increasing"));
        }
        Ok(Self {
            p,
            radii,
            infinite_prefix: false,
        })
    }

    /// Marks the body as the leading part of an infinite sequence of radii.
    pub fn with_infinite_prefix(mut self, flag: bool) -> Self {
        self.infinite_prefix = flag;
        self
    }

    /// Radii `a_t = 1/t` for `t = 1..=dim`.
    pub fn one_over_t(p: T, dim: usize) -> Result<Self> {
        Self::new(p, (1..=dim).map(|t| T::one() / T::count(t)).collect())
    }

    pub fn constant(p: T, radius: T, dim: usize) -> Result<Self> {
        Self::new(p, vec![radius; dim])
    }

    pub fn p(&self) -> T {
        self.p
    }

    pub fn radii(&self) -> &[T] {
        &self.radii
    }

    /// Radius of coordinate `t` (1-based).
    pub fn radius(&self, t: usize) -> T {
        self.radii[t - 1]
    }

    pub fn ambient_dim(&self) -> usize {
        self.radii.len()
    }

    pub fn is_infinite_prefix(&self) -> bool {
        self.infinite_prefix
    }

    /// The body restricted to its first `d` coordinates.
    pub fn truncated(&self, d: usize) -> Result<Self> {
        if d == 0 || d > self.ambient_dim() {
            return Err(invalid(format!("cannot truncate body of dim {} to {d}", self.ambient_dim())));
        }
        Ok(Self {
            p: self.p,
            radii: self.radii[..d].to_vec(),
            infinite_prefix: false,
        })
    }
}

/// A parameter vector; coordinates past `support_dim` are zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaVector<T> {
    coords: Vec<T>,
}

impl<T: Real> ThetaVector<T> {
    pub fn new(coords: Vec<T>) -> Self {
        Self { coords }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(vec![T::zero(); dim])
    }

    /// `value * e_t` with `t` 1-based.
    pub fn spike(dim: usize, t: usize, value: T) -> Self {
        let mut v = Self::zeros(dim);
        v.coords[t - 1] = value;
        v
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn support_dim(&self) -> usize {
        self.coords.len()
    }

    /// Coordinate `t` (1-based); zero beyond the support.
    pub fn get(&self, t: usize) -> T {
        self.coords.get(t - 1).copied().unwrap_or_else(T::zero)
    }

    pub fn norm_sq(&self) -> T {
        compensated_sum(self.coords.iter().map(|&x| x * x))
    }

    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    pub fn scaled(&self, s: T) -> Self {
        Self::new(self.coords.iter().map(|&x| x * s).collect())
    }

    /// Zero-pads or cuts to `dim` coordinates.
    pub fn resized(&self, dim: usize) -> Self {
        let mut c = self.coords.clone();
        c.resize(dim, T::zero());
        Self::new(c)
    }

    pub fn sub(&self, other: &Self) -> Self {
        let dim = self.support_dim().max(other.support_dim());
        Self::new((1..=dim).map(|t| self.get(t) - other.get(t)).collect())
    }

    pub fn is_zero(&self) -> bool {
        self.coords.iter().all(|x| x.is_zero())
    }
}

/// Effective dimensions of a body at one accuracy level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimProfile {
    pub eps: f64,
    pub n: u64,
    pub delta: f64,
    pub coordinate_kolmogorov: usize,
    pub coordinate_kolmogorov_exhausted: bool,
    pub truncation: usize,
    pub d_u: usize,
    pub d_l: usize,
}

/// Result of the coordinate Kolmogorov dimension scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoordDim {
    pub dim: usize,
    /// No stored radius fell below the level; `dim` is the ambient dimension.
    pub exhausted: bool,
}

fn check_dim<T: Real>(body: &LpBody<T>, theta: &ThetaVector<T>) -> Result<()> {
    if theta.support_dim() > body.ambient_dim() {
        return Err(GsmError::DimensionMismatch {
            expected: body.ambient_dim(),
            got: theta.support_dim(),
        });
    }
    Ok(())
}

/// `sum_t |theta_t / a_t|^p`.
pub fn gauge<T: Real>(body: &LpBody<T>, theta: &ThetaVector<T>) -> Result<T> {
    check_dim(body, theta)?;
    Ok(compensated_sum(
        theta
            .coords()
            .iter()
            .zip(body.radii())
            .map(|(&x, &a)| (x.abs() / a).powf(body.p())),
    ))
}

/// Whether `theta` lies in the body, up to a relative slack of `1e-12`.
pub fn membership<T: Real>(body: &LpBody<T>, theta: &ThetaVector<T>) -> Result<bool> {
    Ok(gauge(body, theta)? <= T::one() + T::rel_slack())
}

/// Scale `s` with `s * direction` on the boundary of the body.
pub fn boundary_scale<T: Real>(body: &LpBody<T>, direction: &ThetaVector<T>) -> Result<T> {
    let g = gauge(body, direction)?;
    if g <= T::zero() {
        return Err(invalid("direction must be nonzero"));
    }
    Ok(g.powf(-T::one() / body.p()))
}

/// `sup { sum_{t>d} theta_t^2 : theta in body }`.
pub fn tail_sup_energy<T: Real>(body: &LpBody<T>, d: usize) -> Result<T> {
    let dim = body.ambient_dim();
    if d > dim {
        return Err(GsmError::DimensionMismatch { expected: dim, got: d });
    }
    if d == dim {
        return Ok(T::zero());
    }
    let p = body.p();
    let two = T::of(2.0);
    if p <= two {
        let a = body.radii()[d];
        return Ok(a * a);
    }
    // Holder conjugate of p/2 applied to a_t^2.
    let q = two * p / (p - two);
    let logs: Vec<T> = body.radii()[d..].iter().map(|&a| q * a.ln()).collect();
    Ok(((p - two) / p * log_sum_exp(&logs)).exp())
}

/// `min {D >= 1 : a_D <= eps}`, clamped to the stored prefix.
pub fn coordinate_kolmogorov_dim<T: Real>(body: &LpBody<T>, eps: T) -> Result<CoordDim> {
    if !(eps > T::zero()) {
        return Err(invalid(format!("eps must be positive, got {eps}")));
    }
    let level = eps * (T::one() + T::rel_slack());
    match body.radii().iter().position(|&a| a <= level) {
        Some(i) => Ok(CoordDim {
            dim: i + 1,
            exhausted: false,
        }),
        None => Ok(CoordDim {
            dim: body.ambient_dim(),
            exhausted: true,
        }),
    }
}

/// Smallest `d` whose tail energy is at most `eps^2`.
pub fn truncation_dim<T: Real>(body: &LpBody<T>, eps: T) -> Result<usize> {
    if !(eps > T::zero()) {
        return Err(invalid(format!("eps must be positive, got {eps}")));
    }
    let level = eps * eps * (T::one() + T::rel_slack());
    if body.p() <= T::of(2.0) {
        // Tail energy is a_{d+1}^2, monotone in d.
        return Ok(body
            .radii()
            .iter()
            .position(|&a| a * a <= level)
            .unwrap_or(body.ambient_dim()));
    }
    for d in 0..body.ambient_dim() {
        if tail_sup_energy(body, d)? <= level {
            return Ok(d);
        }
    }
    Ok(body.ambient_dim())
}

/// `max {d <= cap : a_d^p * n^((p-2)/2) >= tau}`, or 0.
///
/// Both effective dimensions are instances of this scan with different
/// thresholds.
pub fn dim_above_threshold<T: Real>(body: &LpBody<T>, n: u64, tau: T, cap: usize) -> Result<usize> {
    if n == 0 {
        return Err(invalid("n must be positive"));
    }
    if !(tau > T::zero()) {
        return Err(invalid(format!("threshold must be positive, got {tau}")));
    }
    let p = body.p();
    let cap = cap.min(body.ambient_dim());
    let ln_n_term = (p - T::of(2.0)) / T::of(2.0) * T::of(n as f64).ln();
    let ln_level = tau.ln() + (-T::rel_slack()).ln_1p();
    // The left side is non-increasing in d.
    let mut best = 0;
    for (i, &a) in body.radii()[..cap].iter().enumerate() {
        if p * a.ln() + ln_n_term >= ln_level {
            best = i + 1;
        } else {
            break;
        }
    }
    Ok(best)
}

/// Threshold defining the upper effective dimension.
pub fn d_u_threshold<T: Real>(eps: T, delta: T, d_max: usize) -> Result<T> {
    if !(eps > T::zero()) {
        return Err(invalid("eps must be positive"));
    }
    if !(delta > T::zero() && delta < T::one()) {
        return Err(invalid("delta must lie in (0, 1)"));
    }
    if d_max == 0 {
        return Err(invalid("dimension cap must be positive"));
    }
    let log_term = (T::of(4.0) * T::count(d_max) / delta).ln();
    Ok(eps * eps / (T::of(576.0) * log_term))
}

/// Upper effective dimension at sample size `n`, capped at `d_max`.
pub fn d_u<T: Real>(body: &LpBody<T>, n: u64, eps: T, delta: T, d_max: usize) -> Result<usize> {
    let tau = d_u_threshold(eps, delta, d_max)?;
    dim_above_threshold(body, n, tau, d_max)
}

/// Lower effective dimension at sample size `n`.
pub fn d_l<T: Real>(body: &LpBody<T>, n: u64, eps: T) -> Result<usize> {
    if !(eps > T::zero()) {
        return Err(invalid("eps must be positive"));
    }
    dim_above_threshold(body, n, T::of(192.0) * eps * eps, body.ambient_dim())
}

/// The p = 1 body with radii `1/t`, stored up to `d_max` coordinates.
pub fn counterexample_body<T: Real>(d_max: usize) -> Result<LpBody<T>> {
    Ok(LpBody::one_over_t(T::one(), d_max)?.with_infinite_prefix(true))
}

/// Checks `truncation_dim(eps / D_c) >= D_c / 2 - 2` with `D_c` the
/// coordinate Kolmogorov dimension at `eps`.
pub fn kol_inequality_check<T: Real>(body: &LpBody<T>, eps: T) -> Result<bool> {
    let dc = coordinate_kolmogorov_dim(body, eps)?.dim;
    let lhs = truncation_dim(body, eps / T::count(dc))?;
    Ok(lhs as f64 >= dc as f64 / 2.0 - 2.0)
}

/// All effective dimensions at once.
pub fn dim_profile<T: Real>(body: &LpBody<T>, eps: T, n: u64, delta: T) -> Result<DimProfile> {
    let kol = coordinate_kolmogorov_dim(body, eps)?;
    Ok(DimProfile {
        eps: eps.to_f64_lossy(),
        n,
        delta: delta.to_f64_lossy(),
        coordinate_kolmogorov: kol.dim,
        coordinate_kolmogorov_exhausted: kol.exhausted,
        truncation: truncation_dim(body, eps)?,
        d_u: d_u(body, n, eps, delta, body.ambient_dim())?,
        d_l: d_l(body, n, eps)?,
    })
}
