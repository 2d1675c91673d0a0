//! Deterministic parallel Monte Carlo plumbing.

use rayon::prelude::*;
use serde::Serialize;

use crate::scalar::{CompensatedSum, Real};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

/// Runs `f(k)` for `k in 0..trials` on the current rayon pool. Output order
/// matches trial order, so reductions over it do not depend on the pool size.
pub fn run_trials<R, F>(trials: u64, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(u64) -> R + Sync + Send,
{
    (0..trials).into_par_iter().map(f).collect()
}

/// Sample mean with a 95% confidence radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate<T> {
    pub mean: T,
    pub ci_radius: T,
    pub trials: u64,
}

impl<T: Real> McEstimate<T> {
    /// Mean and `1.96 * sd / sqrt(k)` of the values.
    pub fn from_values(values: &[T]) -> Self {
        let k = values.len();
        let mut s = CompensatedSum::new();
        for &v in values {
            s.add(v);
        }
        let mean = s.value() / T::count(k.max(1));
        let mut ss = CompensatedSum::new();
        for &v in values {
            ss.add((v - mean) * (v - mean));
        }
        let var = if k > 1 {
            ss.value() / T::count(k - 1)
        } else {
            T::zero()
        };
        Self {
            mean,
            ci_radius: T::of(Z95) * (var / T::count(k.max(1))).sqrt(),
            trials: k as u64,
        }
    }

    /// Whether `x` lies within `k` confidence radii of the mean.
    pub fn covers(&self, x: T, k: T) -> bool {
        (self.mean - x).abs() <= k * self.ci_radius
    }
}
