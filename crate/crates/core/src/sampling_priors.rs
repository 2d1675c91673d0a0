//! Data generation, product priors and chi-square computations for them.

use log::warn;
use serde::Serialize;

use crate::bodies::{gauge, LpBody, ThetaVector};
use crate::error::{invalid, GsmError, Result};
use crate::mc::{run_trials, McEstimate, Z95};
pub use crate::rng::RngStreamSpec;
use crate::scalar::{cosh_m1, ln_cosh, log_sum_exp, CompensatedSum, Real};


/// `n` rows of `dim` coordinates, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    n: usize,
    dim: usize,
    data: Vec<T>,
}

impl<T: Real> Dataset<T> {
    pub fn from_rows(n: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * dim {
            return Err(invalid(format!("expected {} values, got {}", n * dim, data.len())));
        }
        Ok(Self { n, dim, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows `start..end` as a new dataset.
    pub fn rows(&self, start: usize, end: usize) -> Self {
        Self {
            n: end - start,
            dim: self.dim,
            data: self.data[start * self.dim..end * self.dim].to_vec(),
        }
    }

    /// Column means with compensated summation.
    pub fn sample_mean(&self) -> SampleMean<T> {
        let mut acc = vec![CompensatedSum::new(); self.dim];
        for i in 0..self.n {
            for (a, &x) in acc.iter_mut().zip(self.row(i)) {
                a.add(x);
            }
        }
        let n = T::count(self.n.max(1));
        SampleMean {
            n: self.n as u64,
            mean: acc.iter().map(|a| a.value() / n).collect(),
        }
    }
}

/// Column means of `n` observations. Every test in this crate depends on the
/// data only through these.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMean<T> {
    pub n: u64,
    pub mean: Vec<T>,
}

impl<T: Real> SampleMean<T> {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Pools two means of disjoint samples.
    pub fn pooled(&self, other: &Self) -> Self {
        let (a, b) = (T::of(self.n as f64), T::of(other.n as f64));
        let tot = a + b;
        Self {
            n: self.n + other.n,
            mean: self
                .mean
                .iter()
                .zip(&other.mean)
                .map(|(&x, &y)| (a * x + b * y) / tot)
                .collect(),
        }
    }
}

/// `n` iid rows `N(theta, I)`.
pub fn sample_dataset<T: Real>(theta: &ThetaVector<T>, n: usize, stream: RngStreamSpec) -> Dataset<T> {
    let dim = theta.support_dim();
    let mut rng = stream.rng();
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        for &t in theta.coords() {
            data.push(t + T::standard_normal(&mut rng));
        }
    }
    Dataset { n, dim, data }
}

/// Column means of `n` rows `N(theta, I)`, drawn directly as
/// `N(theta, I / n)`. Same distribution as `sample_dataset(..).sample_mean()`.
pub fn sample_mean<T: Real>(theta: &ThetaVector<T>, n: u64, stream: RngStreamSpec) -> SampleMean<T> {
    let mut rng = stream.rng();
    let sd = T::one() / T::of(n as f64).sqrt();
    SampleMean {
        n,
        mean: theta
            .coords()
            .iter()
            .map(|&t| t + sd * T::standard_normal(&mut rng))
            .collect(),
    }
}

/// How simulations produce their sufficient statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Draw column means directly.
    #[default]
    Means,
    /// Materialize every row and average.
    FullData,
}

impl SamplingMode {
    pub fn mean<T: Real>(self, theta: &ThetaVector<T>, n: u64, stream: RngStreamSpec) -> SampleMean<T> {
        match self {
            SamplingMode::Means => sample_mean(theta, n, stream),
            SamplingMode::FullData => sample_dataset(theta, n as usize, stream).sample_mean(),
        }
    }
}

/// Samples for one likelihood-free test: `X ~ P_X^n`, `Y ~ P_Y^n`, `Z ~ P_Z^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct LfhtDataset<T> {
    pub x: Dataset<T>,
    pub y: Dataset<T>,
    pub z: Dataset<T>,
}

/// Sufficient statistics of an [`LfhtDataset`], with `X` and `Y` split into
/// a first block of `floor(n/2)` rows and the remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct LfhtMeans<T> {
    pub x_first: SampleMean<T>,
    pub x_second: SampleMean<T>,
    pub y_first: SampleMean<T>,
    pub y_second: SampleMean<T>,
    pub z: SampleMean<T>,
}

impl<T: Real> LfhtMeans<T> {
    pub fn x(&self) -> SampleMean<T> {
        self.x_first.pooled(&self.x_second)
    }

    pub fn y(&self) -> SampleMean<T> {
        self.y_first.pooled(&self.y_second)
    }

    pub fn n(&self) -> u64 {
        self.x_first.n + self.x_second.n
    }

    pub fn m(&self) -> u64 {
        self.z.n
    }
}

impl<T: Real> LfhtDataset<T> {
    pub fn means(&self) -> LfhtMeans<T> {
        let half = self.x.n() / 2;
        LfhtMeans {
            x_first: self.x.rows(0, half).sample_mean(),
            x_second: self.x.rows(half, self.x.n()).sample_mean(),
            y_first: self.y.rows(0, self.y.n() / 2).sample_mean(),
            y_second: self.y.rows(self.y.n() / 2, self.y.n()).sample_mean(),
            z: self.z.sample_mean(),
        }
    }
}

pub fn sample_lfht<T: Real>(
    theta_x: &ThetaVector<T>,
    theta_y: &ThetaVector<T>,
    theta_z: &ThetaVector<T>,
    n: usize,
    m: usize,
    stream: RngStreamSpec,
) -> LfhtDataset<T> {
    LfhtDataset {
        x: sample_dataset(theta_x, n, stream.child(0)),
        y: sample_dataset(theta_y, n, stream.child(1)),
        z: sample_dataset(theta_z, m, stream.child(2)),
    }
}

/// Draws [`LfhtMeans`] under the given sampling mode.
pub fn sample_lfht_means<T: Real>(
    theta_x: &ThetaVector<T>,
    theta_y: &ThetaVector<T>,
    theta_z: &ThetaVector<T>,
    n: u64,
    m: u64,
    stream: RngStreamSpec,
    mode: SamplingMode,
) -> LfhtMeans<T> {
    match mode {
        SamplingMode::FullData => sample_lfht(theta_x, theta_y, theta_z, n as usize, m as usize, stream).means(),
        SamplingMode::Means => {
            let n0 = n / 2;
            LfhtMeans {
                x_first: sample_mean(theta_x, n0, stream.descend(&[0, 0])),
                x_second: sample_mean(theta_x, n - n0, stream.descend(&[0, 1])),
                y_first: sample_mean(theta_y, n0, stream.descend(&[1, 0])),
                y_second: sample_mean(theta_y, n - n0, stream.descend(&[1, 1])),
                z: sample_mean(theta_z, m, stream.child(2)),
            }
        }
    }
}

/// Priors whose coordinates are independent.
#[derive(Debug, Clone, PartialEq)]
pub enum ProductPrior<T> {
    /// Coordinate `i` is `+-theta_i` with probability 1/2 each.
    TwoPointSym(ThetaVector<T>),
    /// `d` iid coordinates: 0 w.p. `1-h`, `+-r` w.p. `h/2` each.
    Ternary { d: usize, h: T, r: T },
    PointMass(ThetaVector<T>),
}

impl<T: Real> ProductPrior<T> {
    pub fn ternary(d: usize, h: T, r: T) -> Result<Self> {
        if d == 0 {
            return Err(invalid("ternary prior needs d >= 1"));
        }
        if !(h >= T::zero() && h <= T::one()) {
            return Err(invalid(format!("h must lie in [0, 1], got {h}")));
        }
        if !r.is_finite() {
            return Err(invalid("r must be finite"));
        }
        Ok(Self::Ternary { d, h, r })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::TwoPointSym(t) | Self::PointMass(t) => t.support_dim(),
            Self::Ternary { d, .. } => *d,
        }
    }

    /// Support points and weights of coordinate `j` (0-based).
    pub fn coordinate_support(&self, j: usize) -> Vec<(T, T)> {
        let half = T::of(0.5);
        match self {
            Self::TwoPointSym(t) => {
                let v = t.coords()[j];
                vec![(v, half), (-v, half)]
            }
            Self::Ternary { h, r, .. } => vec![
                (T::zero(), T::one() - *h),
                (*r, *h * half),
                (-*r, *h * half),
            ],
            Self::PointMass(t) => vec![(t.coords()[j], T::one())],
        }
    }

    /// Whether the prior is invariant under `theta -> -theta`.
    pub fn is_sign_symmetric(&self) -> bool {
        !matches!(self, Self::PointMass(t) if !t.is_zero())
    }
}

/// One draw of `theta`, zero-padded to `dim`.
pub fn sample_theta<T: Real>(prior: &ProductPrior<T>, dim: usize, stream: RngStreamSpec) -> Result<ThetaVector<T>> {
    if dim < prior.dim() {
        return Err(GsmError::DimensionMismatch {
            expected: dim,
            got: prior.dim(),
        });
    }
    let mut rng = stream.rng();
    let mut coords = Vec::with_capacity(dim);
    for j in 0..prior.dim() {
        coords.push(draw_coordinate(&prior.coordinate_support(j), &mut rng));
    }
    coords.resize(dim, T::zero());
    Ok(ThetaVector::new(coords))
}

fn draw_coordinate<T: Real, R: rand::Rng + ?Sized>(support: &[(T, T)], rng: &mut R) -> T {
    let u = T::of(rng.gen::<f64>());
    let mut acc = T::zero();
    for &(v, w) in support {
        acc = acc + w;
        if u < acc {
            return v;
        }
    }
    support.last().map(|s| s.0).unwrap_or_else(T::zero)
}

/// `ln(1 + chi^2)` for the symmetric two-point prior at sample size `n`.
pub fn ln1p_chi2_two_point<T: Real>(theta_star: &ThetaVector<T>, n: u64) -> T {
    let n = T::of(n as f64);
    crate::scalar::compensated_sum(theta_star.coords().iter().map(|&t| ln_cosh(n * t * t)))
}

/// `chi^2` between the two-point mixture and the null, closed form.
pub fn chi2_two_point_exact<T: Real>(theta_star: &ThetaVector<T>, n: u64) -> T {
    ln1p_chi2_two_point(theta_star, n).exp_m1()
}

/// The bound `exp(n^2/2 * sum theta^4) - 1` dominating the two-point chi^2.
pub fn ingster_bound_two_point<T: Real>(theta_star: &ThetaVector<T>, n: u64) -> T {
    let n = T::of(n as f64);
    let s4 = crate::scalar::compensated_sum(theta_star.coords().iter().map(|&t| t.powi(4)));
    (n * n / T::of(2.0) * s4).exp_m1()
}

/// `chi^2` for the ternary prior with `m` observations, closed form.
pub fn chi2_ternary_exact<T: Real>(d: usize, h: T, r: T, m: u64) -> T {
    let per = (h * h * cosh_m1(T::of(m as f64) * r * r)).ln_1p();
    (T::count(d) * per).exp_m1()
}

/// Pair budget large enough for a ten-coordinate two-point prior.
pub const DEFAULT_PAIR_LIMIT: u128 = 1 << 20;

/// Enumerates every pair of support points of the prior and averages
/// `exp(m <theta, theta'>) - 1`. Errors if there are more than `pair_limit`
/// pairs.
pub fn chi2_bruteforce_enum<T: Real>(prior: &ProductPrior<T>, m: u64, pair_limit: u128) -> Result<T> {
    let dim = prior.dim();
    let mut points: Vec<(Vec<T>, T)> = vec![(Vec::with_capacity(dim), T::one())];
    let mut count: u128 = 1;
    for j in 0..dim {
        let sup = prior.coordinate_support(j);
        count = count.saturating_mul(sup.len() as u128);
        if count.saturating_mul(count) > pair_limit {
            return Err(GsmError::EnumerationTooLarge {
                pairs: count.saturating_mul(count),
                limit: pair_limit,
            });
        }
        let mut next = Vec::with_capacity(points.len() * sup.len());
        for (pt, w) in &points {
            for &(v, wv) in &sup {
                let mut q = pt.clone();
                q.push(v);
                next.push((q, *w * wv));
            }
        }
        points = next;
    }
    let m = T::of(m as f64);
    let symmetric = prior.is_sign_symmetric();
    let mut acc = CompensatedSum::new();
    for (a, wa) in &points {
        for (b, wb) in &points {
            let ip = crate::scalar::compensated_sum(a.iter().zip(b).map(|(&x, &y)| x * y));
            // Under a sign-symmetric prior exp(x) - 1 averages to cosh(x) - 1
            // over the pair (theta', -theta'), which keeps every term >= 0.
            let term = if symmetric {
                cosh_m1(m * ip)
            } else {
                (m * ip).exp_m1()
            };
            acc.add(*wa * *wb * term);
        }
    }
    Ok(acc.value())
}

/// Total variation bound and whether the parameters lie in the regime where
/// the bound is valid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TvBound<T> {
    pub value: T,
    pub in_regime: bool,
}

/// `sqrt(d h^2 n^2 r^4)` clipped to `[0, 1]`. The regime requires
/// `d h^2 n^2 r^4 <= 1` and `n r^2 <= 1`.
pub fn tv_upper_bound_gof<T: Real>(d: T, h: T, r: T, n: T) -> Result<TvBound<T>> {
    if [d, h, r, n].iter().any(|x| !(x.is_finite() && *x >= T::zero())) {
        return Err(invalid("tv bound arguments must be finite and non-negative"));
    }
    let r2 = r * r;
    let q = d * h * h * n * n * r2 * r2;
    let lim = T::one() + T::rel_slack();
    Ok(TvBound {
        value: q.sqrt().min(T::one()),
        in_regime: q <= lim && n * r2 <= lim,
    })
}

/// Monte Carlo estimate of `1 + chi^2(P_{0,Z|X} || P_{1,Z|X})` averaged over
/// `X` drawn from the mixture under the prior.
///
/// Coordinates are independent, so the estimate is the product over
/// coordinates of the per-coordinate averages of
/// `sum_{k,l} post_k post_l exp(m v_k v_l)` where `post` is the posterior of
/// coordinate `j` given the sum of its `n` observations. The confidence
/// radius comes from the delta method.
pub fn lfht_conditional_chi2_mc<T: Real>(
    prior: &ProductPrior<T>,
    n: u64,
    m: u64,
    trials: u64,
    stream: RngStreamSpec,
) -> Result<McEstimate<T>> {
    if trials < 100 {
        return Err(invalid(format!("need at least 100 trials, got {trials}")));
    }
    if n == 0 {
        return Err(invalid("n must be positive"));
    }
    let dim = prior.dim();
    let supports: Vec<Vec<(T, T)>> = (0..dim).map(|j| prior.coordinate_support(j)).collect();
    let nt = T::of(n as f64);
    let mt = T::of(m as f64);
    let sqrt_n = nt.sqrt();

    let rows = run_trials(trials, |k| {
        let mut rng = stream.child(k).rng();
        let mut out = Vec::with_capacity(dim);
        for sup in &supports {
            let theta = draw_coordinate(sup, &mut rng);
            let s = nt * theta + sqrt_n * T::standard_normal(&mut rng);
            let logs: Vec<T> = sup
                .iter()
                .map(|&(v, w)| w.ln() + v * s - nt * v * v / T::of(2.0))
                .collect();
            let norm = log_sum_exp(&logs);
            let post: Vec<T> = logs.iter().map(|&l| (l - norm).exp()).collect();
            let mut acc = CompensatedSum::new();
            for (a, &(va, _)) in post.iter().zip(sup) {
                for (b, &(vb, _)) in post.iter().zip(sup) {
                    acc.add(*a * *b * (mt * va * vb).exp_m1());
                }
            }
            out.push(T::one() + acc.value());
        }
        out
    });

    let finite: Vec<&Vec<T>> = rows.iter().filter(|r| r.iter().all(|x| x.is_finite())).collect();
    let rejected = rows.len() - finite.len();
    if rejected > 0 {
        warn!("lfht chi-square: {rejected} of {trials} trials produced non-finite values");
    }
    if rejected as f64 > 0.01 * trials as f64 {
        return Err(GsmError::Numeric(format!(
            "{rejected} of {trials} trials non-finite"
        )));
    }
    let mut product = T::one();
    let mut rel_var = T::zero();
    for j in 0..dim {
        let col: Vec<T> = finite.iter().map(|r| r[j]).collect();
        let e = McEstimate::from_values(&col);
        product = product * e.mean;
        let se = e.ci_radius / T::of(Z95);
        if e.mean > T::zero() {
            rel_var = rel_var + (se / e.mean).powi(2);
        }
    }
    Ok(McEstimate {
        mean: product,
        ci_radius: T::of(Z95) * product * rel_var.sqrt(),
        trials: finite.len() as u64,
    })
}

/// Ternary form of [`lfht_conditional_chi2_mc`].
pub fn lfht_conditional_chi2_mc_ternary<T: Real>(
    d: usize,
    h: T,
    r: T,
    n: u64,
    m: u64,
    trials: u64,
    stream: RngStreamSpec,
) -> Result<McEstimate<T>> {
    lfht_conditional_chi2_mc(&ProductPrior::ternary(d, h, r)?, n, m, trials, stream)
}

/// The bound `prod_j (1 + 4 m^2 theta_j^4 + 4 m n theta_j^4) - 1` on the
/// conditional chi^2 of the two-point prior, valid when `m theta_j^2 <= 1`.
pub fn lfht_two_point_chi2_bound<T: Real>(theta_star: &ThetaVector<T>, n: u64, m: u64) -> T {
    let (n, m) = (T::of(n as f64), T::of(m as f64));
    let four = T::of(4.0);
    let ln = crate::scalar::compensated_sum(
        theta_star
            .coords()
            .iter()
            .map(|&t| (four * m * m * t.powi(4) + four * m * n * t.powi(4)).ln_1p()),
    );
    ln.exp_m1()
}

/// A vector in the body maximizing `sum_i min(theta_i^2, cap)`.
///
/// For `p <= 2` coordinates are filled to `sqrt(cap)` in order of decreasing
/// radius until the constraint binds. For `p > 2` the maximizer has
/// `theta_i = min(sqrt(cap), k * a_i^(p/(p-2)))` with `k` set so the
/// constraint binds.
pub fn theta_star_construct<T: Real>(body: &LpBody<T>, cap: T) -> Result<ThetaVector<T>> {
    if !(cap > T::zero() && cap.is_finite()) {
        return Err(invalid(format!("cap must be positive, got {cap}")));
    }
    let p = body.p();
    let c = cap.sqrt();
    let radii = body.radii();
    let full = ThetaVector::new(vec![c; radii.len()]);
    if gauge(body, &full)? <= T::one() {
        return Ok(full);
    }
    let two = T::of(2.0);
    if p <= two {
        let mut budget = T::one();
        let mut coords = vec![T::zero(); radii.len()];
        for (x, &a) in coords.iter_mut().zip(radii) {
            if budget <= T::zero() {
                break;
            }
            let level = c.min(a * budget.powf(T::one() / p));
            *x = level;
            budget = budget - (level / a).powf(p);
        }
        return Ok(ThetaVector::new(coords));
    }
    let expo = p / (p - two);
    let shape: Vec<T> = radii.iter().map(|&a| a.powf(expo)).collect();
    let build = |k: T| ThetaVector::new(shape.iter().map(|&s| c.min(k * s)).collect());
    let (mut lo, mut hi) = (T::zero(), T::one());
    while gauge(body, &build(hi))? < T::one() {
        hi = hi * two;
    }
    for _ in 0..200 {
        let mid = (lo + hi) / two;
        if gauge(body, &build(mid))? <= T::one() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(build(lo))
}
