//! Scalar Gaussian kernel: truncated-normal CDF, location solvers and
//! Monte Carlo quantiles of studentized Gaussian maxima.
//!
//! Tail probabilities are handled on the log scale through the Mills ratio,
//! and interval masses are computed from the window edge plus a width so
//! that windows far into a tail keep their relative precision.

use libm::{erf, erfc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::linalg::{psd_factor, Matrix};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
/// Above this the upper tail is evaluated through the Mills ratio.
const MILLS_SWITCH: f64 = 5.0;
/// Initial half-width of the root bracket, in standard deviations.
pub const INITIAL_SPAN: f64 = 10.0;
/// Largest half-width the bracket may grow to, in standard deviations.
pub const MAX_SPAN: f64 = 1e8;
/// Root residual tolerance.
pub const ROOT_TOL: f64 = 1e-8;
/// A statistic this close to a window edge (in standard deviations) sits on it.
pub const EDGE_TOL: f64 = 1e-10;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

pub fn normal_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// `ln(Q(x) / phi(x))` for `x >= MILLS_SWITCH`, by continued fraction.
fn ln_mills(x: f64) -> f64 {
    if x.is_infinite() {
        return -x.ln();
    }
    let mut f = x;
    for k in (1..=120).rev() {
        f = x + k as f64 / f;
    }
    -f.ln()
}

/// `ln Q(x)`.
pub fn ln_normal_sf(x: f64) -> f64 {
    if x >= MILLS_SWITCH {
        -0.5 * x * x - LN_SQRT_2PI + ln_mills(x)
    } else {
        normal_sf(x).ln()
    }
}

/// `ln Q(y + w) - ln Q(y)` for `y >= 0`, `w >= 0`.
fn ln_sf_ratio(y: f64, w: f64) -> f64 {
    if w == 0.0 {
        return 0.0;
    }
    if w.is_infinite() {
        return f64::NEG_INFINITY;
    }
    if y >= MILLS_SWITCH {
        -0.5 * w * (2.0 * y + w) + ln_mills(y + w) - ln_mills(y)
    } else {
        ln_normal_sf(y + w) - ln_normal_sf(y)
    }
}

/// Fraction of the mass of `[a, a + wb]` lying in `[a, a + wt]`, for `a >= 0`.
fn right_tail_fraction(a: f64, wt: f64, wb: f64) -> f64 {
    let num = -(ln_sf_ratio(a, wt)).exp_m1();
    let den = -(ln_sf_ratio(a, wb)).exp_m1();
    num / den
}

/// Fraction of the mass of `[a, a + wb]` lying in `[a + wt, a + wb]`, for `a >= 0`.
fn left_tail_fraction(a: f64, wt: f64, wb: f64) -> f64 {
    let rt = ln_sf_ratio(a, wt);
    let rb = ln_sf_ratio(a, wb);
    let num = -rt.exp() * (rb - rt).exp_m1();
    let den = -rb.exp_m1();
    num / den
}

/// Scalar Gaussian `N(mu, sigma2)` restricted to `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedNormal {
    pub mu: f64,
    pub sigma2: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TruncatedNormal {
    pub fn new(mu: f64, sigma2: f64, lower: f64, upper: f64) -> Result<Self> {
        let tn = TruncatedNormal {
            mu,
            sigma2,
            lower,
            upper,
        };
        tn.validate()?;
        Ok(tn)
    }

    fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() || !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "truncated normal needs finite mu and positive variance, got mu={} sigma2={}",
                self.mu, self.sigma2
            )));
        }
        if self.lower.is_nan() || self.upper.is_nan() || !(self.lower < self.upper) {
            return Err(Error::InvalidArgument(format!(
                "truncation window [{}, {}] is empty",
                self.lower, self.upper
            )));
        }
        Ok(())
    }

    fn underflow(&self) -> Error {
        Error::Underflow {
            mu: self.mu,
            sigma2: self.sigma2,
            lower: self.lower,
            upper: self.upper,
        }
    }
}

/// `P(X <= t)` for `X` distributed as `tn`.
pub fn tn_cdf(t: f64, tn: &TruncatedNormal) -> Result<f64> {
    tn.validate()?;
    if t.is_nan() {
        return Err(Error::InvalidArgument("t is NaN".into()));
    }
    if t <= tn.lower {
        return Ok(0.0);
    }
    if t >= tn.upper {
        return Ok(1.0);
    }
    let sigma = tn.sigma2.sqrt();
    let za = (tn.lower - tn.mu) / sigma;
    let zb = (tn.upper - tn.mu) / sigma;
    let f = if za >= 0.0 {
        right_tail_fraction(za, (t - tn.lower) / sigma, (tn.upper - tn.lower) / sigma)
    } else if zb <= 0.0 {
        left_tail_fraction(-zb, (tn.upper - t) / sigma, (tn.upper - tn.lower) / sigma)
    } else {
        let zt = (t - tn.mu) / sigma;
        let ea = erf(za / SQRT_2);
        (erf(zt / SQRT_2) - ea) / (erf(zb / SQRT_2) - ea)
    };
    if !f.is_finite() {
        return Err(tn.underflow());
    }
    Ok(f.clamp(0.0, 1.0))
}

/// Which side of the confidence interval a hybrid solve produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Lower,
    Upper,
}

/// Outcome of a location solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootSolution {
    pub mu: f64,
    pub iterations: u32,
}

fn check_target(target: f64) -> Result<()> {
    if target > 0.0 && target < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("target {target} is not in (0, 1)")))
    }
}

fn check_inside(t: f64, lower: f64, upper: f64) -> Result<()> {
    if t.is_finite() && t >= lower && t <= upper && lower < upper {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "statistic {t} is outside the window [{lower}, {upper}]"
        )))
    }
}

/// Bisection for a nonincreasing `g` on `[lo, hi]` with `g(lo) >= target >= g(hi)`.
fn bisect(g: &dyn Fn(f64) -> Result<f64>, mut lo: f64, mut hi: f64, target: f64, scale: f64) -> Result<(f64, u32)> {
    let mut it = 0;
    while it < 400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-15 * (mid.abs() + scale) {
            break;
        }
        let v = g(mid)?;
        it += 1;
        if v == target {
            return Ok((mid, it));
        }
        if v > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi), it))
}

/// Grows `mu = t + dir * span * sigma` until `g` crosses `target`.
fn expand(
    g: &dyn Fn(f64) -> Result<f64>,
    t: f64,
    sigma: f64,
    dir: f64,
    target: f64,
    window: (f64, f64),
) -> Result<f64> {
    let mut span = INITIAL_SPAN;
    loop {
        let mu = t + dir * span * sigma;
        let v = g(mu)?;
        if (dir < 0.0 && v >= target) || (dir > 0.0 && v <= target) {
            return Ok(mu);
        }
        if span >= MAX_SPAN {
            return Err(Error::Bracket {
                t,
                target,
                lower: window.0,
                upper: window.1,
                span,
            });
        }
        span *= 2.0;
    }
}

fn finish(
    g: &dyn Fn(f64) -> Result<f64>,
    mu: f64,
    it: u32,
    t: f64,
    target: f64,
    window: (f64, f64),
) -> Result<RootSolution> {
    let r = g(mu)? - target;
    if r.abs() > ROOT_TOL {
        return Err(Error::Bracket {
            t,
            target,
            lower: window.0,
            upper: window.1,
            span: f64::NAN,
        });
    }
    Ok(RootSolution { mu, iterations: it })
}

/// The location `mu` at which `t` is the `target` quantile of
/// `N(mu, sigma2)` truncated to `[lower, upper]`.
///
/// A statistic sitting on a window edge has no finite solution; the limit
/// (`-inf` at the lower edge, `+inf` at the upper edge) is returned.
pub fn solve_location(t: f64, target: f64, sigma2: f64, lower: f64, upper: f64) -> Result<RootSolution> {
    check_target(target)?;
    check_inside(t, lower, upper)?;
    TruncatedNormal::new(t, sigma2, lower, upper)?;
    let sigma = sigma2.sqrt();
    if t - lower <= EDGE_TOL * sigma {
        return Ok(RootSolution {
            mu: f64::NEG_INFINITY,
            iterations: 0,
        });
    }
    if upper - t <= EDGE_TOL * sigma {
        return Ok(RootSolution {
            mu: f64::INFINITY,
            iterations: 0,
        });
    }
    let g = |mu: f64| {
        tn_cdf(
            t,
            &TruncatedNormal {
                mu,
                sigma2,
                lower,
                upper,
            },
        )
    };
    let window = (lower, upper);
    let lo = expand(&g, t, sigma, -1.0, target, window)?;
    let hi = expand(&g, t, sigma, 1.0, target, window)?;
    let (mu, it) = bisect(&g, lo, hi, target, sigma)?;
    finish(&g, mu, it, t, target, window)
}

/// Location solve where one window edge moves with `mu`: the upper edge is
/// `min(upper, mu + offset)` for [`Side::Lower`], the lower edge is
/// `max(lower, mu - offset)` for [`Side::Upper`].
///
/// The lower-side result is never below `t - offset` and the upper-side
/// result never above `t + offset`.
pub fn solve_location_hybrid(
    t: f64,
    target: f64,
    sigma2: f64,
    lower: f64,
    upper: f64,
    offset: f64,
    side: Side,
) -> Result<RootSolution> {
    if offset.is_infinite() && offset > 0.0 {
        return solve_location(t, target, sigma2, lower, upper);
    }
    check_target(target)?;
    check_inside(t, lower, upper)?;
    TruncatedNormal::new(t, sigma2, lower, upper)?;
    if !(offset >= 0.0) {
        return Err(Error::InvalidArgument(format!("offset {offset} must be nonnegative")));
    }
    let sigma = sigma2.sqrt();
    let window = (lower, upper);
    match side {
        Side::Lower => {
            let floor = t - offset;
            if t - lower <= EDGE_TOL * sigma {
                return Ok(RootSolution {
                    mu: floor,
                    iterations: 0,
                });
            }
            let g = |mu: f64| {
                let hi = upper.min(mu + offset);
                if t >= hi {
                    return Ok(1.0);
                }
                tn_cdf(
                    t,
                    &TruncatedNormal {
                        mu,
                        sigma2,
                        lower,
                        upper: hi,
                    },
                )
            };
            let hi = expand(&g, t, sigma, 1.0, target, window)?.max(floor);
            let (mu, it) = bisect(&g, floor, hi, target, sigma)?;
            finish(&g, mu, it, t, target, window)
        }
        Side::Upper => {
            let ceil = t + offset;
            if upper - t <= EDGE_TOL * sigma {
                return Ok(RootSolution {
                    mu: ceil,
                    iterations: 0,
                });
            }
            let g = |mu: f64| {
                let lo = lower.max(mu - offset);
                if t <= lo {
                    return Ok(0.0);
                }
                tn_cdf(
                    t,
                    &TruncatedNormal {
                        mu,
                        sigma2,
                        lower: lo,
                        upper,
                    },
                )
            };
            let lo = expand(&g, t, sigma, -1.0, target, window)?.min(ceil);
            let (mu, it) = bisect(&g, lo, ceil, target, sigma)?;
            finish(&g, mu, it, t, target, window)
        }
    }
}

/// Sorted draws of `max_i zeta_i / sqrt(cov_ii)` with `zeta ~ N(0, cov)`.
pub fn max_stat_samples(cov: &Matrix<f64>, draws: usize, seed: u64) -> Result<Vec<f64>> {
    let k = cov.nrows();
    if k == 0 || cov.ncols() != k {
        return Err(Error::Dimension(format!("covariance is {}x{}", k, cov.ncols())));
    }
    if draws == 0 {
        return Err(Error::InvalidArgument("draws must be positive".into()));
    }
    if !cov.is_symmetric(1e-10) {
        return Err(Error::InvalidArgument("covariance is not symmetric".into()));
    }
    let sd: Vec<f64> = (0..k).map(|i| cov[(i, i)].sqrt()).collect();
    if let Some(i) = sd.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::ZeroVariance(format!(
            "covariance diagonal entry {i} is not positive"
        )));
    }
    let mut corr = Matrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            corr[(i, j)] = cov[(i, j)] / (sd[i] * sd[j]);
        }
    }
    let f = psd_factor(&corr, 1e-8)?;
    let r = f.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = vec![0.0; r];
    let mut out = Vec::with_capacity(draws);
    for _ in 0..draws {
        for zc in z.iter_mut() {
            *zc = StandardNormal.sample(&mut rng);
        }
        let mut m = f64::NEG_INFINITY;
        for i in 0..k {
            let row = &f.as_slice()[i * r..(i + 1) * r];
            let v: f64 = row.iter().zip(&z).map(|(a, b)| a * b).sum();
            m = m.max(v);
        }
        out.push(m);
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Order statistic `ceil(level * n)` (1-based) of sorted samples.
pub fn order_statistic(sorted: &[f64], level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level {level} is not in (0, 1)")));
    }
    let n = sorted.len();
    let k = ((level * n as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[k.min(n) - 1])
}

/// Monte Carlo `level` quantile of the studentized maximum of `N(0, cov)`.
pub fn max_gauss_quantile(cov: &Matrix<f64>, level: f64, draws: usize, seed: u64) -> Result<f64> {
    order_statistic(&max_stat_samples(cov, draws, seed)?, level)
}
