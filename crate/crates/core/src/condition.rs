//! Sufficient-statistic decomposition along a bound piece and the truncation
//! window a polyhedral event induces on the studied statistic.
//!
//! For a piece `(c, l)` the statistic is `s = sqrt(n)(c + l.p_hat)`. Writing
//! `sqrt(n) p_hat = z + b s` with `b = S l' / (l S l')` makes `z` independent
//! of `s` under joint normality, and `{A p_hat <= c}` becomes
//! `{v_minus <= s <= v_plus, v_zero >= 0}`.

use crate::error::{Error, Result};
use crate::linalg::{dot, norm_inf, Real};
use crate::model::{Polyhedron, ReducedForm};

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionData<T = f64> {
    /// `S l' / (l S l')`.
    pub b: Vec<T>,
    /// `sqrt(n) p_hat - b s_obs`.
    pub z_stat: Vec<T>,
    /// `sqrt(n)(c + l.p_hat)`.
    pub s_obs: T,
    /// `l S l'`.
    pub var_s: T,
}

impl<T: Real> DirectionData<T> {
    /// `z + b s`.
    pub fn reconstruct(&self, s: T) -> Vec<T> {
        self.z_stat.iter().zip(&self.b).map(|(z, b)| *z + *b * s).collect()
    }
}

/// Decomposes `sqrt(n) p_hat` along the piece `offset + l.p`.
pub fn direction<T: Real>(l: &[T], offset: T, rf: &ReducedForm<T>) -> Result<DirectionData<T>> {
    if l.len() != rf.dim() {
        return Err(Error::Dimension(format!(
            "piece has {} coefficients, p_hat has {}",
            l.len(),
            rf.dim()
        )));
    }
    let sl = rf.sigma_hat().mul_vec(l);
    let var_s = dot(l, &sl);
    if !(var_s > T::zero()) {
        return Err(Error::ZeroVariance(format!("l S l' = {var_s}")));
    }
    let sqrt_n = rf.sqrt_n();
    let b: Vec<T> = sl.iter().map(|x| *x / var_s).collect();
    let s_obs = sqrt_n * (offset + dot(l, rf.p_hat()));
    let z_stat = rf
        .p_hat()
        .iter()
        .zip(&b)
        .map(|(p, bi)| sqrt_n * *p - *bi * s_obs)
        .collect();
    Ok(DirectionData {
        b,
        z_stat,
        s_obs,
        var_s,
    })
}

/// Range of the statistic consistent with an event, plus the slack of the
/// rows that do not involve it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditioningWindow<T = f64> {
    pub v_minus: T,
    pub v_plus: T,
    /// Smallest slack among rows with zero coefficient on the statistic; `+inf` if none.
    pub v_zero: T,
}

impl<T: Real> ConditioningWindow<T> {
    pub fn unbounded() -> Self {
        ConditioningWindow {
            v_minus: T::neg_infinity(),
            v_plus: T::infinity(),
            v_zero: T::infinity(),
        }
    }

    /// Whether `s` satisfies the event exactly.
    pub fn admits(&self, s: T) -> bool {
        self.v_zero >= T::zero() && s >= self.v_minus && s <= self.v_plus
    }

    /// Confirms the observed statistic lies in the window up to rounding and
    /// returns it clamped into `[v_minus, v_plus]`.
    pub fn check_realized(&self, s_obs: T, var_s: T) -> Result<T> {
        let tol = T::lit(100.0) * T::rel_tol() * (T::one() + var_s.sqrt() + s_obs.abs());
        if self.v_zero < -tol || s_obs < self.v_minus - tol || s_obs > self.v_plus + tol {
            return Err(Error::EventNotRealized(format!(
                "statistic {s_obs} against window [{}, {}] with zero-row slack {}",
                self.v_minus, self.v_plus, self.v_zero
            )));
        }
        Ok(s_obs.max(self.v_minus).min(self.v_plus))
    }
}

/// Window on `s` implied by `{A p <= c}` along `dd`, for sample size `n`.
pub fn truncation_bounds<T: Real>(poly: &Polyhedron<T>, dd: &DirectionData<T>, n: usize) -> ConditioningWindow<T> {
    let a = poly.a().mul_vec(&dd.b);
    let az = poly.a().mul_vec(&dd.z_stat);
    let sqrt_n = T::from_usize(n).expect("sample size").sqrt();
    let tau = T::rel_tol() * (T::one() + norm_inf(&a));
    let mut w = ConditioningWindow::<T>::unbounded();
    for k in 0..poly.rows() {
        let r = sqrt_n * poly.c()[k] - az[k];
        if a[k] < -tau {
            w.v_minus = w.v_minus.max(r / a[k]);
        } else if a[k] > tau {
            w.v_plus = w.v_plus.min(r / a[k]);
        } else {
            w.v_zero = w.v_zero.min(r);
        }
    }
    w
}
