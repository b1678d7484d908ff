//! Selection rules and the polyhedra that certify their outcome.
//!
//! Each rule returns a [`SelectionOutcome`]: the chosen option, the attaining
//! piece indices at that option, the auxiliary conditioning vectors and one
//! polyhedron per side. The lower-side polyhedron describes
//! `{d_hat = d, j_L(d) = j, gamma_L = g}` and the upper-side one the analogue
//! for `U`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm_inf, sub, Real};
use crate::model::{
    argmax, argmin, push_lower_argmax_rows, push_upper_argmin_rows, BoundsSpec, Piece, Polyhedron, ReducedForm,
    UndominatedSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Undominated,
    Weighted,
    Cms,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SelectionOutcome<T = f64> {
    pub rule: RuleKind,
    pub d_hat: usize,
    pub j_l_hat: usize,
    pub j_u_hat: usize,
    /// Conditioning indices for the lower side; empty when vacuous.
    pub gamma_l: Vec<i64>,
    pub gamma_u: Vec<i64>,
    pub poly_l: Polyhedron<T>,
    pub poly_u: Polyhedron<T>,
    /// Perturbation draws of the quasi-Bayesian rule, part of its conditioning event.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cms_draws: Option<Vec<Vec<T>>>,
}

impl<T: Real> SelectionOutcome<T> {
    /// Fails unless `p_hat` satisfies both polyhedra up to rounding.
    fn certified(self, p_hat: &[T]) -> Result<Self> {
        for (side, poly) in [("lower", &self.poly_l), ("upper", &self.poly_u)] {
            let tol = T::lit(100.0) * T::rel_tol() * (T::one() + norm_inf(poly.c()) + poly.a().max_abs());
            let v = poly.max_violation(p_hat);
            if v > tol {
                return Err(Error::EventNotRealized(format!(
                    "{side} polyhedron violated by {v} at the estimate"
                )));
            }
        }
        Ok(self)
    }
}

fn check_dim<T: Real>(spec: &BoundsSpec<T>, rf: &ReducedForm<T>) -> Result<()> {
    if spec.dim_p() != rf.dim() {
        return Err(Error::Dimension(format!(
            "spec has dim_p {}, reduced form has {}",
            spec.dim_p(),
            rf.dim()
        )));
    }
    Ok(())
}

fn indices(js: impl Iterator<Item = usize>) -> Vec<i64> {
    js.map(|j| j as i64).collect()
}

/// `d_hat = argmax_d {w_l L(d) + w_u U(d)}` with the conditioning prescribed
/// for each of the three weight cases.
pub fn rule_weighted<T: Real>(
    spec: &BoundsSpec<T>,
    rf: &ReducedForm<T>,
    w_l: T,
    w_u: T,
) -> Result<SelectionOutcome<T>> {
    check_dim(spec, rf)?;
    let ok = |w: T| w.is_finite() && w >= T::zero();
    if !ok(w_l) || !ok(w_u) || (w_l == T::zero() && w_u == T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "weights ({w_l}, {w_u}) must be nonnegative, finite and not both zero"
        )));
    }
    let top = w_l.max(w_u);
    let (wl, wu) = (w_l / top, w_u / top);
    let est = spec.evaluate(rf.p_hat())?;
    let t = spec.num_options();
    let dim = spec.dim_p();
    let (d_hat, _) = argmax(est.options.iter().map(|o| wl * o.l_hat + wu * o.u_hat));
    let ob = est.options[d_hat];
    let (poly_l, poly_u, gamma_l, gamma_u);
    if wu == T::zero() {
        let sel = &spec.lower(d_hat)[ob.j_l_hat];
        let mut base = Polyhedron::empty(dim);
        for dp in 0..t {
            for (j, pc) in spec.lower(dp).iter().enumerate() {
                if (dp, j) != (d_hat, ob.j_l_hat) {
                    base.push(
                        &sub(&pc.v, &sel.v),
                        sel.c - pc.c,
                        format!("max lower d={d_hat} j={} vs d'={dp} j'={j}", ob.j_l_hat),
                    );
                }
            }
        }
        let mut up = base.clone();
        push_upper_argmin_rows(&mut up, spec, d_hat, ob.j_u_hat);
        (poly_l, poly_u) = (base, up);
        gamma_l = Vec::new();
        gamma_u = vec![ob.j_l_hat as i64];
    } else if wl == T::zero() {
        let sel = &spec.upper(d_hat)[ob.j_u_hat];
        let mut base = Polyhedron::empty(dim);
        for dp in 0..t {
            let pc = &spec.upper(dp)[est.options[dp].j_u_hat];
            if dp != d_hat {
                base.push(
                    &sub(&pc.v, &sel.v),
                    sel.c - pc.c,
                    format!("max upper d={d_hat} vs d'={dp}"),
                );
            }
            push_upper_argmin_rows(&mut base, spec, dp, est.options[dp].j_u_hat);
        }
        let mut lo = base.clone();
        push_lower_argmax_rows(&mut lo, spec, d_hat, ob.j_l_hat);
        (poly_l, poly_u) = (lo, base);
        gamma_l = indices(est.options.iter().map(|o| o.j_u_hat));
        gamma_u = gamma_l.clone();
    } else {
        let combo = |d: usize| -> Piece<T> {
            let l = &spec.lower(d)[est.options[d].j_l_hat];
            let u = &spec.upper(d)[est.options[d].j_u_hat];
            Piece::new(
                wl * l.c + wu * u.c,
                l.v.iter().zip(&u.v).map(|(a, b)| wl * *a + wu * *b).collect(),
            )
        };
        let sel = combo(d_hat);
        let mut base = Polyhedron::empty(dim);
        for dp in 0..t {
            if dp != d_hat {
                let pc = combo(dp);
                base.push(
                    &sub(&pc.v, &sel.v),
                    sel.c - pc.c,
                    format!("max weighted d={d_hat} vs d'={dp}"),
                );
            }
            push_lower_argmax_rows(&mut base, spec, dp, est.options[dp].j_l_hat);
            push_upper_argmin_rows(&mut base, spec, dp, est.options[dp].j_u_hat);
        }
        (poly_l, poly_u) = (base.clone(), base);
        gamma_l = indices(
            est.options
                .iter()
                .map(|o| o.j_l_hat)
                .chain(est.options.iter().map(|o| o.j_u_hat)),
        );
        gamma_u = gamma_l.clone();
    }
    SelectionOutcome {
        rule: RuleKind::Weighted,
        d_hat,
        j_l_hat: ob.j_l_hat,
        j_u_hat: ob.j_u_hat,
        gamma_l,
        gamma_u,
        poly_l,
        poly_u,
        cms_draws: None,
    }
    .certified(rf.p_hat())
}

/// Inference on a prespecified option: only the argmax/argmin rows.
pub fn fixed_target<T: Real>(spec: &BoundsSpec<T>, rf: &ReducedForm<T>, d_star: usize) -> Result<SelectionOutcome<T>> {
    check_dim(spec, rf)?;
    if d_star >= spec.num_options() {
        return Err(Error::InvalidArgument(format!(
            "option {d_star} out of range for {} options",
            spec.num_options()
        )));
    }
    let ob = spec.evaluate(rf.p_hat())?.options[d_star];
    let mut poly_l = Polyhedron::empty(spec.dim_p());
    push_lower_argmax_rows(&mut poly_l, spec, d_star, ob.j_l_hat);
    let mut poly_u = Polyhedron::empty(spec.dim_p());
    push_upper_argmin_rows(&mut poly_u, spec, d_star, ob.j_u_hat);
    SelectionOutcome {
        rule: RuleKind::Fixed,
        d_hat: d_star,
        j_l_hat: ob.j_l_hat,
        j_u_hat: ob.j_u_hat,
        gamma_l: Vec::new(),
        gamma_u: Vec::new(),
        poly_l,
        poly_u,
        cms_draws: None,
    }
    .certified(rf.p_hat())
}

/// One outcome per member of the estimated undominated set.
pub fn from_undominated<T: Real>(set: &UndominatedSet<T>) -> Vec<SelectionOutcome<T>> {
    set.members
        .iter()
        .map(|m| SelectionOutcome {
            rule: RuleKind::Undominated,
            d_hat: m.option,
            j_l_hat: m.j_lower,
            j_u_hat: m.j_upper,
            gamma_l: Vec::new(),
            gamma_u: Vec::new(),
            poly_l: m.poly_lower.clone(),
            poly_u: m.poly_upper.clone(),
            cms_draws: None,
        })
        .collect()
}

/// Quasi-Bayesian treatment choice between two options from intersection
/// bounds `b_L(p) <= ATE <= b_U(p)` given by the single-option `family`.
/// Draws `m` perturbations `N(0, sigma_hat)` from `rng`.
pub fn rule_cms<T: Real, R: Rng + ?Sized>(
    target: &BoundsSpec<T>,
    family: &BoundsSpec<T>,
    rf: &ReducedForm<T>,
    m: usize,
    rng: &mut R,
) -> Result<SelectionOutcome<T>> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    let f = rf.sigma_factor()?;
    let r = f.ncols();
    let eps = (0..m)
        .map(|_| {
            let xi: Vec<T> = (0..r)
                .map(|_| {
                    let x: f64 = StandardNormal.sample(rng);
                    T::lit(x)
                })
                .collect();
            f.mul_vec(&xi)
        })
        .collect();
    rule_cms_with_draws(target, family, rf, eps)
}

/// Per-draw quantities of the quasi-Bayesian rule at `p`.
struct CmsDraw {
    k_upper: usize,
    k_lower: usize,
    sign_lower: i64,
    sign_upper: i64,
}

fn cms_draw<T: Real>(family: &BoundsSpec<T>, x: &[T]) -> (CmsDraw, T, T) {
    let (k_upper, bu) = argmin(family.upper(0).iter().map(|pc| pc.eval(x)));
    let (k_lower, bl) = argmax(family.lower(0).iter().map(|pc| pc.eval(x)));
    let sign = |v: T| if v >= T::zero() { 1 } else { -1 };
    (
        CmsDraw {
            k_upper,
            k_lower,
            sign_lower: sign(bl),
            sign_upper: sign(bu),
        },
        bl,
        bu,
    )
}

/// [`rule_cms`] with given perturbation draws.
pub fn rule_cms_with_draws<T: Real>(
    target: &BoundsSpec<T>,
    family: &BoundsSpec<T>,
    rf: &ReducedForm<T>,
    eps: Vec<Vec<T>>,
) -> Result<SelectionOutcome<T>> {
    check_dim(target, rf)?;
    check_dim(family, rf)?;
    if target.num_options() != 2 || family.num_options() != 1 {
        return Err(Error::InvalidSpec(format!(
            "the quasi-Bayesian rule needs a two-option target and a one-option family, got {} and {}",
            target.num_options(),
            family.num_options()
        )));
    }
    if eps.is_empty() || eps.iter().any(|e| e.len() != rf.dim()) {
        return Err(Error::Dimension(
            "perturbation draws must be nonempty with length dim_p".into(),
        ));
    }
    let dim = rf.dim();
    let p_hat = rf.p_hat();
    let mut draws = Vec::with_capacity(eps.len());
    let mut total = T::zero();
    for e in &eps {
        let x: Vec<T> = p_hat.iter().zip(e).map(|(a, b)| *a + *b).collect();
        let (dr, bl, bu) = cms_draw(family, &x);
        total = total + bu.max(T::zero()) + bl.min(T::zero());
        draws.push(dr);
    }
    let d_hat = usize::from(total >= T::zero());
    let ups = family.upper(0);
    let los = family.lower(0);
    let mut base = Polyhedron::empty(dim);
    let mut g = vec![T::zero(); dim];
    let mut h = T::zero();
    for (i, (dr, e)) in draws.iter().zip(&eps).enumerate() {
        let ku = &ups[dr.k_upper];
        for (k, pc) in ups.iter().enumerate() {
            if k != dr.k_upper {
                let dv = sub(&pc.v, &ku.v);
                base.push(
                    &sub(&ku.v, &pc.v),
                    pc.c - ku.c + dot(&dv, e),
                    format!("draw {i} upper argmin k={k}"),
                );
            }
        }
        let kl = &los[dr.k_lower];
        for (k, pc) in los.iter().enumerate() {
            if k != dr.k_lower {
                let dv = sub(&kl.v, &pc.v);
                base.push(
                    &sub(&pc.v, &kl.v),
                    kl.c - pc.c + dot(&dv, e),
                    format!("draw {i} lower argmax k={k}"),
                );
            }
        }
        for (pc, s, name) in [(kl, dr.sign_lower, "lower"), (ku, dr.sign_upper, "upper")] {
            let val = pc.c + dot(&pc.v, e);
            if s < 0 {
                base.push(&pc.v, -val, format!("draw {i} {name} negative"));
            } else {
                let neg: Vec<T> = pc.v.iter().map(|x| -*x).collect();
                base.push(&neg, val, format!("draw {i} {name} nonnegative"));
            }
        }
        if dr.sign_upper > 0 {
            add_piece(&mut g, &mut h, ku, e);
        }
        if dr.sign_lower < 0 {
            add_piece(&mut g, &mut h, kl, e);
        }
    }
    if g.iter().any(|x| *x != T::zero()) {
        if d_hat == 1 {
            let neg: Vec<T> = g.iter().map(|x| -*x).collect();
            base.push(&neg, h, "average regret nonnegative".into());
        } else {
            base.push(&g, -h, "average regret negative".into());
        }
    }
    let ob = target.evaluate(p_hat)?.options[d_hat];
    let mut poly_l = base.clone();
    push_lower_argmax_rows(&mut poly_l, target, d_hat, ob.j_l_hat);
    let mut poly_u = base;
    push_upper_argmin_rows(&mut poly_u, target, d_hat, ob.j_u_hat);
    let gamma: Vec<i64> = draws
        .iter()
        .map(|d| d.k_upper as i64)
        .chain(draws.iter().map(|d| d.k_lower as i64))
        .chain(draws.iter().map(|d| d.sign_lower))
        .chain(draws.iter().map(|d| d.sign_upper))
        .collect();
    SelectionOutcome {
        rule: RuleKind::Cms,
        d_hat,
        j_l_hat: ob.j_l_hat,
        j_u_hat: ob.j_u_hat,
        gamma_l: gamma.clone(),
        gamma_u: gamma,
        poly_l,
        poly_u,
        cms_draws: Some(eps),
    }
    .certified(p_hat)
}

/// Accumulates `c + v.(p + e)` into `h + g.p`.
fn add_piece<T: Real>(g: &mut [T], h: &mut T, pc: &Piece<T>, e: &[T]) {
    for (gi, vi) in g.iter_mut().zip(&pc.v) {
        *gi = *gi + *vi;
    }
    *h = *h + pc.c + dot(&pc.v, e);
}
