//! Conditional, projection, hybrid and conventional intervals for the
//! identified set of the selected option.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::condition::{direction, truncation_bounds, ConditioningWindow};
use crate::error::{Error, Result};
use crate::gauss::{
    max_stat_samples, normal_quantile, order_statistic, solve_location, solve_location_hybrid, Side, EDGE_TOL,
};
use crate::linalg::Matrix;
use crate::model::{BoundsSpec, Piece, Polyhedron, ReducedForm};
use crate::select::SelectionOutcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiKind {
    Conditional,
    Projection,
    Hybrid,
    Conventional,
}

impl CiKind {
    pub const ALL: [CiKind; 4] = [
        CiKind::Conventional,
        CiKind::Conditional,
        CiKind::Projection,
        CiKind::Hybrid,
    ];

    pub fn label(self) -> &'static str {
        match self {
            CiKind::Conditional => "conditional",
            CiKind::Projection => "projection",
            CiKind::Hybrid => "hybrid",
            CiKind::Conventional => "conventional",
        }
    }
}

/// Truncated-normal target for the hybrid upper endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpperTarget {
    /// `(alpha2 - beta) / (1 - beta)`, the mirror image of the lower side.
    #[default]
    Symmetric,
    /// `alpha2 / (1 - beta)`.
    Literal,
}

/// Per-side record of how an endpoint was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideDiagnostics {
    /// Index of the selected piece within the option.
    pub piece: usize,
    /// `sqrt(n)` times the bound estimate.
    pub s_obs: f64,
    pub var_s: f64,
    #[serde(with = "crate::serde_ext::extended_pair")]
    pub window: (f64, f64),
    #[serde(with = "crate::serde_ext::extended")]
    pub zero_row_slack: f64,
    #[serde(default, with = "crate::serde_ext::extended_opt")]
    pub critical_value: Option<f64>,
    #[serde(default)]
    pub target: Option<f64>,
    #[serde(default)]
    pub iterations: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub d_hat: usize,
    pub lower: SideDiagnostics,
    pub upper: SideDiagnostics,
    #[serde(default)]
    pub draws: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Per-side hybrid levels `(beta_L, beta_U)`.
    #[serde(default)]
    pub beta_sides: Option<(f64, f64)>,
    #[serde(default)]
    pub upper_target: Option<UpperTarget>,
    /// Projection interval at the per-side hybrid levels.
    #[serde(default, with = "crate::serde_ext::extended_opt_pair")]
    pub projection_at_beta: Option<(f64, f64)>,
    /// Lower endpoint exceeds the upper one.
    pub crossed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    #[serde(with = "crate::serde_ext::extended")]
    pub lower: f64,
    #[serde(with = "crate::serde_ext::extended")]
    pub upper: f64,
    pub kind: CiKind,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Overall hybrid level; absent for other kinds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub diagnostics: Diagnostics,
}

impl ConfidenceInterval {
    /// Whether `x` lies in the interval; a crossed interval contains nothing.
    pub fn contains(&self, x: f64) -> bool {
        !self.diagnostics.crossed && self.lower <= x && x <= self.upper
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Monte Carlo draws of the studentized maximum, cached by covariance.
#[derive(Debug)]
pub struct CriticalValues {
    draws: usize,
    seed: u64,
    cache: RwLock<HashMap<Vec<u64>, Arc<Vec<f64>>>>,
}

impl CriticalValues {
    pub fn new(draws: usize, seed: u64) -> Self {
        CriticalValues {
            draws,
            seed,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Sorted samples for `cov`, computed once per distinct covariance.
    pub fn samples(&self, cov: &Matrix<f64>) -> Result<Arc<Vec<f64>>> {
        let mut key: Vec<u64> = vec![cov.nrows() as u64];
        key.extend(cov.as_slice().iter().map(|x| x.to_bits()));
        if let Some(s) = self.cache.read().expect("critical value cache poisoned").get(&key) {
            return Ok(Arc::clone(s));
        }
        let s = Arc::new(max_stat_samples(cov, self.draws, self.seed)?);
        let mut w = self.cache.write().expect("critical value cache poisoned");
        Ok(Arc::clone(w.entry(key).or_insert(s)))
    }

    pub fn quantile(&self, cov: &Matrix<f64>, level: f64) -> Result<f64> {
        order_statistic(&self.samples(cov)?, level)
    }

    pub fn len(&self) -> usize {
        self.cache.read().expect("critical value cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_alphas(alpha1: f64, alpha2: f64) -> Result<()> {
    for a in [alpha1, alpha2] {
        if !(a > 0.0 && a < 0.5) {
            return Err(Error::InvalidArgument(format!("tail level {a} is not in (0, 0.5)")));
        }
    }
    Ok(())
}

fn check_inputs(spec: &BoundsSpec<f64>, rf: &ReducedForm<f64>, sel: &SelectionOutcome<f64>) -> Result<()> {
    if spec.dim_p() != rf.dim() {
        return Err(Error::Dimension(format!(
            "spec has dim_p {}, reduced form has {}",
            spec.dim_p(),
            rf.dim()
        )));
    }
    if sel.d_hat >= spec.num_options()
        || sel.j_l_hat >= spec.lower(sel.d_hat).len()
        || sel.j_u_hat >= spec.upper(sel.d_hat).len()
    {
        return Err(Error::InvalidArgument("selection does not index into the spec".into()));
    }
    Ok(())
}

/// Everything about one side that does not depend on the interval kind.
struct SideSetup {
    piece: usize,
    s: f64,
    var_s: f64,
    window: ConditioningWindow<f64>,
}

impl SideSetup {
    fn new(pc: &Piece<f64>, piece: usize, poly: &Polyhedron<f64>, rf: &ReducedForm<f64>) -> Result<Self> {
        match direction(&pc.v, pc.c, rf) {
            Ok(dd) => {
                let window = truncation_bounds(poly, &dd, rf.n());
                let s = window.check_realized(dd.s_obs, dd.var_s)?;
                Ok(SideSetup {
                    piece,
                    s,
                    var_s: dd.var_s,
                    window,
                })
            }
            // A deterministic statistic carries no sampling uncertainty.
            Err(Error::ZeroVariance(_)) => Ok(SideSetup {
                piece,
                s: rf.sqrt_n() * pc.eval(rf.p_hat()),
                var_s: 0.0,
                window: ConditioningWindow::unbounded(),
            }),
            Err(e) => Err(e),
        }
    }

    fn degenerate_variance(&self) -> bool {
        !(self.var_s > 0.0)
    }

    /// Window too narrow for a location solve.
    fn collapsed(&self) -> bool {
        self.window.v_plus - self.window.v_minus <= EDGE_TOL * self.var_s.sqrt()
    }

    fn diagnostics(&self) -> SideDiagnostics {
        SideDiagnostics {
            piece: self.piece,
            s_obs: self.s,
            var_s: self.var_s,
            window: (self.window.v_minus, self.window.v_plus),
            zero_row_slack: self.window.v_zero,
            critical_value: None,
            target: None,
            iterations: 0,
        }
    }
}

struct Setup {
    lower: SideSetup,
    upper: SideSetup,
    sqrt_n: f64,
}

fn setup(spec: &BoundsSpec<f64>, rf: &ReducedForm<f64>, sel: &SelectionOutcome<f64>) -> Result<Setup> {
    check_inputs(spec, rf, sel)?;
    let d = sel.d_hat;
    Ok(Setup {
        lower: SideSetup::new(&spec.lower(d)[sel.j_l_hat], sel.j_l_hat, &sel.poly_l, rf)?,
        upper: SideSetup::new(&spec.upper(d)[sel.j_u_hat], sel.j_u_hat, &sel.poly_u, rf)?,
        sqrt_n: rf.sqrt_n(),
    })
}

fn finish(
    lower: f64,
    upper: f64,
    kind: CiKind,
    alpha1: f64,
    alpha2: f64,
    beta: Option<f64>,
    diagnostics: Diagnostics,
) -> ConfidenceInterval {
    let mut diagnostics = diagnostics;
    diagnostics.crossed = lower > upper;
    ConfidenceInterval {
        lower,
        upper,
        kind,
        alpha1,
        alpha2,
        beta,
        diagnostics,
    }
}

fn base_diagnostics(sel: &SelectionOutcome<f64>, st: &Setup) -> Diagnostics {
    Diagnostics {
        d_hat: sel.d_hat,
        lower: st.lower.diagnostics(),
        upper: st.upper.diagnostics(),
        draws: None,
        seed: None,
        beta_sides: None,
        upper_target: None,
        projection_at_beta: None,
        crossed: false,
    }
}

/// Endpoints that treat the selected pieces as if chosen in advance.
pub fn conventional_ci(
    spec: &BoundsSpec<f64>,
    rf: &ReducedForm<f64>,
    sel: &SelectionOutcome<f64>,
    alpha1: f64,
    alpha2: f64,
) -> Result<ConfidenceInterval> {
    check_alphas(alpha1, alpha2)?;
    let st = setup(spec, rf, sel)?;
    let lower = (st.lower.s - normal_quantile(1.0 - alpha1) * st.lower.var_s.sqrt()) / st.sqrt_n;
    let upper = (st.upper.s + normal_quantile(1.0 - alpha2) * st.upper.var_s.sqrt()) / st.sqrt_n;
    let diag = base_diagnostics(sel, &st);
    Ok(finish(lower, upper, CiKind::Conventional, alpha1, alpha2, None, diag))
}

/// Quantile-unbiased endpoints given the selection event.
pub fn conditional_ci(
    spec: &BoundsSpec<f64>,
    rf: &ReducedForm<f64>,
    sel: &SelectionOutcome<f64>,
    alpha1: f64,
    alpha2: f64,
) -> Result<ConfidenceInterval> {
    check_alphas(alpha1, alpha2)?;
    let st = setup(spec, rf, sel)?;
    let mut diag = base_diagnostics(sel, &st);
    let (lower, it_l) = conditional_endpoint(&st.lower, 1.0 - alpha1, f64::NEG_INFINITY)?;
    let (upper, it_u) = conditional_endpoint(&st.upper, alpha2, f64::INFINITY)?;
    diag.lower.target = Some(1.0 - alpha1);
    diag.upper.target = Some(alpha2);
    diag.lower.iterations = it_l;
    diag.upper.iterations = it_u;
    Ok(finish(
        lower / st.sqrt_n,
        upper / st.sqrt_n,
        CiKind::Conditional,
        alpha1,
        alpha2,
        None,
        diag,
    ))
}

/// Solve on the side's window; `collapsed_value` is the limit when the
/// window has no interior.
fn conditional_endpoint(side: &SideSetup, target: f64, collapsed_value: f64) -> Result<(f64, u32)> {
    if side.degenerate_variance() {
        return Ok((side.s, 0));
    }
    if side.collapsed() {
        return Ok((collapsed_value, 0));
    }
    let w = &side.window;
    let r = solve_location(side.s, target, side.var_s, w.v_minus, w.v_plus)?;
    Ok((r.mu, r.iterations))
}

/// Covariance of the studentizable pieces of one side, and the position of
/// the selected piece among them (`None` if it has zero variance).
fn stacked_cov<'a>(
    pieces: impl Iterator<Item = &'a Piece<f64>>,
    selected: usize,
    rf: &ReducedForm<f64>,
) -> (Option<Matrix<f64>>, bool) {
    let sigma = rf.sigma_hat();
    let scale = 1.0 + sigma.max_abs();
    let mut rows: Vec<&[f64]> = Vec::new();
    let mut selected_kept = false;
    for (i, pc) in pieces.enumerate() {
        if sigma.quad_form(&pc.v) > 1e-14 * scale {
            rows.push(&pc.v);
            selected_kept |= i == selected;
        }
    }
    if rows.is_empty() {
        (None, false)
    } else {
        (Some(sigma.congruence(&rows)), selected_kept)
    }
}

/// Studentized-max critical values for one side at the given levels.
fn side_critical(
    pieces: Vec<&Piece<f64>>,
    selected: usize,
    rf: &ReducedForm<f64>,
    cv: &CriticalValues,
    levels: &[f64],
) -> Result<Vec<Option<f64>>> {
    let (cov, kept) = stacked_cov(pieces.into_iter(), selected, rf);
    match cov {
        Some(cov) if kept => {
            let samples = cv.samples(&cov)?;
            levels.iter().map(|l| order_statistic(&samples, *l).map(Some)).collect()
        }
        _ => Ok(vec![None; levels.len()]),
    }
}

fn lower_critical(
    spec: &BoundsSpec<f64>,
    rf: &ReducedForm<f64>,
    sel: &SelectionOutcome<f64>,
    cv: &CriticalValues,
    levels: &[f64],
) -> Result<Vec<Option<f64>>> {
    let row = spec.lower_row(sel.d_hat, sel.j_l_hat);
    side_critical(spec.stacked_lower().collect(), row, rf, cv, levels)
}

fn upper_critical(
    spec: &BoundsSpec<f64>,
    rf: &ReducedForm<f64>,
    sel: &SelectionOutcome<f64>,
    cv: &CriticalValues,
    levels: &[f64],
) -> Result<Vec<Option<f64>>> {
    let row = spec.upper_row(sel.d_hat, sel.j_u_hat);
    side_critical(spec.stacked_upper().collect(), row, rf, cv, levels)
}

/// Simultaneous bands over every piece of every option, valid whatever the
/// selection rule.
pub fn projection_ci(
    spec: &BoundsSpec<f64>,
    rf: &ReducedForm<f64>,
    sel: &SelectionOutcome<f64>,
    alpha1: f64,
    alpha2: f64,
    cv: &CriticalValues,
) -> Result<ConfidenceInterval> {
    check_alphas(alpha1, alpha2)?;
    check_inputs(spec, rf, sel)?;
    let st = Setup {
        lower: plain_side(&spec.lower(sel.d_hat)[sel.j_l_hat], sel.j_l_hat, rf),
        upper: plain_side(&spec.upper(sel.d_hat)[sel.j_u_hat], sel.j_u_hat, rf),
        sqrt_n: rf.sqrt_n(),
    };
    let cl = lower_critical(spec, rf, sel, cv, &[1.0 - alpha1])?[0];
    let cu = upper_critical(spec, rf, sel, cv, &[1.0 - alpha2])?[0];
    let lower = (st.lower.s - cl.unwrap_or(0.0) * st.lower.var_s.sqrt()) / st.sqrt_n;
    let upper = (st.upper.s + cu.unwrap_or(0.0) * st.upper.var_s.sqrt()) / st.sqrt_n;
    let mut diag = base_diagnostics(sel, &st);
    diag.lower.critical_value = cl;
    diag.upper.critical_value = cu;
    diag.draws = Some(cv.draws());
    diag.seed = Some(cv.seed());
    Ok(finish(lower, upper, CiKind::Projection, alpha1, alpha2, None, diag))
}

/// Side data without conditioning, for the projection interval.
fn plain_side(pc: &Piece<f64>, piece: usize, rf: &ReducedForm<f64>) -> SideSetup {
    let var_s = rf.sigma_hat().quad_form(&pc.v).max(0.0);
    SideSetup {
        piece,
        s: rf.sqrt_n() * pc.eval(rf.p_hat()),
        var_s,
        window: ConditioningWindow::unbounded(),
    }
}

/// Conditional endpoints with the window capped by the projection band at
/// level `beta`, so the interval never leaves the projection interval at
/// that level.
#[allow(clippy::too_many_arguments)]
pub fn hybrid_ci(
    spec: &BoundsSpec<f64>,
    rf: &ReducedForm<f64>,
    sel: &SelectionOutcome<f64>,
    alpha1: f64,
    alpha2: f64,
    beta_frac: f64,
    upper_target: UpperTarget,
    cv: &CriticalValues,
) -> Result<ConfidenceInterval> {
    check_alphas(alpha1, alpha2)?;
    if !(beta_frac > 0.0 && beta_frac < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "beta fraction {beta_frac} must lie in (0, 0.5) so that beta < alpha on each side"
        )));
    }
    let st = setup(spec, rf, sel)?;
    let (beta_l, beta_u) = (beta_frac * 2.0 * alpha1, beta_frac * 2.0 * alpha2);
    let cl = lower_critical(spec, rf, sel, cv, &[1.0 - beta_l])?[0];
    let cu = upper_critical(spec, rf, sel, cv, &[1.0 - beta_u])?[0];
    let off_l = cl.unwrap_or(0.0) * st.lower.var_s.sqrt();
    let off_u = cu.unwrap_or(0.0) * st.upper.var_s.sqrt();
    let proj = (st.lower.s - off_l, st.upper.s + off_u);

    let target_l = (1.0 - alpha1) / (1.0 - beta_l);
    let target_u = match upper_target {
        UpperTarget::Symmetric => (alpha2 - beta_u) / (1.0 - beta_u),
        UpperTarget::Literal => alpha2 / (1.0 - beta_u),
    };
    let (lower, it_l) = hybrid_endpoint(&st.lower, target_l, off_l, Side::Lower, proj.0)?;
    let (upper, it_u) = hybrid_endpoint(&st.upper, target_u, off_u, Side::Upper, proj.1)?;
    debug_assert!(lower >= proj.0 && upper <= proj.1);

    let mut diag = base_diagnostics(sel, &st);
    diag.lower.critical_value = cl;
    diag.upper.critical_value = cu;
    diag.lower.target = Some(target_l);
    diag.upper.target = Some(target_u);
    diag.lower.iterations = it_l;
    diag.upper.iterations = it_u;
    diag.draws = Some(cv.draws());
    diag.seed = Some(cv.seed());
    diag.beta_sides = Some((beta_l, beta_u));
    diag.upper_target = Some(upper_target);
    diag.projection_at_beta = Some((proj.0 / st.sqrt_n, proj.1 / st.sqrt_n));
    let beta = Some(beta_frac * (alpha1 + alpha2));
    Ok(finish(
        lower.max(proj.0) / st.sqrt_n,
        upper.min(proj.1) / st.sqrt_n,
        CiKind::Hybrid,
        alpha1,
        alpha2,
        beta,
        diag,
    ))
}

fn hybrid_endpoint(side: &SideSetup, target: f64, offset: f64, which: Side, bound: f64) -> Result<(f64, u32)> {
    if side.degenerate_variance() {
        return Ok((side.s, 0));
    }
    if side.collapsed() {
        return Ok((bound, 0));
    }
    let w = &side.window;
    let r = solve_location_hybrid(side.s, target, side.var_s, w.v_minus, w.v_plus, offset, which)?;
    Ok((r.mu, r.iterations))
}
