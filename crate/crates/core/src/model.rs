//! Bound families, reduced-form estimates, polyhedral events and the
//! plug-in bound estimates built from them.
//!
//! Bound families are affine max/min families: `L(d) = max_j (c + v.p)` over
//! the lower pieces of option `d` and `U(d) = min_j (c + v.p)` over the upper
//! pieces. Argmax and argmin ties resolve to the lowest index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, psd_factor, sub, symmetric_eigen, Matrix, Real};

/// Default bound on the condition of the covariance estimate.
pub const DEFAULT_LAMBDA_BAR: f64 = 1e6;

/// One affine piece `c + v.p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Piece<T = f64> {
    pub c: T,
    pub v: Vec<T>,
}

impl<T: Real> Piece<T> {
    pub fn new(c: T, v: Vec<T>) -> Self {
        Piece { c, v }
    }

    pub fn eval(&self, p: &[T]) -> T {
        self.c + dot(&self.v, p)
    }

    pub fn is_constant(&self) -> bool {
        self.v.iter().all(|x| *x == T::zero())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct RawSpec<T> {
    num_options: usize,
    dim_p: usize,
    lower: Vec<Vec<Piece<T>>>,
    upper: Vec<Vec<Piece<T>>>,
}

/// Lower and upper affine families for every option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", try_from = "RawSpec<T>")]
pub struct BoundsSpec<T = f64> {
    num_options: usize,
    dim_p: usize,
    lower: Vec<Vec<Piece<T>>>,
    upper: Vec<Vec<Piece<T>>>,
}

impl<T: Real> TryFrom<RawSpec<T>> for BoundsSpec<T> {
    type Error = Error;
    fn try_from(r: RawSpec<T>) -> Result<Self> {
        BoundsSpec::build(r.num_options, r.dim_p, r.lower, r.upper, true)
    }
}

impl<T: Real> BoundsSpec<T> {
    /// Validated constructor. Every piece vector must be nonzero.
    pub fn new(num_options: usize, dim_p: usize, lower: Vec<Vec<Piece<T>>>, upper: Vec<Vec<Piece<T>>>) -> Result<Self> {
        Self::build(num_options, dim_p, lower, upper, false)
    }

    /// Like [`BoundsSpec::new`] but admits at most one constant piece per
    /// option and side. LP-derived families produce these.
    pub fn with_constant_pieces(
        num_options: usize,
        dim_p: usize,
        lower: Vec<Vec<Piece<T>>>,
        upper: Vec<Vec<Piece<T>>>,
    ) -> Result<Self> {
        Self::build(num_options, dim_p, lower, upper, true)
    }

    fn build(
        num_options: usize,
        dim_p: usize,
        lower: Vec<Vec<Piece<T>>>,
        upper: Vec<Vec<Piece<T>>>,
        allow_constant: bool,
    ) -> Result<Self> {
        if num_options == 0 {
            return Err(Error::InvalidSpec("num_options must be at least 1".into()));
        }
        for (side, fam) in [("lower", &lower), ("upper", &upper)] {
            if fam.len() != num_options {
                return Err(Error::InvalidSpec(format!(
                    "{side} has {} options, expected {num_options}",
                    fam.len()
                )));
            }
            for (d, pieces) in fam.iter().enumerate() {
                if pieces.is_empty() {
                    return Err(Error::InvalidSpec(format!("{side}[{d}] has no pieces")));
                }
                for (j, pc) in pieces.iter().enumerate() {
                    if pc.v.len() != dim_p {
                        return Err(Error::InvalidSpec(format!(
                            "{side}[{d}][{j}] has {} coefficients, expected {dim_p}",
                            pc.v.len()
                        )));
                    }
                    if !pc.c.is_finite() || pc.v.iter().any(|x| !x.is_finite()) {
                        return Err(Error::InvalidSpec(format!("{side}[{d}][{j}] is not finite")));
                    }
                    if !allow_constant && pc.is_constant() {
                        return Err(Error::InvalidSpec(format!("{side}[{d}][{j}] has a zero vector")));
                    }
                    if let Some(k) = pieces[..j].iter().position(|q| q.v == pc.v) {
                        return Err(Error::InvalidSpec(format!(
                            "{side}[{d}][{j}] repeats the vector of piece {k}"
                        )));
                    }
                }
            }
        }
        Ok(BoundsSpec {
            num_options,
            dim_p,
            lower,
            upper,
        })
    }

    pub fn num_options(&self) -> usize {
        self.num_options
    }

    pub fn dim_p(&self) -> usize {
        self.dim_p
    }

    pub fn lower(&self, d: usize) -> &[Piece<T>] {
        &self.lower[d]
    }

    pub fn upper(&self, d: usize) -> &[Piece<T>] {
        &self.upper[d]
    }

    /// True when every piece vector is nonzero.
    pub fn is_strict(&self) -> bool {
        self.lower
            .iter()
            .chain(&self.upper)
            .flatten()
            .all(|pc| !pc.is_constant())
    }

    /// Stacked row index of lower piece `(d, j)`.
    pub fn lower_row(&self, d: usize, j: usize) -> usize {
        self.lower[..d].iter().map(Vec::len).sum::<usize>() + j
    }

    pub fn upper_row(&self, d: usize, j: usize) -> usize {
        self.upper[..d].iter().map(Vec::len).sum::<usize>() + j
    }

    /// All lower pieces in stacked `(d, j)` order.
    pub fn stacked_lower(&self) -> impl Iterator<Item = &Piece<T>> {
        self.lower.iter().flatten()
    }

    pub fn stacked_upper(&self) -> impl Iterator<Item = &Piece<T>> {
        self.upper.iter().flatten()
    }

    /// Bound values and attaining indices at `p`.
    pub fn evaluate(&self, p: &[T]) -> Result<BoundEstimate<T>> {
        if p.len() != self.dim_p {
            return Err(Error::Dimension(format!(
                "p has length {}, spec expects {}",
                p.len(),
                self.dim_p
            )));
        }
        let options = (0..self.num_options)
            .map(|d| {
                let (j_l_hat, l_hat) = argmax(self.lower[d].iter().map(|pc| pc.eval(p)));
                let (j_u_hat, u_hat) = argmin(self.upper[d].iter().map(|pc| pc.eval(p)));
                OptionBounds {
                    l_hat,
                    j_l_hat,
                    u_hat,
                    j_u_hat,
                }
            })
            .collect();
        Ok(BoundEstimate { options })
    }
}

/// First index attaining the maximum.
pub fn argmax<T: Real>(values: impl Iterator<Item = T>) -> (usize, T) {
    let mut best = (0, T::neg_infinity());
    for (i, v) in values.enumerate() {
        if i == 0 || v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// First index attaining the minimum.
pub fn argmin<T: Real>(values: impl Iterator<Item = T>) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (i, v) in values.enumerate() {
        if i == 0 || v < best.1 {
            best = (i, v);
        }
    }
    best
}

/// Sample size, estimate of `p`, and covariance estimate of `sqrt(n)(p_hat - p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ReducedForm<T = f64> {
    n: usize,
    p_hat: Vec<T>,
    sigma_hat: Matrix<T>,
}

impl<T: Real> ReducedForm<T> {
    /// Validates with the default eigenvalue band `[1/1e6, 1e6]`.
    pub fn new(n: usize, p_hat: Vec<T>, sigma_hat: Matrix<T>) -> Result<Self> {
        Self::with_lambda_bar(n, p_hat, sigma_hat, DEFAULT_LAMBDA_BAR)
    }

    /// Eigenvalues of `sigma_hat` must lie in `[1/lambda_bar, lambda_bar]`.
    /// `lambda_bar = inf` only requires positive semidefiniteness.
    pub fn with_lambda_bar(n: usize, p_hat: Vec<T>, sigma_hat: Matrix<T>, lambda_bar: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidReducedForm("n must be positive".into()));
        }
        let k = p_hat.len();
        if sigma_hat.nrows() != k || sigma_hat.ncols() != k {
            return Err(Error::Dimension(format!(
                "sigma_hat is {}x{}, p_hat has length {k}",
                sigma_hat.nrows(),
                sigma_hat.ncols()
            )));
        }
        if p_hat.iter().chain(sigma_hat.as_slice()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidReducedForm("non-finite entry".into()));
        }
        if !sigma_hat.is_symmetric(T::rel_tol()) {
            return Err(Error::InvalidReducedForm("sigma_hat is not symmetric".into()));
        }
        let (values, _) = symmetric_eigen(&sigma_hat.to_f64());
        let (min, max) = if lambda_bar.is_finite() {
            (1.0 / lambda_bar, lambda_bar)
        } else {
            let tol = 1e-12 * (1.0 + sigma_hat.trace().as_f64().abs());
            (-tol, f64::INFINITY)
        };
        if let Some(&v) = values.iter().find(|&&v| v < min || v > max) {
            return Err(Error::Eigenvalue { value: v, min, max });
        }
        Ok(ReducedForm { n, p_hat, sigma_hat })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p_hat(&self) -> &[T] {
        &self.p_hat
    }

    pub fn sigma_hat(&self) -> &Matrix<T> {
        &self.sigma_hat
    }

    pub fn dim(&self) -> usize {
        self.p_hat.len()
    }

    pub fn sqrt_n(&self) -> T {
        T::from_usize(self.n).expect("sample size").sqrt()
    }

    /// Factor `F` with `F F' = sigma_hat`.
    pub fn sigma_factor(&self) -> Result<Matrix<T>> {
        Ok(Matrix::from_f64(&psd_factor(&self.sigma_hat.to_f64(), 1e-8)?))
    }
}

/// The event `{p : A p <= c}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Polyhedron<T = f64> {
    a: Matrix<T>,
    c: Vec<T>,
    row_labels: Vec<String>,
}

impl<T: Real> Polyhedron<T> {
    /// The full space (no rows).
    pub fn empty(dim: usize) -> Self {
        Polyhedron {
            a: Matrix::zeros(0, dim),
            c: Vec::new(),
            row_labels: Vec::new(),
        }
    }

    pub fn new(a: Matrix<T>, c: Vec<T>) -> Result<Self> {
        if a.nrows() != c.len() {
            return Err(Error::Dimension(format!("A has {} rows, c has {}", a.nrows(), c.len())));
        }
        let row_labels = vec![String::new(); c.len()];
        Ok(Polyhedron { a, c, row_labels })
    }

    pub fn push(&mut self, row: &[T], rhs: T, label: String) {
        self.a.push_row(row);
        self.c.push(rhs);
        self.row_labels.push(label);
    }

    pub fn extend(&mut self, other: &Polyhedron<T>) {
        for i in 0..other.rows() {
            self.push(other.a.row(i), other.c[i], other.row_labels[i].clone());
        }
    }

    pub fn a(&self) -> &Matrix<T> {
        &self.a
    }

    pub fn c(&self) -> &[T] {
        &self.c
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn rows(&self) -> usize {
        self.c.len()
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    /// Largest violation `max_k (A p - c)_k`, or `-inf` for no rows.
    pub fn max_violation(&self, p: &[T]) -> T {
        (0..self.rows()).fold(T::neg_infinity(), |m, k| m.max(dot(self.a.row(k), p) - self.c[k]))
    }

    pub fn contains(&self, p: &[T], tol: T) -> bool {
        self.max_violation(p) <= tol
    }
}

/// Estimated bounds of one option.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct OptionBounds<T = f64> {
    pub l_hat: T,
    pub j_l_hat: usize,
    pub u_hat: T,
    pub j_u_hat: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct BoundEstimate<T = f64> {
    pub options: Vec<OptionBounds<T>>,
}

impl<T: Real> BoundEstimate<T> {
    pub fn max_lower(&self) -> T {
        self.options.iter().fold(T::neg_infinity(), |m, o| m.max(o.l_hat))
    }
}

pub fn estimate_bounds<T: Real>(spec: &BoundsSpec<T>, rf: &ReducedForm<T>) -> Result<BoundEstimate<T>> {
    spec.evaluate(rf.p_hat())
}

/// Rows certifying that lower piece `j` attains `L(d)`: `(l_k - l_j) p <= c_j - c_k`.
pub fn push_lower_argmax_rows<T: Real>(poly: &mut Polyhedron<T>, spec: &BoundsSpec<T>, d: usize, j: usize) {
    let pieces = spec.lower(d);
    for (k, pk) in pieces.iter().enumerate() {
        if k != j {
            poly.push(
                &sub(&pk.v, &pieces[j].v),
                pieces[j].c - pk.c,
                format!("lower argmax d={d} j={j} k={k}"),
            );
        }
    }
}

/// Rows certifying that upper piece `j` attains `U(d)`: `(u_j - u_k) p <= c_k - c_j`.
pub fn push_upper_argmin_rows<T: Real>(poly: &mut Polyhedron<T>, spec: &BoundsSpec<T>, d: usize, j: usize) {
    let pieces = spec.upper(d);
    for (k, pk) in pieces.iter().enumerate() {
        if k != j {
            poly.push(
                &sub(&pieces[j].v, &pk.v),
                pk.c - pieces[j].c,
                format!("upper argmin d={d} j={j} k={k}"),
            );
        }
    }
}

/// Rows certifying `U(d) >= L(d')` for every `d'`:
/// `(l_{d',j'} - u_{d,j}) p <= c^u_{d,j} - c^l_{d',j'}`.
pub fn push_dominance_rows<T: Real>(poly: &mut Polyhedron<T>, spec: &BoundsSpec<T>, d: usize) {
    for dp in 0..spec.num_options() {
        for (jp, lo) in spec.lower(dp).iter().enumerate() {
            for (j, up) in spec.upper(d).iter().enumerate() {
                poly.push(
                    &sub(&lo.v, &up.v),
                    up.c - lo.c,
                    format!("undominated d={d} j={j} vs d'={dp} j'={jp}"),
                );
            }
        }
    }
}

/// One member of the estimated undominated set with its conditioning events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct UndominatedMember<T = f64> {
    pub option: usize,
    pub j_lower: usize,
    pub j_upper: usize,
    /// `{d in D, j_L(d) = j_lower}`.
    pub poly_lower: Polyhedron<T>,
    /// `{d in D, j_U(d) = j_upper}`.
    pub poly_upper: Polyhedron<T>,
}

impl<T: Real> UndominatedMember<T> {
    /// `{d in D, j_L(d) = j_lower, j_U(d) = j_upper}`.
    pub fn joint_event(&self, spec: &BoundsSpec<T>) -> Polyhedron<T> {
        let mut poly = self.poly_lower.clone();
        push_upper_argmin_rows(&mut poly, spec, self.option, self.j_upper);
        poly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct UndominatedSet<T = f64> {
    pub estimate: BoundEstimate<T>,
    pub members: Vec<UndominatedMember<T>>,
}

impl<T: Real> UndominatedSet<T> {
    pub fn options(&self) -> Vec<usize> {
        self.members.iter().map(|m| m.option).collect()
    }
}

/// The options whose estimated upper bound reaches every estimated lower bound.
pub fn undominated_set<T: Real>(spec: &BoundsSpec<T>, rf: &ReducedForm<T>) -> Result<UndominatedSet<T>> {
    let estimate = estimate_bounds(spec, rf)?;
    let top = estimate.max_lower();
    let members = (0..spec.num_options())
        .filter(|&d| estimate.options[d].u_hat >= top)
        .map(|d| {
            let ob = estimate.options[d];
            let mut base = Polyhedron::empty(spec.dim_p());
            push_dominance_rows(&mut base, spec, d);
            let mut poly_lower = base.clone();
            push_lower_argmax_rows(&mut poly_lower, spec, d, ob.j_l_hat);
            let mut poly_upper = base;
            push_upper_argmin_rows(&mut poly_upper, spec, d, ob.j_u_hat);
            UndominatedMember {
                option: d,
                j_lower: ob.j_l_hat,
                j_upper: ob.j_u_hat,
                poly_lower,
                poly_upper,
            }
        })
        .collect();
    Ok(UndominatedSet { estimate, members })
}
