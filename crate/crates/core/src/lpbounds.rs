//! Bounds characterized by linear programs over a latent distribution,
//! converted to affine max/min families by enumerating dual vertices.
//!
//! For `W(d) = A_d q` with `p = B q`, `q >= 0`, `1'q = 1`, write
//! `B~ = [B; 1']` and `p~ = (p, 1)`. Then
//! `L(d) = max { -p~'lambda : B~'lambda >= -A_d' }` and
//! `U(d) = min { p~'lambda : B~'lambda >= A_d' }`, so each dual vertex
//! `lambda = (lambda1, lambda0)` is one affine piece.

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, solve_linear, Matrix};
use crate::model::{BoundsSpec, Piece};

/// Default cap on the number of active sets examined.
pub const DEFAULT_ENUM_CAP: u128 = 2_000_000;
/// Feasibility and deduplication tolerance.
pub const VERTEX_TOL: f64 = 1e-9;

/// Latent-variable linear system. `a` holds one objective row per option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentLp {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
}

impl LatentLp {
    pub fn d_q(&self) -> usize {
        self.a.first().map(Vec::len).unwrap_or(0)
    }

    pub fn d_p(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let dq = self.d_q();
        if self.a.is_empty() || dq == 0 {
            return Err(Error::InvalidArgument(
                "latent system needs at least one objective row and one latent type".into(),
            ));
        }
        if self.a.iter().chain(&self.b).any(|r| r.len() != dq) {
            return Err(Error::Dimension(format!("every row of A and B must have {dq} entries")));
        }
        if self.a.iter().chain(&self.b).flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("latent system has a non-finite entry".into()));
        }
        Ok(())
    }

    /// Indices of `B~` rows forming a basis of its row space, simplex row
    /// (index `d_p`) first.
    fn independent_rows(&self) -> Vec<usize> {
        let dq = self.d_q();
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut keep = Vec::new();
        let ones = vec![1.0; dq];
        let order = std::iter::once(self.d_p()).chain(0..self.d_p());
        for i in order {
            let row = if i == self.d_p() { &ones } else { &self.b[i] };
            let mut r = row.clone();
            for e in &basis {
                let t = dot(&r, e);
                for (x, y) in r.iter_mut().zip(e) {
                    *x -= t * y;
                }
            }
            let norm = dot(&r, &r).sqrt();
            if norm > 1e-9 * (1.0 + dot(row, row).sqrt()) {
                basis.push(r.iter().map(|x| x / norm).collect());
                keep.push(i);
            }
        }
        keep.sort_unstable();
        keep
    }
}

/// Vertices of `{lambda : B~'lambda >= r}`, one entry per row of `B~`
/// (`d_p` coefficients followed by the simplex coefficient). Rows of `B~`
/// that are linearly dependent on the others carry zero.
pub fn dual_vertices(lp: &LatentLp, r: &[f64], cap: u128) -> Result<Vec<Vec<f64>>> {
    lp.validate()?;
    let dq = lp.d_q();
    if r.len() != dq {
        return Err(Error::Dimension(format!(
            "objective has {} entries, expected {dq}",
            r.len()
        )));
    }
    let rows = lp.independent_rows();
    let k = rows.len();
    let subsets = binomial(dq as u128, k as u128);
    if subsets > cap {
        return Err(Error::LpEnumCap { subsets, cap });
    }
    let dp = lp.d_p();
    // Constraint i reads sum_m bt[m][i] lambda_m >= r_i over the kept rows m.
    let col = |i: usize| -> Vec<f64> { rows.iter().map(|&m| if m == dp { 1.0 } else { lp.b[m][i] }).collect() };
    let cols: Vec<Vec<f64>> = (0..dq).map(col).collect();
    let active: Vec<Vec<usize>> = (0..dq).combinations(k).collect();
    let found: Vec<Vec<f64>> = active
        .par_iter()
        .filter_map(|s| {
            let data: Vec<f64> = s.iter().flat_map(|&i| cols[i].iter().copied()).collect();
            let m = Matrix::from_row_major(k, k, data).ok()?;
            let rhs: Vec<f64> = s.iter().map(|&i| r[i]).collect();
            let lam = solve_linear(&m, &rhs, 1e-10)?;
            let feasible = (0..dq).all(|i| dot(&cols[i], &lam) >= r[i] - VERTEX_TOL * (1.0 + r[i].abs()));
            feasible.then_some(lam)
        })
        .collect();
    let mut verts: Vec<Vec<f64>> = Vec::new();
    for v in found {
        if !verts
            .iter()
            .any(|w| v.iter().zip(w).all(|(a, b)| (a - b).abs() <= VERTEX_TOL))
        {
            verts.push(v);
        }
    }
    let full: Vec<Vec<f64>> = verts
        .into_iter()
        .map(|v| {
            let mut out = vec![0.0; dp + 1];
            for (val, &m) in v.iter().zip(&rows) {
                out[m] = clean(*val);
            }
            out
        })
        .collect();
    let mut full = full;
    full.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(full)
}

/// Rounds values within rounding noise of an integer and clears negative zero.
fn clean(x: f64) -> f64 {
    let r = x.round();
    let y = if (x - r).abs() <= 1e-12 { r } else { x };
    if y == 0.0 {
        0.0
    } else {
        y
    }
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Vertex counts per option and side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LpSummary {
    pub lower_vertices: Vec<usize>,
    pub upper_vertices: Vec<usize>,
    pub lower_pieces: Vec<usize>,
    pub upper_pieces: Vec<usize>,
}

/// Merges pieces with equal vectors, keeping the binding constant.
fn merge(pieces: Vec<Piece<f64>>, lower: bool) -> Vec<Piece<f64>> {
    let mut out: Vec<Piece<f64>> = Vec::new();
    for pc in pieces {
        match out
            .iter_mut()
            .find(|q| q.v.iter().zip(&pc.v).all(|(a, b)| (a - b).abs() <= VERTEX_TOL))
        {
            Some(q) => q.c = if lower { q.c.max(pc.c) } else { q.c.min(pc.c) },
            None => out.push(pc),
        }
    }
    out
}

/// Affine families for every objective row of every system. All systems
/// must share `d_p`.
pub fn lp_to_bounds_spec(lps: &[LatentLp], cap: u128) -> Result<(BoundsSpec<f64>, LpSummary)> {
    let dp = lps
        .first()
        .ok_or_else(|| Error::InvalidArgument("no latent systems given".into()))?
        .d_p();
    if lps.iter().any(|lp| lp.d_p() != dp) {
        return Err(Error::Dimension("latent systems disagree on d_p".into()));
    }
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut summary = LpSummary {
        lower_vertices: Vec::new(),
        upper_vertices: Vec::new(),
        lower_pieces: Vec::new(),
        upper_pieces: Vec::new(),
    };
    for lp in lps {
        lp.validate()?;
        for obj in &lp.a {
            let neg: Vec<f64> = obj.iter().map(|x| -x).collect();
            let lv = dual_vertices(lp, &neg, cap)?;
            let uv = dual_vertices(lp, obj, cap)?;
            summary.lower_vertices.push(lv.len());
            summary.upper_vertices.push(uv.len());
            let lp_pieces = merge(
                lv.iter()
                    .map(|l| Piece::new(clean(-l[dp]), l[..dp].iter().map(|x| clean(-x)).collect()))
                    .collect(),
                true,
            );
            let up_pieces = merge(uv.iter().map(|l| Piece::new(l[dp], l[..dp].to_vec())).collect(), false);
            summary.lower_pieces.push(lp_pieces.len());
            summary.upper_pieces.push(up_pieces.len());
            lower.push(lp_pieces);
            upper.push(up_pieces);
        }
    }
    let spec = BoundsSpec::with_constant_pieces(lower.len(), dp, lower, upper)?;
    Ok((spec, summary))
}

/// Sixteen response types `(D(0), D(1), Y(0), Y(1))` (bit order high to low)
/// mapped to the six free static coordinates, with the ATE as objective.
pub fn balke_pearl_latent() -> LatentLp {
    let mut b = vec![vec![0.0; 16]; 6];
    let mut a = vec![0.0; 16];
    for t in 0..16usize {
        let (d0, d1, y0, y1) = ((t >> 3) & 1, (t >> 2) & 1, (t >> 1) & 1, t & 1);
        a[t] = y1 as f64 - y0 as f64;
        for z in 0..2u8 {
            let d = if z == 0 { d0 } else { d1 };
            let y = if d == 0 { y0 } else { y1 };
            if let Some(k) = crate::catalog::static_coord(y as u8, d as u8, z) {
                b[k][t] = 1.0;
            }
        }
    }
    LatentLp { a: vec![a], b }
}

/// Per-option systems reproducing the binary intersection bounds on
/// `E[Y(d)]`: types pair one observed cell per stratum with a value of
/// `Y(d)` that agrees with every stratum observing treatment `d`.
pub fn manski_binary_latent() -> Vec<LatentLp> {
    const CELLS: [(u8, u8); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];
    (0..2u8)
        .map(|d| {
            let mut types = Vec::new();
            for o0 in CELLS {
                for o1 in CELLS {
                    for ys in 0..2u8 {
                        if [o0, o1].iter().all(|&(y, dd)| dd != d || y == ys) {
                            types.push((o0, o1, ys));
                        }
                    }
                }
            }
            let mut b = vec![vec![0.0; types.len()]; 6];
            for (t, (o0, o1, _)) in types.iter().enumerate() {
                for (z, (y, dd)) in [(0u8, o0), (1u8, o1)] {
                    if let Some(k) = crate::catalog::static_coord(*y, *dd, z) {
                        b[k][t] = 1.0;
                    }
                }
            }
            let a = types.iter().map(|t| t.2 as f64).collect();
            LatentLp { a: vec![a], b }
        })
        .collect()
}
