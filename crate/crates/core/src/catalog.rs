//! Ready-made bound families and the cell-probability estimator for binary
//! instrument data.
//!
//! Static data use the six free coordinates
//! `(p100, p010, p110, p101, p011, p111)` with `p^{ydz} = P(Y=y, D=d | Z=z)`;
//! the `(y, d) = (0, 0)` cell of each stratum is the residual. Dynamic data
//! use the cells `(y2, d1, d2)` with fourteen free coordinates, stratum-major,
//! at offset `y2 + 2 d2 + 4 d1 - 1`; `(0, 0, 0)` is the residual.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Real};
use crate::model::{BoundsSpec, Piece, ReducedForm, DEFAULT_LAMBDA_BAR};

/// Free coordinate of the static cell `(y, d, z)`, or `None` for the residual cell.
pub fn static_coord(y: u8, d: u8, z: u8) -> Option<usize> {
    let cell = match (y, d) {
        (1, 0) => 0,
        (0, 1) => 1,
        (1, 1) => 2,
        _ => return None,
    };
    Some(3 * z as usize + cell)
}

/// Free coordinate of the dynamic cell `(y2, d1, d2, z)`, or `None` for the residual cell.
pub fn dynamic_coord(y2: u8, d1: u8, d2: u8, z: u8) -> Option<usize> {
    let k = (y2 + 2 * d2 + 4 * d1) as usize;
    (k > 0).then(|| 7 * z as usize + k - 1)
}

/// Treatment paths of the dynamic family, in option order.
pub const DYNAMIC_OPTIONS: [(u8, u8); 4] = [(1, 1), (1, 0), (0, 1), (0, 0)];

/// Affine expression `c + v.p` being assembled from cell probabilities.
struct Affine {
    c: f64,
    v: Vec<f64>,
}

impl Affine {
    fn constant(c: f64, dim: usize) -> Self {
        Affine { c, v: vec![0.0; dim] }
    }

    /// Adds `sign * p^{ydz}` for a static cell.
    fn cell(mut self, sign: f64, y: u8, d: u8, z: u8) -> Self {
        match static_coord(y, d, z) {
            Some(k) => self.v[k] += sign,
            None => {
                self.c += sign;
                for k in 3 * z as usize..3 * z as usize + 3 {
                    self.v[k] -= sign;
                }
            }
        }
        self
    }

    fn piece<T: Real>(self) -> Piece<T> {
        Piece::new(T::lit(self.c), self.v.into_iter().map(T::lit).collect())
    }
}

fn build<T: Real>(num_options: usize, dim_p: usize, lower: Vec<Vec<Affine>>, upper: Vec<Vec<Affine>>) -> BoundsSpec<T> {
    let conv = |fam: Vec<Vec<Affine>>| -> Vec<Vec<Piece<T>>> {
        fam.into_iter()
            .map(|ps| ps.into_iter().map(Affine::piece).collect())
            .collect()
    };
    BoundsSpec::new(num_options, dim_p, conv(lower), conv(upper)).expect("catalog families are valid")
}

/// Intersection bounds on `E[Y(d)]` for binary `Y` under mean independence:
/// `L(d) = max_z p^{1dz}`, `U(d) = min_z (1 - p^{0dz})`. Piece `j` is stratum `z = j`.
pub fn manski_binary_spec<T: Real>() -> BoundsSpec<T> {
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for d in 0..2u8 {
        lower.push((0..2u8).map(|z| Affine::constant(0.0, 6).cell(1.0, 1, d, z)).collect());
        upper.push((0..2u8).map(|z| Affine::constant(1.0, 6).cell(-1.0, 0, d, z)).collect());
    }
    build(2, 6, lower, upper)
}

/// Intersection bounds for an outcome supported on `[y_l, y_u]`.
///
/// Coordinates are `(m01, m00, m11, m10, P01, P00)` with
/// `m_dz = E[Y | D=d, Z=z] P(D=d | Z=z)` and `P0z = P(D=0 | Z=z)`.
pub fn manski_continuous_spec<T: Real>(y_l: f64, y_u: f64) -> Result<BoundsSpec<T>> {
    if !(y_l.is_finite() && y_u.is_finite() && y_l < y_u) {
        return Err(Error::InvalidArgument(format!(
            "outcome support [{y_l}, {y_u}] is invalid"
        )));
    }
    let fam = |y: f64| -> Vec<Vec<Piece<T>>> {
        let pc = |c: f64, v: [f64; 6]| Piece::new(T::lit(c), v.iter().map(|x| T::lit(*x)).collect());
        vec![
            vec![
                pc(y, [0.0, 1.0, 0.0, 0.0, 0.0, -y]),
                pc(y, [1.0, 0.0, 0.0, 0.0, -y, 0.0]),
            ],
            vec![
                pc(0.0, [0.0, 0.0, 0.0, 1.0, 0.0, y]),
                pc(0.0, [0.0, 0.0, 1.0, 0.0, y, 0.0]),
            ],
        ]
    };
    BoundsSpec::new(2, 6, fam(y_l), fam(y_u))
}

type Terms = &'static [(f64, [u8; 3])];

const BP_LOWER: [(f64, Terms); 8] = [
    (-1.0, &[(1.0, [1, 1, 1]), (1.0, [0, 0, 0])]),
    (-1.0, &[(1.0, [1, 1, 0]), (1.0, [0, 0, 1])]),
    (
        0.0,
        &[
            (1.0, [1, 1, 0]),
            (-1.0, [1, 1, 1]),
            (-1.0, [1, 0, 1]),
            (-1.0, [0, 1, 0]),
            (-1.0, [1, 0, 0]),
        ],
    ),
    (
        0.0,
        &[
            (1.0, [1, 1, 1]),
            (-1.0, [1, 1, 0]),
            (-1.0, [1, 0, 0]),
            (-1.0, [0, 1, 1]),
            (-1.0, [1, 0, 1]),
        ],
    ),
    (0.0, &[(-1.0, [0, 1, 1]), (-1.0, [1, 0, 1])]),
    (0.0, &[(-1.0, [0, 1, 0]), (-1.0, [1, 0, 0])]),
    (
        0.0,
        &[
            (1.0, [0, 0, 1]),
            (-1.0, [0, 1, 1]),
            (-1.0, [1, 0, 1]),
            (-1.0, [0, 1, 0]),
            (-1.0, [0, 0, 0]),
        ],
    ),
    (
        0.0,
        &[
            (1.0, [0, 0, 0]),
            (-1.0, [0, 1, 0]),
            (-1.0, [1, 0, 0]),
            (-1.0, [0, 1, 1]),
            (-1.0, [0, 0, 1]),
        ],
    ),
];

const BP_UPPER: [(f64, Terms); 8] = [
    (1.0, &[(-1.0, [0, 1, 1]), (-1.0, [1, 0, 0])]),
    (1.0, &[(-1.0, [0, 1, 0]), (-1.0, [1, 0, 1])]),
    (
        0.0,
        &[
            (-1.0, [0, 1, 0]),
            (1.0, [0, 1, 1]),
            (1.0, [0, 0, 1]),
            (1.0, [1, 1, 0]),
            (1.0, [0, 0, 0]),
        ],
    ),
    (
        0.0,
        &[
            (-1.0, [0, 1, 1]),
            (1.0, [1, 1, 1]),
            (1.0, [0, 0, 1]),
            (1.0, [0, 1, 0]),
            (1.0, [0, 0, 0]),
        ],
    ),
    (0.0, &[(1.0, [1, 1, 1]), (1.0, [0, 0, 1])]),
    (0.0, &[(1.0, [1, 1, 0]), (1.0, [0, 0, 0])]),
    (
        0.0,
        &[
            (-1.0, [1, 0, 1]),
            (1.0, [1, 1, 1]),
            (1.0, [0, 0, 1]),
            (1.0, [1, 1, 0]),
            (1.0, [1, 0, 0]),
        ],
    ),
    (
        0.0,
        &[
            (-1.0, [1, 0, 0]),
            (1.0, [1, 1, 0]),
            (1.0, [0, 0, 0]),
            (1.0, [1, 1, 1]),
            (1.0, [1, 0, 1]),
        ],
    ),
];

fn bp_family(table: &[(f64, Terms); 8]) -> Vec<Affine> {
    table
        .iter()
        .map(|(c, terms)| {
            terms
                .iter()
                .fold(Affine::constant(*c, 6), |a, (s, [y, d, z])| a.cell(*s, *y, *d, *z))
        })
        .collect()
}

/// Sharp bounds on the ATE `E[Y(1)] - E[Y(0)]` for binary outcome, treatment
/// and instrument under full independence. One option, eight pieces per side.
pub fn balke_pearl_ate_spec<T: Real>() -> BoundsSpec<T> {
    build(1, 6, vec![bp_family(&BP_LOWER)], vec![bp_family(&BP_UPPER)])
}

/// Bounds on `E[Y2(d)]` for the treatment paths in [`DYNAMIC_OPTIONS`]:
/// `L(d) = max_z P(Y2=1, D=d | z)`, `U(d) = min_z (1 - P(Y2=0, D=d | z))`.
pub fn dyntreat_spec<T: Real>() -> BoundsSpec<T> {
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for (d1, d2) in DYNAMIC_OPTIONS {
        let mut lo = Vec::new();
        let mut up = Vec::new();
        for z in 0..2u8 {
            let mut a = Affine::constant(0.0, 14);
            a.v[dynamic_coord(1, d1, d2, z).expect("y2 = 1 is free")] = 1.0;
            lo.push(a);
            let mut b = Affine::constant(1.0, 14);
            match dynamic_coord(0, d1, d2, z) {
                Some(k) => b.v[k] = -1.0,
                None => {
                    b.c = 0.0;
                    for k in 7 * z as usize..7 * z as usize + 7 {
                        b.v[k] = 1.0;
                    }
                }
            }
            up.push(b);
        }
        lower.push(lo);
        upper.push(up);
    }
    build(4, 14, lower, upper)
}

/// One static observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticRecord {
    pub y: u8,
    pub d: u8,
    pub z: u8,
}

/// One two-period observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicRecord {
    pub y1: u8,
    pub y2: u8,
    pub d1: u8,
    pub d2: u8,
    pub z: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinaryIvData {
    Static(Vec<StaticRecord>),
    Dynamic(Vec<DynamicRecord>),
}

impl BinaryIvData {
    pub fn len(&self) -> usize {
        match self {
            BinaryIvData::Static(r) => r.len(),
            BinaryIvData::Dynamic(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reads CSV with header `y,d,z` or `y1,y2,d1,d2,z`.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let cols: Vec<&str> = header.iter().map(String::as_str).collect();
        let dynamic = match cols.as_slice() {
            ["y", "d", "z"] => false,
            ["y1", "y2", "d1", "d2", "z"] => true,
            _ => {
                return Err(Error::DataSchema(format!(
                    "header must be y,d,z or y1,y2,d1,d2,z, found {}",
                    header.join(",")
                )))
            }
        };
        let mut stat = Vec::new();
        let mut dyna = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let vals = rec
                .iter()
                .zip(&cols)
                .map(|(f, c)| match f {
                    "0" => Ok(0u8),
                    "1" => Ok(1u8),
                    _ => Err(Error::DataSchema(format!("row {}: {c}={f:?} is not 0 or 1", line + 1))),
                })
                .collect::<Result<Vec<u8>>>()?;
            if dynamic {
                dyna.push(DynamicRecord {
                    y1: vals[0],
                    y2: vals[1],
                    d1: vals[2],
                    d2: vals[3],
                    z: vals[4],
                });
            } else {
                stat.push(StaticRecord {
                    y: vals[0],
                    d: vals[1],
                    z: vals[2],
                });
            }
        }
        Ok(if dynamic {
            BinaryIvData::Dynamic(dyna)
        } else {
            BinaryIvData::Static(stat)
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match self {
            BinaryIvData::Static(rs) => {
                out.push_str("y,d,z\n");
                for r in rs {
                    out.push_str(&format!("{},{},{}\n", r.y, r.d, r.z));
                }
            }
            BinaryIvData::Dynamic(rs) => {
                out.push_str("y1,y2,d1,d2,z\n");
                for r in rs {
                    out.push_str(&format!("{},{},{},{},{}\n", r.y1, r.y2, r.d1, r.d2, r.z));
                }
            }
        }
        out
    }
}

/// Settings for [`estimate_reduced_form`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateOptions {
    /// Pseudo-count added to every cell.
    pub smoothing: f64,
    /// Smallest admissible stratum size.
    pub min_stratum: usize,
    /// Eigenvalue band for the covariance estimate; infinite means PSD only.
    pub lambda_bar: f64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            smoothing: 0.0,
            min_stratum: 5,
            lambda_bar: DEFAULT_LAMBDA_BAR,
        }
    }
}

/// Cell proportions per stratum and the multinomial covariance of
/// `sqrt(n)(p_hat - p)` restricted to the free coordinates.
pub fn estimate_reduced_form(data: &BinaryIvData, opts: &EstimateOptions) -> Result<ReducedForm<f64>> {
    if !(opts.smoothing >= 0.0) || !opts.smoothing.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "smoothing {} must be nonnegative",
            opts.smoothing
        )));
    }
    let (cells, counts) = match data {
        BinaryIvData::Static(rs) => {
            let mut c = [[0usize; 4]; 2];
            for r in rs {
                check_binary(&[r.y, r.d, r.z])?;
                c[r.z as usize][(r.y + 2 * r.d) as usize] += 1;
            }
            (4usize, c.iter().map(|s| s.to_vec()).collect::<Vec<_>>())
        }
        BinaryIvData::Dynamic(rs) => {
            let mut c = [[0usize; 8]; 2];
            for r in rs {
                check_binary(&[r.y1, r.y2, r.d1, r.d2, r.z])?;
                c[r.z as usize][(r.y2 + 2 * r.d2 + 4 * r.d1) as usize] += 1;
            }
            (8usize, c.iter().map(|s| s.to_vec()).collect::<Vec<_>>())
        }
    };
    let n: usize = counts.iter().map(|s| s.iter().sum::<usize>()).sum();
    for (z, s) in counts.iter().enumerate() {
        let nz: usize = s.iter().sum();
        if nz < opts.min_stratum.max(1) {
            return Err(Error::StratumMin {
                z: z as u8,
                count: nz,
                min: opts.min_stratum,
            });
        }
    }
    let free = cells - 1;
    let dim = 2 * free;
    let mut p_hat = vec![0.0; dim];
    let mut sigma = Matrix::zeros(dim, dim);
    for (z, s) in counts.iter().enumerate() {
        let nz: usize = s.iter().sum();
        let q = nz as f64 / n as f64;
        let den = nz as f64 + cells as f64 * opts.smoothing;
        // Cell k of the stratum sits at free offset k - 1; cell 0 is the residual.
        let pi: Vec<f64> = (1..cells).map(|k| (s[k] as f64 + opts.smoothing) / den).collect();
        let base = z * free;
        for a in 0..free {
            p_hat[base + a] = pi[a];
            for b in 0..free {
                let diag = if a == b { pi[a] } else { 0.0 };
                sigma[(base + a, base + b)] = (diag - pi[a] * pi[b]) / q;
            }
        }
    }
    ReducedForm::with_lambda_bar(n, p_hat, sigma, opts.lambda_bar)
}

fn check_binary(vals: &[u8]) -> Result<()> {
    if vals.iter().all(|v| *v <= 1) {
        Ok(())
    } else {
        Err(Error::DataSchema(format!("record {vals:?} has a non-binary entry")))
    }
}
