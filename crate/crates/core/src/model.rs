//! Observations of the varying coefficient model Y = Wᵀf(t) + σξ, the
//! coordinate matrix A (f ≈ Aφ), and the rank-one design X = Wφ(t)ᵀ.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::basis::Dictionary;
use crate::error::{Result, VcmError};
use crate::linalg;

const NORM_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub w: Vec<f64>,
    pub t: f64,
    pub y: f64,
}

impl Observation {
    /// Rejects ‖w‖₂ > 1; see [`normalize_covariates`] for explicit rescaling.
    pub fn new(w: Vec<f64>, t: f64, y: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(VcmError::Domain(format!("t = {t} outside [0,1]")));
        }
        if !y.is_finite() || w.iter().any(|v| !v.is_finite()) {
            return Err(VcmError::Domain("non-finite observation".into()));
        }
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1.0 + NORM_SLACK {
            return Err(VcmError::Domain(format!(
                "covariate norm {norm} exceeds 1; rescale with normalize_covariates"
            )));
        }
        Ok(Self { w, t, y })
    }
}

/// Divide every covariate vector by the largest Euclidean norm so that all
/// norms are at most one. Returns the divisor (1 when nothing exceeded one).
pub fn normalize_covariates(rows: &mut [Vec<f64>]) -> f64 {
    let max = rows
        .iter()
        .map(|w| w.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let scale = max.max(1.0);
    if scale > 1.0 {
        for w in rows.iter_mut() {
            w.iter_mut().for_each(|v| *v /= scale);
        }
    }
    scale
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: Vec<Observation>,
    p: usize,
}

impl Dataset {
    pub fn new(observations: Vec<Observation>) -> Result<Self> {
        let first = observations
            .first()
            .ok_or_else(|| VcmError::Domain("dataset needs at least one observation".into()))?;
        let p = first.w.len();
        if p == 0 {
            return Err(VcmError::Shape("covariate dimension p must be positive".into()));
        }
        if let Some((i, o)) = observations.iter().enumerate().find(|(_, o)| o.w.len() != p) {
            return Err(VcmError::Shape(format!(
                "observation {i} has dimension {}, expected {p}",
                o.w.len()
            )));
        }
        Ok(Self { observations, p })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn responses(&self) -> impl Iterator<Item = f64> + '_ {
        self.observations.iter().map(|o| o.y)
    }

    /// CSV with header `t,y,w_1,…,w_p`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,y");
        for j in 1..=self.p {
            write!(out, ",w_{j}").unwrap();
        }
        out.push('\n');
        for o in &self.observations {
            write!(out, "{},{}", o.t, o.y).unwrap();
            for v in &o.w {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(VcmError::Parse {
            line: 1,
            message: "empty dataset file".into(),
        })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 3 || cols[0] != "t" || cols[1] != "y" {
            return Err(VcmError::Parse {
                line: 1,
                message: format!("expected header t,y,w_1,...,w_p, found '{header}'"),
            });
        }
        for (j, c) in cols[2..].iter().enumerate() {
            if *c != format!("w_{}", j + 1) {
                return Err(VcmError::Parse {
                    line: 1,
                    message: format!("column {} should be w_{}, found '{c}'", j + 3, j + 1),
                });
            }
        }
        let p = cols.len() - 2;
        let mut obs = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let vals = parse_row(line, lineno)?;
            if vals.len() != p + 2 {
                return Err(VcmError::Parse {
                    line: lineno,
                    message: format!("expected {} fields, found {}", p + 2, vals.len()),
                });
            }
            let o = Observation::new(vals[2..].to_vec(), vals[0], vals[1]).map_err(|e| {
                VcmError::Parse {
                    line: lineno,
                    message: e.to_string(),
                }
            })?;
            obs.push(o);
        }
        if obs.is_empty() {
            return Err(VcmError::Parse {
                line: 2,
                message: "dataset has no observations".into(),
            });
        }
        Dataset::new(obs)
    }
}

fn parse_row(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split(',')
        .map(|f| {
            f.trim().parse::<f64>().map_err(|e| VcmError::Parse {
                line: lineno,
                message: format!("'{}': {e}", f.trim()),
            })
        })
        .collect()
}

/// The p×l matrix of expansion coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateMatrix(DMatrix<f64>);

impl CoordinateMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(VcmError::InvariantViolation(
                "coordinate matrix has non-finite entries".into(),
            ));
        }
        Ok(Self(m))
    }

    pub fn zeros(p: usize, l: usize) -> Self {
        Self(DMatrix::zeros(p, l))
    }

    pub fn p(&self) -> usize {
        self.0.nrows()
    }

    pub fn l(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn nuclear_norm(&self) -> Result<f64> {
        linalg::nuclear_norm(&self.0)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn rank(&self, rel_tol: f64) -> Result<usize> {
        linalg::numerical_rank(&self.0, rel_tol)
    }

    /// p rows of l comma-separated values, no header.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.p() {
            let row: Vec<String> = (0..self.l()).map(|j| self.0[(i, j)].to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = parse_row(line, i + 1)?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(VcmError::Parse {
                        line: i + 1,
                        message: format!("expected {} columns, found {}", first.len(), row.len()),
                    });
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(VcmError::Parse {
                line: 1,
                message: "empty matrix".into(),
            });
        }
        let (p, l) = (rows.len(), rows[0].len());
        Self::new(DMatrix::from_fn(p, l, |i, j| rows[i][j]))
    }

    fn check_dict(&self, dict: &Dictionary) -> Result<()> {
        if self.l() != dict.l() {
            return Err(VcmError::Shape(format!(
                "coordinate matrix has {} columns, dictionary has l = {}",
                self.l(),
                dict.l()
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    rows: usize,
    cols: usize,
    data: Vec<Vec<f64>>,
}

impl Serialize for CoordinateMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixJson {
            rows: self.p(),
            cols: self.l(),
            data: self.0.row_iter().map(|r| r.iter().cloned().collect()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CoordinateMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let m = MatrixJson::deserialize(d)?;
        if m.data.len() != m.rows || m.data.iter().any(|r| r.len() != m.cols) {
            return Err(D::Error::custom(format!(
                "matrix data does not match dims {}x{}",
                m.rows, m.cols
            )));
        }
        CoordinateMatrix::new(DMatrix::from_fn(m.rows, m.cols, |i, j| m.data[i][j]))
            .map_err(D::Error::custom)
    }
}

/// An estimated (or true) coefficient function t ↦ Aφ(t).
#[derive(Debug, Clone)]
pub struct VcFunction {
    coeffs: CoordinateMatrix,
    dict: Dictionary,
}

impl VcFunction {
    pub fn new(coeffs: CoordinateMatrix, dict: Dictionary) -> Result<Self> {
        coeffs.check_dict(&dict)?;
        Ok(Self { coeffs, dict })
    }

    pub fn coeffs(&self) -> &CoordinateMatrix {
        &self.coeffs
    }

    pub fn dict(&self) -> &Dictionary {
        &self.dict
    }

    pub fn p(&self) -> usize {
        self.coeffs.p()
    }

    /// f̂(t) = Âφ(t).
    pub fn predict(&self, t: f64) -> Result<Vec<f64>> {
        let phi = self.dict.eval_basis(t)?;
        let a = self.coeffs.as_matrix();
        Ok((0..a.nrows())
            .map(|i| (0..a.ncols()).map(|j| a[(i, j)] * phi[j]).sum())
            .collect())
    }
}

fn check_obs(a: &CoordinateMatrix, w: &[f64], dict: &Dictionary) -> Result<()> {
    a.check_dict(dict)?;
    if w.len() != a.p() {
        return Err(VcmError::Shape(format!(
            "covariate has dimension {}, coordinate matrix has p = {}",
            w.len(),
            a.p()
        )));
    }
    Ok(())
}

/// wᵀAφ(t) = ⟨X, A⟩ for X = wφ(t)ᵀ, without forming X.
pub fn design_inner(a: &CoordinateMatrix, obs: &Observation, dict: &Dictionary) -> Result<f64> {
    check_obs(a, &obs.w, dict)?;
    let phi = dict.eval_basis(obs.t)?;
    Ok(bilinear(a.as_matrix(), &obs.w, &phi))
}

pub(crate) fn bilinear(a: &DMatrix<f64>, w: &[f64], phi: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (i, &wi) in w.iter().enumerate() {
        if wi == 0.0 {
            continue;
        }
        let row: f64 = (0..phi.len()).map(|j| a[(i, j)] * phi[j]).sum();
        acc += wi * row;
    }
    acc
}

/// y_i − ⟨X_i, A⟩ for every observation.
pub fn residuals(a: &CoordinateMatrix, data: &Dataset, dict: &Dictionary) -> Result<Vec<f64>> {
    if data.p() != a.p() {
        return Err(VcmError::Shape(format!(
            "dataset has p = {}, coordinate matrix has p = {}",
            data.p(),
            a.p()
        )));
    }
    let design = Design::new(data, dict)?;
    a.check_dict(dict)?;
    Ok((0..data.n())
        .map(|i| data.observations[i].y - design.inner(a.as_matrix(), i))
        .collect())
}

/// A dataset paired with the basis values φ(t_i), evaluated once per dictionary.
///
/// Covariates are kept in sparse form so that canonical designs cost O(l)
/// per observation.
#[derive(Debug, Clone)]
pub struct Design<'a> {
    data: &'a Dataset,
    l: usize,
    phi: Vec<f64>,
    support: Vec<Vec<(usize, f64)>>,
}

impl<'a> Design<'a> {
    pub fn new(data: &'a Dataset, dict: &Dictionary) -> Result<Self> {
        let l = dict.l();
        let mut phi = vec![0.0; data.n() * l];
        for (i, o) in data.observations.iter().enumerate() {
            dict.eval_into(o.t, &mut phi[i * l..(i + 1) * l])?;
        }
        let support = data
            .observations
            .iter()
            .map(|o| {
                o.w.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(k, v)| (k, *v))
                    .collect()
            })
            .collect();
        Ok(Self {
            data,
            l,
            phi,
            support,
        })
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn p(&self) -> usize {
        self.data.p()
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn phi(&self, i: usize) -> &[f64] {
        &self.phi[i * self.l..(i + 1) * self.l]
    }

    pub fn support(&self, i: usize) -> &[(usize, f64)] {
        &self.support[i]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.data.observations[i].y
    }

    /// ⟨X_i, A⟩.
    pub fn inner(&self, a: &DMatrix<f64>, i: usize) -> f64 {
        let phi = self.phi(i);
        let mut acc = 0.0;
        for &(k, wk) in self.support(i) {
            let row: f64 = (0..self.l).map(|j| a[(k, j)] * phi[j]).sum();
            acc += wk * row;
        }
        acc
    }

    /// m += c·X_i.
    pub fn add_scaled(&self, m: &mut DMatrix<f64>, i: usize, c: f64) {
        let phi = self.phi(i);
        for &(k, wk) in self.support(i) {
            let s = c * wk;
            for (j, p) in phi.iter().enumerate() {
                m[(k, j)] += s * p;
            }
        }
    }

    /// (1/n)Σ c_i X_i.
    pub fn weighted_sum(&self, coefs: impl Fn(usize) -> f64) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.p(), self.l);
        for i in 0..self.n() {
            self.add_scaled(&mut m, i, coefs(i));
        }
        m / self.n() as f64
    }
}
