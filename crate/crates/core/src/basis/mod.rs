//! Orthonormal dictionaries on (0, 1) and expansion of scalar functions over them.
//!
//! Every dictionary is orthonormal in L₂((0,1), dμ). For a weighted measure
//! dμ = g(t)dt the shipped kinds divide the Lebesgue-orthonormal system by
//! √g(t), which keeps orthonormality and inflates the sup-norm constant by
//! 1/√g₁.

mod measure;
mod quadrature;

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use measure::{DensityMeasure, MeasureKind, MeasureSpec, TrigDensity};
pub use quadrature::{gauss_legendre, Quadrature, QuadratureSpec};

use crate::error::{Result, VcmError};

/// Relative slack allowed when comparing a grid sup-norm with the declared constant.
const SUP_NORM_SLACK: f64 = 1e-9;
/// Gram tolerance for user-supplied dictionaries.
const CUSTOM_GRAM_TOL: f64 = 1e-6;
const RESIDUAL_GRID: usize = 2048;
const CONSTRUCTION_GRID: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DictionaryKind {
    /// Constant, then √2·cos(2πkt), √2·sin(2πkt) for k = 1, 2, …
    Fourier,
    /// Periodic Haar system ordered by level: j = 2^h + i + 1.
    HaarWavelet,
    /// Legendre polynomials shifted to [0,1] and normalized.
    Polynomial,
    Custom,
}

type CustomEval = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;

/// Serialized dictionary descriptor: `{kind, l, measure, c_phi}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionarySpec {
    pub kind: DictionaryKind,
    pub l: usize,
    #[serde(default)]
    pub measure: MeasureSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_phi: Option<f64>,
}

/// An l-term orthonormal dictionary φ = (φ₁, …, φ_l) with sup-norm constant c_φ,
/// i.e. Σ_j φ_j(t)² ≤ c_φ²·l on [0,1].
#[derive(Clone)]
pub struct Dictionary {
    kind: DictionaryKind,
    l: usize,
    measure: DensityMeasure,
    c_phi: f64,
    custom: Option<CustomEval>,
}

impl fmt::Debug for Dictionary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dictionary")
            .field("kind", &self.kind)
            .field("l", &self.l)
            .field("measure", &self.measure.kind())
            .field("c_phi", &self.c_phi)
            .finish()
    }
}

/// Approximation constants: ‖ρ^{(l)}‖_∞ ≤ b·l^{-γ} and ‖ρ^{(l)}‖_{L₂(dμ)} ≤ b₁·l^{-(γ+1/2)}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxSpec {
    pub b: f64,
    pub b1: f64,
    pub gamma: f64,
    /// Set when the constants were fitted from residual diagnostics.
    #[serde(default)]
    pub empirical: bool,
}

impl ApproxSpec {
    /// b = b₁ = 0 is accepted and encodes an exactly representable target.
    pub fn new(b: f64, b1: f64, gamma: f64) -> Result<Self> {
        let s = Self {
            b,
            b1,
            gamma,
            empirical: false,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b >= 0.0 && self.b.is_finite())
            || !(self.b1 >= 0.0 && self.b1.is_finite())
            || !(self.gamma > 0.0 && self.gamma.is_finite())
        {
            return Err(VcmError::InvariantViolation(format!(
                "approximation constants need b, b1 >= 0 and gamma > 0 (got {self:?})"
            )));
        }
        Ok(())
    }

    /// Fit (b, γ) by log-log regression of the sup residual against l, then
    /// b and b₁ as the smallest constants covering every sampled l.
    pub fn fit_from_residuals(
        f: impl Fn(f64) -> f64,
        kind: DictionaryKind,
        measure: &DensityMeasure,
        ls: &[usize],
    ) -> Result<Self> {
        if ls.len() < 2 {
            return Err(VcmError::Domain(
                "fitting approximation constants needs at least two values of l".into(),
            ));
        }
        let mut pts = Vec::with_capacity(ls.len());
        for &l in ls {
            let dict = Dictionary::new(kind, l, measure.clone())?;
            let e = dict.expand_function(&f)?;
            pts.push((l as f64, e.residual_sup, e.residual_l2));
        }
        let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1.max(f64::MIN_POSITIVE).ln()).collect();
        let fit = crate::stats::linear_fit(&xs, &ys)?;
        let gamma = (-fit.slope).max(1e-6);
        let b = pts
            .iter()
            .map(|(l, sup, _)| sup * l.powf(gamma))
            .fold(0.0, f64::max);
        let b1 = pts
            .iter()
            .map(|(l, _, l2)| l2 * l.powf(gamma + 0.5))
            .fold(0.0, f64::max);
        Ok(Self {
            b,
            b1,
            gamma,
            empirical: true,
        })
    }
}

/// Coefficients of a function over a dictionary plus residual diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub coeffs: Vec<f64>,
    /// max over a uniform grid of |f − Σ c_j φ_j|
    pub residual_sup: f64,
    /// L₂(dμ) norm of the residual
    pub residual_l2: f64,
}

/// Gram matrix of a dictionary with its deviation from the identity.
#[derive(Debug, Clone)]
pub struct GramReport {
    pub matrix: DMatrix<f64>,
    pub max_off_diagonal: f64,
    pub max_deviation: f64,
}

impl Dictionary {
    /// Build a shipped dictionary with its exact default c_φ.
    pub fn new(kind: DictionaryKind, l: usize, measure: DensityMeasure) -> Result<Self> {
        if kind == DictionaryKind::Custom {
            return Err(VcmError::Domain(
                "custom dictionaries are built with Dictionary::custom".into(),
            ));
        }
        let c_phi = default_c_phi(kind, l, &measure)?;
        Self::with_c_phi(kind, l, measure, c_phi)
    }

    /// Build a shipped dictionary with a declared c_φ; rejects declarations the grid check contradicts.
    pub fn with_c_phi(
        kind: DictionaryKind,
        l: usize,
        measure: DensityMeasure,
        c_phi: f64,
    ) -> Result<Self> {
        if l == 0 {
            return Err(VcmError::Domain("dictionary size l must be positive".into()));
        }
        if !(c_phi > 0.0 && c_phi.is_finite()) {
            return Err(VcmError::Domain(format!("c_phi must be positive, got {c_phi}")));
        }
        let measure = if kind == DictionaryKind::HaarWavelet {
            let spec = measure.quadrature().spec();
            measure.with_quadrature(spec.aligned_to(l))?
        } else {
            measure
        };
        let dict = Self {
            kind,
            l,
            measure,
            c_phi,
            custom: None,
        };
        dict.sup_norm_constant(CONSTRUCTION_GRID)?;
        Ok(dict)
    }

    /// A user-supplied dictionary. `eval(t, out)` must write φ₁(t)…φ_l(t) into `out`.
    /// The Gram matrix is checked against the identity at tolerance 1e-6.
    pub fn custom(
        l: usize,
        measure: DensityMeasure,
        c_phi: f64,
        eval: impl Fn(f64, &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        if l == 0 {
            return Err(VcmError::Domain("dictionary size l must be positive".into()));
        }
        let dict = Self {
            kind: DictionaryKind::Custom,
            l,
            measure,
            c_phi,
            custom: Some(Arc::new(eval)),
        };
        let gram = dict.gram_matrix()?;
        if gram.max_deviation > CUSTOM_GRAM_TOL {
            return Err(VcmError::InvariantViolation(format!(
                "custom dictionary is not orthonormal: max |G - I| = {:.3e}",
                gram.max_deviation
            )));
        }
        dict.sup_norm_constant(CONSTRUCTION_GRID)?;
        Ok(dict)
    }

    pub fn from_spec(spec: &DictionarySpec) -> Result<Self> {
        let measure = DensityMeasure::from_spec(&spec.measure)?;
        match (spec.kind, spec.c_phi) {
            (DictionaryKind::Custom, _) => Err(VcmError::Domain(
                "custom dictionaries cannot be loaded from a descriptor".into(),
            )),
            (kind, Some(c)) => Self::with_c_phi(kind, spec.l, measure, c),
            (kind, None) => Self::new(kind, spec.l, measure),
        }
    }

    pub fn to_spec(&self) -> DictionarySpec {
        DictionarySpec {
            kind: self.kind,
            l: self.l,
            measure: self.measure.to_spec(),
            c_phi: Some(self.c_phi),
        }
    }

    pub fn fourier(l: usize) -> Result<Self> {
        Self::new(DictionaryKind::Fourier, l, DensityMeasure::lebesgue())
    }

    /// Same kind and measure with a different size.
    pub fn resized(&self, l: usize) -> Result<Self> {
        Self::new(self.kind, l, self.measure.clone())
    }

    pub fn kind(&self) -> DictionaryKind {
        self.kind
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn c_phi(&self) -> f64 {
        self.c_phi
    }

    pub fn measure(&self) -> &DensityMeasure {
        &self.measure
    }

    /// φ(t) as a fresh vector.
    pub fn eval_basis(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.l];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    /// Write φ(t) into `out` (length l).
    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        if !(0.0..=1.0).contains(&t) {
            return Err(VcmError::Domain(format!("t = {t} outside [0,1]")));
        }
        if out.len() != self.l {
            return Err(VcmError::Shape(format!(
                "output buffer has length {}, dictionary has {}",
                out.len(),
                self.l
            )));
        }
        if let Some(eval) = &self.custom {
            eval(t, out);
            return Ok(());
        }
        match self.kind {
            DictionaryKind::Fourier => fourier_raw(t, out),
            DictionaryKind::HaarWavelet => haar_raw(t, out),
            DictionaryKind::Polynomial => legendre_raw(t, out),
            DictionaryKind::Custom => unreachable!("custom evaluator is always present"),
        }
        if !self.measure.is_lebesgue() {
            let g = self.measure.g(t);
            if !(g > 0.0) {
                return Err(VcmError::Measure(format!("g({t}) = {g} is not positive")));
            }
            let s = 1.0 / g.sqrt();
            out.iter_mut().for_each(|v| *v *= s);
        }
        Ok(())
    }

    /// Values of φ at every quadrature node, row per node.
    fn table_at_nodes(&self) -> Result<DMatrix<f64>> {
        let q = self.measure.quadrature();
        let mut table = DMatrix::zeros(q.len(), self.l);
        let mut buf = vec![0.0; self.l];
        for (r, &t) in q.nodes().iter().enumerate() {
            self.eval_into(t, &mut buf)?;
            for (j, v) in buf.iter().enumerate() {
                table[(r, j)] = *v;
            }
        }
        Ok(table)
    }

    /// Quadrature Gram matrix ⟨φ_i, φ_j⟩_{L₂(dμ)}.
    pub fn gram_matrix(&self) -> Result<GramReport> {
        let q = self.measure.quadrature();
        if q.len() < 2 * self.l {
            return Err(VcmError::Domain(format!(
                "quadrature has {} nodes, need at least {} for l = {}",
                q.len(),
                2 * self.l,
                self.l
            )));
        }
        let table = self.table_at_nodes()?;
        let mut weighted = table.clone();
        for (r, (&t, &w)) in q.nodes().iter().zip(q.weights()).enumerate() {
            let s = w * self.measure.g(t);
            weighted.row_mut(r).iter_mut().for_each(|v| *v *= s);
        }
        let matrix = table.transpose() * weighted;
        let mut max_off_diagonal: f64 = 0.0;
        let mut max_deviation: f64 = 0.0;
        for i in 0..self.l {
            for j in 0..self.l {
                let target = if i == j { 1.0 } else { 0.0 };
                let dev = (matrix[(i, j)] - target).abs();
                max_deviation = max_deviation.max(dev);
                if i != j {
                    max_off_diagonal = max_off_diagonal.max(dev);
                }
            }
        }
        Ok(GramReport {
            matrix,
            max_off_diagonal,
            max_deviation,
        })
    }

    /// max over t_k = k/grid_size of √(Σ_j φ_j(t_k)² / l); errors if it exceeds c_φ.
    pub fn sup_norm_constant(&self, grid_size: usize) -> Result<f64> {
        if grid_size < 16 {
            return Err(VcmError::Domain(format!(
                "sup-norm grid needs at least 16 points, got {grid_size}"
            )));
        }
        let mut buf = vec![0.0; self.l];
        let mut worst: f64 = 0.0;
        for k in 0..=grid_size {
            self.eval_into(k as f64 / grid_size as f64, &mut buf)?;
            worst = worst.max(buf.iter().map(|v| v * v).sum::<f64>());
        }
        let c = (worst / self.l as f64).sqrt();
        if c > self.c_phi * (1.0 + SUP_NORM_SLACK) {
            return Err(VcmError::InvariantViolation(format!(
                "sup-norm constant {c} exceeds declared c_phi {}",
                self.c_phi
            )));
        }
        Ok(c)
    }

    /// Expansion coefficients a_j = ⟨f, φ_j⟩_{L₂(dμ)} and residual diagnostics.
    pub fn expand_function(&self, f: impl Fn(f64) -> f64) -> Result<Expansion> {
        self.expand_function_on_grid(f, RESIDUAL_GRID)
    }

    pub fn expand_function_on_grid(
        &self,
        f: impl Fn(f64) -> f64,
        grid_size: usize,
    ) -> Result<Expansion> {
        let q = self.measure.quadrature();
        let table = self.table_at_nodes()?;
        let mut coeffs = vec![0.0; self.l];
        let fvals: Vec<f64> = q.nodes().iter().map(|&t| f(t)).collect();
        for (r, (&t, &w)) in q.nodes().iter().zip(q.weights()).enumerate() {
            let s = w * self.measure.g(t) * fvals[r];
            for (j, c) in coeffs.iter_mut().enumerate() {
                *c += s * table[(r, j)];
            }
        }
        let mut l2 = 0.0;
        for (r, (&t, &w)) in q.nodes().iter().zip(q.weights()).enumerate() {
            let approx: f64 = (0..self.l).map(|j| coeffs[j] * table[(r, j)]).sum();
            let e = fvals[r] - approx;
            l2 += w * self.measure.g(t) * e * e;
        }
        let mut buf = vec![0.0; self.l];
        let mut sup: f64 = 0.0;
        for k in 0..=grid_size {
            let t = k as f64 / grid_size as f64;
            self.eval_into(t, &mut buf)?;
            let approx: f64 = coeffs.iter().zip(&buf).map(|(c, p)| c * p).sum();
            sup = sup.max((f(t) - approx).abs());
        }
        Ok(Expansion {
            coeffs,
            residual_sup: sup,
            residual_l2: l2.sqrt(),
        })
    }
}

fn default_c_phi(kind: DictionaryKind, l: usize, measure: &DensityMeasure) -> Result<f64> {
    if l == 0 {
        return Err(VcmError::Domain("dictionary size l must be positive".into()));
    }
    let base = match kind {
        DictionaryKind::Fourier if l == 1 => 1.0,
        DictionaryKind::Fourier => SQRT_2,
        DictionaryKind::HaarWavelet => (l.next_power_of_two() as f64 / l as f64).sqrt(),
        DictionaryKind::Polynomial => (l as f64).sqrt(),
        DictionaryKind::Custom => {
            return Err(VcmError::Domain(
                "custom dictionaries must declare c_phi".into(),
            ))
        }
    };
    Ok(base / measure.g1().sqrt())
}

fn fourier_raw(t: f64, out: &mut [f64]) {
    out[0] = 1.0;
    for j in 1..out.len() {
        let k = j.div_ceil(2) as f64;
        let arg = 2.0 * PI * k * t;
        out[j] = if j % 2 == 1 {
            SQRT_2 * arg.cos()
        } else {
            SQRT_2 * arg.sin()
        };
    }
}

fn haar_raw(t: f64, out: &mut [f64]) {
    out[0] = 1.0;
    for j in 1..out.len() {
        let h = usize::BITS - 1 - j.leading_zeros();
        let i = j - (1usize << h);
        let halves = 1usize << (h + 1);
        // half-interval index, with t = 1 assigned to the last one
        let k = ((t * halves as f64).floor() as usize).min(halves - 1);
        out[j] = if k / 2 == i {
            let scale = (2f64).powf(h as f64 / 2.0);
            if k % 2 == 0 {
                scale
            } else {
                -scale
            }
        } else {
            0.0
        };
    }
}

fn legendre_raw(t: f64, out: &mut [f64]) {
    let x = 2.0 * t - 1.0;
    let mut p_prev = 1.0;
    let mut p = x;
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = 3f64.sqrt() * x;
    }
    for k in 1..out.len().saturating_sub(1) {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = next;
        out[k + 1] = (2.0 * kf + 3.0).sqrt() * p;
    }
}
