//! Sampling measures μ on [0, 1] with density g bounded away from zero and infinity.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::quadrature::{Quadrature, QuadratureSpec};
use crate::error::{Result, VcmError};

const BOUNDS_GRID: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    Lebesgue,
    Weighted,
}

/// Trigonometric density g(t) = 1 + Σ_k cos_k·cos(2πkt) + sin_k·sin(2πkt).
///
/// Integrates to one exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigDensity {
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

impl TrigDensity {
    fn eval(&self, t: f64) -> f64 {
        let mut g = 1.0;
        for (k, c) in self.cos.iter().enumerate() {
            g += c * (2.0 * PI * (k + 1) as f64 * t).cos();
        }
        for (k, s) in self.sin.iter().enumerate() {
            g += s * (2.0 * PI * (k + 1) as f64 * t).sin();
        }
        g
    }
}

/// Serialized form of a measure: `{kind, g_table?, g_trig?, quadrature?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSpec {
    pub kind: MeasureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_table: Option<Vec<(f64, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_trig: Option<TrigDensity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<QuadratureSpec>,
}

impl Default for MeasureSpec {
    fn default() -> Self {
        Self {
            kind: MeasureKind::Lebesgue,
            g_table: None,
            g_trig: None,
            quadrature: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Density {
    Uniform,
    /// Linear interpolation through sorted knots, already normalized.
    Table { ts: Vec<f64>, gs: Vec<f64> },
    Trig(TrigDensity),
}

impl Density {
    fn eval(&self, t: f64) -> f64 {
        match self {
            Density::Uniform => 1.0,
            Density::Trig(d) => d.eval(t),
            Density::Table { ts, gs } => {
                if t <= ts[0] {
                    return gs[0];
                }
                let last = ts.len() - 1;
                if t >= ts[last] {
                    return gs[last];
                }
                let k = ts.partition_point(|&x| x <= t) - 1;
                let u = (t - ts[k]) / (ts[k + 1] - ts[k]);
                gs[k] + u * (gs[k + 1] - gs[k])
            }
        }
    }
}

/// The measure dμ = g(t) dt together with the quadrature used for every
/// L₂(dμ) integral.
#[derive(Debug, Clone)]
pub struct DensityMeasure {
    kind: MeasureKind,
    density: Density,
    g1: f64,
    g2: f64,
    quadrature: Quadrature,
}

impl PartialEq for DensityMeasure {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.density == other.density
    }
}

impl DensityMeasure {
    pub fn lebesgue() -> Self {
        Self::lebesgue_with(QuadratureSpec::default()).expect("default quadrature is valid")
    }

    pub fn lebesgue_with(spec: QuadratureSpec) -> Result<Self> {
        Ok(Self {
            kind: MeasureKind::Lebesgue,
            density: Density::Uniform,
            g1: 1.0,
            g2: 1.0,
            quadrature: Quadrature::new(spec)?,
        })
    }

    /// Trigonometric density; rejects coefficients that let g touch zero.
    pub fn weighted_trig(density: TrigDensity, spec: QuadratureSpec) -> Result<Self> {
        let density = Density::Trig(density);
        let (g1, g2) = grid_bounds(&density);
        Self::weighted(density, g1, g2, spec)
    }

    /// Tabulated density, linearly interpolated and renormalized to integrate to one.
    pub fn weighted_table(points: &[(f64, f64)], spec: QuadratureSpec) -> Result<Self> {
        if points.len() < 2 {
            return Err(VcmError::Measure(
                "density table needs at least two points".into(),
            ));
        }
        let mut pts = points.to_vec();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pts.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(VcmError::Measure(format!(
                    "duplicate density knot at t = {}",
                    w[0].0
                )));
            }
        }
        if pts.iter().any(|&(t, g)| !(0.0..=1.0).contains(&t) || !g.is_finite()) {
            return Err(VcmError::Measure(
                "density knots must lie in [0,1] with finite values".into(),
            ));
        }
        let ts: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let gs: Vec<f64> = pts.iter().map(|p| p.1).collect();
        // Piecewise linear: the integral is exact with the trapezoid rule over
        // the knots plus the flat extensions to 0 and 1.
        let mut mass = gs[0] * ts[0] + gs[gs.len() - 1] * (1.0 - ts[ts.len() - 1]);
        for k in 0..ts.len() - 1 {
            mass += 0.5 * (gs[k] + gs[k + 1]) * (ts[k + 1] - ts[k]);
        }
        if mass <= 0.0 {
            return Err(VcmError::Measure("density table has no mass".into()));
        }
        let gs: Vec<f64> = gs.iter().map(|g| g / mass).collect();
        let g1 = gs.iter().cloned().fold(f64::INFINITY, f64::min);
        let g2 = gs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self::weighted(Density::Table { ts, gs }, g1, g2, spec)
    }

    fn weighted(density: Density, g1: f64, g2: f64, spec: QuadratureSpec) -> Result<Self> {
        if !(g1 > 0.0) || !g2.is_finite() {
            return Err(VcmError::Measure(format!(
                "density must be bounded away from zero and infinity (min {g1}, max {g2})"
            )));
        }
        let quadrature = Quadrature::new(spec)?;
        let m = Self {
            kind: MeasureKind::Weighted,
            density,
            g1,
            g2: g2.max(g1),
            quadrature,
        };
        m.check_invariants()?;
        Ok(m)
    }

    pub fn from_spec(spec: &MeasureSpec) -> Result<Self> {
        let q = spec.quadrature.unwrap_or_default();
        match spec.kind {
            MeasureKind::Lebesgue => {
                if spec.g_table.is_some() || spec.g_trig.is_some() {
                    return Err(VcmError::Measure(
                        "lebesgue measure takes no density".into(),
                    ));
                }
                Self::lebesgue_with(q)
            }
            MeasureKind::Weighted => match (&spec.g_table, &spec.g_trig) {
                (Some(table), None) => Self::weighted_table(table, q),
                (None, Some(trig)) => Self::weighted_trig(trig.clone(), q),
                _ => Err(VcmError::Measure(
                    "weighted measure needs exactly one of g_table or g_trig".into(),
                )),
            },
        }
    }

    pub fn to_spec(&self) -> MeasureSpec {
        let quadrature = Some(self.quadrature.spec());
        match &self.density {
            Density::Uniform => MeasureSpec {
                kind: MeasureKind::Lebesgue,
                g_table: None,
                g_trig: None,
                quadrature,
            },
            Density::Table { ts, gs } => MeasureSpec {
                kind: MeasureKind::Weighted,
                g_table: Some(ts.iter().cloned().zip(gs.iter().cloned()).collect()),
                g_trig: None,
                quadrature,
            },
            Density::Trig(d) => MeasureSpec {
                kind: MeasureKind::Weighted,
                g_table: None,
                g_trig: Some(d.clone()),
                quadrature,
            },
        }
    }

    /// Same density with a different quadrature rule.
    pub fn with_quadrature(&self, spec: QuadratureSpec) -> Result<Self> {
        Ok(Self {
            quadrature: Quadrature::new(spec)?,
            ..self.clone()
        })
    }

    fn check_invariants(&self) -> Result<()> {
        for &t in self.quadrature.nodes() {
            let g = self.density.eval(t);
            if g < self.g1 * (1.0 - 1e-12) || g > self.g2 * (1.0 + 1e-12) {
                return Err(VcmError::Measure(format!(
                    "g({t}) = {g} outside declared bounds [{}, {}]",
                    self.g1, self.g2
                )));
            }
        }
        let mass = self.quadrature.integrate(|t| self.density.eval(t));
        if (mass - 1.0).abs() > 1e-6 {
            return Err(VcmError::Measure(format!(
                "density integrates to {mass}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn is_lebesgue(&self) -> bool {
        self.kind == MeasureKind::Lebesgue
    }

    pub fn g(&self, t: f64) -> f64 {
        self.density.eval(t)
    }

    pub fn g1(&self) -> f64 {
        self.g1
    }

    pub fn g2(&self) -> f64 {
        self.g2
    }

    pub fn quadrature(&self) -> &Quadrature {
        &self.quadrature
    }

    /// ∫₀¹ f(t) g(t) dt.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.quadrature.integrate(|t| f(t) * self.density.eval(t))
    }

    /// Draw t ~ μ from a uniform stream by rejection against the upper bound g₂.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.density {
            Density::Uniform => rng.random::<f64>(),
            _ => loop {
                let t: f64 = rng.random();
                let u: f64 = rng.random();
                if u * self.g2 <= self.density.eval(t) {
                    return t;
                }
            },
        }
    }
}

fn grid_bounds(density: &Density) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in 0..=BOUNDS_GRID {
        let g = density.eval(k as f64 / BOUNDS_GRID as f64);
        lo = lo.min(g);
        hi = hi.max(g);
    }
    (lo, hi)
}
