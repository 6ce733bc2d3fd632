//! Synthetic scenarios with known coefficient functions.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{DensityMeasure, Dictionary, DictionarySpec, MeasureSpec};
use crate::error::{Result, VcmError};
use crate::model::{CoordinateMatrix, Dataset, Observation};
use crate::rng::{self, Domain};
use crate::tuning::{DesignMoments, NoiseSpec, GAUSSIAN_C_STAR};

/// A scalar coefficient function on [0,1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScalarFn {
    Constant { value: f64 },
    /// c0 + Σ_k cos_k·√2cos(2πkt) + sin_k·√2sin(2πkt)
    Trig { c0: f64, cos: Vec<f64>, sin: Vec<f64> },
    /// Σ_j coeffs_j·√(2j+1)P_j(2t−1), j from 0
    Legendre { coeffs: Vec<f64> },
    /// Periodic piecewise-linear interpolant of `values` at the knots j/m.
    PeriodicLinear { values: Vec<f64> },
    /// c0 + scale·(t² − t + 1/6)
    Bernoulli { c0: f64, scale: f64 },
}

impl ScalarFn {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            ScalarFn::Constant { value } => *value,
            ScalarFn::Trig { c0, cos, sin } => {
                let mut v = *c0;
                for (k, c) in cos.iter().enumerate() {
                    v += c * SQRT_2 * (2.0 * PI * (k + 1) as f64 * t).cos();
                }
                for (k, s) in sin.iter().enumerate() {
                    v += s * SQRT_2 * (2.0 * PI * (k + 1) as f64 * t).sin();
                }
                v
            }
            ScalarFn::Legendre { coeffs } => {
                let x = 2.0 * t - 1.0;
                let (mut prev, mut cur) = (0.0, 1.0);
                let mut v = 0.0;
                for (j, c) in coeffs.iter().enumerate() {
                    if j > 0 {
                        let jf = j as f64;
                        let next = ((2.0 * jf - 1.0) * x * cur - (jf - 1.0) * prev) / jf;
                        prev = cur;
                        cur = next;
                    }
                    v += c * (2.0 * j as f64 + 1.0).sqrt() * cur;
                }
                v
            }
            ScalarFn::PeriodicLinear { values } => {
                let m = values.len();
                let x = t.rem_euclid(1.0) * m as f64;
                let j = (x.floor() as usize).min(m - 1);
                let frac = x - j as f64;
                values[j] * (1.0 - frac) + values[(j + 1) % m] * frac
            }
            ScalarFn::Bernoulli { c0, scale } => c0 + scale * (t * t - t + 1.0 / 6.0),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            ScalarFn::Constant { .. } => true,
            ScalarFn::Trig { cos, sin, .. } => cos.iter().chain(sin).all(|&c| c == 0.0),
            ScalarFn::Legendre { coeffs } => coeffs.iter().skip(1).all(|&c| c == 0.0),
            ScalarFn::PeriodicLinear { values } => values.iter().all(|&v| v == values[0]),
            ScalarFn::Bernoulli { scale, .. } => *scale == 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            ScalarFn::PeriodicLinear { values } => !values.is_empty(),
            _ => true,
        };
        if !ok {
            return Err(VcmError::InvalidScenario("periodic_linear needs at least one value".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoeffSpec {
    /// Random trigonometric polynomials of degree k_max.
    Trig { k_max: usize },
    /// Random polynomials of the given degree.
    Poly { degree: usize },
    /// Random periodic piecewise-linear functions with `knots` knots.
    SplineFree { knots: usize },
    /// Exactly p functions; s−1 of them must be non-constant.
    Explicit { functions: Vec<ScalarFn> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignKind {
    /// W uniform on the canonical basis vectors of ℝᵖ.
    CanonicalUniform,
    /// W uniform on the unit sphere of ℝᵖ.
    SphereUniform,
    /// W drawn uniformly from the listed rows.
    Table { rows: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    /// ±1 with equal probability.
    RademacherBounded,
    /// Laplace scaled to unit variance.
    Laplace,
}

impl NoiseKind {
    /// Orlicz ψ₁ constant K, the smallest K with E exp(|ξ|/K) ≤ e
    /// (1 is kept for the Gaussian by convention).
    pub fn orlicz_k(self) -> f64 {
        match self {
            NoiseKind::Gaussian | NoiseKind::RademacherBounded => 1.0,
            // |ξ| ~ Exp(√2): E exp(|ξ|/K) = 1/(1 − 1/(√2K))
            NoiseKind::Laplace => 1.0 / (SQRT_2 * (1.0 - (-1.0f64).exp())),
        }
    }

    pub fn noise_spec(self, sigma: f64) -> NoiseSpec {
        NoiseSpec {
            sigma,
            k: self.orlicz_k(),
            c_star: GAUSSIAN_C_STAR,
        }
    }

    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            NoiseKind::Gaussian => rng.sample(StandardNormal),
            NoiseKind::RademacherBounded => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            NoiseKind::Laplace => {
                let u: f64 = rng.random::<f64>() - 0.5;
                -u.signum() * (1.0 - 2.0 * u.abs()).ln() / SQRT_2
            }
        }
    }
}

fn default_amplitude() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub p: usize,
    /// One plus the number of non-constant components.
    pub s: usize,
    pub coeff_spec: CoeffSpec,
    pub design: DesignKind,
    pub noise: NoiseKind,
    pub sigma: f64,
    #[serde(default)]
    pub measure: MeasureSpec,
    pub seed: u64,
    /// Scale of the random non-constant parts.
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
}

impl Scenario {
    /// Canonical design, Gaussian noise, trigonometric coefficients.
    pub fn standard(p: usize, s: usize, k_max: usize, sigma: f64, seed: u64) -> Self {
        Self {
            p,
            s,
            coeff_spec: CoeffSpec::Trig { k_max },
            design: DesignKind::CanonicalUniform,
            noise: NoiseKind::Gaussian,
            sigma,
            measure: MeasureSpec::default(),
            seed,
            amplitude: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VcmError::InvalidScenario(m));
        if self.p == 0 {
            return bad("p must be positive".into());
        }
        if self.s == 0 || self.s > self.p + 1 {
            return bad(format!("s must lie in [1, p+1] = [1, {}], got {}", self.p + 1, self.s));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be nonnegative, got {}", self.sigma));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return bad(format!("amplitude must be positive, got {}", self.amplitude));
        }
        match &self.coeff_spec {
            CoeffSpec::Trig { k_max: 0 } => return bad("k_max must be positive".into()),
            CoeffSpec::Poly { degree: 0 } => return bad("degree must be positive".into()),
            CoeffSpec::SplineFree { knots } if *knots < 2 => {
                return bad("spline_free needs at least two knots".into())
            }
            CoeffSpec::Explicit { functions } => {
                if functions.len() != self.p {
                    return bad(format!("{} functions given for p = {}", functions.len(), self.p));
                }
                for f in functions {
                    f.validate()?;
                }
                let varying = functions.iter().filter(|f| !f.is_constant()).count();
                if varying != self.s - 1 {
                    return bad(format!(
                        "{varying} non-constant functions given, s - 1 = {}",
                        self.s - 1
                    ));
                }
            }
            _ => {}
        }
        if let DesignKind::Table { rows } = &self.design {
            if rows.is_empty() {
                return bad("design table is empty".into());
            }
            for (i, r) in rows.iter().enumerate() {
                if r.len() != self.p {
                    return bad(format!("design row {i} has {} entries, expected {}", r.len(), self.p));
                }
                let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(norm <= 1.0 + 1e-12) {
                    return bad(format!("design row {i} has norm {norm} > 1"));
                }
            }
        }
        DensityMeasure::from_spec(&self.measure)?;
        Ok(())
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        self.noise.noise_spec(self.sigma)
    }

    /// Exact second moments of the design distribution.
    pub fn design_moments(&self) -> Result<DesignMoments> {
        match &self.design {
            DesignKind::CanonicalUniform => DesignMoments::canonical_uniform(self.p),
            DesignKind::SphereUniform => DesignMoments::sphere_uniform(self.p),
            DesignKind::Table { rows } => DesignMoments::from_samples(rows),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let sc: Scenario = serde_json::from_str(text)?;
        sc.validate()?;
        Ok(sc)
    }
}

/// The p coefficient functions: components 0..s−1 follow `coeff_spec`, the
/// rest are constants. Deterministic in the scenario seed.
pub fn make_coefficients(sc: &Scenario) -> Result<Vec<ScalarFn>> {
    sc.validate()?;
    if let CoeffSpec::Explicit { functions } = &sc.coeff_spec {
        return Ok(functions.clone());
    }
    let mut rng = rng::stream(sc.seed, Domain::Coefficients, 0);
    let amp = sc.amplitude;
    let mut normal = move || -> f64 { rng.sample(StandardNormal) };
    let mut out = Vec::with_capacity(sc.p);
    for k in 0..sc.p {
        let c = normal();
        if k + 1 >= sc.s {
            out.push(ScalarFn::Constant { value: c });
            continue;
        }
        let f = match sc.coeff_spec {
            CoeffSpec::Trig { k_max } => ScalarFn::Trig {
                c0: c,
                cos: (0..k_max).map(|_| amp * normal()).collect(),
                sin: (0..k_max).map(|_| amp * normal()).collect(),
            },
            CoeffSpec::Poly { degree } => ScalarFn::Legendre {
                coeffs: std::iter::once(c)
                    .chain((0..degree).map(|_| amp * normal()))
                    .collect(),
            },
            CoeffSpec::SplineFree { knots } => ScalarFn::PeriodicLinear {
                values: (0..knots).map(|_| c + amp * normal()).collect(),
            },
            CoeffSpec::Explicit { .. } => unreachable!(),
        };
        out.push(f);
    }
    Ok(out)
}

/// A₀ with a_kj = ⟨f_k, φ_j⟩ in L₂(dμ).
pub fn ground_truth_matrix(sc: &Scenario, dict: &Dictionary) -> Result<CoordinateMatrix> {
    let fs = make_coefficients(sc)?;
    truth_matrix(&fs, sc, dict)
}

/// A₀ for already generated coefficient functions.
pub fn truth_matrix(fs: &[ScalarFn], sc: &Scenario, dict: &Dictionary) -> Result<CoordinateMatrix> {
    let measure = DensityMeasure::from_spec(&sc.measure)?;
    if dict.measure() != &measure {
        return Err(VcmError::Measure(
            "dictionary measure differs from the scenario measure".into(),
        ));
    }
    let l = dict.l();
    let mut a = nalgebra::DMatrix::zeros(fs.len(), l);
    for (k, f) in fs.iter().enumerate() {
        let e = dict.expand_function(|t| f.eval(t))?;
        for j in 0..l {
            a[(k, j)] = e.coeffs[j];
        }
    }
    CoordinateMatrix::new(a)
}

fn sample_w<R: Rng + ?Sized>(design: &DesignKind, p: usize, rng: &mut R) -> Vec<f64> {
    match design {
        DesignKind::CanonicalUniform => {
            let mut w = vec![0.0; p];
            w[rng.random_range(0..p)] = 1.0;
            w
        }
        DesignKind::SphereUniform => loop {
            let w: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-300 {
                // guard against rounding pushing the norm above one
                let scale = (1.0 / norm).min(1.0 / (norm * (1.0 + 4.0 * f64::EPSILON)));
                break w.into_iter().map(|v| v * scale).collect();
            }
        },
        DesignKind::Table { rows } => rows[rng.random_range(0..rows.len())].clone(),
    }
}

/// n observations drawn with the scenario seed.
pub fn sample_dataset(sc: &Scenario, n: usize) -> Result<Dataset> {
    let fs = make_coefficients(sc)?;
    sample_dataset_with(sc, &fs, n, sc.seed)
}

/// n observations of the model with coefficient functions `fs`, drawn from
/// the streams of `data_seed`. Observation i depends only on (data_seed, i).
pub fn sample_dataset_with(
    sc: &Scenario,
    fs: &[ScalarFn],
    n: usize,
    data_seed: u64,
) -> Result<Dataset> {
    sc.validate()?;
    if n == 0 {
        return Err(VcmError::Domain("n must be positive".into()));
    }
    if fs.len() != sc.p {
        return Err(VcmError::Shape(format!("{} functions for p = {}", fs.len(), sc.p)));
    }
    let measure = DensityMeasure::from_spec(&sc.measure)?;
    let obs = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(data_seed, Domain::Observations, i as u64);
            let t = measure.sample(&mut r);
            let w = sample_w(&sc.design, sc.p, &mut r);
            let xi = sc.noise.sample(&mut r);
            let signal: f64 = w
                .iter()
                .zip(fs)
                .filter(|(wk, _)| **wk != 0.0)
                .map(|(wk, f)| wk * f.eval(t))
                .sum();
            Observation::new(w, t, signal + sc.sigma * xi)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(obs)
}

/// Sidecar written next to a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub scenario: Scenario,
    pub n: usize,
    pub functions: Vec<ScalarFn>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<DictionarySpec>,
    /// Path of the CSV holding A₀ for `dictionary`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a0_path: Option<String>,
}
