//! Theory-driven tuning: design moments, the regularization level λ,
//! sample-size thresholds n*/n**, choice of the dictionary size l and the
//! error-bound factor β.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::basis::ApproxSpec;
use crate::error::{Result, VcmError};

/// Eigenvalues of Ω below this fraction of tr(Ω) count as zero.
const SINGULAR_TOL: f64 = 1e-12;
/// Leading constant of the λ rule.
pub const LAMBDA_FACTOR: f64 = 4.25;
/// Concentration constant for Gaussian noise.
pub const GAUSSIAN_C_STAR: f64 = 6.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentSource {
    CanonicalUniform,
    SphereUniform,
    Empirical,
}

/// Second moments Ω = E[WWᵀ] of the covariates and their spectral extremes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMoments {
    pub source: MomentSource,
    /// Ω row by row.
    pub omega: Vec<Vec<f64>>,
    pub omega_min: f64,
    pub omega_max: f64,
    pub trace_omega: f64,
    /// Ω is singular, so the restricted isometry ‖A‖²_{L₂} ≥ ω_min‖A‖₂² is vacuous.
    pub singular_warning: bool,
}

impl DesignMoments {
    /// W uniform on the canonical basis vectors: Ω = I/p.
    pub fn canonical_uniform(p: usize) -> Result<Self> {
        Self::isotropic(p, MomentSource::CanonicalUniform)
    }

    /// W uniform on the unit sphere: Ω = I/p.
    pub fn sphere_uniform(p: usize) -> Result<Self> {
        Self::isotropic(p, MomentSource::SphereUniform)
    }

    fn isotropic(p: usize, source: MomentSource) -> Result<Self> {
        if p == 0 {
            return Err(VcmError::Domain("p must be positive".into()));
        }
        let w = 1.0 / p as f64;
        let omega = (0..p)
            .map(|i| (0..p).map(|j| if i == j { w } else { 0.0 }).collect())
            .collect();
        Ok(Self {
            source,
            omega,
            omega_min: w,
            omega_max: w,
            trace_omega: 1.0,
            singular_warning: false,
        })
    }

    /// Ω = (1/m)Σ w wᵀ over the sample.
    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        let p = samples
            .first()
            .map(Vec::len)
            .ok_or_else(|| VcmError::Domain("design moments need at least one sample".into()))?;
        if p == 0 {
            return Err(VcmError::Domain("covariate vectors are empty".into()));
        }
        let mut omega = DMatrix::<f64>::zeros(p, p);
        for (r, w) in samples.iter().enumerate() {
            if w.len() != p {
                return Err(VcmError::Shape(format!(
                    "sample {r} has {} covariates, expected {p}",
                    w.len()
                )));
            }
            for i in 0..p {
                if w[i] == 0.0 {
                    continue;
                }
                for j in 0..p {
                    omega[(i, j)] += w[i] * w[j];
                }
            }
        }
        omega /= samples.len() as f64;
        Self::from_matrix(omega, MomentSource::Empirical)
    }

    fn from_matrix(omega: DMatrix<f64>, source: MomentSource) -> Result<Self> {
        if omega.iter().any(|v| !v.is_finite()) {
            return Err(VcmError::Numerical("non-finite second moments".into()));
        }
        let trace = omega.trace();
        let eig = SymmetricEigen::new(omega.clone()).eigenvalues;
        let max = eig.max().max(0.0);
        let mut min = eig.min().max(0.0);
        let singular = min <= SINGULAR_TOL * trace.max(f64::MIN_POSITIVE);
        if singular {
            min = 0.0;
        }
        Ok(Self {
            source,
            omega: omega.row_iter().map(|r| r.iter().copied().collect()).collect(),
            omega_min: min,
            omega_max: max,
            trace_omega: trace,
            singular_warning: singular,
        })
    }

    pub fn p(&self) -> usize {
        self.omega.len()
    }

    /// M = tr(Ω) ∨ l·ω_max.
    pub fn m(&self, l: usize) -> f64 {
        self.trace_omega.max(l as f64 * self.omega_max)
    }

    /// Ω = I/p up to rounding, the case covered by the orthonormal λ rule.
    pub fn is_isotropic(&self) -> bool {
        let w = 1.0 / self.p() as f64;
        let tol = 1e-12 * w;
        (self.omega_min - w).abs() <= tol && (self.omega_max - w).abs() <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    /// Orlicz ψ₁ constant of ξ.
    #[serde(rename = "K")]
    pub k: f64,
    pub c_star: f64,
}

impl NoiseSpec {
    pub fn gaussian(sigma: f64) -> Self {
        Self {
            sigma,
            k: 1.0,
            c_star: GAUSSIAN_C_STAR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(VcmError::Domain(format!("sigma must be nonnegative, got {}", self.sigma)));
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(VcmError::Domain(format!("K must be positive, got {}", self.k)));
        }
        if !(self.c_star > 0.0 && self.c_star.is_finite()) {
            return Err(VcmError::Domain(format!("c_star must be positive, got {}", self.c_star)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningParams {
    pub noise: NoiseSpec,
    pub approx: ApproxSpec,
    /// One plus the number of non-constant coefficient functions.
    pub s: usize,
    pub moments: DesignMoments,
    pub p: usize,
    pub l: usize,
    pub n: usize,
    pub c_phi: f64,
    /// The unspecified numerical constant of the thresholds and the l rules.
    #[serde(rename = "C")]
    pub c: f64,
}

impl TuningParams {
    pub fn d(&self) -> usize {
        self.p + self.l
    }

    pub fn log_d(&self) -> f64 {
        (self.d() as f64).ln()
    }

    pub fn m(&self) -> f64 {
        self.moments.m(self.l)
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        self.approx.validate()?;
        if self.p == 0 || self.l == 0 {
            return Err(VcmError::Domain("p and l must be positive".into()));
        }
        if self.n == 0 {
            return Err(VcmError::Domain("n must be positive".into()));
        }
        if self.s == 0 || self.s > self.p + 1 {
            return Err(VcmError::Domain(format!("s must lie in [1, p+1], got {}", self.s)));
        }
        if self.moments.p() != self.p {
            return Err(VcmError::Shape(format!(
                "design moments are for p = {}, parameters say p = {}",
                self.moments.p(),
                self.p
            )));
        }
        if !(self.c_phi > 0.0) || !(self.c > 0.0) {
            return Err(VcmError::Domain("c_phi and C must be positive".into()));
        }
        Ok(())
    }

    /// c*σ + 2b√(s−1)/l^γ.
    fn noise_scale(&self) -> f64 {
        let s1 = (self.s - 1) as f64;
        self.noise.c_star * self.noise.sigma
            + 2.0 * self.approx.b * s1.sqrt() / (self.l as f64).powf(self.approx.gamma)
    }

    /// σ² + b²(s−1)/l^{2γ}.
    fn variance_term(&self) -> f64 {
        let s1 = (self.s - 1) as f64;
        self.noise.sigma.powi(2)
            + self.approx.b.powi(2) * s1 / (self.l as f64).powf(2.0 * self.approx.gamma)
    }
}

/// λ = 4.25(c*σ + 2b√(s−1)/l^γ)·√(M log d / n).
pub fn lambda_general(tp: &TuningParams) -> Result<f64> {
    tp.validate()?;
    Ok(LAMBDA_FACTOR * tp.noise_scale() * (tp.m() * tp.log_d() / tp.n as f64).sqrt())
}

/// λ for Ω = I/p, where M = (l∨p)/p.
pub fn lambda_orthonormal(tp: &TuningParams) -> Result<f64> {
    tp.validate()?;
    if !tp.moments.is_isotropic() {
        return Err(VcmError::Domain(
            "the orthonormal rule needs Omega = I/p (canonical uniform design)".into(),
        ));
    }
    let lp = tp.l.max(tp.p) as f64;
    Ok(LAMBDA_FACTOR * tp.noise_scale() * (lp * tp.log_d() / (tp.p as f64 * tp.n as f64)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub n_star: f64,
    pub n_star_star: f64,
}

/// [K log(K c_φ/ω_max)] ∨ 1.
fn orlicz_factor(tp: &TuningParams) -> f64 {
    let k = tp.noise.k;
    (k * (k * tp.c_phi / tp.moments.omega_max).ln()).max(1.0)
}

/// n* = 2c_φ²l([K log(Kc_φ/ω_max)]∨1)² log d / M and
/// n** = C c_φ² l log d [(Ms)∨1] / ω_min².
pub fn sample_thresholds(tp: &TuningParams) -> Result<Thresholds> {
    tp.validate()?;
    if !(tp.moments.omega_max > 0.0) {
        return Err(VcmError::Domain("omega_max must be positive".into()));
    }
    let l = tp.l as f64;
    let c2 = tp.c_phi * tp.c_phi;
    let m = tp.m();
    let n_star = 2.0 * c2 * l * orlicz_factor(tp).powi(2) * tp.log_d() / m;
    let n_star_star = if tp.moments.omega_min > 0.0 {
        tp.c * c2 * l * tp.log_d() * (m * tp.s as f64).max(1.0) / tp.moments.omega_min.powi(2)
    } else {
        f64::INFINITY
    };
    Ok(Thresholds { n_star, n_star_star })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaBranch {
    /// n ≥ n**
    Large,
    /// n < n**, the max-form expression
    Small,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaBound {
    pub beta: f64,
    pub branch: BetaBranch,
}

/// β of the risk bounds C·β/n: the first expression when n ≥ n**, else the max form.
pub fn beta_bound(tp: &TuningParams, nuclear_norm_a0: f64) -> Result<BetaBound> {
    let th = sample_thresholds(tp)?;
    Ok(beta_for_branch(
        tp,
        nuclear_norm_a0,
        if tp.n as f64 >= th.n_star_star {
            BetaBranch::Large
        } else {
            BetaBranch::Small
        },
    ))
}

/// β evaluated on a given branch regardless of n.
pub fn beta_for_branch(tp: &TuningParams, nuclear_norm_a0: f64, branch: BetaBranch) -> BetaBound {
    let l = tp.l as f64;
    let p = tp.p as f64;
    let wmin = tp.moments.omega_min;
    let scale = tp.m() * tp.s as f64 * tp.log_d() / (p * wmin * wmin);
    let beta = match branch {
        BetaBranch::Large => tp.variance_term() * scale,
        BetaBranch::Small => {
            let a2 = nuclear_norm_a0 * nuclear_norm_a0;
            let first = (tp.variance_term() + l * a2) * scale;
            let second = tp.c_phi * a2 * (tp.log_d() * l * tp.n as f64).sqrt() / (wmin * p);
            first.max(second)
        }
    };
    BetaBound { beta, branch }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    DenseL1,
    MidL2,
    SmoothL3,
    MinimaxP1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectLInput {
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub gamma: f64,
    pub sigma: f64,
    /// Only used when p = 1.
    pub b: f64,
    pub c_phi: f64,
    #[serde(rename = "C")]
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LSelection {
    pub l_hat: usize,
    pub regime: Regime,
    /// n fell below every regime threshold and l̂ was clamped to 1.
    pub extrapolated: bool,
    pub d: usize,
    /// Unrounded value of the regime formula at the final d.
    pub l_raw: f64,
    pub fixed_point_iterations: usize,
}

impl SelectLInput {
    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.s == 0 {
            return Err(VcmError::Domain("n, p and s must be positive".into()));
        }
        for (name, v) in [("gamma", self.gamma), ("c_phi", self.c_phi), ("C", self.c)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(VcmError::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.sigma >= 0.0) || !(self.b >= 0.0) {
            return Err(VcmError::Domain("sigma and b must be nonnegative".into()));
        }
        Ok(())
    }

    /// Regime implied by n at a given d. Boundaries are inclusive and ties
    /// go to the larger-n regime; `None` means below every threshold.
    pub fn regime_at(&self, d: usize) -> Option<Regime> {
        if self.p == 1 {
            return Some(Regime::MinimaxP1);
        }
        let n = self.n as f64;
        let p = self.p as f64;
        let s = self.s as f64;
        let log_d = (d as f64).ln();
        if n >= p.powf(3.0 + 2.0 * self.gamma) * log_d {
            Some(Regime::SmoothL3)
        } else if n >= s * p.powi(3) * log_d {
            Some(Regime::MidL2)
        } else if n >= s * p * p * log_d {
            Some(Regime::DenseL1)
        } else {
            None
        }
    }

    /// Unrounded l of a regime at a given d.
    pub fn formula_at(&self, regime: Regime, d: usize) -> f64 {
        let n = self.n as f64;
        let p = self.p as f64;
        let s = self.s as f64;
        let log_d = (d as f64).ln();
        let c2 = self.c_phi * self.c_phi;
        let exponent = 1.0 / (2.0 * self.gamma + 2.0);
        match regime {
            Regime::DenseL1 => n / (self.c * c2 * s * p * p * log_d),
            Regime::MidL2 => (n / (self.c * c2 * s * p * log_d)).sqrt(),
            Regime::SmoothL3 => (self.c * n / (self.sigma.powi(2) * p * log_d)).powf(exponent),
            Regime::MinimaxP1 => {
                (2.0 * (2.0 * self.gamma + 1.0) * self.b.powi(2) * n / (self.sigma.powi(2) * log_d))
                    .powf(exponent)
            }
        }
    }

    /// l̂ of a regime at a given d: floor for the first two, nearest integer
    /// for the others, clamped to [1, n].
    pub fn rounded_at(&self, regime: Regime, d: usize) -> usize {
        let raw = self.formula_at(regime, d);
        let r = match regime {
            Regime::DenseL1 | Regime::MidL2 => raw.floor(),
            Regime::SmoothL3 | Regime::MinimaxP1 => raw.round(),
        };
        if r.is_nan() {
            1
        } else {
            r.clamp(1.0, self.n as f64) as usize
        }
    }
}

const FIXED_POINT_MAX: usize = 50;

/// Choose l by the regime rules, resolving d = p + l by fixed-point iteration
/// started from l = p.
pub fn select_l(input: &SelectLInput) -> Result<LSelection> {
    input.validate()?;
    let mut l = input.p;
    let mut iterations = 0;
    let mut seen = Vec::new();
    loop {
        iterations += 1;
        let d = input.p + l;
        let (next, regime, extrapolated) = match input.regime_at(d) {
            Some(r) => (input.rounded_at(r, d), r, false),
            None => (1, Regime::DenseL1, true),
        };
        // stop at a fixed point, or at the smaller of the last two values on a cycle
        if next == l || seen.contains(&next) || iterations >= FIXED_POINT_MAX {
            let l_hat = if next == l { l } else { next.min(l) };
            let d = input.p + l_hat;
            let (regime, extrapolated) = match input.regime_at(d) {
                Some(r) => (r, false),
                None => (regime, extrapolated),
            };
            return Ok(LSelection {
                l_hat,
                regime,
                extrapolated,
                d,
                l_raw: if extrapolated { 1.0 } else { input.formula_at(regime, d) },
                fixed_point_iterations: iterations,
            });
        }
        seen.push(l);
        l = next;
    }
}

/// Everything the `tune` command reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub params: TuningParams,
    pub d: usize,
    #[serde(rename = "M")]
    pub m: f64,
    pub omega_min: f64,
    pub omega_max: f64,
    pub trace_omega: f64,
    pub singular_design_warning: bool,
    pub lambda: f64,
    pub lambda_rule: String,
    pub n_star: f64,
    pub n_star_star: f64,
    pub below_n_star: bool,
    pub l_selection: Option<LSelection>,
    pub beta: Option<BetaBound>,
    #[serde(rename = "C")]
    pub c: f64,
    pub approx_empirical: bool,
}

/// λ by the orthonormal rule when Ω = I/p, else by the general rule.
pub fn auto_lambda(tp: &TuningParams) -> Result<(f64, &'static str)> {
    if tp.moments.is_isotropic() {
        Ok((lambda_orthonormal(tp)?, "orthonormal"))
    } else {
        Ok((lambda_general(tp)?, "general"))
    }
}

pub fn tune_report(
    tp: &TuningParams,
    nuclear_norm_a0: Option<f64>,
    select: Option<&SelectLInput>,
) -> Result<TuneReport> {
    let (lambda, rule) = auto_lambda(tp)?;
    let th = sample_thresholds(tp)?;
    let beta = match nuclear_norm_a0 {
        Some(v) => Some(beta_bound(tp, v)?),
        None if tp.n as f64 >= th.n_star_star => Some(beta_bound(tp, 0.0)?),
        None => None,
    };
    Ok(TuneReport {
        params: tp.clone(),
        d: tp.d(),
        m: tp.m(),
        omega_min: tp.moments.omega_min,
        omega_max: tp.moments.omega_max,
        trace_omega: tp.moments.trace_omega,
        singular_design_warning: tp.moments.singular_warning,
        lambda,
        lambda_rule: rule.to_string(),
        n_star: th.n_star,
        n_star_star: th.n_star_star,
        below_n_star: (tp.n as f64) < th.n_star,
        l_selection: select.map(select_l).transpose()?,
        beta,
        c: tp.c,
        approx_empirical: tp.approx.empirical,
    })
}
