//! Nuclear-norm penalized least squares
//!
//!   Â = argmin_A (1/n)Σ(y_i − ⟨X_i, A⟩)² + λ‖A‖_*
//!
//! solved by accelerated proximal gradient with singular value thresholding
//! as the proximal map and function-value restart of the momentum.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::Dictionary;
use crate::error::{Result, VcmError};
use crate::linalg;
use crate::model::{CoordinateMatrix, Dataset, Design};

/// Singular values above this fraction of σ₁ count toward `rank_hat`.
pub const RANK_TOL: f64 = 1e-8;
/// Consecutive small relative changes required before stopping.
const PATIENCE: usize = 3;
/// Largest p·l for which the normal operator is precomputed.
const GRAM_MAX_DIM: usize = 512;
/// Power iteration approaches λ_max from below; the step uses a slightly larger L.
const LIPSCHITZ_SAFETY: f64 = 1.0 + 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    AutoLipschitz,
    Fixed(f64),
}

/// How the quadratic part is evaluated. `Gram` precomputes the (pl)×(pl)
/// normal operator so that iterations cost O((pl)²) independent of n.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Auto,
    Streaming,
    Gram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub lambda: f64,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub step: StepRule,
    pub accelerate: bool,
    pub restart: bool,
    pub backend: Backend,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            max_iter: 5000,
            rel_tol: 1e-9,
            step: StepRule::AutoLipschitz,
            accelerate: true,
            restart: true,
            backend: Backend::Auto,
        }
    }
}

impl SolverConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(VcmError::Domain(format!(
                "lambda must be a finite nonnegative number, got {}",
                self.lambda
            )));
        }
        if !(self.rel_tol > 0.0) {
            return Err(VcmError::Domain("rel_tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(VcmError::Domain("max_iter must be positive".into()));
        }
        if let StepRule::Fixed(s) = self.step {
            if !(s > 0.0 && s.is_finite()) {
                return Err(VcmError::Domain(format!("fixed step must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    /// Objective at the starting point followed by one value per iteration.
    pub objective_trace: Vec<f64>,
    pub final_objective: f64,
    pub rank_hat: usize,
    pub nuclear_norm_hat: f64,
    pub converged: bool,
    pub lambda: f64,
    pub step: f64,
}

impl SolverReport {
    /// Objective trace as CSV with columns `iteration,objective`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,objective\n");
        for (k, v) in self.objective_trace.iter().enumerate() {
            out.push_str(&format!("{k},{v}\n"));
        }
        out
    }
}

struct Gram {
    /// (1/n)Σ vec(X_i)vec(X_i)ᵀ, with vec row-major over (covariate, basis)
    g: DMatrix<f64>,
    /// (1/n)Σ y_i vec(X_i)
    b: DVector<f64>,
    /// (1/n)Σ y_i²
    yy: f64,
}

/// The least-squares problem for one dataset and dictionary.
pub struct Problem<'a> {
    design: Design<'a>,
    gram: Option<Gram>,
}

impl<'a> Problem<'a> {
    pub fn new(data: &'a Dataset, dict: &Dictionary, backend: Backend) -> Result<Self> {
        let design = Design::new(data, dict)?;
        let dim = design.p() * design.l();
        let use_gram = match backend {
            Backend::Gram => true,
            Backend::Streaming => false,
            Backend::Auto => dim <= GRAM_MAX_DIM,
        };
        let gram = use_gram.then(|| build_gram(&design));
        Ok(Self { design, gram })
    }

    pub fn design(&self) -> &Design<'a> {
        &self.design
    }

    fn check(&self, a: &DMatrix<f64>) -> Result<()> {
        if a.nrows() != self.design.p() || a.ncols() != self.design.l() {
            return Err(VcmError::Shape(format!(
                "matrix is {}x{}, problem is {}x{}",
                a.nrows(),
                a.ncols(),
                self.design.p(),
                self.design.l()
            )));
        }
        Ok(())
    }

    /// (1/n)Σ(y_i − ⟨X_i,A⟩)².
    pub fn smooth_value(&self, a: &DMatrix<f64>) -> f64 {
        match &self.gram {
            Some(gr) => {
                let v = vec_rows(a);
                gr.yy - 2.0 * gr.b.dot(&v) + v.dot(&(&gr.g * &v))
            }
            None => {
                let d = &self.design;
                (0..d.n())
                    .map(|i| {
                        let r = d.y(i) - d.inner(a, i);
                        r * r
                    })
                    .sum::<f64>()
                    / d.n() as f64
            }
        }
    }

    /// Gradient of the smooth part: (2/n)Σ(⟨X_i,A⟩ − y_i)X_i.
    pub fn smooth_gradient(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.gram {
            Some(gr) => {
                let v = vec_rows(a);
                let g = (&gr.g * &v - &gr.b) * 2.0;
                unvec_rows(&g, self.design.p(), self.design.l())
            }
            None => {
                let d = &self.design;
                d.weighted_sum(|i| 2.0 * (d.inner(a, i) - d.y(i)))
            }
        }
    }

    pub fn objective(&self, a: &DMatrix<f64>, lambda: f64) -> Result<f64> {
        self.check(a)?;
        let nuc = if lambda == 0.0 {
            0.0
        } else {
            linalg::nuclear_norm(a)?
        };
        Ok(self.smooth_value(a) + lambda * nuc)
    }

    /// Applies V ↦ (1/n)Σ⟨X_i,V⟩X_i.
    fn normal_apply(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.gram {
            Some(gr) => unvec_rows(&(&gr.g * vec_rows(v)), self.design.p(), self.design.l()),
            None => {
                let d = &self.design;
                d.weighted_sum(|i| d.inner(v, i))
            }
        }
    }

    /// Crude bound (2/n)Σ‖w_i‖²‖φ(t_i)‖².
    pub fn crude_lipschitz(&self) -> f64 {
        let d = &self.design;
        let s: f64 = (0..d.n())
            .map(|i| {
                let w2: f64 = d.support(i).iter().map(|(_, v)| v * v).sum();
                let p2: f64 = d.phi(i).iter().map(|v| v * v).sum();
                w2 * p2
            })
            .sum();
        2.0 * s / d.n() as f64
    }

    /// L = 2λ_max of the normal operator, by power iteration.
    pub fn lipschitz(&self) -> f64 {
        const TOL: f64 = 1e-12;
        const MAX_ITER: usize = 2000;
        let crude = self.crude_lipschitz();
        let (p, l) = (self.design.p(), self.design.l());
        let mut v = DMatrix::from_fn(p, l, |i, j| 1.0 + 0.01 * ((i * l + j) % 7) as f64);
        v /= v.norm();
        let mut est = 0.0;
        for _ in 0..MAX_ITER {
            let w = self.normal_apply(&v);
            let rq = v.dot(&w);
            let norm = w.norm();
            if norm == 0.0 {
                return 0.0;
            }
            v = w / norm;
            if (rq - est).abs() <= TOL * rq {
                return (2.0 * rq).min(crude);
            }
            est = rq;
        }
        crude
    }

    /// ‖(2/n)Σ y_i X_i‖, the smallest λ for which Â = 0.
    pub fn zero_threshold(&self) -> Result<f64> {
        let d = &self.design;
        linalg::spectral_norm(&d.weighted_sum(|i| 2.0 * d.y(i)))
    }

    pub fn solve(&self, config: &SolverConfig) -> Result<(CoordinateMatrix, SolverReport)> {
        self.solve_from(config, &CoordinateMatrix::zeros(self.design.p(), self.design.l()))
    }

    /// Solve with a warm start.
    pub fn solve_from(
        &self,
        config: &SolverConfig,
        init: &CoordinateMatrix,
    ) -> Result<(CoordinateMatrix, SolverReport)> {
        config.validate()?;
        self.check(init.as_matrix())?;
        let lambda = config.lambda;
        let step = match config.step {
            StepRule::Fixed(s) => s,
            StepRule::AutoLipschitz => {
                let l = self.lipschitz() * LIPSCHITZ_SAFETY;
                if l <= 0.0 {
                    // every design inner product vanishes; zero is optimal
                    return self.report_for(init.as_matrix().clone(), lambda, vec![], 0, true, 0.0);
                }
                1.0 / l
            }
        };

        let prox_step = |z: &DMatrix<f64>| -> Result<(DMatrix<f64>, f64)> {
            let grad = self.smooth_gradient(z);
            let (x, nuc) = svt_with_norm(&(z - grad * step), lambda * step)?;
            let f = self.smooth_value(&x) + lambda * nuc;
            Ok((x, f))
        };

        let mut x = init.as_matrix().clone();
        let mut f_x = self.objective(&x, lambda)?;
        let mut y = x.clone();
        let mut theta = 1.0_f64;
        let mut trace = vec![f_x];
        let mut calm = 0;
        let mut converged = false;
        let mut iterations = 0;

        for k in 1..=config.max_iter {
            iterations = k;
            let (mut x_new, mut f_new) = prox_step(&y)?;
            if config.restart && f_new > f_x {
                theta = 1.0;
                let (xr, fr) = prox_step(&x)?;
                if fr <= f_x {
                    x_new = xr;
                    f_new = fr;
                } else {
                    x_new = x.clone();
                    f_new = f_x;
                }
            }
            if !f_new.is_finite() {
                return Err(VcmError::Divergence {
                    iteration: k,
                    objective: f_new,
                });
            }
            if config.accelerate {
                let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
                y = &x_new + (&x_new - &x) * ((theta - 1.0) / theta_next);
                theta = theta_next;
            } else {
                y = x_new.clone();
            }
            let rel = (f_x - f_new).abs() / f_x.abs().max(f64::MIN_POSITIVE);
            x = x_new;
            f_x = f_new;
            trace.push(f_x);
            if rel < config.rel_tol {
                calm += 1;
                if calm >= PATIENCE {
                    converged = true;
                    break;
                }
            } else {
                calm = 0;
            }
        }
        self.report_for(x, lambda, trace, iterations, converged, step)
    }

    fn report_for(
        &self,
        x: DMatrix<f64>,
        lambda: f64,
        mut trace: Vec<f64>,
        iterations: usize,
        converged: bool,
        step: f64,
    ) -> Result<(CoordinateMatrix, SolverReport)> {
        let final_objective = self.objective(&x, lambda)?;
        if trace.is_empty() {
            trace.push(final_objective);
        }
        let a = CoordinateMatrix::new(x)?;
        let report = SolverReport {
            iterations,
            objective_trace: trace,
            final_objective,
            rank_hat: a.rank(RANK_TOL)?,
            nuclear_norm_hat: a.nuclear_norm()?,
            converged,
            lambda,
            step,
        };
        Ok((a, report))
    }
}

/// Rows per block when the normal operator is accumulated as XᵀX.
const GRAM_BLOCK: usize = 2048;

fn build_gram(design: &Design) -> Gram {
    let (p, l, n) = (design.p(), design.l(), design.n());
    let dim = p * l;
    let nnz: usize = (0..n).map(|i| design.support(i).len()).sum();
    let mut g = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    let mut yy = 0.0;
    if 2 * nnz >= n * p {
        // dense covariates: blocked XᵀX through matrix products
        let mut start = 0;
        while start < n {
            let rows = GRAM_BLOCK.min(n - start);
            let mut x = DMatrix::<f64>::zeros(rows, dim);
            let mut y = DVector::<f64>::zeros(rows);
            for r in 0..rows {
                let i = start + r;
                let phi = design.phi(i);
                for &(k, wk) in design.support(i) {
                    for (j, pj) in phi.iter().enumerate() {
                        x[(r, k * l + j)] = wk * pj;
                    }
                }
                y[r] = design.y(i);
            }
            g.gemm_tr(1.0, &x, &x, 1.0);
            b.gemv_tr(1.0, &x, &y, 1.0);
            yy += y.norm_squared();
            start += rows;
        }
    } else {
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for i in 0..n {
            idx.clear();
            val.clear();
            let phi = design.phi(i);
            for &(k, wk) in design.support(i) {
                for (j, pj) in phi.iter().enumerate() {
                    idx.push(k * l + j);
                    val.push(wk * pj);
                }
            }
            let y = design.y(i);
            yy += y * y;
            for (a, &ia) in idx.iter().enumerate() {
                let va = val[a];
                b[ia] += y * va;
                for (c, &ic) in idx.iter().enumerate() {
                    g[(ia, ic)] += va * val[c];
                }
            }
        }
    }
    let inv = 1.0 / n as f64;
    Gram {
        g: g * inv,
        b: b * inv,
        yy: yy * inv,
    }
}

fn vec_rows(a: &DMatrix<f64>) -> DVector<f64> {
    let (p, l) = a.shape();
    DVector::from_fn(p * l, |k, _| a[(k / l, k % l)])
}

fn unvec_rows(v: &DVector<f64>, p: usize, l: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, l, |i, j| v[i * l + j])
}

/// Singular value thresholding U·max(S − τ, 0)·Vᵀ, the proximal map of τ‖·‖_*.
pub fn svt(z: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    Ok(svt_with_norm(z, tau)?.0)
}

/// SVT together with the nuclear norm of its output, Σ max(σ_j − τ, 0).
pub fn svt_with_norm(z: &DMatrix<f64>, tau: f64) -> Result<(DMatrix<f64>, f64)> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(VcmError::Domain(format!("threshold must be nonnegative, got {tau}")));
    }
    if z.is_empty() {
        return Ok((z.clone(), 0.0));
    }
    let (u, s, v_t) = linalg::svd(z)?;
    let shrunk = s.map(|v| (v - tau).max(0.0));
    let nuc = shrunk.sum();
    let mut us = u;
    for (j, &sj) in shrunk.iter().enumerate() {
        us.column_mut(j).scale_mut(sj);
    }
    Ok((us * v_t, nuc))
}

/// (1/n)Σ(y_i − ⟨X_i,A⟩)² + λ‖A‖_*, evaluated observation by observation.
pub fn objective(a: &CoordinateMatrix, data: &Dataset, dict: &Dictionary, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(VcmError::Domain(format!("lambda must be nonnegative, got {lambda}")));
    }
    let r = crate::model::residuals(a, data, dict)?;
    let fit = r.iter().map(|v| v * v).sum::<f64>() / data.n() as f64;
    let pen = if lambda == 0.0 { 0.0 } else { lambda * a.nuclear_norm()? };
    Ok(fit + pen)
}

/// (2/n)Σ(⟨X_i,A⟩ − y_i)·w_iφ(t_i)ᵀ, accumulated by rank-one updates.
pub fn gradient(a: &CoordinateMatrix, data: &Dataset, dict: &Dictionary) -> Result<DMatrix<f64>> {
    let problem = Problem::new(data, dict, Backend::Streaming)?;
    problem.check(a.as_matrix())?;
    Ok(problem.smooth_gradient(a.as_matrix()))
}

pub fn lipschitz_bound(data: &Dataset, dict: &Dictionary) -> Result<f64> {
    Ok(Problem::new(data, dict, Backend::Auto)?.lipschitz())
}

pub fn zero_threshold(data: &Dataset, dict: &Dictionary) -> Result<f64> {
    Problem::new(data, dict, Backend::Streaming)?.zero_threshold()
}

pub fn solve(
    data: &Dataset,
    dict: &Dictionary,
    config: &SolverConfig,
) -> Result<(CoordinateMatrix, SolverReport)> {
    config.validate()?;
    Problem::new(data, dict, config.backend)?.solve(config)
}

pub fn solve_from(
    data: &Dataset,
    dict: &Dictionary,
    config: &SolverConfig,
    init: &CoordinateMatrix,
) -> Result<(CoordinateMatrix, SolverReport)> {
    config.validate()?;
    Problem::new(data, dict, config.backend)?.solve_from(config, init)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Observation;

    fn toy_data() -> Dataset {
        let obs = (0..40)
            .map(|i| {
                let t = (i as f64 * 0.618).fract();
                let k = i % 3;
                let mut w = vec![0.0; 3];
                w[k] = 1.0;
                let y = (k as f64 + 1.0) + (2.0 * std::f64::consts::PI * t).cos() * (k as f64);
                Observation::new(w, t, y).unwrap()
            })
            .collect();
        Dataset::new(obs).unwrap()
    }

    #[test]
    fn svt_diagonal() {
        let z = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 0.2]));
        let out = svt(&z, 0.5).unwrap();
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![2.5, 0.5, 0.0]));
        assert!((out - want).norm() < 1e-12);
    }

    #[test]
    fn svt_identity_cases() {
        let z = DMatrix::from_fn(3, 4, |i, j| (i as f64 - j as f64) * 0.3);
        assert!((svt(&z, 0.0).unwrap() - &z).norm() < 1e-12);
        let zero = DMatrix::<f64>::zeros(3, 4);
        assert_eq!(svt(&zero, 0.7).unwrap(), zero);
        assert!(svt(&z, -1.0).is_err());
    }

    #[test]
    fn objective_at_zero_is_mean_square_response() {
        let data = toy_data();
        let dict = Dictionary::fourier(3).unwrap();
        let want = data.responses().map(|y| y * y).sum::<f64>() / data.n() as f64;
        let got = objective(&CoordinateMatrix::zeros(3, 3), &data, &dict, 0.7).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn gradient_single_observation() {
        let dict = Dictionary::fourier(3).unwrap();
        let t = 0.2;
        let data = Dataset::new(vec![Observation::new(vec![1.0, 0.0], t, 2.0).unwrap()]).unwrap();
        let a = CoordinateMatrix::zeros(2, 3);
        let g = gradient(&a, &data, &dict).unwrap();
        let phi = dict.eval_basis(t).unwrap();
        for j in 0..3 {
            assert!((g[(0, j)] + 4.0 * phi[j]).abs() < 1e-14);
            assert_eq!(g[(1, j)], 0.0);
        }
    }

    #[test]
    fn lipschitz_single_and_duplicated() {
        let dict = Dictionary::fourier(5).unwrap();
        let o = Observation::new(vec![1.0, 0.0, 0.0], 0.3, 1.0).unwrap();
        let phi2: f64 = dict.eval_basis(0.3).unwrap().iter().map(|v| v * v).sum();
        let one = Dataset::new(vec![o.clone()]).unwrap();
        let l1 = lipschitz_bound(&one, &dict).unwrap();
        assert!((l1 - 2.0 * phi2).abs() < 1e-10 * l1);
        let many = Dataset::new(vec![o; 25]).unwrap();
        assert!((lipschitz_bound(&many, &dict).unwrap() - l1).abs() < 1e-10 * l1);
    }

    #[test]
    fn zero_threshold_single_observation() {
        let dict = Dictionary::fourier(4).unwrap();
        let w = vec![0.6, 0.0, -0.8];
        let data = Dataset::new(vec![Observation::new(w, 0.7, -1.5).unwrap()]).unwrap();
        let phi_norm = dict.eval_basis(0.7).unwrap().iter().map(|v| v * v).sum::<f64>().sqrt();
        let want = 2.0 * 1.5 * 1.0 * phi_norm;
        assert!((zero_threshold(&data, &dict).unwrap() - want).abs() < 1e-9);
        let silent = Dataset::new(vec![Observation::new(vec![1.0], 0.2, 0.0).unwrap()]).unwrap();
        assert_eq!(zero_threshold(&silent, &dict).unwrap(), 0.0);
    }

    #[test]
    fn large_lambda_gives_zero() {
        let data = toy_data();
        let dict = Dictionary::fourier(3).unwrap();
        let thr = zero_threshold(&data, &dict).unwrap();
        let (a, report) = solve(&data, &dict, &SolverConfig::with_lambda(thr * 1.01)).unwrap();
        assert!(a.frobenius_norm() < 1e-10);
        assert_eq!(report.rank_hat, 0);
    }

    #[test]
    fn backends_agree() {
        let data = toy_data();
        let dict = Dictionary::fourier(3).unwrap();
        let cfg = |backend| SolverConfig {
            lambda: 0.05,
            rel_tol: 1e-13,
            backend,
            ..SolverConfig::default()
        };
        let (a, _) = solve(&data, &dict, &cfg(Backend::Gram)).unwrap();
        let (b, _) = solve(&data, &dict, &cfg(Backend::Streaming)).unwrap();
        assert!((a.as_matrix() - b.as_matrix()).norm() < 1e-6);
    }

    #[test]
    fn monotone_trace_with_restart() {
        let data = toy_data();
        let dict = Dictionary::fourier(5).unwrap();
        let (_, report) = solve(&data, &dict, &SolverConfig::with_lambda(0.02)).unwrap();
        for w in report.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(report.converged);
        assert!(report.rank_hat <= 3);
    }

    #[test]
    fn oversized_fixed_step_diverges_without_restart() {
        let data = toy_data();
        let dict = Dictionary::fourier(3).unwrap();
        let cfg = SolverConfig {
            lambda: 0.0,
            step: StepRule::Fixed(1e3),
            restart: false,
            max_iter: 2000,
            ..SolverConfig::default()
        };
        assert!(matches!(
            solve(&data, &dict, &cfg),
            Err(VcmError::Divergence { .. }) | Err(VcmError::Numerical(_))
        ));
    }

    #[test]
    fn config_json() {
        let cfg: SolverConfig =
            serde_json::from_str(r#"{"lambda":0.3,"step":{"fixed":0.1}}"#).unwrap();
        assert_eq!(cfg.step, StepRule::Fixed(0.1));
        assert_eq!(cfg.max_iter, 5000);
        assert!(SolverConfig::with_lambda(-1.0).validate().is_err());
    }
}
