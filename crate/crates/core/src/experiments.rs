//! Error metrics and Monte Carlo studies: stochastic-term bounds, oracle
//! inequalities and convergence rates.
//!
//! Every trial draws its data from its own seed (scenario seed, n, trial id)
//! and results are gathered in trial order, so reports do not depend on the
//! number of worker threads.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{ApproxSpec, Dictionary, DictionarySpec};
use crate::error::{Result, VcmError};
use crate::linalg;
use crate::model::{CoordinateMatrix, Dataset, Design, VcFunction};
use crate::rng::{self, Domain};
use crate::simulate::{self, ScalarFn, Scenario};
use crate::solver::{Problem, SolverConfig};
use crate::stats;
use crate::tuning::{self, BetaBound, DesignMoments, NoiseSpec, SelectLInput, TuningParams};

/// Constant of the expectation bound E‖Σ_R‖ ≤ 4.6√(M log d / n).
pub const RADEMACHER_CONSTANT: f64 = 4.6;
/// λ = 3.01‖Σ‖ in oracle mode, just above the 3‖Σ‖ requirement.
pub const ORACLE_FACTOR: f64 = 3.01;
/// Bound on ‖Â‖_* / ‖A₀‖_* implied by λ ≥ 3‖Σ‖.
pub const NUCLEAR_RATIO_BOUND: f64 = 5.0;
/// Point at which the pointwise error is recorded.
pub const POINTWISE_T: f64 = 0.5;
/// Absolute slack in coverage comparisons, so that solver round-off does not
/// count as a violation of a zero bound.
pub const COVERAGE_ATOL: f64 = 1e-10;

fn within(value: f64, bound: f64) -> bool {
    value <= bound + COVERAGE_ATOL
}

/// ‖Â − A₀‖₂², the squared Frobenius norm of the difference.
pub fn frobenius_error(a_hat: &CoordinateMatrix, a0: &CoordinateMatrix) -> Result<f64> {
    if a_hat.p() != a0.p() || a_hat.l() != a0.l() {
        return Err(VcmError::Shape(format!(
            "{}x{} vs {}x{}",
            a_hat.p(),
            a_hat.l(),
            a0.p(),
            a0.l()
        )));
    }
    Ok((a_hat.as_matrix() - a0.as_matrix()).norm_squared())
}

fn check_components<F>(fhat: &VcFunction, f_true: &[F]) -> Result<()> {
    if fhat.p() != f_true.len() {
        return Err(VcmError::Shape(format!(
            "estimate has {} components, truth has {}",
            fhat.p(),
            f_true.len()
        )));
    }
    Ok(())
}

/// (1/p)Σ_k ‖f̂_k − f_k‖²_{L₂(dμ)} by the dictionary's quadrature.
pub fn mse_l2<F: Fn(f64) -> f64>(fhat: &VcFunction, f_true: &[F]) -> Result<f64> {
    check_components(fhat, f_true)?;
    let measure = fhat.dict().measure();
    let q = measure.quadrature();
    let a = fhat.coeffs().as_matrix();
    let mut phi = vec![0.0; fhat.dict().l()];
    let mut total = 0.0;
    for (&t, &wq) in q.nodes().iter().zip(q.weights()) {
        fhat.dict().eval_into(t, &mut phi)?;
        let g = measure.g(t);
        let mut sq = 0.0;
        for (k, f) in f_true.iter().enumerate() {
            let est: f64 = a.row(k).iter().zip(&phi).map(|(x, y)| x * y).sum();
            sq += (est - f(t)).powi(2);
        }
        total += wq * g * sq;
    }
    let v = total / fhat.p() as f64;
    if !v.is_finite() {
        return Err(VcmError::Numerical("quadrature produced a non-finite error".into()));
    }
    Ok(v)
}

/// (1/p)Σ_k |f̂_k(t) − f_k(t)|.
pub fn pointwise_error<F: Fn(f64) -> f64>(fhat: &VcFunction, f_true: &[F], t: f64) -> Result<f64> {
    check_components(fhat, f_true)?;
    let est = fhat.predict(t)?;
    Ok(est.iter().zip(f_true).map(|(e, f)| (e - f(t)).abs()).sum::<f64>() / fhat.p() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// λ from the tuning formulas.
    #[default]
    Formula,
    /// λ = 3.01‖Σ‖ with Σ computed from the known truth.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSettings {
    pub approx: ApproxSpec,
    /// Noise constants; defaults to those of the scenario's noise kind.
    pub noise: Option<NoiseSpec>,
    #[serde(rename = "C")]
    pub c: f64,
    pub solver: SolverConfig,
    pub lambda_mode: LambdaMode,
    /// Worker threads; 0 uses the global pool. Not part of serialized
    /// reports, which are identical for any worker count.
    #[serde(skip)]
    pub jobs: usize,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            approx: ApproxSpec {
                b: 0.0,
                b1: 0.0,
                gamma: 1.0,
                empirical: false,
            },
            noise: None,
            c: 1.0,
            solver: SolverConfig::default(),
            lambda_mode: LambdaMode::Formula,
            jobs: 0,
        }
    }
}

impl ExperimentSettings {
    fn noise_for(&self, sc: &Scenario) -> NoiseSpec {
        self.noise.unwrap_or_else(|| sc.noise_spec())
    }
}

fn in_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| VcmError::Numerical(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Everything fixed across the trials of one dictionary size.
struct Context<'a> {
    sc: &'a Scenario,
    fs: &'a [ScalarFn],
    dict: Dictionary,
    a0: CoordinateMatrix,
    moments: DesignMoments,
    settings: &'a ExperimentSettings,
}

impl<'a> Context<'a> {
    fn new(
        sc: &'a Scenario,
        fs: &'a [ScalarFn],
        dict: Dictionary,
        settings: &'a ExperimentSettings,
    ) -> Result<Self> {
        let a0 = simulate::truth_matrix(fs, sc, &dict)?;
        Ok(Self {
            sc,
            fs,
            dict,
            a0,
            moments: sc.design_moments()?,
            settings,
        })
    }

    fn params(&self, n: usize) -> TuningParams {
        TuningParams {
            noise: self.settings.noise_for(self.sc),
            approx: self.settings.approx,
            s: self.sc.s,
            moments: self.moments.clone(),
            p: self.sc.p,
            l: self.dict.l(),
            n,
            c_phi: self.dict.c_phi(),
            c: self.settings.c,
        }
    }

    fn data(&self, n: usize, trial: usize) -> Result<Dataset> {
        simulate::sample_dataset_with(self.sc, self.fs, n, rng::trial_seed(self.sc.seed, n, trial))
    }

    fn truth_fns(&self) -> Vec<impl Fn(f64) -> f64 + '_> {
        self.fs.iter().map(|f| move |t| f.eval(t)).collect()
    }
}

/// Σ = (1/n)Σ(y_i − ⟨X_i, A₀⟩)X_i, the noise plus truncation remainder.
fn sigma_matrix(design: &Design, a0: &CoordinateMatrix) -> nalgebra::DMatrix<f64> {
    let a = a0.as_matrix();
    design.weighted_sum(|i| design.y(i) - design.inner(a, i))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaNorms {
    pub n: usize,
    pub trials: usize,
    pub mean_sigma_r: f64,
    pub mean_sigma: f64,
    /// 4.6√(M log d / n)
    pub bound_sigma_r: f64,
    /// The high-probability bound on ‖Σ‖ at t = log d.
    pub bound_sigma: f64,
    /// Fraction of trials with ‖Σ_R‖ above its expectation bound.
    pub violation_rate_sigma_r: f64,
    /// Fraction of trials with ‖Σ‖ above its high-probability bound.
    pub violation_rate_sigma: f64,
    pub sigma_r: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Bound on ‖Σ‖ holding with probability ≥ 1 − 2e^{−t}, evaluated at t = log d.
pub fn sigma_bound(tp: &TuningParams) -> Result<f64> {
    tp.validate()?;
    let log_d = tp.log_d();
    let t = log_d;
    let n = tp.n as f64;
    let s1 = (tp.s - 1) as f64;
    let scale = tp.noise.sigma * tp.noise.c_star
        + 2.0 * tp.approx.b * s1.sqrt() / (tp.l as f64).powf(tp.approx.gamma);
    let k = tp.noise.k;
    let orlicz = (k * (k * tp.c_phi / tp.moments.omega_max).ln()).max(1.0);
    let first = (tp.m() * (t + log_d) / n).sqrt();
    let second = tp.c_phi * (tp.l as f64).sqrt() * (t + log_d) * orlicz / n;
    Ok(scale * first.max(second))
}

/// Monte Carlo spectral norms of Σ_R = (1/n)Σε_iX_i and Σ against their bounds.
pub fn mc_sigma_norms(
    sc: &Scenario,
    dict: &Dictionary,
    n: usize,
    trials: usize,
    settings: &ExperimentSettings,
) -> Result<SigmaNorms> {
    if trials < 30 {
        return Err(VcmError::Domain(format!("at least 30 trials are required, got {trials}")));
    }
    let fs = simulate::make_coefficients(sc)?;
    let ctx = Context::new(sc, &fs, dict.clone(), settings)?;
    let tp = ctx.params(n);
    let bound_sigma_r = RADEMACHER_CONSTANT * (tp.m() * tp.log_d() / n as f64).sqrt();
    let bound_sigma = sigma_bound(&tp)?;
    let pairs = in_pool(settings.jobs, || {
        (0..trials)
            .into_par_iter()
            .map(|trial| -> Result<(f64, f64)> {
                let data = ctx.data(n, trial)?;
                let design = Design::new(&data, &ctx.dict)?;
                let mut eps = rng::stream(rng::trial_seed(sc.seed, n, trial), Domain::Rademacher, 0);
                let signs: Vec<f64> = (0..n)
                    .map(|_| if eps.random::<bool>() { 1.0 } else { -1.0 })
                    .collect();
                let sr = linalg::spectral_norm(&design.weighted_sum(|i| signs[i]))?;
                let s = linalg::spectral_norm(&sigma_matrix(&design, &ctx.a0))?;
                Ok((sr, s))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let sigma_r: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let sigma: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let rate = |v: &[f64], b: f64| v.iter().filter(|&&x| x > b).count() as f64 / v.len() as f64;
    Ok(SigmaNorms {
        n,
        trials,
        mean_sigma_r: stats::mean(&sigma_r),
        mean_sigma: stats::mean(&sigma),
        bound_sigma_r,
        bound_sigma,
        violation_rate_sigma_r: rate(&sigma_r, bound_sigma_r),
        violation_rate_sigma: rate(&sigma, bound_sigma),
        sigma_r,
        sigma,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaScaling {
    pub points: Vec<SigmaNorms>,
    /// Slope of log mean ‖Σ_R‖ against log n.
    pub slope: f64,
    pub slope_stderr: f64,
}

/// mc_sigma_norms over an n grid with a log-log slope of the mean ‖Σ_R‖.
pub fn sigma_scaling(
    sc: &Scenario,
    dict: &Dictionary,
    n_grid: &[usize],
    trials: usize,
    settings: &ExperimentSettings,
) -> Result<SigmaScaling> {
    check_grid(n_grid, 2)?;
    let points = n_grid
        .iter()
        .map(|&n| mc_sigma_norms(sc, dict, n, trials, settings))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean_sigma_r.ln()).collect();
    let fit = stats::linear_fit(&xs, &ys)?;
    Ok(SigmaScaling {
        points,
        slope: fit.slope,
        slope_stderr: fit.slope_stderr,
    })
}

/// k log-spaced sample sizes from lo to hi, rounded to integers.
pub fn log_grid(lo: f64, hi: f64, k: usize) -> Result<Vec<usize>> {
    if !(lo >= 1.0 && hi >= lo && lo.is_finite() && hi.is_finite()) || k == 0 {
        return Err(VcmError::Domain(format!(
            "grid {lo}:{hi}:{k} needs 1 <= lo <= hi and k >= 1"
        )));
    }
    if k == 1 {
        return Ok(vec![lo.round() as usize]);
    }
    let grid: Vec<usize> = (0..k)
        .map(|i| (lo * (hi / lo).powf(i as f64 / (k - 1) as f64)).round() as usize)
        .collect();
    check_grid(&grid, 1)?;
    Ok(grid)
}

fn check_grid(n_grid: &[usize], min_points: usize) -> Result<()> {
    if n_grid.len() < min_points {
        return Err(VcmError::Domain(format!(
            "the n grid needs at least {min_points} points, got {}",
            n_grid.len()
        )));
    }
    if n_grid.iter().any(|&n| n == 0) || n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(VcmError::Domain("n grid values must be positive and strictly increasing".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Frobenius,
    MseL2,
    Pointwise,
    NuclearRatio,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Frobenius => "frobenius",
            Metric::MseL2 => "mse_l2",
            Metric::Pointwise => "pointwise",
            Metric::NuclearRatio => "nuclear_ratio",
        }
    }
}

/// One row of the long-format output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub n: usize,
    pub trial: usize,
    pub metric: Metric,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub n: usize,
    pub l: usize,
    /// Values of the report's metric, in trial order.
    pub errors: Vec<f64>,
    pub median: f64,
    pub bound: f64,
    pub coverage: f64,
    pub mean_lambda: f64,
    pub beta: BetaBound,
    pub n_star: f64,
    pub n_star_star: f64,
    pub below_n_star: bool,
    pub nonconverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub study: String,
    pub metric: Metric,
    pub scenario: Scenario,
    pub dictionary: DictionarySpec,
    pub settings: ExperimentSettings,
    pub grid: Vec<GridPoint>,
    pub fitted_slope: Option<f64>,
    pub slope_stderr: Option<f64>,
    pub target_slope: Option<f64>,
    /// Fraction of all trials with error ≤ bound.
    pub coverage: f64,
    /// Fraction of trials with ‖Â‖_* ≤ 5‖A₀‖_*.
    pub nuclear_coverage: f64,
    pub records: Vec<TrialRecord>,
    #[serde(skip)]
    pub runtime_seconds: f64,
}

impl ExperimentReport {
    /// Long format with columns n, trial, metric, value, bound.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,trial,metric,value,bound\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{},{}\n", r.n, r.trial, r.metric.name(), r.value, r.bound));
        }
        out
    }

    pub fn medians(&self) -> Vec<f64> {
        self.grid.iter().map(|g| g.median).collect()
    }
}

struct TrialOutcome {
    lambda: f64,
    frobenius: f64,
    mse_l2: f64,
    pointwise: f64,
    nuclear_ratio: f64,
    converged: bool,
}

fn lambda_for(ctx: &Context, tp: &TuningParams, design: &Design) -> Result<f64> {
    match ctx.settings.lambda_mode {
        LambdaMode::Formula => Ok(tuning::auto_lambda(tp)?.0),
        LambdaMode::Oracle => {
            Ok(ORACLE_FACTOR * linalg::spectral_norm(&sigma_matrix(design, &ctx.a0))?)
        }
    }
}

fn run_trial(ctx: &Context, n: usize, trial: usize) -> Result<TrialOutcome> {
    let data = ctx.data(n, trial)?;
    let problem = Problem::new(&data, &ctx.dict, ctx.settings.solver.backend)?;
    let tp = ctx.params(n);
    let lambda = lambda_for(ctx, &tp, problem.design())?;
    let config = SolverConfig {
        lambda,
        ..ctx.settings.solver.clone()
    };
    let (a_hat, report) = problem.solve(&config)?;
    let fhat = VcFunction::new(a_hat.clone(), ctx.dict.clone())?;
    let truth = ctx.truth_fns();
    let nuc0 = ctx.a0.nuclear_norm()?;
    Ok(TrialOutcome {
        lambda,
        frobenius: frobenius_error(&a_hat, &ctx.a0)?,
        mse_l2: mse_l2(&fhat, &truth)?,
        pointwise: pointwise_error(&fhat, &truth, POINTWISE_T)?,
        nuclear_ratio: if nuc0 > 0.0 {
            report.nuclear_norm_hat / nuc0
        } else if report.nuclear_norm_hat == 0.0 {
            0.0
        } else {
            f64::INFINITY
        },
        converged: report.converged,
    })
}

fn metric_value(o: &TrialOutcome, m: Metric) -> f64 {
    match m {
        Metric::Frobenius => o.frobenius,
        Metric::MseL2 => o.mse_l2,
        Metric::Pointwise => o.pointwise,
        Metric::NuclearRatio => o.nuclear_ratio,
    }
}

/// Theoretical bound for each metric: C·p·β/n for the Frobenius error, the
/// risk bounds of the coefficient functions for the others.
fn metric_bound(ctx: &Context, tp: &TuningParams, beta: &BetaBound, m: Metric) -> Result<f64> {
    let n = tp.n as f64;
    let p = tp.p as f64;
    let l = tp.l as f64;
    let s = tp.s as f64;
    let a = &tp.approx;
    Ok(match m {
        Metric::Frobenius => tp.c * p * beta.beta / n,
        Metric::MseL2 => tp.c * beta.beta / n + 2.0 * a.b1 * a.b1 * s / (p * l.powf(2.0 * a.gamma + 1.0)),
        Metric::Pointwise => {
            let phi2: f64 = ctx.dict.eval_basis(POINTWISE_T)?.iter().map(|v| v * v).sum();
            tp.c * phi2 * beta.beta / n + 2.0 * a.b * a.b * s / (p * l.powf(2.0 * a.gamma))
        }
        Metric::NuclearRatio => NUCLEAR_RATIO_BOUND,
    })
}

const ALL_METRICS: [Metric; 4] = [
    Metric::Frobenius,
    Metric::MseL2,
    Metric::Pointwise,
    Metric::NuclearRatio,
];

fn run_point(
    ctx: &Context,
    n: usize,
    trials: usize,
    metric: Metric,
    records: &mut Vec<TrialRecord>,
) -> Result<(GridPoint, usize)> {
    let outcomes = in_pool(ctx.settings.jobs, || {
        (0..trials)
            .into_par_iter()
            .map(|trial| run_trial(ctx, n, trial))
            .collect::<Result<Vec<_>>>()
    })??;
    let tp = ctx.params(n);
    let beta = tuning::beta_bound(&tp, ctx.a0.nuclear_norm()?)?;
    let th = tuning::sample_thresholds(&tp)?;
    let mut bounds = [0.0; 4];
    for (b, m) in bounds.iter_mut().zip(ALL_METRICS) {
        *b = metric_bound(ctx, &tp, &beta, m)?;
    }
    let mut nuclear_ok = 0;
    for (trial, o) in outcomes.iter().enumerate() {
        for (m, b) in ALL_METRICS.iter().zip(bounds) {
            records.push(TrialRecord {
                n,
                trial,
                metric: *m,
                value: metric_value(o, *m),
                bound: b,
            });
        }
        if within(o.nuclear_ratio, NUCLEAR_RATIO_BOUND) {
            nuclear_ok += 1;
        }
    }
    let errors: Vec<f64> = outcomes.iter().map(|o| metric_value(o, metric)).collect();
    let bound = bounds[ALL_METRICS.iter().position(|&m| m == metric).unwrap()];
    let covered = errors.iter().filter(|&&e| within(e, bound)).count();
    let lambdas: Vec<f64> = outcomes.iter().map(|o| o.lambda).collect();
    Ok((
        GridPoint {
            n,
            l: ctx.dict.l(),
            median: stats::median(&errors),
            coverage: covered as f64 / trials as f64,
            errors,
            bound,
            mean_lambda: stats::mean(&lambdas),
            beta,
            n_star: th.n_star,
            n_star_star: th.n_star_star,
            below_n_star: (n as f64) < th.n_star,
            nonconverged: outcomes.iter().filter(|o| !o.converged).count(),
        },
        nuclear_ok,
    ))
}

fn assemble(
    study: &str,
    metric: Metric,
    sc: &Scenario,
    dict: &Dictionary,
    settings: &ExperimentSettings,
    points: Vec<(GridPoint, usize)>,
    records: Vec<TrialRecord>,
    target_slope: Option<f64>,
    fit_slope: bool,
    started: Instant,
) -> Result<ExperimentReport> {
    let total: usize = points.iter().map(|(g, _)| g.errors.len()).sum();
    let covered: f64 = points.iter().map(|(g, _)| g.coverage * g.errors.len() as f64).sum();
    let nuclear_ok: usize = points.iter().map(|(_, k)| k).sum();
    let grid: Vec<GridPoint> = points.into_iter().map(|(g, _)| g).collect();
    let (fitted_slope, slope_stderr) = if fit_slope {
        let xs: Vec<f64> = grid.iter().map(|g| (g.n as f64).ln()).collect();
        let ys: Vec<f64> = grid.iter().map(|g| g.median.ln()).collect();
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(VcmError::Numerical(
                "median error is zero or non-finite, the log-log fit is degenerate".into(),
            ));
        }
        let fit = stats::linear_fit(&xs, &ys)?;
        (Some(fit.slope), Some(fit.slope_stderr))
    } else {
        (None, None)
    };
    Ok(ExperimentReport {
        study: study.to_string(),
        metric,
        scenario: sc.clone(),
        dictionary: dict.to_spec(),
        settings: settings.clone(),
        grid,
        fitted_slope,
        slope_stderr,
        target_slope,
        coverage: if total == 0 { 0.0 } else { covered / total as f64 },
        nuclear_coverage: if total == 0 { 0.0 } else { nuclear_ok as f64 / total as f64 },
        records,
        runtime_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Full pipeline at one n: Frobenius error and L₂ risk against the
/// theoretical bounds, and the nuclear-norm ratio ‖Â‖_*/‖A₀‖_*.
pub fn bound_check(
    sc: &Scenario,
    dict: &Dictionary,
    n: usize,
    trials: usize,
    settings: &ExperimentSettings,
) -> Result<ExperimentReport> {
    if trials == 0 {
        return Err(VcmError::Domain("trials must be positive".into()));
    }
    let started = Instant::now();
    let fs = simulate::make_coefficients(sc)?;
    let ctx = Context::new(sc, &fs, dict.clone(), settings)?;
    let mut records = Vec::new();
    let point = run_point(&ctx, n, trials, Metric::Frobenius, &mut records)?;
    assemble("bound_check", Metric::Frobenius, sc, dict, settings, vec![point], records, None, false, started)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LPolicy {
    /// Keep the dictionary as given.
    Fixed,
    /// Resize the dictionary to l̂ from the selection rules at every n.
    SelectL,
}

/// Slope of log median error against log n. The fixed policy reports the
/// Frobenius error with target −1, the selection policy the L₂ risk with
/// target −(2γ+1)/(2γ+2).
pub fn rate_study(
    sc: &Scenario,
    dict: &Dictionary,
    policy: LPolicy,
    n_grid: &[usize],
    replicates: usize,
    settings: &ExperimentSettings,
) -> Result<ExperimentReport> {
    check_grid(n_grid, 4)?;
    if (n_grid[n_grid.len() - 1] as f64) < 10.0 * n_grid[0] as f64 {
        return Err(VcmError::Domain("the n grid must span at least one decade".into()));
    }
    if replicates == 0 {
        return Err(VcmError::Domain("replicates must be positive".into()));
    }
    let started = Instant::now();
    let fs = simulate::make_coefficients(sc)?;
    let gamma = settings.approx.gamma;
    let (metric, target) = match policy {
        LPolicy::Fixed => (Metric::Frobenius, -1.0),
        LPolicy::SelectL => (Metric::MseL2, -(2.0 * gamma + 1.0) / (2.0 * gamma + 2.0)),
    };
    let mut records = Vec::new();
    let mut points = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let d = match policy {
            LPolicy::Fixed => dict.clone(),
            LPolicy::SelectL => {
                let sel = tuning::select_l(&select_input(sc, dict, n, settings))?;
                dict.resized(sel.l_hat)?
            }
        };
        let ctx = Context::new(sc, &fs, d, settings)?;
        points.push(run_point(&ctx, n, replicates, metric, &mut records)?);
    }
    assemble("rate_study", metric, sc, dict, settings, points, records, Some(target), true, started)
}

/// Inputs of the l selection rules for a scenario at sample size n.
pub fn select_input(sc: &Scenario, dict: &Dictionary, n: usize, settings: &ExperimentSettings) -> SelectLInput {
    SelectLInput {
        n,
        p: sc.p,
        s: sc.s,
        gamma: settings.approx.gamma,
        sigma: settings.noise_for(sc).sigma,
        b: settings.approx.b,
        c_phi: dict.c_phi(),
        c: settings.c,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseDoubling {
    pub n: usize,
    pub median_base: f64,
    pub median_doubled: f64,
    /// median_doubled / median_base, ≈ 4 when the error scales as σ².
    pub ratio: f64,
}

/// Median Frobenius error at σ and 2σ with the same data seeds.
pub fn noise_doubling(
    sc: &Scenario,
    dict: &Dictionary,
    n: usize,
    replicates: usize,
    settings: &ExperimentSettings,
) -> Result<NoiseDoubling> {
    let doubled = Scenario {
        sigma: 2.0 * sc.sigma,
        ..sc.clone()
    };
    let base = bound_check(sc, dict, n, replicates, settings)?;
    let twice = bound_check(&doubled, dict, n, replicates, settings)?;
    let (mb, md) = (base.grid[0].median, twice.grid[0].median);
    Ok(NoiseDoubling {
        n,
        median_base: mb,
        median_doubled: md,
        ratio: md / mb,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGridRow {
    pub lambda: f64,
    pub frobenius: f64,
    pub rank_hat: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGridTable {
    pub n: usize,
    pub rows: Vec<LambdaGridRow>,
    pub theoretical: LambdaGridRow,
    pub zero_threshold: f64,
    pub best_lambda: f64,
    pub best_error: f64,
    /// Error at the theoretical λ over the best error among the grid and the theoretical λ.
    pub ratio: f64,
}

/// Frobenius error along a λ grid next to the theoretical λ, on one dataset.
pub fn lambda_grid_compare(
    sc: &Scenario,
    dict: &Dictionary,
    n: usize,
    lambda_grid: &[f64],
    settings: &ExperimentSettings,
) -> Result<LambdaGridTable> {
    if lambda_grid.is_empty() {
        return Err(VcmError::Domain("the lambda grid is empty".into()));
    }
    let fs = simulate::make_coefficients(sc)?;
    let ctx = Context::new(sc, &fs, dict.clone(), settings)?;
    let data = ctx.data(n, 0)?;
    let problem = Problem::new(&data, &ctx.dict, settings.solver.backend)?;
    let tp = ctx.params(n);
    let theo_lambda = lambda_for(&ctx, &tp, problem.design())?;
    let eval = |lambda: f64| -> Result<LambdaGridRow> {
        let config = SolverConfig {
            lambda,
            ..settings.solver.clone()
        };
        let (a, report) = problem.solve(&config)?;
        Ok(LambdaGridRow {
            lambda,
            frobenius: frobenius_error(&a, &ctx.a0)?,
            rank_hat: report.rank_hat,
        })
    };
    let rows = in_pool(settings.jobs, || {
        lambda_grid.par_iter().map(|&l| eval(l)).collect::<Result<Vec<_>>>()
    })??;
    let theoretical = eval(theo_lambda)?;
    let best = rows
        .iter()
        .chain(std::iter::once(&theoretical))
        .min_by(|a, b| a.frobenius.total_cmp(&b.frobenius))
        .expect("grid is nonempty");
    let (best_lambda, best_error) = (best.lambda, best.frobenius);
    let ratio = if best_error > 0.0 {
        theoretical.frobenius / best_error
    } else if theoretical.frobenius == 0.0 {
        1.0
    } else {
        f64::INFINITY
    };
    Ok(LambdaGridTable {
        n,
        rows,
        theoretical,
        zero_threshold: problem.zero_threshold()?,
        best_lambda,
        best_error,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn frobenius_examples() {
        let a = CoordinateMatrix::new(DMatrix::from_fn(2, 3, |i, j| (i + j) as f64)).unwrap();
        assert_eq!(frobenius_error(&a, &a).unwrap(), 0.0);
        let mut d = a.as_matrix().clone();
        d[(0, 0)] += 1.0;
        d[(1, 1)] += 2.0;
        let b = CoordinateMatrix::new(d).unwrap();
        assert_eq!(frobenius_error(&b, &a).unwrap(), 5.0);
        assert!(frobenius_error(&a, &CoordinateMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn mse_of_unit_basis_residual() {
        let dict = Dictionary::fourier(5).unwrap();
        let a = DMatrix::from_fn(3, 5, |_, j| if j == 1 { 1.0 } else { 0.0 });
        let fhat = VcFunction::new(CoordinateMatrix::new(a).unwrap(), dict).unwrap();
        let zero = |_t: f64| 0.0;
        let v = mse_l2(&fhat, &[zero, zero, zero]).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pointwise_average() {
        let dict = Dictionary::fourier(1).unwrap();
        let a = DMatrix::from_row_slice(3, 1, &[3.0, 0.0, 0.0]);
        let fhat = VcFunction::new(CoordinateMatrix::new(a).unwrap(), dict).unwrap();
        let zero = |_t: f64| 0.0;
        assert!((pointwise_error(&fhat, &[zero, zero, zero], 0.3).unwrap() - 1.0).abs() < 1e-15);
        assert!(pointwise_error(&fhat, &[zero, zero, zero], 1.5).is_err());
    }

    #[test]
    fn log_spaced_grid() {
        assert_eq!(log_grid(1e3, 1e5, 5).unwrap(), vec![1000, 3162, 10000, 31623, 100000]);
        assert_eq!(log_grid(7.0, 7.0, 1).unwrap(), vec![7]);
        assert!(log_grid(10.0, 11.0, 5).is_err());
        assert!(log_grid(0.0, 10.0, 3).is_err());
    }

    #[test]
    fn too_few_trials() {
        let sc = Scenario::standard(2, 1, 1, 1.0, 1);
        let dict = Dictionary::fourier(3).unwrap();
        assert!(mc_sigma_norms(&sc, &dict, 100, 10, &ExperimentSettings::default()).is_err());
    }

    #[test]
    fn grid_preconditions() {
        let sc = Scenario::standard(2, 1, 1, 1.0, 1);
        let dict = Dictionary::fourier(3).unwrap();
        let s = ExperimentSettings::default();
        assert!(rate_study(&sc, &dict, LPolicy::Fixed, &[100, 200, 300], 2, &s).is_err());
        assert!(rate_study(&sc, &dict, LPolicy::Fixed, &[100, 200, 300, 400], 2, &s).is_err());
        assert!(rate_study(&sc, &dict, LPolicy::Fixed, &[100, 300, 200, 4000], 2, &s).is_err());
    }
}
