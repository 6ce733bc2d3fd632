use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{info, warn};
use vcm_core::experiments::{self, ExperimentSettings, LPolicy, LambdaMode};
use vcm_core::simulate::{self, DesignKind, NoiseKind, Truth};
use vcm_core::tuning::{self, DesignMoments, NoiseSpec, SelectLInput, TuningParams};
use vcm_core::{
    solver, ApproxSpec, Dataset, Dictionary, DictionarySpec, Scenario, SolverConfig, VcFunction, VcmError,
};

use crate::io::{self, OutDir};

const F_GRID_POINTS: usize = 201;

/// Manifest written last into every output directory.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub seed: Option<u64>,
    pub quad_nodes: Option<usize>,
    pub lambda: Option<f64>,
    pub lambda_rule: Option<String>,
    pub config: Value,
    pub outputs: Vec<String>,
}

impl Manifest {
    fn new(command: &str) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: None,
            quad_nodes: io::quad_override()?.map(|q| q.node_count()),
            lambda: None,
            lambda_rule: None,
            config: Value::Null,
            outputs: Vec::new(),
        })
    }

    fn finish(mut self, out: &mut OutDir) -> Result<()> {
        self.outputs = out.written().to_vec();
        out.write_json("run.json", &self)
    }
}

/// Tuning inputs for `estimate --lambda auto` and `tune`; unset fields fall
/// back to the scenario.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningConfig {
    pub sigma: Option<f64>,
    pub noise: Option<NoiseKind>,
    #[serde(rename = "K")]
    pub k: Option<f64>,
    pub c_star: Option<f64>,
    pub approx: Option<ApproxSpec>,
    pub s: Option<usize>,
    #[serde(rename = "C")]
    pub c: Option<f64>,
}

pub fn load_dictionary(arg: &str) -> Result<(Dictionary, DictionarySpec)> {
    let mut spec: DictionarySpec = io::load_json(arg, "dictionary")?;
    if let Some(q) = io::quad_override()? {
        spec.measure.quadrature = Some(q);
    }
    let dict = Dictionary::from_spec(&spec).context("invalid dictionary")?;
    Ok((dict, spec))
}

pub fn load_scenario(arg: &str, seed: Option<u64>) -> Result<Scenario> {
    let (text, origin) = io::read_arg(arg, "scenario")?;
    let mut sc: Scenario = serde_json::from_str(&text).with_context(|| format!("scenario ({origin}) is invalid"))?;
    if let Some(q) = io::quad_override()? {
        sc.measure.quadrature = Some(q);
    }
    if let Some(s) = seed {
        sc.seed = s;
    }
    sc.validate().with_context(|| format!("scenario ({origin}) is invalid"))?;
    Ok(sc)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = io::read_text(path, "data")?;
    Dataset::from_csv(&text).with_context(|| format!("data file '{}'", path.display()))
}

fn load_settings(arg: Option<&str>, mode: Option<LambdaMode>, jobs: usize) -> Result<ExperimentSettings> {
    let mut settings: ExperimentSettings = match arg {
        Some(a) => io::load_json(a, "settings")?,
        None => ExperimentSettings::default(),
    };
    if let Some(m) = mode {
        settings.lambda_mode = m;
    }
    settings.jobs = jobs;
    settings.approx.validate()?;
    settings.solver.validate()?;
    Ok(settings)
}

/// Ω from the canonical design when the scenario declares it, else from the
/// observed covariates, else from the scenario's design.
fn resolve_moments(sc: Option<&Scenario>, data: Option<&Dataset>) -> Result<DesignMoments> {
    if let Some(sc) = sc {
        if matches!(sc.design, DesignKind::CanonicalUniform) {
            return Ok(DesignMoments::canonical_uniform(sc.p)?);
        }
    }
    if let Some(data) = data {
        let rows: Vec<Vec<f64>> = data.observations().iter().map(|o| o.w.clone()).collect();
        return Ok(DesignMoments::from_samples(&rows)?);
    }
    match sc {
        Some(sc) => Ok(sc.design_moments()?),
        None => bail!("design moments need --data or --scenario"),
    }
}

fn resolve_params(
    cfg: &TuningConfig,
    sc: Option<&Scenario>,
    moments: DesignMoments,
    dict: &Dictionary,
    n: usize,
) -> Result<TuningParams> {
    let p = moments.p();
    if let Some(sc) = sc {
        if sc.p != p {
            bail!("scenario has p = {} but the covariates have p = {p}", sc.p);
        }
    }
    let kind = cfg.noise.or(sc.map(|s| s.noise)).unwrap_or(NoiseKind::Gaussian);
    let sigma = match cfg.sigma.or(sc.map(|s| s.sigma)) {
        Some(s) => s,
        None => bail!("the noise level is unknown: set sigma in --tuning or pass --scenario"),
    };
    let defaults = kind.noise_spec(sigma);
    let noise = NoiseSpec {
        sigma,
        k: cfg.k.unwrap_or(defaults.k),
        c_star: cfg.c_star.unwrap_or(defaults.c_star),
    };
    let s = match cfg.s.or(sc.map(|s| s.s)) {
        Some(s) => s,
        None => {
            warn!("sparsity s unknown, assuming every component varies (s = p + 1)");
            p + 1
        }
    };
    let tp = TuningParams {
        noise,
        approx: cfg.approx.unwrap_or(ExperimentSettings::default().approx),
        s,
        moments,
        p,
        l: dict.l(),
        n,
        c_phi: dict.c_phi(),
        c: cfg.c.unwrap_or(1.0),
    };
    tp.validate()?;
    Ok(tp)
}

pub struct EstimateArgs<'a> {
    pub data: &'a Path,
    pub dict: &'a str,
    pub lambda: &'a str,
    pub solver: Option<&'a str>,
    pub tuning: Option<&'a str>,
    pub scenario: Option<&'a str>,
    pub out: &'a Path,
}

pub fn estimate(a: EstimateArgs) -> Result<()> {
    let mut manifest = Manifest::new("estimate")?;
    let data = load_dataset(a.data)?;
    let (dict, dict_spec) = load_dictionary(a.dict)?;
    let sc = a.scenario.map(|s| load_scenario(s, None)).transpose()?;
    let mut config: SolverConfig = match a.solver {
        Some(s) => io::load_json(s, "solver config")?,
        None => SolverConfig::default(),
    };
    let tuning_cfg: TuningConfig = match a.tuning {
        Some(t) => io::load_json(t, "tuning config")?,
        None => TuningConfig::default(),
    };
    let (lambda, rule) = if a.lambda.trim() == "auto" {
        let moments = resolve_moments(sc.as_ref(), Some(&data))?;
        let tp = resolve_params(&tuning_cfg, sc.as_ref(), moments, &dict, data.n())?;
        let (v, r) = tuning::auto_lambda(&tp)?;
        (v, r.to_string())
    } else {
        let v: f64 = a
            .lambda
            .trim()
            .parse()
            .with_context(|| format!("--lambda must be 'auto' or a number, got '{}'", a.lambda))?;
        (v, "fixed".to_string())
    };
    info!(lambda, rule = %rule, "resolved lambda");
    config.lambda = lambda;
    config.validate()?;

    let (a_hat, report) = solver::solve(&data, &dict, &config)?;
    if !report.converged {
        warn!(iterations = report.iterations, "solver stopped at max_iter before converging");
    }
    let fhat = VcFunction::new(a_hat.clone(), dict.clone())?;
    let mut grid = String::from("t");
    for j in 1..=data.p() {
        grid.push_str(&format!(",f_{j}"));
    }
    grid.push('\n');
    for i in 0..F_GRID_POINTS {
        let t = i as f64 / (F_GRID_POINTS - 1) as f64;
        grid.push_str(&t.to_string());
        for v in fhat.predict(t)? {
            grid.push_str(&format!(",{v}"));
        }
        grid.push('\n');
    }

    let mut out = OutDir::create(a.out)?;
    out.write("A_hat.csv", a_hat.to_csv().as_bytes())?;
    out.write_json(
        "report.json",
        &json!({
            "n": data.n(),
            "p": data.p(),
            "l": dict.l(),
            "lambda": lambda,
            "lambda_rule": rule,
            "dictionary": dict_spec,
            "solver": report,
        }),
    )?;
    out.write("f_hat_grid.csv", grid.as_bytes())?;
    out.write("trace.csv", report.trace_csv().as_bytes())?;
    manifest.seed = sc.as_ref().map(|s| s.seed);
    manifest.lambda = Some(lambda);
    manifest.lambda_rule = Some(rule);
    manifest.config = json!({
        "data": a.data,
        "dictionary": dict_spec,
        "solver": config,
        "tuning": tuning_cfg,
        "scenario": sc,
    });
    manifest.finish(&mut out)
}

pub fn simulate(scenario: &str, n: usize, seed: Option<u64>, dict: Option<&str>, out_dir: &Path) -> Result<()> {
    let mut manifest = Manifest::new("simulate")?;
    if n == 0 {
        bail!("--n must be positive");
    }
    let sc = load_scenario(scenario, seed)?;
    let dict = dict.map(load_dictionary).transpose()?;
    let functions = simulate::make_coefficients(&sc)?;
    let data = simulate::sample_dataset_with(&sc, &functions, n, sc.seed)?;
    let a0 = match &dict {
        Some((d, _)) => Some(simulate::truth_matrix(&functions, &sc, d)?),
        None => None,
    };
    let mut out = OutDir::create(out_dir)?;
    out.write("data.csv", data.to_csv().as_bytes())?;
    if let Some(a0) = &a0 {
        out.write("A0.csv", a0.to_csv().as_bytes())?;
    }
    let truth = Truth {
        scenario: sc.clone(),
        n,
        functions,
        dictionary: dict.as_ref().map(|d| d.1.clone()),
        a0_path: a0.as_ref().map(|_| "A0.csv".to_string()),
    };
    out.write_json("truth.json", &truth)?;
    manifest.seed = Some(sc.seed);
    manifest.config = json!({ "scenario": sc, "n": n, "dictionary": dict.map(|d| d.1) });
    manifest.finish(&mut out)
}

pub struct TuneArgs<'a> {
    pub dict: &'a str,
    pub scenario: Option<&'a str>,
    pub data: Option<&'a Path>,
    pub n: Option<usize>,
    pub tuning: Option<&'a str>,
    pub nuclear_norm: Option<f64>,
    pub select_l: bool,
    pub out: &'a Path,
}

pub fn tune(a: TuneArgs) -> Result<()> {
    let mut manifest = Manifest::new("tune")?;
    let (dict, dict_spec) = load_dictionary(a.dict)?;
    let sc = a.scenario.map(|s| load_scenario(s, None)).transpose()?;
    let data = a.data.map(load_dataset).transpose()?;
    let cfg: TuningConfig = match a.tuning {
        Some(t) => io::load_json(t, "tuning config")?,
        None => TuningConfig::default(),
    };
    let n = match (a.n, &data) {
        (Some(n), _) => n,
        (None, Some(d)) => d.n(),
        (None, None) => bail!("tune needs --n or --data"),
    };
    let moments = resolve_moments(sc.as_ref(), data.as_ref())?;
    let tp = resolve_params(&cfg, sc.as_ref(), moments, &dict, n)?;
    let nuclear = match (a.nuclear_norm, &sc) {
        (Some(v), _) => Some(v),
        (None, Some(sc)) => match simulate::ground_truth_matrix(sc, &dict) {
            Ok(a0) => Some(a0.nuclear_norm()?),
            Err(VcmError::Measure(msg)) => {
                warn!("skipping the truth nuclear norm: {msg}");
                None
            }
            Err(e) => return Err(e.into()),
        },
        (None, None) => None,
    };
    let select = a.select_l.then(|| SelectLInput {
        n,
        p: tp.p,
        s: tp.s,
        gamma: tp.approx.gamma,
        sigma: tp.noise.sigma,
        b: tp.approx.b,
        c_phi: tp.c_phi,
        c: tp.c,
    });
    let report = tuning::tune_report(&tp, nuclear, select.as_ref())?;
    info!(lambda = report.lambda, rule = %report.lambda_rule, "resolved lambda");
    let mut out = OutDir::create(a.out)?;
    out.write_json("tune.json", &report)?;
    manifest.seed = sc.as_ref().map(|s| s.seed);
    manifest.lambda = Some(report.lambda);
    manifest.lambda_rule = Some(report.lambda_rule.clone());
    manifest.config = json!({
        "dictionary": dict_spec,
        "scenario": sc,
        "data": a.data,
        "tuning": cfg,
        "n": n,
        "nuclear_norm": nuclear,
    });
    manifest.finish(&mut out)
}

/// Parses `lo:hi:k` into k log-spaced sample sizes.
pub fn parse_grid(s: &str) -> Result<Vec<usize>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        bail!("grid '{s}' must have the form lo:hi:k");
    }
    let num = |x: &str| -> Result<f64> { x.trim().parse().with_context(|| format!("'{x}' in grid '{s}' is not a number")) };
    let (lo, hi) = (num(parts[0])?, num(parts[1])?);
    let k: usize = parts[2]
        .trim()
        .parse()
        .with_context(|| format!("'{}' in grid '{s}' is not a count", parts[2]))?;
    Ok(experiments::log_grid(lo, hi, k)?)
}

pub struct RatesArgs<'a> {
    pub scenario: &'a str,
    pub dict: &'a str,
    pub n_grid: &'a str,
    pub replicates: usize,
    pub policy: LPolicy,
    pub settings: Option<&'a str>,
    pub lambda_mode: Option<LambdaMode>,
    pub jobs: usize,
    pub seed: Option<u64>,
    pub out: &'a Path,
}

pub fn rates(a: RatesArgs) -> Result<()> {
    let mut manifest = Manifest::new("rates")?;
    let sc = load_scenario(a.scenario, a.seed)?;
    let (dict, dict_spec) = load_dictionary(a.dict)?;
    let grid = parse_grid(a.n_grid)?;
    let settings = load_settings(a.settings, a.lambda_mode, a.jobs)?;
    let started = Instant::now();
    let report = experiments::rate_study(&sc, &dict, a.policy, &grid, a.replicates, &settings)?;
    let elapsed = started.elapsed().as_secs_f64();
    info!(
        slope = report.fitted_slope,
        target = report.target_slope,
        "fitted log-log slope"
    );
    let mut out = OutDir::create(a.out)?;
    out.write_json("report.json", &report)?;
    out.write("report.csv", report.to_csv().as_bytes())?;
    out.write_json("timing.json", &json!({ "runtime_seconds": elapsed, "jobs": a.jobs }))?;
    manifest.seed = Some(sc.seed);
    manifest.config = json!({
        "scenario": sc,
        "dictionary": dict_spec,
        "n_grid": grid,
        "replicates": a.replicates,
        "policy": a.policy,
        "settings": settings,
    });
    manifest.finish(&mut out)
}

pub struct VerifyArgs<'a> {
    pub scenario: &'a str,
    pub dict: &'a str,
    pub n: usize,
    pub trials: usize,
    pub settings: Option<&'a str>,
    pub lambda_mode: Option<LambdaMode>,
    pub jobs: usize,
    pub seed: Option<u64>,
    pub out: &'a Path,
}

pub fn verify_bounds(a: VerifyArgs) -> Result<()> {
    let mut manifest = Manifest::new("verify-bounds")?;
    let sc = load_scenario(a.scenario, a.seed)?;
    let (dict, dict_spec) = load_dictionary(a.dict)?;
    let settings = load_settings(a.settings, a.lambda_mode, a.jobs)?;
    let started = Instant::now();
    let report = experiments::bound_check(&sc, &dict, a.n, a.trials, &settings)?;
    let sigma = if a.trials >= 30 {
        Some(experiments::mc_sigma_norms(&sc, &dict, a.n, a.trials, &settings)?)
    } else {
        warn!("fewer than 30 trials, skipping the Monte Carlo norms of Sigma");
        None
    };
    let elapsed = started.elapsed().as_secs_f64();
    info!(
        coverage = report.coverage,
        nuclear_coverage = report.nuclear_coverage,
        "bound coverage"
    );
    let mut out = OutDir::create(a.out)?;
    out.write_json("bounds.json", &report)?;
    out.write("bounds.csv", report.to_csv().as_bytes())?;
    if let Some(s) = &sigma {
        out.write_json("sigma.json", s)?;
    }
    out.write_json("timing.json", &json!({ "runtime_seconds": elapsed, "jobs": a.jobs }))?;
    manifest.seed = Some(sc.seed);
    manifest.config = json!({
        "scenario": sc,
        "dictionary": dict_spec,
        "n": a.n,
        "trials": a.trials,
        "settings": settings,
    });
    manifest.finish(&mut out)
}

#[derive(Debug, Serialize)]
struct BasisInfo {
    dictionary: DictionarySpec,
    l: usize,
    c_phi: f64,
    sup_norm_constant: f64,
    sup_norm_grid: usize,
    gram_max_deviation: f64,
    gram_max_off_diagonal: f64,
    g1: f64,
    g2: f64,
}

pub fn basis_info(dict_arg: &str, grid: usize, out: Option<&Path>) -> Result<()> {
    let manifest = Manifest::new("basis-info")?;
    let (dict, spec) = load_dictionary(dict_arg)?;
    let gram = dict.gram_matrix()?;
    let info = BasisInfo {
        dictionary: spec.clone(),
        l: dict.l(),
        c_phi: dict.c_phi(),
        sup_norm_constant: dict.sup_norm_constant(grid)?,
        sup_norm_grid: grid,
        gram_max_deviation: gram.max_deviation,
        gram_max_off_diagonal: gram.max_off_diagonal,
        g1: dict.measure().g1(),
        g2: dict.measure().g2(),
    };
    let mut stdout = std::io::stdout().lock();
    match writeln!(stdout, "{}", serde_json::to_string_pretty(&info)?) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
        r => r?,
    }
    if let Some(dir) = out {
        let mut out = OutDir::create(dir)?;
        out.write_json("basis.json", &info)?;
        let mut manifest = manifest;
        manifest.config = json!({ "dictionary": spec, "grid": grid });
        manifest.finish(&mut out)?;
    }
    Ok(())
}
