use std::fs;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use vcg_core::backtest::{replay, run_study, Manifest, StudyConfig};
use vcg_core::copula::CopulaParams;
use vcg_core::data::{
    align_and_join, format_float, ingest_csv, normalize, to_log, CsvSchema, JoinPolicy, NormalizationConfig, Panel,
    Transform,
};
use vcg_core::estimation::{fit, FitOptions, FitResult};
use vcg_core::forecast::{forecast_from_fit, summarize, ForecastConfig, ForecastEnsemble};
use vcg_core::likelihood::{correlation_path, filter_pass};
use vcg_core::meanvol::{GarchParams, VecmParams};
use vcg_core::scoring::{scope_score, standard_scopes};
use vcg_core::simulate::{simulate, SimulationConfig};
use vcg_core::spec::{ModelSpec, ParameterSet, ShapeParams};

use crate::{
    BacktestArgs, Command, ExportCorrArgs, ExportQuantilesArgs, FitArgs, ForecastArgs, IngestArgs, Join, ScoreArgs,
    SimulateArgs,
};

pub const TRUTH_SCHEMA_VERSION: u32 = 1;
pub const SCORE_SCHEMA_VERSION: u32 = 1;
pub const CORR_SCHEMA_VERSION: u32 = 1;

/// Parameters of a simulated panel.
#[derive(Debug, Serialize, Deserialize)]
pub struct Truth {
    pub schema_version: u32,
    pub spec: String,
    pub params: ParameterSet,
}

#[derive(Debug, Serialize)]
struct ScoreEntry {
    scope: String,
    energy_score: f64,
}

#[derive(Debug, Serialize)]
struct ScoreFile {
    schema_version: u32,
    origin_date: String,
    spec: String,
    trajectories: usize,
    horizon: usize,
    scores: Vec<ScoreEntry>,
}

pub fn run(cmd: Command) -> Result<String> {
    match cmd {
        Command::Ingest(a) => ingest(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Forecast(a) => forecast_cmd(a),
        Command::Score(a) => score_cmd(a),
        Command::Backtest(a) => backtest_cmd(a),
        Command::ExportQuantiles(a) => export_quantiles(a),
        Command::ExportCorrPath(a) => export_corr(a),
    }
}

/// Relative input paths missing from the working directory are looked up in
/// `$VCG_DATA_DIR`.
fn resolve(path: &Path) -> PathBuf {
    if path.is_relative() && !path.exists() {
        if let Some(dir) = std::env::var_os("VCG_DATA_DIR") {
            let p = Path::new(&dir).join(path);
            if p.exists() {
                return p;
            }
        }
    }
    path.to_path_buf()
}

fn parse_spec(s: &str) -> Result<ModelSpec> {
    Ok(s.parse::<ModelSpec>()?)
}

fn load_panel(path: &Path, last: Option<usize>) -> Result<Panel> {
    let path = resolve(path);
    let panel = Panel::read_csv(&path, Transform::Levels)?;
    match last {
        Some(n) if n < panel.len() => Ok(panel.slice(panel.len() - n, panel.len())?),
        _ => Ok(panel),
    }
}

fn model_panel(panel: Panel, spec: &ModelSpec) -> Result<Panel> {
    Ok(if spec.log_scale { to_log(&panel)? } else { panel })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn create(path: &Path) -> Result<Box<dyn Write>> {
    let f = fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzEncoder::new(f, Compression::default())))
    } else {
        Ok(Box::new(std::io::BufWriter::new(f)))
    }
}

fn read_ensemble(path: &Path) -> Result<(Vec<String>, ForecastEnsemble)> {
    let path = resolve(path);
    let f = fs::File::open(&path).with_context(|| format!("cannot open {}", path.display()))?;
    let r: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzDecoder::new(f))
    } else {
        Box::new(BufReader::new(f))
    };
    Ok(ForecastEnsemble::read_csv(r)?)
}

fn ingest(a: IngestArgs) -> Result<String> {
    let schema = CsvSchema::new(&a.date_column).with_columns(a.columns.clone());
    let mut series = Vec::new();
    for p in &a.input {
        series.extend(ingest_csv(&resolve(p), &schema)?);
    }
    let policy = match a.join {
        Join::Inner => JoinPolicy::Inner,
        Join::Ffill => JoinPolicy::ForwardFill { max_gap: a.max_gap },
    };
    let mut panel = align_and_join(&series, policy)?;
    if let Some(n) = &a.normalize {
        panel = normalize(&panel, &NormalizationConfig::load(&resolve(n))?)?;
    }
    panel.write_csv(&a.out)?;
    Ok(format!(
        "ingested {} series, {} rows ({} to {}) -> {}",
        panel.dim(),
        panel.len(),
        panel.dates()[0],
        panel.dates()[panel.len() - 1],
        a.out.display()
    ))
}

/// Built-in parameters for `k` series: moderate GARCH persistence, t
/// marginals with 8 degrees of freedom and correlation 0.3 between all
/// pairs; each cointegrating vector ties neighbouring series.
pub fn default_params(spec: &ModelSpec, k: usize) -> Result<ParameterSet> {
    spec.validate(k)?;
    let r = spec.rank();
    if r >= k && r > 0 {
        bail!("built-in parameters support rank below the number of series");
    }
    let mut alpha = DMatrix::zeros(k, r);
    let mut beta = DMatrix::zeros(k, r);
    for c in 0..r {
        beta[(c, c)] = 1.0;
        beta[(c + 1, c)] = -1.0;
        alpha[(c, c)] = -0.05;
        alpha[(c + 1, c)] = 0.05;
    }
    let scale = if spec.log_scale { 4e-4 } else { 1.0 };
    let garch = if !spec.sigma_time_varying {
        GarchParams::constant(scale)
    } else if spec.leverage {
        GarchParams::asymmetric(0.04 * scale, 0.04, 0.12, 0.87)
    } else {
        GarchParams::symmetric(0.04 * scale, 0.08, 0.88)
    };
    let m = k * (k - 1) / 2;
    let copula = if spec.rho_time_varying {
        CopulaParams::dynamic(10.0, vec![0.03; m], vec![0.9; m], vec![0.02; m])
    } else {
        CopulaParams::from_correlations(10.0, &vec![0.3; m])?
    };
    let p = ParameterSet {
        vecm: VecmParams {
            alpha,
            beta,
            gamma: DMatrix::zeros(k, k),
            intercept: spec.intercept.then(|| vec![0.0; k]),
        },
        garch: vec![garch; k],
        marginals: vec![
            ShapeParams {
                nu: 8.0,
                lambda: if spec.ncp { 0.3 } else { 0.0 },
            };
            k
        ],
        copula,
    };
    p.validate(spec)?;
    Ok(p)
}

fn simulate_cmd(a: SimulateArgs) -> Result<String> {
    let spec = parse_spec(&a.spec)?;
    let params = match &a.params {
        Some(path) => {
            let path = resolve(path);
            let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
            let t: Truth = serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))?;
            if t.schema_version != TRUTH_SCHEMA_VERSION {
                bail!("parameter file schema version {} is not {TRUTH_SCHEMA_VERSION}", t.schema_version);
            }
            t.params.validate(&spec)?;
            t.params
        }
        None => default_params(&spec, a.dim)?,
    };
    let k = params.dim();
    if !(a.start > 0.0) && spec.log_scale {
        bail!("log-scale simulation needs a positive starting level");
    }
    let start = if spec.log_scale { a.start.ln() } else { a.start };
    let mut cfg = SimulationConfig::new(a.len, vec![start; k], a.seed);
    cfg.discard = a.discard;
    let mut panel = simulate(&spec, &params, &cfg)?;
    if spec.log_scale {
        panel = Panel::with_weekdays(
            panel.dates()[0],
            panel.labels().to_vec(),
            panel.values().iter().map(|v| v.exp()).collect(),
            Transform::Levels,
        )?;
    }
    panel.write_csv(&a.out)?;
    let truth_path = a.truth.clone().unwrap_or_else(|| a.out.with_extension("truth.json"));
    write_json(
        &truth_path,
        &Truth {
            schema_version: TRUTH_SCHEMA_VERSION,
            spec: spec.id(),
            params,
        },
    )?;
    Ok(format!(
        "simulated {} rows of {} series from {} (seed {}) -> {}, parameters -> {}",
        panel.len(),
        k,
        spec.id(),
        a.seed,
        a.out.display(),
        truth_path.display()
    ))
}

fn fit_cmd(a: FitArgs) -> Result<String> {
    let spec = parse_spec(&a.spec)?;
    let panel = model_panel(load_panel(&a.data, a.last)?, &spec)?;
    let mut opts = FitOptions {
        stderr: a.stderr,
        ..FitOptions::default()
    };
    opts.bfgs.max_iter = a.max_iter;
    let f = fit(&panel, &spec, &opts, None)?;
    f.save(&a.out)?;
    Ok(format!(
        "fit {} on {} rows: loglik {:.4}, {} iterations, converged {}, max |grad| {:.2e} -> {}",
        spec.id(),
        panel.len(),
        f.loglik,
        f.iterations,
        f.converged,
        f.grad_max_norm,
        a.out.display()
    ))
}

fn load_fit(path: &Path) -> Result<FitResult> {
    Ok(FitResult::load(&resolve(path))?)
}

fn forecast_cmd(a: ForecastArgs) -> Result<String> {
    let f = load_fit(&a.fit)?;
    let levels = load_panel(&a.data, a.last)?;
    let labels = levels.labels().to_vec();
    let panel = model_panel(levels, &f.spec)?;
    let cfg = ForecastConfig {
        horizon: a.horizon,
        n_trajectories: a.trajectories,
        mode: a.mode.into(),
        seed: a.seed,
    };
    let e = forecast_from_fit(&panel, &f, &cfg)?.to_levels(a.cap);
    let mut w = create(&a.out)?;
    e.write_csv(&labels, &mut w)?;
    w.flush()?;
    drop(w);
    if let Some(p) = &a.summary {
        write_json(p, &summarize(&e, &vcg_core::forecast::default_probs(), &labels)?)?;
    }
    Ok(format!(
        "forecast {} from {}: {} trajectories x {} steps, {} capped -> {}",
        f.spec.id(),
        e.origin_date,
        e.n,
        e.horizon,
        e.cap_applied,
        a.out.display()
    ))
}

fn score_cmd(a: ScoreArgs) -> Result<String> {
    let (labels, e) = read_ensemble(&a.ensemble)?;
    let panel = load_panel(&a.data, None)?;
    if panel.labels() != labels.as_slice() {
        bail!("ensemble series {:?} do not match the panel columns {:?}", labels, panel.labels());
    }
    let origin = panel
        .dates()
        .iter()
        .position(|d| *d == e.origin_date)
        .with_context(|| format!("origin {} not in the panel", e.origin_date))?;
    if origin + e.horizon >= panel.len() {
        bail!("panel ends before the last forecast step ({} steps after {})", e.horizon, e.origin_date);
    }
    let realized: Vec<f64> = (1..=e.horizon).flat_map(|s| panel.row(origin + s).to_vec()).collect();
    let mut scores = Vec::new();
    for sc in standard_scopes(e.dim, e.horizon) {
        scores.push(ScoreEntry {
            scope: sc.label(&labels),
            energy_score: scope_score(&e, &realized, &sc)?,
        });
    }
    let headline = format!("{} = {}", scores[0].scope, format_float(scores[0].energy_score));
    if let Some(p) = &a.out {
        write_json(
            p,
            &ScoreFile {
                schema_version: SCORE_SCHEMA_VERSION,
                origin_date: e.origin_date.to_string(),
                spec: e.spec.id(),
                trajectories: e.n,
                horizon: e.horizon,
                scores,
            },
        )?;
    }
    Ok(format!("energy score of {} from {}: {headline}", e.spec.id(), e.origin_date))
}

fn backtest_cmd(a: BacktestArgs) -> Result<String> {
    let panel = load_panel(&a.data, None)?;
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    let res = match (&a.replay, &a.config) {
        (Some(m), _) => replay(&Manifest::load(&resolve(m))?, &panel, Some(&a.out))?,
        (None, Some(c)) => run_study(&panel, &StudyConfig::load(&resolve(c))?, Some(&a.out))?,
        (None, None) => bail!("either --config or --replay is required"),
    };
    let line = format!(
        "study: {}/{} tasks ok over {} origins, results in {}",
        res.total() - res.failed(),
        res.total(),
        res.manifest.origins.len(),
        a.out.display()
    );
    if let Err(e) = res.check() {
        println!("{line}");
        return Err(e.into());
    }
    Ok(line)
}

fn export_quantiles(a: ExportQuantilesArgs) -> Result<String> {
    let (labels, e) = read_ensemble(&a.ensemble)?;
    let probs: Vec<f64> = a.probs.iter().map(|p| p / 100.0).collect();
    let s = summarize(&e, &probs, &labels)?;
    let mut w = create(&a.out)?;
    s.write_quantile_csv(&mut w)?;
    w.flush()?;
    Ok(format!(
        "{} quantiles x {} steps x {} series -> {}",
        probs.len(),
        e.horizon,
        e.dim,
        a.out.display()
    ))
}

fn export_corr(a: ExportCorrArgs) -> Result<String> {
    let f = load_fit(&a.fit)?;
    let panel = model_panel(load_panel(&a.data, a.last)?, &f.spec)?;
    if panel.dim() < 2 {
        bail!("correlation paths need at least two series");
    }
    let out = filter_pass(&panel, &f.spec, &f.params, &f.init_policy())?;
    let paths = correlation_path(&out.dependence)?;
    let labels = panel.labels();
    let mut text = format!("# corr_path schema_version={CORR_SCHEMA_VERSION} spec={}\ndate", f.spec.id());
    for (i, j) in vcg_core::copula::pairs(panel.dim()) {
        text.push_str(&format!(",{}~{}", labels[i], labels[j]));
    }
    text.push('\n');
    for s in 0..out.dependence.len() {
        text.push_str(&panel.dates()[s + 2].to_string());
        for p in &paths {
            text.push(',');
            text.push_str(&format_float(p[s]));
        }
        text.push('\n');
    }
    fs::write(&a.out, text).with_context(|| format!("cannot write {}", a.out.display()))?;
    Ok(format!(
        "{} correlation paths over {} dates -> {}",
        paths.len(),
        out.dependence.len(),
        a.out.display()
    ))
}
