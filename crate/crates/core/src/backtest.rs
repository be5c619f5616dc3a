//! Rolling-window forecasting studies.
//!
//! An origin `o` is the 0-based index of the last in-sample row. The fit at
//! `o` uses the `window + 1` rows `o - window ..= o` (so `window`
//! transitions) and the forecast is scored against rows `o + 1 ..= o + h`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{format_float, to_log, Panel, Transform, DEFAULT_CAP};
use crate::error::{Error, Result};
use crate::estimation::{fit, FitOptions, FitResult};
use crate::forecast::{forecast_from_fit, ForecastConfig, ForecastEnsemble, Propagation};
use crate::par;
use crate::scoring::{improvement_table, scope_score, standard_scopes, ImprovementTable, Metric, Scope, ScoreReport};
use crate::spec::{ModelSpec, ParameterSet};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

fn d_window() -> usize {
    1000
}
fn d_horizon() -> usize {
    30
}
fn d_origins() -> usize {
    250
}
fn d_traj() -> usize {
    2048
}
fn d_cap() -> f64 {
    DEFAULT_CAP
}
fn d_true() -> bool {
    true
}
fn d_fail() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecEntry {
    /// Model id such as `rw_st_r` or `vecm1_st_rt_lev_ncp`.
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "d_window")]
    pub window: usize,
    #[serde(default = "d_horizon")]
    pub horizon: usize,
    #[serde(default = "d_origins")]
    pub n_origins: usize,
    #[serde(default = "d_traj")]
    pub n_trajectories: usize,
    pub seed: u64,
    #[serde(default = "d_cap")]
    pub cap: f64,
    /// Reuse the previous origin's estimate as the starting point.
    #[serde(default = "d_true")]
    pub warm_start: bool,
    #[serde(default)]
    pub mode: Propagation,
    /// Largest tolerated share of failed tasks.
    #[serde(default = "d_fail")]
    pub max_failure_rate: f64,
    /// Comparison model; the first spec when absent.
    #[serde(default)]
    pub baseline: Option<String>,
    #[serde(default)]
    pub fit: Option<FitOptions>,
    pub specs: Vec<SpecEntry>,
}

impl StudyConfig {
    pub fn new(specs: &[ModelSpec], seed: u64) -> Self {
        Self {
            window: d_window(),
            horizon: d_horizon(),
            n_origins: d_origins(),
            n_trajectories: d_traj(),
            seed,
            cap: d_cap(),
            warm_start: true,
            mode: Propagation::PointUpdate,
            max_failure_rate: d_fail(),
            baseline: None,
            fit: None,
            specs: specs.iter().map(|s| SpecEntry { id: s.id() }).collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn model_specs(&self) -> Result<Vec<ModelSpec>> {
        if self.specs.is_empty() {
            return Err(Error::Config("study has no specs".into()));
        }
        let specs = self.specs.iter().map(|s| s.id.parse()).collect::<Result<Vec<ModelSpec>>>()?;
        for (i, s) in specs.iter().enumerate() {
            if specs[..i].contains(s) {
                return Err(Error::Config(format!("spec {s} listed twice")));
            }
        }
        Ok(specs)
    }

    pub fn baseline_id(&self) -> Result<String> {
        let specs = self.model_specs()?;
        match &self.baseline {
            None => Ok(specs[0].id()),
            Some(b) => {
                let b: ModelSpec = b.parse()?;
                if !specs.contains(&b) {
                    return Err(Error::Config(format!("baseline {b} is not among the specs")));
                }
                Ok(b.id())
            }
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        self.fit.clone().unwrap_or_default()
    }

    /// Number of admissible origins for a panel of `t_len` rows.
    pub fn grid_size(&self, t_len: usize) -> usize {
        t_len.saturating_sub(self.window + self.horizon)
    }

    pub fn validate(&self, t_len: usize) -> Result<()> {
        self.model_specs()?;
        self.baseline_id()?;
        if self.window == 0 || self.horizon == 0 || self.n_trajectories < 2 || self.n_origins == 0 {
            return Err(Error::Config("window, horizon, origins must be positive and trajectories at least 2".into()));
        }
        if !(self.cap > 0.0) || !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(Error::Config("cap must be positive and the failure rate in [0, 1]".into()));
        }
        let grid = self.grid_size(t_len);
        if grid == 0 {
            return Err(Error::InsufficientData(format!(
                "{t_len} rows leave no origin for window {} and horizon {}",
                self.window, self.horizon
            )));
        }
        if self.n_origins > grid {
            return Err(Error::Config(format!("{} origins requested, the grid has {grid}", self.n_origins)));
        }
        Ok(())
    }
}

/// Origins drawn uniformly without replacement from `window ..= T - 1 - h`,
/// sorted.
pub fn sample_origins(t_len: usize, cfg: &StudyConfig, seed: u64) -> Result<Vec<usize>> {
    cfg.validate(t_len)?;
    let grid = cfg.grid_size(t_len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = rand::seq::index::sample(&mut rng, grid, cfg.n_origins)
        .into_iter()
        .map(|i| i + cfg.window)
        .collect();
    idx.sort_unstable();
    Ok(idx)
}

pub fn origin_seed(master: u64) -> u64 {
    par::derive_seed(&[master, par::hash_label("origins")])
}

/// Seed of one (spec, origin) task.
pub fn task_seed(master: u64, spec: &ModelSpec, origin: usize) -> u64 {
    par::derive_seed(&[master, par::hash_label(&spec.id()), origin as u64])
}

/// Fits on the window ending at `origin` and forecasts from it. Only rows
/// `origin - window ..= origin` are read.
pub fn forecast_at_origin(
    panel: &Panel,
    spec: &ModelSpec,
    origin: usize,
    cfg: &StudyConfig,
    warm: Option<&ParameterSet>,
) -> Result<(FitResult, ForecastEnsemble)> {
    if origin < cfg.window || origin >= panel.len() {
        return Err(Error::Config(format!("origin {origin} outside the panel for window {}", cfg.window)));
    }
    let sample = panel.slice(origin - cfg.window, origin + 1)?;
    let sample = if spec.log_scale { to_log(&sample)? } else { sample };
    let fitted = fit(&sample, spec, &cfg.fit_options(), warm)?;
    let fc = ForecastConfig {
        horizon: cfg.horizon,
        n_trajectories: cfg.n_trajectories,
        mode: cfg.mode,
        seed: task_seed(cfg.seed, spec, origin),
    };
    let ens = forecast_from_fit(&sample, &fitted, &fc)?.to_levels(cfg.cap);
    Ok((fitted, ens))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub spec: String,
    pub origin: usize,
    pub origin_date: NaiveDate,
    pub seed: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loglik: Option<f64>,
    pub cap_applied: usize,
    /// Energy score per scope, aligned with `StudyResult::scopes`.
    pub scores: Vec<f64>,
    /// Squared error per (step, series), step-major.
    pub sq_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFingerprint {
    pub rows: usize,
    pub labels: Vec<String>,
    pub first_date: NaiveDate,
    pub last_date: NaiveDate,
    pub hash: String,
}

impl InputFingerprint {
    pub fn of(panel: &Panel) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in panel.values() {
            for b in v.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        Self {
            rows: panel.len(),
            labels: panel.labels().to_vec(),
            first_date: panel.dates()[0],
            last_date: *panel.dates().last().expect("nonempty"),
            hash: format!("{h:016x}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub library_version: String,
    pub config: StudyConfig,
    pub input: InputFingerprint,
    pub origins: Vec<usize>,
    pub scopes: Vec<String>,
    pub tasks: Vec<TaskRecord>,
    pub wall_time_secs: f64,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "manifest schema version {}, expected {MANIFEST_SCHEMA_VERSION}",
                m.schema_version
            )));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub manifest: Manifest,
    pub reports: Vec<ScoreReport>,
    pub es_table: ImprovementTable,
    pub rmse_table: ImprovementTable,
}

impl StudyResult {
    pub fn failed(&self) -> usize {
        self.manifest.tasks.iter().filter(|t| !t.ok).count()
    }

    pub fn total(&self) -> usize {
        self.manifest.tasks.len()
    }

    /// Errors when more than the tolerated share of tasks failed.
    pub fn check(&self) -> Result<()> {
        let (failed, total) = (self.failed(), self.total());
        if failed as f64 > self.manifest.config.max_failure_rate * total as f64 {
            return Err(Error::StudyFailed { failed, total });
        }
        Ok(())
    }
}

fn file_stem(spec: &str, origin: usize) -> String {
    format!("{spec}_{origin:06}")
}

struct TaskOutput {
    record: TaskRecord,
    fit: Option<FitResult>,
    ensemble: Option<ForecastEnsemble>,
}

fn run_task(
    panel: &Panel,
    spec: &ModelSpec,
    origin: usize,
    cfg: &StudyConfig,
    scopes: &[Scope],
    warm: Option<&ParameterSet>,
) -> TaskOutput {
    let seed = task_seed(cfg.seed, spec, origin);
    let origin_date = panel.dates()[origin];
    let outcome = forecast_at_origin(panel, spec, origin, cfg, warm).and_then(|(f, e)| {
        let k = panel.dim();
        let realized: Vec<f64> = (1..=cfg.horizon).flat_map(|s| panel.row(origin + s).to_vec()).collect();
        let scores = scopes
            .iter()
            .map(|sc| scope_score(&e, &realized, sc))
            .collect::<Result<Vec<f64>>>()?;
        let mean = e.mean();
        let sq = (0..cfg.horizon * k).map(|c| (mean[c] - realized[c]).powi(2)).collect();
        Ok((f, e, scores, sq))
    });
    match outcome {
        Ok((f, e, scores, sq_errors)) => TaskOutput {
            record: TaskRecord {
                spec: spec.id(),
                origin,
                origin_date,
                seed,
                ok: true,
                error: None,
                converged: Some(f.converged),
                loglik: Some(f.loglik),
                cap_applied: e.cap_applied,
                scores,
                sq_errors,
            },
            fit: Some(f),
            ensemble: Some(e),
        },
        Err(err) => TaskOutput {
            record: TaskRecord {
                spec: spec.id(),
                origin,
                origin_date,
                seed,
                ok: false,
                error: Some(err.to_string()),
                converged: None,
                loglik: None,
                cap_applied: 0,
                scores: Vec::new(),
                sq_errors: Vec::new(),
            },
            fit: None,
            ensemble: None,
        },
    }
}

fn persist(dir: &Path, out: &TaskOutput, labels: &[String]) -> Result<()> {
    let stem = file_stem(&out.record.spec, out.record.origin);
    if let Some(f) = &out.fit {
        f.save(&dir.join("fits").join(format!("{stem}.json")))?;
    }
    if let Some(e) = &out.ensemble {
        let path = dir.join("ensembles").join(format!("{stem}.csv.gz"));
        let file = fs::File::create(&path).map_err(|err| Error::io(&path, err))?;
        let mut gz = GzEncoder::new(file, Compression::default());
        e.write_csv(labels, &mut gz)?;
        gz.finish().and_then(|mut f| f.flush()).map_err(|err| Error::io(&path, err))?;
    }
    Ok(())
}

/// Aggregates task records into score reports over the origins where every
/// spec succeeded.
pub fn aggregate(
    tasks: &[TaskRecord],
    specs: &[ModelSpec],
    origins: &[usize],
    scopes: &[Scope],
    labels: &[String],
    horizon: usize,
) -> Vec<ScoreReport> {
    let find = |s: &ModelSpec, o: usize| tasks.iter().find(|t| t.spec == s.id() && t.origin == o);
    let common: Vec<usize> = origins
        .iter()
        .copied()
        .filter(|&o| specs.iter().all(|s| find(s, o).is_some_and(|t| t.ok)))
        .collect();
    let mut reports = Vec::new();
    if common.is_empty() {
        return reports;
    }
    let k = labels.len();
    for s in specs {
        let recs: Vec<&TaskRecord> = common.iter().map(|&o| find(s, o).expect("checked above")).collect();
        for (c, sc) in scopes.iter().enumerate() {
            let losses: Vec<f64> = recs.iter().map(|t| t.scores[c]).collect();
            reports.push(ScoreReport {
                model_id: s.id(),
                metric: Metric::Es,
                scope: sc.label(labels),
                horizon: sc.horizon(),
                value: losses.iter().sum::<f64>() / losses.len() as f64,
                losses,
            });
        }
        let mut steps = vec![1];
        for st in [5, horizon] {
            if st <= horizon && !steps.contains(&st) {
                steps.push(st);
            }
        }
        for &step in &steps {
            for i in 0..k {
                let label = Scope::single(i, vec![step]).label(labels);
                let losses: Vec<f64> = recs.iter().map(|t| t.sq_errors[(step - 1) * k + i]).collect();
                reports.push(ScoreReport {
                    model_id: s.id(),
                    metric: Metric::Rmse,
                    scope: label,
                    horizon: step,
                    value: (losses.iter().sum::<f64>() / losses.len() as f64).sqrt(),
                    losses,
                });
            }
        }
    }
    reports
}

fn tables(reports: &[ScoreReport], baseline: &str) -> Result<(ImprovementTable, ImprovementTable)> {
    let empty = |metric| ImprovementTable {
        metric,
        baseline_id: baseline.to_string(),
        scopes: Vec::new(),
        rows: Vec::new(),
    };
    if reports.is_empty() {
        return Ok((empty(Metric::Es), empty(Metric::Rmse)));
    }
    Ok((
        improvement_table(reports, baseline, Metric::Es)?,
        improvement_table(reports, baseline, Metric::Rmse)?,
    ))
}

/// Writes scores, tables and the manifest into `dir`.
fn write_outputs(dir: &Path, result: &StudyResult) -> Result<()> {
    let m = &result.manifest;
    let path = dir.join("scores.csv");
    let mut wr = csv::Writer::from_path(&path)?;
    wr.write_record(["spec", "origin", "origin_date", "scope", "metric", "value"])?;
    for t in m.tasks.iter().filter(|t| t.ok) {
        for (s, v) in m.scopes.iter().zip(&t.scores) {
            wr.write_record([
                t.spec.as_str(),
                &t.origin.to_string(),
                &t.origin_date.to_string(),
                s,
                "ES",
                &format_float(*v),
            ])?;
        }
    }
    wr.flush().map_err(|e| Error::io(&path, e))?;
    for (name, table) in [("es", &result.es_table), ("rmse", &result.rmse_table)] {
        let p = dir.join(format!("table_{name}.csv"));
        let f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        table.write_csv(f)?;
        let p = dir.join(format!("table_{name}.md"));
        fs::write(&p, table.to_markdown()).map_err(|e| Error::io(&p, e))?;
    }
    let p = dir.join("manifest.json");
    fs::write(&p, serde_json::to_string_pretty(m)?).map_err(|e| Error::io(&p, e))?;
    Ok(())
}

/// Runs every (spec, origin) task. With warm starts the origins of one spec
/// run in order and the specs in parallel; otherwise all tasks run in
/// parallel. Results do not depend on the execution order.
pub fn run_study(panel: &Panel, cfg: &StudyConfig, out_dir: Option<&Path>) -> Result<StudyResult> {
    let origins = sample_origins(panel.len(), cfg, origin_seed(cfg.seed))?;
    run_on_origins(panel, cfg, &origins, out_dir)
}

fn run_on_origins(panel: &Panel, cfg: &StudyConfig, origins: &[usize], out_dir: Option<&Path>) -> Result<StudyResult> {
    let started = Instant::now();
    if panel.transform() != Transform::Levels {
        return Err(Error::Config("studies run on level data; log specs transform internally".into()));
    }
    cfg.validate(panel.len())?;
    let specs = cfg.model_specs()?;
    let baseline = cfg.baseline_id()?;
    let labels = panel.labels().to_vec();
    let scopes = standard_scopes(panel.dim(), cfg.horizon);
    if let Some(dir) = out_dir {
        for sub in ["fits", "ensembles"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    let finish = |out: TaskOutput| -> Result<TaskRecord> {
        if let Some(dir) = out_dir {
            persist(dir, &out, &labels)?;
        }
        Ok(out.record)
    };
    let records: Vec<Result<TaskRecord>> = if cfg.warm_start {
        par::map_slice(&specs, |s| {
            let mut warm: Option<ParameterSet> = None;
            let mut recs = Vec::with_capacity(origins.len());
            for &o in origins {
                let out = run_task(panel, s, o, cfg, &scopes, warm.as_ref());
                if let Some(f) = &out.fit {
                    warm = Some(f.params.clone());
                }
                recs.push(finish(out));
            }
            recs
        })
        .into_iter()
        .flatten()
        .collect()
    } else {
        let pairs: Vec<(ModelSpec, usize)> = specs.iter().flat_map(|s| origins.iter().map(move |&o| (*s, o))).collect();
        par::map_slice(&pairs, |(s, o)| finish(run_task(panel, s, *o, cfg, &scopes, None)))
    };
    let tasks = records.into_iter().collect::<Result<Vec<TaskRecord>>>()?;
    let reports = aggregate(&tasks, &specs, origins, &scopes, &labels, cfg.horizon);
    let (es_table, rmse_table) = tables(&reports, &baseline)?;
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        input: InputFingerprint::of(panel),
        origins: origins.to_vec(),
        scopes: scopes.iter().map(|s| s.label(&labels)).collect(),
        tasks,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    let result = StudyResult {
        manifest,
        reports,
        es_table,
        rmse_table,
    };
    if let Some(dir) = out_dir {
        write_outputs(dir, &result)?;
    }
    Ok(result)
}

/// Re-runs a study from its manifest on the same input panel.
pub fn replay(manifest: &Manifest, panel: &Panel, out_dir: Option<&Path>) -> Result<StudyResult> {
    let fp = InputFingerprint::of(panel);
    if fp != manifest.input {
        return Err(Error::Config("input panel does not match the manifest fingerprint".into()));
    }
    run_on_origins(panel, &manifest.config, &manifest.origins, out_dir)
}

/// Paths of the per-task artifacts of a study directory.
pub fn task_paths(dir: &Path, spec: &str, origin: usize) -> (PathBuf, PathBuf) {
    let stem = file_stem(spec, origin);
    (
        dir.join("fits").join(format!("{stem}.json")),
        dir.join("ensembles").join(format!("{stem}.csv.gz")),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(window: usize, horizon: usize, n: usize) -> StudyConfig {
        let mut c = StudyConfig::new(&[ModelSpec::random_walk(true, false)], 5);
        c.window = window;
        c.horizon = horizon;
        c.n_origins = n;
        c
    }

    #[test]
    fn grid_size_matches_the_reference_design() {
        assert_eq!(cfg(1000, 30, 250).grid_size(3257), 2227);
    }

    #[test]
    fn full_grid_and_determinism() {
        let c = cfg(10, 3, 7);
        let o = sample_origins(20, &c, 1).unwrap();
        assert_eq!(o, (10..17).collect::<Vec<_>>());
        let c = cfg(10, 3, 4);
        assert_eq!(sample_origins(200, &c, 9).unwrap(), sample_origins(200, &c, 9).unwrap());
        assert!(sample_origins(20, &cfg(10, 3, 8), 1).is_err());
    }

    #[test]
    fn config_roundtrip() {
        let text = r#"
            seed = 42
            window = 500
            horizon = 10

            [[specs]]
            id = "rw_st_r"

            [[specs]]
            id = "vecm1_st_rt_lev"
        "#;
        let c = StudyConfig::parse(text).unwrap();
        assert_eq!(c.n_trajectories, 2048);
        assert_eq!(c.model_specs().unwrap().len(), 2);
        assert_eq!(c.baseline_id().unwrap(), "rw_st_r");
        let again = StudyConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(again, c);
        assert!(StudyConfig::parse("seed = 1\nbogus = 2\nspecs = []").is_err());
    }
}
