//! Simulation-based multi-step forecasts.

use std::io::{Read, Write};

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::copula::TCopula;
use crate::data::{cap_exponentiated, format_float, Panel};
use crate::error::{Error, Result};
use crate::estimation::FitResult;
use crate::likelihood::filter_pass;
use crate::marginal::StandardizedNct;
use crate::par;
use crate::simulate::laws;
use crate::spec::{ModelSpec, ParameterSet};
use crate::state::{Conditional, FilterState};
use crate::stats::order_statistic_quantile;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;
pub const ENSEMBLE_SCHEMA_VERSION: u32 = 1;

/// Trajectories drawn per seeded chunk.
pub const CHUNK: usize = 256;

/// Default quantile grid in percent.
pub const DEFAULT_PERCENTS: [f64; 9] = [0.2, 1.0, 5.0, 25.0, 50.0, 75.0, 95.0, 99.0, 99.8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Propagation {
    /// All trajectories share one state, rolled forward with the ensemble
    /// mean as the realized value.
    #[default]
    PointUpdate,
    /// Each trajectory carries its own state.
    PerTrajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastConfig {
    pub horizon: usize,
    pub n_trajectories: usize,
    pub mode: Propagation,
    pub seed: u64,
}

impl ForecastConfig {
    pub fn new(horizon: usize, n_trajectories: usize, seed: u64) -> Self {
        Self {
            horizon,
            n_trajectories,
            mode: Propagation::PointUpdate,
            seed,
        }
    }
}

/// `n` trajectories of `h` steps in `k` series, stored trajectory-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastEnsemble {
    pub origin_date: NaiveDate,
    pub spec: ModelSpec,
    pub seed: u64,
    pub n: usize,
    pub horizon: usize,
    pub dim: usize,
    pub values: Vec<f64>,
    /// Entries replaced by the cap after exponentiation.
    pub cap_applied: usize,
    /// Whether the values were exponentiated back to price levels.
    pub exponentiated: bool,
}

impl ForecastEnsemble {
    #[inline]
    pub fn get(&self, traj: usize, step: usize, series: usize) -> f64 {
        self.values[(traj * self.horizon + step) * self.dim + series]
    }

    /// Values of one trajectory, step-major.
    pub fn trajectory(&self, traj: usize) -> &[f64] {
        let w = self.horizon * self.dim;
        &self.values[traj * w..(traj + 1) * w]
    }

    /// All draws for one (step, series) cell.
    pub fn cell(&self, step: usize, series: usize) -> Vec<f64> {
        (0..self.n).map(|j| self.get(j, step, series)).collect()
    }

    /// Ensemble mean, step-major `h x K`.
    pub fn mean(&self) -> Vec<f64> {
        let w = self.horizon * self.dim;
        let mut m = vec![0.0; w];
        for j in 0..self.n {
            for (a, b) in m.iter_mut().zip(self.trajectory(j)) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.n as f64);
        m
    }

    /// Exponentiates log-scale values and caps them at `cap`. No-op for
    /// level specs or ensembles already on the level scale.
    pub fn to_levels(&self, cap: f64) -> ForecastEnsemble {
        let mut out = self.clone();
        if self.spec.log_scale && !self.exponentiated {
            out.values.iter_mut().for_each(|v| *v = v.exp());
            out.cap_applied = cap_exponentiated(&mut out.values, cap);
            out.exponentiated = true;
        }
        out
    }

    /// Long CSV: `origin,step,series,trajectory,value`, steps from 1,
    /// after a `#` line with the schema version and ensemble metadata.
    pub fn write_csv<W: Write>(&self, labels: &[String], mut w: W) -> Result<()> {
        writeln!(
            w,
            "# ensemble schema_version={} spec={} seed={} exponentiated={} cap_applied={}",
            ENSEMBLE_SCHEMA_VERSION,
            self.spec.id(),
            self.seed,
            self.exponentiated,
            self.cap_applied
        )
        .map_err(|e| Error::Csv(e.to_string()))?;
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["origin", "step", "series", "trajectory", "value"])?;
        let origin = self.origin_date.to_string();
        for j in 0..self.n {
            for s in 0..self.horizon {
                for i in 0..self.dim {
                    let label = labels.get(i).cloned().unwrap_or_else(|| i.to_string());
                    wr.write_record([
                        origin.as_str(),
                        &(s + 1).to_string(),
                        &label,
                        &j.to_string(),
                        &format_float(self.get(j, s, i)),
                    ])?;
                }
            }
        }
        wr.flush().map_err(|e| Error::Csv(e.to_string()))
    }

    /// Reads what `write_csv` wrote; returns the series labels too.
    pub fn read_csv<R: Read>(mut r: R) -> Result<(Vec<String>, ForecastEnsemble)> {
        let mut text = String::new();
        r.read_to_string(&mut text).map_err(|e| Error::Csv(e.to_string()))?;
        let (head, body) = text.split_once('\n').unwrap_or((text.as_str(), ""));
        let meta: std::collections::HashMap<&str, &str> = head
            .strip_prefix("# ensemble ")
            .ok_or_else(|| Error::Csv("missing ensemble header line".into()))?
            .split_whitespace()
            .filter_map(|kv| kv.split_once('='))
            .collect();
        let field = |k: &str| meta.get(k).copied().ok_or_else(|| Error::Csv(format!("ensemble header lacks `{k}`")));
        let bad = |k: &str| Error::Csv(format!("bad ensemble header field `{k}`"));
        let version: u32 = field("schema_version")?.parse().map_err(|_| bad("schema_version"))?;
        if version != ENSEMBLE_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "ensemble schema version {version}, this build reads {ENSEMBLE_SCHEMA_VERSION}"
            )));
        }
        let spec: ModelSpec = field("spec")?.parse()?;
        let seed: u64 = field("seed")?.parse().map_err(|_| bad("seed"))?;
        let exponentiated: bool = field("exponentiated")?.parse().map_err(|_| bad("exponentiated"))?;
        let cap_applied: usize = field("cap_applied")?.parse().map_err(|_| bad("cap_applied"))?;

        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let mut labels: Vec<String> = Vec::new();
        let mut rows = Vec::new();
        let mut origin = None;
        let (mut n, mut h) = (0, 0);
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |c: usize| -> Result<usize> {
                rec.get(c)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Csv(format!("row {}: bad integer in column {c}", line + 3)))
            };
            let (step, traj) = (num(1)?, num(3)?);
            if step == 0 {
                return Err(Error::Csv(format!("row {}: steps start at 1", line + 3)));
            }
            let label = rec.get(2).unwrap_or("").to_string();
            let i = match labels.iter().position(|l| *l == label) {
                Some(i) => i,
                None => {
                    labels.push(label);
                    labels.len() - 1
                }
            };
            let value: f64 = rec
                .get(4)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Csv(format!("row {}: bad value", line + 3)))?;
            if origin.is_none() {
                origin = rec.get(0).and_then(crate::data::parse_date);
            }
            n = n.max(traj + 1);
            h = h.max(step);
            rows.push((traj, step - 1, i, value));
        }
        let origin_date = origin.ok_or_else(|| Error::Csv("empty ensemble".into()))?;
        let k = labels.len();
        if rows.len() != n * h * k {
            return Err(Error::Csv(format!("{} rows do not fill {n} trajectories x {h} steps x {k} series", rows.len())));
        }
        let mut values = vec![f64::NAN; n * h * k];
        for (j, s, i, v) in rows {
            values[(j * h + s) * k + i] = v;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Csv("ensemble has missing cells".into()));
        }
        let e = ForecastEnsemble {
            origin_date,
            spec,
            seed,
            n,
            horizon: h,
            dim: k,
            values,
            cap_applied,
            exponentiated,
        };
        Ok((labels, e))
    }
}

fn check_conditional(cond: &Conditional, step: usize) -> Result<()> {
    if cond.mu.iter().chain(&cond.sigma2).chain(&cond.xi).any(|v| !v.is_finite())
        || cond.sigma2.iter().any(|v| !(*v > 0.0))
    {
        return Err(Error::NonFinite {
            t: step + 1,
            component: "forecast state".into(),
        });
    }
    Ok(())
}

fn draw(cond: &Conditional, cop: Option<&TCopula>, laws: &[StandardizedNct], rng: &mut ChaCha8Rng, out: &mut [f64]) {
    use rand::Rng;
    let k = laws.len();
    match cop {
        Some(c) => {
            for (i, (lo, up)) in c.sample_tails(rng).into_iter().enumerate() {
                out[i] = cond.mu[i] + cond.sigma2[i].sqrt() * laws[i].quantile_tails(lo, up);
            }
        }
        None => {
            debug_assert_eq!(k, 1);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            out[0] = cond.mu[0] + cond.sigma2[0].sqrt() * laws[0].quantile_tails(u, 1.0 - u);
        }
    }
}

fn copula_at(cond: &Conditional, theta: f64) -> Result<Option<TCopula>> {
    if cond.mu.len() < 2 {
        return Ok(None);
    }
    Ok(Some(TCopula::new(&cond.corr()?, theta)?))
}

/// Draws `n` trajectories of `h` steps from the state after the origin.
pub fn forecast(
    state: &FilterState,
    p: &ParameterSet,
    spec: &ModelSpec,
    cfg: &ForecastConfig,
    origin_date: NaiveDate,
) -> Result<ForecastEnsemble> {
    p.validate(spec)?;
    if cfg.horizon == 0 || cfg.n_trajectories == 0 {
        return Err(Error::InvalidParameter("horizon and trajectory count must be positive".into()));
    }
    let k = p.dim();
    if state.dim() != k {
        return Err(Error::DimensionMismatch(format!("state of dimension {} for {k} series", state.dim())));
    }
    let (n, h) = (cfg.n_trajectories, cfg.horizon);
    let laws = laws(p)?;
    let n_chunks = n.div_ceil(CHUNK);
    let chunk_len = |c: usize| CHUNK.min(n - c * CHUNK);
    let mut values = vec![0.0; n * h * k];
    match cfg.mode {
        Propagation::PointUpdate => {
            let mut st = state.clone();
            for s in 0..h {
                let cond = st.next_conditional(p)?;
                check_conditional(&cond, s)?;
                let cop = copula_at(&cond, p.copula.theta)?;
                let chunks = par::map_range(n_chunks, |c| {
                    let mut rng = ChaCha8Rng::seed_from_u64(par::derive_seed(&[cfg.seed, s as u64, c as u64]));
                    let mut out = vec![0.0; chunk_len(c) * k];
                    for row in out.chunks_mut(k) {
                        draw(&cond, cop.as_ref(), &laws, &mut rng, row);
                    }
                    out
                });
                let mut mean = vec![0.0; k];
                for (c, chunk) in chunks.iter().enumerate() {
                    for (r, row) in chunk.chunks(k).enumerate() {
                        let j = c * CHUNK + r;
                        values[(j * h + s) * k..(j * h + s + 1) * k].copy_from_slice(row);
                        for i in 0..k {
                            mean[i] += row[i];
                        }
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                st = st.advance(&cond, &mean);
            }
        }
        Propagation::PerTrajectory => {
            let chunks = par::map_range(n_chunks, |c| -> Result<Vec<f64>> {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(par::derive_seed(&[cfg.seed, u64::MAX, c as u64]));
                let len = chunk_len(c);
                let mut out = vec![0.0; len * h * k];
                let fixed = if spec.rho_time_varying || k < 2 {
                    None
                } else {
                    copula_at(&state.next_conditional(p)?, p.copula.theta)?
                };
                for r in 0..len {
                    let mut st = state.clone();
                    for s in 0..h {
                        let cond = st.next_conditional(p)?;
                        check_conditional(&cond, s)?;
                        let local;
                        let cop = match &fixed {
                            Some(c) => Some(c),
                            None => {
                                local = copula_at(&cond, p.copula.theta)?;
                                local.as_ref()
                            }
                        };
                        let row = &mut out[(r * h + s) * k..(r * h + s + 1) * k];
                        draw(&cond, cop, &laws, &mut rng, row);
                        let x = row.to_vec();
                        st = st.advance(&cond, &x);
                    }
                }
                Ok(out)
            });
            let mut off = 0;
            for chunk in chunks {
                let chunk = chunk?;
                values[off..off + chunk.len()].copy_from_slice(&chunk);
                off += chunk.len();
            }
        }
    }
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            t: (pos / k) % h + 1,
            component: "forecast draw".into(),
        });
    }
    Ok(ForecastEnsemble {
        origin_date,
        spec: *spec,
        seed: cfg.seed,
        n,
        horizon: h,
        dim: k,
        values,
        cap_applied: 0,
        exponentiated: false,
    })
}

/// Filters `panel` with the fitted parameters and forecasts from its last
/// row.
pub fn forecast_from_fit(panel: &Panel, fit: &FitResult, cfg: &ForecastConfig) -> Result<ForecastEnsemble> {
    let out = filter_pass(panel, &fit.spec, &fit.params, &fit.init_policy())?;
    let origin = *panel.dates().last().expect("filter_pass checked the length");
    forecast(&out.last, &fit.params, &fit.spec, cfg, origin)
}

/// Point forecasts and empirical quantiles of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSummary {
    pub schema_version: u32,
    pub origin_date: NaiveDate,
    pub spec: String,
    pub labels: Vec<String>,
    pub probs: Vec<f64>,
    /// `mean[step][series]`.
    pub mean: Vec<Vec<f64>>,
    /// `quantiles[prob][step][series]`.
    pub quantiles: Vec<Vec<Vec<f64>>>,
    pub cap_applied: usize,
}

pub fn summarize(e: &ForecastEnsemble, probs: &[f64], labels: &[String]) -> Result<ForecastSummary> {
    if e.n == 0 {
        return Err(Error::InsufficientData("empty ensemble".into()));
    }
    if let Some(&p) = probs.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::InvalidProbability(p));
    }
    let mean_flat = e.mean();
    let mean = mean_flat.chunks(e.dim).map(<[f64]>::to_vec).collect();
    let mut quantiles = vec![vec![vec![0.0; e.dim]; e.horizon]; probs.len()];
    for s in 0..e.horizon {
        for i in 0..e.dim {
            let mut cell = e.cell(s, i);
            cell.sort_by(f64::total_cmp);
            for (q, &p) in probs.iter().enumerate() {
                quantiles[q][s][i] = order_statistic_quantile(&cell, p);
            }
        }
    }
    Ok(ForecastSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        origin_date: e.origin_date,
        spec: e.spec.id(),
        labels: labels.to_vec(),
        probs: probs.to_vec(),
        mean,
        quantiles,
        cap_applied: e.cap_applied,
    })
}

impl ForecastSummary {
    /// Wide CSV: one row per step, a mean column and one column per
    /// probability for every series.
    pub fn write_quantile_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["step".to_string()];
        for l in &self.labels {
            header.push(format!("{l}_mean"));
            for p in &self.probs {
                header.push(format!("{l}_q{}", format_percent(*p)));
            }
        }
        wr.write_record(&header)?;
        for s in 0..self.mean.len() {
            let mut row = vec![(s + 1).to_string()];
            for i in 0..self.labels.len() {
                row.push(format_float(self.mean[s][i]));
                for q in 0..self.probs.len() {
                    row.push(format_float(self.quantiles[q][s][i]));
                }
            }
            wr.write_record(&row)?;
        }
        wr.flush().map_err(|e| Error::Csv(e.to_string()))
    }
}

/// `0.05 -> "5"`, `0.002 -> "0.2"`.
pub fn format_percent(p: f64) -> String {
    let v = (p * 100.0 * 1e9).round() / 1e9;
    format!("{v}")
}

/// Default probability grid.
pub fn default_probs() -> Vec<f64> {
    DEFAULT_PERCENTS.iter().map(|p| p / 100.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::CopulaParams;
    use crate::meanvol::{GarchParams, VecmParams};
    use crate::spec::ShapeParams;
    use crate::state::InitialState;

    fn setup(k: usize) -> (ParameterSet, FilterState) {
        let p = ParameterSet {
            vecm: VecmParams::random_walk(k),
            garch: vec![GarchParams::symmetric(0.1, 0.1, 0.8); k],
            marginals: vec![ShapeParams { nu: 5.0, lambda: 0.0 }; k],
            copula: CopulaParams::from_correlations(6.0, &vec![0.3; crate::copula::n_pairs(k)]).unwrap(),
        };
        let init = InitialState {
            sigma2: vec![1.0; k],
            xi: p.copula.xi_const.clone(),
        };
        let st = FilterState::initial(&vec![5.0; k], &vec![5.0; k], &init);
        (p, st)
    }

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()
    }

    #[test]
    fn chunking_is_invisible_to_shape() {
        let (p, st) = setup(2);
        let spec = ModelSpec::random_walk(true, false);
        let e = forecast(&st, &p, &spec, &ForecastConfig::new(3, 300, 9), date()).unwrap();
        assert_eq!(e.values.len(), 300 * 3 * 2);
        let mut cfg = ForecastConfig::new(3, 300, 9);
        cfg.mode = Propagation::PerTrajectory;
        let f = forecast(&st, &p, &spec, &cfg, date()).unwrap();
        assert_eq!(f.values.len(), e.values.len());
        assert!(f.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn single_series_forecast() {
        let (p, st) = setup(1);
        let spec = ModelSpec::random_walk(true, false);
        let e = forecast(&st, &p, &spec, &ForecastConfig::new(2, 10, 1), date()).unwrap();
        assert_eq!(e.values.len(), 20);
    }

    #[test]
    fn summary_order_statistics() {
        let e = ForecastEnsemble {
            origin_date: date(),
            spec: ModelSpec::random_walk(false, false),
            seed: 0,
            n: 4,
            horizon: 1,
            dim: 1,
            values: vec![4.0, 1.0, 3.0, 2.0],
            cap_applied: 0,
            exponentiated: false,
        };
        let s = summarize(&e, &[0.25, 0.5, 0.75], &["a".into()]).unwrap();
        assert_eq!(s.quantiles[0][0][0], 1.0);
        assert_eq!(s.quantiles[1][0][0], 2.0);
        assert_eq!(s.quantiles[2][0][0], 3.0);
        assert_eq!(s.mean[0][0], 2.5);
        assert!(summarize(&e, &[1.0], &[]).is_err());
    }

    #[test]
    fn percent_labels() {
        assert_eq!(format_percent(0.05), "5");
        assert_eq!(format_percent(0.002), "0.2");
        assert_eq!(format_percent(0.998), "99.8");
    }
}
