//! Sample-based proper scores and forecast comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::format_float;
use crate::error::{Error, Result};
use crate::forecast::ForecastEnsemble;
use crate::par;
use crate::special::StudentT;

/// Estimator of the expected inter-sample distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EsVariant {
    /// `1/(2n^2)` over all ordered pairs, the zero diagonal included.
    #[default]
    Plain,
    /// `1/(2n(n-1))` over distinct pairs.
    Unbiased,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Energy score of `n` samples of dimension `d` (row-major) at `obs`.
pub fn energy_score(samples: &[f64], d: usize, obs: &[f64]) -> Result<f64> {
    energy_score_with(samples, d, obs, EsVariant::Plain)
}

pub fn energy_score_with(samples: &[f64], d: usize, obs: &[f64], variant: EsVariant) -> Result<f64> {
    if d == 0 || samples.len() % d != 0 || obs.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "{} sample values of dimension {d} against an observation of length {}",
            samples.len(),
            obs.len()
        )));
    }
    let n = samples.len() / d;
    if n < 2 {
        return Err(Error::InsufficientData(format!("energy score needs at least 2 samples, got {n}")));
    }
    let rows: Vec<&[f64]> = samples.chunks(d).collect();
    let first = rows.iter().map(|x| dist(x, obs)).sum::<f64>() / n as f64;
    // Upper-triangle row sums in parallel, reduced in order.
    let partial = par::map_range(n, |i| rows[i + 1..].iter().map(|y| dist(rows[i], y)).sum::<f64>());
    let pair_sum: f64 = partial.iter().sum();
    let nf = n as f64;
    let second = match variant {
        EsVariant::Plain => pair_sum / (nf * nf),
        EsVariant::Unbiased => pair_sum / (nf * (nf - 1.0)),
    };
    Ok(first - second)
}

/// Continuous ranked probability score: the energy score in one dimension.
pub fn crps(samples: &[f64], obs: f64) -> Result<f64> {
    energy_score(samples, 1, &[obs])
}

/// Variables and 1-based forecast steps entering a multivariate score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scope {
    /// Series indices; `None` selects all.
    pub series: Option<Vec<usize>>,
    pub steps: Vec<usize>,
}

impl Scope {
    pub fn all(steps: Vec<usize>) -> Self {
        Self { series: None, steps }
    }

    pub fn single(series: usize, steps: Vec<usize>) -> Self {
        Self {
            series: Some(vec![series]),
            steps,
        }
    }

    pub fn range(from: usize, to: usize) -> Vec<usize> {
        (from..=to).collect()
    }

    /// Largest step, used as the comparison horizon.
    pub fn horizon(&self) -> usize {
        self.steps.iter().copied().max().unwrap_or(1)
    }

    fn series_of(&self, k: usize) -> Vec<usize> {
        self.series.clone().unwrap_or_else(|| (0..k).collect())
    }

    /// `All_1-30`, `x1_5` style label.
    pub fn label(&self, labels: &[String]) -> String {
        let vars = match &self.series {
            None => "All".to_string(),
            Some(s) => s
                .iter()
                .map(|&i| labels.get(i).cloned().unwrap_or_else(|| i.to_string()))
                .collect::<Vec<_>>()
                .join("+"),
        };
        let steps = match self.steps.as_slice() {
            [one] => one.to_string(),
            s if s.windows(2).all(|w| w[1] == w[0] + 1) => format!("{}-{}", s[0], s[s.len() - 1]),
            s => s.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("+"),
        };
        format!("{vars}_{steps}")
    }

    fn check(&self, k: usize, h: usize) -> Result<()> {
        let bad_series = self.series.as_ref().is_some_and(|s| s.is_empty() || s.iter().any(|&i| i >= k));
        if bad_series || self.steps.is_empty() || self.steps.iter().any(|&s| s == 0 || s > h) {
            return Err(Error::Config(format!(
                "scope {:?} outside an ensemble of {k} series and {h} steps",
                self
            )));
        }
        Ok(())
    }
}

/// The usual scope grid: all variables and each variable alone, over the
/// full horizon and the steps 1, 5 and `h` (those that exist).
pub fn standard_scopes(k: usize, h: usize) -> Vec<Scope> {
    let mut step_sets = vec![Scope::range(1, h)];
    for s in [1, 5, h] {
        if s <= h && !step_sets.contains(&vec![s]) {
            step_sets.push(vec![s]);
        }
    }
    let mut out = Vec::new();
    for steps in &step_sets {
        out.push(Scope::all(steps.clone()));
    }
    if k > 1 {
        for i in 0..k {
            for steps in &step_sets {
                out.push(Scope::single(i, steps.clone()));
            }
        }
    }
    out
}

/// Energy score of one ensemble on the cells selected by `scope`.
/// `realized` holds the observed `h x K` values, step-major.
pub fn scope_score(e: &ForecastEnsemble, realized: &[f64], scope: &Scope) -> Result<f64> {
    scope.check(e.dim, e.horizon)?;
    if realized.len() != e.horizon * e.dim {
        return Err(Error::DimensionMismatch(format!(
            "{} realized values for a {}x{} forecast",
            realized.len(),
            e.horizon,
            e.dim
        )));
    }
    let series = scope.series_of(e.dim);
    let cells: Vec<usize> = scope
        .steps
        .iter()
        .flat_map(|&s| series.iter().map(move |&i| (s - 1) * e.dim + i))
        .collect();
    let d = cells.len();
    let mut flat = Vec::with_capacity(e.n * d);
    for j in 0..e.n {
        let tr = e.trajectory(j);
        flat.extend(cells.iter().map(|&c| tr[c]));
    }
    let obs: Vec<f64> = cells.iter().map(|&c| realized[c]).collect();
    energy_score(&flat, d, &obs)
}

/// Per-origin scores and their mean over origins.
pub fn multiscope_es(ensembles: &[ForecastEnsemble], realized: &[Vec<f64>], scope: &Scope) -> Result<(f64, Vec<f64>)> {
    if ensembles.is_empty() || ensembles.len() != realized.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} ensembles and {} realized paths",
            ensembles.len(),
            realized.len()
        )));
    }
    let per = ensembles
        .iter()
        .zip(realized)
        .map(|(e, r)| scope_score(e, r, scope))
        .collect::<Result<Vec<f64>>>()?;
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    Ok((mean, per))
}

/// Root mean squared error per cell over origins. Inputs are per-origin
/// flattened `h x K` blocks.
pub fn rmse(points: &[Vec<f64>], obs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = points.first().ok_or_else(|| Error::InsufficientData("no forecasts".into()))?;
    let w = first.len();
    if points.len() != obs.len() || points.iter().chain(obs).any(|v| v.len() != w) {
        return Err(Error::DimensionMismatch("forecasts and observations are not aligned".into()));
    }
    let mut acc = vec![0.0; w];
    for (p, o) in points.iter().zip(obs) {
        for c in 0..w {
            acc[c] += (p[c] - o[c]).powi(2);
        }
    }
    Ok(acc.iter().map(|s| (s / points.len() as f64).sqrt()).collect())
}

/// Small-sample correction for a Diebold-Mariano statistic over `t` losses
/// at horizon `h`.
pub fn harvey_factor(t: usize, h: usize) -> f64 {
    let (t, h) = (t as f64, h as f64);
    ((t + 1.0 - 2.0 * h + h * (h - 1.0) / t) / t).sqrt()
}

/// Bartlett-kernel long-run variance with `lags` autocovariances.
pub fn bartlett_lrv(d: &[f64], lags: usize) -> f64 {
    let n = d.len();
    let nf = n as f64;
    let m = d.iter().sum::<f64>() / nf;
    let gamma = |l: usize| (l..n).map(|t| (d[t] - m) * (d[t - l] - m)).sum::<f64>() / nf;
    let mut v = gamma(0);
    for l in 1..=lags.min(n.saturating_sub(1)) {
        v += 2.0 * (1.0 - l as f64 / (lags as f64 + 1.0)) * gamma(l);
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    /// Negative when the first loss series is smaller on average.
    pub statistic: f64,
    pub p_value: f64,
    /// The loss differential had zero variance.
    pub degenerate: bool,
}

pub const DM_MIN_LEN: usize = 10;

/// Harvey-adjusted Diebold-Mariano test on `loss_a - loss_b`.
///
/// A non-positive Bartlett variance falls back to the plain variance.
pub fn dm_test(loss_a: &[f64], loss_b: &[f64], h: usize) -> Result<DmResult> {
    if loss_a.len() != loss_b.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} losses", loss_a.len(), loss_b.len())));
    }
    let n = loss_a.len();
    if n < DM_MIN_LEN {
        return Err(Error::InsufficientData(format!("{n} losses, need at least {DM_MIN_LEN}")));
    }
    let h = h.max(1);
    let d: Vec<f64> = loss_a.iter().zip(loss_b).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let mut lrv = bartlett_lrv(&d, h - 1);
    if !(lrv > 0.0) {
        lrv = bartlett_lrv(&d, 0);
    }
    if !(lrv > 0.0) || !lrv.is_finite() {
        return Ok(DmResult {
            statistic: 0.0,
            p_value: 1.0,
            degenerate: true,
        });
    }
    let stat = harvey_factor(n, h) * mean / (lrv / n as f64).sqrt();
    let (lo, up) = StudentT::new((n - 1) as f64).tails(stat);
    Ok(DmResult {
        statistic: stat,
        p_value: (2.0 * lo.min(up)).min(1.0),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Metric {
    Es,
    Crps,
    Rmse,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Es => "ES",
            Metric::Crps => "CRPS",
            Metric::Rmse => "RMSE",
        }
    }
}

/// Score of one model on one scope, with the per-origin losses behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub model_id: String,
    pub metric: Metric,
    pub scope: String,
    /// Horizon used for the comparison test.
    pub horizon: usize,
    pub value: f64,
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub value: f64,
    /// `100 (baseline - value) / baseline`; `None` for a non-positive baseline.
    pub improvement_pct: Option<f64>,
    pub dm_stat: Option<f64>,
    pub dm_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model_id: String,
    pub cells: Vec<TableCell>,
}

/// Models by scopes, relative to a baseline model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementTable {
    pub metric: Metric,
    pub baseline_id: String,
    pub scopes: Vec<String>,
    pub rows: Vec<TableRow>,
}

pub fn improvement_pct(baseline: f64, value: f64) -> Option<f64> {
    (baseline > 0.0).then(|| 100.0 * (baseline - value) / baseline)
}

/// Builds the comparison table for one metric. Models keep their first
/// appearance order, the baseline first; scopes likewise.
pub fn improvement_table(reports: &[ScoreReport], baseline_id: &str, metric: Metric) -> Result<ImprovementTable> {
    let reports: Vec<&ScoreReport> = reports.iter().filter(|r| r.metric == metric).collect();
    let mut scopes: Vec<String> = Vec::new();
    let mut models: Vec<String> = vec![baseline_id.to_string()];
    let mut by_key: BTreeMap<(String, String), &ScoreReport> = BTreeMap::new();
    for r in &reports {
        if !scopes.contains(&r.scope) {
            scopes.push(r.scope.clone());
        }
        if !models.contains(&r.model_id) {
            models.push(r.model_id.clone());
        }
        by_key.insert((r.model_id.clone(), r.scope.clone()), r);
    }
    let mut rows = Vec::new();
    for m in &models {
        let mut cells = Vec::new();
        for s in &scopes {
            let base = by_key
                .get(&(baseline_id.to_string(), s.clone()))
                .ok_or_else(|| Error::Config(format!("baseline `{baseline_id}` has no score for scope {s}")))?;
            let Some(r) = by_key.get(&(m.clone(), s.clone())) else {
                cells.push(TableCell {
                    value: f64::NAN,
                    improvement_pct: None,
                    dm_stat: None,
                    dm_p: None,
                });
                continue;
            };
            let dm = if r.losses.len() == base.losses.len() && r.losses.len() >= DM_MIN_LEN {
                Some(dm_test(&r.losses, &base.losses, r.horizon)?)
            } else {
                None
            };
            cells.push(TableCell {
                value: r.value,
                improvement_pct: improvement_pct(base.value, r.value),
                dm_stat: dm.map(|d| d.statistic),
                dm_p: dm.map(|d| d.p_value),
            });
        }
        rows.push(TableRow {
            model_id: m.clone(),
            cells,
        });
    }
    Ok(ImprovementTable {
        metric,
        baseline_id: baseline_id.to_string(),
        scopes,
        rows,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

impl ImprovementTable {
    /// Long CSV: `metric,model,scope,value,improvement_pct,dm_stat,dm_p`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["metric", "model", "scope", "value", "improvement_pct", "dm_stat", "dm_p"])?;
        for row in &self.rows {
            for (s, c) in self.scopes.iter().zip(&row.cells) {
                wr.write_record([
                    self.metric.as_str(),
                    &row.model_id,
                    s,
                    &format_float(c.value),
                    &opt(c.improvement_pct),
                    &opt(c.dm_stat),
                    &opt(c.dm_p),
                ])?;
            }
        }
        wr.flush().map_err(|e| Error::Csv(e.to_string()))
    }

    /// Markdown table: model rows, scope columns. The baseline row carries
    /// raw scores, other rows the improvement in percent with the DM
    /// statistic in parentheses.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "| {} vs {} |", self.metric.as_str(), self.baseline_id);
        for s in &self.scopes {
            let _ = write!(out, " {s} |");
        }
        out.push('\n');
        out.push_str("|---|");
        for _ in &self.scopes {
            out.push_str("---:|");
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "| {} |", row.model_id);
            for c in &row.cells {
                let cell = if row.model_id == self.baseline_id {
                    format!("{:.4}", c.value)
                } else {
                    match (c.improvement_pct, c.dm_stat) {
                        (Some(p), Some(d)) => format!("{p:.2}% ({d:.2})"),
                        (Some(p), None) => format!("{p:.2}%"),
                        _ => "n/a".to_string(),
                    }
                };
                let _ = write!(out, " {cell} |");
            }
            out.push('\n');
        }
        out
    }
}
