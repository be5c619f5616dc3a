//! Raw price ingestion, alignment, normalization and the modeling panel.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DATE_FORMAT: &str = "%Y-%m-%d";

/// Default replacement for overflowing exponentiated forecasts.
pub const DEFAULT_CAP: f64 = 1e5;

/// One named price series.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub name: String,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl RawSeries {
    pub fn new(name: impl Into<String>, dates: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if dates.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "series `{name}` has {} dates and {} values",
                dates.len(),
                values.len()
            )));
        }
        if dates.len() < 2 {
            return Err(Error::InsufficientData(format!("series `{name}` has fewer than 2 observations")));
        }
        for w in dates.windows(2) {
            if w[1] == w[0] {
                return Err(Error::DuplicateDate { series: name, date: w[0] });
            }
            if w[1] < w[0] {
                return Err(Error::Config(format!("series `{name}` dates are not increasing at {}", w[1])));
            }
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                t: i,
                component: format!("value of `{name}`"),
            });
        }
        Ok(Self { name, dates, values })
    }
}

/// Which columns of a CSV file to read.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvSchema {
    pub date_column: String,
    /// Empty means every column other than the date column.
    pub value_columns: Vec<String>,
}

impl CsvSchema {
    pub fn new(date_column: impl Into<String>) -> Self {
        Self {
            date_column: date_column.into(),
            value_columns: Vec::new(),
        }
    }

    pub fn with_columns<I: IntoIterator<Item = S>, S: Into<String>>(mut self, cols: I) -> Self {
        self.value_columns = cols.into_iter().map(Into::into).collect();
        self
    }
}

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), DATE_FORMAT).ok()
}

/// Reads one series per value column. Blank cells are treated as missing
/// observations of that series; rows are sorted by date. Row numbers in
/// errors are file line numbers (the header is line 1).
pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<Vec<RawSeries>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let date_idx = col(&schema.date_column)?;
    let value_cols: Vec<(usize, String)> = if schema.value_columns.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != date_idx)
            .map(|(i, h)| (i, h.clone()))
            .collect()
    } else {
        schema
            .value_columns
            .iter()
            .map(|c| col(c).map(|i| (i, c.clone())))
            .collect::<Result<_>>()?
    };
    if value_cols.is_empty() {
        return Err(Error::MissingColumn("(no value columns)".into()));
    }

    let mut bad_rows = Vec::new();
    let mut rows: Vec<(NaiveDate, Vec<Option<f64>>, usize)> = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let Some(date) = rec.get(date_idx).and_then(parse_date) else {
            bad_rows.push(line);
            continue;
        };
        let mut vals = Vec::with_capacity(value_cols.len());
        for (ci, name) in &value_cols {
            let cell = rec.get(*ci).unwrap_or("");
            if cell.is_empty() {
                vals.push(None);
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => vals.push(Some(v)),
                _ => {
                    return Err(Error::NonNumeric {
                        row: line,
                        column: name.clone(),
                        value: cell.to_string(),
                    })
                }
            }
        }
        rows.push((date, vals, line));
    }
    if !bad_rows.is_empty() {
        return Err(Error::BadDates { rows: bad_rows });
    }
    rows.sort_by_key(|r| r.0);
    for w in rows.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(Error::DuplicateDate {
                series: value_cols[0].1.clone(),
                date: w[0].0,
            });
        }
    }
    value_cols
        .iter()
        .enumerate()
        .map(|(j, (_, name))| {
            let (dates, values): (Vec<_>, Vec<_>) =
                rows.iter().filter_map(|(d, v, _)| v[j].map(|x| (*d, x))).unzip();
            RawSeries::new(name.clone(), dates, values)
        })
        .collect()
}

/// Scale of the panel values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Levels,
    Log,
}

/// `T x K` observation matrix (row-major) with a shared date index.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    dates: Vec<NaiveDate>,
    labels: Vec<String>,
    values: Vec<f64>,
    transform: Transform,
}

impl Panel {
    /// Builds a panel from row-major values. One series is allowed here
    /// (univariate likelihoods); joining requires at least two.
    pub fn from_rows(
        dates: Vec<NaiveDate>,
        labels: Vec<String>,
        values: Vec<f64>,
        transform: Transform,
    ) -> Result<Self> {
        let k = labels.len();
        let t = dates.len();
        if k == 0 {
            return Err(Error::InsufficientData("panel has no series".into()));
        }
        if t < 2 {
            return Err(Error::InsufficientData(format!("panel has {t} rows, need at least 2")));
        }
        if values.len() != t * k {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {t} x {k} panel",
                values.len()
            )));
        }
        if let Some(w) = dates.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!("panel dates not strictly increasing at {}", w[1])));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                t: i / k,
                component: format!("panel value of `{}`", labels[i % k]),
            });
        }
        Ok(Self {
            dates,
            labels,
            values,
            transform,
        })
    }

    /// Panel with synthetic weekday dates starting at `start`.
    pub fn with_weekdays(start: NaiveDate, labels: Vec<String>, values: Vec<f64>, transform: Transform) -> Result<Self> {
        let k = labels.len().max(1);
        let dates = weekdays(start, values.len() / k);
        Self::from_rows(dates, labels, values, transform)
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn transform(&self) -> Transform {
        self.transform
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        let k = self.dim();
        &self.values[t * k..(t + 1) * k]
    }

    #[inline]
    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.values[t * self.dim() + i]
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.len()).map(|t| self.get(t, i)).collect()
    }

    /// Rows `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Panel> {
        if start >= end || end > self.len() {
            return Err(Error::InsufficientData(format!(
                "row range {start}..{end} outside a panel of {} rows",
                self.len()
            )));
        }
        let k = self.dim();
        Panel::from_rows(
            self.dates[start..end].to_vec(),
            self.labels.clone(),
            self.values[start * k..end * k].to_vec(),
            self.transform,
        )
    }

    /// Single-series sub-panel.
    pub fn select(&self, cols: &[usize]) -> Result<Panel> {
        let labels = cols.iter().map(|&c| self.labels[c].clone()).collect();
        let values = (0..self.len()).flat_map(|t| cols.iter().map(move |&c| self.get(t, c))).collect();
        Panel::from_rows(self.dates.clone(), labels, values, self.transform)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("date");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for t in 0..self.len() {
            out.push_str(&self.dates[t].format(DATE_FORMAT).to_string());
            for v in self.row(t) {
                out.push(',');
                out.push_str(&format_float(*v));
            }
            out.push('\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Reads a panel CSV (`date,<label>...`, no missing cells).
    pub fn read_csv(path: &Path, transform: Transform) -> Result<Panel> {
        let series = ingest_csv(path, &CsvSchema::new("date"))?;
        let t = series[0].dates.len();
        if series.iter().any(|s| s.dates != series[0].dates) {
            return Err(Error::Config(format!(
                "panel file {} has missing cells; run it through ingest first",
                path.display()
            )));
        }
        let labels = series.iter().map(|s| s.name.clone()).collect();
        let values = (0..t).flat_map(|r| series.iter().map(move |s| s.values[r])).collect();
        Panel::from_rows(series[0].dates.clone(), labels, values, transform)
    }
}

/// Shortest round-trip representation.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

/// `n` consecutive weekdays from `start` (moved forward to a weekday).
pub fn weekdays(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinPolicy {
    Inner,
    /// Carry the last value across at most `max_gap` consecutive missing rows.
    ForwardFill { max_gap: usize },
}

impl JoinPolicy {
    pub const DEFAULT_MAX_GAP: usize = 5;
}

/// Joins series on a common date index.
///
/// Forward fill works on the union of dates restricted to the span where
/// every series has started and none has ended.
pub fn align_and_join(series: &[RawSeries], policy: JoinPolicy) -> Result<Panel> {
    if series.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "joining needs at least 2 series, got {}",
            series.len()
        )));
    }
    let labels: Vec<String> = series.iter().map(|s| s.name.clone()).collect();
    let maps: Vec<HashMap<NaiveDate, f64>> = series
        .iter()
        .map(|s| s.dates.iter().copied().zip(s.values.iter().copied()).collect())
        .collect();
    let (dates, values) = match policy {
        JoinPolicy::Inner => {
            let mut common: BTreeSet<NaiveDate> = series[0].dates.iter().copied().collect();
            for s in &series[1..] {
                let other: BTreeSet<NaiveDate> = s.dates.iter().copied().collect();
                common = common.intersection(&other).copied().collect();
            }
            let dates: Vec<NaiveDate> = common.into_iter().collect();
            let values = dates.iter().flat_map(|d| maps.iter().map(move |m| m[d])).collect();
            (dates, values)
        }
        JoinPolicy::ForwardFill { max_gap } => {
            let start = series.iter().map(|s| s.dates[0]).max().expect("non-empty");
            let end = series.iter().map(|s| *s.dates.last().expect("non-empty")).min().expect("non-empty");
            let union: BTreeSet<NaiveDate> = series
                .iter()
                .flat_map(|s| s.dates.iter().copied())
                .filter(|d| *d >= start && *d <= end)
                .collect();
            let dates: Vec<NaiveDate> = union.into_iter().collect();
            let k = series.len();
            let mut values = vec![0.0; dates.len() * k];
            for (j, s) in series.iter().enumerate() {
                // value at or before `start`
                let pos = s.dates.partition_point(|d| *d <= start);
                let mut last = s.values[pos - 1];
                let mut gap = 0usize;
                for (t, d) in dates.iter().enumerate() {
                    match maps[j].get(d) {
                        Some(&v) => {
                            last = v;
                            gap = 0;
                        }
                        None => {
                            gap += 1;
                            if gap > max_gap {
                                return Err(Error::GapTooLarge {
                                    series: s.name.clone(),
                                    date: *d,
                                    gap,
                                    max_gap,
                                });
                            }
                        }
                    }
                    values[t * k + j] = last;
                }
            }
            (dates, values)
        }
    };
    if dates.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    if dates.len() < 2 {
        return Err(Error::InsufficientData("joined panel has a single row".into()));
    }
    Panel::from_rows(dates, labels, values, Transform::Levels)
}

/// Emission factors, monthly price index and optional exchange rates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NormalizationConfig {
    /// Emission per traded unit, keyed by series label.
    pub emission_factors: BTreeMap<String, f64>,
    /// Monthly index (base 100), keyed by (year, month).
    pub hicp: BTreeMap<(i32, u32), f64>,
    /// Daily exchange rates (target currency per unit of the quoted one).
    pub fx_daily: BTreeMap<NaiveDate, f64>,
    /// Monthly exchange rates, used when no daily rate exists.
    pub fx_monthly: BTreeMap<(i32, u32), f64>,
    /// Series quoted in the foreign currency.
    pub fx_apply: Vec<String>,
}

fn parse_month(s: &str) -> Option<(i32, u32)> {
    let (y, m) = s.trim().split_once('-')?;
    let y: i32 = y.parse().ok()?;
    let m: u32 = m.parse().ok()?;
    (1..=12).contains(&m).then_some((y, m))
}

impl NormalizationConfig {
    /// Parses the flat `key = value` format:
    ///
    /// ```text
    /// factor.EUA = 1.0
    /// hicp.2015-01 = 99.1
    /// fx.2015-01-02 = 0.83      # or fx.2015-01 for a monthly rate
    /// fx_apply = Oil, Coal
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Config(format!("line {}: {msg}: `{raw}`", n + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| bad("expected key = value"))?;
            let key = key.trim();
            let value = value.trim();
            if key == "fx_apply" {
                cfg.fx_apply = value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
                continue;
            }
            let num: f64 = value.parse().map_err(|_| bad("not a number"))?;
            if !(num > 0.0) || !num.is_finite() {
                return Err(bad("value must be positive"));
            }
            if let Some(label) = key.strip_prefix("factor.") {
                cfg.emission_factors.insert(label.to_string(), num);
            } else if let Some(m) = key.strip_prefix("hicp.") {
                let ym = parse_month(m).ok_or_else(|| bad("bad month"))?;
                cfg.hicp.insert(ym, num);
            } else if let Some(d) = key.strip_prefix("fx.") {
                if let Some(date) = parse_date(d) {
                    cfg.fx_daily.insert(date, num);
                } else {
                    let ym = parse_month(d).ok_or_else(|| bad("bad fx date"))?;
                    cfg.fx_monthly.insert(ym, num);
                }
            } else {
                return Err(bad("unknown key"));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn fx_rate(&self, d: NaiveDate) -> Result<f64> {
        self.fx_daily
            .get(&d)
            .or_else(|| self.fx_monthly.get(&(d.year(), d.month())))
            .copied()
            .ok_or(Error::MissingFx(d))
    }
}

/// `value <- (value * fx / factor) / (hicp_month / 100)`; the exchange rate
/// only applies to series listed in `fx_apply`.
pub fn normalize(panel: &Panel, cfg: &NormalizationConfig) -> Result<Panel> {
    if panel.transform() != Transform::Levels {
        return Err(Error::Config("normalization applies to prices in levels".into()));
    }
    let k = panel.dim();
    let factors: Vec<f64> = panel
        .labels()
        .iter()
        .map(|l| cfg.emission_factors.get(l).copied().ok_or_else(|| Error::MissingFactor(l.clone())))
        .collect::<Result<_>>()?;
    let use_fx: Vec<bool> = panel.labels().iter().map(|l| cfg.fx_apply.contains(l)).collect();
    let mut values = Vec::with_capacity(panel.values().len());
    for (t, d) in panel.dates().iter().enumerate() {
        let h = cfg
            .hicp
            .get(&(d.year(), d.month()))
            .copied()
            .ok_or_else(|| Error::MissingHicp(format!("{:04}-{:02}", d.year(), d.month())))?;
        let fx = if use_fx.iter().any(|&b| b) { Some(cfg.fx_rate(*d)?) } else { None };
        for i in 0..k {
            let mut v = panel.get(t, i);
            if use_fx[i] {
                v *= fx.expect("rate looked up");
            }
            values.push(v / factors[i] / (h / 100.0));
        }
    }
    Panel::from_rows(panel.dates().to_vec(), panel.labels().to_vec(), values, Transform::Levels)
}

/// Elementwise natural logarithm.
pub fn to_log(panel: &Panel) -> Result<Panel> {
    if panel.transform() != Transform::Levels {
        return Err(Error::Config("panel is already on the log scale".into()));
    }
    let k = panel.dim();
    let mut values = Vec::with_capacity(panel.values().len());
    for (n, &v) in panel.values().iter().enumerate() {
        if !(v > 0.0) {
            return Err(Error::NonPositive {
                row: n / k,
                series: panel.labels()[n % k].clone(),
                value: v,
            });
        }
        values.push(v.ln());
    }
    Panel::from_rows(panel.dates().to_vec(), panel.labels().to_vec(), values, Transform::Log)
}

/// Replaces non-finite entries and entries above `cap` by `cap`; returns
/// the number of replacements.
pub fn cap_exponentiated(values: &mut [f64], cap: f64) -> usize {
    let mut n = 0;
    for v in values.iter_mut() {
        if !v.is_finite() || *v > cap {
            *v = cap;
            n += 1;
        }
    }
    n
}

/// `exp` then `cap_exponentiated`.
pub fn exponentiate_and_cap(values: &mut [f64], cap: f64) -> usize {
    for v in values.iter_mut() {
        *v = v.exp();
    }
    cap_exponentiated(values, cap)
}
