//! Model switches and the full parameter set.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::copula::{n_pairs, CopulaParams};
use crate::error::{Error, Result};
use crate::meanvol::{GarchParams, VecmParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanModel {
    /// `mu_t = x_{t-1}`.
    RandomWalk,
    /// Error correction of the given cointegrating rank plus one short-run lag.
    Vecm { rank: usize },
}

/// One member of the nested model family.
///
/// Text form: `rw` or `vecm<r>`, then `_s`/`_st` (constant or GARCH
/// variance), `_r`/`_rt` (constant or dynamic dependence) and optional
/// `_lev`, `_ncp`, `_log`, `_icpt` tags, e.g. `vecm1_st_r_lev_ncp`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub mean: MeanModel,
    pub sigma_time_varying: bool,
    pub rho_time_varying: bool,
    pub leverage: bool,
    pub ncp: bool,
    pub log_scale: bool,
    #[serde(default)]
    pub intercept: bool,
}

impl ModelSpec {
    pub fn random_walk(sigma_t: bool, rho_t: bool) -> Self {
        Self {
            mean: MeanModel::RandomWalk,
            sigma_time_varying: sigma_t,
            rho_time_varying: rho_t,
            leverage: false,
            ncp: false,
            log_scale: false,
            intercept: false,
        }
    }

    pub fn vecm(rank: usize, sigma_t: bool, rho_t: bool) -> Self {
        Self {
            mean: MeanModel::Vecm { rank },
            ..Self::random_walk(sigma_t, rho_t)
        }
    }

    pub fn with_leverage(mut self) -> Self {
        self.leverage = true;
        self
    }

    pub fn with_ncp(mut self) -> Self {
        self.ncp = true;
        self
    }

    pub fn with_log(mut self) -> Self {
        self.log_scale = true;
        self
    }

    pub fn rank(&self) -> usize {
        match self.mean {
            MeanModel::RandomWalk => 0,
            MeanModel::Vecm { rank } => rank,
        }
    }

    pub fn has_short_run(&self) -> bool {
        matches!(self.mean, MeanModel::Vecm { .. })
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.rank() > k {
            return Err(Error::Config(format!("rank {} exceeds the {k} series", self.rank())));
        }
        if self.leverage && !self.sigma_time_varying {
            return Err(Error::Config("leverage requires a time-varying variance".into()));
        }
        if self.intercept && !self.has_short_run() {
            return Err(Error::Config("an intercept requires a VECM mean".into()));
        }
        Ok(())
    }

    pub fn id(&self) -> String {
        self.to_string()
    }

    /// Label in the usual superscript/subscript notation, e.g.
    /// `VECM^{r1,σ_t,ρ}_{lev,ncp}`.
    pub fn pretty(&self) -> String {
        let head = match self.mean {
            MeanModel::RandomWalk => "RW^{".to_string(),
            MeanModel::Vecm { rank } => format!("VECM^{{r{rank},"),
        };
        let s = if self.sigma_time_varying { "σ_t" } else { "σ" };
        let r = if self.rho_time_varying { "ρ_t" } else { "ρ" };
        let mut subs = Vec::new();
        if self.leverage {
            subs.push("lev");
        }
        if self.ncp {
            subs.push("ncp");
        }
        if self.log_scale {
            subs.push("log");
        }
        if self.intercept {
            subs.push("icpt");
        }
        let mut out = format!("{head}{s},{r}}}");
        if !subs.is_empty() {
            out.push_str(&format!("_{{{}}}", subs.join(",")));
        }
        out
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mean {
            MeanModel::RandomWalk => write!(f, "rw")?,
            MeanModel::Vecm { rank } => write!(f, "vecm{rank}")?,
        }
        write!(f, "_{}", if self.sigma_time_varying { "st" } else { "s" })?;
        write!(f, "_{}", if self.rho_time_varying { "rt" } else { "r" })?;
        if self.leverage {
            write!(f, "_lev")?;
        }
        if self.ncp {
            write!(f, "_ncp")?;
        }
        if self.log_scale {
            write!(f, "_log")?;
        }
        if self.intercept {
            write!(f, "_icpt")?;
        }
        Ok(())
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse model id `{s}`"));
        let mut parts = s.trim().split('_');
        let head = parts.next().ok_or_else(bad)?.to_ascii_lowercase();
        let mean = if head == "rw" {
            MeanModel::RandomWalk
        } else if let Some(r) = head.strip_prefix("vecm") {
            MeanModel::Vecm {
                rank: r.parse().map_err(|_| bad())?,
            }
        } else {
            return Err(bad());
        };
        let mut spec = ModelSpec {
            mean,
            ..ModelSpec::random_walk(false, false)
        };
        let mut seen_s = false;
        let mut seen_r = false;
        for p in parts {
            match p.to_ascii_lowercase().as_str() {
                "s" if !seen_s => seen_s = true,
                "st" if !seen_s => {
                    seen_s = true;
                    spec.sigma_time_varying = true;
                }
                "r" if !seen_r => seen_r = true,
                "rt" if !seen_r => {
                    seen_r = true;
                    spec.rho_time_varying = true;
                }
                "lev" if !spec.leverage => spec.leverage = true,
                "ncp" if !spec.ncp => spec.ncp = true,
                "log" if !spec.log_scale => spec.log_scale = true,
                "icpt" if !spec.intercept => spec.intercept = true,
                _ => return Err(bad()),
            }
        }
        if !seen_s || !seen_r {
            return Err(bad());
        }
        Ok(spec)
    }
}

/// Shape of one marginal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub nu: f64,
    pub lambda: f64,
}

/// Every estimable quantity of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub vecm: VecmParams,
    pub garch: Vec<GarchParams>,
    pub marginals: Vec<ShapeParams>,
    pub copula: CopulaParams,
}

impl ParameterSet {
    pub fn dim(&self) -> usize {
        self.garch.len()
    }

    /// Checks every component invariant and consistency with `spec`.
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let k = self.dim();
        spec.validate(k)?;
        self.vecm.validate()?;
        if self.vecm.dim() != k || self.marginals.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "{} GARCH blocks, {} marginals, VECM of dimension {}",
                k,
                self.marginals.len(),
                self.vecm.dim()
            )));
        }
        if self.vecm.rank() != spec.rank() {
            return Err(Error::InvalidParameter(format!(
                "VECM rank {} does not match the spec rank {}",
                self.vecm.rank(),
                spec.rank()
            )));
        }
        if !spec.has_short_run() && self.vecm.gamma.iter().any(|&g| g != 0.0) {
            return Err(Error::InvalidParameter("random walk mean needs Gamma = 0".into()));
        }
        if spec.intercept != self.vecm.intercept.is_some() {
            return Err(Error::InvalidParameter("intercept presence does not match the spec".into()));
        }
        for g in &self.garch {
            g.validate()?;
            if !spec.sigma_time_varying && (g.alpha_pos != 0.0 || g.alpha_neg != 0.0 || g.beta != 0.0) {
                return Err(Error::InvalidParameter("constant variance needs alpha = beta = 0".into()));
            }
            if g.leverage && !spec.leverage {
                return Err(Error::InvalidParameter("leverage coefficients without the leverage switch".into()));
            }
        }
        for m in &self.marginals {
            if !(m.nu > 2.0) || !m.lambda.is_finite() {
                return Err(Error::InvalidParameter(format!("marginal shape nu = {}, lambda = {}", m.nu, m.lambda)));
            }
            if !spec.ncp && m.lambda != 0.0 {
                return Err(Error::InvalidParameter("non-centrality must be 0 without the ncp switch".into()));
            }
        }
        if self.copula.time_varying != spec.rho_time_varying {
            return Err(Error::InvalidParameter("copula dynamics do not match the spec".into()));
        }
        self.copula.validate(k)
    }

    pub fn n_pairs(&self) -> usize {
        n_pairs(self.dim())
    }
}

/// Starting values for the variance and dependence recursions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    /// Sample variance of the differences; latent dependence from the
    /// correlation of the first `xi_window` differences.
    Empirical { xi_window: usize },
    Given { sigma2: Vec<f64>, xi: Vec<f64> },
}

impl Default for InitPolicy {
    fn default() -> Self {
        InitPolicy::Empirical { xi_window: 100 }
    }
}
