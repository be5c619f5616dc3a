//! One-step state of the full recursion, shared by the simulator and the
//! forecaster.

use serde::{Deserialize, Serialize};

use crate::copula::{link_lambda, n_pairs, unsquash_clamped};
use crate::error::{Error, Result};
use crate::data::Panel;
use crate::meanvol::{garch_update, vecm_mean};
use crate::spec::{InitPolicy, ParameterSet};
use crate::stats;

/// Everything needed to produce the next conditional distribution: the two
/// latest observations and the lagged variance, innovation, latent
/// dependence and standardized residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub x_prev: Vec<f64>,
    pub x_prev2: Vec<f64>,
    pub sigma2_prev: Vec<f64>,
    pub eps_prev: Vec<f64>,
    pub xi_prev: Vec<f64>,
    pub z_prev: Vec<f64>,
}

/// Conditional mean, variance and latent dependence for one time point.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditional {
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub xi: Vec<f64>,
}

impl Conditional {
    pub fn corr(&self) -> Result<nalgebra::DMatrix<f64>> {
        link_lambda(self.mu.len(), &self.xi)
    }
}

/// Resolved starting values of the variance and latent dependence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub sigma2: Vec<f64>,
    pub xi: Vec<f64>,
}

impl InitialState {
    pub fn resolve(panel: &Panel, policy: &InitPolicy) -> Result<Self> {
        let k = panel.dim();
        match policy {
            InitPolicy::Given { sigma2, xi } => {
                if sigma2.len() != k || xi.len() != n_pairs(k) {
                    return Err(Error::DimensionMismatch(format!(
                        "initial state has {} variances and {} latent values for {k} series",
                        sigma2.len(),
                        xi.len()
                    )));
                }
                if sigma2.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
                    return Err(Error::InvalidParameter("initial variances must be positive".into()));
                }
                Ok(Self {
                    sigma2: sigma2.clone(),
                    xi: xi.clone(),
                })
            }
            InitPolicy::Empirical { xi_window } => {
                let t = panel.len();
                if t < 3 {
                    return Err(Error::InsufficientData(format!("{t} rows, need at least 3")));
                }
                let diffs: Vec<Vec<f64>> = (0..k)
                    .map(|i| (1..t).map(|s| panel.get(s, i) - panel.get(s - 1, i)).collect())
                    .collect();
                let sigma2: Vec<f64> = diffs
                    .iter()
                    .map(|d| stats::variance(d).max(1e-12))
                    .collect();
                let w = (*xi_window).clamp(2, t - 1);
                let mut xi = Vec::with_capacity(n_pairs(k));
                for i in 0..k {
                    for j in i + 1..k {
                        xi.push(unsquash_clamped(stats::correlation(&diffs[i][..w], &diffs[j][..w])));
                    }
                }
                Ok(Self { sigma2, xi })
            }
        }
    }
}

impl FilterState {
    /// State before the first filtered observation: lags `x0`, `x1`, zero
    /// innovations.
    pub fn initial(x0: &[f64], x1: &[f64], init: &InitialState) -> Self {
        let k = x0.len();
        Self {
            x_prev: x1.to_vec(),
            x_prev2: x0.to_vec(),
            sigma2_prev: init.sigma2.clone(),
            eps_prev: vec![0.0; k],
            xi_prev: init.xi.clone(),
            z_prev: vec![0.0; k],
        }
    }

    pub fn dim(&self) -> usize {
        self.x_prev.len()
    }

    pub fn next_conditional(&self, p: &ParameterSet) -> Result<Conditional> {
        let mu = vecm_mean(&self.x_prev, &self.x_prev2, &p.vecm)?;
        let sigma2 = self
            .sigma2_prev
            .iter()
            .zip(&self.eps_prev)
            .zip(&p.garch)
            .map(|((s, e), g)| garch_update(*s, *e, g))
            .collect();
        let xi = p.copula.step(&self.xi_prev, &self.z_prev);
        Ok(Conditional { mu, sigma2, xi })
    }

    /// Consumes the realization `x` of the conditional distribution `cond`.
    pub fn advance(&self, cond: &Conditional, x: &[f64]) -> FilterState {
        let eps: Vec<f64> = x.iter().zip(&cond.mu).map(|(a, m)| a - m).collect();
        let z = eps.iter().zip(&cond.sigma2).map(|(e, s)| e / s.sqrt()).collect();
        FilterState {
            x_prev: x.to_vec(),
            x_prev2: self.x_prev.clone(),
            sigma2_prev: cond.sigma2.clone(),
            eps_prev: eps,
            xi_prev: cond.xi.clone(),
            z_prev: z,
        }
    }
}
