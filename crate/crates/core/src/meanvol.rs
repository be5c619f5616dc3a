//! Conditional mean (VECM) and conditional variance (asymmetric GARCH)
//! recursions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Error-correction mean parameters. `Pi = alpha * beta^T`; with rank 0 both
/// factors have zero columns and `Pi = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VecmParams {
    #[serde(with = "mat_rows")]
    pub alpha: DMatrix<f64>,
    #[serde(with = "mat_rows")]
    pub beta: DMatrix<f64>,
    #[serde(with = "mat_rows")]
    pub gamma: DMatrix<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intercept: Option<Vec<f64>>,
}

impl VecmParams {
    /// Random walk in `k` dimensions.
    pub fn random_walk(k: usize) -> Self {
        Self {
            alpha: DMatrix::zeros(k, 0),
            beta: DMatrix::zeros(k, 0),
            gamma: DMatrix::zeros(k, k),
            intercept: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn rank(&self) -> usize {
        self.alpha.ncols()
    }

    pub fn pi(&self) -> DMatrix<f64> {
        if self.rank() == 0 {
            DMatrix::zeros(self.dim(), self.dim())
        } else {
            &self.alpha * self.beta.transpose()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.dim();
        if self.gamma.ncols() != k
            || self.alpha.nrows() != k
            || self.beta.nrows() != k
            || self.beta.ncols() != self.alpha.ncols()
            || self.rank() > k
        {
            return Err(Error::DimensionMismatch(format!(
                "alpha {}x{}, beta {}x{}, gamma {}x{}",
                self.alpha.nrows(),
                self.alpha.ncols(),
                self.beta.nrows(),
                self.beta.ncols(),
                self.gamma.nrows(),
                self.gamma.ncols()
            )));
        }
        if let Some(c) = &self.intercept {
            if c.len() != k {
                return Err(Error::DimensionMismatch(format!("intercept has {} entries, expected {k}", c.len())));
            }
        }
        let finite = self.alpha.iter().chain(self.beta.iter()).chain(self.gamma.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("non-finite VECM coefficient".into()));
        }
        Ok(())
    }
}

/// `mu_t = x_{t-1} + Pi x_{t-1} + Gamma (x_{t-1} - x_{t-2}) [+ c]`.
pub fn vecm_mean(x_prev: &[f64], x_prev2: &[f64], p: &VecmParams) -> Result<Vec<f64>> {
    let k = p.dim();
    if x_prev.len() != k || x_prev2.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "lags have length {} and {}, parameters expect {k}",
            x_prev.len(),
            x_prev2.len()
        )));
    }
    let xp = DVector::from_column_slice(x_prev);
    let dx = DVector::from_iterator(k, x_prev.iter().zip(x_prev2).map(|(a, b)| a - b));
    let mut mu = &xp + &p.gamma * dx;
    if p.rank() > 0 {
        mu += &p.alpha * (p.beta.transpose() * &xp);
    }
    if let Some(c) = &p.intercept {
        for (m, ci) in mu.iter_mut().zip(c) {
            *m += ci;
        }
    }
    Ok(mu.as_slice().to_vec())
}

/// Asymmetric GARCH(1,1) coefficients. A constant-variance marginal is the
/// special case `alpha_pos = alpha_neg = beta = 0`, `omega = sigma^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub omega: f64,
    pub alpha_pos: f64,
    pub alpha_neg: f64,
    pub beta: f64,
    pub leverage: bool,
}

impl GarchParams {
    pub fn constant(sigma2: f64) -> Self {
        Self {
            omega: sigma2,
            alpha_pos: 0.0,
            alpha_neg: 0.0,
            beta: 0.0,
            leverage: false,
        }
    }

    pub fn symmetric(omega: f64, alpha: f64, beta: f64) -> Self {
        Self {
            omega,
            alpha_pos: alpha,
            alpha_neg: alpha,
            beta,
            leverage: false,
        }
    }

    pub fn asymmetric(omega: f64, alpha_pos: f64, alpha_neg: f64, beta: f64) -> Self {
        Self {
            omega,
            alpha_pos,
            alpha_neg,
            beta,
            leverage: true,
        }
    }

    /// Persistence `(alpha_pos + alpha_neg) / 2 + beta`.
    pub fn persistence(&self) -> f64 {
        0.5 * (self.alpha_pos + self.alpha_neg) + self.beta
    }

    pub fn unconditional_variance(&self) -> f64 {
        self.omega / (1.0 - self.persistence())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0) || !self.omega.is_finite() {
            return Err(Error::InvalidParameter(format!("omega = {} must be positive", self.omega)));
        }
        if !(self.alpha_pos >= 0.0 && self.alpha_neg >= 0.0 && self.beta >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "GARCH coefficients must be non-negative: alpha+ = {}, alpha- = {}, beta = {}",
                self.alpha_pos, self.alpha_neg, self.beta
            )));
        }
        if !self.leverage && self.alpha_pos != self.alpha_neg {
            return Err(Error::InvalidParameter(
                "alpha+ and alpha- must be equal without leverage".into(),
            ));
        }
        if !(self.persistence() < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "persistence {} must be below 1",
                self.persistence()
            )));
        }
        Ok(())
    }
}

/// `omega + alpha+ (eps+)^2 + alpha- (eps-)^2 + beta sigma2_prev`.
#[inline]
pub fn garch_update(sigma2_prev: f64, eps_prev: f64, p: &GarchParams) -> f64 {
    let a = if eps_prev > 0.0 { p.alpha_pos } else { p.alpha_neg };
    p.omega + a * eps_prev * eps_prev + p.beta * sigma2_prev
}

/// Conditional mean and variance at one time point, plus the lagged
/// quantities that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanVolState {
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub eps_prev: Vec<f64>,
    pub x_prev: Vec<f64>,
    pub x_prev2: Vec<f64>,
}

/// Serializes a matrix as a list of rows.
pub(crate) mod mat_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Rows {
        rows: usize,
        cols: usize,
        data: Vec<Vec<f64>>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let data = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        Rows {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let r = Rows::deserialize(d)?;
        if r.data.len() != r.rows || r.data.iter().any(|row| row.len() != r.cols) {
            return Err(serde::de::Error::custom("matrix rows do not match declared shape"));
        }
        Ok(DMatrix::from_fn(r.rows, r.cols, |i, j| r.data[i][j]))
    }
}
