//! t-copula with a latent, GARCH-like correlation recursion.
//!
//! Pairs `(i, j)`, `i < j`, are stored in row order: (0,1), (0,2), ...,
//! (1,2), ... Each latent value is squashed by `0.999 * tanh` into a
//! correlation; the assembled matrix is then repaired to a correlation
//! matrix whose eigenvalues are at least `EIGEN_FLOOR`.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{ln_gamma, StudentT};

/// Bound of the correlation squash.
pub const RHO_BOUND: f64 = 0.999;
/// Smallest eigenvalue allowed in a repaired correlation matrix.
pub const EIGEN_FLOOR: f64 = 1e-5;

pub fn n_pairs(k: usize) -> usize {
    k * k.saturating_sub(1) / 2
}

pub fn pairs(k: usize) -> Vec<(usize, usize)> {
    (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect()
}

/// Latent value to correlation.
#[inline]
pub fn squash(xi: f64) -> f64 {
    RHO_BOUND * xi.tanh()
}

/// Correlation to latent value; `|rho|` must be below the squash bound.
pub fn unsquash(rho: f64) -> Result<f64> {
    if !(rho.abs() < RHO_BOUND) {
        return Err(Error::InvalidParameter(format!(
            "correlation {rho} outside (-{RHO_BOUND}, {RHO_BOUND})"
        )));
    }
    Ok((rho / RHO_BOUND).atanh())
}

/// Like `unsquash` but clamps to just inside the bound.
pub fn unsquash_clamped(rho: f64) -> f64 {
    let r = rho.clamp(-0.995 * RHO_BOUND, 0.995 * RHO_BOUND);
    (r / RHO_BOUND).atanh()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaParams {
    /// Degrees of freedom.
    pub theta: f64,
    pub time_varying: bool,
    #[serde(default)]
    pub eta0: Vec<f64>,
    #[serde(default)]
    pub eta1: Vec<f64>,
    #[serde(default)]
    pub eta2: Vec<f64>,
    /// Latent values used when the dependence is constant.
    #[serde(default)]
    pub xi_const: Vec<f64>,
}

impl CopulaParams {
    pub fn constant(theta: f64, xi_const: Vec<f64>) -> Self {
        Self {
            theta,
            time_varying: false,
            eta0: Vec::new(),
            eta1: Vec::new(),
            eta2: Vec::new(),
            xi_const,
        }
    }

    /// Constant dependence given directly as pair correlations.
    pub fn from_correlations(theta: f64, rho: &[f64]) -> Result<Self> {
        let xi = rho.iter().map(|&r| unsquash(r)).collect::<Result<Vec<_>>>()?;
        Ok(Self::constant(theta, xi))
    }

    pub fn dynamic(theta: f64, eta0: Vec<f64>, eta1: Vec<f64>, eta2: Vec<f64>) -> Self {
        Self {
            theta,
            time_varying: true,
            eta0,
            eta1,
            eta2,
            xi_const: Vec::new(),
        }
    }

    pub fn n_pairs(&self) -> usize {
        if self.time_varying {
            self.eta0.len()
        } else {
            self.xi_const.len()
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if !(self.theta > 2.0) || self.theta.is_nan() {
            return Err(Error::InvalidParameter(format!("copula dof {} must exceed 2", self.theta)));
        }
        let m = n_pairs(k);
        if self.time_varying {
            if self.eta0.len() != m || self.eta1.len() != m || self.eta2.len() != m {
                return Err(Error::DimensionMismatch(format!("copula recursion needs {m} pair coefficients")));
            }
            if self.eta1.iter().any(|e| !(e.abs() < 1.0)) {
                return Err(Error::InvalidParameter("|eta1| must be below 1".into()));
            }
            if self.eta0.iter().chain(&self.eta2).any(|e| !e.is_finite()) {
                return Err(Error::InvalidParameter("non-finite copula coefficient".into()));
            }
        } else if self.xi_const.len() != m {
            return Err(Error::DimensionMismatch(format!("constant dependence needs {m} pair values")));
        } else if self.xi_const.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("non-finite dependence value".into()));
        }
        Ok(())
    }

    /// Fixed point of the recursion with zero innovations (or the constant
    /// values when the dependence does not vary).
    pub fn stationary_xi(&self) -> Vec<f64> {
        if self.time_varying {
            self.eta0.iter().zip(&self.eta1).map(|(a, b)| a / (1.0 - b)).collect()
        } else {
            self.xi_const.clone()
        }
    }

    /// One recursion step for all pairs. `z` holds the lagged standardized
    /// residuals of every series.
    pub fn step(&self, xi_prev: &[f64], z: &[f64]) -> Vec<f64> {
        if !self.time_varying {
            return self.xi_const.clone();
        }
        let k = z.len();
        pairs(k)
            .into_iter()
            .enumerate()
            .map(|(p, (i, j))| xi_update(xi_prev[p], z[i], z[j], self.eta0[p], self.eta1[p], self.eta2[p]))
            .collect()
    }
}

/// `eta0 + eta1 * xi_prev + eta2 * z_i * z_j`.
#[inline]
pub fn xi_update(xi_prev: f64, z_i: f64, z_j: f64, eta0: f64, eta1: f64, eta2: f64) -> f64 {
    eta0 + eta1 * xi_prev + eta2 * z_i * z_j
}

/// Latent dependence values with their correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DependenceState {
    pub xi: Vec<f64>,
    pub corr: DMatrix<f64>,
}

impl DependenceState {
    pub fn new(k: usize, xi: Vec<f64>) -> Result<Self> {
        let corr = link_lambda(k, &xi)?;
        Ok(Self { xi, corr })
    }

    /// Off-diagonal correlations in pair order.
    pub fn pair_correlations(&self) -> Vec<f64> {
        pairs(self.corr.nrows()).into_iter().map(|(i, j)| self.corr[(i, j)]).collect()
    }
}

/// Latent values to a valid correlation matrix.
pub fn link_lambda(k: usize, xi: &[f64]) -> Result<DMatrix<f64>> {
    if xi.len() != n_pairs(k) {
        return Err(Error::DimensionMismatch(format!(
            "{} latent values for {k} series",
            xi.len()
        )));
    }
    if let Some(bad) = xi.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite latent dependence at pair {bad}")));
    }
    let mut m = DMatrix::identity(k, k);
    for (p, (i, j)) in pairs(k).into_iter().enumerate() {
        let r = squash(xi[p]);
        m[(i, j)] = r;
        m[(j, i)] = r;
    }
    // 2x2 matrices with |rho| <= 0.999 already clear the floor.
    if k <= 2 {
        return Ok(m);
    }
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.min() >= EIGEN_FLOOR {
        return Ok(m);
    }
    Ok(repair(eig, k))
}

fn repair(eig: SymmetricEigen<f64, Dyn>, k: usize) -> DMatrix<f64> {
    let floored = eig.eigenvalues.map(|v| v.max(EIGEN_FLOOR));
    let v = &eig.eigenvectors;
    let mut m = v * DMatrix::from_diagonal(&floored) * v.transpose();
    let d: Vec<f64> = (0..k).map(|i| m[(i, i)].sqrt()).collect();
    for i in 0..k {
        for j in 0..k {
            m[(i, j)] /= d[i] * d[j];
        }
    }
    symmetrize_unit(&mut m);
    // Rescaling can pull the smallest eigenvalue slightly below the floor;
    // a convex step toward the identity restores it.
    let lmin = SymmetricEigen::new(m.clone()).eigenvalues.min();
    if lmin < EIGEN_FLOOR {
        let w = (EIGEN_FLOOR - lmin) / (1.0 - lmin);
        m *= 1.0 - w;
        for i in 0..k {
            m[(i, i)] += w;
        }
        symmetrize_unit(&mut m);
    }
    m
}

fn symmetrize_unit(m: &mut DMatrix<f64>) {
    let k = m.nrows();
    for i in 0..k {
        m[(i, i)] = 1.0;
        for j in i + 1..k {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}

/// A t-copula with fixed correlation matrix, ready for repeated density
/// evaluation and sampling.
#[derive(Debug, Clone)]
pub struct TCopula {
    k: usize,
    theta: f64,
    chol: DMatrix<f64>,
    ln_const: f64,
    marginal: StudentT,
}

impl TCopula {
    pub fn new(corr: &DMatrix<f64>, theta: f64) -> Result<Self> {
        let k = corr.nrows();
        if !(theta > 0.0) {
            return Err(Error::InvalidParameter(format!("copula dof {theta} must be positive")));
        }
        let chol = Cholesky::new(corr.clone())
            .ok_or_else(|| Error::Numerical("correlation matrix is not positive definite".into()))?
            .unpack();
        let ln_det: f64 = 2.0 * (0..k).map(|i| chol[(i, i)].ln()).sum::<f64>();
        let kf = k as f64;
        let marginal = StudentT::new(theta);
        let ln_mvt = ln_gamma(0.5 * (theta + kf)) - ln_gamma(0.5 * theta) - 0.5 * kf * (theta * PI).ln() - 0.5 * ln_det;
        let ln_uni = ln_gamma(0.5 * (theta + 1.0)) - ln_gamma(0.5 * theta) - 0.5 * (theta * PI).ln();
        Ok(Self {
            k,
            theta,
            chol,
            ln_const: ln_mvt - kf * ln_uni,
            marginal,
        })
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Log density at the t-quantiles `q_i = t_theta^{-1}(u_i)`.
    pub fn ln_density_at_quantiles(&self, q: &[f64]) -> f64 {
        let k = self.k;
        let th = self.theta;
        let mut y = [0.0f64; 16];
        let mut heap;
        let y: &mut [f64] = if k <= 16 {
            &mut y[..k]
        } else {
            heap = vec![0.0; k];
            &mut heap
        };
        let mut quad = 0.0;
        let mut uni = 0.0;
        for i in 0..k {
            let mut s = q[i];
            for j in 0..i {
                s -= self.chol[(i, j)] * y[j];
            }
            y[i] = s / self.chol[(i, i)];
            quad += y[i] * y[i];
            uni += (q[i] * q[i] / th).ln_1p();
        }
        self.ln_const - 0.5 * (th + k as f64) * (quad / th).ln_1p() + 0.5 * (th + 1.0) * uni
    }

    pub fn ln_density(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.k {
            return Err(Error::DimensionMismatch(format!("{} probabilities for {} series", u.len(), self.k)));
        }
        if let Some(&bad) = u.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::InvalidProbability(bad));
        }
        let q: Vec<f64> = u.iter().map(|&v| self.marginal.quantile(v)).collect();
        Ok(self.ln_density_at_quantiles(&q))
    }

    /// One draw as `(u, 1 - u)` pairs, each accurate in its own tail.
    pub fn sample_tails<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<(f64, f64)> {
        let k = self.k;
        let g: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
        let w: f64 = ChiSquared::new(self.theta).expect("theta > 0").sample(rng);
        let scale = (w / self.theta).sqrt();
        (0..k)
            .map(|i| {
                let y: f64 = (0..=i).map(|j| self.chol[(i, j)] * g[j]).sum::<f64>() / scale;
                let (lo, up) = self.marginal.tails(y);
                (lo.max(f64::MIN_POSITIVE), up.max(f64::MIN_POSITIVE))
            })
            .collect()
    }

    /// One draw on the open unit cube.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.sample_tails(rng)
            .into_iter()
            .map(|(lo, up)| if lo < 0.5 { lo } else { (1.0 - up).min(1.0 - f64::EPSILON / 2.0) })
            .collect()
    }
}

/// Density of the t-copula at `u`.
pub fn copula_density(u: &[f64], corr: &DMatrix<f64>, theta: f64) -> Result<f64> {
    Ok(TCopula::new(corr, theta)?.ln_density(u)?.exp())
}

/// `n` draws as an `n x K` matrix.
pub fn copula_sample<R: Rng + ?Sized>(n: usize, corr: &DMatrix<f64>, theta: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    let cop = TCopula::new(corr, theta)?;
    let k = cop.dim();
    let mut out = DMatrix::zeros(n, k);
    for r in 0..n {
        for (c, v) in cop.sample(rng).into_iter().enumerate() {
            out[(r, c)] = v;
        }
    }
    Ok(out)
}

/// Kendall's tau implied by an elliptical copula with correlation `rho`.
pub fn implied_kendall_tau(rho: f64) -> f64 {
    2.0 / PI * rho.asin()
}
