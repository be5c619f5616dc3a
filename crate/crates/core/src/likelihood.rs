//! Filtering and the joint log-likelihood.
//!
//! The marginal part of the likelihood separates by series: series `i`
//! depends only on row `i` of the mean equation, its own GARCH block and its
//! own shape (plus the cointegrating vectors, shared by all rows). The
//! engine keeps one cached column per series so a finite-difference step in
//! one coordinate only recomputes what that coordinate touches.

use serde::{Deserialize, Serialize};

use crate::copula::{link_lambda, CopulaParams, DependenceState, TCopula};
use crate::data::Panel;
use crate::error::{Error, Result};
use crate::marginal::StandardizedNct;
use crate::meanvol::{garch_update, MeanVolState};
use crate::par;
use crate::spec::{InitPolicy, ModelSpec, ParameterSet};
use crate::special::StudentT;
use crate::state::{FilterState, InitialState};
use crate::transform::{Affects, ParamLayout};

pub const DEFAULT_BURN_IN: usize = 10;

/// Relative finite-difference step in unconstrained coordinates.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodOptions {
    /// Filtered observations excluded from the likelihood sum.
    pub burn_in: usize,
    pub init: InitPolicy,
}

impl Default for LikelihoodOptions {
    fn default() -> Self {
        Self {
            burn_in: DEFAULT_BURN_IN,
            init: InitPolicy::default(),
        }
    }
}

/// Filtered quantities of one series for t = 2..T.
#[derive(Debug, Clone)]
struct Column {
    mu: Vec<f64>,
    sigma2: Vec<f64>,
    z: Vec<f64>,
    lo: Vec<f64>,
    up: Vec<f64>,
    ln_f: Vec<f64>,
}

/// Cached evaluation at one parameter point.
#[derive(Debug, Clone)]
pub struct Workspace {
    cols: Vec<Column>,
    q: Vec<Vec<f64>>,
    marginal: Vec<f64>,
    copula: f64,
}

impl Workspace {
    pub fn loglik(&self) -> f64 {
        self.marginal.iter().sum::<f64>() + self.copula
    }

    pub fn marginal_loglik(&self, i: usize) -> f64 {
        self.marginal[i]
    }

    pub fn copula_loglik(&self) -> f64 {
        self.copula
    }

    /// Standardized residuals of series `i` for t = 2..T.
    pub fn residuals(&self, i: usize) -> &[f64] {
        &self.cols[i].z
    }

    /// Conditional variances of series `i` for t = 2..T.
    pub fn variances(&self, i: usize) -> &[f64] {
        &self.cols[i].sigma2
    }
}

/// Likelihood evaluator bound to one panel and spec.
#[derive(Debug, Clone)]
pub struct Engine<'a> {
    panel: &'a Panel,
    spec: ModelSpec,
    burn_in: usize,
    init: InitialState,
}

impl<'a> Engine<'a> {
    pub fn new(panel: &'a Panel, spec: &ModelSpec, opts: &LikelihoodOptions) -> Result<Self> {
        spec.validate(panel.dim())?;
        if panel.len() < 3 + opts.burn_in {
            return Err(Error::InsufficientData(format!(
                "{} rows leave no observations after the two lags and a burn-in of {}",
                panel.len(),
                opts.burn_in
            )));
        }
        let init = InitialState::resolve(panel, &opts.init)?;
        Ok(Self {
            panel,
            spec: *spec,
            burn_in: opts.burn_in,
            init,
        })
    }

    pub fn panel(&self) -> &Panel {
        self.panel
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn initial_state(&self) -> &InitialState {
        &self.init
    }

    /// Number of filtered time points (T - 2).
    pub fn n_filtered(&self) -> usize {
        self.panel.len() - 2
    }

    /// Number of terms in the likelihood sum.
    pub fn n_obs(&self) -> usize {
        self.n_filtered() - self.burn_in
    }

    fn pi_row(&self, p: &ParameterSet, i: usize) -> Vec<f64> {
        let k = self.panel.dim();
        let r = p.vecm.rank();
        (0..k)
            .map(|j| (0..r).map(|c| p.vecm.alpha[(i, c)] * p.vecm.beta[(j, c)]).sum())
            .collect()
    }

    fn column(&self, p: &ParameterSet, i: usize) -> Result<Column> {
        let x = self.panel;
        let k = x.dim();
        let n = self.n_filtered();
        let g = &p.garch[i];
        let shape = p.marginals[i];
        let law = StandardizedNct::new(shape.nu, shape.lambda)?;
        let pi = self.pi_row(p, i);
        let has_pi = p.vecm.rank() > 0;
        let gamma: Vec<f64> = (0..k).map(|j| p.vecm.gamma[(i, j)]).collect();
        let has_gamma = gamma.iter().any(|&v| v != 0.0);
        let c = p.vecm.intercept.as_ref().map_or(0.0, |c| c[i]);

        let mut col = Column {
            mu: Vec::with_capacity(n),
            sigma2: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
            lo: Vec::with_capacity(n),
            up: Vec::with_capacity(n),
            ln_f: Vec::with_capacity(n),
        };
        let mut s2 = self.init.sigma2[i];
        let mut eps = 0.0;
        for t in 2..x.len() {
            let xp = x.row(t - 1);
            let mut mu = xp[i] + c;
            if has_pi {
                mu += pi.iter().zip(xp).map(|(a, b)| a * b).sum::<f64>();
            }
            if has_gamma {
                let xp2 = x.row(t - 2);
                mu += (0..k).map(|j| gamma[j] * (xp[j] - xp2[j])).sum::<f64>();
            }
            s2 = garch_update(s2, eps, g);
            if !(s2 > 0.0) || !s2.is_finite() {
                return Err(Error::NonFinite {
                    t,
                    component: format!("variance of series {i}"),
                });
            }
            eps = x.get(t, i) - mu;
            let sd = s2.sqrt();
            let z = eps / sd;
            let (lo, up) = law.tails(z);
            let lf = law.ln_pdf(z) - sd.ln();
            if !lf.is_finite() || !mu.is_finite() {
                return Err(Error::NonFinite {
                    t,
                    component: format!("marginal density of series {i}"),
                });
            }
            col.mu.push(mu);
            col.sigma2.push(s2);
            col.z.push(z);
            col.lo.push(lo);
            col.up.push(up);
            col.ln_f.push(lf);
        }
        Ok(col)
    }

    fn column_sum(&self, col: &Column) -> f64 {
        col.ln_f[self.burn_in..].iter().sum()
    }

    fn quantiles(&self, col: &Column, theta: f64) -> Vec<f64> {
        if self.panel.dim() < 2 {
            return Vec::new();
        }
        let t = StudentT::new(theta);
        col.lo.iter().zip(&col.up).map(|(&lo, &up)| t.quantile_tails(lo, up)).collect()
    }

    /// Copula part of the log-likelihood from residual and quantile columns.
    fn copula_sum(&self, z: &[&[f64]], q: &[&[f64]], cop: &CopulaParams) -> Result<f64> {
        let k = self.panel.dim();
        if k < 2 {
            return Ok(0.0);
        }
        let n = self.n_filtered();
        let mut qt = vec![0.0; k];
        let mut total = 0.0;
        let check = |v: f64, n: usize| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFinite {
                    t: n + 2,
                    component: "copula density".into(),
                })
            }
        };
        if !cop.time_varying {
            let tc = TCopula::new(&link_lambda(k, &cop.xi_const)?, cop.theta)?;
            for s in self.burn_in..n {
                for i in 0..k {
                    qt[i] = q[i][s];
                }
                total += check(tc.ln_density_at_quantiles(&qt), s)?;
            }
            return Ok(total);
        }
        let mut xi = self.init.xi.clone();
        let mut zprev = vec![0.0; k];
        for s in 0..n {
            xi = cop.step(&xi, &zprev);
            if s >= self.burn_in {
                let tc = TCopula::new(&link_lambda(k, &xi)?, cop.theta)?;
                for i in 0..k {
                    qt[i] = q[i][s];
                }
                total += check(tc.ln_density_at_quantiles(&qt), s)?;
            }
            for i in 0..k {
                zprev[i] = z[i][s];
            }
        }
        Ok(total)
    }

    /// Full evaluation with cached columns.
    pub fn workspace(&self, p: &ParameterSet) -> Result<Workspace> {
        let k = self.panel.dim();
        let cols = (0..k).map(|i| self.column(p, i)).collect::<Result<Vec<_>>>()?;
        let q: Vec<Vec<f64>> = cols.iter().map(|c| self.quantiles(c, p.copula.theta)).collect();
        let marginal = cols.iter().map(|c| self.column_sum(c)).collect();
        let z: Vec<&[f64]> = cols.iter().map(|c| c.z.as_slice()).collect();
        let qs: Vec<&[f64]> = q.iter().map(Vec::as_slice).collect();
        let copula = self.copula_sum(&z, &qs, &p.copula)?;
        Ok(Workspace {
            cols,
            q,
            marginal,
            copula,
        })
    }

    /// Log-likelihood at `p` (validated first).
    pub fn log_likelihood(&self, p: &ParameterSet) -> Result<f64> {
        p.validate(&self.spec)?;
        let v = self.workspace(p)?.loglik();
        if !v.is_finite() {
            return Err(Error::NonFinite {
                t: 0,
                component: "log-likelihood".into(),
            });
        }
        Ok(v)
    }

    /// Marginal log-likelihood of one series alone.
    pub fn series_loglik(&self, p: &ParameterSet, i: usize) -> Result<f64> {
        Ok(self.column_sum(&self.column(p, i)?))
    }

    /// Copula log-likelihood with the marginal columns of `base` held fixed;
    /// the t-quantiles are reused unless the degrees of freedom change.
    pub fn copula_loglik_with(&self, base: &Workspace, cop: &CopulaParams, base_theta: f64) -> Result<f64> {
        let z: Vec<&[f64]> = base.cols.iter().map(|c| c.z.as_slice()).collect();
        if cop.theta == base_theta {
            let qs: Vec<&[f64]> = base.q.iter().map(Vec::as_slice).collect();
            self.copula_sum(&z, &qs, cop)
        } else {
            let q: Vec<Vec<f64>> = base.cols.iter().map(|c| self.quantiles(c, cop.theta)).collect();
            let qs: Vec<&[f64]> = q.iter().map(Vec::as_slice).collect();
            self.copula_sum(&z, &qs, cop)
        }
    }

    /// Log-likelihood at `p`, reusing every cached piece of `base` that the
    /// coordinate class `affects` leaves unchanged.
    fn loglik_from(&self, base: &Workspace, p: &ParameterSet, affects: Affects) -> Result<f64> {
        match affects {
            Affects::AllSeries => Ok(self.workspace(p)?.loglik()),
            Affects::Series(i) => {
                let col = self.column(p, i)?;
                let qi = self.quantiles(&col, p.copula.theta);
                let marg: f64 = base
                    .marginal
                    .iter()
                    .enumerate()
                    .map(|(j, &m)| if j == i { self.column_sum(&col) } else { m })
                    .sum();
                let z: Vec<&[f64]> = base
                    .cols
                    .iter()
                    .enumerate()
                    .map(|(j, c)| if j == i { col.z.as_slice() } else { c.z.as_slice() })
                    .collect();
                let qs: Vec<&[f64]> = base
                    .q
                    .iter()
                    .enumerate()
                    .map(|(j, q)| if j == i { qi.as_slice() } else { q.as_slice() })
                    .collect();
                Ok(marg + self.copula_sum(&z, &qs, &p.copula)?)
            }
            Affects::Copula => {
                let z: Vec<&[f64]> = base.cols.iter().map(|c| c.z.as_slice()).collect();
                let qs: Vec<&[f64]> = base.q.iter().map(Vec::as_slice).collect();
                Ok(base.marginal.iter().sum::<f64>() + self.copula_sum(&z, &qs, &p.copula)?)
            }
            Affects::CopulaDof => {
                let q: Vec<Vec<f64>> = base.cols.iter().map(|c| self.quantiles(c, p.copula.theta)).collect();
                let z: Vec<&[f64]> = base.cols.iter().map(|c| c.z.as_slice()).collect();
                let qs: Vec<&[f64]> = q.iter().map(Vec::as_slice).collect();
                Ok(base.marginal.iter().sum::<f64>() + self.copula_sum(&z, &qs, &p.copula)?)
            }
        }
    }

    /// Mean negative log-likelihood per observation at unconstrained `v`.
    pub fn objective(&self, layout: &ParamLayout, v: &[f64]) -> Result<f64> {
        let p = layout.from_vector(v)?;
        let ll = self.workspace(&p)?.loglik();
        finite_objective(-ll / self.n_obs() as f64)
    }

    /// Objective value and its central finite-difference gradient over the
    /// coordinates in `free` (all coordinates when `None`). Coordinates are
    /// evaluated in parallel; each reuses the cached columns it does not
    /// touch.
    pub fn objective_and_gradient(
        &self,
        layout: &ParamLayout,
        v: &[f64],
        free: Option<&[usize]>,
    ) -> Result<(f64, Vec<f64>)> {
        let p = layout.from_vector(v)?;
        let base = self.workspace(&p)?;
        let n = self.n_obs() as f64;
        let f0 = finite_objective(-base.loglik() / n)?;
        let all: Vec<usize>;
        let idx = match free {
            Some(f) => f,
            None => {
                all = (0..v.len()).collect();
                &all
            }
        };
        let coords = layout.coords();
        let eval = |c: usize, x: f64| -> Result<f64> {
            let mut w = v.to_vec();
            w[c] = x;
            let q = layout.from_vector(&w)?;
            finite_objective(-self.loglik_from(&base, &q, coords[c].affects)? / n)
        };
        let parts = par::map_slice(idx, |&c| {
            let h = FD_STEP * v[c].abs().max(1.0);
            let fp = eval(c, v[c] + h);
            let fm = eval(c, v[c] - h);
            match (fp, fm) {
                (Ok(a), Ok(b)) => Ok((a - b) / (2.0 * h)),
                (Ok(a), Err(_)) => Ok((a - f0) / h),
                (Err(_), Ok(b)) => Ok((f0 - b) / h),
                (Err(e), Err(_)) => Err(Error::Numerical(format!(
                    "finite-difference step failed in both directions for {}: {e}",
                    coords[c].name
                ))),
            }
        });
        let g = parts.into_iter().collect::<Result<Vec<f64>>>()?;
        Ok((f0, g))
    }
}

fn finite_objective(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            t: 0,
            component: "log-likelihood".into(),
        })
    }
}

/// Convenience wrapper: log-likelihood of `p` on `panel`.
pub fn log_likelihood(panel: &Panel, spec: &ModelSpec, p: &ParameterSet, opts: &LikelihoodOptions) -> Result<f64> {
    Engine::new(panel, spec, opts)?.log_likelihood(p)
}

/// Per-time-point filter output for t = 2..T.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub states: Vec<MeanVolState>,
    pub z: Vec<Vec<f64>>,
    pub dependence: Vec<DependenceState>,
    /// State after the last observation, ready for forecasting.
    pub last: FilterState,
}

/// Runs the mean, variance and dependence recursions over the panel.
pub fn filter_pass(panel: &Panel, spec: &ModelSpec, p: &ParameterSet, init: &InitPolicy) -> Result<FilterOutput> {
    if panel.len() < 3 {
        return Err(Error::InsufficientData(format!("{} rows, need at least 3", panel.len())));
    }
    p.validate(spec)?;
    let opts = LikelihoodOptions {
        burn_in: 0,
        init: init.clone(),
    };
    let engine = Engine::new(panel, spec, &opts)?;
    let k = panel.dim();
    let cols = (0..k).map(|i| engine.column(p, i)).collect::<Result<Vec<_>>>()?;
    let n = engine.n_filtered();
    let mut states = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut dependence = Vec::with_capacity(n);
    let mut xi = engine.init.xi.clone();
    let mut zprev = vec![0.0; k];
    let mut eps_prev = vec![0.0; k];
    for s in 0..n {
        let t = s + 2;
        xi = p.copula.step(&xi, &zprev);
        dependence.push(DependenceState::new(k, xi.clone())?);
        let zt: Vec<f64> = cols.iter().map(|c| c.z[s]).collect();
        states.push(MeanVolState {
            mu: cols.iter().map(|c| c.mu[s]).collect(),
            sigma2: cols.iter().map(|c| c.sigma2[s]).collect(),
            eps_prev: eps_prev.clone(),
            x_prev: panel.row(t - 1).to_vec(),
            x_prev2: panel.row(t - 2).to_vec(),
        });
        eps_prev = (0..k).map(|i| panel.get(t, i) - cols[i].mu[s]).collect();
        zprev = zt.clone();
        z.push(zt);
    }
    let tl = panel.len();
    let last = FilterState {
        x_prev: panel.row(tl - 1).to_vec(),
        x_prev2: panel.row(tl - 2).to_vec(),
        sigma2_prev: states.last().expect("n >= 1").sigma2.clone(),
        eps_prev,
        xi_prev: xi,
        z_prev: zprev,
    };
    Ok(FilterOutput {
        states,
        z,
        dependence,
        last,
    })
}

/// Off-diagonal correlation paths, one vector per pair in pair order.
pub fn correlation_path(states: &[DependenceState]) -> Result<Vec<Vec<f64>>> {
    let first = states
        .first()
        .ok_or_else(|| Error::InsufficientData("no dependence states".into()))?;
    let m = first.xi.len();
    let mut out = vec![Vec::with_capacity(states.len()); m];
    for s in states {
        for (p, r) in s.pair_correlations().into_iter().enumerate() {
            out[p].push(r);
        }
    }
    Ok(out)
}
