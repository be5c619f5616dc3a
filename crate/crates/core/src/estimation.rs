//! Maximum-likelihood estimation.
//!
//! Fitting runs in four stages: the mean equation by reduced-rank least
//! squares, each series' variance and shape on its own, the copula with the
//! marginals held fixed, and finally a joint quasi-Newton refinement of
//! every coordinate. A warm start from previous parameters skips straight
//! to the joint stage.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::copula::{n_pairs, unsquash_clamped, CopulaParams};
use crate::data::Panel;
use crate::error::{Error, Result};
use crate::likelihood::{Engine, LikelihoodOptions, FD_STEP};
use crate::meanvol::{GarchParams, VecmParams};
use crate::optim::{fd_gradient, max_norm, minimize, BfgsOptions, BfgsOutcome};
use crate::spec::{InitPolicy, ModelSpec, ParameterSet, ShapeParams};
use crate::state::InitialState;
use crate::stats;
use crate::transform::ParamLayout;

pub const FIT_SCHEMA_VERSION: u32 = 1;

/// Practical floor on the sample length.
pub const MIN_FIT_LEN: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub bfgs: BfgsOptions,
    pub likelihood: LikelihoodOptions,
    /// Iteration cap for each warm-start stage.
    pub stage_max_iter: usize,
    pub min_len: usize,
    pub stderr: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            bfgs: BfgsOptions::default(),
            likelihood: LikelihoodOptions::default(),
            stage_max_iter: 300,
            min_len: MIN_FIT_LEN,
            stderr: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedValue {
    pub name: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub schema_version: u32,
    pub library_version: String,
    pub spec: ModelSpec,
    pub spec_label: String,
    pub params: ParameterSet,
    /// Every free coordinate on its natural scale.
    pub named: Vec<NamedValue>,
    pub loglik: f64,
    pub n_obs: usize,
    pub iterations: usize,
    pub converged: bool,
    pub grad_max_norm: f64,
    /// Log-likelihood at the start of the joint stage.
    pub start_loglik: f64,
    /// Resolved starting state of the recursions.
    pub init: InitialState,
    pub burn_in: usize,
}

impl FitResult {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: FitResult = serde_json::from_str(&text)?;
        if r.schema_version != FIT_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "fit file has schema version {}, expected {FIT_SCHEMA_VERSION}",
                r.schema_version
            )));
        }
        r.params.validate(&r.spec)?;
        Ok(r)
    }

    /// Init policy reproducing the recursions of this fit.
    pub fn init_policy(&self) -> InitPolicy {
        InitPolicy::Given {
            sigma2: self.init.sigma2.clone(),
            xi: self.init.xi.clone(),
        }
    }
}

fn lstsq(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    x.clone()
        .svd(true, true)
        .solve(y, 1e-12)
        .map_err(|e| Error::Numerical(format!("least squares failed: {e}")))
}

fn residualize(y: &DMatrix<f64>, z: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
    match z {
        None => Ok(y.clone()),
        Some(z) => Ok(y - z * lstsq(z, y)?),
    }
}

/// Mean-equation estimate: reduced-rank regression for `0 < r`, OLS of the
/// differences on their lag for `r = 0`, nothing for the random walk.
/// The cointegrating vectors are normalized to `[I_r; B]`.
pub fn estimate_vecm(panel: &Panel, spec: &ModelSpec) -> Result<VecmParams> {
    let k = panel.dim();
    let t_len = panel.len();
    if !spec.has_short_run() {
        return Ok(VecmParams::random_walk(k));
    }
    if t_len < 2 * k + 4 {
        return Err(Error::InsufficientData(format!("{t_len} rows for a {k}-dimensional VECM")));
    }
    let n = t_len - 2;
    let r = spec.rank();
    let dx = DMatrix::from_fn(n, k, |s, i| panel.get(s + 2, i) - panel.get(s + 1, i));
    let lev = DMatrix::from_fn(n, k, |s, i| panel.get(s + 1, i));
    let nz = k + usize::from(spec.intercept);
    let z = DMatrix::from_fn(n, nz, |s, j| {
        if j < k {
            panel.get(s + 1, j) - panel.get(s, j)
        } else {
            1.0
        }
    });
    let (alpha, beta) = if r == 0 {
        (DMatrix::zeros(k, 0), DMatrix::zeros(k, 0))
    } else {
        let r0 = residualize(&dx, Some(&z))?;
        let r1 = residualize(&lev, Some(&z))?;
        let nf = n as f64;
        let s00 = r0.transpose() * &r0 / nf;
        let s01 = r0.transpose() * &r1 / nf;
        let s11 = r1.transpose() * &r1 / nf;
        let l = s11
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("level moment matrix is singular".into()))?
            .l();
        let l_inv = l
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("level moment matrix is singular".into()))?;
        let s00_inv = s00
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("difference moment matrix is singular".into()))?;
        let m = &l_inv * s01.transpose() * &s00_inv * &s01 * l_inv.transpose();
        let m = (&m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::new(m);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let v = DMatrix::from_fn(k, r, |i, c| eig.eigenvectors[(i, order[c])]);
        let b_raw = l_inv.transpose() * v;
        let top = b_raw.rows(0, r).clone_owned();
        let top_inv = top
            .try_inverse()
            .ok_or_else(|| Error::Numerical("cannot normalize the cointegrating vectors".into()))?;
        let beta = &b_raw * top_inv;
        let bsb = beta.transpose() * &s11 * &beta;
        let bsb_inv = bsb
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular cointegration moment".into()))?;
        let alpha = &s01 * &beta * bsb_inv;
        (alpha, beta)
    };
    let target = if r == 0 {
        dx
    } else {
        &dx - &lev * &beta * alpha.transpose()
    };
    let coef = lstsq(&z, &target)?;
    let gamma = coef.rows(0, k).transpose();
    let intercept = spec.intercept.then(|| coef.row(k).iter().copied().collect());
    let p = VecmParams {
        alpha,
        beta,
        gamma,
        intercept,
    };
    p.validate()?;
    Ok(p)
}

/// Starting point: mean equation from `estimate_vecm`, textbook GARCH and
/// shape values, copula from the raw residual correlations.
fn initial_params(panel: &Panel, spec: &ModelSpec, vecm: VecmParams) -> Result<ParameterSet> {
    let k = panel.dim();
    let mut resid = vec![Vec::with_capacity(panel.len()); k];
    for t in 2..panel.len() {
        let mu = crate::meanvol::vecm_mean(panel.row(t - 1), panel.row(t - 2), &vecm)?;
        for i in 0..k {
            resid[i].push(panel.get(t, i) - mu[i]);
        }
    }
    let garch = resid
        .iter()
        .map(|e| {
            let v = stats::variance(e).max(1e-12);
            if !spec.sigma_time_varying {
                GarchParams::constant(v)
            } else if spec.leverage {
                GarchParams::asymmetric(0.05 * v, 0.05, 0.05, 0.9)
            } else {
                GarchParams::symmetric(0.05 * v, 0.05, 0.9)
            }
        })
        .collect();
    let marginals = vec![ShapeParams { nu: 8.0, lambda: 0.0 }; k];
    let mut xi = Vec::with_capacity(n_pairs(k));
    for i in 0..k {
        for j in i + 1..k {
            xi.push(unsquash_clamped(stats::correlation(&resid[i], &resid[j])));
        }
    }
    Ok(ParameterSet {
        vecm,
        garch,
        marginals,
        copula: copula_start(spec, 10.0, &xi),
    })
}

fn copula_start(spec: &ModelSpec, theta: f64, xi: &[f64]) -> CopulaParams {
    if spec.rho_time_varying {
        let eta1 = 0.9;
        let eta2 = 0.02;
        let eta0 = xi.iter().map(|x| x * (1.0 - eta1) - eta2 * crate::copula::squash(*x)).collect();
        CopulaParams::dynamic(theta, eta0, vec![eta1; xi.len()], vec![eta2; xi.len()])
    } else {
        CopulaParams::constant(theta, xi.to_vec())
    }
}

/// Minimizes `f` over the coordinates `idx` of `v`, the rest held fixed.
fn minimize_subset<F>(v: &[f64], idx: &[usize], f: F, opts: &BfgsOptions) -> Result<(Vec<f64>, BfgsOutcome)>
where
    F: Fn(&[f64]) -> Result<f64> + Sync + Send,
{
    let embed = |sub: &[f64]| {
        let mut w = v.to_vec();
        for (&c, &x) in idx.iter().zip(sub) {
            w[c] = x;
        }
        w
    };
    let g = |sub: &[f64]| f(&embed(sub));
    let x0: Vec<f64> = idx.iter().map(|&c| v[c]).collect();
    let out = minimize(&x0, |x| Ok((g(x)?, fd_gradient(g, x, FD_STEP)?)), g, opts)?;
    Ok((embed(&out.x), out))
}

fn staged_start(engine: &Engine, layout: &ParamLayout, opts: &FitOptions) -> Result<Vec<f64>> {
    let panel = engine.panel();
    let spec = engine.spec();
    let k = panel.dim();
    let vecm = estimate_vecm(panel, spec).or_else(|_| {
        let mut v = VecmParams::random_walk(k);
        if spec.has_short_run() {
            let r = spec.rank();
            v.alpha = DMatrix::zeros(k, r);
            v.beta = DMatrix::from_fn(k, r, |i, j| if i == j { 1.0 } else { 0.0 });
            v.intercept = spec.intercept.then(|| vec![0.0; k]);
        }
        Ok::<_, Error>(v)
    })?;
    let start = layout.interiorize(&initial_params(panel, spec, vecm)?);
    let mut v = layout.to_vector(&start)?;
    let n = engine.n_obs() as f64;
    let stage = BfgsOptions {
        max_iter: opts.stage_max_iter,
        grad_tol: opts.bfgs.grad_tol * 10.0,
        ..opts.bfgs
    };
    let names = layout.names();

    // Marginals, one series at a time.
    let per_series = crate::par::map_range(k, |i| {
        let idx: Vec<usize> = names
            .iter()
            .enumerate()
            .filter(|(_, nm)| nm.starts_with(&format!("garch[{i}].")) || nm.starts_with(&format!("marginal[{i}].")))
            .map(|(c, _)| c)
            .collect();
        let f = |w: &[f64]| Ok(-engine.series_loglik(&layout.from_vector(w)?, i)? / n);
        minimize_subset(&v, &idx, f, &stage).map(|(w, _)| (idx, w))
    });
    for r in per_series.into_iter().flatten() {
        let (idx, w) = r;
        for c in idx {
            v[c] = w[c];
        }
    }

    // Copula with the marginals fixed.
    if k >= 2 {
        let p = layout.from_vector(&v)?;
        let base = engine.workspace(&p)?;
        let mut xi = Vec::with_capacity(n_pairs(k));
        for i in 0..k {
            for j in i + 1..k {
                xi.push(unsquash_clamped(stats::correlation(base.residuals(i), base.residuals(j))));
            }
        }
        let mut p2 = p.clone();
        p2.copula = copula_start(spec, p.copula.theta, &xi);
        let idx: Vec<usize> = names
            .iter()
            .enumerate()
            .filter(|(_, nm)| nm.starts_with("copula."))
            .map(|(c, _)| c)
            .collect();
        // Only the copula block is taken over: interiorizing also moves
        // marginal parameters that the first stage left near a bound.
        if let Ok(w) = layout.to_vector(&layout.interiorize(&p2)) {
            for &c in &idx {
                v[c] = w[c];
            }
        }
        let theta0 = p.copula.theta;
        let f = |w: &[f64]| {
            let q = layout.from_vector(w)?;
            Ok(-engine.copula_loglik_with(&base, &q.copula, theta0)? / n)
        };
        if let Ok((w, _)) = minimize_subset(&v, &idx, f, &stage) {
            v = w;
        }
    }
    Ok(v)
}

/// Fits `spec` to `panel`. `warm` skips the staged start when it is usable.
pub fn fit(panel: &Panel, spec: &ModelSpec, opts: &FitOptions, warm: Option<&ParameterSet>) -> Result<FitResult> {
    if panel.len() < opts.min_len {
        return Err(Error::InsufficientData(format!(
            "{} rows, the fit needs at least {}",
            panel.len(),
            opts.min_len
        )));
    }
    let engine = Engine::new(panel, spec, &opts.likelihood)?;
    let layout = ParamLayout::new(spec, panel.dim())?;
    let warm_vec = warm
        .filter(|p| p.validate(spec).is_ok())
        .and_then(|p| layout.to_vector(&layout.interiorize(p)).ok())
        .filter(|v| engine.objective(&layout, v).is_ok());
    let v0 = match warm_vec {
        Some(v) => v,
        None => staged_start(&engine, &layout, opts)?,
    };
    let start_obj = engine.objective(&layout, &v0)?;
    let out = minimize(
        &v0,
        |x| engine.objective_and_gradient(&layout, x, None),
        |x| engine.objective(&layout, x),
        &opts.bfgs,
    )?;
    let n = engine.n_obs();
    let params = layout.from_vector(&out.x)?;
    let stderr = if opts.stderr {
        standard_errors(&engine, &layout, &out.x).ok()
    } else {
        None
    };
    let names = layout.names();
    let values = layout.natural_values(&params);
    let named = names
        .into_iter()
        .zip(values)
        .enumerate()
        .map(|(c, (name, value))| NamedValue {
            name,
            value,
            stderr: stderr.as_ref().map(|s: &Vec<f64>| s[c]),
        })
        .collect();
    Ok(FitResult {
        schema_version: FIT_SCHEMA_VERSION,
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        spec: *spec,
        spec_label: spec.pretty(),
        params,
        named,
        loglik: -out.f * n as f64,
        n_obs: n,
        iterations: out.iterations,
        converged: out.converged,
        grad_max_norm: max_norm(&out.grad),
        start_loglik: -start_obj * n as f64,
        init: engine.initial_state().clone(),
        burn_in: opts.likelihood.burn_in,
    })
}

/// Standard errors on the natural scale from a finite-difference Hessian of
/// the log-likelihood and the delta method.
pub fn standard_errors(engine: &Engine, layout: &ParamLayout, v: &[f64]) -> Result<Vec<f64>> {
    let m = v.len();
    let n = engine.n_obs() as f64;
    let grad = |w: &[f64]| engine.objective_and_gradient(layout, w, None).map(|(_, g)| g);
    let mut h = DMatrix::zeros(m, m);
    for c in 0..m {
        let step = 1e-4 * v[c].abs().max(1.0);
        let mut a = v.to_vec();
        a[c] += step;
        let mut b = v.to_vec();
        b[c] -= step;
        let (ga, gb) = (grad(&a)?, grad(&b)?);
        for r in 0..m {
            h[(r, c)] = n * (ga[r] - gb[r]) / (2.0 * step);
        }
    }
    let h = (&h + h.transpose()) * 0.5;
    let cov = h
        .cholesky()
        .ok_or_else(|| Error::Numerical("observed information is not positive definite".into()))?
        .inverse();
    let nat = |w: &[f64]| -> Result<Vec<f64>> { Ok(layout.natural_values(&layout.from_vector(w)?)) };
    let mut jac = DMatrix::zeros(m, m);
    for c in 0..m {
        let step = 1e-6 * v[c].abs().max(1.0);
        let mut a = v.to_vec();
        a[c] += step;
        let mut b = v.to_vec();
        b[c] -= step;
        let (na, nb) = (nat(&a)?, nat(&b)?);
        for r in 0..m {
            jac[(r, c)] = (na[r] - nb[r]) / (2.0 * step);
        }
    }
    let var = &jac * cov * jac.transpose();
    Ok((0..m).map(|i| var[(i, i)].max(0.0).sqrt()).collect())
}
