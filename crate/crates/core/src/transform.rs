//! Bijection between a `ParameterSet` and an unconstrained vector.
//!
//! * positive scales: `exp`
//! * GARCH coefficients: `(alpha+/2, alpha-/2, beta, slack) = 0.999 softmax(a1, a2, b, 0)`,
//!   or `(alpha, beta, slack) = 0.999 softmax(a, b, 0)` without leverage,
//!   which keeps the persistence below 0.999
//! * marginal dof: `2 + 498 logistic(w)`, copula dof: `2 + 398 logistic(w)`
//! * latent persistence `eta1 = 0.999 tanh(c)`; everything else is free.

use nalgebra::DMatrix;

use crate::copula::{pairs, squash, unsquash, CopulaParams, RHO_BOUND};
use crate::error::{Error, Result};
use crate::meanvol::{GarchParams, VecmParams};
use crate::spec::{ModelSpec, ParameterSet, ShapeParams};

pub const PERSISTENCE_CAP: f64 = 0.999;
pub const NU_MAX: f64 = 500.0;
pub const THETA_MAX: f64 = 400.0;

/// Which cached likelihood pieces a coordinate touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Affects {
    /// Only the marginal column of one series.
    Series(usize),
    /// All marginal columns (cointegrating vectors).
    AllSeries,
    /// Only the copula recursion.
    Copula,
    /// The copula degrees of freedom (and hence every t-quantile).
    CopulaDof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coord {
    pub name: String,
    pub affects: Affects,
}

/// Coordinate layout of the unconstrained vector for one spec and dimension.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    spec: ModelSpec,
    k: usize,
    coords: Vec<Coord>,
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Saturated coordinates are kept strictly inside `(lo, hi)`.
fn bounded(x: f64, lo: f64, hi: f64) -> f64 {
    let eps = 1e-12;
    lo + (hi - lo) * logistic(x).clamp(eps, 1.0 - eps)
}

fn unbounded(v: f64, lo: f64, hi: f64, what: &str) -> Result<f64> {
    if !(v > lo && v < hi) {
        return Err(Error::InvalidParameter(format!("{what} = {v} outside ({lo}, {hi})")));
    }
    Ok(logit((v - lo) / (hi - lo)))
}

/// `scale * softmax(c, 0)`, last entry (the slack) dropped.
fn softmax_shares(c: &[f64], scale: f64) -> Vec<f64> {
    let m = c.iter().copied().fold(0.0, f64::max);
    let e: Vec<f64> = c.iter().map(|v| (v - m).exp()).collect();
    let denom = e.iter().sum::<f64>() + (-m).exp();
    e.iter().map(|v| scale * v / denom).collect()
}

fn inverse_shares(shares: &[f64], scale: f64, what: &str) -> Result<Vec<f64>> {
    let p: Vec<f64> = shares.iter().map(|s| s / scale).collect();
    let slack = 1.0 - p.iter().sum::<f64>();
    if p.iter().any(|&v| !(v > 0.0)) || !(slack > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "{what} {shares:?} outside the open stationarity simplex"
        )));
    }
    Ok(p.iter().map(|v| (v / slack).ln()).collect())
}

impl ParamLayout {
    pub fn new(spec: &ModelSpec, k: usize) -> Result<Self> {
        spec.validate(k)?;
        let mut coords = Vec::new();
        let mut push = |name: String, affects: Affects| coords.push(Coord { name, affects });
        let r = spec.rank();
        for i in 0..k {
            for j in 0..r {
                push(format!("vecm.alpha[{i},{j}]"), Affects::Series(i));
            }
        }
        for i in r..k {
            for j in 0..r {
                push(format!("vecm.beta[{i},{j}]"), Affects::AllSeries);
            }
        }
        if spec.has_short_run() {
            for i in 0..k {
                for j in 0..k {
                    push(format!("vecm.gamma[{i},{j}]"), Affects::Series(i));
                }
            }
        }
        if spec.intercept {
            for i in 0..k {
                push(format!("vecm.intercept[{i}]"), Affects::Series(i));
            }
        }
        for i in 0..k {
            if spec.sigma_time_varying {
                push(format!("garch[{i}].omega"), Affects::Series(i));
                if spec.leverage {
                    push(format!("garch[{i}].alpha_pos"), Affects::Series(i));
                    push(format!("garch[{i}].alpha_neg"), Affects::Series(i));
                } else {
                    push(format!("garch[{i}].alpha"), Affects::Series(i));
                }
                push(format!("garch[{i}].beta"), Affects::Series(i));
            } else {
                push(format!("garch[{i}].sigma2"), Affects::Series(i));
            }
            push(format!("marginal[{i}].nu"), Affects::Series(i));
            if spec.ncp {
                push(format!("marginal[{i}].lambda"), Affects::Series(i));
            }
        }
        if k >= 2 {
            push("copula.theta".into(), Affects::CopulaDof);
            let pr = pairs(k);
            if spec.rho_time_varying {
                for name in ["eta0", "eta1", "eta2"] {
                    for &(i, j) in &pr {
                        push(format!("copula.{name}[{i},{j}]"), Affects::Copula);
                    }
                }
            } else {
                for &(i, j) in &pr {
                    push(format!("copula.rho[{i},{j}]"), Affects::Copula);
                }
            }
        }
        Ok(Self { spec: *spec, k, coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn names(&self) -> Vec<String> {
        self.coords.iter().map(|c| c.name.clone()).collect()
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    /// Unconstrained coordinates of `p`. Fails for parameters on or outside
    /// the boundary of the constrained domain.
    pub fn to_vector(&self, p: &ParameterSet) -> Result<Vec<f64>> {
        p.validate(&self.spec)?;
        let spec = &self.spec;
        let k = self.k;
        let r = spec.rank();
        let mut v = Vec::with_capacity(self.len());
        if r > 0 {
            for i in 0..r {
                for j in 0..r {
                    let want = if i == j { 1.0 } else { 0.0 };
                    if (p.vecm.beta[(i, j)] - want).abs() > 1e-12 {
                        return Err(Error::InvalidParameter(
                            "cointegrating matrix must have an identity top block".into(),
                        ));
                    }
                }
            }
        }
        for i in 0..k {
            for j in 0..r {
                v.push(p.vecm.alpha[(i, j)]);
            }
        }
        for i in r..k {
            for j in 0..r {
                v.push(p.vecm.beta[(i, j)]);
            }
        }
        if spec.has_short_run() {
            for i in 0..k {
                for j in 0..k {
                    v.push(p.vecm.gamma[(i, j)]);
                }
            }
        }
        if let Some(c) = &p.vecm.intercept {
            v.extend_from_slice(c);
        }
        for i in 0..k {
            let g = &p.garch[i];
            v.push(g.omega.ln());
            if spec.sigma_time_varying {
                if spec.leverage {
                    let s = [0.5 * g.alpha_pos, 0.5 * g.alpha_neg, g.beta];
                    v.extend(inverse_shares(&s, PERSISTENCE_CAP, "GARCH coefficients")?);
                } else {
                    let s = [g.alpha_pos, g.beta];
                    v.extend(inverse_shares(&s, PERSISTENCE_CAP, "GARCH coefficients")?);
                }
            }
            v.push(unbounded(p.marginals[i].nu, 2.0, NU_MAX, "nu")?);
            if spec.ncp {
                v.push(p.marginals[i].lambda);
            }
        }
        if k >= 2 {
            let c = &p.copula;
            v.push(unbounded(c.theta, 2.0, THETA_MAX, "copula dof")?);
            if spec.rho_time_varying {
                v.extend_from_slice(&c.eta0);
                for &e in &c.eta1 {
                    if !(e.abs() < PERSISTENCE_CAP) {
                        return Err(Error::InvalidParameter(format!("eta1 = {e} outside (-{PERSISTENCE_CAP}, {PERSISTENCE_CAP})")));
                    }
                    v.push((e / PERSISTENCE_CAP).atanh());
                }
                v.extend_from_slice(&c.eta2);
            } else {
                v.extend_from_slice(&c.xi_const);
            }
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("parameter maps outside the unconstrained domain".into()));
        }
        Ok(v)
    }

    pub fn from_vector(&self, v: &[f64]) -> Result<ParameterSet> {
        if v.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {}, layout has {}",
                v.len(),
                self.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("non-finite unconstrained coordinate".into()));
        }
        let spec = &self.spec;
        let k = self.k;
        let r = spec.rank();
        let mut it = v.iter().copied();
        let mut next = || it.next().expect("length checked");
        let mut alpha = DMatrix::zeros(k, r);
        for i in 0..k {
            for j in 0..r {
                alpha[(i, j)] = next();
            }
        }
        let mut beta = DMatrix::zeros(k, r);
        for i in 0..r {
            beta[(i, i)] = 1.0;
        }
        for i in r..k {
            for j in 0..r {
                beta[(i, j)] = next();
            }
        }
        let mut gamma = DMatrix::zeros(k, k);
        if spec.has_short_run() {
            for i in 0..k {
                for j in 0..k {
                    gamma[(i, j)] = next();
                }
            }
        }
        let intercept = spec.intercept.then(|| (0..k).map(|_| next()).collect());
        let mut garch = Vec::with_capacity(k);
        let mut marginals = Vec::with_capacity(k);
        for _ in 0..k {
            let omega = next().exp();
            let g = if spec.sigma_time_varying {
                if spec.leverage {
                    let c = [next(), next(), next()];
                    let s = softmax_shares(&c, PERSISTENCE_CAP);
                    GarchParams::asymmetric(omega, 2.0 * s[0], 2.0 * s[1], s[2])
                } else {
                    let c = [next(), next()];
                    let s = softmax_shares(&c, PERSISTENCE_CAP);
                    GarchParams::symmetric(omega, s[0], s[1])
                }
            } else {
                GarchParams::constant(omega)
            };
            garch.push(g);
            let nu = bounded(next(), 2.0, NU_MAX);
            let lambda = if spec.ncp { next() } else { 0.0 };
            marginals.push(ShapeParams { nu, lambda });
        }
        let m = pairs(k).len();
        let copula = if k >= 2 {
            let theta = bounded(next(), 2.0, THETA_MAX);
            if spec.rho_time_varying {
                let eta0 = (0..m).map(|_| next()).collect();
                let eta1 = (0..m).map(|_| PERSISTENCE_CAP * next().tanh().clamp(-1.0 + 1e-12, 1.0 - 1e-12)).collect();
                let eta2 = (0..m).map(|_| next()).collect();
                CopulaParams::dynamic(theta, eta0, eta1, eta2)
            } else {
                CopulaParams::constant(theta, (0..m).map(|_| next()).collect())
            }
        } else if spec.rho_time_varying {
            CopulaParams::dynamic(THETA_MAX, vec![], vec![], vec![])
        } else {
            CopulaParams::constant(THETA_MAX, vec![])
        };
        let p = ParameterSet {
            vecm: VecmParams {
                alpha,
                beta,
                gamma,
                intercept,
            },
            garch,
            marginals,
            copula,
        };
        Ok(p)
    }

    /// Natural-scale value of every coordinate, aligned with `coords()`.
    /// Constant dependence is reported as the pair correlation.
    pub fn natural_values(&self, p: &ParameterSet) -> Vec<f64> {
        let spec = &self.spec;
        let k = self.k;
        let r = spec.rank();
        let mut v = Vec::with_capacity(self.len());
        for i in 0..k {
            for j in 0..r {
                v.push(p.vecm.alpha[(i, j)]);
            }
        }
        for i in r..k {
            for j in 0..r {
                v.push(p.vecm.beta[(i, j)]);
            }
        }
        if spec.has_short_run() {
            for i in 0..k {
                for j in 0..k {
                    v.push(p.vecm.gamma[(i, j)]);
                }
            }
        }
        if let Some(c) = &p.vecm.intercept {
            v.extend_from_slice(c);
        }
        for i in 0..k {
            let g = &p.garch[i];
            v.push(g.omega);
            if spec.sigma_time_varying {
                v.push(g.alpha_pos);
                if spec.leverage {
                    v.push(g.alpha_neg);
                }
                v.push(g.beta);
            }
            v.push(p.marginals[i].nu);
            if spec.ncp {
                v.push(p.marginals[i].lambda);
            }
        }
        if k >= 2 {
            v.push(p.copula.theta);
            if spec.rho_time_varying {
                v.extend_from_slice(&p.copula.eta0);
                v.extend_from_slice(&p.copula.eta1);
                v.extend_from_slice(&p.copula.eta2);
            } else {
                v.extend(p.copula.xi_const.iter().map(|&x| squash(x)));
            }
        }
        v
    }

    /// Pulls a parameter set just inside the constrained domain so that
    /// `to_vector` succeeds (used for warm starts built from estimates on
    /// or beyond the boundary).
    pub fn interiorize(&self, p: &ParameterSet) -> ParameterSet {
        let mut q = p.clone();
        let spec = &self.spec;
        for g in &mut q.garch {
            if !(g.omega > 0.0) || !g.omega.is_finite() {
                g.omega = 1e-8;
            }
            if spec.sigma_time_varying {
                g.leverage = spec.leverage;
                let floor = 1e-4;
                g.alpha_pos = g.alpha_pos.max(floor);
                g.alpha_neg = if spec.leverage { g.alpha_neg.max(floor) } else { g.alpha_pos };
                g.beta = g.beta.max(floor);
                let limit = 0.995 * PERSISTENCE_CAP;
                let pers = g.persistence();
                if pers > limit {
                    let f = limit / pers;
                    g.alpha_pos *= f;
                    g.alpha_neg *= f;
                    g.beta *= f;
                }
            } else {
                *g = GarchParams::constant(g.omega);
            }
        }
        for m in &mut q.marginals {
            m.nu = m.nu.clamp(2.05, 0.995 * NU_MAX);
            if !spec.ncp {
                m.lambda = 0.0;
            }
        }
        let c = &mut q.copula;
        c.theta = c.theta.clamp(2.05, 0.995 * THETA_MAX);
        for e in &mut c.eta1 {
            *e = e.clamp(-0.995, 0.995);
        }
        for x in &mut c.xi_const {
            let rho = squash(*x).clamp(-0.99 * RHO_BOUND, 0.99 * RHO_BOUND);
            *x = unsquash(rho).unwrap_or(0.0);
        }
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn full_spec() -> ModelSpec {
        ModelSpec::vecm(1, true, true).with_leverage().with_ncp()
    }

    fn example(k: usize) -> ParameterSet {
        let spec = full_spec();
        let layout = ParamLayout::new(&spec, k).unwrap();
        let v: Vec<f64> = (0..layout.len()).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        layout.from_vector(&v).unwrap()
    }

    #[test]
    fn roundtrip_full_spec() {
        let spec = full_spec();
        let layout = ParamLayout::new(&spec, 3).unwrap();
        let p = example(3);
        p.validate(&spec).unwrap();
        let v = layout.to_vector(&p).unwrap();
        let q = layout.from_vector(&v).unwrap();
        let a = layout.natural_values(&p);
        let b = layout.natural_values(&q);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
        assert_eq!(layout.names().len(), layout.len());
    }

    #[test]
    fn omega_one_maps_to_zero() {
        let spec = ModelSpec::random_walk(false, false);
        let layout = ParamLayout::new(&spec, 2).unwrap();
        let mut v = vec![0.0; layout.len()];
        v[0] = 0.0;
        let p = layout.from_vector(&v).unwrap();
        assert_eq!(p.garch[0].omega, 1.0);
        assert_eq!(layout.to_vector(&p).unwrap()[0], 0.0);
    }

    #[test]
    fn no_ncp_means_zero_lambda() {
        let spec = ModelSpec::vecm(0, true, false);
        let layout = ParamLayout::new(&spec, 2).unwrap();
        let p = layout.from_vector(&vec![0.3; layout.len()]).unwrap();
        assert!(p.marginals.iter().all(|m| m.lambda == 0.0));
        assert!(p.garch.iter().all(|g| g.persistence() < PERSISTENCE_CAP));
    }

    #[test]
    fn extreme_coordinates_stay_valid() {
        let spec = full_spec();
        let layout = ParamLayout::new(&spec, 3).unwrap();
        for x in [-60.0, 60.0] {
            let p = layout.from_vector(&vec![x; layout.len()]).unwrap();
            assert!(p.copula.eta1.iter().all(|e| e.abs() < 1.0));
            assert!(p.marginals.iter().all(|m| m.nu > 2.0 && m.nu < NU_MAX));
            p.validate(&spec).unwrap();
        }
    }

    #[test]
    fn boundary_inverse_is_an_error() {
        let spec = ModelSpec::random_walk(true, false);
        let layout = ParamLayout::new(&spec, 2).unwrap();
        let mut p = layout.from_vector(&vec![0.0; layout.len()]).unwrap();
        p.garch[0].alpha_pos = 0.0;
        p.garch[0].alpha_neg = 0.0;
        assert!(layout.to_vector(&p).is_err());
        let fixed = layout.interiorize(&p);
        assert!(layout.to_vector(&fixed).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn vector_roundtrip(v in prop::collection::vec(-4.0f64..4.0, 23)) {
            let layout = ParamLayout::new(&full_spec(), 2).unwrap();
            prop_assert_eq!(layout.len(), 23);
            let p = layout.from_vector(&v).unwrap();
            let back = layout.to_vector(&p).unwrap();
            for (a, b) in v.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
            }
        }
    }
}
