#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vcg_core::copula::CopulaParams;
use vcg_core::data::Panel;
use vcg_core::meanvol::{GarchParams, VecmParams};
use vcg_core::simulate::{simulate, SimulationConfig};
use vcg_core::spec::{ModelSpec, ParameterSet, ShapeParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Energy score straight from the definition: all ordered pairs, the
/// diagonal included, accumulated row by row.
pub fn es_oracle(samples: &[Vec<f64>], obs: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let norm = |a: &[f64], b: &[f64]| -> f64 {
        let mut s = 0.0;
        for k in 0..a.len() {
            s += (a[k] - b[k]).powi(2);
        }
        s.sqrt()
    };
    let mut first = 0.0;
    for x in samples {
        first += norm(x, obs);
    }
    let mut second = 0.0;
    for x in samples {
        for y in samples {
            second += norm(x, y);
        }
    }
    first / n - second / (2.0 * n * n)
}

/// Bartlett long-run variance written out term by term.
pub fn lrv_oracle(d: &[f64], lags: usize) -> f64 {
    let t = d.len() as f64;
    let mean: f64 = d.iter().sum::<f64>() / t;
    let c: Vec<f64> = d.iter().map(|v| v - mean).collect();
    let mut out = c.iter().map(|v| v * v).sum::<f64>() / t;
    for l in 1..=lags {
        let mut g = 0.0;
        for i in l..c.len() {
            g += c[i] * c[i - l];
        }
        let w = 1.0 - l as f64 / (lags as f64 + 1.0);
        out += 2.0 * w * g / t;
    }
    out
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| scale * (rng.random::<f64>() - 0.5)).collect())
        .collect()
}

/// Random walk with GARCH variances and a constant t copula.
pub fn rw_params(k: usize, omega: f64, alpha: f64, beta: f64, nu: f64, rho: f64, theta: f64) -> ParameterSet {
    let m = k * (k - 1) / 2;
    ParameterSet {
        vecm: VecmParams::random_walk(k),
        garch: vec![GarchParams::symmetric(omega, alpha, beta); k],
        marginals: vec![ShapeParams { nu, lambda: 0.0 }; k],
        copula: CopulaParams::from_correlations(theta, &vec![rho; m]).unwrap(),
    }
}

/// Full-featured parameters for K = 2: rank-one VECM, leverage GARCH,
/// skewed marginals and dynamic dependence.
pub fn full_params() -> (ModelSpec, ParameterSet) {
    let spec = ModelSpec::vecm(1, true, true).with_leverage().with_ncp();
    let p = ParameterSet {
        vecm: VecmParams {
            alpha: nalgebra::DMatrix::from_row_slice(2, 1, &[-0.05, 0.03]),
            beta: nalgebra::DMatrix::from_row_slice(2, 1, &[1.0, -0.8]),
            gamma: nalgebra::DMatrix::from_row_slice(2, 2, &[0.1, 0.02, -0.03, 0.05]),
            intercept: None,
        },
        garch: vec![
            GarchParams::asymmetric(0.05, 0.04, 0.12, 0.85),
            GarchParams::asymmetric(0.08, 0.06, 0.09, 0.8),
        ],
        marginals: vec![ShapeParams { nu: 6.0, lambda: 0.4 }, ShapeParams { nu: 9.0, lambda: -0.3 }],
        copula: CopulaParams::dynamic(7.0, vec![0.05], vec![0.9], vec![0.04]),
    };
    (spec, p)
}

pub fn sim(spec: &ModelSpec, p: &ParameterSet, len: usize, seed: u64) -> Panel {
    let k = p.dim();
    let mut cfg = SimulationConfig::new(len, vec![10.0; k], seed);
    cfg.discard = 200;
    simulate(spec, p, &cfg).unwrap()
}
