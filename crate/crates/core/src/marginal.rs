//! Generalized non-central t marginals.
//!
//! The law of `T = (Z + lambda) / sqrt(V / nu)` (Z standard normal, V
//! chi-square with `nu` degrees of freedom) is shifted and scaled so that the
//! marginal `X = mu + sqrt(sigma2 / v) * (T - m)` has mean `mu` and variance
//! `sigma2`, where `(m, v)` are the mean and variance of `T`.
//!
//! The cdf uses the Poisson-mixture series of incomplete beta functions with
//! forward recurrences (accuracy target 1e-10 absolute). Both tails are
//! produced directly so that upper-tail probabilities keep their precision.
//! For `|lambda| > 30` the series is replaced by adaptive quadrature over the
//! chi-square mixing variable.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;
use crate::special::{inc_beta, ln_beta, ln_gamma, norm_cdf, norm_ln_pdf, norm_quantile, StudentT};

/// Non-centrality beyond which the series gives way to quadrature.
pub const SERIES_NCP_LIMIT: f64 = 30.0;

/// Location/scale/shape of one marginal at one time point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalParams {
    pub mu: f64,
    pub sigma2: f64,
    pub nu: f64,
    pub lambda: f64,
}

impl MarginalParams {
    pub fn new(mu: f64, sigma2: f64, nu: f64, lambda: f64) -> Self {
        Self { mu, sigma2, nu, lambda }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::InvalidParameter(format!("sigma2 = {} must be positive", self.sigma2)));
        }
        if !self.mu.is_finite() {
            return Err(Error::InvalidParameter(format!("mu = {} must be finite", self.mu)));
        }
        check_shape(self.nu, self.lambda)
    }
}

fn check_shape(nu: f64, lambda: f64) -> Result<()> {
    if !(nu > 2.0) || nu.is_nan() {
        return Err(Error::InvalidParameter(format!(
            "nu = {nu} must exceed 2 for a finite variance"
        )));
    }
    if !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("lambda = {lambda} must be finite")));
    }
    Ok(())
}

/// Mean and variance of the unscaled non-central t.
pub fn base_moments(nu: f64, lambda: f64) -> Result<(f64, f64)> {
    check_shape(nu, lambda)?;
    Ok(moments_unchecked(nu, lambda))
}

fn moments_unchecked(nu: f64, lambda: f64) -> (f64, f64) {
    if nu.is_infinite() {
        return (lambda, 1.0);
    }
    let c = (0.5 * nu).sqrt() * (ln_gamma(0.5 * (nu - 1.0)) - ln_gamma(0.5 * nu)).exp();
    let mean = lambda * c;
    let var = nu * (1.0 + lambda * lambda) / (nu - 2.0) - mean * mean;
    (mean, var)
}

/// The unscaled non-central t law.
#[derive(Debug, Clone)]
pub struct NoncentralT {
    nu: f64,
    lambda: f64,
    mean: f64,
    sd: f64,
    central: StudentT,
}

impl NoncentralT {
    pub fn new(nu: f64, lambda: f64) -> Result<Self> {
        if !(nu > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("nu = {nu}, lambda = {lambda}")));
        }
        let (mean, var) = if nu > 2.0 {
            moments_unchecked(nu, lambda)
        } else {
            (f64::NAN, f64::NAN)
        };
        Ok(Self {
            nu,
            lambda,
            mean,
            sd: var.sqrt(),
            central: StudentT::new(nu),
        })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `(P(T <= t), P(T > t))`.
    pub fn tails(&self, t: f64) -> (f64, f64) {
        if self.lambda == 0.0 {
            return self.central.tails(t);
        }
        if t.is_infinite() {
            return if t > 0.0 { (1.0, 0.0) } else { (0.0, 1.0) };
        }
        let (lo, up) = if self.lambda.abs() > SERIES_NCP_LIMIT {
            quad_tails(t, self.lambda, self.nu)
        } else if t >= 0.0 {
            series_tails(t, self.lambda, self.nu)
        } else {
            let (l, u) = series_tails(-t, -self.lambda, self.nu);
            (u, l)
        };
        (lo.clamp(0.0, 1.0), up.clamp(0.0, 1.0))
    }

    pub fn cdf(&self, t: f64) -> f64 {
        self.tails(t).0
    }

    pub fn ln_pdf(&self, t: f64) -> f64 {
        if self.lambda == 0.0 {
            return self.central.ln_pdf(t);
        }
        if self.lambda.abs() <= SERIES_NCP_LIMIT {
            let (s, d) = if t >= 0.0 { (t, self.lambda) } else { (-t, -self.lambda) };
            if let Some(v) = series_ln_pdf(s, d, self.nu) {
                return v;
            }
        }
        quad_pdf(t, self.lambda, self.nu).ln()
    }

    pub fn pdf(&self, t: f64) -> f64 {
        self.ln_pdf(t).exp()
    }

    /// Quantile from the pair `(p, 1 - p)`.
    pub fn quantile_tails(&self, p: f64, pc: f64) -> f64 {
        if p <= 0.0 {
            return f64::NEG_INFINITY;
        }
        if pc <= 0.0 {
            return f64::INFINITY;
        }
        if self.lambda == 0.0 {
            return self.central.quantile_tails(p, pc);
        }
        let use_lower = p <= pc;
        let (target, z) = if use_lower {
            (p.ln(), norm_quantile(p))
        } else {
            (pc.ln(), -norm_quantile(pc))
        };
        let scale = if self.sd.is_finite() && self.sd > 0.0 { self.sd } else { 1.0 };
        let start = if self.mean.is_finite() { self.mean } else { self.lambda } + scale * z;
        // h is increasing in t for both tails.
        let h = |t: f64| -> (f64, f64) {
            let (lo, up) = self.tails(t);
            let dens = self.pdf(t);
            if use_lower {
                (lo.ln() - target, dens / lo)
            } else {
                (target - up.ln(), dens / up)
            }
        };
        solve_increasing(h, start, scale)
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.quantile_tails(p, 1.0 - p)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        let v = ChiSquared::new(self.nu).expect("nu > 0").sample(rng);
        (z + self.lambda) / (v / self.nu).sqrt()
    }
}

/// Non-central t restandardized to mean zero and unit variance. This is the
/// law of the standardized residual `(X - mu) / sigma`.
#[derive(Debug, Clone)]
pub struct StandardizedNct {
    law: NoncentralT,
    ln_sd: f64,
}

impl StandardizedNct {
    pub fn new(nu: f64, lambda: f64) -> Result<Self> {
        check_shape(nu, lambda)?;
        let law = NoncentralT::new(nu, lambda)?;
        let ln_sd = law.sd.ln();
        Ok(Self { law, ln_sd })
    }

    pub fn nu(&self) -> f64 {
        self.law.nu
    }

    pub fn lambda(&self) -> f64 {
        self.law.lambda
    }

    #[inline]
    fn to_base(&self, z: f64) -> f64 {
        self.law.mean + self.law.sd * z
    }

    pub fn ln_pdf(&self, z: f64) -> f64 {
        self.law.ln_pdf(self.to_base(z)) + self.ln_sd
    }

    pub fn tails(&self, z: f64) -> (f64, f64) {
        self.law.tails(self.to_base(z))
    }

    pub fn quantile_tails(&self, p: f64, pc: f64) -> f64 {
        (self.law.quantile_tails(p, pc) - self.law.mean) / self.law.sd
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        (self.law.sample(rng) - self.law.mean) / self.law.sd
    }
}

/// Density of the marginal at `x`.
pub fn pdf(x: f64, p: &MarginalParams) -> Result<f64> {
    p.validate()?;
    let sigma = p.sigma2.sqrt();
    let law = StandardizedNct::new(p.nu, p.lambda)?;
    Ok((law.ln_pdf((x - p.mu) / sigma) - sigma.ln()).exp())
}

pub fn cdf(x: f64, p: &MarginalParams) -> Result<f64> {
    p.validate()?;
    let law = StandardizedNct::new(p.nu, p.lambda)?;
    Ok(law.tails((x - p.mu) / p.sigma2.sqrt()).0)
}

pub fn quantile(u: f64, p: &MarginalParams) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::InvalidProbability(u));
    }
    p.validate()?;
    let law = StandardizedNct::new(p.nu, p.lambda)?;
    Ok(p.mu + p.sigma2.sqrt() * law.quantile_tails(u, 1.0 - u))
}

/// Lower and upper tail for `s >= 0` with non-centrality `d`, from the
/// Poisson-weighted incomplete beta series.
fn series_tails(s: f64, d: f64, nu: f64) -> (f64, f64) {
    let b = 0.5 * nu;
    let s2 = s * s;
    let x = s2 / (s2 + nu);
    let y = nu / (s2 + nu);
    let lam2 = 0.5 * d * d;
    let w0 = (-lam2).exp();
    let mut p = w0;
    let mut q = d * w0 * (2.0 / PI).sqrt();
    let (mut ia, mut iac) = inc_beta(0.5, b, x, y);
    let (mut ib, mut ibc) = inc_beta(1.0, b, x, y);
    // g(a) = x^a y^b / (a B(a, b)) links I_x(a, b) and I_x(a + 1, b)
    let (mut ga, mut gb) = if x > 0.0 {
        let ln_yb = b * y.ln();
        (
            (0.5 * x.ln() + ln_yb - ln_beta(0.5, b) - 0.5f64.ln()).exp(),
            (x.ln() + ln_yb + b.ln()).exp(),
        )
    } else {
        (0.0, 0.0)
    };
    let mut lower = 0.0;
    let mut upper = 0.0;
    let max_terms = (lam2 + 30.0 * lam2.sqrt() + 200.0) as usize;
    for j in 0..max_terms {
        let jf = j as f64;
        lower += p * ia + q * ib;
        upper += p * iac + q * ibc;
        let a = jf + 0.5;
        let a1 = jf + 1.0;
        ia -= ga;
        iac += ga;
        ga *= x * (a + b) / (a + 1.0);
        ib -= gb;
        ibc += gb;
        gb *= x * (a1 + b) / (a1 + 1.0);
        p *= lam2 / (jf + 1.0);
        q *= lam2 / (jf + 1.5);
        if jf + 1.0 > lam2 {
            let rp = lam2 / (jf + 2.0);
            let rest = p / (1.0 - rp) + q.abs() / (1.0 - lam2 / (jf + 2.5));
            if rest < 1e-17 {
                break;
            }
        }
    }
    (norm_cdf(-d) + 0.5 * lower, 0.5 * upper)
}

/// ln density for `s >= 0` with non-centrality `d`; `None` when the
/// alternating series (negative `d`) cancels too badly to trust.
fn series_ln_pdf(s: f64, d: f64, nu: f64) -> Option<f64> {
    let b = 0.5 * nu;
    let s2 = s * s;
    let x = s2 / (s2 + nu);
    let y = nu / (s2 + nu);
    let lam2 = 0.5 * d * d;
    let ln_beta_half = ln_beta(0.5, b);
    let ln_a0 = -lam2 + (b + 0.5) * y.ln() - 0.5 * nu.ln() - ln_beta_half;
    let mut ta = 1.0;
    let mut tb = d * (2.0 / PI).sqrt() * s * y.sqrt() * b * ln_beta_half.exp() / nu.sqrt();
    let mut sum = 0.0;
    let mut abs_sum = 0.0;
    let max_terms = (lam2 + 30.0 * lam2.sqrt() + 200.0) as usize;
    for j in 0..max_terms {
        let jf = j as f64;
        sum += ta + tb;
        abs_sum += ta.abs() + tb.abs();
        ta *= lam2 / (jf + 1.0) * x * (jf + 0.5 + b) / (jf + 0.5);
        tb *= lam2 / (jf + 1.5) * x * (jf + 1.0 + b) / (jf + 1.0);
        if jf + 1.0 > lam2 && ta.abs() + tb.abs() <= 1e-17 * abs_sum {
            break;
        }
    }
    if !(sum > 1e-8 * abs_sum) {
        return None;
    }
    Some(ln_a0 + sum.ln())
}

/// ln density of W = sqrt(V / nu), V ~ chi-square(nu).
fn mixing_ln_density(w: f64, nu: f64) -> f64 {
    let b = 0.5 * nu;
    if w <= 0.0 {
        return f64::NEG_INFINITY;
    }
    b * nu.ln() + (2.0 * b - 1.0) * w.ln() - 0.5 * nu * w * w
        - (b - 1.0) * std::f64::consts::LN_2
        - ln_gamma(b)
}

fn mixing_breaks(t: f64, delta: f64, nu: f64) -> Vec<f64> {
    let vmax = nu + 40.0 * (2.0 * nu).sqrt() + 250.0;
    let wmax = (vmax / nu).sqrt();
    let mut br = vec![0.0, ((nu - 1.0) / nu).max(0.0).sqrt(), wmax];
    if t != 0.0 {
        let star = delta / t;
        if star > 0.0 && star < wmax {
            br.push(star);
        }
    }
    br.sort_by(f64::total_cmp);
    br.dedup();
    br
}

fn quad_tails(t: f64, delta: f64, nu: f64) -> (f64, f64) {
    let br = mixing_breaks(t, delta, nu);
    let lower = quad::integrate_breaks(
        |w| norm_cdf(t * w - delta) * mixing_ln_density(w, nu).exp(),
        &br,
        1e-300,
        1e-13,
    );
    let upper = quad::integrate_breaks(
        |w| norm_cdf(delta - t * w) * mixing_ln_density(w, nu).exp(),
        &br,
        1e-300,
        1e-13,
    );
    (lower, upper)
}

fn quad_pdf(t: f64, delta: f64, nu: f64) -> f64 {
    let br = mixing_breaks(t, delta, nu);
    quad::integrate_breaks(
        |w| (norm_ln_pdf(t * w - delta) + mixing_ln_density(w, nu)).exp() * w,
        &br,
        1e-300,
        1e-13,
    )
}

/// Root of an increasing function `h`, which returns `(h(t), h'(t))`.
/// Brackets outward from `start` in steps of `scale`, then runs Newton
/// steps that fall back to bisection when they leave the bracket.
pub(crate) fn solve_increasing<H: Fn(f64) -> (f64, f64)>(h: H, start: f64, scale: f64) -> f64 {
    let mut t = start;
    let (mut v, mut dv) = h(t);
    if v == 0.0 {
        return t;
    }
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    if v.is_nan() {
        v = f64::NEG_INFINITY;
    }
    if v < 0.0 {
        lo = t;
    } else {
        hi = t;
    }
    let mut step = scale;
    for _ in 0..400 {
        let newton = t - v / dv;
        let mut next = if newton.is_finite() && newton > lo && newton < hi && dv > 0.0 {
            newton
        } else if lo.is_finite() && hi.is_finite() {
            0.5 * (lo + hi)
        } else if lo.is_finite() {
            step *= 2.0;
            lo + step
        } else {
            step *= 2.0;
            hi - step
        };
        if next == t {
            next = if lo.is_finite() && hi.is_finite() { 0.5 * (lo + hi) } else { next };
        }
        let delta = (next - t).abs();
        t = next;
        let (nv, ndv) = h(t);
        v = if nv.is_nan() { f64::NEG_INFINITY } else { nv };
        dv = ndv;
        if v == 0.0 {
            return t;
        }
        if v < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        if delta <= 1e-15 * t.abs().max(1e-12)
            || (lo.is_finite() && hi.is_finite() && hi - lo <= 4.0 * f64::EPSILON * t.abs().max(1e-300))
        {
            break;
        }
    }
    t
}
