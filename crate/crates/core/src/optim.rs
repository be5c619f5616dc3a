//! Quasi-Newton minimization with numerical gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Convergence when the gradient max-norm falls below this.
    pub grad_tol: f64,
    /// Largest max-norm of a trial step.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            grad_tol: 1e-5,
            max_step: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl BfgsOutcome {
    pub fn grad_max_norm(&self) -> f64 {
        max_norm(&self.grad)
    }
}

pub fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central-difference gradient of `f` at `x`, coordinates in parallel.
pub fn fd_gradient<F>(f: F, x: &[f64], h_rel: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync + Send,
{
    let f0 = std::sync::OnceLock::new();
    let parts = par::map_range(x.len(), |c| {
        let h = h_rel * x[c].abs().max(1.0);
        let at = |d: f64| {
            let mut w = x.to_vec();
            w[c] += d;
            f(&w)
        };
        match (at(h), at(-h)) {
            (Ok(a), Ok(b)) => Ok((a - b) / (2.0 * h)),
            (Ok(a), Err(_)) => Ok((a - *f0.get_or_init(|| f(x).unwrap_or(f64::NAN))) / h),
            (Err(_), Ok(b)) => Ok((*f0.get_or_init(|| f(x).unwrap_or(f64::NAN)) - b) / h),
            (Err(e), Err(_)) => Err(Error::Numerical(format!("gradient step underflow in coordinate {c}: {e}"))),
        }
    });
    let g = parts.into_iter().collect::<Result<Vec<f64>>>()?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite gradient".into()));
    }
    Ok(g)
}

/// Minimizes with BFGS and Armijo backtracking.
///
/// `fg` returns the value and gradient, `f` the value alone (used by the
/// line search). Evaluation errors during the line search count as an
/// infinite value. When the search stalls the inverse-Hessian estimate is
/// reset once to the identity before giving up; the best point is returned
/// either way.
pub fn minimize<FG, F>(x0: &[f64], mut fg: FG, mut f: F, opts: &BfgsOptions) -> Result<BfgsOutcome>
where
    FG: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    F: FnMut(&[f64]) -> Result<f64>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = fg(&x)?;
    if !fx.is_finite() {
        return Err(Error::NonFinite {
            t: 0,
            component: "objective at the starting point".into(),
        });
    }
    let identity = |n: usize| {
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            h[i * n + i] = 1.0;
        }
        h
    };
    let mut hinv = identity(n);
    let mut fresh = true;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        if max_norm(&g) < opts.grad_tol {
            return Ok(BfgsOutcome {
                x,
                f: fx,
                grad: g,
                iterations,
                converged: true,
            });
        }
        iterations += 1;
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&hinv[i * n..(i + 1) * n], &g)).collect();
        let mut slope = dot(&d, &g);
        if !(slope < 0.0) {
            hinv = identity(n);
            fresh = true;
            d = g.iter().map(|v| -v).collect();
            slope = dot(&d, &g);
        }
        let dn = max_norm(&d);
        let mut step = if dn > opts.max_step { opts.max_step / dn } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            let ft = f(&xt).unwrap_or(f64::INFINITY);
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some((xt, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, _)) = accepted else {
            if fresh {
                break;
            }
            hinv = identity(n);
            fresh = true;
            continue;
        };
        let (fnew, gn) = match fg(&xn) {
            Ok(v) => v,
            Err(_) => break,
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if fresh {
                // Scale the identity to the observed curvature before the
                // first update.
                let scale = sy / dot(&y, &y);
                for v in hinv.iter_mut() {
                    *v *= scale;
                }
            }
            let hy: Vec<f64> = (0..n).map(|i| dot(&hinv[i * n..(i + 1) * n], &y)).collect();
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    hinv[i * n + j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
            fresh = false;
        }
        let stalled = (fx - fnew).abs() <= 1e-15 * fx.abs().max(1.0);
        x = xn;
        fx = fnew;
        g = gn;
        if stalled && max_norm(&s) < 1e-12 {
            break;
        }
    }
    let converged = max_norm(&g) < opts.grad_tol;
    Ok(BfgsOutcome {
        x,
        f: fx,
        grad: g,
        iterations,
        converged,
    })
}
