//! Independent reference computations used only by unit tests.

use crate::special::{ln_gamma, norm_cdf};

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

fn chi_ln_pdf(v: f64, nu: f64) -> f64 {
    (0.5 * nu - 1.0) * v.ln() - 0.5 * v - 0.5 * nu * std::f64::consts::LN_2 - ln_gamma(0.5 * nu)
}

/// Integrates `h(v) * chi2_nu(v)` over v = s^4 so the integrand is smooth at
/// the origin even for small `nu`.
fn over_chi<F: Fn(f64) -> f64>(h: F, nu: f64, split: Option<f64>) -> f64 {
    let vmax = nu + 60.0 * (2.0 * nu).sqrt() + 300.0;
    let smax = vmax.powf(0.25);
    let g = |s: f64| {
        if s <= 0.0 {
            return 0.0;
        }
        let v = s.powi(4);
        h(v) * (chi_ln_pdf(v, nu).exp() * 4.0 * s.powi(3))
    };
    let mut cuts = vec![0.0, smax];
    if let Some(v) = split {
        if v > 0.0 && v.powf(0.25) < smax {
            cuts.insert(1, v.powf(0.25));
        }
    }
    cuts.windows(2).map(|w| simpson(g, w[0], w[1], 40_000)).sum()
}

/// P(T <= t) for the non-central t, conditioning on the chi-square variable.
pub fn nct_cdf_oracle(t: f64, nu: f64, delta: f64) -> f64 {
    let split = if t != 0.0 { Some(nu * (delta / t).powi(2)) } else { None };
    over_chi(|v| norm_cdf(t * (v / nu).sqrt() - delta), nu, split)
}

pub fn nct_pdf_oracle(t: f64, nu: f64, delta: f64) -> f64 {
    let split = if t != 0.0 { Some(nu * (delta / t).powi(2)) } else { None };
    over_chi(
        |v| {
            let w = (v / nu).sqrt();
            let z = t * w - delta;
            (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt() * w
        },
        nu,
        split,
    )
}
