//! Special functions: normal law, regularized incomplete beta (both tails),
//! and the central Student t law used by the copula.

use std::f64::consts::{PI, SQRT_2};

use libm::erfc;

/// ln |Gamma(x)|.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma_r(x).0
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal cdf.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

pub fn norm_ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

pub fn norm_pdf(x: f64) -> f64 {
    norm_ln_pdf(x).exp()
}

/// Standard normal quantile, Wichura's AS 241 (PPND16), relative accuracy
/// about 1e-16.
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((r * 2509.080_928_730_122_7 + 33430.575_583_588_128) * r
                + 67265.770_927_008_7)
                * r
                + 45921.953_931_549_87)
                * r
                + 13731.693_765_509_461)
                * r
                + 1971.590_950_306_551_3)
                * r
                + 133.141_667_891_784_38)
                * r
                + 3.387_132_872_796_366_5)
            / (((((((r * 5226.495_278_852_545 + 28729.085_735_721_943) * r
                + 39307.895_800_092_71)
                * r
                + 21213.794_301_586_597)
                * r
                + 5394.196_021_424_751)
                * r
                + 687.187_007_492_057_9)
                * r
                + 42.313_330_701_600_91)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((r * 7.745_450_142_783_414e-4 + 0.022_723_844_989_269_184) * r
            + 0.241_780_725_177_450_6)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((r * 1.050_750_071_644_416_9e-9 + 5.475_938_084_995_345e-4) * r
                + 0.015_198_666_563_616_457)
                * r
                + 0.148_103_976_427_480_08)
                * r
                + 0.689_767_334_985_1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_759)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((r * 2.010_334_399_292_288_1e-7 + 2.711_555_568_743_487_6e-5) * r
            + 0.001_242_660_947_388_078_4)
            * r
            + 0.026_532_189_526_576_124)
            * r
            + 0.296_560_571_828_504_9)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103)
            / (((((((r * 2.044_263_103_389_939_7e-15 + 1.421_511_758_316_446e-7) * r
                + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_133e-4)
                * r
                + 0.014_875_361_290_850_615)
                * r
                + 0.136_929_880_922_735_8)
                * r
                + 0.599_832_206_555_888)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// ln B(a, b).
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularized incomplete beta `I_x(a, b)` together with its complement
/// `1 - I_x(a, b) = I_y(b, a)`. `y` must equal `1 - x`; passing it separately
/// keeps precision when `x` is close to one.
pub fn inc_beta(a: f64, b: f64, x: f64, y: f64) -> (f64, f64) {
    debug_assert!(a > 0.0 && b > 0.0);
    if x <= 0.0 {
        return (0.0, 1.0);
    }
    if y <= 0.0 {
        return (1.0, 0.0);
    }
    let ln_front = a * x.ln() + b * y.ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        let v = (ln_front.exp() * beta_cf(a, b, x) / a).clamp(0.0, 1.0);
        (v, 1.0 - v)
    } else {
        let v = (ln_front.exp() * beta_cf(b, a, y) / b).clamp(0.0, 1.0);
        (1.0 - v, v)
    }
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=1000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Central Student t law with `nu > 0` degrees of freedom.
#[derive(Debug, Clone, Copy)]
pub struct StudentT {
    nu: f64,
    ln_norm: f64,
}

impl StudentT {
    pub fn new(nu: f64) -> Self {
        let ln_norm = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln();
        Self { nu, ln_norm }
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn ln_pdf(&self, t: f64) -> f64 {
        self.ln_norm - 0.5 * (self.nu + 1.0) * (t * t / self.nu).ln_1p()
    }

    pub fn pdf(&self, t: f64) -> f64 {
        self.ln_pdf(t).exp()
    }

    /// `(P(T <= t), P(T > t))`, both accurate in their own tail.
    pub fn tails(&self, t: f64) -> (f64, f64) {
        if t.is_infinite() {
            return if t > 0.0 { (1.0, 0.0) } else { (0.0, 1.0) };
        }
        let t2 = t * t;
        let denom = self.nu + t2;
        let (two_tail, center) = inc_beta(0.5 * self.nu, 0.5, self.nu / denom, t2 / denom);
        let small = 0.5 * two_tail;
        let large = 0.5 + 0.5 * center;
        if t < 0.0 {
            (small, large)
        } else {
            (large, small)
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        self.tails(t).0
    }

    /// Quantile at lower-tail probability `p`; `pc = 1 - p` is passed
    /// separately so upper-tail probabilities keep their precision.
    pub fn quantile_tails(&self, p: f64, pc: f64) -> f64 {
        if p <= 0.0 {
            return f64::NEG_INFINITY;
        }
        if pc <= 0.0 {
            return f64::INFINITY;
        }
        if p <= pc {
            -self.upper_inverse(p)
        } else {
            self.upper_inverse(pc)
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.quantile_tails(p, 1.0 - p)
    }

    /// Solves `P(T > s) = q` for `s >= 0`, `q <= 1/2`, by safeguarded Newton
    /// iteration on the log tail.
    fn upper_inverse(&self, q: f64) -> f64 {
        if q >= 0.5 {
            return 0.0;
        }
        let nu = self.nu;
        // The power-law envelope of the tail bounds the root from above.
        let ln_env = self.ln_norm + 0.5 * (nu - 1.0) * nu.ln();
        let mut hi = ((ln_env - q.ln()) / nu).exp();
        let mut lo = 0.0;
        let z = norm_quantile(1.0 - q).max(-norm_quantile(q));
        let z2 = z * z;
        let g1 = (z2 + 1.0) * z / 4.0;
        let g2 = ((5.0 * z2 + 16.0) * z2 + 3.0) * z / 96.0;
        let g3 = (((3.0 * z2 + 19.0) * z2 + 17.0) * z2 - 15.0) * z / 384.0;
        let g4 = ((((79.0 * z2 + 776.0) * z2 + 1482.0) * z2 - 1920.0) * z2 - 945.0) * z / 92160.0;
        let cf = z + g1 / nu + g2 / (nu * nu) + g3 / nu.powi(3) + g4 / nu.powi(4);
        let mut s = if cf.is_finite() && cf > 0.0 && cf < hi {
            cf
        } else {
            0.5 * hi
        };
        if !hi.is_finite() {
            hi = f64::MAX;
        }
        let ln_q = q.ln();
        for _ in 0..200 {
            let (_, upper) = self.tails(s);
            let h = upper.ln() - ln_q;
            if h == 0.0 {
                return s;
            }
            if h > 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            // d/ds ln P(T > s) = -f(s) / P(T > s)
            let slope = -self.pdf(s) / upper;
            let mut next = s - h / slope;
            if !next.is_finite() || next <= lo || next >= hi {
                next = if hi < f64::MAX { 0.5 * (lo + hi) } else { 2.0 * s.max(1.0) };
            }
            let done = (next - s).abs() <= 1e-15 * s.abs().max(1e-300);
            s = next;
            if done || (hi - lo) <= 4.0 * f64::EPSILON * s.abs() {
                break;
            }
        }
        s
    }
}
