//! Small descriptive statistics used across the crate.

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with denominator `n - 1`.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub fn std_dev(x: &[f64]) -> f64 {
    variance(x).sqrt()
}

/// Pearson correlation.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Kendall's tau-b in O(n log n) (Knight's merge-sort algorithm).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let n0 = (n * (n - 1) / 2) as f64;
    let mut ties_x = 0u64;
    let mut ties_xy = 0u64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        let run = (j - i) as u64;
        ties_x += run * (run - 1) / 2;
        let mut a = i;
        while a < j {
            let mut b = a + 1;
            while b < j && y[idx[b]] == y[idx[a]] {
                b += 1;
            }
            let r = (b - a) as u64;
            ties_xy += r * (r - 1) / 2;
            a = b;
        }
        i = j;
    }

    let mut ys: Vec<f64> = idx.iter().map(|&k| y[k]).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);

    let mut ties_y = 0u64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && ys[j] == ys[i] {
            j += 1;
        }
        let run = (j - i) as u64;
        ties_y += run * (run - 1) / 2;
        i = j;
    }

    let n1 = ties_x as f64;
    let n2 = ties_y as f64;
    let n3 = ties_xy as f64;
    let concordant_minus_discordant = n0 - n1 - n2 + n3 - 2.0 * swaps as f64;
    let denom = ((n0 - n1) * (n0 - n2)).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    concordant_minus_discordant / denom
}

/// Sorts `v` ascending and returns the number of inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let (buf_l, buf_r) = buf.split_at_mut(mid);
    let mut swaps = {
        let (l, r) = v.split_at_mut(mid);
        merge_count(l, buf_l) + merge_count(r, buf_r)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    while i < mid {
        buf[k] = v[i];
        i += 1;
        k += 1;
    }
    while j < n {
        buf[k] = v[j];
        j += 1;
        k += 1;
    }
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Empirical quantile by order statistic: the `ceil(n p)`-th smallest value
/// (inverse of the empirical cdf). `sorted` must be ascending.
pub fn order_statistic_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    // the small offset keeps products like 100 * 0.07 from rounding up a rank
    let k = ((n as f64 * p - 1e-9).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// Ljung-Box portmanteau statistic with `lags` autocorrelations.
pub fn ljung_box(x: &[f64], lags: usize) -> f64 {
    let n = x.len() as f64;
    let m = mean(x);
    let c0: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    (1..=lags)
        .map(|k| {
            let ck: f64 = x.iter().zip(&x[k..]).map(|(a, b)| (a - m) * (b - m)).sum();
            let r = ck / c0;
            r * r / (n - k as f64)
        })
        .sum::<f64>()
        * n
        * (n + 2.0)
}

/// Kolmogorov-Smirnov distance of a sample from the uniform law on (0, 1).
pub fn ks_uniform(u: &[f64]) -> f64 {
    let mut s = u.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| {
            let lo = v - i as f64 / n;
            let hi = (i as f64 + 1.0) / n - v;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kendall_naive(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len();
        let (mut c, mut tx, mut ty) = (0.0, 0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                let a = (x[i] - x[j]).signum() * if x[i] == x[j] { 0.0 } else { 1.0 };
                let b = (y[i] - y[j]).signum() * if y[i] == y[j] { 0.0 } else { 1.0 };
                c += a * b;
                tx += a * a;
                ty += b * b;
            }
        }
        if tx == 0.0 || ty == 0.0 {
            0.0
        } else {
            c / (tx * ty).sqrt()
        }
    }

    proptest! {
        #[test]
        fn kendall_matches_quadratic(data in prop::collection::vec((0i32..6, 0i32..6), 2..40)) {
            let x: Vec<f64> = data.iter().map(|p| p.0 as f64).collect();
            let y: Vec<f64> = data.iter().map(|p| p.1 as f64).collect();
            let fast = kendall_tau(&x, &y);
            let slow = kendall_naive(&x, &y);
            prop_assert!((fast - slow).abs() < 1e-12, "{} vs {}", fast, slow);
        }
    }

    #[test]
    fn kendall_extremes() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&x, &x), 1.0);
        assert_eq!(kendall_tau(&x, &[4.0, 3.0, 2.0, 1.0]), -1.0);
    }

    #[test]
    fn order_statistics() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(order_statistic_quantile(&s, 0.25), 1.0);
        assert_eq!(order_statistic_quantile(&s, 0.5), 2.0);
        assert_eq!(order_statistic_quantile(&s, 0.75), 3.0);
        assert_eq!(order_statistic_quantile(&s, 0.999), 4.0);
        assert_eq!(order_statistic_quantile(&s, 0.001), 1.0);
    }

    #[test]
    fn moments() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&x), 2.5);
        assert!((variance(&x) - 5.0 / 3.0).abs() < 1e-15);
        assert!((correlation(&x, &[2.0, 4.0, 6.0, 8.0]) - 1.0).abs() < 1e-15);
    }
}
