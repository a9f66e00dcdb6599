//! Summary statistics and paired tests used by reports and acceptance runs.

use statrs::distribution::{Binomial, DiscreteCDF};

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (n - 1); 0 for fewer than two values.
pub fn std_dev(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

pub fn median(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Mean of the values in the top `(1 - q)` fraction, e.g. `q = 0.9` averages
/// the largest 10%. At least one value is always included.
pub fn top_band_mean(x: &[f64], q: f64) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    let mut s = x.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let n = (((1.0 - q) * s.len() as f64).round() as usize).clamp(1, s.len());
    mean(&s[..n])
}

/// One-sided exact sign test of `a < b` on paired samples. Ties are
/// dropped. Returns the p-value `P(X >= wins)` under `Bin(n, 1/2)`.
pub fn sign_test_less(a: &[f64], b: &[f64]) -> f64 {
    let mut wins = 0u64;
    let mut n = 0u64;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            wins += 1;
            n += 1;
        } else if x > y {
            n += 1;
        }
    }
    if n == 0 {
        return 1.0;
    }
    if wins == 0 {
        return 1.0;
    }
    let bin = Binomial::new(0.5, n).expect("valid binomial");
    1.0 - bin.cdf(wins - 1)
}

/// Coefficient of determination of a least-squares line `y ~ a + b x`.
pub fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return if x == y { 1.0 } else { 0.0 };
    }
    sxy * sxy / (sxx * syy)
}
