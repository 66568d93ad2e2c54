//! Small numeric helpers shared across modules.

use std::sync::OnceLock;

const FACTORIAL_TABLE: usize = 1 << 16;

fn ln_factorial_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(FACTORIAL_TABLE + 1);
        let mut acc = 0.0f64;
        t.push(0.0);
        for i in 1..=FACTORIAL_TABLE {
            acc += (i as f64).ln();
            t.push(acc);
        }
        t
    })
}

/// ln(n!), tabulated up to 2^16 and Stirling beyond.
pub fn ln_factorial(n: usize) -> f64 {
    if n <= FACTORIAL_TABLE {
        return ln_factorial_table()[n];
    }
    let x = n as f64;
    x * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI * x).ln() + 1.0 / (12.0 * x)
        - 1.0 / (360.0 * x * x * x)
}

pub fn ln_choose(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Binomial coefficient as a float. Exact for results below 2^53.
pub fn choose(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    if n <= 60 {
        let mut acc: u128 = 1;
        for i in 0..k {
            acc = acc * (n - i) as u128 / (i + 1) as u128;
        }
        return acc as f64;
    }
    ln_choose(n, k).exp()
}

/// ln(p^k (1-p)^(n-k)), with the usual conventions at p = 0 and p = 1.
pub fn ln_path_weight(n: usize, k: usize, p: f64) -> f64 {
    let heads = if k == 0 { 0.0 } else { k as f64 * p.ln() };
    let tails = if n == k { 0.0 } else { (n - k) as f64 * (1.0 - p).ln() };
    heads + tails
}

/// p^k (1-p)^(n-k); switches to log space for long paths.
pub fn path_weight(n: usize, k: usize, p: f64) -> f64 {
    if n > 50 {
        return ln_path_weight(n, k, p).exp();
    }
    let mut w = 1.0;
    for _ in 0..k {
        w *= p;
    }
    for _ in 0..(n - k) {
        w *= 1.0 - p;
    }
    w
}

pub fn binom_pmf(n: usize, k: usize, p: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    if p <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    if n <= 60 {
        return choose(n, k) * path_weight(n, k, p);
    }
    (ln_choose(n, k) + ln_path_weight(n, k, p)).exp()
}

/// Pr(Bin(n, p) > n/2).
pub fn majority_prob(n: usize, p: f64) -> f64 {
    (n / 2 + 1..=n).map(|k| binom_pmf(n, k, p)).sum()
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Median of a slice; mean of the middle pair for even lengths. `None` if empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Smallest odd integer that is at least `x` (and at least 1).
pub fn odd_ceil(x: f64) -> usize {
    let c = x.ceil().max(1.0) as usize;
    if c.is_multiple_of(2) {
        c + 1
    } else {
        c
    }
}
