//! Small numerical helpers shared across modules.

use std::f64::consts::{PI, SQRT_2};

use libm::erfc;

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Two-sided standard normal critical value for a confidence level.
pub fn z_for_level(level: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let n = Normal::standard();
    n.inverse_cdf(0.5 + level / 2.0)
}

/// Sample quantile with linear interpolation between order statistics
/// (the "type 7" definition). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Decile index in `1..=10` for every value, by quantile cut points at
/// 10%, 20%, ..., 90%. Buckets are closed below: a value equal to a cut
/// point belongs to the upper bucket. Ties can empty some deciles.
pub fn quantile_deciles(values: &[f64]) -> Vec<u8> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cuts: Vec<f64> = (1..10).map(|k| quantile_sorted(&sorted, k as f64 / 10.0)).collect();
    values
        .iter()
        .map(|&v| 1 + cuts.iter().filter(|&&c| c <= v).count() as u8)
        .collect()
}

/// Kendall's tau-a between two equally long sequences.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n < 2 {
        return 0.0;
    }
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let x = (a[i] - a[j]).signum() * (b[i] - b[j]).signum();
            s += x as i64;
        }
    }
    s as f64 / (n * (n - 1) / 2) as f64
}

/// Arithmetic mean, summed as offsets from the first value so that equal
/// inputs return that value exactly.
pub fn mean(xs: &[f64]) -> f64 {
    let Some(&first) = xs.first() else { return f64::NAN };
    first + xs.iter().map(|x| x - first).sum::<f64>() / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_reference_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.96) - 0.975_002_104_851_779_5).abs() < 1e-12);
        assert!((normal_cdf(-8.0) - 6.220_960_574_271_74e-16).abs() < 1e-29);
        assert!((z_for_level(0.95) - 1.959_963_984_540_054).abs() < 1e-9);
    }

    #[test]
    fn deciles_of_a_ramp() {
        let v: Vec<f64> = (0..100).map(f64::from).collect();
        let d = quantile_deciles(&v);
        for (i, &di) in d.iter().enumerate() {
            assert_eq!(di as usize, i / 10 + 1);
        }
    }

    #[test]
    fn tau_extremes() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&a, &a), 1.0);
        assert_eq!(kendall_tau(&a, &[4.0, 3.0, 2.0, 1.0]), -1.0);
    }
}
