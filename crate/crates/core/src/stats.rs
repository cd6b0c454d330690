//! Small statistical helpers shared across modules.

use statrs::distribution::{ContinuousCDF, Normal};

/// Derives an independent sub-seed from a master seed and a work-item path.
///
/// SplitMix64 finalizer over the running state; distinct paths give
/// uncorrelated ChaCha streams.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut state = master ^ 0x243F_6A88_85A3_08D3;
    for &p in path {
        state = splitmix(state ^ splitmix(p.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    splitmix(state)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample skewness and excess kurtosis (moment estimators).
pub fn skewness_kurtosis(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mu = mean(values);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in values {
        let d = v - mu;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

/// Kolmogorov–Smirnov distance between the empirical CDF of `values` and
/// the uniform CDF on [0, 1].
pub fn ks_uniform_distance(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let above = (i + 1) as f64 / n - p;
            let below = p - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max)
}

/// Empirical quantile using the "higher" rule: the smallest order statistic
/// at or above position `q * (len - 1)`.
pub fn quantile_higher(sorted: &[f64], q: f64) -> f64 {
    let pos = (q * (sorted.len() - 1) as f64).ceil() as usize;
    sorted[pos.min(sorted.len() - 1)]
}

/// Binomial standard error of a proportion.
pub fn proportion_se(p: f64, trials: usize) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn derived_seeds_differ_and_repeat() {
        let a = derive_seed(7, &[0, 1]);
        assert_eq!(a, derive_seed(7, &[0, 1]));
        assert_ne!(a, derive_seed(7, &[1, 0]));
        assert_ne!(a, derive_seed(8, &[0, 1]));
    }

    #[test]
    fn normal_cdf_table_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert_abs_diff_eq!(normal_cdf(1.8), 0.9641, epsilon = 5e-5);
        assert_abs_diff_eq!(normal_cdf(-1.96), 0.0250, epsilon = 5e-5);
    }

    #[test]
    fn symmetric_data_has_zero_skew() {
        let (s, _) = skewness_kurtosis(&[-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert_abs_diff_eq!(s, 0.0, epsilon = 1e-15);
        // Two-point distribution: excess kurtosis -2.
        let (_, k) = skewness_kurtosis(&[-1.0, 1.0, -1.0, 1.0]);
        assert_abs_diff_eq!(k, -2.0, epsilon = 1e-15);
    }

    #[test]
    fn ks_distance_of_grid() {
        let grid: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        assert_abs_diff_eq!(ks_uniform_distance(&grid), 0.01, epsilon = 1e-12);
        assert_abs_diff_eq!(ks_uniform_distance(&[0.0, 0.0, 0.0]), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn higher_quantile() {
        let v: Vec<f64> = (0..200).map(f64::from).collect();
        // ceil(0.95 * 199) = 190
        assert_eq!(quantile_higher(&v, 0.95), 190.0);
        assert_eq!(quantile_higher(&v, 1.0), 199.0);
        assert_eq!(quantile_higher(&v, 0.0), 0.0);
    }
}
