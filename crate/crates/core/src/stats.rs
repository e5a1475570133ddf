//! Shared summary statistics: means, sample SDs and interpolated quantiles.

use crate::scalar::Scalar;

pub fn mean<F: Scalar>(values: &[F]) -> F {
    assert!(!values.is_empty());
    values.iter().copied().sum::<F>() / F::count(values.len())
}

/// Sample standard deviation with the n-1 denominator. Zero for n = 1.
pub fn sample_sd<F: Scalar>(values: &[F]) -> F {
    let n = values.len();
    assert!(n >= 1);
    if n == 1 {
        return F::zero();
    }
    let m = mean(values);
    let ss: F = values.iter().map(|&v| (v - m) * (v - m)).sum();
    (ss / F::count(n - 1)).sqrt()
}

/// Quantile by linear interpolation between order statistics (position
/// `q * (n - 1)`), the usual statistical-software default.
pub fn quantile_sorted<F: Scalar>(sorted: &[F], q: f64) -> F {
    assert!(!sorted.is_empty());
    assert!((0.0..=1.0).contains(&q));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    let frac = F::cast(pos - lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Min, quartiles and max of an unsorted slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiveNumber<F> {
    pub min: F,
    pub q1: F,
    pub median: F,
    pub q3: F,
    pub max: F,
}

pub fn five_number_summary<F: Scalar>(values: &[F]) -> FiveNumber<F> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in summaries"));
    FiveNumber {
        min: sorted[0],
        q1: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q3: quantile_sorted(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
    }
}
