//! Elementary functions backed by `libm`.
//!
//! Every transcendental call in the crate goes through here so results are
//! bit-identical with and without `std`, and across platforms.

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn expm1(x: f64) -> f64 {
    libm::expm1(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn ln1p(x: f64) -> f64 {
    libm::log1p(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

/// Pairwise (cascade) summation. The split points depend only on the length,
/// so the result is independent of how the input was produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean and standard error of the mean (`sd / √n`, with the `n - 1`
/// variance estimator). Both are computed with pairwise summation.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    if xs.iter().all(|&x| x == xs[0]) {
        return (xs[0], 0.0);
    }
    let mean = pairwise_sum(xs) / n as f64;
    let mut sq = alloc::vec::Vec::with_capacity(n);
    sq.extend(xs.iter().map(|x| (x - mean) * (x - mean)));
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (mean, sqrt(var / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let xs: alloc::vec::Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
    }

    #[test]
    fn stderr_zero_for_constant_samples() {
        let (m, se) = mean_and_stderr(&[2.5; 17]);
        assert_eq!(m, 2.5);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn stderr_of_two_points() {
        // sd = √2 for {0, 2}; se = √2/√2 = 1
        let (m, se) = mean_and_stderr(&[0.0, 2.0]);
        assert_eq!(m, 1.0);
        assert!((se - 1.0).abs() < 1e-15);
    }
}
