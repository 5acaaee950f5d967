//! Empirical feature distribution and the probability-integral-transform
//! target that orients the first latent coordinate.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::num::Scalar;

/// Empirical CDF of the (transformed) feature values.
///
/// Quantiles use linear interpolation between order statistics at plotting
/// positions `(k - 0.5) / n`, clamped to the data range at the extremes.
/// This keeps the inverse continuous and monotone on the whole real line.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf<S> {
    sorted_values: Vec<S>,
}

impl<S: Scalar> EmpiricalCdf<S> {
    pub fn new(mut values: Vec<S>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("empirical CDF needs data".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("empirical CDF values".into()));
        }
        values.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite values"));
        Ok(EmpiricalCdf {
            sorted_values: values,
        })
    }

    pub fn values(&self) -> &[S] {
        &self.sorted_values
    }

    pub fn len(&self) -> usize {
        self.sorted_values.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty data
    }

    /// Inverse CDF at probability `p`, and its slope `d value / d p`
    /// (zero on the clamped tails).
    pub fn quantile_with_slope(&self, p: f64) -> (S, S) {
        let v = &self.sorted_values;
        let n = v.len();
        let nf = n as f64;
        if n == 1 || p <= 0.5 / nf {
            return (v[0], S::zero());
        }
        if p >= (nf - 0.5) / nf {
            return (v[n - 1], S::zero());
        }
        // p in ((k + 0.5)/n, (k + 1.5)/n] for 0-based k.
        let k = ((p * nf - 0.5).floor() as usize).min(n - 2);
        let pos_k = (k as f64 + 0.5) / nf;
        let frac = S::from_f64_c((p - pos_k) * nf);
        let gap = v[k + 1] - v[k];
        (v[k] + frac * gap, gap * S::from_f64_c(nf))
    }

    pub fn quantile(&self, p: f64) -> S {
        self.quantile_with_slope(p).0
    }
}

pub(crate) fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// The pre-specified feature decoder: `F^-1(Phi(z1))`, monotone
/// nondecreasing in `z1`.
pub fn orientation_target<S: Scalar>(cdf: &EmpiricalCdf<S>, z1: S) -> S {
    let p = standard_normal().cdf(z1.as_f64());
    cdf.quantile(p)
}

/// Orientation target together with its derivative w.r.t. `z1`
/// (chain rule through the normal CDF).
pub fn orientation_target_with_slope<S: Scalar>(cdf: &EmpiricalCdf<S>, z1: S) -> (S, S) {
    let gauss = standard_normal();
    let zf = z1.as_f64();
    let (value, slope_p) = cdf.quantile_with_slope(gauss.cdf(zf));
    (value, slope_p * S::from_f64_c(gauss.pdf(zf)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn median_of_four_values_interpolates_midpoint() {
        let cdf = EmpiricalCdf::new(vec![4.0, 2.0, 1.0, 3.0]).unwrap();
        // Phi(0) = 0.5 lands between the middle order statistics.
        assert_relative_eq!(orientation_target(&cdf, 0.0), 2.5, epsilon = 1e-12);
    }

    #[test]
    fn extreme_codes_clamp_to_the_data_range() {
        let cdf = EmpiricalCdf::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(orientation_target(&cdf, 50.0), 4.0);
        assert_eq!(orientation_target(&cdf, -50.0), 1.0);
    }

    #[test]
    fn hand_quantile_on_hundred_values() {
        // Values 0..=99; Phi(1) ~ 0.841345 interpolates to ~83.6345.
        let cdf = EmpiricalCdf::new((0..100).map(|i| i as f64).collect()).unwrap();
        let v = orientation_target(&cdf, 1.0);
        assert_relative_eq!(v, 83.6345, epsilon = 1e-3);
    }

    #[test]
    fn slope_matches_finite_differences() {
        let cdf = EmpiricalCdf::new(vec![0.1, 0.5, 0.7, 1.3, 2.0, 2.1, 3.0, 4.5]).unwrap();
        for &z in &[-1.3, -0.4, 0.2, 0.9, 1.7] {
            let (_, slope) = orientation_target_with_slope(&cdf, z);
            let h = 1e-6;
            let fd = (orientation_target(&cdf, z + h) - orientation_target(&cdf, z - h))
                / (2.0 * h);
            assert_relative_eq!(slope, fd, epsilon = 1e-5, max_relative = 1e-4);
        }
    }

    #[test]
    fn quantile_is_monotone() {
        let cdf = EmpiricalCdf::new(vec![3.0, 1.0, 2.0, 2.0, 10.0]).unwrap();
        let mut last = f64::NEG_INFINITY;
        for i in 0..=1000 {
            let p = i as f64 / 1000.0;
            let q = cdf.quantile(p);
            assert!(q >= last, "quantile not monotone at p={p}");
            last = q;
        }
    }
}
