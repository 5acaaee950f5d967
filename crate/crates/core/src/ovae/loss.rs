//! The three OVAE loss terms. All of them are batch means, which keeps the
//! KL weight comparable across batch sizes.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::num::Scalar;
use crate::ovae::cdf::{orientation_target, EmpiricalCdf};

/// KL divergence of the per-sample posterior against the unit normal prior:
/// batch mean of `1/2 sum_j (-1 + sigma^2 + mu^2 - log sigma^2)`.
///
/// Returns the total together with its per-latent-dimension decomposition
/// (which sums to the total).
pub fn kl_loss<S: Scalar>(mu: &Mat<S>, sigma: &Mat<S>) -> Result<(S, Vec<S>)> {
    if mu.rows() != sigma.rows() || mu.cols() != sigma.cols() {
        return Err(Error::DimensionMismatch {
            context: "kl_loss shapes",
            expected: mu.cols(),
            got: sigma.cols(),
        });
    }
    if sigma.as_slice().iter().any(|&s| s <= S::zero()) {
        return Err(Error::InvalidConfig("kl_loss needs sigma > 0".into()));
    }
    let b = S::from_usize_c(mu.rows());
    let half = S::from_f64_c(0.5);
    let mut per_dim = vec![S::zero(); mu.cols()];
    for i in 0..mu.rows() {
        let mrow = mu.row(i);
        let srow = sigma.row(i);
        for (j, acc) in per_dim.iter_mut().enumerate() {
            let var = srow[j] * srow[j];
            *acc += half * (var + mrow[j] * mrow[j] - S::one() - var.ln());
        }
    }
    for v in &mut per_dim {
        *v = *v / b;
    }
    let total = per_dim.iter().copied().sum();
    Ok((total, per_dim))
}

/// Gaussian negative log-likelihood of the batch under the decoder output,
/// the additive `d/2 log 2 pi` constant dropped: batch mean of
/// `1/2 sum_j ((x - mu')^2 / sigma'^2 + log sigma'^2)`.
pub fn reconstruction_loss<S: Scalar>(x: &Mat<S>, mu_p: &Mat<S>, sigma_p: &Mat<S>) -> Result<S> {
    if x.rows() != mu_p.rows()
        || x.cols() != mu_p.cols()
        || x.rows() != sigma_p.rows()
        || x.cols() != sigma_p.cols()
    {
        return Err(Error::DimensionMismatch {
            context: "reconstruction_loss shapes",
            expected: x.cols(),
            got: mu_p.cols(),
        });
    }
    if sigma_p.as_slice().iter().any(|&s| s <= S::zero()) {
        return Err(Error::InvalidConfig(
            "reconstruction_loss needs sigma' > 0".into(),
        ));
    }
    let b = S::from_usize_c(x.rows());
    let half = S::from_f64_c(0.5);
    let mut total = S::zero();
    for i in 0..x.rows() {
        let xr = x.row(i);
        let mr = mu_p.row(i);
        let sr = sigma_p.row(i);
        for j in 0..x.cols() {
            let var = sr[j] * sr[j];
            let resid = xr[j] - mr[j];
            total += half * (resid * resid / var + var.ln());
        }
    }
    Ok(total / b)
}

/// Orientation loss: mean over the labeled rows of
/// `(f - F^-1(Phi(z1)))^2 / sigma_f^2 + log sigma_f^2`.
///
/// Rows with `mask = false` contribute nothing; a batch with no labeled rows
/// contributes zero (and hence no gradient).
pub fn orientation_loss<S: Scalar>(
    labels: &[S],
    mask: &[bool],
    z1: &[S],
    log_var_f: S,
    cdf: &EmpiricalCdf<S>,
) -> Result<S> {
    if labels.len() != mask.len() || labels.len() != z1.len() {
        return Err(Error::DimensionMismatch {
            context: "orientation_loss lengths",
            expected: labels.len(),
            got: mask.len().min(z1.len()),
        });
    }
    let inv_var = (-log_var_f).exp();
    let mut total = S::zero();
    let mut n_labeled = 0usize;
    for ((&f, &m), &z) in labels.iter().zip(mask).zip(z1) {
        if !m {
            continue;
        }
        let resid = f - orientation_target(cdf, z);
        total += resid * resid * inv_var + log_var_f;
        n_labeled += 1;
    }
    if n_labeled == 0 {
        return Ok(S::zero());
    }
    Ok(total / S::from_usize_c(n_labeled))
}

/// `beta * kl + reconstruction + orientation`.
pub fn total_loss<S: Scalar>(kl: S, reconstruction: S, orientation: S, beta: S) -> S {
    beta * kl + reconstruction + orientation
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mat1(v: f64) -> Mat<f64> {
        Mat::from_vec(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn kl_is_zero_at_the_prior() {
        let mu = Mat::zeros(3, 2);
        let mut sigma = Mat::zeros(3, 2);
        sigma.as_mut_slice().fill(1.0);
        let (total, per_dim) = kl_loss(&mu, &sigma).unwrap();
        assert_eq!(total, 0.0);
        assert_eq!(per_dim, vec![0.0, 0.0]);
    }

    #[test]
    fn kl_hand_values() {
        // mu=1, sigma=1: 1/2 (1 + 1 - 1 - 0) = 0.5
        let (total, _) = kl_loss(&mat1(1.0), &mat1(1.0)).unwrap();
        assert_relative_eq!(total, 0.5, epsilon = 1e-12);
        // mu=0, sigma^2=e: (e - 2) / 2
        let (total, _) = kl_loss(&mat1(0.0), &mat1(1.0_f64.exp().sqrt())).unwrap();
        assert_relative_eq!(total, (1.0_f64.exp() - 2.0) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn kl_per_dimension_sums_to_total() {
        let mu = Mat::from_vec(2, 3, vec![0.3, -1.0, 2.0, 0.0, 0.7, -0.2]).unwrap();
        let sigma = Mat::from_vec(2, 3, vec![0.5, 1.5, 2.0, 1.0, 0.9, 0.3]).unwrap();
        let (total, per_dim) = kl_loss(&mu, &sigma).unwrap();
        assert!(per_dim.iter().all(|&v| v >= 0.0));
        assert_relative_eq!(per_dim.iter().sum::<f64>(), total, epsilon = 1e-12);
    }

    #[test]
    fn kl_rejects_nonpositive_sigma() {
        assert!(kl_loss(&mat1(0.0), &mat1(0.0)).is_err());
    }

    #[test]
    fn reconstruction_hand_values() {
        // Perfect reconstruction at unit variance: 0.
        assert_eq!(
            reconstruction_loss(&mat1(0.3), &mat1(0.3), &mat1(1.0)).unwrap(),
            0.0
        );
        // Residual 1 at unit variance: 0.5.
        assert_relative_eq!(
            reconstruction_loss(&mat1(1.0), &mat1(0.0), &mat1(1.0)).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        // Perfect reconstruction, sigma'^2 = e: log term only, 0.5.
        assert_relative_eq!(
            reconstruction_loss(&mat1(0.3), &mat1(0.3), &mat1(1.0_f64.exp().sqrt())).unwrap(),
            0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn orientation_hand_values() {
        let cdf = EmpiricalCdf::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        // Labels equal their targets at unit variance: 0.
        let z = [0.0, 0.0];
        let labels = [2.5, 2.5];
        let mask = [true, true];
        assert_relative_eq!(
            orientation_loss(&labels, &mask, &z, 0.0, &cdf).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        // One labeled row with residual 2 at unit variance: 4.
        let labels = [4.5, 0.0];
        let mask = [true, false];
        assert_relative_eq!(
            orientation_loss(&labels, &mask, &z, 0.0, &cdf).unwrap(),
            4.0,
            epsilon = 1e-12
        );
        // No labeled rows: zero contribution.
        let mask = [false, false];
        assert_eq!(
            orientation_loss(&labels, &mask, &z, 0.0, &cdf).unwrap(),
            0.0
        );
    }

    #[test]
    fn orientation_masking_does_not_disturb_other_rows() {
        let cdf = EmpiricalCdf::new(vec![0.0, 1.0, 2.0, 5.0]).unwrap();
        let z = [0.3, -0.7, 1.2];
        let labels = [1.1, 0.4, 3.0];
        let all = [true, true, true];
        let l_all = orientation_loss(&labels, &all, &z, -0.3, &cdf).unwrap();
        // Fully supervised value equals the mean of per-row terms; masking
        // one row leaves the remaining rows' terms unchanged.
        let only_first_two = [true, true, false];
        let l2 = orientation_loss(&labels, &only_first_two, &z, -0.3, &cdf).unwrap();
        let only_third = [false, false, true];
        let l1 = orientation_loss(&labels, &only_third, &z, -0.3, &cdf).unwrap();
        assert_relative_eq!(l_all, (2.0 * l2 + l1) / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn total_is_beta_weighted_sum() {
        assert_eq!(total_loss(1.0, 2.0, 3.0, 1.0), 6.0);
        assert_relative_eq!(total_loss(0.2, 1.0, 0.0, 5.0), 2.0, epsilon = 1e-15);
    }
}
