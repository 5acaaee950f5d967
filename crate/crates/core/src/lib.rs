//! Oriented variational autoencoder (OVAE) toolkit.
//!
//! This crate bundles the pieces of a targeted-sampling risk workflow:
//!
//! - [`nn`]: a minimal dense feed-forward substrate (forward, reverse-mode
//!   gradients, Adam), deterministic under a seed.
//! - [`ovae`]: the OVAE model proper — probabilistic encoder/decoder, the
//!   KL / reconstruction / orientation losses, and semi-supervised training.
//! - [`latent_is`]: biased latent sampling with bounded importance weights
//!   and EM fitting of the biasing distribution.
//! - [`qp`]: a dense dual active-set solver for strictly convex QPs, plus an
//!   LP path via quadratic regularization.
//! - [`adequacy`]: multi-area adequacy model — curtailment dispatch, margin
//!   to shortfall, LOLE/EENS impacts, and feature labeling.
//! - [`stats`]: risk estimators with standard errors, the speedup measure,
//!   Spearman correlation, and distribution-quality tests.
//! - [`data`]: synthetic demand generation, CSV ingestion, normalization,
//!   and weekly-block train/test splitting.
//!
//! The numeric kernels are generic over the [`num::Scalar`] floating type;
//! the domain pipeline uses the concrete [`Real`] alias (64-bit) so that
//! finite-difference and QP-dual tolerances stay tight.

pub mod adequacy;
pub mod data;
pub mod error;
pub mod latent_is;
pub mod linalg;
pub mod nn;
pub mod num;
pub mod ovae;
pub mod qp;
pub mod stats;

pub use error::{Error, Result};

/// Scalar type used by the domain pipeline.
pub type Real = f64;

/// Row-major matrix over [`Real`].
pub type RealMat = linalg::Mat<Real>;

/// Dense network over [`Real`].
pub type RealMlp = nn::Mlp<Real>;

/// OVAE model over [`Real`].
pub type RealOvae = ovae::OvaeModel<Real>;

/// Hours per year used by the LOLE/EENS impact scale.
pub const HOURS_PER_YEAR: Real = 8760.0;

/// Derives an independent sub-seed from a base seed and a task tag.
///
/// Used to hand each parallel work item (pilot state, label row, permutation)
/// its own RNG stream so results do not depend on thread count or schedule.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    // splitmix64 finalizer over the combined word
    let mut z = base ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_per_tag() {
        let a = derive_seed(42, 0);
        let b = derive_seed(42, 1);
        let c = derive_seed(43, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(42, 0));
    }
}
