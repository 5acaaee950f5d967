//! Biased latent sampling.
//!
//! The first latent coordinate is drawn from the defensive mixture
//!
//! ```text
//!     q(z1) = alpha N(z1; 0, 1) + (1 - alpha) N(z1; mu_is, sigma_is^2)
//! ```
//!
//! while the remaining coordinates stay standard normal, so the importance
//! weight depends on `z1` alone and never exceeds `1 / alpha`. The biasing
//! parameters are fitted with EM on indicator-weighted pilot samples, with
//! the first mixture component and the mixing weight held fixed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adequacy::{dispatch, sample_generation, NetworkModel, SystemState, EPNS_ZERO_TOL};
use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::{derive_seed, Real};

/// Fitted standard deviations are floored here to prevent degenerate
/// collapse onto a single pilot point.
pub const SIGMA_FLOOR: f64 = 1e-3;

/// Parameters of the biased latent density on the first coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsConfig<S> {
    /// Defensive share of the standard normal, in `(0, 1]`.
    pub alpha: S,
    pub mu_is: S,
    pub sigma_is: S,
}

impl<S: Scalar> IsConfig<S> {
    pub fn new(alpha: S, mu_is: S, sigma_is: S) -> Result<Self> {
        let cfg = IsConfig {
            alpha,
            mu_is,
            sigma_is,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Unbiased sampling: the mixture degenerates to the standard normal.
    pub fn unbiased() -> Self {
        IsConfig {
            alpha: S::one(),
            mu_is: S::zero(),
            sigma_is: S::one(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > S::zero() && self.alpha <= S::one()) {
            return Err(Error::InvalidConfig("alpha must lie in (0, 1]".into()));
        }
        if self.sigma_is <= S::zero() || !self.sigma_is.is_finite() || !self.mu_is.is_finite() {
            return Err(Error::InvalidConfig(
                "sigma_is must be positive and parameters finite".into(),
            ));
        }
        Ok(())
    }
}

fn normal_pdf<S: Scalar>(z: S, mu: S, sigma: S) -> S {
    let two = S::from_f64_c(2.0);
    let norm = S::from_f64_c((2.0 * std::f64::consts::PI).sqrt());
    let r = (z - mu) / sigma;
    (-(r * r) / two).exp() / (sigma * norm)
}

/// The biased marginal density `q(z1)`.
pub fn mixture_density<S: Scalar>(cfg: &IsConfig<S>, z1: S) -> S {
    cfg.alpha * normal_pdf(z1, S::zero(), S::one())
        + (S::one() - cfg.alpha) * normal_pdf(z1, cfg.mu_is, cfg.sigma_is)
}

/// Draws a latent vector: `z1` from the mixture, the rest standard normal.
pub fn sample_latent<S: Scalar, R: Rng + ?Sized>(
    cfg: &IsConfig<S>,
    latent_dim: usize,
    rng: &mut R,
) -> Vec<S>
where
    StandardNormal: Distribution<S>,
{
    debug_assert!(latent_dim >= 1);
    let mut z = Vec::with_capacity(latent_dim);
    let u: f64 = rng.random();
    let n: S = StandardNormal.sample(rng);
    let z1 = if u < cfg.alpha.as_f64() {
        n
    } else {
        cfg.mu_is + n * cfg.sigma_is
    };
    z.push(z1);
    for _ in 1..latent_dim {
        z.push(StandardNormal.sample(rng));
    }
    z
}

/// Importance weight `p(z1) / q(z1)`, algebraically bounded by `1 / alpha`.
///
/// Computed as `1 / (alpha + (1 - alpha) * N(z1; mu, sigma^2) / N(z1; 0, 1))`
/// so the bound survives floating-point rounding exactly.
pub fn is_weight<S: Scalar>(cfg: &IsConfig<S>, z1: S) -> S {
    if cfg.alpha == S::one() {
        return S::one();
    }
    let two = S::from_f64_c(2.0);
    let r = (z1 - cfg.mu_is) / cfg.sigma_is;
    // log of N(z1; mu, sigma^2) / N(z1; 0, 1)
    let log_ratio = z1 * z1 / two - r * r / two - cfg.sigma_is.ln();
    let ratio = log_ratio.exp();
    S::one() / (cfg.alpha + (S::one() - cfg.alpha) * ratio)
}

// ---------------------------------------------------------------------------
// EM fit
// ---------------------------------------------------------------------------

/// Pilot draws: latent first coordinates with nonnegative weights
/// (shortfall indicators in the adequacy workflow).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedPilot<S> {
    pub z1_values: Vec<S>,
    pub weights: Vec<S>,
}

impl<S: Scalar> WeightedPilot<S> {
    pub fn new(z1_values: Vec<S>, weights: Vec<S>) -> Result<Self> {
        if z1_values.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                context: "WeightedPilot",
                expected: z1_values.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|&w| w < S::zero() || !w.is_finite())
            || z1_values.iter().any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("pilot values or weights".into()));
        }
        Ok(WeightedPilot {
            z1_values,
            weights,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EmOptions<S> {
    /// Starting `(mu_is, sigma_is)`; defaults to the weighted moments.
    pub init: Option<(S, S)>,
    pub max_iter: usize,
    /// Absolute tolerance on the weighted log-likelihood.
    pub tol: f64,
}

impl<S> Default for EmOptions<S> {
    fn default() -> Self {
        EmOptions {
            init: None,
            max_iter: 200,
            tol: 1e-8,
        }
    }
}

fn weighted_log_likelihood<S: Scalar>(pilot: &WeightedPilot<S>, cfg: &IsConfig<S>) -> f64 {
    pilot
        .z1_values
        .iter()
        .zip(&pilot.weights)
        .filter(|(_, &w)| w > S::zero())
        .map(|(&z, &w)| w.as_f64() * mixture_density(cfg, z).as_f64().max(1e-300).ln())
        .sum()
}

/// Fits `(mu_is, sigma_is)` of the second mixture component by weighted EM,
/// with the standard-normal component and the mixing weight `alpha` fixed.
///
/// The weighted log-likelihood is checked to be nondecreasing on every
/// iteration; `sigma_is` is floored at [`SIGMA_FLOOR`].
pub fn fit_em<S: Scalar>(
    pilot: &WeightedPilot<S>,
    alpha: S,
    opts: &EmOptions<S>,
) -> Result<IsConfig<S>> {
    if !(alpha > S::zero() && alpha < S::one()) {
        return Err(Error::InvalidConfig(
            "fit_em needs alpha in (0, 1); alpha = 1 leaves nothing to fit".into(),
        ));
    }
    let total_weight: S = pilot.weights.iter().copied().sum();
    if total_weight <= S::zero() {
        return Err(Error::NoShortfallStates);
    }

    let floor = S::from_f64_c(SIGMA_FLOOR);
    let (mut mu, mut sigma) = match opts.init {
        Some((m, s)) => (m, s.max(floor)),
        None => {
            // Weighted moments of the pilot as the starting point.
            let mean = pilot
                .z1_values
                .iter()
                .zip(&pilot.weights)
                .map(|(&z, &w)| z * w)
                .sum::<S>()
                / total_weight;
            let var = pilot
                .z1_values
                .iter()
                .zip(&pilot.weights)
                .map(|(&z, &w)| w * (z - mean) * (z - mean))
                .sum::<S>()
                / total_weight;
            (mean, var.sqrt().max(floor))
        }
    };

    let mut cfg = IsConfig {
        alpha,
        mu_is: mu,
        sigma_is: sigma,
    };
    let mut ll = weighted_log_likelihood(pilot, &cfg);

    for _iter in 0..opts.max_iter {
        // E-step: responsibility of the biased component per pilot point.
        // M-step: weighted mean/variance under those responsibilities.
        let mut resp_sum = S::zero();
        let mut mean_acc = S::zero();
        for (&z, &w) in pilot.z1_values.iter().zip(&pilot.weights) {
            if w == S::zero() {
                continue;
            }
            let dens = mixture_density(&cfg, z);
            let gamma = (S::one() - alpha) * normal_pdf(z, cfg.mu_is, cfg.sigma_is) / dens;
            resp_sum += w * gamma;
            mean_acc += w * gamma * z;
        }
        if resp_sum <= S::zero() {
            return Err(Error::Numeric(
                "EM responsibilities vanished; biased component unsupported".into(),
            ));
        }
        mu = mean_acc / resp_sum;
        let mut var_acc = S::zero();
        for (&z, &w) in pilot.z1_values.iter().zip(&pilot.weights) {
            if w == S::zero() {
                continue;
            }
            let dens = mixture_density(&cfg, z);
            let gamma = (S::one() - alpha) * normal_pdf(z, cfg.mu_is, cfg.sigma_is) / dens;
            var_acc += w * gamma * (z - mu) * (z - mu);
        }
        sigma = (var_acc / resp_sum).sqrt().max(floor);

        let next = IsConfig {
            alpha,
            mu_is: mu,
            sigma_is: sigma,
        };
        let next_ll = weighted_log_likelihood(pilot, &next);
        if next_ll + 1e-7 * (1.0 + ll.abs()) < ll {
            return Err(Error::Numeric(format!(
                "EM log-likelihood decreased: {ll} -> {next_ll}"
            )));
        }
        cfg = next;
        let delta = (next_ll - ll).abs();
        ll = next_ll;
        if delta <= opts.tol {
            break;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Pilot evaluation
// ---------------------------------------------------------------------------

/// One pilot draw: the latent first coordinate and the demand state the
/// generator decoded from it.
#[derive(Debug, Clone)]
pub struct PilotState {
    pub z1: Real,
    pub demand_mw: Vec<Real>,
}

/// Assigns pilot weights with a caller-supplied weight function; states are
/// evaluated in parallel on seeds derived from `base_seed`, so the result is
/// independent of thread count.
pub fn pilot_weights_with<F>(
    states: &[PilotState],
    base_seed: u64,
    weight_fn: F,
) -> Result<WeightedPilot<Real>>
where
    F: Fn(&PilotState, &mut ChaCha12Rng) -> Result<Real> + Sync,
{
    let weights: Vec<Real> = states
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(base_seed, i as u64));
            weight_fn(s, &mut rng)
        })
        .collect::<Result<_>>()?;
    WeightedPilot::new(states.iter().map(|s| s.z1).collect(), weights)
}

/// Default pilot weighting: draw one generation state per pilot point and
/// set weight 1 exactly when the pair sheds load.
pub fn pilot_weights<R: Rng + ?Sized>(
    states: &[PilotState],
    network: &NetworkModel,
    rng: &mut R,
) -> Result<WeightedPilot<Real>> {
    let base_seed: u64 = rng.random();
    pilot_weights_with(states, base_seed, |s, rng| {
        let gen = sample_generation(network, rng);
        let state = SystemState::new(gen, s.demand_mw.clone())?;
        let d = dispatch(network, &state)?;
        Ok(if d.epns_mw > EPNS_ZERO_TOL { 1.0 } else { 0.0 })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adequacy::Area;
    use crate::stats::{ks_test, mean_and_se};
    use approx::assert_relative_eq;

    #[test]
    fn alpha_one_marginal_is_standard_normal() {
        let cfg = IsConfig::<f64>::unbiased();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let biased: Vec<f64> = (0..100_000)
            .map(|_| sample_latent(&cfg, 4, &mut rng)[0])
            .collect();
        let reference: Vec<f64> = (0..100_000)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let r = ks_test(&biased, &reference).unwrap();
        assert!(r.p_value > 0.01, "p = {}", r.p_value);
    }

    #[test]
    fn degenerate_mixture_parameters_behave_like_unbiased() {
        let cfg = IsConfig::new(0.3_f64, 0.0, 1.0).unwrap();
        assert_eq!(is_weight(&cfg, -2.5), 1.0);
        assert_eq!(is_weight(&cfg, 1.7), 1.0);
        let unb = IsConfig::<f64>::unbiased();
        assert_eq!(is_weight(&unb, 0.3), 1.0);
    }

    #[test]
    fn sample_mean_matches_mixture_moment() {
        // Published fit for the total-load model: mu 2.25, sigma 0.68.
        let cfg = IsConfig::new(0.1_f64, 2.25, 0.68).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let z1: Vec<f64> = (0..100_000)
            .map(|_| sample_latent(&cfg, 2, &mut rng)[0])
            .collect();
        let (mean, se) = mean_and_se(&z1).unwrap();
        let expected = 0.9 * 2.25;
        assert!(
            (mean - expected).abs() < 3.0 * se,
            "mean {mean} vs {expected} (se {se})"
        );
    }

    #[test]
    fn tail_weight_approaches_the_bound() {
        let cfg = IsConfig::new(0.1_f64, 2.0, 0.5).unwrap();
        let w = is_weight(&cfg, -3.0);
        assert!(w > 9.99 && w <= 10.0, "w = {w}");
    }

    #[test]
    fn weight_bound_holds_for_a_million_draws() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..1_000_000 {
            let alpha: f64 = 0.01 + 0.99 * rng.random::<f64>();
            let cfg = IsConfig {
                alpha,
                mu_is: rng.random::<f64>() * 8.0 - 4.0,
                sigma_is: 0.05 + rng.random::<f64>() * 3.0,
            };
            let z: f64 = rng.random::<f64>() * 16.0 - 8.0;
            let w = is_weight(&cfg, z);
            assert!(w <= 1.0 / alpha, "w {w} > 1/alpha {}", 1.0 / alpha);
            assert!(w >= 0.0);
        }
    }

    #[test]
    fn mixture_density_integrates_to_one() {
        let cfg = IsConfig::new(0.1_f64, 2.25, 0.68).unwrap();
        // Simpson's rule over [-10, 10].
        let n = 20_000;
        let h = 20.0 / n as f64;
        let mut total = mixture_density(&cfg, -10.0) + mixture_density(&cfg, 10.0);
        for k in 1..n {
            let z = -10.0 + k as f64 * h;
            total += mixture_density(&cfg, z) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        total *= h / 3.0;
        assert_relative_eq!(total, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn unbiasedness_of_weighted_means() {
        // E_q[phi(z1) w(z1)] must equal E_p[phi(z1)] for bounded phi.
        let cfg = IsConfig::new(0.15_f64, 1.8, 0.6).unwrap();
        let phi = |z: f64| (z / 2.0).tanh() + 0.3 * (z > 1.0) as i32 as f64;
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let n = 100_000;
        let weighted: Vec<f64> = (0..n)
            .map(|_| {
                let z = sample_latent(&cfg, 1, &mut rng)[0];
                phi(z) * is_weight(&cfg, z)
            })
            .collect();
        let plain: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                phi(z)
            })
            .collect();
        let (mw, sw) = mean_and_se(&weighted).unwrap();
        let (mp, sp) = mean_and_se(&plain).unwrap();
        let combined = (sw * sw + sp * sp).sqrt();
        assert!(
            (mw - mp).abs() <= 4.0 * combined,
            "weighted {mw} vs plain {mp} (se {combined})"
        );
    }

    #[test]
    fn em_point_mass_recovers_location_and_floors_sigma() {
        let pilot = WeightedPilot::new(vec![2.0_f64; 50], vec![1.0; 50]).unwrap();
        let cfg = fit_em(&pilot, 1e-6, &EmOptions::default()).unwrap();
        assert_relative_eq!(cfg.mu_is, 2.0, epsilon = 1e-6);
        assert_relative_eq!(cfg.sigma_is, SIGMA_FLOOR, epsilon = 1e-12);
    }

    #[test]
    fn em_symmetric_null_stays_near_standard() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let z1: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let weights = vec![1.0; z1.len()];
        let pilot = WeightedPilot::new(z1, weights).unwrap();
        let cfg = fit_em(&pilot, 0.1, &EmOptions::default()).unwrap();
        assert!(cfg.mu_is.abs() < 0.1, "mu {}", cfg.mu_is);
        assert!((cfg.sigma_is - 1.0).abs() < 0.1, "sigma {}", cfg.sigma_is);
    }

    #[test]
    fn em_rejects_all_zero_weights() {
        let pilot = WeightedPilot::new(vec![0.0_f64, 1.0], vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            fit_em(&pilot, 0.1, &EmOptions::default()),
            Err(Error::NoShortfallStates)
        ));
    }

    #[test]
    fn em_recovers_a_shifted_cluster() {
        // Pilot: mostly nulls weighted 0, plus a shifted cluster weighted 1.
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut z1 = Vec::new();
        let mut w = Vec::new();
        for _ in 0..5000 {
            let z: f64 = StandardNormal.sample(&mut rng);
            z1.push(z);
            w.push(0.0);
        }
        for _ in 0..2000 {
            let z: f64 = StandardNormal.sample(&mut rng);
            z1.push(2.2 + 0.5 * z);
            w.push(1.0);
        }
        let pilot = WeightedPilot::new(z1, w).unwrap();
        let cfg = fit_em(&pilot, 0.1, &EmOptions::default()).unwrap();
        assert!(
            (1.5..=3.0).contains(&cfg.mu_is),
            "mu_is {} out of range",
            cfg.mu_is
        );
        assert!(
            (0.3..=1.0).contains(&cfg.sigma_is),
            "sigma_is {} out of range",
            cfg.sigma_is
        );
    }

    fn tiny_network(capacity: Real, units: u32, availability: Real) -> NetworkModel {
        NetworkModel::new(
            vec![Area {
                name: "A".into(),
                conventional_capacity_mw: capacity,
                wind_nameplate_mw: 0.0,
                unit_size_mw: if units > 0 { capacity / units as Real } else { 1.0 },
                unit_count: units,
                availability,
            }],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn pilot_weights_all_up_and_all_down_extremes() {
        let states: Vec<PilotState> = (0..50)
            .map(|i| PilotState {
                z1: i as Real / 10.0,
                demand_mw: vec![80.0],
            })
            .collect();
        let oversized = tiny_network(1000.0, 2, 1.0);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let pilot = pilot_weights(&states, &oversized, &mut rng).unwrap();
        assert!(pilot.weights.iter().all(|&w| w == 0.0));
        assert!(matches!(
            fit_em(&pilot, 0.1, &EmOptions::default()),
            Err(Error::NoShortfallStates)
        ));

        let dead = tiny_network(10.0, 1, 0.0001);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let pilot = pilot_weights(&states, &dead, &mut rng).unwrap();
        assert!(pilot.weights.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn pilot_shortfall_fraction_matches_plain_mc() {
        // One 100 MW unit at 75% availability, demand 80: shortfall
        // probability is exactly 0.25.
        let net = tiny_network(100.0, 1, 0.75);
        let n = 20_000;
        let states: Vec<PilotState> = (0..n)
            .map(|_| PilotState {
                z1: 0.0,
                demand_mw: vec![80.0],
            })
            .collect();
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let pilot = pilot_weights(&states, &net, &mut rng).unwrap();
        let frac = pilot.weights.iter().sum::<Real>() / n as Real;
        let p = 0.25;
        let bound = 3.0 * (p * (1.0 - p) / n as Real).sqrt();
        assert!((frac - p).abs() < bound, "frac {frac} vs {p}");
    }
}
