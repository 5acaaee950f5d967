//! Scratch harness: full targeted-sampling loop — train OVAE on total-load
//! labels, fit the biased latent density on an indicator-weighted pilot,
//! then compare unbiased vs importance-sampled risk estimates.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use ovae_core::adequacy::{
    desk_network, dispatch, impacts_from_epns, label_f_total_load, sample_generation, SystemState,
};
use ovae_core::data::{generate_synthetic, NormStats, SplitTag, SynthConfig};
use ovae_core::latent_is::{fit_em, is_weight, pilot_weights, EmOptions, IsConfig, PilotState};
use ovae_core::linalg::Mat;
use ovae_core::ovae::{train, LabelTransform, OvaeModel, TrainBatch, TrainConfig};
use ovae_core::stats::{is_estimate, ks_test, mc_estimate, quantile, speedup, RiskMetric};
use ovae_core::{derive_seed, Real};

fn main() {
    let net = desk_network();
    let mut ds = generate_synthetic(&SynthConfig {
        hours: 8760,
        ..SynthConfig::default()
    })
    .unwrap();
    ds.split_weekly(0.2, 11).unwrap();
    let train_raw = ds.rows_with_tag(SplitTag::Train);
    let norm = NormStats::from_mat(&train_raw).unwrap();
    let train_x = norm.normalize_mat(&train_raw);
    let labels: Vec<Real> = (0..train_raw.rows())
        .map(|i| label_f_total_load(train_raw.row(i)).value)
        .collect();

    let t0 = std::time::Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(42);
    let mut model = OvaeModel::<Real>::init(5, 4, &[64, 64, 64], norm.clone(), &mut rng).unwrap();
    let data = TrainBatch::fully_labeled(train_x, labels).unwrap();
    train(&mut model, &data, &TrainConfig::default()).unwrap();
    println!("train: {:.0}s", t0.elapsed().as_secs_f64());

    // Pilot: standard-normal latent draws, shortfall indicator weights.
    let t0 = std::time::Instant::now();
    let n_pilot = 100_000;
    let mut rng = ChaCha12Rng::seed_from_u64(500);
    let (z, states) = model
        .sample_states(
            n_pilot,
            |r| (0..4).map(|_| StandardNormal.sample(r)).collect::<Vec<Real>>(),
            &mut rng,
        )
        .unwrap();
    let pilot_states: Vec<PilotState> = (0..n_pilot)
        .map(|i| PilotState {
            z1: z.get(i, 0),
            demand_mw: states.row(i).to_vec(),
        })
        .collect();
    let pilot = pilot_weights(&pilot_states, &net, &mut rng).unwrap();
    let hits: Real = pilot.weights.iter().sum();
    let cfg_is = fit_em(&pilot, 0.1, &EmOptions::default()).unwrap();
    println!(
        "pilot: {:.0}s, {} shortfalls of {n_pilot}; fitted mu_is {:.3} sigma_is {:.3}",
        t0.elapsed().as_secs_f64(),
        hits,
        cfg_is.mu_is,
        cfg_is.sigma_is
    );

    // Assessment.
    let n = 100_000usize;
    let assess = |cfg: &IsConfig<Real>, seed: u64| {
        let t0 = std::time::Instant::now();
        let rows: Vec<(Real, Real, Real)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, i as u64));
                let z = ovae_core::latent_is::sample_latent(cfg, 4, &mut rng);
                let zm = Mat::from_vec(1, 4, z.clone()).unwrap();
                let mut noise = Mat::zeros(1, 5);
                for v in noise.as_mut_slice() {
                    *v = StandardNormal.sample(&mut rng);
                }
                let demand = model.generate(&zm, &noise).unwrap().row(0).to_vec();
                let gen = sample_generation(&net, &mut rng);
                let st = SystemState::new(gen, demand).unwrap();
                let d = dispatch(&net, &st).unwrap();
                let (_, lole, eens) = impacts_from_epns(d.epns_mw);
                (lole, eens, is_weight(cfg, z[0]))
            })
            .collect();
        let dt = t0.elapsed().as_secs_f64();
        let lole: Vec<Real> = rows.iter().map(|r| r.0).collect();
        let eens: Vec<Real> = rows.iter().map(|r| r.1).collect();
        let w: Vec<Real> = rows.iter().map(|r| r.2).collect();
        (
            is_estimate(RiskMetric::Lole, &lole, &w, dt).unwrap(),
            is_estimate(RiskMetric::Eens, &eens, &w, dt).unwrap(),
        )
    };

    let unb = IsConfig::unbiased();
    let (lole_u, eens_u) = assess(&unb, 1000);
    let (lole_b, eens_b) = assess(&cfg_is, 2000);
    println!(
        "unbiased: LOLE {:.2} ({:.2}) EENS {:.0} ({:.0})  t {:.1}s",
        lole_u.value, lole_u.std_error, eens_u.value, eens_u.std_error, lole_u.wall_time_s
    );
    println!(
        "IS:       LOLE {:.2} ({:.2}) EENS {:.0} ({:.0})  t {:.1}s",
        lole_b.value, lole_b.std_error, eens_b.value, eens_b.std_error, lole_b.wall_time_s
    );
    let d_lole = (lole_b.value - lole_u.value).abs()
        / (lole_b.std_error.powi(2) + lole_u.std_error.powi(2)).sqrt();
    let d_eens = (eens_b.value - eens_u.value).abs()
        / (eens_b.std_error.powi(2) + eens_u.std_error.powi(2)).sqrt();
    println!(
        "agreement: LOLE {:.2} sigma, EENS {:.2} sigma",
        d_lole, d_eens
    );
    println!(
        "speedup: LOLE {:.2}, EENS {:.2}",
        speedup(&lole_b, &lole_u).unwrap(),
        speedup(&eens_b, &eens_u).unwrap()
    );

    // Histogram overlap: generated vs training total load (66-point KS).
    let tl_train: Vec<Real> = (0..train_raw.rows())
        .map(|i| label_f_total_load(train_raw.row(i)).value)
        .collect();
    let mut rng = ChaCha12Rng::seed_from_u64(3000);
    let (_, gen_states) = model
        .sample_states(
            10_000,
            |r| (0..4).map(|_| StandardNormal.sample(r)).collect::<Vec<Real>>(),
            &mut rng,
        )
        .unwrap();
    let tl_gen: Vec<Real> = (0..gen_states.rows())
        .map(|i| label_f_total_load(gen_states.row(i)).value)
        .collect();
    use rand::seq::index::sample as index_sample;
    let mut ps = Vec::new();
    for _ in 0..200 {
        let a: Vec<Real> = index_sample(&mut rng, tl_train.len(), 66)
            .iter()
            .map(|i| tl_train[i])
            .collect();
        let b: Vec<Real> = index_sample(&mut rng, tl_gen.len(), 66)
            .iter()
            .map(|i| tl_gen[i])
            .collect();
        ps.push(ks_test(&a, &b).unwrap().p_value);
    }
    println!("KS(66) median p: {:.3}", quantile(&ps, 0.5));
}
