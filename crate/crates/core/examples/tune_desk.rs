//! Scratch harness: plain-MC LOLE/EENS of the bundled desk network against
//! the default synthetic demand.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use ovae_core::adequacy::{desk_network, dispatch, impacts_from_epns, sample_generation, SystemState};
use ovae_core::data::{generate_synthetic, SplitTag, SynthConfig};
use ovae_core::stats::{mc_estimate, RiskMetric};
use ovae_core::{derive_seed, Real};

fn main() {
    let mut ds = generate_synthetic(&SynthConfig::default()).unwrap();
    ds.split_weekly(0.2, 11).unwrap();
    let train = ds.rows_with_tag(SplitTag::Train);
    let net = desk_network();
    let n = 400_000usize;
    let t0 = std::time::Instant::now();
    let impacts: Vec<(Real, Real)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(1234, i as u64));
            let row = rng.random_range(0..train.rows());
            let demand = train.row(row).to_vec();
            let gen = sample_generation(&net, &mut rng);
            let state = SystemState::new(gen, demand).unwrap();
            let d = dispatch(&net, &state).unwrap();
            let (_, lole, eens) = impacts_from_epns(d.epns_mw);
            (lole, eens)
        })
        .collect();
    let dt = t0.elapsed().as_secs_f64();
    let lole: Vec<Real> = impacts.iter().map(|v| v.0).collect();
    let eens: Vec<Real> = impacts.iter().map(|v| v.1).collect();
    let l = mc_estimate(RiskMetric::Lole, &lole, dt).unwrap();
    let e = mc_estimate(RiskMetric::Eens, &eens, dt).unwrap();
    println!(
        "desk: LOLE {:.2} +- {:.2} h/y, EENS {:.0} +- {:.0} MWh/y ({:.1}s)",
        l.value, l.std_error, e.value, e.std_error, dt
    );
}
