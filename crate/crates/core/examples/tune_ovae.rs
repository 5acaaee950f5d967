//! Scratch harness: trains OVAE + plain VAE on synthetic data with the
//! total-load feature and reports the alignment gates.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use ovae_core::adequacy::label_f_total_load;
use ovae_core::data::{generate_synthetic, NormStats, SplitTag, SynthConfig};
use ovae_core::linalg::Mat;
use ovae_core::ovae::{train, LabelTransform, OvaeModel, TrainBatch, TrainConfig};
use ovae_core::stats::{quantile, spearman};
use ovae_core::Real;

fn main() {
    let t_all = std::time::Instant::now();
    let mut ds = generate_synthetic(&SynthConfig {
        hours: 8760,
        seasonal_amplitude: 0.14,
        diurnal_amplitude: 0.09,
        correlation: 0.6,
        noise_scale: 0.09,
        shape_diversity: 0.7,
        ..SynthConfig::default()
    })
    .unwrap();
    ds.split_weekly(0.2, 11).unwrap();
    let train_raw = ds.rows_with_tag(SplitTag::Train);
    let test_raw = ds.rows_with_tag(SplitTag::Test);
    let norm = NormStats::from_mat(&train_raw).unwrap();
    let train_x = norm.normalize_mat(&train_raw);
    let test_x = norm.normalize_mat(&test_raw);
    println!("train {} rows, test {} rows", train_x.rows(), test_x.rows());

    let labels: Vec<Real> = (0..train_raw.rows())
        .map(|i| label_f_total_load(train_raw.row(i)).value)
        .collect();

    let cfg = TrainConfig {
        beta: 5.0,
        epochs: 650,
        batch_size: 64,
        learning_rate: 1e-4,
        seed: 7,
        labeled_fraction: 1.0,
        orientation: true,
        label_transform: LabelTransform::MinMax,
    };

    let t0 = std::time::Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(42);
    let mut model = OvaeModel::<Real>::init(5, 4, &[64, 64, 64], norm.clone(), &mut rng).unwrap();
    let data = TrainBatch::fully_labeled(train_x.clone(), labels.clone()).unwrap();
    let hist = train(&mut model, &data, &cfg).unwrap();
    println!(
        "ovae train: {:.1}s, first/last total {:.4} -> {:.4} (kl {:.4} re {:.4} ori {:.4})",
        t0.elapsed().as_secs_f64(),
        hist[0].total,
        hist.last().unwrap().total,
        hist.last().unwrap().kl,
        hist.last().unwrap().reconstruction,
        hist.last().unwrap().orientation,
    );
    println!("log_var_f {:.4}", model.log_var_f());
    println!("per-latent kl: {:?}", hist.last().unwrap().per_latent_kl);

    // Held-out alignment: mean and sampled z1 vs total load.
    let mut rng_eval = ChaCha12Rng::seed_from_u64(1000);
    let mut mu1 = Vec::new();
    let mut z1s = Vec::new();
    let mut f_test = Vec::new();
    for i in 0..test_x.rows() {
        let (mu, sigma) = model.encode(test_x.row(i)).unwrap();
        let e: Real = StandardNormal.sample(&mut rng_eval);
        mu1.push(mu[0]);
        z1s.push(mu[0] + e * sigma[0]);
        f_test.push(label_f_total_load(test_raw.row(i)).value);
    }
    println!(
        "held-out spearman: mu1 {:.4}, sampled z1 {:.4}",
        spearman(&mu1, &f_test).unwrap(),
        spearman(&z1s, &f_test).unwrap()
    );

    // Generated alignment: standard-normal z, generated total load.
    let n_gen = 10_000;
    let (z, states) = model
        .sample_states(
            n_gen,
            |r| {
                (0..4)
                    .map(|_| StandardNormal.sample(r))
                    .collect::<Vec<Real>>()
            },
            &mut rng_eval,
        )
        .unwrap();
    let z1_gen: Vec<Real> = (0..n_gen).map(|i| z.get(i, 0)).collect();
    let tl_gen: Vec<Real> = (0..n_gen)
        .map(|i| label_f_total_load(states.row(i)).value)
        .collect();
    println!(
        "generated spearman(z1, TL): {:.4}",
        spearman(&z1_gen, &tl_gen).unwrap()
    );

    // Biased sampling shift: z1 ~ N(2, 0.5^2).
    let (_, biased) = model
        .sample_states(
            n_gen,
            |r| {
                let mut z: Vec<Real> = (0..4).map(|_| StandardNormal.sample(r)).collect();
                let e: Real = StandardNormal.sample(r);
                z[0] = 2.0 + 0.5 * e;
                z
            },
            &mut rng_eval,
        )
        .unwrap();
    let tl_biased: Vec<Real> = (0..n_gen)
        .map(|i| label_f_total_load(biased.row(i)).value)
        .collect();
    let tl_train: Vec<Real> = (0..train_raw.rows())
        .map(|i| label_f_total_load(train_raw.row(i)).value)
        .collect();
    let mean_tl = tl_train.iter().sum::<Real>() / tl_train.len() as Real;
    let sd_tl = (tl_train.iter().map(|v| (v - mean_tl) * (v - mean_tl)).sum::<Real>()
        / (tl_train.len() - 1) as Real)
        .sqrt();
    println!(
        "TL medians: unbiased {:.0}, biased {:.0}, train sd {:.0}, shift/sd {:.2}",
        quantile(&tl_gen, 0.5),
        quantile(&tl_biased, 0.5),
        sd_tl,
        (quantile(&tl_biased, 0.5) - quantile(&tl_gen, 0.5)) / sd_tl
    );

    // Plain VAE, same init seed: best-dimension alignment.
    let t1 = std::time::Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(42);
    let mut vae = OvaeModel::<Real>::init(5, 4, &[64, 64, 64], norm.clone(), &mut rng).unwrap();
    let cfg_vae = TrainConfig {
        orientation: false,
        ..cfg.clone()
    };
    let data_unlabeled = TrainBatch::unlabeled(train_x.clone()).unwrap();
    let hist_vae = train(&mut vae, &data_unlabeled, &cfg_vae).unwrap();
    println!(
        "vae train: {:.1}s, last total {:.4}",
        t1.elapsed().as_secs_f64(),
        hist_vae.last().unwrap().total
    );
    let mut best: Real = 0.0;
    for dim in 0..4 {
        let mut mud = Vec::new();
        for i in 0..test_x.rows() {
            let (mu, _) = vae.encode(test_x.row(i)).unwrap();
            mud.push(mu[dim]);
        }
        let s: Real = spearman(&mud, &f_test).unwrap();
        println!("vae dim {}: spearman {:.4}", dim, s);
        if s.abs() > best {
            best = s.abs();
        }
    }
    println!("vae best |spearman|: {:.4}", best);
    println!("total {:.1}s", t_all.elapsed().as_secs_f64());
}
