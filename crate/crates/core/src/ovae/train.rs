//! OVAE training: mini-batch Adam over the beta-weighted KL, reconstruction,
//! and orientation losses, with semi-supervised label masking.
//!
//! The orientation term only ever sees the labeled rows; KL and
//! reconstruction always use the full batch. The feature CDF is built once
//! from the labeled subset before the first epoch and stays frozen.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::nn::{AdamParams, AdamState, MlpGrads};
use crate::num::Scalar;
use crate::ovae::cdf::{orientation_target_with_slope, EmpiricalCdf};
use crate::ovae::loss;
use crate::ovae::OvaeModel;
use crate::stats::average_ranks;

/// How raw feature labels are mapped into `[0, 1]` before the CDF is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelTransform {
    /// Min-max scale over the labeled subset (total-load style labels).
    MinMax,
    /// Replace labels by their normalized average ranks `(r - 0.5) / n`
    /// (expensive risk labels).
    NormalizedRanks,
}

impl LabelTransform {
    pub fn apply<S: Scalar>(&self, raw: &[S]) -> Result<Vec<S>> {
        match self {
            LabelTransform::MinMax => {
                let mn = raw.iter().copied().fold(S::infinity(), S::min);
                let mx = raw.iter().copied().fold(S::neg_infinity(), S::max);
                if mn == mx {
                    return Err(Error::InvalidConfig(
                        "labels have zero range; cannot min-max scale".into(),
                    ));
                }
                Ok(raw.iter().map(|&v| (v - mn) / (mx - mn)).collect())
            }
            LabelTransform::NormalizedRanks => {
                let n = S::from_usize_c(raw.len());
                let half = S::from_f64_c(0.5);
                Ok(average_ranks(raw)
                    .into_iter()
                    .map(|r| (r - half) / n)
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the KL term in the total loss.
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Fraction of the provided labels actually used (seeded subset).
    pub labeled_fraction: f64,
    /// Disable for a plain beta-VAE.
    pub orientation: bool,
    pub label_transform: LabelTransform,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta: 5.0,
            epochs: 650,
            batch_size: 64,
            learning_rate: 1e-4,
            seed: 0,
            labeled_fraction: 1.0,
            orientation: true,
            label_transform: LabelTransform::MinMax,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig(
                "batch_size and epochs must be positive".into(),
            ));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.beta < 0.0 || !self.beta.is_finite() {
            return Err(Error::InvalidConfig("beta must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.labeled_fraction) {
            return Err(Error::InvalidConfig(
                "labeled_fraction must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Training set (or one mini-batch): normalized states plus optional raw
/// feature labels and their presence mask.
#[derive(Debug, Clone)]
pub struct TrainBatch<S> {
    pub states: Mat<S>,
    pub labels: Option<Vec<S>>,
    pub label_mask: Vec<bool>,
}

impl<S: Scalar> TrainBatch<S> {
    pub fn new(states: Mat<S>, labels: Option<Vec<S>>, label_mask: Vec<bool>) -> Result<Self> {
        if states.rows() == 0 {
            return Err(Error::InvalidConfig("empty dataset".into()));
        }
        if label_mask.len() != states.rows() {
            return Err(Error::DimensionMismatch {
                context: "TrainBatch mask",
                expected: states.rows(),
                got: label_mask.len(),
            });
        }
        match &labels {
            Some(l) => {
                if l.len() != states.rows() {
                    return Err(Error::DimensionMismatch {
                        context: "TrainBatch labels",
                        expected: states.rows(),
                        got: l.len(),
                    });
                }
                for (i, (&v, &m)) in l.iter().zip(&label_mask).enumerate() {
                    if m && !v.is_finite() {
                        return Err(Error::NonFinite(format!("label at row {i}")));
                    }
                }
            }
            None => {
                if label_mask.iter().any(|&m| m) {
                    return Err(Error::InvalidConfig(
                        "label mask set but no labels provided".into(),
                    ));
                }
            }
        }
        Ok(TrainBatch {
            states,
            labels,
            label_mask,
        })
    }

    pub fn unlabeled(states: Mat<S>) -> Result<Self> {
        let mask = vec![false; states.rows()];
        TrainBatch::new(states, None, mask)
    }

    pub fn fully_labeled(states: Mat<S>, labels: Vec<S>) -> Result<Self> {
        let mask = vec![true; states.rows()];
        TrainBatch::new(states, Some(labels), mask)
    }
}

/// One epoch's loss summary (all values are batch-size-weighted means over
/// the epoch's mini-batches).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    pub kl: f64,
    pub reconstruction: f64,
    pub orientation: f64,
    pub total: f64,
    pub per_latent_kl: Vec<f64>,
}

/// Losses and parameter gradients of one mini-batch under a fixed noise
/// draw. Exposed so gradient checks can finite-difference the same
/// computation the trainer uses.
#[derive(Debug, Clone)]
pub struct BatchEval<S> {
    pub kl: S,
    pub reconstruction: S,
    pub orientation: S,
    pub total: S,
    pub per_latent_kl: Vec<S>,
    pub encoder_grads: MlpGrads<S>,
    pub decoder_grads: MlpGrads<S>,
    pub log_var_f_grad: S,
}

/// Forward + reverse pass of the full OVAE objective on one batch.
///
/// `labels` must already be transformed to the CDF's scale; `eps` is the
/// `(batch, latent_dim)` noise used by the reparameterization.
pub fn evaluate_batch<S: Scalar>(
    model: &OvaeModel<S>,
    states: &Mat<S>,
    labels: Option<&[S]>,
    mask: &[bool],
    eps: &Mat<S>,
    beta: S,
) -> Result<BatchEval<S>> {
    let b = states.rows();
    let l_dim = model.latent_dim();
    let d = model.data_dim();
    if eps.rows() != b || eps.cols() != l_dim {
        return Err(Error::DimensionMismatch {
            context: "evaluate_batch eps",
            expected: l_dim,
            got: eps.cols(),
        });
    }
    if mask.len() != b {
        return Err(Error::DimensionMismatch {
            context: "evaluate_batch mask",
            expected: b,
            got: mask.len(),
        });
    }
    let n_labeled = mask.iter().filter(|&&m| m).count();
    if n_labeled > 0 && labels.is_none() {
        return Err(Error::InvalidConfig("mask set but labels missing".into()));
    }

    let bf = S::from_usize_c(b);
    let half = S::from_f64_c(0.5);
    let two = S::from_f64_c(2.0);

    // Encoder pass and reparameterization.
    let (mu, logvar, enc_cache) = model.encode_batch(states)?;
    let mut sigma = logvar.clone();
    for v in sigma.as_mut_slice() {
        *v = (*v / two).exp();
    }
    let mut z = Mat::zeros(b, l_dim);
    for i in 0..b {
        let zi = crate::ovae::reparameterize(mu.row(i), sigma.row(i), eps.row(i))?;
        z.row_mut(i).copy_from_slice(&zi);
    }

    // Decoder pass.
    let (mu_p, logvar_p, dec_cache) = model.decode_batch(&z)?;

    // KL (per-dimension decomposition sums to the total).
    let mut per_latent_kl = vec![S::zero(); l_dim];
    for i in 0..b {
        let mr = mu.row(i);
        let tr = logvar.row(i);
        for (j, acc) in per_latent_kl.iter_mut().enumerate() {
            *acc += half * (tr[j].exp() + mr[j] * mr[j] - S::one() - tr[j]);
        }
    }
    for v in &mut per_latent_kl {
        *v = *v / bf;
    }
    let kl: S = per_latent_kl.iter().copied().sum();

    // Reconstruction.
    let mut re = S::zero();
    for i in 0..b {
        let xr = states.row(i);
        let mr = mu_p.row(i);
        let sr = logvar_p.row(i);
        for j in 0..d {
            let resid = xr[j] - mr[j];
            re += half * (resid * resid * (-sr[j]).exp() + sr[j]);
        }
    }
    re = re / bf;

    // Orientation over the labeled rows.
    let u = model.log_var_f;
    let inv_var_f = (-u).exp();
    let mut ori = S::zero();
    let mut dz_ori = vec![S::zero(); b];
    let mut du = S::zero();
    if n_labeled > 0 {
        let cdf = model.feature_cdf.as_ref().ok_or_else(|| {
            Error::InvalidConfig("orientation requested but model has no feature CDF".into())
        })?;
        let labels = labels.expect("checked above");
        let nl = S::from_usize_c(n_labeled);
        for i in 0..b {
            if !mask[i] {
                continue;
            }
            let z1 = z.get(i, 0);
            let (target, slope) = orientation_target_with_slope(cdf, z1);
            let resid = labels[i] - target;
            ori += resid * resid * inv_var_f + u;
            dz_ori[i] = -two * resid * slope * inv_var_f / nl;
            du += (S::one() - resid * resid * inv_var_f) / nl;
        }
        ori = ori / nl;
    }

    let total = loss::total_loss(kl, re, ori, beta);

    // Decoder head gradients: columns [mu' | log sigma'^2].
    let mut dec_out_grad = Mat::zeros(b, 2 * d);
    for i in 0..b {
        let xr = states.row(i);
        let mr = mu_p.row(i);
        let sr = logvar_p.row(i);
        let g = dec_out_grad.row_mut(i);
        for j in 0..d {
            let resid = xr[j] - mr[j];
            let e = (-sr[j]).exp();
            g[j] = -resid * e / bf;
            g[d + j] = half * (S::one() - resid * resid * e) / bf;
        }
    }
    let (decoder_grads, dz_re) = model.decoder.backward_batch(&dec_cache, &dec_out_grad)?;

    // Chain into the encoder heads: columns [mu | log sigma^2].
    let mut enc_out_grad = Mat::zeros(b, 2 * l_dim);
    for i in 0..b {
        let g = enc_out_grad.row_mut(i);
        let dzr = dz_re.row(i);
        let er = eps.row(i);
        let sr = sigma.row(i);
        let mr = mu.row(i);
        let tr = logvar.row(i);
        for j in 0..l_dim {
            let mut dz = dzr[j];
            if j == 0 {
                dz += dz_ori[i];
            }
            // KL direct terms plus the reparameterization chain.
            g[j] = beta * mr[j] / bf + dz;
            g[l_dim + j] = beta * half * (tr[j].exp() - S::one()) / bf + dz * er[j] * sr[j] * half;
        }
    }
    let (encoder_grads, _) = model.encoder.backward_batch(&enc_cache, &enc_out_grad)?;

    Ok(BatchEval {
        kl,
        reconstruction: re,
        orientation: ori,
        total,
        per_latent_kl,
        encoder_grads,
        decoder_grads,
        log_var_f_grad: du,
    })
}

/// Trains the model in place, returning the per-epoch loss history.
///
/// Deterministic under `cfg.seed`: label subsetting, batch shuffling, and
/// all noise draws come from one seeded stream.
pub fn train<S: Scalar>(
    model: &mut OvaeModel<S>,
    data: &TrainBatch<S>,
    cfg: &TrainConfig,
) -> Result<Vec<LossReport>>
where
    StandardNormal: Distribution<S>,
{
    cfg.validate()?;
    let n = data.states.rows();
    if data.states.cols() != model.data_dim() {
        return Err(Error::DimensionMismatch {
            context: "train states",
            expected: model.data_dim(),
            got: data.states.cols(),
        });
    }
    if !data.states.is_finite() {
        return Err(Error::NonFinite("training states".into()));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);

    // Orientation setup: pick the labeled subset, transform, freeze the CDF.
    let mut mask = vec![false; n];
    let mut labels_t = vec![S::zero(); n];
    if cfg.orientation {
        let mut labeled_idx: Vec<usize> = data
            .label_mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i)
            .collect();
        let want = (labeled_idx.len() as f64 * cfg.labeled_fraction).round() as usize;
        if labeled_idx.is_empty() || want == 0 {
            return Err(Error::InvalidConfig(
                "orientation enabled but no labeled rows (check labeled_fraction)".into(),
            ));
        }
        labeled_idx.shuffle(&mut rng);
        labeled_idx.truncate(want);
        labeled_idx.sort_unstable();
        let raw: Vec<S> = {
            let all = data.labels.as_ref().expect("mask implies labels");
            labeled_idx.iter().map(|&i| all[i]).collect()
        };
        let transformed = cfg.label_transform.apply(&raw)?;
        for (&i, &v) in labeled_idx.iter().zip(&transformed) {
            mask[i] = true;
            labels_t[i] = v;
        }
        model.feature_cdf = Some(EmpiricalCdf::new(transformed)?);
    } else {
        model.feature_cdf = None;
    }

    let beta = S::from_f64_c(cfg.beta);
    let mut shapes = model.encoder.param_block_shapes("enc");
    shapes.extend(model.decoder.param_block_shapes("dec"));
    shapes.push(("log_var_f".to_string(), 1));
    let mut adam = AdamState::new(
        AdamParams::new(S::from_f64_c(cfg.learning_rate)),
        &shapes,
    );

    let l_dim = model.latent_dim();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut kl_sum = 0.0;
        let mut re_sum = 0.0;
        let mut ori_sum = 0.0;
        let mut per_latent_sum = vec![0.0; l_dim];

        for chunk in order.chunks(cfg.batch_size) {
            let batch_x = data.states.select_rows(chunk);
            let batch_mask: Vec<bool> = chunk.iter().map(|&i| mask[i]).collect();
            let batch_labels: Vec<S> = chunk.iter().map(|&i| labels_t[i]).collect();
            let mut eps = Mat::zeros(chunk.len(), l_dim);
            for v in eps.as_mut_slice() {
                *v = StandardNormal.sample(&mut rng);
            }
            let eval = evaluate_batch(
                model,
                &batch_x,
                Some(&batch_labels),
                &batch_mask,
                &eps,
                beta,
            )?;

            let mut params: Vec<&mut [S]> = Vec::new();
            params.extend(model.encoder.param_blocks_mut());
            params.extend(model.decoder.param_blocks_mut());
            let mut lvf = [model.log_var_f];
            params.push(&mut lvf);

            let mut grads: Vec<&[S]> = Vec::new();
            grads.extend(eval.encoder_grads.blocks());
            grads.extend(eval.decoder_grads.blocks());
            let gv = [eval.log_var_f_grad];
            grads.push(&gv);

            adam.step(&mut params, &grads)?;
            model.log_var_f = lvf[0];

            let w = chunk.len() as f64;
            kl_sum += eval.kl.as_f64() * w;
            re_sum += eval.reconstruction.as_f64() * w;
            ori_sum += eval.orientation.as_f64() * w;
            for (acc, v) in per_latent_sum.iter_mut().zip(&eval.per_latent_kl) {
                *acc += v.as_f64() * w;
            }
        }

        let nf = n as f64;
        let kl = kl_sum / nf;
        let reconstruction = re_sum / nf;
        let orientation = ori_sum / nf;
        history.push(LossReport {
            epoch: epoch + 1,
            kl,
            reconstruction,
            orientation,
            total: cfg.beta * kl + reconstruction + orientation,
            per_latent_kl: per_latent_sum.iter().map(|v| v / nf).collect(),
        });
    }

    model.trained = true;
    Ok(history)
}
