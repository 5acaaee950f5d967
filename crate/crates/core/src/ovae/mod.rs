//! Oriented variational autoencoder.
//!
//! The encoder maps a normalized state `x` to `(mu, log sigma^2)` of the
//! latent posterior; latent codes are drawn with the reparameterization
//! `z = mu + eps .* sigma`; the decoder maps `z` to `(mu', log sigma'^2)`
//! over the data dimensions. Training adds an orientation term that ties the
//! first latent coordinate to a feature of interest through the probability
//! integral transform — see [`cdf::orientation_target`] and [`train`].

pub mod cdf;
pub mod loss;
pub mod train;

pub use cdf::{orientation_target, orientation_target_with_slope, EmpiricalCdf};
pub use loss::{kl_loss, orientation_loss, reconstruction_loss, total_loss};
pub use train::{train, LabelTransform, LossReport, TrainBatch, TrainConfig};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::nn::{ForwardCache, Mlp};
use crate::num::Scalar;

const BUNDLE_VERSION: u32 = 1;

/// OVAE model: probabilistic encoder/decoder plus the frozen pieces the
/// orientation machinery needs (feature CDF, feature-decoder variance,
/// normalization statistics).
#[derive(Debug, Clone)]
pub struct OvaeModel<S> {
    pub(crate) encoder: Mlp<S>,
    pub(crate) decoder: Mlp<S>,
    latent_dim: usize,
    data_dim: usize,
    norm: NormStats<S>,
    pub(crate) feature_cdf: Option<EmpiricalCdf<S>>,
    /// Log variance of the scalar feature decoder (trainable).
    pub(crate) log_var_f: S,
    pub(crate) trained: bool,
}

impl<S: Scalar> OvaeModel<S> {
    /// Fresh model with seeded He/head initialization.
    pub fn init<R: Rng + ?Sized>(
        data_dim: usize,
        latent_dim: usize,
        hidden: &[usize],
        norm: NormStats<S>,
        rng: &mut R,
    ) -> Result<Self>
    where
        StandardNormal: Distribution<S>,
    {
        if latent_dim == 0 {
            return Err(Error::InvalidConfig("latent_dim must be >= 1".into()));
        }
        if norm.dims() != data_dim {
            return Err(Error::DimensionMismatch {
                context: "OvaeModel norm stats",
                expected: data_dim,
                got: norm.dims(),
            });
        }
        let encoder = Mlp::with_relu_hidden(data_dim, hidden, 2 * latent_dim, rng)?;
        let decoder = Mlp::with_relu_hidden(latent_dim, hidden, 2 * data_dim, rng)?;
        Ok(OvaeModel {
            encoder,
            decoder,
            latent_dim,
            data_dim,
            norm,
            feature_cdf: None,
            log_var_f: S::zero(),
            trained: false,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn norm_stats(&self) -> &NormStats<S> {
        &self.norm
    }

    pub fn feature_cdf(&self) -> Option<&EmpiricalCdf<S>> {
        self.feature_cdf.as_ref()
    }

    pub fn log_var_f(&self) -> S {
        self.log_var_f
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Posterior parameters `(mu, sigma)` for one normalized state;
    /// `sigma = exp(logvar / 2)` is strictly positive.
    pub fn encode(&self, x: &[S]) -> Result<(Vec<S>, Vec<S>)> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encode input".into()));
        }
        let out = self.encoder.forward(x)?;
        let (mu, logvar) = out.split_at(self.latent_dim);
        Ok((
            mu.to_vec(),
            logvar.iter().map(|&t| (t / S::from_f64_c(2.0)).exp()).collect(),
        ))
    }

    /// Output distribution parameters `(mu', sigma')` for one latent code.
    pub fn decode(&self, z: &[S]) -> Result<(Vec<S>, Vec<S>)> {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("decode input".into()));
        }
        let out = self.decoder.forward(z)?;
        let (mu, logvar) = out.split_at(self.data_dim);
        Ok((
            mu.to_vec(),
            logvar.iter().map(|&t| (t / S::from_f64_c(2.0)).exp()).collect(),
        ))
    }

    /// Batched encoder pass split into `(mu, logvar)` halves plus the cache.
    pub(crate) fn encode_batch(&self, x: &Mat<S>) -> Result<(Mat<S>, Mat<S>, ForwardCache<S>)> {
        let (out, cache) = self.encoder.forward_batch(x)?;
        let (mu, logvar) = split_halves(&out, self.latent_dim);
        Ok((mu, logvar, cache))
    }

    pub(crate) fn decode_batch(&self, z: &Mat<S>) -> Result<(Mat<S>, Mat<S>, ForwardCache<S>)> {
        let (out, cache) = self.decoder.forward_batch(z)?;
        let (mu, logvar) = split_halves(&out, self.data_dim);
        Ok((mu, logvar, cache))
    }

    /// Decodes latent codes, applies output noise, inverts the min-max
    /// normalization, and clamps to the training range per dimension.
    ///
    /// `z` is `(batch, latent_dim)`; `noise` is `(batch, data_dim)` of
    /// standard normals supplied by the caller.
    pub fn generate(&self, z: &Mat<S>, noise: &Mat<S>) -> Result<Mat<S>> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        if z.cols() != self.latent_dim {
            return Err(Error::DimensionMismatch {
                context: "generate latent",
                expected: self.latent_dim,
                got: z.cols(),
            });
        }
        if noise.rows() != z.rows() || noise.cols() != self.data_dim {
            return Err(Error::DimensionMismatch {
                context: "generate noise",
                expected: self.data_dim,
                got: noise.cols(),
            });
        }
        let (mu, logvar, _) = self.decode_batch(z)?;
        let mut out = Mat::zeros(z.rows(), self.data_dim);
        for i in 0..z.rows() {
            let mr = mu.row(i);
            let lr = logvar.row(i);
            let nr = noise.row(i);
            let mut normed: Vec<S> = (0..self.data_dim)
                .map(|j| {
                    let sigma = (lr[j] / S::from_f64_c(2.0)).exp();
                    (mr[j] + nr[j] * sigma).max(S::zero()).min(S::one())
                })
                .collect();
            normed = self.norm.denormalize_state(&normed);
            out.row_mut(i).copy_from_slice(&normed);
        }
        Ok(out)
    }

    /// Convenience: sample `n` states with fresh latent codes and output
    /// noise from `rng`, optionally biasing `z1` through the supplied
    /// sampler.
    pub fn sample_states<R: Rng + ?Sized>(
        &self,
        n: usize,
        mut z_sampler: impl FnMut(&mut R) -> Vec<S>,
        rng: &mut R,
    ) -> Result<(Mat<S>, Mat<S>)>
    where
        StandardNormal: Distribution<S>,
    {
        let mut z = Mat::zeros(n, self.latent_dim);
        for i in 0..n {
            let code = z_sampler(rng);
            z.row_mut(i).copy_from_slice(&code);
        }
        let mut noise = Mat::zeros(n, self.data_dim);
        for v in noise.as_mut_slice() {
            *v = StandardNormal.sample(rng);
        }
        let states = self.generate(&z, &noise)?;
        Ok((z, states))
    }
}

/// `z = mu + eps .* sigma`, exactly.
pub fn reparameterize<S: Scalar>(mu: &[S], sigma: &[S], eps: &[S]) -> Result<Vec<S>> {
    if mu.len() != sigma.len() || mu.len() != eps.len() {
        return Err(Error::DimensionMismatch {
            context: "reparameterize",
            expected: mu.len(),
            got: sigma.len().min(eps.len()),
        });
    }
    Ok(mu
        .iter()
        .zip(sigma)
        .zip(eps)
        .map(|((&m, &s), &e)| m + e * s)
        .collect())
}

fn split_halves<S: Scalar>(out: &Mat<S>, half: usize) -> (Mat<S>, Mat<S>) {
    let rows = out.rows();
    let mut a = Mat::zeros(rows, half);
    let mut b = Mat::zeros(rows, half);
    for i in 0..rows {
        let r = out.row(i);
        a.row_mut(i).copy_from_slice(&r[..half]);
        b.row_mut(i).copy_from_slice(&r[half..]);
    }
    (a, b)
}

// ---------------------------------------------------------------------------
// Model bundle serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: DeserializeOwned"))]
struct OvaeBundle<S> {
    version: u32,
    latent_dim: usize,
    data_dim: usize,
    encoder: serde_json::Value,
    decoder: serde_json::Value,
    norm: NormStats<S>,
    feature_cdf: Option<Vec<S>>,
    log_var_f: S,
    trained: bool,
}

impl<S: Scalar + Serialize + DeserializeOwned> OvaeModel<S> {
    pub fn to_bundle_value(&self) -> Result<serde_json::Value> {
        let bundle = OvaeBundle {
            version: BUNDLE_VERSION,
            latent_dim: self.latent_dim,
            data_dim: self.data_dim,
            encoder: self.encoder.to_json_value()?,
            decoder: self.decoder.to_json_value()?,
            norm: self.norm.clone(),
            feature_cdf: self.feature_cdf.as_ref().map(|c| c.values().to_vec()),
            log_var_f: self.log_var_f,
            trained: self.trained,
        };
        Ok(serde_json::to_value(bundle)?)
    }

    pub fn from_bundle_value(value: serde_json::Value) -> Result<Self> {
        let bundle: OvaeBundle<S> = serde_json::from_value(value)?;
        if bundle.version != BUNDLE_VERSION {
            return Err(Error::Serde(format!(
                "unsupported model bundle version {}",
                bundle.version
            )));
        }
        let encoder = Mlp::from_json_value(bundle.encoder)?;
        let decoder = Mlp::from_json_value(bundle.decoder)?;
        if encoder.output_dim() != 2 * bundle.latent_dim
            || decoder.output_dim() != 2 * bundle.data_dim
        {
            return Err(Error::Serde("bundle head dimensions inconsistent".into()));
        }
        Ok(OvaeModel {
            encoder,
            decoder,
            latent_dim: bundle.latent_dim,
            data_dim: bundle.data_dim,
            norm: bundle.norm,
            feature_cdf: bundle.feature_cdf.map(EmpiricalCdf::new).transpose()?,
            log_var_f: bundle.log_var_f,
            trained: bundle.trained,
        })
    }
}
