//! Minimal dense feed-forward substrate.
//!
//! A [`Mlp`] is a chain of affine layers with element-wise activations:
//!
//! - `z_l = W_l a_{l-1} + b_l`
//! - `a_l = act_l(z_l)`
//!
//! [`Mlp::forward_batch`] returns the output together with a cache that is
//! sufficient for reverse-mode differentiation in [`Mlp::backward_batch`].
//! Parameter updates go through [`AdamState::step`], which applies the
//! standard bias-corrected Adam rule. Everything is deterministic given the
//! RNG used at initialization and a fixed call order.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::num::Scalar;

const MLP_JSON_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Relu => {
                if z > S::zero() {
                    z
                } else {
                    S::zero()
                }
            }
            Activation::Identity => z,
        }
    }

    /// Derivative as a function of the pre-activation.
    #[inline]
    fn grad_from_pre<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Relu => {
                if z > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Identity => S::one(),
        }
    }
}

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// He-style scaled normals, `N(0, 2/fan_in)`; use for ReLU layers.
    He,
    /// Small-scale normals, `N(0, 0.01^2)`; use for linear output heads.
    Head,
}

/// One dense layer: `y = act(Wx + b)`, weights stored row-major `(out, in)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer<S> {
    weights: Mat<S>,
    bias: Vec<S>,
    activation: Activation,
}

impl<S: Scalar> DenseLayer<S> {
    pub fn new(weights: Mat<S>, bias: Vec<S>, activation: Activation) -> Result<Self> {
        if weights.rows() != bias.len() {
            return Err(Error::DimensionMismatch {
                context: "DenseLayer bias",
                expected: weights.rows(),
                got: bias.len(),
            });
        }
        Ok(DenseLayer {
            weights,
            bias,
            activation,
        })
    }

    pub fn new_seeded<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        init: Init,
        rng: &mut R,
    ) -> Self
    where
        StandardNormal: Distribution<S>,
    {
        let scale = match init {
            Init::He => S::from_f64_c((2.0 / in_dim as f64).sqrt()),
            Init::Head => S::from_f64_c(0.01),
        };
        let mut weights = Mat::zeros(out_dim, in_dim);
        for w in weights.as_mut_slice() {
            let n: S = StandardNormal.sample(rng);
            *w = n * scale;
        }
        DenseLayer {
            weights,
            bias: vec![S::zero(); out_dim],
            activation,
        }
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &Mat<S> {
        &self.weights
    }

    pub fn bias(&self) -> &[S] {
        &self.bias
    }

    /// `pre[b] = W input[b] + b` for every row of the batch.
    fn forward_pre(&self, input: &Mat<S>, pre: &mut Mat<S>) {
        let in_dim = self.in_dim();
        let out_dim = self.out_dim();
        for b in 0..input.rows() {
            let x = input.row(b);
            let row_out = pre.row_mut(b);
            for o in 0..out_dim {
                let wrow = self.weights.row(o);
                let mut acc = self.bias[o];
                for i in 0..in_dim {
                    acc += wrow[i] * x[i];
                }
                row_out[o] = acc;
            }
        }
    }
}

/// Dense multilayer perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<S> {
    layers: Vec<DenseLayer<S>>,
}

/// Per-layer gradients matching a [`Mlp`]'s parameters.
#[derive(Debug, Clone)]
pub struct MlpGrads<S> {
    pub layers: Vec<LayerGrads<S>>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads<S> {
    pub weights: Mat<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> MlpGrads<S> {
    pub fn zeros_like(mlp: &Mlp<S>) -> Self {
        MlpGrads {
            layers: mlp
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: Mat::zeros(l.out_dim(), l.in_dim()),
                    bias: vec![S::zero(); l.out_dim()],
                })
                .collect(),
        }
    }
}

/// Intermediate values from a forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<S> {
    /// `activations[0]` is the input batch; `activations[l + 1]` is the
    /// post-activation output of layer `l`.
    activations: Vec<Mat<S>>,
    preacts: Vec<Mat<S>>,
}

impl<S: Scalar> ForwardCache<S> {
    pub fn output(&self) -> &Mat<S> {
        self.activations.last().expect("cache has layers")
    }

    pub fn input(&self) -> &Mat<S> {
        &self.activations[0]
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].rows()
    }
}

impl<S: Scalar> Mlp<S> {
    pub fn new(layers: Vec<DenseLayer<S>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("Mlp needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::DimensionMismatch {
                    context: "Mlp layer chain",
                    expected: w[0].out_dim(),
                    got: w[1].in_dim(),
                });
            }
        }
        Ok(Mlp { layers })
    }

    /// ReLU hidden layers with He init, Identity output head with small init.
    pub fn with_relu_hidden<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        rng: &mut R,
    ) -> Result<Self>
    where
        StandardNormal: Distribution<S>,
    {
        if input_dim == 0 || output_dim == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidConfig("layer dims must be > 0".into()));
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input_dim;
        for &h in hidden {
            layers.push(DenseLayer::new_seeded(
                prev,
                h,
                Activation::Relu,
                Init::He,
                rng,
            ));
            prev = h;
        }
        layers.push(DenseLayer::new_seeded(
            prev,
            output_dim,
            Activation::Identity,
            Init::Head,
            rng,
        ));
        Mlp::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").out_dim()
    }

    pub fn layers(&self) -> &[DenseLayer<S>] {
        &self.layers
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[S]) -> Result<Vec<S>> {
        let batch = Mat::from_vec(1, input.len(), input.to_vec())?;
        let (out, _) = self.forward_batch(&batch)?;
        Ok(out.row(0).to_vec())
    }

    /// Batched forward pass returning the output and a backward-ready cache.
    pub fn forward_batch(&self, input: &Mat<S>) -> Result<(Mat<S>, ForwardCache<S>)> {
        if input.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "Mlp::forward input",
                expected: self.input_dim(),
                got: input.cols(),
            });
        }
        let batch = input.rows();
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut preacts = Vec::with_capacity(self.layers.len());
        activations.push(input.clone());
        for layer in &self.layers {
            let mut pre = Mat::zeros(batch, layer.out_dim());
            layer.forward_pre(activations.last().unwrap(), &mut pre);
            let mut post = pre.clone();
            for v in post.as_mut_slice() {
                *v = layer.activation.apply(*v);
            }
            preacts.push(pre);
            activations.push(post);
        }
        let cache = ForwardCache {
            activations,
            preacts,
        };
        Ok((cache.output().clone(), cache))
    }

    /// Reverse-mode pass: gradients of a scalar loss w.r.t. every weight,
    /// bias, and the input batch, given `d loss / d output`.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache<S>,
        output_grad: &Mat<S>,
    ) -> Result<(MlpGrads<S>, Mat<S>)> {
        self.check_cache(cache)?;
        if output_grad.cols() != self.output_dim() || output_grad.rows() != cache.batch_size() {
            return Err(Error::DimensionMismatch {
                context: "Mlp::backward output_grad",
                expected: self.output_dim(),
                got: output_grad.cols(),
            });
        }

        let mut grads = MlpGrads::zeros_like(self);
        let mut upstream = output_grad.clone();

        for (l, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.preacts[l];
            let input = &cache.activations[l];
            let batch = input.rows();
            let in_dim = layer.in_dim();
            let out_dim = layer.out_dim();

            let mut d_input = Mat::zeros(batch, in_dim);
            let g = &mut grads.layers[l];
            for b in 0..batch {
                let up = upstream.row(b);
                let pre_row = pre.row(b);
                let in_row = input.row(b);
                let din_row = d_input.row_mut(b);
                for o in 0..out_dim {
                    let dz = up[o] * layer.activation.grad_from_pre(pre_row[o]);
                    if dz == S::zero() {
                        continue;
                    }
                    g.bias[o] += dz;
                    let grow = g.weights.row_mut(o);
                    let wrow = layer.weights.row(o);
                    for i in 0..in_dim {
                        grow[i] += dz * in_row[i];
                        din_row[i] += wrow[i] * dz;
                    }
                }
            }
            upstream = d_input;
        }
        Ok((grads, upstream))
    }

    fn check_cache(&self, cache: &ForwardCache<S>) -> Result<()> {
        if cache.activations.len() != self.layers.len() + 1
            || cache.preacts.len() != self.layers.len()
        {
            return Err(Error::StaleCache(format!(
                "cache has {} layers, network has {}",
                cache.preacts.len(),
                self.layers.len()
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if cache.activations[l].cols() != layer.in_dim()
                || cache.preacts[l].cols() != layer.out_dim()
            {
                return Err(Error::StaleCache(format!(
                    "layer {} dims do not match cache",
                    l
                )));
            }
        }
        Ok(())
    }

    /// Named views of every trainable tensor, in a stable order.
    pub fn param_block_shapes(&self, prefix: &str) -> Vec<(String, usize)> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((
                format!("{prefix}.l{l}.w"),
                layer.out_dim() * layer.in_dim(),
            ));
            out.push((format!("{prefix}.l{l}.b"), layer.out_dim()));
        }
        out
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut [S]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &mut self.layers {
            out.push(layer.weights.as_mut_slice());
            out.push(layer.bias.as_mut_slice());
        }
        out
    }

    pub fn param_blocks(&self) -> Vec<&[S]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &self.layers {
            out.push(layer.weights.as_slice());
            out.push(layer.bias.as_slice());
        }
        out
    }
}

impl<S: Scalar> MlpGrads<S> {
    pub fn blocks(&self) -> Vec<&[S]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &self.layers {
            out.push(layer.weights.as_slice());
            out.push(layer.bias.as_slice());
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Adam hyperparameters; `new` fills in the usual defaults
/// (beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams<S> {
    pub learning_rate: S,
    pub beta1: S,
    pub beta2: S,
    pub epsilon: S,
}

impl<S: Scalar> AdamParams<S> {
    pub fn new(learning_rate: S) -> Self {
        AdamParams {
            learning_rate,
            beta1: S::from_f64_c(0.9),
            beta2: S::from_f64_c(0.999),
            epsilon: S::from_f64_c(1e-8),
        }
    }
}

#[derive(Debug, Clone)]
struct MomentBlock<S> {
    name: String,
    first: Vec<S>,
    second: Vec<S>,
}

/// Adam optimizer state: per-parameter first/second moments plus the step
/// counter used for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState<S> {
    params: AdamParams<S>,
    step_count: u64,
    blocks: Vec<MomentBlock<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: AdamParams<S>, block_shapes: &[(String, usize)]) -> Self {
        AdamState {
            params,
            step_count: 0,
            blocks: block_shapes
                .iter()
                .map(|(name, len)| MomentBlock {
                    name: name.clone(),
                    first: vec![S::zero(); *len],
                    second: vec![S::zero(); *len],
                })
                .collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update over all parameter blocks.
    ///
    /// `params` and `grads` must match the shapes given at construction;
    /// a non-finite gradient aborts the step naming the offending block.
    pub fn step(&mut self, params: &mut [&mut [S]], grads: &[&[S]]) -> Result<()> {
        if params.len() != self.blocks.len() || grads.len() != self.blocks.len() {
            return Err(Error::DimensionMismatch {
                context: "AdamState::step blocks",
                expected: self.blocks.len(),
                got: params.len().min(grads.len()),
            });
        }
        for (block, g) in self.blocks.iter().zip(grads.iter()) {
            if g.len() != block.first.len() {
                return Err(Error::DimensionMismatch {
                    context: "AdamState::step block shape",
                    expected: block.first.len(),
                    got: g.len(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    block: block.name.clone(),
                });
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let p = self.params;
        let bc1 = S::one() - p.beta1.powi(t);
        let bc2 = S::one() - p.beta2.powi(t);

        for (block, (param, grad)) in self
            .blocks
            .iter_mut()
            .zip(params.iter_mut().zip(grads.iter()))
        {
            for k in 0..grad.len() {
                let g = grad[k];
                block.first[k] = p.beta1 * block.first[k] + (S::one() - p.beta1) * g;
                block.second[k] = p.beta2 * block.second[k] + (S::one() - p.beta2) * g * g;
                let m_hat = block.first[k] / bc1;
                let v_hat = block.second[k] / bc2;
                param[k] = param[k] - p.learning_rate * m_hat / (v_hat.sqrt() + p.epsilon);
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: serde::de::DeserializeOwned"))]
struct MlpJson<S> {
    version: u32,
    layers: Vec<LayerJson<S>>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: serde::de::DeserializeOwned"))]
struct LayerJson<S> {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    /// Row-major `(out_dim, in_dim)`.
    weights: Vec<S>,
    bias: Vec<S>,
}

impl<S: Scalar + Serialize + serde::de::DeserializeOwned> Mlp<S> {
    pub fn to_json_value(&self) -> Result<serde_json::Value> {
        let repr = MlpJson {
            version: MLP_JSON_VERSION,
            layers: self
                .layers
                .iter()
                .map(|l| LayerJson {
                    in_dim: l.in_dim(),
                    out_dim: l.out_dim(),
                    activation: l.activation,
                    weights: l.weights.as_slice().to_vec(),
                    bias: l.bias.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_value(repr)?)
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Self> {
        let repr: MlpJson<S> = serde_json::from_value(value)?;
        if repr.version != MLP_JSON_VERSION {
            return Err(Error::Serde(format!(
                "unsupported network format version {}",
                repr.version
            )));
        }
        let mut layers = Vec::with_capacity(repr.layers.len());
        for l in repr.layers {
            let weights = Mat::from_vec(l.out_dim, l.in_dim, l.weights)?;
            layers.push(DenseLayer::new(weights, l.bias, l.activation)?);
        }
        Mlp::new(layers)
    }
}
