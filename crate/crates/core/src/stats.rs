//! Risk estimators with standard errors, the estimator speedup measure,
//! Spearman rank correlation, and the three distribution-quality tests
//! (Kolmogorov-Smirnov, energy, autoencoder reconstruction).

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::nn::{Activation, AdamParams, AdamState, DenseLayer, Init, Mlp};
use crate::num::Scalar;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskMetric {
    /// Loss-of-load expectation, hours per year.
    Lole,
    /// Expected energy not served, MWh per year.
    Eens,
}

impl std::fmt::Display for RiskMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RiskMetric::Lole => write!(f, "lole"),
            RiskMetric::Eens => write!(f, "eens"),
        }
    }
}

/// A point risk estimate with its standard error and bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub metric: RiskMetric,
    pub value: Real,
    pub std_error: Real,
    pub n_samples: usize,
    pub wall_time_s: Real,
}

/// Sample mean and its standard error (`sample std / sqrt(n)`, n-1 in the
/// denominator of the variance).
pub fn mean_and_se<S: Scalar>(xs: &[S]) -> Result<(S, S)> {
    if xs.len() < 2 {
        return Err(Error::InvalidConfig(
            "estimator needs at least 2 samples".into(),
        ));
    }
    let n = S::from_usize_c(xs.len());
    let mean = xs.iter().copied().sum::<S>() / n;
    let ss = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>();
    let var = ss / (n - S::one());
    Ok((mean, (var / n).sqrt()))
}

/// Plain Monte Carlo estimate: average impact and its standard error.
pub fn mc_estimate(
    metric: RiskMetric,
    impacts: &[Real],
    wall_time_s: Real,
) -> Result<RiskEstimate> {
    let (value, std_error) = mean_and_se(impacts)?;
    Ok(RiskEstimate {
        metric,
        value,
        std_error,
        n_samples: impacts.len(),
        wall_time_s,
    })
}

/// Importance-sampling estimate: average of `impact * weight`.
///
/// With weights identically one this reduces to [`mc_estimate`] bit for bit.
pub fn is_estimate(
    metric: RiskMetric,
    impacts: &[Real],
    weights: &[Real],
    wall_time_s: Real,
) -> Result<RiskEstimate> {
    if impacts.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            context: "is_estimate weights",
            expected: impacts.len(),
            got: weights.len(),
        });
    }
    if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::NonFinite("is_estimate weights".into()));
    }
    let products: Vec<Real> = impacts.iter().zip(weights).map(|(&h, &w)| h * w).collect();
    mc_estimate(metric, &products, wall_time_s)
}

/// Asymptotic speedup of estimator `a` with respect to estimator `b`:
/// `(r_a^2 t_b SE_b^2) / (r_b^2 t_a SE_a^2)`.
pub fn speedup(a: &RiskEstimate, b: &RiskEstimate) -> Result<Real> {
    if a.value <= 0.0 || b.value <= 0.0 {
        return Err(Error::InvalidConfig(
            "speedup requires positive estimates".into(),
        ));
    }
    if a.std_error <= 0.0 || b.std_error <= 0.0 || a.wall_time_s <= 0.0 || b.wall_time_s <= 0.0 {
        return Err(Error::InvalidConfig(
            "speedup requires positive standard errors and wall times".into(),
        ));
    }
    Ok((a.value * a.value * b.wall_time_s * b.std_error * b.std_error)
        / (b.value * b.value * a.wall_time_s * a.std_error * a.std_error))
}

// ---------------------------------------------------------------------------
// Rank correlation
// ---------------------------------------------------------------------------

/// Average ranks (1-based) with ties sharing the mean of their positions.
pub fn average_ranks<S: Scalar>(v: &[S]) -> Vec<S> {
    let n = v.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("finite values"));
    let mut out = vec![S::zero(); n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = S::from_f64_c((i + j) as f64 / 2.0 + 1.0);
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson<S: Scalar>(x: &[S], y: &[S]) -> Result<S> {
    let n = S::from_usize_c(x.len());
    let mx = x.iter().copied().sum::<S>() / n;
    let my = y.iter().copied().sum::<S>() / n;
    let mut sxy = S::zero();
    let mut sxx = S::zero();
    let mut syy = S::zero();
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let denom = (sxx * syy).sqrt();
    if denom == S::zero() {
        return Err(Error::Numeric(
            "correlation undefined for zero-variance input".into(),
        ));
    }
    Ok(sxy / denom)
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman<S: Scalar>(x: &[S], y: &[S]) -> Result<S> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "spearman",
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidConfig("spearman needs length >= 2".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spearman input".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: Real,
    pub p_value: Real,
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value
/// (small-sample corrected effective size).
pub fn ks_test(a: &[Real], b: &[Real]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidConfig(
            "ks_test needs nonempty samples".into(),
        ));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ks_test input".into()));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_unstable_by(Real::total_cmp);
    ys.sort_unstable_by(Real::total_cmp);
    let n = xs.len() as Real;
    let m = ys.len() as Real;
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: Real = 0.0;
    while i < xs.len() && j < ys.len() {
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] == v {
            i += 1;
        }
        while j < ys.len() && ys[j] == v {
            j += 1;
        }
        d = d.max((i as Real / n - j as Real / m).abs());
    }
    d = d.max((i as Real / n - j as Real / m).abs());

    let ne = n * m / (n + m);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    Ok(KsResult {
        statistic: d,
        p_value: ks_survival(lambda),
    })
}

/// `Q_KS(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2)`.
fn ks_survival(lambda: Real) -> Real {
    if lambda < 1e-6 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as Real * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

// ---------------------------------------------------------------------------
// Energy test
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnergyResult {
    pub statistic: Real,
    pub p_value: Real,
    pub permutations: usize,
}

fn euclidean(a: &[Real], b: &[Real]) -> Real {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<Real>()
        .sqrt()
}

/// `E = 2 E|X-Y| - E|X-X'| - E|Y-Y'|` in the V-statistic form (full double
/// sums, diagonal included), clamped at zero. Zero exactly when the two
/// samples coincide as multisets.
fn energy_statistic(dist: &Mat<Real>, ia: &[usize], ib: &[usize]) -> Real {
    let n = ia.len() as Real;
    let m = ib.len() as Real;
    let mut cross = 0.0;
    for &i in ia {
        for &j in ib {
            cross += dist.get(i, j);
        }
    }
    let mut within_a = 0.0;
    for (p, &i) in ia.iter().enumerate() {
        for &j in &ia[p + 1..] {
            within_a += dist.get(i, j);
        }
    }
    let mut within_b = 0.0;
    for (p, &i) in ib.iter().enumerate() {
        for &j in &ib[p + 1..] {
            within_b += dist.get(i, j);
        }
    }
    let e = 2.0 * cross / (n * m) - 2.0 * within_a / (n * n) - 2.0 * within_b / (m * m);
    e.max(0.0)
}

/// Two-sample energy test with a permutation p-value using the
/// `(b + 1) / (n + 1)` convention.
pub fn energy_test<R: Rng + ?Sized>(
    a: &Mat<Real>,
    b: &Mat<Real>,
    permutations: usize,
    rng: &mut R,
) -> Result<EnergyResult> {
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch {
            context: "energy_test columns",
            expected: a.cols(),
            got: b.cols(),
        });
    }
    if a.rows() == 0 || b.rows() == 0 || permutations == 0 {
        return Err(Error::InvalidConfig(
            "energy_test needs nonempty samples and at least one permutation".into(),
        ));
    }
    let n = a.rows();
    let total = n + b.rows();
    let pooled: Vec<&[Real]> = a.iter_rows().chain(b.iter_rows()).collect();
    let mut dist = Mat::zeros(total, total);
    for i in 0..total {
        for j in (i + 1)..total {
            let d = euclidean(pooled[i], pooled[j]);
            dist.set(i, j, d);
            dist.set(j, i, d);
        }
    }

    let mut idx: Vec<usize> = (0..total).collect();
    let observed = energy_statistic(&dist, &idx[..n], &idx[n..]);

    let mut count = 0usize;
    for _ in 0..permutations {
        idx.shuffle(rng);
        if energy_statistic(&dist, &idx[..n], &idx[n..]) >= observed {
            count += 1;
        }
    }
    Ok(EnergyResult {
        statistic: observed,
        p_value: (count as Real + 1.0) / (permutations as Real + 1.0),
        permutations,
    })
}

// ---------------------------------------------------------------------------
// Autoencoder test
// ---------------------------------------------------------------------------

/// Configuration of the plain (deterministic-bottleneck) autoencoder used by
/// the reconstruction-error test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AeConfig {
    pub hidden: Vec<usize>,
    pub bottleneck: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: Real,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig {
            hidden: vec![64, 64, 64],
            bottleneck: 4,
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Plain autoencoder: encoder and decoder fused into one network with a
/// deterministic (no sampling) bottleneck.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    net: Mlp<Real>,
}

pub fn train_autoencoder(train: &Mat<Real>, cfg: &AeConfig) -> Result<Autoencoder> {
    if train.rows() == 0 {
        return Err(Error::InvalidConfig(
            "autoencoder needs training data".into(),
        ));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 || cfg.bottleneck == 0 {
        return Err(Error::InvalidConfig("invalid autoencoder config".into()));
    }
    let d = train.cols();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);

    let mut layers = Vec::new();
    let mut prev = d;
    for &h in &cfg.hidden {
        layers.push(DenseLayer::new_seeded(
            prev,
            h,
            Activation::Relu,
            Init::He,
            &mut rng,
        ));
        prev = h;
    }
    layers.push(DenseLayer::new_seeded(
        prev,
        cfg.bottleneck,
        Activation::Identity,
        Init::Head,
        &mut rng,
    ));
    prev = cfg.bottleneck;
    for &h in cfg.hidden.iter().rev() {
        layers.push(DenseLayer::new_seeded(
            prev,
            h,
            Activation::Relu,
            Init::He,
            &mut rng,
        ));
        prev = h;
    }
    layers.push(DenseLayer::new_seeded(
        prev,
        d,
        Activation::Identity,
        Init::Head,
        &mut rng,
    ));
    let mut net = Mlp::new(layers)?;

    let shapes = net.param_block_shapes("ae");
    let mut adam = AdamState::new(AdamParams::new(cfg.learning_rate), &shapes);

    let n = train.rows();
    let mut order: Vec<usize> = (0..n).collect();
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train.select_rows(chunk);
            let (out, cache) = net.forward_batch(&batch)?;
            let scale = 2.0 / chunk.len() as Real;
            let mut out_grad = Mat::zeros(batch.rows(), d);
            for r in 0..batch.rows() {
                let og = out_grad.row_mut(r);
                let o = out.row(r);
                let x = batch.row(r);
                for c in 0..d {
                    og[c] = scale * (o[c] - x[c]);
                }
            }
            let (grads, _) = net.backward_batch(&cache, &out_grad)?;
            adam.step(&mut net.param_blocks_mut(), &grads.blocks())?;
        }
    }
    Ok(Autoencoder { net })
}

impl Autoencoder {
    /// Per-state squared reconstruction error `||x - dec(enc(x))||^2`.
    pub fn reconstruction_errors(&self, states: &Mat<Real>) -> Result<Vec<Real>> {
        let (out, _) = self.net.forward_batch(states)?;
        Ok((0..states.rows())
            .map(|r| {
                states
                    .row(r)
                    .iter()
                    .zip(out.row(r))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum()
            })
            .collect())
    }
}

/// Trains a plain autoencoder on `train_states` and returns the
/// reconstruction-error distribution over `eval_states`.
pub fn autoencoder_test(
    train_states: &Mat<Real>,
    eval_states: &Mat<Real>,
    cfg: &AeConfig,
) -> Result<Vec<Real>> {
    let ae = train_autoencoder(train_states, cfg)?;
    ae.reconstruction_errors(eval_states)
}

// ---------------------------------------------------------------------------
// Reports and calibration helpers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatTestKind {
    Ks,
    Energy,
    Autoencoder,
}

/// One distribution-quality test outcome over repeated subsamples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestReport {
    pub test: StatTestKind,
    /// Per-repetition p-values (empty for the autoencoder test).
    pub p_values: Vec<Real>,
    /// Reconstruction-error quartiles `(q25, median, q75)` for the
    /// autoencoder test.
    pub error_quartiles: Option<(Real, Real, Real)>,
    pub repetitions: usize,
    pub subsample_size: usize,
}

impl TestReport {
    pub fn new(
        test: StatTestKind,
        p_values: Vec<Real>,
        error_quartiles: Option<(Real, Real, Real)>,
        repetitions: usize,
        subsample_size: usize,
    ) -> Result<Self> {
        if p_values.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidConfig("p-values must lie in [0, 1]".into()));
        }
        Ok(TestReport {
            test,
            p_values,
            error_quartiles,
            repetitions,
            subsample_size,
        })
    }
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(values: &[Real], q: Real) -> Real {
    let mut v = values.to_vec();
    v.sort_unstable_by(Real::total_cmp);
    if v.is_empty() {
        return Real::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as Real;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as Real;
    v[lo] + frac * (v[hi] - v[lo])
}

/// Chi-square goodness-of-fit p-value against the uniform distribution on
/// `[0, 1]`, with equal-width bins.
pub fn uniformity_chi2(p_values: &[Real], bins: usize) -> Result<Real> {
    if bins < 2 || p_values.len() < 5 * bins {
        return Err(Error::InvalidConfig(
            "uniformity test needs >= 5 samples per bin".into(),
        ));
    }
    if p_values.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::InvalidConfig("p-values must lie in [0, 1]".into()));
    }
    let mut counts = vec![0usize; bins];
    for &p in p_values {
        let k = ((p * bins as Real) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let expected = p_values.len() as Real / bins as Real;
    let chi2: Real = counts
        .iter()
        .map(|&o| {
            let d = o as Real - expected;
            d * d / expected
        })
        .sum();
    let dist = ChiSquared::new((bins - 1) as f64)
        .map_err(|e| Error::Numeric(format!("chi-squared dof: {e}")))?;
    Ok(1.0 - dist.cdf(chi2))
}
