//! The convolutional VAE: encoder/decoder pair, diagonal-Gaussian posterior
//! with reparameterized sampling, ELBO training with best-validation
//! checkpointing, and the importance-weighted marginal log-likelihood
//! estimator used for scoring.
//!
//! Architecture (for 32×32 inputs, `nf` base filters, `nz` latent dims):
//!
//! ```text
//! encoder: 32×32×nc ─4×4 s2 conv→ 16×16×nf ─→ 8×8×2nf ─→ 4×4×4nf
//!          ─4×4 valid conv→ 1×1×2nz   (mu, logvar; no BN/ReLU on the head)
//! decoder: 1×1×nz ─4×4 valid deconv→ 4×4×4nf ─→ 8×8×2nf ─→ 16×16×nf
//!          ─4×4 s2 deconv→ 32×32×out  (no BN/ReLU on the head)
//! ```
//!
//! Every hidden layer is followed by batchnorm and ReLU. The decoder head is
//! linear: per-pixel likelihoods and their gradients are evaluated on raw
//! outputs (as logits) for numerical stability, and [`VaeModel::decode`]
//! applies the visible-distribution mapping (sigmoid, λ clamp) on top. For
//! the categorical family the head widens to 256·nc channels — per pixel and
//! image channel, one logit per 8-bit value, grouped as `channel·256 + value`.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, Preprocessing};
use crate::dists::{self, PixelProb, EPS_LAMBDA};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, AdamConfig, Layer, Mode, Network, ParamStore, Padding, Tensor4, BN_EPS,
    BN_MOMENTUM,
};
use crate::scalar::Scalar;

/// Encoder log-variances are clamped to this range before any use, keeping
/// `exp(logvar)` finite and the KL term bounded.
pub const LOGVAR_CLAMP: (f64, f64) = (-10.0, 10.0);

const CHECKPOINT_MAGIC: &[u8; 4] = b"VAEC";
const CHECKPOINT_VERSION: u32 = 1;

/// Per-pixel likelihood family of the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Visible {
    Bernoulli,
    Cb,
    Categorical,
}

impl std::fmt::Display for Visible {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Visible::Bernoulli => write!(f, "bernoulli"),
            Visible::Cb => write!(f, "cb"),
            Visible::Categorical => write!(f, "categorical"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    /// Latent dimensions.
    pub nz: usize,
    /// Base filter count (doubles at each downsampling stage).
    pub nf: usize,
    /// Image channels.
    pub nc: usize,
    pub visible: Visible,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Importance samples for the marginal-LL estimator.
    pub iwae_samples: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            nz: 20,
            nf: 32,
            nc: 1,
            visible: Visible::Cb,
            epochs: 50,
            batch_size: 64,
            learning_rate: 5e-4,
            seed: 0,
            iwae_samples: 100,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nz == 0 || self.nf == 0 || self.nc == 0 {
            return Err(Error::Config("nz, nf, nc must all be ≥ 1".into()));
        }
        if self.batch_size == 0 || self.iwae_samples == 0 {
            return Err(Error::Config("batch_size and iwae_samples must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("bad learning rate {}", self.learning_rate)));
        }
        Ok(())
    }

    /// Decoder head channels: nc for scalar-parameter families, 256·nc for
    /// the categorical head.
    pub fn out_channels(&self) -> usize {
        match self.visible {
            Visible::Categorical => 256 * self.nc,
            _ => self.nc,
        }
    }
}

/// Training provenance carried by a model into checkpoints and scoring.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelMeta {
    pub preprocessing: Preprocessing,
    pub best_val_nll: Option<f64>,
    pub best_epoch: Option<usize>,
    /// Set when training aborted on divergence; the model then holds the
    /// last good (best-validation) checkpoint.
    pub diverged: Option<String>,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub logvar_clamp: (f64, f64),
}

impl Default for ModelMeta {
    fn default() -> Self {
        Self {
            preprocessing: Preprocessing::None,
            best_val_nll: None,
            best_epoch: None,
            diverged: None,
            bn_momentum: BN_MOMENTUM,
            bn_eps: BN_EPS,
            logvar_clamp: LOGVAR_CLAMP,
        }
    }
}

/// One posterior draw with its log-densities under the posterior and the
/// standard-normal prior. The importance weight for sample `z` is
/// `log p(x|z) + log_p − log_q`.
#[derive(Clone, Debug)]
pub struct LatentSample {
    pub z: Vec<f64>,
    pub log_q: f64,
    pub log_p: f64,
}

pub struct VaeModel<S: Scalar> {
    pub config: VaeConfig,
    pub store: ParamStore<S>,
    pub meta: ModelMeta,
    encoder: Network,
    decoder: Network,
}

impl<S: Scalar> std::fmt::Debug for VaeModel<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VaeModel")
            .field("config", &self.config)
            .field("meta", &self.meta)
            .field("parameters", &self.store.num_trainable_values())
            .finish()
    }
}

fn build_encoder<S: Scalar>(
    config: &VaeConfig,
    store: &mut ParamStore<S>,
    rng: &mut ChaCha8Rng,
) -> Result<Network> {
    let nf = config.nf;
    let mut layers = Vec::new();
    let stages = [(config.nc, nf), (nf, 2 * nf), (2 * nf, 4 * nf)];
    for (i, (cin, cout)) in stages.into_iter().enumerate() {
        layers.push(Layer::conv(store, rng, &format!("enc.c{}", i + 1), 4, cin, cout, 2, Padding::Same)?);
        layers.push(Layer::batchnorm(store, &format!("enc.bn{}", i + 1), cout)?);
        layers.push(Layer::Relu);
    }
    layers.push(Layer::conv(store, rng, "enc.c4", 4, 4 * nf, 2 * config.nz, 1, Padding::Valid)?);
    Ok(Network::new(layers))
}

fn build_decoder<S: Scalar>(
    config: &VaeConfig,
    store: &mut ParamStore<S>,
    rng: &mut ChaCha8Rng,
) -> Result<Network> {
    let nf = config.nf;
    let mut layers = Vec::new();
    layers.push(Layer::deconv(store, rng, "dec.d1", 4, config.nz, 4 * nf, 1, Padding::Valid)?);
    layers.push(Layer::batchnorm(store, "dec.bn1", 4 * nf)?);
    layers.push(Layer::Relu);
    let stages = [(4 * nf, 2 * nf), (2 * nf, nf)];
    for (i, (cin, cout)) in stages.into_iter().enumerate() {
        layers.push(Layer::deconv(store, rng, &format!("dec.d{}", i + 2), 4, cin, cout, 2, Padding::Same)?);
        layers.push(Layer::batchnorm(store, &format!("dec.bn{}", i + 2), cout)?);
        layers.push(Layer::Relu);
    }
    layers.push(Layer::deconv(store, rng, "dec.d4", 4, nf, config.out_channels(), 2, Padding::Same)?);
    Ok(Network::new(layers))
}

// ---------------------------------------------------------- loss components

/// Per-sample KL(q‖p) for a diagonal Gaussian posterior against the standard
/// normal prior: `½ Σ_j (μ² + e^logvar − 1 − logvar)`. Always ≥ 0.
pub fn kl_terms<S: Scalar>(mu: &Tensor4<S>, logvar: &Tensor4<S>) -> Vec<f64> {
    let n = mu.batch();
    let per = mu.numel() / n;
    let mut out = vec![0.0; n];
    for (i, (m, lv)) in mu.as_slice().iter().zip(logvar.as_slice()).enumerate() {
        let (m, lv) = (m.to_f64_c(), lv.to_f64_c());
        out[i / per] += 0.5 * (m * m + lv.exp() - 1.0 - lv);
    }
    out
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid_f64(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Per-sample log p(x|z) from raw decoder outputs, without gradients.
/// Layout contract: for bernoulli/cb the output has nc channels of logits;
/// for categorical, 256·nc channels grouped as `channel·256 + value`.
pub fn visible_log_likelihood<S: Scalar>(
    visible: Visible,
    x: &Tensor4<S>,
    raw: &Tensor4<S>,
) -> Result<Vec<f64>> {
    let (ll, _) = recon_ll_grad(visible, x, raw, false)?;
    Ok(ll)
}

/// Log-likelihood per sample plus (optionally) the gradient of Σ_samples ll
/// with respect to the raw decoder outputs.
fn recon_ll_grad<S: Scalar>(
    visible: Visible,
    x: &Tensor4<S>,
    raw: &Tensor4<S>,
    want_grad: bool,
) -> Result<(Vec<f64>, Option<Tensor4<S>>)> {
    let [n, h, w, nc] = x.shape();
    let expected_c = match visible {
        Visible::Categorical => 256 * nc,
        _ => nc,
    };
    if raw.shape() != [n, h, w, expected_c] {
        return Err(Error::shape(format!(
            "decoder output {:?} does not match input {:?} under {visible}",
            raw.shape(),
            x.shape()
        )));
    }
    let mut ll = vec![0.0f64; n];
    let mut grad = want_grad.then(|| vec![S::zero(); raw.numel()]);
    let xs = x.as_slice();
    let rs = raw.as_slice();
    let per_sample_px = h * w * nc;

    match visible {
        Visible::Bernoulli => {
            for (i, (&xv, &tv)) in xs.iter().zip(rs).enumerate() {
                let (xv, t) = (xv.to_f64_c(), tv.to_f64_c());
                // log x̂ = −softplus(−t), log(1−x̂) = −softplus(t).
                ll[i / per_sample_px] -= xv * softplus(-t) + (1.0 - xv) * softplus(t);
                if let Some(g) = grad.as_mut() {
                    g[i] = S::from_f64_c(xv - sigmoid_f64(t));
                }
            }
        }
        Visible::Cb => {
            for (i, (&xv, &tv)) in xs.iter().zip(rs).enumerate() {
                let (xv, t) = (xv.to_f64_c().clamp(0.0, 1.0), tv.to_f64_c());
                let s = sigmoid_f64(t);
                let lam = s.clamp(EPS_LAMBDA, 1.0 - EPS_LAMBDA);
                ll[i / per_sample_px] += dists::cb_log_pdf(xv, lam)?;
                if let Some(g) = grad.as_mut() {
                    // Zero gradient where the λ clamp is active.
                    g[i] = if s == lam {
                        let dpdf = dists::cb_log_norm_grad(lam)?
                            + xv / lam
                            - (1.0 - xv) / (1.0 - lam);
                        S::from_f64_c(dpdf * s * (1.0 - s))
                    } else {
                        S::zero()
                    };
                }
            }
        }
        Visible::Categorical => {
            // Per pixel and image channel: a 256-way log-softmax.
            let pixels = n * h * w;
            for p in 0..pixels {
                for k in 0..nc {
                    let xv = xs[p * nc + k].to_f64_c();
                    let v = dists::pixel_to_byte(xv) as usize;
                    let base = p * expected_c + k * 256;
                    let logits = &rs[base..base + 256];
                    let max = logits
                        .iter()
                        .map(|t| t.to_f64_c())
                        .fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = logits.iter().map(|t| (t.to_f64_c() - max).exp()).sum();
                    let lse = max + sum.ln();
                    ll[p / (h * w)] += logits[v].to_f64_c() - lse;
                    if let Some(g) = grad.as_mut() {
                        for j in 0..256 {
                            let p_j = (logits[j].to_f64_c() - lse).exp();
                            let one_hot = if j == v { 1.0 } else { 0.0 };
                            g[base + j] = S::from_f64_c(one_hot - p_j);
                        }
                    }
                }
            }
        }
    }
    let grad = match grad {
        Some(g) => Some(Tensor4::new(raw.shape(), g)?),
        None => None,
    };
    Ok((ll, grad))
}

/// Numerically safe `log((1/K)·Σ exp(wᵢ))` via max-shift.
pub fn log_mean_exp(ws: &[f64]) -> f64 {
    let max = ws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max; // all −∞ (or a NaN/∞ already present)
    }
    let sum: f64 = ws.iter().map(|w| (w - max).exp()).sum();
    max + (sum / ws.len() as f64).ln()
}

// ------------------------------------------------------------- model proper

fn split_latent<S: Scalar>(enc_out: &Tensor4<S>, nz: usize) -> Result<(Tensor4<S>, Tensor4<S>)> {
    let [n, h, w, c] = enc_out.shape();
    if (h, w, c) != (1, 1, 2 * nz) {
        return Err(Error::shape(format!(
            "encoder output {:?}, expected [n, 1, 1, {}]",
            enc_out.shape(),
            2 * nz
        )));
    }
    let s = enc_out.as_slice();
    let mut mu = Vec::with_capacity(n * nz);
    let mut lv = Vec::with_capacity(n * nz);
    for i in 0..n {
        mu.extend_from_slice(&s[i * 2 * nz..i * 2 * nz + nz]);
        lv.extend_from_slice(&s[i * 2 * nz + nz..(i + 1) * 2 * nz]);
    }
    Ok((Tensor4::new([n, 1, 1, nz], mu)?, Tensor4::new([n, 1, 1, nz], lv)?))
}

fn merge_latent_grads<S: Scalar>(dmu: &Tensor4<S>, dlv: &Tensor4<S>) -> Result<Tensor4<S>> {
    let [n, _, _, nz] = dmu.shape();
    let (ms, ls) = (dmu.as_slice(), dlv.as_slice());
    let mut out = Vec::with_capacity(n * 2 * nz);
    for i in 0..n {
        out.extend_from_slice(&ms[i * nz..(i + 1) * nz]);
        out.extend_from_slice(&ls[i * nz..(i + 1) * nz]);
    }
    Tensor4::new([n, 1, 1, 2 * nz], out)
}

/// Clamps log-variances; the returned mask is 1 where the clamp is inactive
/// (gradient passes) and 0 where it saturates.
fn clamp_logvar<S: Scalar>(lv: &Tensor4<S>) -> (Tensor4<S>, Tensor4<S>) {
    let (lo, hi) = LOGVAR_CLAMP;
    let clamped = lv.map(|v| S::from_f64_c(v.to_f64_c().clamp(lo, hi)));
    let gate = lv.map(|v| {
        let v = v.to_f64_c();
        if v > lo && v < hi { S::one() } else { S::zero() }
    });
    (clamped, gate)
}

fn gaussian_eps<S: Scalar>(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4<S> {
    Tensor4::from_fn(shape, |_, _, _, _| S::from_f64_c(rng.sample::<f64, _>(StandardNormal)))
}

impl<S: Scalar> VaeModel<S> {
    /// Fresh model with seeded Xavier initialization.
    pub fn new(config: VaeConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = build_encoder(&config, &mut store, &mut rng)?;
        let decoder = build_decoder(&config, &mut store, &mut rng)?;
        Ok(Self { config, store, meta: ModelMeta::default(), encoder, decoder })
    }

    /// Posterior parameters for a batch, eval-mode (deterministic):
    /// `([n,1,1,nz] mu, [n,1,1,nz] logvar)`, logvar clamped.
    pub fn encode(&self, x: &Tensor4<S>) -> Result<(Tensor4<S>, Tensor4<S>)> {
        self.check_input(x)?;
        let enc_out = self.encoder.forward_eval(&self.store, x)?;
        let (mu, lv_raw) = split_latent(&enc_out, self.config.nz)?;
        let (lv, _) = clamp_logvar(&lv_raw);
        Ok((mu, lv))
    }

    fn check_input(&self, x: &Tensor4<S>) -> Result<()> {
        let [_, h, w, c] = x.shape();
        if (h, w, c) != (crate::data::IMAGE_HW, crate::data::IMAGE_HW, self.config.nc) {
            return Err(Error::shape(format!(
                "input {:?}, expected [n, 32, 32, {}]",
                x.shape(),
                self.config.nc
            )));
        }
        x.check_finite("model input")
    }

    /// Raw decoder head outputs (logits) for latent codes `[n,1,1,nz]`.
    pub fn decode_raw(&self, z: &Tensor4<S>) -> Result<Tensor4<S>> {
        let [_, h, w, c] = z.shape();
        if (h, w, c) != (1, 1, self.config.nz) {
            return Err(Error::shape(format!(
                "latent {:?}, expected [n, 1, 1, {}]",
                z.shape(),
                self.config.nz
            )));
        }
        self.decoder.forward_eval(&self.store, z)
    }

    /// Visible-distribution parameters: Bernoulli means, clamped cB λ, or
    /// categorical logits (layout `channel·256 + value`).
    pub fn decode(&self, z: &Tensor4<S>) -> Result<Tensor4<S>> {
        let raw = self.decode_raw(z)?;
        Ok(match self.config.visible {
            Visible::Bernoulli => raw.map(|t| S::from_f64_c(sigmoid_f64(t.to_f64_c()))),
            Visible::Cb => raw.map(|t| {
                S::from_f64_c(sigmoid_f64(t.to_f64_c()).clamp(EPS_LAMBDA, 1.0 - EPS_LAMBDA))
            }),
            Visible::Categorical => raw,
        })
    }

    /// Single-sample reparameterized ELBO per batch element (eval-mode
    /// batchnorm; seeded noise).
    pub fn elbo_batch(&self, x: &Tensor4<S>, seed: u64) -> Result<Vec<f64>> {
        let (mu, lv) = self.encode(x)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = gaussian_eps::<S>(mu.shape(), &mut rng);
        let z = sample_z(&mu, &lv, &eps);
        let raw = self.decode_raw(&z)?;
        let recon = visible_log_likelihood(self.config.visible, x, &raw)?;
        let kl = kl_terms(&mu, &lv);
        Ok(recon.iter().zip(&kl).map(|(r, k)| r - k).collect())
    }

    pub fn elbo(&self, x: &Tensor4<S>, seed: u64) -> Result<f64> {
        if x.batch() != 1 {
            return Err(Error::shape("elbo expects a single sample"));
        }
        Ok(self.elbo_batch(x, seed)?[0])
    }

    /// K reparameterized posterior draws for one sample, with their
    /// log-densities (deterministic given the seed).
    pub fn posterior_samples(&self, x: &Tensor4<S>, k: usize, seed: u64) -> Result<Vec<LatentSample>> {
        if x.batch() != 1 {
            return Err(Error::shape("posterior sampling expects a single sample"));
        }
        if k == 0 {
            return Err(Error::Config("need K ≥ 1 posterior samples".into()));
        }
        let (mu, lv) = self.encode(x)?;
        let (mus, lvs) = (mu.as_slice(), lv.as_slice());
        let nz = self.config.nz;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        const LN_2PI: f64 = 1.8378770664093453;
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let mut z = Vec::with_capacity(nz);
            let (mut log_q, mut log_p) = (0.0f64, 0.0f64);
            for j in 0..nz {
                let e: f64 = rng.sample(StandardNormal);
                let (mj, lj) = (mus[j].to_f64_c(), lvs[j].to_f64_c());
                let zj = mj + (0.5 * lj).exp() * e;
                z.push(zj);
                log_q += -0.5 * (LN_2PI + lj) - 0.5 * e * e;
                log_p += -0.5 * (LN_2PI + zj * zj);
            }
            if !(log_q.is_finite() && log_p.is_finite()) {
                return Err(Error::domain(format!(
                    "non-finite posterior log-density (log_q={log_q}, log_p={log_p})"
                )));
            }
            out.push(LatentSample { z, log_q, log_p });
        }
        Ok(out)
    }

    /// The K individual IWAE log-weights `log p(x|z_k) + log p(z_k) −
    /// log q(z_k|x)`, z_k ~ q. Decodes in chunks, so large K stays within
    /// memory even for the categorical head.
    pub fn iwae_log_weights(&self, x: &Tensor4<S>, k: usize, seed: u64) -> Result<Vec<f64>> {
        let samples = self.posterior_samples(x, k, seed)?;
        let nz = self.config.nz;
        // Chunk size keeps decode activations around ~4M floats.
        let per_code = 32 * 32 * self.config.out_channels();
        let chunk = (4_000_000 / per_code).clamp(1, k);
        let mut weights = Vec::with_capacity(k);
        for group in samples.chunks(chunk) {
            let m = group.len();
            let mut zs = Vec::with_capacity(m * nz);
            for s in group {
                zs.extend(s.z.iter().map(|&v| S::from_f64_c(v)));
            }
            let zt = Tensor4::new([m, 1, 1, nz], zs)?;
            let raw = self.decode_raw(&zt)?;
            let x_rep = Tensor4::stack(&vec![x.clone(); m])?;
            let recon = visible_log_likelihood(self.config.visible, &x_rep, &raw)?;
            for (i, s) in group.iter().enumerate() {
                weights.push(recon[i] + s.log_p - s.log_q);
            }
        }
        Ok(weights)
    }

    /// Importance-weighted marginal log-likelihood estimate with K posterior
    /// samples: `logmeanexp_k [log p(x|z_k) + log p(z_k) − log q(z_k|x)]`,
    /// computed with the max-shift trick so no intermediate overflows.
    pub fn iwae_ll(&self, x: &Tensor4<S>, k: usize, seed: u64) -> Result<f64> {
        Ok(log_mean_exp(&self.iwae_log_weights(x, k, seed)?))
    }

    /// One table-build contribution: the decoder's probability (at the
    /// posterior mean code) for each pixel's actual 8-bit value.
    pub fn cat_pixel_probs(&self, x: &Tensor4<S>) -> Result<Vec<PixelProb>> {
        if self.config.visible != Visible::Categorical {
            return Err(Error::Config(format!(
                "pixel-probability extraction needs a categorical model, this one is {}",
                self.config.visible
            )));
        }
        if x.batch() != 1 {
            return Err(Error::shape("cat_pixel_probs expects a single sample"));
        }
        let (mu, _) = self.encode(x)?;
        let raw = self.decode_raw(&mu)?;
        let rs = raw.as_slice();
        let nc = self.config.nc;
        let mut out = Vec::with_capacity(x.numel());
        for (p, chunk) in x.as_slice().chunks_exact(nc).enumerate() {
            for (ch, &xv) in chunk.iter().enumerate() {
                let v = dists::pixel_to_byte(xv.to_f64_c()) as usize;
                let base = p * 256 * nc + ch * 256;
                let logits = &rs[base..base + 256];
                let max = logits
                    .iter()
                    .map(|t| t.to_f64_c())
                    .fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = logits.iter().map(|t| (t.to_f64_c() - max).exp()).sum();
                let prob = (logits[v].to_f64_c() - max).exp() / sum;
                out.push(PixelProb { value: v as u8, channel: ch, prob });
            }
        }
        Ok(out)
    }

    // ------------------------------------------------------------ checkpoints

    /// Serializes config, metadata, and every parameter (including batchnorm
    /// running statistics) as little-endian f32 with a trailing SHA-256.
    pub fn save(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct TensorInfo<'a> {
            name: &'a str,
            shape: [usize; 4],
            trainable: bool,
        }
        #[derive(Serialize)]
        struct Header<'a> {
            config: &'a VaeConfig,
            meta: &'a ModelMeta,
            tensors: Vec<TensorInfo<'a>>,
        }
        let header = Header {
            config: &self.config,
            meta: &self.meta,
            tensors: self
                .store
                .iter()
                .map(|(name, e)| TensorInfo {
                    name,
                    shape: e.value.shape(),
                    trainable: e.trainable,
                })
                .collect(),
        };
        let meta_json = serde_json::to_vec(&header)?;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&meta_json);
        for (_, e) in self.store.iter() {
            for v in e.value.as_slice() {
                bytes.extend_from_slice(&(v.to_f64_c() as f32).to_le_bytes());
            }
        }
        let digest = Sha256::digest(&bytes);
        bytes.extend_from_slice(&digest);
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&bytes)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct TensorInfo {
            name: String,
            shape: [usize; 4],
            trainable: bool,
        }
        #[derive(Deserialize)]
        struct Header {
            config: VaeConfig,
            meta: ModelMeta,
            tensors: Vec<TensorInfo>,
        }
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 48 {
            return Err(Error::Checkpoint("file too short to be a checkpoint".into()));
        }
        let (body, stored_digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != stored_digest {
            return Err(Error::Checkpoint(
                "checksum mismatch: checkpoint is corrupt or truncated".into(),
            ));
        }
        if &body[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {:?}", &body[..4])));
        }
        let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let meta_len = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
        if body.len() < 16 + meta_len {
            return Err(Error::Checkpoint("metadata block truncated".into()));
        }
        let header: Header = serde_json::from_slice(&body[16..16 + meta_len])?;
        let mut model = VaeModel::<S>::new(header.config)?;
        model.meta = header.meta;

        // The tensor table must match the rebuilt architecture exactly —
        // same names, same order, same shapes, same trainable flags.
        let expected: Vec<(String, [usize; 4], bool)> = model
            .store
            .iter()
            .map(|(n, e)| (n.to_string(), e.value.shape(), e.trainable))
            .collect();
        if header.tensors.len() != expected.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, architecture needs {}",
                header.tensors.len(),
                expected.len()
            )));
        }
        for (info, (name, shape, trainable)) in header.tensors.iter().zip(&expected) {
            if &info.name != name || info.shape != *shape || info.trainable != *trainable {
                return Err(Error::Checkpoint(format!(
                    "tensor table mismatch: file has ('{}', {:?}, trainable={}), \
                     architecture needs ('{}', {:?}, trainable={})",
                    info.name, info.shape, info.trainable, name, shape, trainable
                )));
            }
        }
        let mut offset = 16 + meta_len;
        for info in &header.tensors {
            let tensor = model.store.value_mut(&info.name)?;
            let need = tensor.numel() * 4;
            if body.len() < offset + need {
                return Err(Error::Checkpoint(format!(
                    "tensor {} payload truncated at byte {offset}",
                    info.name
                )));
            }
            let slice = tensor.as_mut_slice();
            for (i, chunk) in body[offset..offset + need].chunks_exact(4).enumerate() {
                slice[i] = S::from_f64_c(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
            }
            offset += need;
        }
        if offset != body.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after tensor payload",
                body.len() - offset
            )));
        }
        model.store.validate()?;
        Ok(model)
    }
}

fn sample_z<S: Scalar>(mu: &Tensor4<S>, lv: &Tensor4<S>, eps: &Tensor4<S>) -> Tensor4<S> {
    let mut out = mu.clone();
    for ((o, l), e) in out
        .as_mut_slice()
        .iter_mut()
        .zip(lv.as_slice())
        .zip(eps.as_slice())
    {
        let std = S::from_f64_c((0.5 * l.to_f64_c()).exp());
        *o = *o + std * *e;
    }
    out
}

// ------------------------------------------------------------------ training

/// One line of the training log (serialized as line-delimited JSON).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-sample training loss (−ELBO) over the epoch's batches.
    pub train_loss: f64,
    /// Mean per-sample validation NLL (−ELBO, eval-mode batchnorm).
    pub val_nll: f64,
    pub seconds: f64,
}

/// Trains a model, returning the best-validation checkpoint (not the final
/// epoch). Validation NLL is the negative single-sample ELBO under eval-mode
/// batchnorm with noise fixed across epochs, so selection compares like with
/// like. Non-finite batches are skipped; an epoch in which every batch was
/// skipped aborts training, returning the best checkpoint so far with the
/// diagnostic recorded in `meta.diverged`.
pub fn train<S: Scalar>(
    config: &VaeConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    mut log_out: Option<&mut dyn Write>,
) -> Result<VaeModel<S>> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("train and val sets must be non-empty".into()));
    }
    if train_set.nc() != config.nc || val_set.nc() != config.nc {
        return Err(Error::Config(format!(
            "channel mismatch: config nc={}, train nc={}, val nc={}",
            config.nc,
            train_set.nc(),
            val_set.nc()
        )));
    }
    if train_set.preprocessing != val_set.preprocessing {
        return Err(Error::Provenance(format!(
            "train set is {} but val set is {}",
            train_set.preprocessing, val_set.preprocessing
        )));
    }

    let mut model = VaeModel::<S>::new(config.clone())?;
    model.meta.preprocessing = train_set.preprocessing;
    let adam = AdamConfig { learning_rate: config.learning_rate, ..AdamConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x7261_696e));
    let val_seed = config.seed ^ 0x7661_6c21;

    let mut best: Option<(f64, ParamStore<S>, usize)> = None;
    let mut step = 0u64;
    let n = train_set.len();

    for epoch in 1..=config.epochs {
        let t0 = Instant::now();
        let mut indices: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        indices.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut applied = 0usize;
        let mut skipped = 0usize;
        for batch_idx in indices.chunks(config.batch_size) {
            // Batchnorm needs ≥ 2 samples for a usable batch variance.
            if batch_idx.len() < 2 {
                continue;
            }
            let xb = train_set.batch(batch_idx)?.cast::<S>();
            let eps_seed: u64 = rng.gen();
            match train_step(&mut model, &xb, &adam, step + 1, eps_seed) {
                Ok(loss) => {
                    epoch_loss += loss;
                    applied += 1;
                    step += 1;
                }
                Err(e) => {
                    skipped += 1;
                    log::warn!("epoch {epoch}: skipped batch ({e})");
                }
            }
        }
        if applied == 0 {
            let diag = format!(
                "training diverged in epoch {epoch}: all {skipped} batches produced \
                 non-finite losses or gradients"
            );
            log::error!("{diag}");
            model.meta.diverged = Some(diag);
            break;
        }
        let train_loss = epoch_loss / applied as f64;

        // A diverged model can make validation itself error (NaN visible
        // parameters); that must not discard the best checkpoint so far.
        let val_nll = match validation_nll(&model, val_set, val_seed) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("epoch {epoch}: validation failed ({e})");
                f64::NAN
            }
        };
        if val_nll.is_finite() && best.as_ref().is_none_or(|(b, _, _)| val_nll < *b) {
            best = Some((val_nll, model.store.clone(), epoch));
        }
        if let Some(out) = log_out.as_mut() {
            let line = EpochLog { epoch, train_loss, val_nll, seconds: t0.elapsed().as_secs_f64() };
            serde_json::to_writer(&mut **out, &line)?;
            writeln!(out)?;
        }
    }

    if let Some((nll, store, epoch)) = best {
        model.store = store;
        model.meta.best_val_nll = Some(nll);
        model.meta.best_epoch = Some(epoch);
    }
    Ok(model)
}

/// Mean per-sample negative ELBO over a dataset, eval-mode, fixed seed.
pub fn validation_nll<S: Scalar>(model: &VaeModel<S>, val: &Dataset, seed: u64) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in (0..val.len()).collect::<Vec<_>>().chunks(256) {
        let xb = val.batch(chunk)?.cast::<S>();
        for e in model.elbo_batch(&xb, seed)? {
            total -= e;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// One optimization step on a batch; returns the mean per-sample loss.
/// Nothing is updated if the loss or any gradient is non-finite.
fn train_step<S: Scalar>(
    model: &mut VaeModel<S>,
    xb: &Tensor4<S>,
    adam: &AdamConfig,
    step: u64,
    eps_seed: u64,
) -> Result<f64> {
    let loss = model.training_loss(xb, eps_seed)?;
    adam_step(&mut model.store, adam, step)?;
    Ok(loss)
}

impl<S: Scalar> VaeModel<S> {
    /// Forward and backward pass of the training objective (mean per-sample
    /// −ELBO) on one batch, leaving parameter gradients in the store without
    /// taking an optimizer step — the hook gradient checks and optimizers
    /// build on. Train-mode batchnorm: batch statistics are used and running
    /// statistics updated, exactly as during training.
    pub fn training_loss(&mut self, xb: &Tensor4<S>, eps_seed: u64) -> Result<f64> {
        let b = xb.batch();
        let scale = 1.0 / b as f64;
        let nz = self.config.nz;

        let (enc_out, enc_caches) = self.encoder.forward(&mut self.store, xb, Mode::Train)?;
        let (mu, lv_raw) = split_latent(&enc_out, nz)?;
        let (lv, gate) = clamp_logvar(&lv_raw);
        let mut rng = ChaCha8Rng::seed_from_u64(eps_seed);
        let eps = gaussian_eps::<S>(mu.shape(), &mut rng);
        let z = sample_z(&mu, &lv, &eps);

        let (dec_out, dec_caches) = self.decoder.forward(&mut self.store, &z, Mode::Train)?;
        let (recon, draw) = recon_ll_grad(self.config.visible, xb, &dec_out, true)?;
        let draw = draw.expect("gradient requested");
        let kl = kl_terms(&mu, &lv);

        let loss = recon.iter().zip(&kl).map(|(r, k)| -r + k).sum::<f64>() * scale;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite batch loss {loss}")));
        }

        // d loss / d raw decoder outputs = −(1/B) · d recon / d raw.
        let neg_scale = S::from_f64_c(-scale);
        let dl_draw = draw.map(|g| g * neg_scale);
        self.store.zero_grads();
        let dz = self.decoder.backward(&mut self.store, &dec_caches, &dl_draw)?;

        // Latent-path gradients: z = μ + e^{lv/2}·ε, KL = ½Σ(μ² + e^lv − 1 − lv).
        let s_scale = S::from_f64_c(scale);
        let half = S::from_f64_c(0.5);
        let mut dmu = dz.clone();
        for (dm, m) in dmu.as_mut_slice().iter_mut().zip(mu.as_slice()) {
            *dm = *dm + s_scale * *m;
        }
        let mut dlv = dz;
        for (((dl, l), e), g) in dlv
            .as_mut_slice()
            .iter_mut()
            .zip(lv.as_slice())
            .zip(eps.as_slice())
            .zip(gate.as_slice())
        {
            let elv = S::from_f64_c(l.to_f64_c().exp());
            let std = S::from_f64_c((0.5 * l.to_f64_c()).exp());
            let through_z = *dl * *e * half * std;
            let through_kl = s_scale * half * (elv - S::one());
            *dl = (through_z + through_kl) * *g;
        }
        let denc = merge_latent_grads(&dmu, &dlv)?;
        self.encoder.backward(&mut self.store, &enc_caches, &denc)?;
        Ok(loss)
    }

    /// Train-mode decoder forward on latent codes `z`, plus the gradient of
    /// the scalar `Σ dout ⊙ output` with respect to `z` — the hook
    /// finite-difference verification of the decode path builds on. Updates
    /// batchnorm running statistics as a side effect (train mode).
    pub fn decode_with_grad(
        &mut self,
        z: &Tensor4<S>,
        dout: &Tensor4<S>,
    ) -> Result<(Tensor4<S>, Tensor4<S>)> {
        let (out, caches) = self.decoder.forward(&mut self.store, z, Mode::Train)?;
        if dout.shape() != out.shape() {
            return Err(Error::shape(format!(
                "dout {:?} does not match decoder output {:?}",
                dout.shape(),
                out.shape()
            )));
        }
        self.store.zero_grads();
        let dz = self.decoder.backward(&mut self.store, &caches, dout)?;
        Ok((out, dz))
    }
}
