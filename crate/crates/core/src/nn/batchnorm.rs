//! Batch normalization over the channel axis of NHWC tensors.

use crate::error::{Error, Result};
use crate::nn::network::Mode;
use crate::nn::Tensor4;
use crate::scalar::Scalar;

/// EMA momentum for running statistics: `running ← m·running + (1−m)·batch`.
pub const BN_MOMENTUM: f64 = 0.99;
/// Variance floor added inside the square root.
pub const BN_EPS: f64 = 1e-3;

/// Everything the backward pass needs: the normalized activations, the
/// per-channel inverse standard deviation that produced them, and the mode.
#[derive(Debug)]
pub struct BnCache<S> {
    xhat: Tensor4<S>,
    inv_std: Vec<S>,
    mode: Mode,
}

/// Forward batchnorm. In train mode the batch statistics (per-channel mean
/// and *biased* variance over N·H·W elements) normalize the input and update
/// the running buffers in place; in eval mode the running buffers are used
/// and nothing is mutated.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward<S: Scalar>(
    x: &Tensor4<S>,
    gamma: &Tensor4<S>,
    beta: &Tensor4<S>,
    running_mean: &mut Tensor4<S>,
    running_var: &mut Tensor4<S>,
    momentum: f64,
    eps: f64,
    mode: Mode,
) -> Result<(Tensor4<S>, BnCache<S>)> {
    let c = x.channels();
    for (name, t) in [
        ("gamma", gamma),
        ("beta", beta),
        ("running_mean", running_mean),
        ("running_var", running_var),
    ] {
        if t.numel() != c {
            return Err(Error::shape(format!(
                "batchnorm {name} has {} entries but input has {c} channels",
                t.numel()
            )));
        }
    }
    let m_count = x.batch() * x.height() * x.width();
    let eps_s = S::from_f64_c(eps);

    let (mean, var) = match mode {
        Mode::Train => {
            if m_count == 0 {
                return Err(Error::shape("batchnorm train mode on an empty batch"));
            }
            let mut mean = vec![S::zero(); c];
            let mut var = vec![S::zero(); c];
            for chunk in x.as_slice().chunks_exact(c) {
                for (acc, &v) in mean.iter_mut().zip(chunk) {
                    *acc += v;
                }
            }
            let inv_m = S::from_f64_c(1.0 / m_count as f64);
            for v in mean.iter_mut() {
                *v *= inv_m;
            }
            for chunk in x.as_slice().chunks_exact(c) {
                for ((acc, &v), &mu) in var.iter_mut().zip(chunk).zip(&mean) {
                    let d = v - mu;
                    *acc += d * d;
                }
            }
            for v in var.iter_mut() {
                *v *= inv_m;
            }
            // EMA update of the running buffers.
            let mom = S::from_f64_c(momentum);
            let one_minus = S::from_f64_c(1.0 - momentum);
            for (r, &b) in running_mean.as_mut_slice().iter_mut().zip(&mean) {
                *r = mom * *r + one_minus * b;
            }
            for (r, &b) in running_var.as_mut_slice().iter_mut().zip(&var) {
                *r = mom * *r + one_minus * b;
            }
            (mean, var)
        }
        Mode::Eval => (
            running_mean.as_slice().to_vec(),
            running_var.as_slice().to_vec(),
        ),
    };

    let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps_s).sqrt()).collect();
    let mut xhat = x.clone();
    for chunk in xhat.as_mut_slice().chunks_exact_mut(c) {
        for ((v, &mu), &is) in chunk.iter_mut().zip(&mean).zip(&inv_std) {
            *v = (*v - mu) * is;
        }
    }
    let mut y = xhat.clone();
    let gs = gamma.as_slice();
    let bs = beta.as_slice();
    for chunk in y.as_mut_slice().chunks_exact_mut(c) {
        for ((v, &g), &b) in chunk.iter_mut().zip(gs).zip(bs) {
            *v = g * *v + b;
        }
    }
    Ok((y, BnCache { xhat, inv_std, mode }))
}

/// Gradients of one batchnorm layer.
#[derive(Debug)]
pub struct BnGrads<S> {
    pub dx: Tensor4<S>,
    pub dgamma: Tensor4<S>,
    pub dbeta: Tensor4<S>,
}

/// Reverse-mode batchnorm. Train mode differentiates through the batch
/// statistics; eval mode treats the running statistics as constants.
pub fn batchnorm_backward<S: Scalar>(
    cache: &BnCache<S>,
    gamma: &Tensor4<S>,
    dy: &Tensor4<S>,
) -> Result<BnGrads<S>> {
    let c = dy.channels();
    if cache.xhat.shape() != dy.shape() {
        return Err(Error::shape(format!(
            "batchnorm backward: dy shape {:?} does not match cached {:?}",
            dy.shape(),
            cache.xhat.shape()
        )));
    }
    let m_count = dy.batch() * dy.height() * dy.width();

    let mut dgamma = vec![S::zero(); c];
    let mut dbeta = vec![S::zero(); c];
    for (dyc, xc) in dy
        .as_slice()
        .chunks_exact(c)
        .zip(cache.xhat.as_slice().chunks_exact(c))
    {
        for i in 0..c {
            dgamma[i] += dyc[i] * xc[i];
            dbeta[i] += dyc[i];
        }
    }

    let gs = gamma.as_slice();
    let mut dx = Tensor4::zeros(dy.shape());
    match cache.mode {
        Mode::Eval => {
            for (dxc, dyc) in dx
                .as_mut_slice()
                .chunks_exact_mut(c)
                .zip(dy.as_slice().chunks_exact(c))
            {
                for i in 0..c {
                    dxc[i] = dyc[i] * gs[i] * cache.inv_std[i];
                }
            }
        }
        Mode::Train => {
            // dx = γ·inv_std/M · (M·dy − Σdy − x̂·Σ(dy·x̂))
            let inv_m = S::from_f64_c(1.0 / m_count as f64);
            let m_s = S::from_f64_c(m_count as f64);
            for ((dxc, dyc), xc) in dx
                .as_mut_slice()
                .chunks_exact_mut(c)
                .zip(dy.as_slice().chunks_exact(c))
                .zip(cache.xhat.as_slice().chunks_exact(c))
            {
                for i in 0..c {
                    dxc[i] = gs[i]
                        * cache.inv_std[i]
                        * inv_m
                        * (m_s * dyc[i] - dbeta[i] - xc[i] * dgamma[i]);
                }
            }
        }
    }
    Ok(BnGrads {
        dx,
        dgamma: Tensor4::new([1, 1, 1, c], dgamma)?,
        dbeta: Tensor4::new([1, 1, 1, c], dbeta)?,
    })
}
