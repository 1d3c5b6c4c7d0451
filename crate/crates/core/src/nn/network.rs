//! Sequential layer stacks with explicit forward caches and backprop.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::batchnorm::{batchnorm_backward, batchnorm_forward, BnCache, BN_EPS, BN_MOMENTUM};
use crate::nn::conv::{conv2d, conv2d_backward, deconv2d, deconv2d_backward, Padding};
use crate::nn::init::xavier_uniform;
use crate::nn::ops::{relu, relu_backward, sigmoid, sigmoid_backward};
use crate::nn::params::ParamStore;
use crate::nn::Tensor4;
use crate::scalar::Scalar;

/// Whether batchnorm uses batch statistics (and updates running buffers) or
/// frozen running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One layer of a sequential stack. Parameters live in a [`ParamStore`] under
/// `<name>.kernel` / `<name>.bias` (conv, deconv) or `<name>.gamma` /
/// `<name>.beta` / `<name>.running_mean` / `<name>.running_var` (batchnorm).
#[derive(Clone, Debug)]
pub enum Layer {
    Conv {
        name: String,
        stride: usize,
        padding: Padding,
    },
    Deconv {
        name: String,
        stride: usize,
        padding: Padding,
    },
    BatchNorm {
        name: String,
        momentum: f64,
        eps: f64,
    },
    Relu,
    Sigmoid,
}

impl Layer {
    /// Registers an Xavier-initialized conv kernel and zero bias, returning
    /// the layer that references them.
    #[allow(clippy::too_many_arguments)]
    pub fn conv<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        name: &str,
        k: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        store.insert_trainable(&format!("{name}.kernel"), xavier_uniform([k, k, cin, cout], rng))?;
        store.insert_trainable(&format!("{name}.bias"), Tensor4::zeros([1, 1, 1, cout]))?;
        Ok(Layer::Conv {
            name: name.to_string(),
            stride,
            padding,
        })
    }

    /// As [`Layer::conv`], with the transposed-conv kernel layout
    /// `[k, k, cout, cin]`.
    #[allow(clippy::too_many_arguments)]
    pub fn deconv<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        name: &str,
        k: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        store.insert_trainable(&format!("{name}.kernel"), xavier_uniform([k, k, cout, cin], rng))?;
        store.insert_trainable(&format!("{name}.bias"), Tensor4::zeros([1, 1, 1, cout]))?;
        Ok(Layer::Deconv {
            name: name.to_string(),
            stride,
            padding,
        })
    }

    /// Registers γ=1, β=0, running mean 0, running variance 1.
    pub fn batchnorm<S: Scalar>(store: &mut ParamStore<S>, name: &str, c: usize) -> Result<Self> {
        store.insert_trainable(&format!("{name}.gamma"), Tensor4::full([1, 1, 1, c], S::one()))?;
        store.insert_trainable(&format!("{name}.beta"), Tensor4::zeros([1, 1, 1, c]))?;
        store.insert_buffer(&format!("{name}.running_mean"), Tensor4::zeros([1, 1, 1, c]))?;
        store.insert_buffer(&format!("{name}.running_var"), Tensor4::full([1, 1, 1, c], S::one()))?;
        Ok(Layer::BatchNorm {
            name: name.to_string(),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        })
    }
}

/// Forward-pass state one layer keeps for its backward pass.
pub enum LayerCache<S> {
    Conv { x: Tensor4<S> },
    Deconv { x: Tensor4<S> },
    BatchNorm(BnCache<S>),
    Relu { x: Tensor4<S> },
    Sigmoid { y: Tensor4<S> },
}

/// A sequential stack of layers acting on one [`ParamStore`].
#[derive(Clone, Debug, Default)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    /// Forward pass that records per-layer caches for [`Network::backward`].
    /// Train-mode batchnorm mutates running statistics, hence `&mut` store.
    /// Every layer output is checked finite; a NaN/Inf aborts the batch.
    pub fn forward<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        x: &Tensor4<S>,
        mode: Mode,
    ) -> Result<(Tensor4<S>, Vec<LayerCache<S>>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (next, cache) = self.forward_layer(store, layer, cur, mode)?;
            caches.push(cache);
            cur = next;
        }
        Ok((cur, caches))
    }

    /// Cache-free eval-mode forward on a frozen store (no mutation), safe to
    /// call from multiple threads.
    pub fn forward_eval<S: Scalar>(&self, store: &ParamStore<S>, x: &Tensor4<S>) -> Result<Tensor4<S>> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = match layer {
                Layer::Conv { name, stride, padding } => conv2d(
                    &cur,
                    store.value(&format!("{name}.kernel"))?,
                    Some(store.value(&format!("{name}.bias"))?),
                    *stride,
                    *padding,
                )?,
                Layer::Deconv { name, stride, padding } => deconv2d(
                    &cur,
                    store.value(&format!("{name}.kernel"))?,
                    Some(store.value(&format!("{name}.bias"))?),
                    *stride,
                    *padding,
                )?,
                Layer::BatchNorm { name, momentum, eps } => {
                    // Eval mode leaves the buffers untouched; clone them so the
                    // store can stay shared/immutable.
                    let mut rm = store.value(&format!("{name}.running_mean"))?.clone();
                    let mut rv = store.value(&format!("{name}.running_var"))?.clone();
                    let (y, _) = batchnorm_forward(
                        &cur,
                        store.value(&format!("{name}.gamma"))?,
                        store.value(&format!("{name}.beta"))?,
                        &mut rm,
                        &mut rv,
                        *momentum,
                        *eps,
                        Mode::Eval,
                    )?;
                    y
                }
                Layer::Relu => relu(&cur),
                Layer::Sigmoid => sigmoid(&cur),
            };
            cur.check_finite(&layer_label(layer))?;
        }
        Ok(cur)
    }

    fn forward_layer<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        layer: &Layer,
        x: Tensor4<S>,
        mode: Mode,
    ) -> Result<(Tensor4<S>, LayerCache<S>)> {
        let (y, cache) = match layer {
            Layer::Conv { name, stride, padding } => {
                let y = conv2d(
                    &x,
                    store.value(&format!("{name}.kernel"))?,
                    Some(store.value(&format!("{name}.bias"))?),
                    *stride,
                    *padding,
                )?;
                (y, LayerCache::Conv { x })
            }
            Layer::Deconv { name, stride, padding } => {
                let y = deconv2d(
                    &x,
                    store.value(&format!("{name}.kernel"))?,
                    Some(store.value(&format!("{name}.bias"))?),
                    *stride,
                    *padding,
                )?;
                (y, LayerCache::Deconv { x })
            }
            Layer::BatchNorm { name, momentum, eps } => {
                let gamma = store.value(&format!("{name}.gamma"))?.clone();
                let beta = store.value(&format!("{name}.beta"))?.clone();
                match mode {
                    Mode::Train => {
                        // Batch statistics update the running buffers in place.
                        let mut rm = store.value(&format!("{name}.running_mean"))?.clone();
                        let mut rv = store.value(&format!("{name}.running_var"))?.clone();
                        let (y, cache) = batchnorm_forward(
                            &x, &gamma, &beta, &mut rm, &mut rv, *momentum, *eps, mode,
                        )?;
                        *store.value_mut(&format!("{name}.running_mean"))? = rm;
                        *store.value_mut(&format!("{name}.running_var"))? = rv;
                        (y, LayerCache::BatchNorm(cache))
                    }
                    Mode::Eval => {
                        let mut rm = store.value(&format!("{name}.running_mean"))?.clone();
                        let mut rv = store.value(&format!("{name}.running_var"))?.clone();
                        let (y, cache) = batchnorm_forward(
                            &x, &gamma, &beta, &mut rm, &mut rv, *momentum, *eps, mode,
                        )?;
                        (y, LayerCache::BatchNorm(cache))
                    }
                }
            }
            Layer::Relu => {
                let y = relu(&x);
                (y, LayerCache::Relu { x })
            }
            Layer::Sigmoid => {
                let y = sigmoid(&x);
                (y.clone(), LayerCache::Sigmoid { y })
            }
        };
        y.check_finite(&layer_label(layer))?;
        Ok((y, cache))
    }

    /// Backward pass. Accumulates parameter gradients into the store and
    /// returns the gradient with respect to the stack input.
    pub fn backward<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        caches: &[LayerCache<S>],
        dy: &Tensor4<S>,
    ) -> Result<Tensor4<S>> {
        if caches.len() != self.layers.len() {
            return Err(Error::Config(format!(
                "backward got {} caches for {} layers",
                caches.len(),
                self.layers.len()
            )));
        }
        let mut grad = dy.clone();
        for (layer, cache) in self.layers.iter().zip(caches.iter()).rev() {
            grad = match (layer, cache) {
                (Layer::Conv { name, stride, padding }, LayerCache::Conv { x }) => {
                    let kernel = store.value(&format!("{name}.kernel"))?;
                    let grads = conv2d_backward(x, kernel, *stride, *padding, &grad)?;
                    store.grad_add(&format!("{name}.kernel"), &grads.dkernel)?;
                    store.grad_add(&format!("{name}.bias"), &grads.dbias)?;
                    grads.dx
                }
                (Layer::Deconv { name, stride, padding }, LayerCache::Deconv { x }) => {
                    let kernel = store.value(&format!("{name}.kernel"))?;
                    let grads = deconv2d_backward(x, kernel, *stride, *padding, &grad)?;
                    store.grad_add(&format!("{name}.kernel"), &grads.dkernel)?;
                    store.grad_add(&format!("{name}.bias"), &grads.dbias)?;
                    grads.dx
                }
                (Layer::BatchNorm { name, .. }, LayerCache::BatchNorm(cache)) => {
                    let gamma = store.value(&format!("{name}.gamma"))?;
                    let grads = batchnorm_backward(cache, gamma, &grad)?;
                    store.grad_add(&format!("{name}.gamma"), &grads.dgamma)?;
                    store.grad_add(&format!("{name}.beta"), &grads.dbeta)?;
                    grads.dx
                }
                (Layer::Relu, LayerCache::Relu { x }) => relu_backward(x, &grad),
                (Layer::Sigmoid, LayerCache::Sigmoid { y }) => sigmoid_backward(y, &grad),
                _ => {
                    return Err(Error::Config(
                        "layer/cache mismatch in backward pass".into(),
                    ))
                }
            };
        }
        Ok(grad)
    }
}

fn layer_label(layer: &Layer) -> String {
    match layer {
        Layer::Conv { name, .. } => format!("conv '{name}'"),
        Layer::Deconv { name, .. } => format!("deconv '{name}'"),
        Layer::BatchNorm { name, .. } => format!("batchnorm '{name}'"),
        Layer::Relu => "relu".into(),
        Layer::Sigmoid => "sigmoid".into(),
    }
}
