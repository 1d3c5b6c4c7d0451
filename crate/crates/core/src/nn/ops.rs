//! Elementwise activations with explicit backward passes.

use crate::nn::Tensor4;
use crate::scalar::Scalar;

pub fn relu<S: Scalar>(x: &Tensor4<S>) -> Tensor4<S> {
    x.map(|v| if v > S::zero() { v } else { S::zero() })
}

/// `dx = dy · 1[x > 0]`, taking the forward *input* as the gate.
pub fn relu_backward<S: Scalar>(x: &Tensor4<S>, dy: &Tensor4<S>) -> Tensor4<S> {
    debug_assert_eq!(x.shape(), dy.shape());
    let mut dx = dy.clone();
    for (d, &v) in dx.as_mut_slice().iter_mut().zip(x.as_slice()) {
        if v <= S::zero() {
            *d = S::zero();
        }
    }
    dx
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid<S: Scalar>(x: &Tensor4<S>) -> Tensor4<S> {
    x.map(|v| {
        if v >= S::zero() {
            S::one() / (S::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (S::one() + e)
        }
    })
}

/// `dx = dy · y·(1−y)`, taking the forward *output* `y`.
pub fn sigmoid_backward<S: Scalar>(y: &Tensor4<S>, dy: &Tensor4<S>) -> Tensor4<S> {
    debug_assert_eq!(y.shape(), dy.shape());
    let mut dx = dy.clone();
    for (d, &v) in dx.as_mut_slice().iter_mut().zip(y.as_slice()) {
        *d = *d * v * (S::one() - v);
    }
    dx
}
