//! Shared oracles and helpers for integration tests.
//!
//! Everything here is deliberately written the slow, obvious way —
//! nested loops and scalar arithmetic — so library results are checked
//! against an independent construction rather than against themselves.

#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vaeood::nn::{Padding, Tensor4};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform(-1,1) tensor for test inputs.
pub fn rand_tensor(shape: [usize; 4], rng: &mut impl Rng) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

/// Mixed absolute/relative closeness: |a−b| ≤ tol·max(|a|,|b|,floor).
pub fn close(a: f64, b: f64, tol: f64, floor: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(floor)
}

pub fn assert_close(a: f64, b: f64, tol: f64, floor: f64, label: &str) {
    assert!(
        close(a, b, tol, floor),
        "{label}: {a} vs {b} (|Δ|={}, tol={tol}, floor={floor})",
        (a - b).abs()
    );
}

/// Output size and leading pad under the library's stated conventions,
/// derived here from first principles rather than imported.
pub fn out_and_pad(n: usize, k: usize, s: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Same => {
            let out = (n + s - 1) / s;
            let total = ((out - 1) * s + k).saturating_sub(n);
            (out, total / 2)
        }
        Padding::Valid => ((n - k) / s + 1, 0),
    }
}

/// Direct six-loop convolution, zero-padded, NHWC / [kh,kw,cin,cout].
pub fn naive_conv2d(
    x: &Tensor4<f64>,
    kernel: &Tensor4<f64>,
    bias: Option<&Tensor4<f64>>,
    stride: usize,
    padding: Padding,
) -> Tensor4<f64> {
    let [n, h, w, cin] = x.shape();
    let [kh, kw, kcin, cout] = kernel.shape();
    assert_eq!(cin, kcin);
    let (ho, pad_top) = out_and_pad(h, kh, stride, padding);
    let (wo, pad_left) = out_and_pad(w, kw, stride, padding);
    let mut y = Tensor4::zeros([n, ho, wo, cout]);
    for b in 0..n {
        for oh in 0..ho {
            for ow in 0..wo {
                for co in 0..cout {
                    let mut acc = bias.map_or(0.0, |bt| bt.as_slice()[co]);
                    for dh in 0..kh {
                        for dw in 0..kw {
                            let ih = (oh * stride + dh) as isize - pad_top as isize;
                            let iw = (ow * stride + dw) as isize - pad_left as isize;
                            if ih < 0 || iw < 0 || ih >= h as isize || iw >= w as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                acc += x.at(b, ih as usize, iw as usize, ci)
                                    * kernel.at(dh, dw, ci, co);
                            }
                        }
                    }
                    *y.at_mut(b, oh, ow, co) = acc;
                }
            }
        }
    }
    y
}

/// Dense matrix of a convolution as a linear map (bias-free): row p = flat
/// output index, column q = flat input index. Built by pushing basis vectors
/// through [`naive_conv2d`].
pub fn conv_dense_matrix(
    in_shape: [usize; 4],
    kernel: &Tensor4<f64>,
    stride: usize,
    padding: Padding,
) -> Vec<Vec<f64>> {
    let in_dim: usize = in_shape.iter().product();
    let mut cols = Vec::with_capacity(in_dim);
    for q in 0..in_dim {
        let mut basis = Tensor4::zeros(in_shape);
        basis.as_mut_slice()[q] = 1.0;
        cols.push(naive_conv2d(&basis, kernel, None, stride, padding));
    }
    let out_dim = cols[0].numel();
    (0..out_dim)
        .map(|p| (0..in_dim).map(|q| cols[q].as_slice()[p]).collect())
        .collect()
}

pub fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn mat_transpose_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let cols = m[0].len();
    let mut out = vec![0.0; cols];
    for (row, &vi) in m.iter().zip(v) {
        for (o, &r) in out.iter_mut().zip(row) {
            *o += r * vi;
        }
    }
    out
}

/// Central finite differences of a scalar functional at `at`, compared
/// elementwise against `analytic`. `f` must evaluate the functional at an
/// arbitrary replacement for `at`.
pub fn check_grad_against_fd(
    f: &mut dyn FnMut(&Tensor4<f64>) -> f64,
    at: &Tensor4<f64>,
    analytic: &Tensor4<f64>,
    h: f64,
    tol: f64,
    label: &str,
) {
    assert_eq!(at.shape(), analytic.shape(), "{label}: shape mismatch");
    let mut probe = at.clone();
    for i in 0..at.numel() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + h;
        let up = f(&probe);
        probe.as_mut_slice()[i] = orig - h;
        let down = f(&probe);
        probe.as_mut_slice()[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let an = analytic.as_slice()[i];
        assert!(
            close(an, fd, tol, 1e-2),
            "{label}[{i}]: analytic {an} vs finite-difference {fd} (|Δ|={})",
            (an - fd).abs()
        );
    }
}
