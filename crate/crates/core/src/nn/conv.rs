//! Convolution and transposed convolution via im2col + GEMM.
//!
//! Layouts follow the NHWC convention throughout:
//! - conv kernels are `[kh, kw, c_in, c_out]`;
//! - deconv kernels are `[kh, kw, c_out, c_in]` (the kernel of the conv whose
//!   transpose the deconv is).
//!
//! A transposed convolution is implemented literally as the transpose of the
//! corresponding convolution as a linear map: conv forward = `im2col` then
//! GEMM, so deconv forward = GEMM against the transposed kernel matrix then
//! `col2im` scatter-add. This makes conv/deconv exact adjoints by
//! construction, which the dense-matrix oracle test checks.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::nn::Tensor4;
use crate::scalar::Scalar;

/// Zero-padding convention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// `out = ceil(in / stride)`; total pad `max((out−1)·s + k − in, 0)`,
    /// split with the smaller half leading. For the 4×4/stride-2 layers this
    /// pads one pixel on each side and halves the spatial size (32→16→8→4).
    Same,
    /// No padding; `out = (in − k)/s + 1`. Used by the 4×4→1×1 encoder head
    /// and the 1×1→4×4 decoder stem.
    Valid,
}

impl Padding {
    fn out_dim(self, n: usize, k: usize, s: usize) -> Result<usize> {
        match self {
            Padding::Same => Ok(n.div_ceil(s)),
            Padding::Valid => {
                if n < k {
                    Err(Error::shape(format!(
                        "valid padding needs input ≥ kernel, got input {n} < kernel {k}"
                    )))
                } else {
                    Ok((n - k) / s + 1)
                }
            }
        }
    }

    fn pad_before(self, n: usize, k: usize, s: usize) -> Result<usize> {
        match self {
            Padding::Same => {
                let out = self.out_dim(n, k, s)?;
                let total = ((out - 1) * s + k).saturating_sub(n);
                Ok(total / 2)
            }
            Padding::Valid => Ok(0),
        }
    }
}

/// Resolved geometry of one convolution: every size needed by im2col/col2im.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
}

impl ConvGeom {
    fn resolve(
        input_shape: [usize; 4],
        kh: usize,
        kw: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("stride must be ≥ 1".into()));
        }
        let [n, h, w, cin] = input_shape;
        Ok(Self {
            n,
            h,
            w,
            cin,
            kh,
            kw,
            ho: padding.out_dim(h, kh, stride)?,
            wo: padding.out_dim(w, kw, stride)?,
            stride,
            pad_top: padding.pad_before(h, kh, stride)?,
            pad_left: padding.pad_before(w, kw, stride)?,
        })
    }

    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn rows(&self) -> usize {
        self.n * self.ho * self.wo
    }
}

/// Gathers sliding-window patches into a `[n·ho·wo, kh·kw·cin]` matrix.
/// Out-of-bounds taps read as zero (zero padding).
fn im2col<S: Scalar>(x: &Tensor4<S>, g: &ConvGeom) -> Array2<S> {
    let mut cols = Array2::<S>::zeros((g.rows(), g.patch_len()));
    let xs = x.as_slice();
    let (h, w, cin) = (g.h, g.w, g.cin);
    let mut row = 0usize;
    for n in 0..g.n {
        let base_n = n * h * w * cin;
        for oh in 0..g.ho {
            let ih0 = (oh * g.stride) as isize - g.pad_top as isize;
            for ow in 0..g.wo {
                let iw0 = (ow * g.stride) as isize - g.pad_left as isize;
                let mut col_row = cols.row_mut(row);
                let dst = col_row.as_slice_mut().expect("row of standard-layout array");
                for dh in 0..g.kh {
                    let ih = ih0 + dh as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let base_h = base_n + ih as usize * w * cin;
                    let dst_h = dh * g.kw * cin;
                    for dw in 0..g.kw {
                        let iw = iw0 + dw as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        let src = base_h + iw as usize * cin;
                        let dst_w = dst_h + dw * cin;
                        dst[dst_w..dst_w + cin].copy_from_slice(&xs[src..src + cin]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patch rows back into an input-shaped
/// tensor. Padding taps are dropped.
fn col2im_add<S: Scalar>(cols: &Array2<S>, g: &ConvGeom) -> Tensor4<S> {
    let mut x = Tensor4::<S>::zeros([g.n, g.h, g.w, g.cin]);
    let xs = x.as_mut_slice();
    let (h, w, cin) = (g.h, g.w, g.cin);
    let mut row = 0usize;
    for n in 0..g.n {
        let base_n = n * h * w * cin;
        for oh in 0..g.ho {
            let ih0 = (oh * g.stride) as isize - g.pad_top as isize;
            for ow in 0..g.wo {
                let iw0 = (ow * g.stride) as isize - g.pad_left as isize;
                let col_row = cols.row(row);
                let src_row = col_row.as_slice().expect("row of standard-layout array");
                for dh in 0..g.kh {
                    let ih = ih0 + dh as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let base_h = base_n + ih as usize * w * cin;
                    let src_h = dh * g.kw * cin;
                    for dw in 0..g.kw {
                        let iw = iw0 + dw as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        let dst = base_h + iw as usize * cin;
                        let src_w = src_h + dw * cin;
                        for c in 0..cin {
                            xs[dst + c] += src_row[src_w + c];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    x
}

fn kernel_matrix<S: Scalar>(kernel: &Tensor4<S>) -> ArrayView2<'_, S> {
    let [kh, kw, a, b] = kernel.shape();
    ArrayView2::from_shape((kh * kw * a, b), kernel.as_slice())
        .expect("kernel storage is contiguous row-major")
}

/// `a · b` into a freshly allocated row-major array. `Dot::dot` picks the
/// output memory order from its operands' strides, which downstream code
/// must not depend on; this pins it.
fn gemm<S: Scalar>(a: &ArrayView2<'_, S>, b: &ArrayView2<'_, S>) -> Array2<S> {
    let mut out = Array2::<S>::zeros((a.nrows(), b.ncols()));
    general_mat_mul(S::one(), a, b, S::zero(), &mut out);
    out
}

fn raw_vec<S: Scalar>(a: Array2<S>) -> Vec<S> {
    // All callers pass arrays allocated C-order by `gemm`, offset 0.
    a.into_raw_vec_and_offset().0
}

/// 2-D convolution. `kernel` is `[kh, kw, c_in, c_out]`; `bias`, when
/// present, has length `c_out`.
pub fn conv2d<S: Scalar>(
    x: &Tensor4<S>,
    kernel: &Tensor4<S>,
    bias: Option<&Tensor4<S>>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor4<S>> {
    let [kh, kw, cin, cout] = kernel.shape();
    if x.channels() != cin {
        return Err(Error::shape(format!(
            "conv2d: input has {} channels but kernel expects {cin}",
            x.channels()
        )));
    }
    let g = ConvGeom::resolve(x.shape(), kh, kw, stride, padding)?;
    let cols = im2col(x, &g);
    let mut y = gemm(&cols.view(), &kernel_matrix(kernel));
    if let Some(b) = bias {
        add_channel_bias(&mut y, b, cout)?;
    }
    Tensor4::new([g.n, g.ho, g.wo, cout], raw_vec(y))
}

fn add_channel_bias<S: Scalar>(y: &mut Array2<S>, bias: &Tensor4<S>, cout: usize) -> Result<()> {
    if bias.numel() != cout {
        return Err(Error::shape(format!(
            "bias length {} does not match {cout} output channels",
            bias.numel()
        )));
    }
    let b = bias.as_slice();
    for mut row in y.rows_mut() {
        let row = row.as_slice_mut().expect("standard layout");
        for (dst, &bv) in row.iter_mut().zip(b) {
            *dst += bv;
        }
    }
    Ok(())
}

/// Gradients of a conv or deconv layer with respect to its inputs.
#[derive(Debug)]
pub struct ConvGrads<S> {
    pub dx: Tensor4<S>,
    pub dkernel: Tensor4<S>,
    /// Shaped `[1,1,1,c_out]`, matching the stored bias parameter.
    pub dbias: Tensor4<S>,
}

/// Reverse-mode gradients for [`conv2d`] given upstream `dy`.
pub fn conv2d_backward<S: Scalar>(
    x: &Tensor4<S>,
    kernel: &Tensor4<S>,
    stride: usize,
    padding: Padding,
    dy: &Tensor4<S>,
) -> Result<ConvGrads<S>> {
    let [kh, kw, cin, cout] = kernel.shape();
    if x.channels() != cin {
        return Err(Error::shape(format!(
            "conv2d_backward: input has {} channels but kernel expects {cin}",
            x.channels()
        )));
    }
    let g = ConvGeom::resolve(x.shape(), kh, kw, stride, padding)?;
    if dy.shape() != [g.n, g.ho, g.wo, cout] {
        return Err(Error::shape(format!(
            "conv2d_backward: dy shape {:?} does not match output shape {:?}",
            dy.shape(),
            [g.n, g.ho, g.wo, cout]
        )));
    }
    let cols = im2col(x, &g);
    let dy_mat = ArrayView2::from_shape((g.rows(), cout), dy.as_slice())
        .expect("dy storage is contiguous row-major");

    let dkernel = Tensor4::new([kh, kw, cin, cout], raw_vec(gemm(&cols.t(), &dy_mat)))?;
    let dbias = Tensor4::new([1, 1, 1, cout], column_sums(&dy_mat))?;
    let dcols = gemm(&dy_mat, &kernel_matrix(kernel).t());
    let dx = col2im_add(&dcols, &g);
    Ok(ConvGrads { dx, dkernel, dbias })
}

fn column_sums<S: Scalar>(m: &ArrayView2<'_, S>) -> Vec<S> {
    let mut sums = vec![S::zero(); m.ncols()];
    for row in m.rows() {
        let row = row.as_slice().expect("standard layout");
        for (dst, &v) in sums.iter_mut().zip(row) {
            *dst += v;
        }
    }
    sums
}

/// Output spatial size of a transposed convolution: the unique input size of
/// the corresponding forward conv. `Same` with stride s maps h → h·s; `Valid`
/// maps h → (h−1)·s + k.
pub fn deconv_output_hw(
    in_hw: (usize, usize),
    k: (usize, usize),
    stride: usize,
    padding: Padding,
) -> (usize, usize) {
    match padding {
        Padding::Same => (in_hw.0 * stride, in_hw.1 * stride),
        Padding::Valid => ((in_hw.0 - 1) * stride + k.0, (in_hw.1 - 1) * stride + k.1),
    }
}

/// Geometry of the conv whose transpose this deconv is: that conv maps the
/// deconv *output* space to the deconv *input* space.
fn deconv_geom<S: Scalar>(
    x: &Tensor4<S>,
    kernel: &Tensor4<S>,
    stride: usize,
    padding: Padding,
) -> Result<(ConvGeom, usize, usize)> {
    let [kh, kw, cout, cin] = kernel.shape();
    if x.channels() != cin {
        return Err(Error::shape(format!(
            "deconv2d: input has {} channels but kernel expects {cin}",
            x.channels()
        )));
    }
    let (ho, wo) = deconv_output_hw((x.height(), x.width()), (kh, kw), stride, padding);
    let g = ConvGeom::resolve([x.batch(), ho, wo, cout], kh, kw, stride, padding)?;
    if (g.ho, g.wo) != (x.height(), x.width()) {
        return Err(Error::shape(format!(
            "deconv2d: no conv with stride {stride} maps {}×{} back to {}×{}",
            ho,
            wo,
            x.height(),
            x.width()
        )));
    }
    Ok((g, cout, cin))
}

/// Transposed 2-D convolution. `kernel` is `[kh, kw, c_out, c_in]`; the
/// output spatial size follows [`deconv_output_hw`].
pub fn deconv2d<S: Scalar>(
    x: &Tensor4<S>,
    kernel: &Tensor4<S>,
    bias: Option<&Tensor4<S>>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor4<S>> {
    let (g, cout, cin) = deconv_geom(x, kernel, stride, padding)?;
    let x_mat = ArrayView2::from_shape((g.rows(), cin), x.as_slice())
        .expect("input storage is contiguous row-major");
    let cols = gemm(&x_mat, &kernel_matrix(kernel).t());
    let mut y = col2im_add(&cols, &g);
    if let Some(b) = bias {
        if b.numel() != cout {
            return Err(Error::shape(format!(
                "bias length {} does not match {cout} output channels",
                b.numel()
            )));
        }
        let bs = b.as_slice();
        for chunk in y.as_mut_slice().chunks_mut(cout) {
            for (dst, &bv) in chunk.iter_mut().zip(bs) {
                *dst += bv;
            }
        }
    }
    Ok(y)
}

/// Reverse-mode gradients for [`deconv2d`] given upstream `dy`.
pub fn deconv2d_backward<S: Scalar>(
    x: &Tensor4<S>,
    kernel: &Tensor4<S>,
    stride: usize,
    padding: Padding,
    dy: &Tensor4<S>,
) -> Result<ConvGrads<S>> {
    let (g, cout, cin) = deconv_geom(x, kernel, stride, padding)?;
    let [kh, kw, _, _] = kernel.shape();
    if dy.shape() != [g.n, g.h, g.w, cout] {
        return Err(Error::shape(format!(
            "deconv2d_backward: dy shape {:?} does not match output shape {:?}",
            dy.shape(),
            [g.n, g.h, g.w, cout]
        )));
    }
    // dL/dx is the forward conv applied to dy; dL/dkernel pairs dy patches
    // with the deconv input.
    let dy_cols = im2col(dy, &g);
    let x_mat = ArrayView2::from_shape((g.rows(), cin), x.as_slice())
        .expect("input storage is contiguous row-major");

    let dx = Tensor4::new(
        [g.n, g.ho, g.wo, cin],
        raw_vec(gemm(&dy_cols.view(), &kernel_matrix(kernel))),
    )?;
    let dkernel = Tensor4::new([kh, kw, cout, cin], raw_vec(gemm(&dy_cols.t(), &x_mat)))?;

    let mut dbias = vec![S::zero(); cout];
    for chunk in dy.as_slice().chunks(cout) {
        for (dst, &v) in dbias.iter_mut().zip(chunk) {
            *dst += v;
        }
    }
    Ok(ConvGrads {
        dx,
        dkernel,
        dbias: Tensor4::new([1, 1, 1, cout], dbias)?,
    })
}
