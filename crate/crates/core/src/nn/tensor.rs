//! Dense 4-D tensor in NHWC layout.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A dense rank-4 tensor with shape `[batch, height, width, channels]` and
/// row-major (NHWC) storage.
///
/// Invariant: `data.len() == n * h * w * c` at all times.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<S> {
    shape: [usize; 4],
    data: Vec<S>,
}

impl<S: Scalar> Tensor4<S> {
    /// Wraps existing data; rejects a length/shape mismatch.
    pub fn new(shape: [usize; 4], data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::shape(format!(
                "tensor data length {} does not match shape {:?} (expected {})",
                data.len(),
                shape,
                numel
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape,
            data: vec![S::zero(); numel],
        }
    }

    pub fn full(shape: [usize; 4], value: S) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape,
            data: vec![value; numel],
        }
    }

    /// Builds a tensor by evaluating `f(n, h, w, c)` at every index, in
    /// storage order.
    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for n in 0..shape[0] {
            for h in 0..shape[1] {
                for w in 0..shape[2] {
                    for c in 0..shape[3] {
                        data.push(f(n, h, w, c));
                    }
                }
            }
        }
        Self { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[3]
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    fn index(&self, n: usize, h: usize, w: usize, c: usize) -> usize {
        debug_assert!(
            n < self.shape[0] && h < self.shape[1] && w < self.shape[2] && c < self.shape[3],
            "index ({n},{h},{w},{c}) out of bounds for {:?}",
            self.shape
        );
        ((n * self.shape[1] + h) * self.shape[2] + w) * self.shape[3] + c
    }

    #[inline]
    pub fn at(&self, n: usize, h: usize, w: usize, c: usize) -> S {
        self.data[self.index(n, h, w, c)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, h: usize, w: usize, c: usize) -> &mut S {
        let i = self.index(n, h, w, c);
        &mut self.data[i]
    }

    /// Elementwise map into a new tensor of the same shape.
    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Reinterprets the same storage under a new shape with equal element count.
    pub fn reshape(self, shape: [usize; 4]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} ({} elements) to {:?} ({} elements)",
                self.shape,
                self.data.len(),
                shape,
                numel
            )));
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    /// Copies the tensor into another scalar type (used by the 64-bit
    /// gradient-check mode).
    pub fn cast<T: Scalar>(&self) -> Tensor4<T> {
        Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|&v| T::from_f64_c(v.to_f64_c()))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Enforces the "all values finite after any forward pass" invariant.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "non-finite value in {context} (shape {:?})",
                self.shape
            )))
        }
    }

    /// Stacks same-shaped single-sample tensors along the batch axis.
    pub fn stack(samples: &[Tensor4<S>]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::shape("cannot stack zero tensors"))?;
        let [_, h, w, c] = first.shape;
        let mut data = Vec::with_capacity(samples.iter().map(|s| s.numel()).sum());
        let mut n_total = 0;
        for s in samples {
            if s.shape[1] != h || s.shape[2] != w || s.shape[3] != c {
                return Err(Error::shape(format!(
                    "stack: sample shape {:?} differs from first {:?}",
                    s.shape, first.shape
                )));
            }
            n_total += s.shape[0];
            data.extend_from_slice(&s.data);
        }
        Ok(Self {
            shape: [n_total, h, w, c],
            data,
        })
    }

    /// Extracts one sample as a batch-1 tensor.
    pub fn sample(&self, n: usize) -> Result<Self> {
        if n >= self.shape[0] {
            return Err(Error::shape(format!(
                "sample index {n} out of range for batch {}",
                self.shape[0]
            )));
        }
        let stride = self.shape[1] * self.shape[2] * self.shape[3];
        Ok(Self {
            shape: [1, self.shape[1], self.shape[2], self.shape[3]],
            data: self.data[n * stride..(n + 1) * stride].to_vec(),
        })
    }

    /// Gathers the given batch indices into a new tensor (minibatch selection).
    pub fn gather(&self, indices: &[usize]) -> Result<Self> {
        let stride = self.shape[1] * self.shape[2] * self.shape[3];
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &n in indices {
            if n >= self.shape[0] {
                return Err(Error::shape(format!(
                    "gather index {n} out of range for batch {}",
                    self.shape[0]
                )));
            }
            data.extend_from_slice(&self.data[n * stride..(n + 1) * stride]);
        }
        Ok(Self {
            shape: [indices.len(), self.shape[1], self.shape[2], self.shape[3]],
            data,
        })
    }
}
