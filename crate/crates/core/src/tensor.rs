//! Dense 4-D tensors in batch-channel-height-width order and the shape
//! arithmetic shared by all layers.

use std::fmt;

use crate::scalar::Scalar;

/// Geometry violation or out-of-range access.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ShapeError {
    #[error("index ({n}, {c}, {y}, {x}) out of bounds for shape {shape}")]
    OutOfBounds {
        shape: Shape4,
        n: usize,
        c: usize,
        y: usize,
        x: usize,
    },

    #[error("data length {len} does not match shape {shape} ({expected} elements)")]
    DataLength {
        shape: Shape4,
        len: usize,
        expected: usize,
    },

    #[error("element count of shape {0} overflows the address space")]
    Overflow(Shape4),

    /// A window/padding/stride combination that does not tile the input.
    #[error("{dim}: {detail}")]
    Geometry { dim: &'static str, detail: String },

    #[error("{0}")]
    Mismatch(String),
}

/// Batch, channel, row and column extents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    /// Element count, or `None` if it overflows `usize`.
    pub fn checked_len(&self) -> Option<usize> {
        self.n
            .checked_mul(self.c)?
            .checked_mul(self.h)?
            .checked_mul(self.w)
    }

    /// Element count. Panics on overflow; use [`Shape4::checked_len`] for
    /// untrusted shapes.
    pub fn len(&self) -> usize {
        self.checked_len()
            .unwrap_or_else(|| panic!("element count of {self} overflows usize"))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one image (`c·h·w`).
    pub fn image_len(&self) -> usize {
        self.c * self.h * self.w
    }

    /// Elements in one channel plane (`h·w`).
    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    /// Same geometry with a different batch size.
    pub fn with_batch(&self, n: usize) -> Shape4 {
        Shape4 { n, ..*self }
    }

    pub fn contains(&self, n: usize, c: usize, y: usize, x: usize) -> bool {
        n < self.n && c < self.c && y < self.h && x < self.w
    }

    /// Flat row-major offset `((n·C + c)·H + y)·W + x`. Does not check bounds.
    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    /// Inverse of [`Shape4::offset`].
    pub fn unravel(&self, offset: usize) -> (usize, usize, usize, usize) {
        let x = offset % self.w;
        let rest = offset / self.w;
        let y = rest % self.h;
        let rest = rest / self.h;
        (rest / self.c, rest % self.c, y, x)
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

fn fit_dim(
    dim: &'static str,
    extent: usize,
    window: usize,
    pad: usize,
    stride: usize,
) -> Result<usize, ShapeError> {
    if stride == 0 {
        return Err(ShapeError::Geometry {
            dim,
            detail: "stride must be at least 1".into(),
        });
    }
    if window == 0 {
        return Err(ShapeError::Geometry {
            dim,
            detail: "window must be at least 1".into(),
        });
    }
    let padded = extent + 2 * pad;
    if padded < window {
        return Err(ShapeError::Geometry {
            dim,
            detail: format!("window {window} larger than padded extent {padded}"),
        });
    }
    let span = padded - window;
    if span % stride != 0 {
        return Err(ShapeError::Geometry {
            dim,
            detail: format!(
                "extent {extent} with pad {pad} and window {window} does not fit stride {stride}"
            ),
        });
    }
    Ok(span / stride + 1)
}

/// Output shape of a convolution with `kernels` filters of `kh×kw`.
///
/// Geometry must fit exactly: `(extent + 2·pad − window)` has to be a
/// non-negative multiple of `stride` in both spatial dimensions.
pub fn conv_output_shape(
    input: Shape4,
    kernels: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    stride: usize,
) -> Result<Shape4, ShapeError> {
    let h = fit_dim("height", input.h, kh, pad, stride)?;
    let w = fit_dim("width", input.w, kw, pad, stride)?;
    Ok(Shape4::new(input.n, kernels, h, w))
}

/// Output shape of an unpadded pooling window.
pub fn pool_output_shape(
    input: Shape4,
    kh: usize,
    kw: usize,
    stride: usize,
) -> Result<Shape4, ShapeError> {
    let h = fit_dim("height", input.h, kh, 0, stride)?;
    let w = fit_dim("width", input.w, kw, 0, stride)?;
    Ok(Shape4::new(input.n, input.c, h, w))
}

/// Dense row-major 4-D tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn new(shape: Shape4, data: Vec<T>) -> Result<Self, ShapeError> {
        let expected = shape.checked_len().ok_or(ShapeError::Overflow(shape))?;
        if data.len() != expected {
            return Err(ShapeError::DataLength {
                shape,
                len: data.len(),
                expected,
            });
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn zeros(shape: Shape4) -> Self {
        Tensor4 {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    /// Builds a tensor by evaluating `f` at every `(n, c, y, x)`.
    pub fn from_fn(shape: Shape4, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor4 { shape, data }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> Result<T, ShapeError> {
        self.check(n, c, y, x)?;
        Ok(self.data[self.shape.offset(n, c, y, x)])
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) -> Result<(), ShapeError> {
        self.check(n, c, y, x)?;
        let off = self.shape.offset(n, c, y, x);
        self.data[off] = v;
        Ok(())
    }

    fn check(&self, n: usize, c: usize, y: usize, x: usize) -> Result<(), ShapeError> {
        if self.shape.contains(n, c, y, x) {
            Ok(())
        } else {
            Err(ShapeError::OutOfBounds {
                shape: self.shape,
                n,
                c,
                y,
                x,
            })
        }
    }

    /// Reinterprets the same data under another shape of equal size.
    pub fn reshape(self, shape: Shape4) -> Result<Self, ShapeError> {
        Tensor4::new(shape, self.data)
    }

    /// Contiguous slice holding image `n`.
    pub fn image(&self, n: usize) -> &[T] {
        let len = self.shape.image_len();
        &self.data[n * len..(n + 1) * len]
    }

    /// Copy of image `n` as a batch of one.
    pub fn take_image(&self, n: usize) -> Self {
        Tensor4 {
            shape: self.shape.with_batch(1),
            data: self.image(n).to_vec(),
        }
    }

    /// Concatenates tensors along the batch dimension.
    pub fn concat_batch(parts: &[Self]) -> Result<Self, ShapeError> {
        let first = parts
            .first()
            .ok_or_else(|| ShapeError::Mismatch("cannot concatenate zero tensors".into()))?;
        let mut data = Vec::new();
        let mut n = 0;
        for part in parts {
            let s = part.shape;
            if (s.c, s.h, s.w) != (first.shape.c, first.shape.h, first.shape.w) {
                return Err(ShapeError::Mismatch(format!(
                    "cannot concatenate {} with {}",
                    first.shape, s
                )));
            }
            n += s.n;
            data.extend_from_slice(&part.data);
        }
        Tensor4::new(first.shape.with_batch(n), data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::from_f32(v.to_f32())).collect(),
        }
    }

    /// Shape and every element's bit pattern agree.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits_u64() == b.to_bits_u64())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Tensor4<f64> {
    /// Widens an `f32` tensor exactly.
    pub fn from_f32_tensor(t: &Tensor4<f32>) -> Self {
        Tensor4 {
            shape: t.shape,
            data: t.data.iter().map(|&v| f64::from(v)).collect(),
        }
    }
}
