//! Forward kernels for every supported layer type.
//!
//! Each op has a sequential path and a data-parallel path. Both visit the
//! terms of every output element in the same order, so the two modes (and
//! every tuning profile) produce bitwise-identical results. In parallel
//! mode the conv and fc inner products run through [`dot_chunked`], which
//! processes fixed-width vector chunks.

mod conv;
mod elementwise;
mod fc;
mod lrn;
mod pool;

pub use conv::{conv_forward, ConvGeometry};
pub use elementwise::{relu, relu_scalar, softmax};
pub use fc::fc_forward;
pub use lrn::lrn_forward;
pub use pool::pool_forward;

use crate::autotune::TuningProfile;
use crate::netfile::ExecutionMode;
use crate::scalar::Scalar;

/// How a layer op is scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    /// Work is split across the current rayon pool with the given
    /// granularity.
    Parallel(TuningProfile),
}

impl ExecMode {
    pub fn new(mode: ExecutionMode, profile: TuningProfile) -> Self {
        match mode {
            ExecutionMode::Sequential => ExecMode::Sequential,
            ExecutionMode::Parallel => ExecMode::Parallel(profile),
        }
    }

    pub fn is_parallel(&self) -> bool {
        matches!(self, ExecMode::Parallel(_))
    }
}

#[inline(always)]
fn dot_fixed<T: Scalar, const N: usize>(mut acc: T, a: &[T], b: &[T]) -> T {
    let mut ca = a.chunks_exact(N);
    let mut cb = b.chunks_exact(N);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        let mut prod = [T::zero(); N];
        for i in 0..N {
            prod[i] = xa[i] * xb[i];
        }
        for p in prod {
            acc += p;
        }
    }
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        acc += x * y;
    }
    acc
}

/// Adds `Σ a[i]·b[i]` to `acc`, `width` elements at a time.
///
/// Products of a chunk are formed together; they are then folded into the
/// running sum in ascending index order, followed by the scalar tail. The
/// result is therefore identical to a plain `acc += a[i] * b[i]` loop for
/// any width.
#[inline]
pub fn dot_chunked<T: Scalar>(acc: T, a: &[T], b: &[T], width: usize) -> T {
    debug_assert_eq!(a.len(), b.len());
    match width {
        4 => dot_fixed::<T, 4>(acc, a, b),
        8 => dot_fixed::<T, 8>(acc, a, b),
        16 => dot_fixed::<T, 16>(acc, a, b),
        _ => dot_fixed::<T, 1>(acc, a, b),
    }
}

/// Largest number of images whose sums a kernel advances together.
pub(crate) const IMAGE_BLOCK: usize = 4;

#[inline(always)]
fn dot_fixed_multi<T: Scalar, const N: usize, const M: usize>(mut acc: [T; M], w: &[T], xs: [&[T]; M]) -> [T; M] {
    let len = w.len();
    let xs = xs.map(|x| &x[..len]);
    let full = len - len % N;
    let mut base = 0;
    while base < full {
        let wc = &w[base..base + N];
        for m in 0..M {
            let xc = &xs[m][base..base + N];
            let mut prod = [T::zero(); N];
            for i in 0..N {
                prod[i] = wc[i] * xc[i];
            }
            for p in prod {
                acc[m] += p;
            }
        }
        base += N;
    }
    for i in full..len {
        for m in 0..M {
            acc[m] += w[i] * xs[m][i];
        }
    }
    acc
}

/// `dot_chunked` of one shared vector `w` against `M` vectors at once.
///
/// `acc[m]` receives exactly the additions, in exactly the order, that
/// `dot_chunked(acc[m], w, xs[m], width)` would perform. The `M` sums do
/// not depend on each other, so the processor can overlap them.
#[inline]
pub fn dot_chunked_multi<T: Scalar, const M: usize>(acc: [T; M], w: &[T], xs: [&[T]; M], width: usize) -> [T; M] {
    match width {
        4 => dot_fixed_multi::<T, 4, M>(acc, w, xs),
        8 => dot_fixed_multi::<T, 8, M>(acc, w, xs),
        16 => dot_fixed_multi::<T, 16, M>(acc, w, xs),
        _ => dot_fixed_multi::<T, 1, M>(acc, w, xs),
    }
}
