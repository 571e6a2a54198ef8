use rayon::prelude::*;

use super::ExecMode;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

const RELU_CHUNK: usize = 4096;

/// `max(0, v)`; NaN propagates.
#[inline(always)]
pub fn relu_scalar<T: Scalar>(v: T) -> T {
    if v < T::zero() {
        T::zero()
    } else {
        v
    }
}

pub fn relu<T: Scalar>(input: &Tensor4<T>, mode: ExecMode) -> Tensor4<T> {
    let mut out = input.clone();
    match mode {
        ExecMode::Sequential => out.data_mut().iter_mut().for_each(|v| *v = relu_scalar(*v)),
        ExecMode::Parallel(_) => out
            .data_mut()
            .par_chunks_mut(RELU_CHUNK)
            .for_each(|chunk| chunk.iter_mut().for_each(|v| *v = relu_scalar(*v))),
    }
    out
}

/// Softmax over the channel dimension at every `(n, y, x)` position, with
/// the channel maximum subtracted before exponentiation.
pub fn softmax<T: Scalar>(input: &Tensor4<T>, mode: ExecMode) -> Tensor4<T> {
    let shape = input.shape();
    let plane = shape.plane_len();
    let channels = shape.c;
    let kernel = |src: &[T], dst: &mut [T]| {
        for p in 0..plane {
            let mut max = src[p];
            for c in 1..channels {
                let v = src[c * plane + p];
                if v > max {
                    max = v;
                }
            }
            let mut sum = T::zero();
            for c in 0..channels {
                let e = (src[c * plane + p] - max).exp();
                dst[c * plane + p] = e;
                sum += e;
            }
            for c in 0..channels {
                dst[c * plane + p] /= sum;
            }
        }
    };

    let mut out = Tensor4::zeros(shape);
    let image = shape.image_len();
    match mode {
        ExecMode::Sequential => {
            for (src, dst) in input.data().chunks(image).zip(out.data_mut().chunks_mut(image)) {
                kernel(src, dst);
            }
        }
        ExecMode::Parallel(_) => input
            .data()
            .par_chunks(image)
            .zip(out.data_mut().par_chunks_mut(image))
            .for_each(|(src, dst)| kernel(src, dst)),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autotune::TuningProfile;
    use crate::tensor::Shape4;
    use proptest::prelude::*;

    fn vector(values: Vec<f32>) -> Tensor4<f32> {
        Tensor4::new(Shape4::new(1, values.len(), 1, 1), values).unwrap()
    }

    #[test]
    fn relu_examples() {
        for mode in [ExecMode::Sequential, ExecMode::Parallel(TuningProfile::default())] {
            assert_eq!(relu(&vector(vec![-1.0, 0.0, 2.0]), mode).data(), &[0.0, 0.0, 2.0]);
            assert!(relu(&vector(vec![-3.0; 7]), mode).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        assert_eq!(softmax(&vector(vec![0.0, 0.0]), ExecMode::Sequential).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_per_position() {
        // Two positions, two channels; each position normalises separately.
        let t = Tensor4::new(Shape4::new(1, 2, 1, 2), vec![0.0f32, 5.0, 0.0, -5.0]).unwrap();
        let out = softmax(&t, ExecMode::Sequential);
        assert_eq!(out.at(0, 0, 0, 0).unwrap(), 0.5);
        assert!((out.at(0, 0, 0, 1).unwrap() + out.at(0, 1, 0, 1).unwrap() - 1.0).abs() < 1e-6);
        assert!(out.at(0, 0, 0, 1).unwrap() > 0.99);
    }

    #[test]
    fn softmax_survives_large_shift() {
        let logits = [-3.0f32, 0.0, 1.0, 4.0, 2.0];
        let a = softmax(&vector(logits.to_vec()), ExecMode::Sequential);
        let b = softmax(&vector(logits.iter().map(|v| v + 10000.0).collect()), ExecMode::Sequential);
        assert!(a.max_abs_diff(&b) <= 1e-6);
        assert!(b.all_finite());

        let wide: Vec<f64> = vec![-0.123, 0.456, 1.789, -2.5];
        let t = Tensor4::new(Shape4::new(1, 4, 1, 1), wide.clone()).unwrap();
        let shifted = Tensor4::new(Shape4::new(1, 4, 1, 1), wide.iter().map(|v| v + 10000.0).collect()).unwrap();
        assert!(softmax(&t, ExecMode::Sequential).max_abs_diff(&softmax(&shifted, ExecMode::Sequential)) <= 1e-6);
    }

    proptest! {
        #[test]
        fn relu_is_idempotent(values in proptest::collection::vec(-100.0f32..100.0, 1..64)) {
            let t = vector(values);
            let once = relu(&t, ExecMode::Sequential);
            prop_assert_eq!(relu(&once, ExecMode::Sequential), once);
        }

        #[test]
        fn softmax_is_shift_invariant(values in proptest::collection::vec(-20.0f32..20.0, 1..16)) {
            let t = vector(values.clone());
            let shifted = vector(values.iter().map(|v| v + 10000.0).collect());
            let a = softmax(&t, ExecMode::Sequential);
            let b = softmax(&shifted, ExecMode::Sequential);
            // Adding 10000 in f32 rounds the logits to multiples of 2^-10,
            // so compare against the softmax of the rounded differences.
            let rounded = vector(values.iter().map(|v| (v + 10000.0) - 10000.0).collect());
            let c = softmax(&rounded, ExecMode::Sequential);
            prop_assert!(b.max_abs_diff(&c) <= 1e-6);
            let sum: f32 = a.data().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-6);
        }
    }
}
