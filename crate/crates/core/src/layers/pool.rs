use rayon::prelude::*;

use super::ExecMode;
use crate::error::Result;
use crate::netfile::PoolMode;
use crate::scalar::Scalar;
use crate::tensor::{pool_output_shape, Tensor4};

/// Unpadded max or mean pooling over `kh×kw` windows.
pub fn pool_forward<T: Scalar>(
    input: &Tensor4<T>,
    kh: usize,
    kw: usize,
    stride: usize,
    pool: PoolMode,
    mode: ExecMode,
) -> Result<Tensor4<T>> {
    let ins = input.shape();
    let outs = pool_output_shape(ins, kh, kw, stride)?;
    let mut out = Tensor4::zeros(outs);
    let in_plane = ins.plane_len();
    let window = T::from(kh * kw).expect("window size representable");
    let kernel = |src: &[T], dst: &mut [T]| {
        for oy in 0..outs.h {
            for ox in 0..outs.w {
                let (y0, x0) = (oy * stride, ox * stride);
                let mut acc = match pool {
                    PoolMode::Max => src[y0 * ins.w + x0],
                    PoolMode::Mean => T::zero(),
                };
                for i in 0..kh {
                    let row = &src[(y0 + i) * ins.w + x0..(y0 + i) * ins.w + x0 + kw];
                    for &v in row {
                        match pool {
                            PoolMode::Max => {
                                if v > acc {
                                    acc = v
                                }
                            }
                            PoolMode::Mean => acc += v,
                        }
                    }
                }
                dst[oy * outs.w + ox] = match pool {
                    PoolMode::Max => acc,
                    PoolMode::Mean => acc / window,
                };
            }
        }
    };

    match mode {
        ExecMode::Sequential => {
            for (src, dst) in input.data().chunks(in_plane).zip(out.data_mut().chunks_mut(outs.plane_len())) {
                kernel(src, dst);
            }
        }
        ExecMode::Parallel(_) => {
            input
                .data()
                .par_chunks(in_plane)
                .zip(out.data_mut().par_chunks_mut(outs.plane_len()))
                .for_each(|(src, dst)| kernel(src, dst));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autotune::TuningProfile;
    use crate::tensor::Shape4;

    fn modes() -> [ExecMode; 2] {
        [ExecMode::Sequential, ExecMode::Parallel(TuningProfile::default())]
    }

    #[test]
    fn two_by_two_max_and_mean() {
        let input = Tensor4::new(Shape4::new(1, 1, 2, 2), vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        for mode in modes() {
            assert_eq!(pool_forward(&input, 2, 2, 2, PoolMode::Max, mode).unwrap().data(), &[4.0]);
            assert_eq!(pool_forward(&input, 2, 2, 2, PoolMode::Mean, mode).unwrap().data(), &[2.5]);
        }
    }

    #[test]
    fn overlapping_windows() {
        let input = Tensor4::new(Shape4::new(1, 1, 1, 5), vec![5.0f32, -1.0, 3.0, 9.0, 0.0]).unwrap();
        for mode in modes() {
            let out = pool_forward(&input, 1, 3, 2, PoolMode::Max, mode).unwrap();
            assert_eq!(out.data(), &[5.0, 9.0]);
        }
    }

    #[test]
    fn rejects_non_fitting_window() {
        let input = Tensor4::<f32>::zeros(Shape4::new(1, 1, 32, 32));
        assert!(pool_forward(&input, 3, 3, 2, PoolMode::Max, ExecMode::Sequential).is_err());
    }
}
