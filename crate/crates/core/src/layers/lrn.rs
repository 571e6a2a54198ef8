use rayon::prelude::*;

use super::ExecMode;
use crate::error::Result;
use crate::netfile::LrnParams;
use crate::scalar::Scalar;
use crate::tensor::{ShapeError, Tensor4};

/// Across-channel local response normalization:
///
/// `out[c] = in[c] / (k + alpha/n · Σ_{j∈window(c)} in[j]²)^beta`
///
/// where the window spans `n` channels centred on `c`, clipped at the
/// channel boundaries.
pub fn lrn_forward<T: Scalar>(input: &Tensor4<T>, params: LrnParams, mode: ExecMode) -> Result<Tensor4<T>> {
    params
        .validate()
        .map_err(|m| ShapeError::Mismatch(format!("invalid LRN parameters: {m}")))?;
    let shape = input.shape();
    let half = (params.size - 1) / 2;
    let scale = T::from_f32(params.alpha) / T::from(params.size).expect("size representable");
    let k = T::from_f32(params.k);
    let beta = T::from_f32(params.beta);
    let plane = shape.plane_len();
    let channels = shape.c;

    let kernel = |src: &[T], dst: &mut [T]| {
        for c in 0..channels {
            let lo = c.saturating_sub(half);
            let hi = (c + half).min(channels - 1);
            for p in 0..plane {
                let mut sum = T::zero();
                for j in lo..=hi {
                    let v = src[j * plane + p];
                    sum += v * v;
                }
                dst[c * plane + p] = src[c * plane + p] / (k + scale * sum).powf(beta);
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
    Ok(out)
}
