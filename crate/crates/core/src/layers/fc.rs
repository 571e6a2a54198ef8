use rayon::prelude::*;

use super::{dot_chunked_multi, relu_scalar, ExecMode, IMAGE_BLOCK};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::store::LayerParams;
use crate::tensor::{Shape4, ShapeError, Tensor4};

/// Fully connected layer: each image is flattened and multiplied by the
/// `[out, in]` weight matrix. Output shape is `(n, out, 1, 1)`.
pub fn fc_forward<T: Scalar>(
    input: &Tensor4<T>,
    params: &LayerParams<T>,
    fused_relu: bool,
    mode: ExecMode,
) -> Result<Tensor4<T>> {
    let ins = input.shape();
    let ws = params.weight.shape();
    let in_features = ws.c * ws.h * ws.w;
    if in_features != ins.image_len() {
        return Err(ShapeError::Mismatch(format!(
            "weight {ws} expects {in_features} inputs per image, input {ins} has {}",
            ins.image_len()
        ))
        .into());
    }
    if params.bias.len() != ws.n {
        return Err(ShapeError::Mismatch(format!(
            "bias length {} does not match {} outputs",
            params.bias.len(),
            ws.n
        ))
        .into());
    }
    let outs = Shape4::new(ins.n, ws.n, 1, 1);
    let mut out = Tensor4::zeros(outs);
    let weight = params.weight.data();
    let finish = |acc: T, o: usize| {
        let v = acc + params.bias[o];
        if fused_relu {
            relu_scalar(v)
        } else {
            v
        }
    };

    match mode {
        ExecMode::Sequential => {
            let data = out.data_mut();
            for n in 0..ins.n {
                let x = input.image(n);
                for o in 0..ws.n {
                    let row = &weight[o * in_features..(o + 1) * in_features];
                    let mut acc = T::zero();
                    for (w, v) in row.iter().zip(x) {
                        acc += *w * *v;
                    }
                    data[n * ws.n + o] = finish(acc, o);
                }
            }
        }
        ExecMode::Parallel(profile) if ins.n > 0 => {
            // A work item is a block of output rows evaluated for the whole
            // batch, so each weight row is streamed once per batch. Results
            // are gathered output-major and then transposed into place.
            let per_item = profile.fc_outputs_per_item.max(1);
            let width = profile.vec_width;
            let batch = ins.n;
            let mut by_output = vec![T::zero(); ws.n * batch];
            by_output
                .par_chunks_mut(per_item * batch)
                .enumerate()
                .for_each(|(item, chunk)| {
                    for (i, slots) in chunk.chunks_mut(batch).enumerate() {
                        let o = item * per_item + i;
                        let row = &weight[o * in_features..(o + 1) * in_features];
                        for (b, seg) in slots.chunks_mut(IMAGE_BLOCK).enumerate() {
                            let n0 = b * IMAGE_BLOCK;
                            match seg.len() {
                                4 => fc_block::<T, 4>(row, input, n0, width, seg),
                                3 => fc_block::<T, 3>(row, input, n0, width, seg),
                                2 => fc_block::<T, 2>(row, input, n0, width, seg),
                                _ => fc_block::<T, 1>(row, input, n0, width, seg),
                            }
                        }
                        for slot in slots.iter_mut() {
                            *slot = finish(*slot, o);
                        }
                    }
                });
            let data = out.data_mut();
            for (o, slots) in by_output.chunks(batch).enumerate() {
                for (n, &v) in slots.iter().enumerate() {
                    data[n * ws.n + o] = v;
                }
            }
        }
        ExecMode::Parallel(_) => {}
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autotune::TuningProfile;

    fn modes() -> Vec<ExecMode> {
        let mut m = vec![ExecMode::Sequential];
        m.extend(TuningProfile::grid().into_iter().map(ExecMode::Parallel));
        m
    }

    #[test]
    fn identity_weights_pass_input_through() {
        let input = Tensor4::new(Shape4::new(2, 2, 1, 2), (0..8).map(|v| v as f32 - 3.0).collect()).unwrap();
        let eye = Tensor4::from_fn(Shape4::new(4, 4, 1, 1), |o, i, _, _| if o == i { 1.0f32 } else { 0.0 });
        let p = LayerParams::new(eye, vec![0.0; 4]).unwrap();
        for mode in modes() {
            let out = fc_forward(&input, &p, false, mode).unwrap();
            assert_eq!(out.shape(), Shape4::new(2, 4, 1, 1));
            assert_eq!(out.data(), input.data());
        }
    }

    #[test]
    fn ones_row_sums_plus_bias() {
        let input = Tensor4::new(Shape4::new(1, 3, 1, 1), vec![1.0f32, 2.0, 3.0]).unwrap();
        let p = LayerParams::new(Tensor4::new(Shape4::new(1, 3, 1, 1), vec![1.0; 3]).unwrap(), vec![1.0]).unwrap();
        for mode in modes() {
            assert_eq!(fc_forward(&input, &p, false, mode).unwrap().data(), &[7.0]);
        }
    }

    #[test]
    fn fused_relu_clamps() {
        let input = Tensor4::new(Shape4::new(1, 1, 1, 1), vec![1.0f32]).unwrap();
        let p = LayerParams::new(Tensor4::new(Shape4::new(2, 1, 1, 1), vec![-2.0, 2.0]).unwrap(), vec![0.0, 0.0]).unwrap();
        for mode in modes() {
            assert_eq!(fc_forward(&input, &p, true, mode).unwrap().data(), &[0.0, 2.0]);
        }
    }

    #[test]
    fn rejects_feature_mismatch() {
        let input = Tensor4::<f32>::zeros(Shape4::new(1, 4, 1, 1));
        let p = LayerParams::new(Tensor4::zeros(Shape4::new(2, 3, 1, 1)), vec![0.0; 2]).unwrap();
        assert!(fc_forward(&input, &p, false, ExecMode::Sequential).is_err());
    }
}

/// Raw inner products of one weight row with images `n0..n0 + M`.
#[inline]
fn fc_block<T: Scalar, const M: usize>(row: &[T], input: &Tensor4<T>, n0: usize, width: usize, out: &mut [T]) {
    let xs: [&[T]; M] = std::array::from_fn(|m| input.image(n0 + m));
    out.copy_from_slice(&dot_chunked_multi([T::zero(); M], row, xs, width));
}
