use rayon::prelude::*;

use super::{dot_chunked_multi, relu_scalar, ExecMode, IMAGE_BLOCK};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::store::LayerParams;
use crate::tensor::{conv_output_shape, Shape4, ShapeError, Tensor4};

/// Padding, stride and channel grouping of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub pad: usize,
    pub stride: usize,
    pub group: usize,
}

impl Default for ConvGeometry {
    fn default() -> Self {
        ConvGeometry {
            pad: 0,
            stride: 1,
            group: 1,
        }
    }
}

struct ConvPlan {
    input: Shape4,
    weight: Shape4,
    output: Shape4,
    geom: ConvGeometry,
    kernels_per_group: usize,
}

impl ConvPlan {
    fn new<T: Scalar>(input: Shape4, params: &LayerParams<T>, geom: ConvGeometry) -> Result<Self> {
        let weight = params.weight.shape();
        if geom.group == 0 || geom.stride == 0 {
            return Err(ShapeError::Mismatch("stride and group must be at least 1".into()).into());
        }
        if input.c % geom.group != 0 || weight.n % geom.group != 0 {
            return Err(ShapeError::Mismatch(format!(
                "group {} must divide input channels {} and kernel count {}",
                geom.group, input.c, weight.n
            ))
            .into());
        }
        if weight.c * geom.group != input.c {
            return Err(ShapeError::Mismatch(format!(
                "weight {weight} does not match input {input} with group {}",
                geom.group
            ))
            .into());
        }
        if params.bias.len() != weight.n {
            return Err(ShapeError::Mismatch(format!(
                "bias length {} does not match {} kernels",
                params.bias.len(),
                weight.n
            ))
            .into());
        }
        let output = conv_output_shape(input, weight.n, weight.h, weight.w, geom.pad, geom.stride)?;
        Ok(ConvPlan {
            input,
            weight,
            output,
            geom,
            kernels_per_group: weight.n / geom.group,
        })
    }

    /// Valid kernel-column range `[lo, hi)` for output column `ox`, and the
    /// input column that kernel column `lo` lands on.
    #[inline]
    fn col_range(&self, ox: usize) -> (usize, usize, usize) {
        let origin = (ox * self.geom.stride) as isize - self.geom.pad as isize;
        let lo = (-origin).max(0) as usize;
        let hi = (self.input.w as isize - origin).min(self.weight.w as isize).max(0) as usize;
        (lo, hi.max(lo), (origin + lo as isize) as usize)
    }

    #[inline]
    fn row_range(&self, oy: usize) -> (usize, usize, isize) {
        let origin = (oy * self.geom.stride) as isize - self.geom.pad as isize;
        let lo = (-origin).max(0) as usize;
        let hi = (self.input.h as isize - origin).min(self.weight.h as isize).max(0) as usize;
        (lo, hi.max(lo), origin)
    }
}

/// Direct convolution (cross-correlation) with zero padding.
///
/// `out[n,k,y,x] = bias[k] + Σ in[n, g·C/G + c, y·s+i−p, x·s+j−p]·w[k,c,i,j]`
/// where `g` is the group of kernel `k`. Terms are accumulated in
/// `(c, i, j)` order starting from zero; the bias is added last.
pub fn conv_forward<T: Scalar>(
    input: &Tensor4<T>,
    params: &LayerParams<T>,
    geom: ConvGeometry,
    fused_relu: bool,
    mode: ExecMode,
) -> Result<Tensor4<T>> {
    let plan = ConvPlan::new(input.shape(), params, geom)?;
    let mut out = Tensor4::zeros(plan.output);
    match mode {
        ExecMode::Sequential => conv_sequential(&plan, input.data(), params, fused_relu, out.data_mut()),
        ExecMode::Parallel(_) if plan.output.len() == 0 => {}
        ExecMode::Parallel(profile) => {
            // A work item is `rows_per_item` output rows of one kernel for
            // the whole batch, written to a scratch buffer laid out
            // [k][y][n][x] and transposed into place afterwards.
            let os = plan.output;
            let rows = profile.rows_per_item.max(1);
            let width = profile.vec_width;
            let line = os.n * os.w;
            let mut scratch = vec![T::zero(); os.len()];
            scratch
                .par_chunks_mut(os.h * line)
                .enumerate()
                .for_each(|(k, plane)| {
                    plane
                        .par_chunks_mut(rows * line)
                        .enumerate()
                        .for_each(|(block, rows_out)| {
                            for (r, row) in rows_out.chunks_mut(line).enumerate() {
                                let oy = block * rows + r;
                                for (b, seg) in row.chunks_mut(IMAGE_BLOCK * os.w).enumerate() {
                                    let n0 = b * IMAGE_BLOCK;
                                    let args = (&plan, input.data(), params, n0, k, oy, width, fused_relu);
                                    match seg.len() / os.w {
                                        4 => conv_row_block::<T, 4>(args, seg),
                                        3 => conv_row_block::<T, 3>(args, seg),
                                        2 => conv_row_block::<T, 2>(args, seg),
                                        _ => conv_row_block::<T, 1>(args, seg),
                                    }
                                }
                            }
                        });
                });
            out.data_mut()
                .par_chunks_mut(os.plane_len())
                .enumerate()
                .for_each(|(nk, dst)| {
                    let (n, k) = (nk / os.c, nk % os.c);
                    for (y, dst_row) in dst.chunks_mut(os.w).enumerate() {
                        let src = ((k * os.h + y) * os.n + n) * os.w;
                        dst_row.copy_from_slice(&scratch[src..src + os.w]);
                    }
                });
        }
    }
    Ok(out)
}

fn conv_sequential<T: Scalar>(
    plan: &ConvPlan,
    input: &[T],
    params: &LayerParams<T>,
    fused_relu: bool,
    out: &mut [T],
) {
    let (ins, ws, os) = (plan.input, plan.weight, plan.output);
    let weight = params.weight.data();
    let s = plan.geom.stride as isize;
    let p = plan.geom.pad as isize;
    for n in 0..os.n {
        for k in 0..os.c {
            let c_base = (k / plan.kernels_per_group) * ws.c;
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let mut acc = T::zero();
                    for c in 0..ws.c {
                        for i in 0..ws.h {
                            let iy = oy as isize * s + i as isize - p;
                            if iy < 0 || iy >= ins.h as isize {
                                continue;
                            }
                            for j in 0..ws.w {
                                let ix = ox as isize * s + j as isize - p;
                                if ix < 0 || ix >= ins.w as isize {
                                    continue;
                                }
                                let v = input[ins.offset(n, c_base + c, iy as usize, ix as usize)];
                                acc += v * weight[ws.offset(k, c, i, j)];
                            }
                        }
                    }
                    let v = acc + params.bias[k];
                    out[os.offset(n, k, oy, ox)] = if fused_relu { relu_scalar(v) } else { v };
                }
            }
        }
    }
}

type RowArgs<'a, T> = (&'a ConvPlan, &'a [T], &'a LayerParams<T>, usize, usize, usize, usize, bool);

/// Output row `oy` of kernel `k` for images `n0..n0 + M`, written as `M`
/// consecutive rows of `out`. Inner products over kernel columns go
/// through `dot_chunked_multi` on contiguous input and weight slices.
#[inline]
fn conv_row_block<T: Scalar, const M: usize>(args: RowArgs<'_, T>, out: &mut [T]) {
    let (plan, input, params, n0, k, oy, width, fused_relu) = args;
    let (ins, ws, ow) = (plan.input, plan.weight, plan.output.w);
    let weight = params.weight.data();
    let c_base = (k / plan.kernels_per_group) * ws.c;
    let (i_lo, i_hi, iy0) = plan.row_range(oy);
    let image = ins.image_len();
    let first_image = n0 * image + c_base * ins.h * ins.w;
    for ox in 0..ow {
        let (j_lo, j_hi, ix) = plan.col_range(ox);
        let len = j_hi - j_lo;
        let mut acc = [T::zero(); M];
        if len > 0 {
            for c in 0..ws.c {
                let in_plane = first_image + c * ins.h * ins.w;
                let w_plane = (k * ws.c + c) * ws.h * ws.w;
                for i in i_lo..i_hi {
                    let off = in_plane + (iy0 + i as isize) as usize * ins.w + ix;
                    let w_off = w_plane + i * ws.w + j_lo;
                    let xs: [&[T]; M] = std::array::from_fn(|m| &input[off + m * image..off + m * image + len]);
                    acc = dot_chunked_multi(acc, &weight[w_off..w_off + len], xs, width);
                }
            }
        }
        for (m, &a) in acc.iter().enumerate() {
            let v = a + params.bias[k];
            out[m * ow + ox] = if fused_relu { relu_scalar(v) } else { v };
        }
    }
}
