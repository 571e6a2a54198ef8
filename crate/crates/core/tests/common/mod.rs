//! Double-precision brute-force references and random instance generators
//! shared by the integration tests. Nothing here calls into the engine's
//! kernels; only the tensor container is reused.

#![allow(dead_code)]

use cnnfwd::netfile::{LayerOp, NetConfig, PoolMode};
use cnnfwd::store::{LayerParams, MemorySource};
use cnnfwd::{Shape4, Tensor, Tensor64};
use rand::Rng;

fn get(t: &Tensor64, n: usize, c: usize, y: usize, x: usize) -> f64 {
    let s = t.shape();
    t.data()[((n * s.c + c) * s.h + y) * s.w + x]
}

/// Direct 7-loop convolution with zero padding.
pub fn conv_ref(input: &Tensor64, weight: &Tensor64, bias: &[f64], pad: usize, stride: usize, group: usize) -> Tensor64 {
    let (is, ws) = (input.shape(), weight.shape());
    let oh = (is.h + 2 * pad - ws.h) / stride + 1;
    let ow = (is.w + 2 * pad - ws.w) / stride + 1;
    let per_group = ws.n / group;
    Tensor64::from_fn(Shape4::new(is.n, ws.n, oh, ow), |n, k, oy, ox| {
        let g = k / per_group;
        let mut acc = bias[k];
        for c in 0..ws.c {
            for i in 0..ws.h {
                for j in 0..ws.w {
                    let y = (oy * stride + i) as isize - pad as isize;
                    let x = (ox * stride + j) as isize - pad as isize;
                    if y < 0 || x < 0 || y >= is.h as isize || x >= is.w as isize {
                        continue;
                    }
                    acc += get(input, n, g * ws.c + c, y as usize, x as usize) * get(weight, k, c, i, j);
                }
            }
        }
        acc
    })
}

pub fn pool_ref(input: &Tensor64, kh: usize, kw: usize, stride: usize, max: bool) -> Tensor64 {
    let s = input.shape();
    let oh = (s.h - kh) / stride + 1;
    let ow = (s.w - kw) / stride + 1;
    Tensor64::from_fn(Shape4::new(s.n, s.c, oh, ow), |n, c, oy, ox| {
        let mut values = Vec::new();
        for i in 0..kh {
            for j in 0..kw {
                values.push(get(input, n, c, oy * stride + i, ox * stride + j));
            }
        }
        if max {
            values.into_iter().fold(f64::NEG_INFINITY, f64::max)
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        }
    })
}

pub fn fc_ref(input: &Tensor64, weight: &Tensor64, bias: &[f64]) -> Tensor64 {
    let s = input.shape();
    let ws = weight.shape();
    let features = s.c * s.h * s.w;
    Tensor64::from_fn(Shape4::new(s.n, ws.n, 1, 1), |n, o, _, _| {
        let mut acc = bias[o];
        for i in 0..features {
            acc += weight.data()[o * features + i] * input.data()[n * features + i];
        }
        acc
    })
}

pub fn relu_ref(input: &Tensor64) -> Tensor64 {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn lrn_ref(input: &Tensor64, size: usize, alpha: f64, beta: f64, k: f64) -> Tensor64 {
    let s = input.shape();
    let half = (size - 1) / 2;
    Tensor64::from_fn(s, |n, c, y, x| {
        let lo = c.saturating_sub(half);
        let hi = (c + half).min(s.c - 1);
        let sum: f64 = (lo..=hi).map(|j| get(input, n, j, y, x).powi(2)).sum();
        get(input, n, c, y, x) / (k + alpha / size as f64 * sum).powf(beta)
    })
}

pub fn softmax_ref(input: &Tensor64) -> Tensor64 {
    let s = input.shape();
    Tensor64::from_fn(s, |n, c, y, x| {
        let denom: f64 = (0..s.c).map(|j| get(input, n, j, y, x).exp()).sum();
        get(input, n, c, y, x).exp() / denom
    })
}

pub fn widen(t: &Tensor) -> Tensor64 {
    Tensor64::from_f32_tensor(t)
}

pub fn widen_params(p: &LayerParams<f32>) -> (Tensor64, Vec<f64>) {
    (widen(&p.weight), p.bias.iter().map(|&b| f64::from(b)).collect())
}

/// Runs a network layer by layer in f64 straight from its configuration.
pub fn net_ref(cfg: &NetConfig, params: &MemorySource, input: &Tensor) -> Tensor64 {
    let mut x = widen(input);
    for layer in &cfg.layers {
        x = match &layer.op {
            LayerOp::Conv { pad, stride, group, fused_relu, .. } => {
                let (w, b) = widen_params(params.get(&layer.name).unwrap());
                let y = conv_ref(&x, &w, &b, *pad, *stride, *group);
                if *fused_relu { relu_ref(&y) } else { y }
            }
            LayerOp::Fc { fused_relu, .. } => {
                let (w, b) = widen_params(params.get(&layer.name).unwrap());
                let y = fc_ref(&x, &w, &b);
                if *fused_relu { relu_ref(&y) } else { y }
            }
            LayerOp::Pool { kernel_h, kernel_w, stride, mode } => {
                pool_ref(&x, *kernel_h, *kernel_w, *stride, *mode == PoolMode::Max)
            }
            LayerOp::Relu => relu_ref(&x),
            LayerOp::Lrn(p) => lrn_ref(&x, p.size, f64::from(p.alpha), f64::from(p.beta), f64::from(p.k)),
            LayerOp::Softmax => softmax_ref(&x),
        };
    }
    x
}

pub fn max_abs(a: &Tensor, b: &Tensor64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (f64::from(x) - y).abs())
        .fold(0.0, f64::max)
}

pub fn mse64(a: &Tensor, b: &Tensor64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (f64::from(x) - y).powi(2))
        .sum::<f64>()
        / a.len() as f64
}

pub fn uniform_tensor(shape: Shape4, scale: f32, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-scale..scale))
}

#[derive(Clone, Debug)]
pub struct ConvCase {
    pub input: Tensor,
    pub params: LayerParams<f32>,
    pub pad: usize,
    pub stride: usize,
    pub group: usize,
}

/// Random conv instance whose geometry fits exactly.
pub fn conv_case(rng: &mut impl Rng) -> ConvCase {
    let group = rng.gen_range(1..=3);
    let cin = group * rng.gen_range(1..=3);
    let kernels = group * rng.gen_range(1..=3);
    let kh = rng.gen_range(1..=4);
    let kw = rng.gen_range(1..=4);
    let stride = rng.gen_range(1..=3);
    let pad = rng.gen_range(0..=2);
    let extent = |k: usize, rng: &mut dyn rand::RngCore| {
        let mut out = rng.gen_range(1..=5usize);
        loop {
            let padded = k + (out - 1) * stride;
            if padded > 2 * pad {
                return padded - 2 * pad;
            }
            out += 1;
        }
    };
    let h = extent(kh, rng);
    let w = extent(kw, rng);
    let n = rng.gen_range(1..=2);
    let input = uniform_tensor(Shape4::new(n, cin, h, w), 1.0, rng);
    let weight = uniform_tensor(Shape4::new(kernels, cin / group, kh, kw), 1.0, rng);
    let bias = (0..kernels).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ConvCase {
        input,
        params: LayerParams::new(weight, bias).unwrap(),
        pad,
        stride,
        group,
    }
}

#[derive(Clone, Debug)]
pub struct PoolCase {
    pub input: Tensor,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
}

pub fn pool_case(rng: &mut impl Rng) -> PoolCase {
    let kh = rng.gen_range(1..=3);
    let kw = rng.gen_range(1..=3);
    let stride = rng.gen_range(1..=3);
    let h = kh + stride * rng.gen_range(0..=4);
    let w = kw + stride * rng.gen_range(0..=4);
    let input = uniform_tensor(Shape4::new(rng.gen_range(1..=2), rng.gen_range(1..=4), h, w), 1.0, rng);
    PoolCase { input, kh, kw, stride }
}

pub fn fc_case(rng: &mut impl Rng) -> (Tensor, LayerParams<f32>) {
    let shape = Shape4::new(rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=4));
    let input = uniform_tensor(shape, 1.0, rng);
    let outs = rng.gen_range(1..=20);
    let weight = uniform_tensor(Shape4::new(outs, shape.image_len(), 1, 1), 1.0, rng);
    let bias = (0..outs).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (input, LayerParams::new(weight, bias).unwrap())
}

pub fn small_shape(rng: &mut impl Rng) -> Shape4 {
    Shape4::new(rng.gen_range(1..=3), rng.gen_range(1..=8), rng.gen_range(1..=5), rng.gen_range(1..=5))
}
