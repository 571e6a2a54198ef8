//! Reference network layouts and seeded random parameters for them.
//!
//! The bundled NetFiles describe LeNet, Alex Krizhevsky's CIFAR-10 network
//! and AlexNet. Trained weights are not shipped; [`random_params`] fills a
//! model with deterministic pseudo-random values of realistic scale, which
//! is enough for shape validation, equivalence testing and benchmarking.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::netfile::{parse_netfile, NetConfig};
use crate::store::{param_file_name, write_layer_params, LayerParams, MemorySource};
use crate::tensor::{Shape4, Tensor4};
use crate::Tensor;

pub const LENET_NETFILE: &str = include_str!("../netfiles/lenet.netfile");
pub const CIFAR10_NETFILE: &str = include_str!("../netfiles/cifar10.netfile");
pub const ALEXNET_NETFILE: &str = include_str!("../netfiles/alexnet.netfile");

/// NetFile text plus the geometry needed to instantiate it.
#[derive(Clone, Debug)]
pub struct ModelTemplate {
    pub name: &'static str,
    pub netfile: String,
    /// Single-image input shape.
    pub input: Shape4,
    /// Weight shape of every conv/fc layer, in NetFile order.
    pub weights: Vec<(String, Shape4)>,
}

impl ModelTemplate {
    pub fn config(&self) -> NetConfig {
        parse_netfile(&self.netfile).expect("bundled NetFile parses")
    }

    pub fn weight_map(&self) -> std::collections::HashMap<String, Shape4> {
        self.weights.iter().cloned().collect()
    }

    /// Writes the NetFile as `net.netfile` and seeded random parameters
    /// into `dir`.
    pub fn write_to(&self, dir: &Path, seed: u64) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("net.netfile"), &self.netfile)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, shape) in &self.weights {
            let params = random_layer(*shape, &mut rng);
            write_layer_params(&dir.join(param_file_name(name)), &params)?;
        }
        Ok(())
    }
}

fn shapes(list: &[(&str, [usize; 4])]) -> Vec<(String, Shape4)> {
    list.iter()
        .map(|(n, d)| (n.to_string(), Shape4::new(d[0], d[1], d[2], d[3])))
        .collect()
}

pub fn lenet() -> ModelTemplate {
    ModelTemplate {
        name: "lenet",
        netfile: LENET_NETFILE.to_string(),
        input: Shape4::new(1, 1, 28, 28),
        weights: shapes(&[
            ("conv1", [20, 1, 5, 5]),
            ("conv2", [50, 20, 5, 5]),
            ("ip1", [500, 800, 1, 1]),
            ("ip2", [10, 500, 1, 1]),
        ]),
    }
}

pub fn cifar10() -> ModelTemplate {
    ModelTemplate {
        name: "cifar10",
        netfile: CIFAR10_NETFILE.to_string(),
        input: Shape4::new(1, 3, 32, 32),
        weights: shapes(&[
            ("conv1", [32, 3, 5, 5]),
            ("conv2", [32, 32, 5, 5]),
            ("conv3", [64, 32, 5, 5]),
            ("ip1", [64, 1024, 1, 1]),
            ("ip2", [10, 64, 1, 1]),
        ]),
    }
}

pub fn alexnet() -> ModelTemplate {
    ModelTemplate {
        name: "alexnet",
        netfile: ALEXNET_NETFILE.to_string(),
        input: Shape4::new(1, 3, 227, 227),
        weights: shapes(&[
            ("conv1", [96, 3, 11, 11]),
            ("conv2", [256, 48, 5, 5]),
            ("conv3", [384, 256, 3, 3]),
            ("conv4", [384, 192, 3, 3]),
            ("conv5", [256, 192, 3, 3]),
            ("fc6", [4096, 9216, 1, 1]),
            ("fc7", [4096, 4096, 1, 1]),
            ("fc8", [1000, 4096, 1, 1]),
        ]),
    }
}

/// AlexNet's first convolution on its own: 3→96 channels, 11×11, stride 4.
pub fn alexnet_conv1() -> ModelTemplate {
    ModelTemplate {
        name: "alexnet-conv1",
        netfile: "execution_mode: parallel\n\nlayer {\n  type: conv\n  name: conv1\n  params_file: model_param_conv1.msg\n  stride: 4\n  fused_relu: true\n}\n".to_string(),
        input: Shape4::new(1, 3, 227, 227),
        weights: shapes(&[("conv1", [96, 3, 11, 11])]),
    }
}

pub fn by_name(name: &str) -> Option<ModelTemplate> {
    match name {
        "lenet" => Some(lenet()),
        "cifar10" => Some(cifar10()),
        "alexnet" => Some(alexnet()),
        "alexnet-conv1" => Some(alexnet_conv1()),
        _ => None,
    }
}

/// Uniform weights in `±1/√fan_in` and small uniform biases.
pub fn random_layer(shape: Shape4, rng: &mut impl Rng) -> LayerParams<f32> {
    let fan_in = shape.image_len().max(1) as f32;
    let bound = 1.0 / fan_in.sqrt();
    let weight = Tensor4::from_fn(shape, |_, _, _, _| rng.gen_range(-bound..bound));
    let bias = (0..shape.n).map(|_| rng.gen_range(-0.1..0.1)).collect();
    LayerParams::new(weight, bias).expect("finite random parameters")
}

pub fn random_params(weights: &[(String, Shape4)], seed: u64) -> MemorySource {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut src = MemorySource::new();
    for (name, shape) in weights {
        src.insert(name.clone(), random_layer(*shape, &mut rng));
    }
    src
}

/// Uniform values in `[-1, 1)`.
pub fn random_tensor(shape: Shape4, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netfile::validate_shapes;

    #[test]
    fn templates_validate() {
        for t in [lenet(), cifar10(), alexnet(), alexnet_conv1()] {
            let cfg = t.config();
            validate_shapes(&cfg, t.input, &t.weight_map()).unwrap_or_else(|e| panic!("{}: {e}", t.name));
        }
    }

    #[test]
    fn random_params_are_seeded() {
        let w = lenet().weights;
        let a = random_params(&w, 7);
        let b = random_params(&w, 7);
        assert_eq!(a.get("conv1"), b.get("conv1"));
        assert_ne!(a.get("conv1"), random_params(&w, 8).get("conv1"));
    }
}
