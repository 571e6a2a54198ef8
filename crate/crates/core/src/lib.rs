//! Forward-pass inference for trained convolutional networks.
//!
//! A network is described by a NetFile ([`netfile`]) and a directory of
//! per-layer MessagePack parameter files ([`store`]). [`engine::Network`]
//! binds the two, decides which layers keep their parameters in memory,
//! and runs batches either sequentially or on a worker pool. The parallel
//! kernels' granularity comes from a [`autotune::TuningProfile`] that the
//! tuner picks by timing every candidate on the host.
//!
//! Kernels are generic over the element type ([`Scalar`]); model files and
//! the engine use `f32`.

pub mod autotune;
pub mod bench;
pub mod engine;
mod error;
pub mod layers;
pub mod netfile;
mod scalar;
pub mod store;
pub mod tensor;
pub mod tensor_io;
pub mod zoo;

pub use autotune::TuningProfile;
pub use engine::{build_network, mse, Network};
pub use error::{Error, Result};
pub use layers::ExecMode;
pub use netfile::{parse_netfile, validate_shapes, NetConfig};
pub use scalar::Scalar;
pub use tensor::{Shape4, Tensor4};

/// The engine's tensor type.
pub type Tensor = Tensor4<f32>;
/// Double-precision tensor, for reference computations.
pub type Tensor64 = Tensor4<f64>;
/// Parameters as stored in model files.
pub type Params = store::LayerParams<f32>;
