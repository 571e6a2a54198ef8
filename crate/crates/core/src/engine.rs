//! End-to-end forward execution of a NetFile-described network.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::autotune::{load_profile, TuningProfile, PROFILE_FILE_NAME};
use crate::error::{Error, Result};
use crate::layers::{
    conv_forward, fc_forward, lrn_forward, pool_forward, relu, softmax, ConvGeometry, ExecMode,
};
use crate::netfile::{validate_shapes, ExecutionMode, LayerKind, LayerOp, LayerSpec, NetConfig};
use crate::store::{plan_cache, CachePlan, DirSource, LayerParams, ParamCache, ParamSource};
use crate::tensor::{Shape4, ShapeError};
use crate::Tensor;

/// Folds every standalone ReLU that directly follows a conv or fc layer into
/// that layer's `fused_relu` flag. Other standalone ReLUs are kept.
pub fn fuse_relu(cfg: &NetConfig) -> NetConfig {
    let mut layers: Vec<LayerSpec> = Vec::with_capacity(cfg.layers.len());
    for layer in &cfg.layers {
        if layer.kind() == LayerKind::Relu {
            if let Some(prev) = layers.last_mut() {
                if prev.fuse_relu() {
                    continue;
                }
            }
        }
        layers.push(layer.clone());
    }
    NetConfig {
        layers,
        ..cfg.clone()
    }
}

/// Optional overrides applied when building a network.
#[derive(Clone, Debug, Default)]
pub struct BuildOptions {
    /// Worker threads for parallel mode; `None` uses all available.
    pub threads: Option<usize>,
    /// Replaces the profile that would otherwise be loaded from disk.
    pub profile: Option<TuningProfile>,
}

/// Wall time spent on one layer during a compute call.
#[derive(Clone, Debug)]
pub struct LayerTiming {
    pub name: String,
    pub kind: LayerKind,
    /// Parameter fetch (zero for layers without parameters or when served
    /// from the cache without a read).
    pub fetch: Duration,
    pub compute: Duration,
}

/// A bound, ready-to-run network.
pub struct Network {
    config: NetConfig,
    input: Shape4,
    shapes: Vec<Shape4>,
    cache: ParamCache,
    profile: TuningProfile,
    profile_tuned: bool,
    pool: Arc<rayon::ThreadPool>,
}

/// Inputs and parameters of the conv/fc layers, captured for repeated
/// timing by the tuner and benchmarks.
pub struct Workload {
    items: Vec<(usize, Tensor, Arc<LayerParams<f32>>)>,
}

impl Workload {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Builds a network whose parameter files live in `model_dir`. A tuning
/// profile saved in the same directory is picked up if present.
pub fn build_network(cfg: &NetConfig, model_dir: &Path, input_shape: Shape4) -> Result<Network> {
    build_network_with(cfg, model_dir, input_shape, BuildOptions::default())
}

pub fn build_network_with(
    cfg: &NetConfig,
    model_dir: &Path,
    input_shape: Shape4,
    mut options: BuildOptions,
) -> Result<Network> {
    let tuned = if options.profile.is_none() {
        let loaded = load_profile(&model_dir.join(PROFILE_FILE_NAME))?;
        options.profile = Some(loaded.profile);
        loaded.tuned
    } else {
        true
    };
    let source = Arc::new(DirSource::new(model_dir, cfg));
    let mut net = Network::from_source(cfg, source, input_shape, options)?;
    net.profile_tuned = tuned;
    Ok(net)
}

impl Network {
    /// Builds a network over an arbitrary parameter source.
    pub fn from_source(
        cfg: &NetConfig,
        source: Arc<dyn ParamSource>,
        input_shape: Shape4,
        options: BuildOptions,
    ) -> Result<Network> {
        let config = fuse_relu(cfg);

        let mut headers = Vec::new();
        for layer in config.layers.iter().filter(|l| l.kind().has_params()) {
            let header = source
                .describe(&layer.name)
                .map_err(|e| Error::in_layer(&layer.name, e))?;
            headers.push((layer.name.clone(), header));
        }
        let weights: HashMap<String, Shape4> =
            headers.iter().map(|(n, h)| (n.clone(), h.weight)).collect();
        let shapes = validate_shapes(&config, input_shape, &weights)?;

        let sizes: Vec<(String, u64)> = headers
            .iter()
            .map(|(n, h)| (n.clone(), h.size_bytes()))
            .collect();
        let plan = plan_cache(&sizes, config.allocated_ram);
        let cache = ParamCache::new(source, plan, headers);

        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(threads) = options.threads {
            builder = builder.num_threads(threads);
        }
        let pool = builder
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;

        Ok(Network {
            config,
            input: input_shape,
            shapes,
            cache,
            profile: options.profile.unwrap_or_default(),
            profile_tuned: options.profile.is_some(),
            pool: Arc::new(pool),
        })
    }

    /// Layer list after ReLU fusion.
    pub fn layers(&self) -> &[LayerSpec] {
        &self.config.layers
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn input_shape(&self) -> Shape4 {
        self.input
    }

    /// Output shape of every layer for the bound input shape.
    pub fn shapes(&self) -> &[Shape4] {
        &self.shapes
    }

    pub fn output_shape(&self, batch: usize) -> Shape4 {
        self.shapes.last().copied().unwrap_or(self.input).with_batch(batch)
    }

    pub fn plan(&self) -> &CachePlan {
        self.cache.plan()
    }

    pub fn cache(&self) -> &ParamCache {
        &self.cache
    }

    pub fn profile(&self) -> TuningProfile {
        self.profile
    }

    /// Whether the profile came from a saved file or an explicit override.
    pub fn profile_tuned(&self) -> bool {
        self.profile_tuned
    }

    pub fn set_profile(&mut self, profile: TuningProfile) {
        self.profile = profile;
        self.profile_tuned = true;
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }

    /// Execution mode named in the NetFile, with the current profile.
    pub fn default_mode(&self) -> ExecMode {
        ExecMode::new(self.config.execution_mode, self.profile)
    }

    pub fn mode(&self, mode: ExecutionMode) -> ExecMode {
        ExecMode::new(mode, self.profile)
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let s = batch.shape();
        if s.n == 0 || (s.c, s.h, s.w) != (self.input.c, self.input.h, self.input.w) {
            return Err(ShapeError::Mismatch(format!(
                "batch shape {s} does not match network input {}",
                self.input.with_batch(s.n.max(1))
            ))
            .into());
        }
        Ok(())
    }

    fn apply(&self, layer: &LayerSpec, input: &Tensor, params: Option<&LayerParams<f32>>, mode: ExecMode) -> Result<Tensor> {
        let need = || Error::UnknownParams(layer.name.clone());
        match &layer.op {
            LayerOp::Conv {
                pad,
                stride,
                group,
                fused_relu,
                ..
            } => {
                let geom = ConvGeometry {
                    pad: *pad,
                    stride: *stride,
                    group: *group,
                };
                conv_forward(input, params.ok_or_else(need)?, geom, *fused_relu, mode)
            }
            LayerOp::Fc { fused_relu, .. } => fc_forward(input, params.ok_or_else(need)?, *fused_relu, mode),
            LayerOp::Pool {
                kernel_h,
                kernel_w,
                stride,
                mode: pool,
            } => pool_forward(input, *kernel_h, *kernel_w, *stride, *pool, mode),
            LayerOp::Relu => Ok(relu(input, mode)),
            LayerOp::Lrn(p) => lrn_forward(input, *p, mode),
            LayerOp::Softmax => Ok(softmax(input, mode)),
        }
    }

    fn run(&self, batch: &Tensor, mode: ExecMode, mut timings: Option<&mut Vec<LayerTiming>>) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut body = move || {
            let mut current: Option<Tensor> = None;
            for layer in &self.config.layers {
                let input = current.as_ref().unwrap_or(batch);
                let fetch_start = Instant::now();
                // Non-resident parameters are dropped at the end of this
                // iteration.
                let params = if layer.kind().has_params() {
                    Some(
                        self.cache
                            .fetch(&layer.name)
                            .map_err(|e| Error::in_layer(&layer.name, e))?,
                    )
                } else {
                    None
                };
                let fetch = fetch_start.elapsed();
                let start = Instant::now();
                let out = self
                    .apply(layer, input, params.as_deref(), mode)
                    .map_err(|e| Error::in_layer(&layer.name, e))?;
                if let Some(t) = timings.as_deref_mut() {
                    t.push(LayerTiming {
                        name: layer.name.clone(),
                        kind: layer.kind(),
                        fetch,
                        compute: start.elapsed(),
                    });
                }
                current = Some(out);
            }
            Ok(current.unwrap_or_else(|| batch.clone()))
        };
        match mode {
            ExecMode::Sequential => body(),
            ExecMode::Parallel(_) => self.pool.install(body),
        }
    }

    /// Runs the network in the NetFile's execution mode.
    pub fn compute(&self, batch: &Tensor) -> Result<Tensor> {
        self.run(batch, self.default_mode(), None)
    }

    pub fn compute_with(&self, batch: &Tensor, mode: ExecMode) -> Result<Tensor> {
        self.run(batch, mode, None)
    }

    /// Like [`Network::compute_with`], also reporting per-layer timings.
    pub fn compute_timed(&self, batch: &Tensor, mode: ExecMode) -> Result<(Tensor, Vec<LayerTiming>)> {
        let mut timings = Vec::with_capacity(self.config.layers.len());
        let out = self.run(batch, mode, Some(&mut timings))?;
        Ok((out, timings))
    }

    /// Captures each conv/fc layer's input (from a sequential pass over
    /// `sample`) together with its parameters.
    pub fn heavy_layer_workload(&self, sample: &Tensor) -> Result<Workload> {
        self.check_batch(sample)?;
        let mut items = Vec::new();
        let mut current = sample.clone();
        for (idx, layer) in self.config.layers.iter().enumerate() {
            let params = if layer.kind().has_params() {
                Some(self.cache.fetch(&layer.name).map_err(|e| Error::in_layer(&layer.name, e))?)
            } else {
                None
            };
            let out = self
                .apply(layer, &current, params.as_deref(), ExecMode::Sequential)
                .map_err(|e| Error::in_layer(&layer.name, e))?;
            if let Some(p) = params {
                items.push((idx, std::mem::replace(&mut current, out), p));
            } else {
                current = out;
            }
        }
        Ok(Workload { items })
    }

    /// Runs the captured conv/fc layers once; returns their outputs.
    pub fn run_workload(&self, workload: &Workload, mode: ExecMode) -> Result<Vec<Tensor>> {
        let body = || {
            workload
                .items
                .iter()
                .map(|(idx, input, params)| {
                    let layer = &self.config.layers[*idx];
                    self.apply(layer, input, Some(params), mode)
                        .map_err(|e| Error::in_layer(&layer.name, e))
                })
                .collect()
        };
        match mode {
            ExecMode::Sequential => body(),
            ExecMode::Parallel(_) => self.pool.install(body),
        }
    }
}

/// Mean squared difference, accumulated in `f64`.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(ShapeError::Mismatch(format!(
            "cannot compare tensors of shapes {} and {}",
            a.shape(),
            b.shape()
        ))
        .into());
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netfile::parse_netfile;
    use crate::store::MemorySource;

    fn tensor(shape: Shape4, data: Vec<f32>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn relu_after_conv_is_fused() {
        let cfg = parse_netfile(
            "layer {\n type: conv\n name: c\n params_file: c.msg\n}\n\
             layer {\n type: relu\n name: r\n}\n\
             layer {\n type: relu\n name: r2\n}\n\
             layer {\n type: pool\n name: p\n pool_mode: max\n kernel_h: 1\n kernel_w: 1\n}\n",
        )
        .unwrap();
        let fused = fuse_relu(&cfg);
        let kinds: Vec<_> = fused.layers.iter().map(|l| l.kind()).collect();
        assert_eq!(kinds, vec![LayerKind::Conv, LayerKind::Pool]);
        assert!(fused.layers[0].fused_relu());
    }

    #[test]
    fn lone_relu_is_kept() {
        let cfg = parse_netfile("layer {\n type: relu\n name: r\n}\n").unwrap();
        assert_eq!(fuse_relu(&cfg).layers.len(), 1);
        let cfg = parse_netfile(
            "layer {\n type: pool\n name: p\n pool_mode: max\n kernel_h: 1\n kernel_w: 1\n}\nlayer {\n type: relu\n name: r\n}\n",
        )
        .unwrap();
        assert_eq!(fuse_relu(&cfg).layers.len(), 2);
    }

    #[test]
    fn single_relu_network() {
        let cfg = parse_netfile("layer {\n type: relu\n name: r\n}\n").unwrap();
        let net = Network::from_source(
            &cfg,
            Arc::new(MemorySource::new()),
            Shape4::new(1, 2, 1, 1),
            BuildOptions::default(),
        )
        .unwrap();
        let out = net.compute(&tensor(Shape4::new(1, 2, 1, 1), vec![-1.0, 2.0])).unwrap();
        assert_eq!(out.data(), &[0.0, 2.0]);
        assert!(net.plan().resident.is_empty());
        assert!(net.compute(&tensor(Shape4::new(1, 3, 1, 1), vec![0.0; 3])).is_err());
    }

    #[test]
    fn missing_parameters_name_the_layer() {
        let cfg = parse_netfile("layer {\n type: fc\n name: ip1\n params_file: nope.msg\n}\n").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let err = build_network(&cfg, dir.path(), Shape4::new(1, 4, 1, 1)).err().unwrap();
        assert!(matches!(err, Error::Layer { ref layer, .. } if layer == "ip1"), "{err}");
    }

    #[test]
    fn mse_examples() {
        let s = Shape4::new(1, 2, 1, 1);
        let a = tensor(s, vec![0.0, 0.0]);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &tensor(s, vec![1.0, 1.0])).unwrap(), 1.0);
        assert_eq!(mse(&tensor(s, vec![0.0, 2.0]), &tensor(s, vec![1.0, 2.0])).unwrap(), 0.5);
        assert!(mse(&a, &tensor(Shape4::new(1, 1, 1, 2), vec![0.0, 0.0])).is_err());
    }
}
