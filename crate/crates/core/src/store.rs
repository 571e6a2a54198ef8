//! Layer parameter files and the RAM-budgeted parameter cache.
//!
//! Each conv/fc layer's weights live in their own MessagePack file: a map
//! with keys `"shape"` (4 unsigned ints), `"weight"` and `"bias"` (arrays of
//! float32). Which layers stay resident between inference calls is decided
//! once by [`plan_cache`]; all others are read from storage on every fetch.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use once_cell::sync::OnceCell;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netfile::NetConfig;
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// Bytes per stored parameter value.
pub const PARAM_BYTES: u64 = 4;

/// Canonical parameter file name for a layer.
pub fn param_file_name(layer: &str) -> String {
    format!("model_param_{layer}.msg")
}

/// Weights and biases of one conv or fc layer.
///
/// Conv weights are `[kernels, in_channels/group, kh, kw]`; fc weights are
/// `[out_features, in_features, 1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T = f32> {
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn new(weight: Tensor4<T>, bias: Vec<T>) -> Result<Self> {
        if bias.len() != weight.shape().n {
            return Err(Error::ParamShape(format!(
                "bias has {} values, weight {} needs {}",
                bias.len(),
                weight.shape(),
                weight.shape().n
            )));
        }
        if let Some(i) = weight.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { field: "weight", index: i });
        }
        if let Some(i) = bias.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { field: "bias", index: i });
        }
        Ok(LayerParams { weight, bias })
    }

    /// Storage footprint: weight plus bias elements at 4 bytes each.
    pub fn size_bytes(&self) -> u64 {
        (self.weight.len() + self.bias.len()) as u64 * PARAM_BYTES
    }

    pub fn cast<U: Scalar>(&self) -> LayerParams<U> {
        LayerParams {
            weight: self.weight.cast(),
            bias: self.bias.iter().map(|&b| U::from_f32(b.to_f32())).collect(),
        }
    }
}

/// Shape and bias length of a parameter file, without its payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamHeader {
    pub weight: Shape4,
    pub bias_len: usize,
}

impl ParamHeader {
    pub fn size_bytes(&self) -> u64 {
        (self.weight.len() + self.bias_len) as u64 * PARAM_BYTES
    }
}

/// Expected weight shape; `None` entries match any extent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ShapeSpec(pub [Option<usize>; 4]);

impl ShapeSpec {
    pub fn any() -> Self {
        ShapeSpec([None; 4])
    }

    pub fn exact(shape: Shape4) -> Self {
        ShapeSpec(shape.dims().map(Some))
    }

    pub fn matches(&self, shape: Shape4) -> bool {
        self.0
            .iter()
            .zip(shape.dims())
            .all(|(want, got)| want.map_or(true, |w| w == got))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamFile {
    shape: [u64; 4],
    weight: Vec<f32>,
    bias: Vec<f32>,
}

fn shape_from_dims(dims: [u64; 4]) -> Result<Shape4> {
    let conv = |d: u64| {
        usize::try_from(d).map_err(|_| Error::MalformedParams(format!("dimension {d} too large")))
    };
    let shape = Shape4::new(conv(dims[0])?, conv(dims[1])?, conv(dims[2])?, conv(dims[3])?);
    if shape.checked_len().is_none() {
        return Err(Error::MalformedParams(format!("shape {shape} overflows")));
    }
    Ok(shape)
}

/// Encodes parameters in the MessagePack file schema.
pub fn encode_layer_params(params: &LayerParams<f32>) -> Vec<u8> {
    let file = ParamFile {
        shape: params.weight.shape().dims().map(|d| d as u64),
        weight: params.weight.data().to_vec(),
        bias: params.bias.clone(),
    };
    rmp_serde::to_vec_named(&file).expect("in-memory MessagePack encoding cannot fail")
}

/// Decodes and validates a MessagePack parameter payload.
pub fn decode_layer_params(bytes: &[u8], expected: ShapeSpec) -> Result<LayerParams<f32>> {
    let file: ParamFile =
        rmp_serde::from_slice(bytes).map_err(|e| Error::MalformedParams(e.to_string()))?;
    let shape = shape_from_dims(file.shape)?;
    let want = shape.len();
    if file.weight.len() != want {
        return Err(Error::ParamShape(format!(
            "declared shape {shape} expected {want} weight values, found {}",
            file.weight.len()
        )));
    }
    if !expected.matches(shape) {
        return Err(Error::ParamShape(format!(
            "weight shape {shape} does not match expected {:?}",
            expected.0
        )));
    }
    let weight = Tensor4::new(shape, file.weight)?;
    LayerParams::new(weight, file.bias)
}

pub fn write_layer_params(path: &Path, params: &LayerParams<f32>) -> Result<()> {
    std::fs::write(path, encode_layer_params(params)).map_err(|source| Error::ParamIo {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_layer_params(path: &Path, expected: ShapeSpec) -> Result<LayerParams<f32>> {
    let bytes = std::fs::read(path).map_err(|source| Error::ParamIo {
        path: path.to_path_buf(),
        source,
    })?;
    decode_layer_params(&bytes, expected)
}

fn malformed(e: impl std::fmt::Display) -> Error {
    Error::MalformedParams(e.to_string())
}

/// Skips a float32 array of `len` elements. Each element is a float32 marker
/// byte plus four payload bytes.
fn skip_f32_array<R: Read>(reader: &mut R, len: u32) -> Result<()> {
    let mut buf = [0u8; 5];
    for _ in 0..len {
        reader.read_exact(&mut buf).map_err(malformed)?;
        if buf[0] != 0xca {
            return Err(Error::MalformedParams(format!(
                "expected float32 marker, found 0x{:02x}",
                buf[0]
            )));
        }
    }
    Ok(())
}

/// Reads only the shape and bias length of a parameter file.
pub fn probe_layer_params(path: &Path) -> Result<ParamHeader> {
    let file = File::open(path).map_err(|source| Error::ParamIo {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = BufReader::new(file);
    let entries = rmp::decode::read_map_len(&mut reader).map_err(malformed)?;
    let mut shape = None;
    let mut weight_len = None;
    let mut bias_len = None;
    for _ in 0..entries {
        let key_len = rmp::decode::read_str_len(&mut reader).map_err(malformed)?;
        let mut key = vec![0u8; key_len as usize];
        reader.read_exact(&mut key).map_err(malformed)?;
        match key.as_slice() {
            b"shape" => {
                let n = rmp::decode::read_array_len(&mut reader).map_err(malformed)?;
                if n != 4 {
                    return Err(Error::MalformedParams(format!("shape has {n} entries, expected 4")));
                }
                let mut dims = [0u64; 4];
                for d in &mut dims {
                    *d = rmp::decode::read_int(&mut reader).map_err(malformed)?;
                }
                shape = Some(shape_from_dims(dims)?);
            }
            b"weight" | b"bias" => {
                let n = rmp::decode::read_array_len(&mut reader).map_err(malformed)?;
                skip_f32_array(&mut reader, n)?;
                if key == b"weight" {
                    weight_len = Some(n as usize);
                } else {
                    bias_len = Some(n as usize);
                }
            }
            other => {
                return Err(Error::MalformedParams(format!(
                    "unknown key `{}`",
                    String::from_utf8_lossy(other)
                )))
            }
        }
    }
    let (Some(shape), Some(weight_len), Some(bias_len)) = (shape, weight_len, bias_len) else {
        return Err(Error::MalformedParams(
            "missing one of `shape`, `weight`, `bias`".into(),
        ));
    };
    if weight_len != shape.len() {
        return Err(Error::ParamShape(format!(
            "declared shape {shape} expected {} weight values, found {weight_len}",
            shape.len()
        )));
    }
    if bias_len != shape.n {
        return Err(Error::ParamShape(format!(
            "bias has {bias_len} values, weight {shape} needs {}",
            shape.n
        )));
    }
    Ok(ParamHeader {
        weight: shape,
        bias_len,
    })
}

/// Which layers keep their parameters in memory across inference calls.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CachePlan {
    pub resident: BTreeSet<String>,
    pub resident_bytes: u64,
    pub budget_bytes: u64,
}

impl CachePlan {
    pub fn is_resident(&self, layer: &str) -> bool {
        self.resident.contains(layer)
    }
}

/// Greedy largest-first selection of resident layers.
///
/// `sizes` is in NetFile order. Layers are visited by descending size (ties
/// keep NetFile order) and each is taken if it fits in what is left of the
/// budget; a layer that does not fit is skipped and the scan continues.
pub fn plan_cache(sizes: &[(String, u64)], budget_mb: u64) -> CachePlan {
    let budget_bytes = budget_mb.saturating_mul(1 << 20);
    let mut order: Vec<&(String, u64)> = sizes.iter().collect();
    order.sort_by(|a, b| b.1.cmp(&a.1));

    let mut plan = CachePlan {
        budget_bytes,
        ..CachePlan::default()
    };
    for (name, size) in order {
        if plan.resident_bytes + size <= budget_bytes {
            plan.resident_bytes += size;
            plan.resident.insert(name.clone());
        }
    }
    plan
}

/// Where layer parameters come from.
pub trait ParamSource: Send + Sync {
    /// Shape information without loading the payload.
    fn describe(&self, layer: &str) -> Result<ParamHeader>;

    /// Full read of a layer's parameters.
    fn load(&self, layer: &str) -> Result<LayerParams<f32>>;
}

/// Parameter files in a model directory, resolved through NetFile
/// `params_file` entries.
#[derive(Clone, Debug)]
pub struct DirSource {
    files: HashMap<String, PathBuf>,
}

impl DirSource {
    pub fn new(model_dir: &Path, cfg: &NetConfig) -> Self {
        let files = cfg
            .layers
            .iter()
            .filter_map(|l| l.params_file().map(|f| (l.name.clone(), model_dir.join(f))))
            .collect();
        DirSource { files }
    }

    pub fn path(&self, layer: &str) -> Result<&Path> {
        self.files
            .get(layer)
            .map(PathBuf::as_path)
            .ok_or_else(|| Error::UnknownParams(layer.to_string()))
    }
}

impl ParamSource for DirSource {
    fn describe(&self, layer: &str) -> Result<ParamHeader> {
        probe_layer_params(self.path(layer)?)
    }

    fn load(&self, layer: &str) -> Result<LayerParams<f32>> {
        load_layer_params(self.path(layer)?, ShapeSpec::any())
    }
}

/// In-memory parameters, used for generated networks and tests.
#[derive(Clone, Debug, Default)]
pub struct MemorySource {
    params: HashMap<String, LayerParams<f32>>,
}

impl MemorySource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, layer: impl Into<String>, params: LayerParams<f32>) {
        self.params.insert(layer.into(), params);
    }

    pub fn get(&self, layer: &str) -> Option<&LayerParams<f32>> {
        self.params.get(layer)
    }

    /// Writes every layer as `model_param_<name>.msg` under `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        for (name, params) in &self.params {
            write_layer_params(&dir.join(param_file_name(name)), params)?;
        }
        Ok(())
    }
}

impl ParamSource for MemorySource {
    fn describe(&self, layer: &str) -> Result<ParamHeader> {
        let p = self
            .params
            .get(layer)
            .ok_or_else(|| Error::UnknownParams(layer.to_string()))?;
        Ok(ParamHeader {
            weight: p.weight.shape(),
            bias_len: p.bias.len(),
        })
    }

    fn load(&self, layer: &str) -> Result<LayerParams<f32>> {
        self.params
            .get(layer)
            .cloned()
            .ok_or_else(|| Error::UnknownParams(layer.to_string()))
    }
}

struct Slot {
    header: ParamHeader,
    resident: Option<OnceCell<Arc<LayerParams<f32>>>>,
    reads: AtomicUsize,
}

/// Serves layer parameters according to a [`CachePlan`].
///
/// Resident layers are loaded on first fetch and kept; concurrent first
/// fetches block until one load completes. Non-resident layers are loaded on
/// every fetch and dropped by the caller after use.
pub struct ParamCache {
    source: Arc<dyn ParamSource>,
    plan: CachePlan,
    slots: HashMap<String, Slot>,
}

impl ParamCache {
    /// Registers `layers` (with their probed headers) against `plan`.
    pub fn new(
        source: Arc<dyn ParamSource>,
        plan: CachePlan,
        layers: impl IntoIterator<Item = (String, ParamHeader)>,
    ) -> Self {
        let slots = layers
            .into_iter()
            .map(|(name, header)| {
                let resident = plan.is_resident(&name).then(OnceCell::new);
                (
                    name,
                    Slot {
                        header,
                        resident,
                        reads: AtomicUsize::new(0),
                    },
                )
            })
            .collect();
        ParamCache {
            source,
            plan,
            slots,
        }
    }

    pub fn plan(&self) -> &CachePlan {
        &self.plan
    }

    pub fn header(&self, layer: &str) -> Option<ParamHeader> {
        self.slots.get(layer).map(|s| s.header)
    }

    fn read(&self, layer: &str, slot: &Slot) -> Result<Arc<LayerParams<f32>>> {
        slot.reads.fetch_add(1, Ordering::SeqCst);
        let params = self.source.load(layer)?;
        if params.weight.shape() != slot.header.weight || params.bias.len() != slot.header.bias_len {
            return Err(Error::ParamShape(format!(
                "parameters changed since the network was built: expected {}, found {}",
                slot.header.weight,
                params.weight.shape()
            )));
        }
        Ok(Arc::new(params))
    }

    pub fn fetch(&self, layer: &str) -> Result<Arc<LayerParams<f32>>> {
        let slot = self
            .slots
            .get(layer)
            .ok_or_else(|| Error::UnknownParams(layer.to_string()))?;
        match &slot.resident {
            Some(cell) => cell.get_or_try_init(|| self.read(layer, slot)).cloned(),
            None => self.read(layer, slot),
        }
    }

    /// Storage reads performed for `layer` so far.
    pub fn reads(&self, layer: &str) -> usize {
        self.slots
            .get(layer)
            .map_or(0, |s| s.reads.load(Ordering::SeqCst))
    }

    pub fn total_reads(&self) -> usize {
        self.slots.values().map(|s| s.reads.load(Ordering::SeqCst)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(shape: Shape4, seed: f32) -> LayerParams<f32> {
        let weight = Tensor4::from_fn(shape, |n, c, y, x| seed + (n * 7 + c * 5 + y * 3 + x) as f32 * 0.25);
        let bias = (0..shape.n).map(|i| i as f32 - seed).collect();
        LayerParams::new(weight, bias).unwrap()
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.msg");
        let p = LayerParams::new(
            Tensor4::new(Shape4::new(2, 1, 1, 1), vec![1.0, 2.0]).unwrap(),
            vec![0.0, 0.0],
        )
        .unwrap();
        write_layer_params(&path, &p).unwrap();
        assert_eq!(load_layer_params(&path, ShapeSpec::any()).unwrap(), p);
        assert_eq!(
            probe_layer_params(&path).unwrap(),
            ParamHeader {
                weight: Shape4::new(2, 1, 1, 1),
                bias_len: 2
            }
        );
    }

    #[test]
    fn encoding_uses_float32_and_named_keys() {
        let p = params(Shape4::new(1, 1, 1, 2), 0.5);
        let bytes = encode_layer_params(&p);
        // fixmap with three entries
        assert_eq!(bytes[0], 0x83);
        let value: rmpv_free::Value = rmpv_free::decode(&bytes);
        assert_eq!(value.keys, vec!["shape", "weight", "bias"]);
        assert!(value.float32_only);
    }

    /// Minimal structural reader for the test above, independent of the
    /// serde path.
    mod rmpv_free {
        use rmp::Marker;

        pub struct Value {
            pub keys: Vec<String>,
            pub float32_only: bool,
        }

        pub fn decode(mut bytes: &[u8]) -> Value {
            let rd = &mut bytes;
            let n = rmp::decode::read_map_len(rd).unwrap();
            let mut keys = Vec::new();
            let mut float32_only = true;
            for _ in 0..n {
                let mut buf = [0u8; 16];
                let key = rmp::decode::read_str(rd, &mut buf).unwrap().to_string();
                let len = rmp::decode::read_array_len(rd).unwrap();
                for _ in 0..len {
                    if key == "shape" {
                        let _: u64 = rmp::decode::read_int(rd).unwrap();
                    } else {
                        let marker = rmp::decode::read_marker(rd).unwrap();
                        float32_only &= matches!(marker, Marker::F32);
                        *rd = &rd[4..];
                    }
                }
                keys.push(key);
            }
            Value { keys, float32_only }
        }
    }

    #[test]
    fn truncated_payload_is_malformed() {
        let bytes = encode_layer_params(&params(Shape4::new(2, 2, 3, 3), 1.0));
        for cut in [1, bytes.len() / 2, bytes.len() - 1] {
            let err = decode_layer_params(&bytes[..cut], ShapeSpec::any()).unwrap_err();
            assert!(matches!(err, Error::MalformedParams(_)), "cut {cut}: {err}");
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.msg");
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            probe_layer_params(&path),
            Err(Error::MalformedParams(_))
        ));
    }

    #[test]
    fn declared_shape_must_match_weight_count() {
        let file = ParamFile {
            shape: [4, 3, 3, 3],
            weight: vec![0.5; 100],
            bias: vec![0.0; 4],
        };
        let bytes = rmp_serde::to_vec_named(&file).unwrap();
        let err = decode_layer_params(&bytes, ShapeSpec::any()).unwrap_err();
        assert!(matches!(err, Error::ParamShape(_)));
        assert!(err.to_string().contains("expected 108"), "{err}");
    }

    #[test]
    fn rejects_non_finite_and_unexpected_shapes() {
        let file = ParamFile {
            shape: [1, 1, 1, 2],
            weight: vec![1.0, f32::NAN],
            bias: vec![0.0],
        };
        let bytes = rmp_serde::to_vec_named(&file).unwrap();
        assert!(matches!(
            decode_layer_params(&bytes, ShapeSpec::any()),
            Err(Error::NonFinite { field: "weight", index: 1 })
        ));

        let bytes = encode_layer_params(&params(Shape4::new(2, 3, 1, 1), 0.0));
        let want = ShapeSpec([None, Some(4), None, None]);
        assert!(matches!(
            decode_layer_params(&bytes, want),
            Err(Error::ParamShape(_))
        ));
        let want = ShapeSpec([None, Some(3), Some(1), Some(1)]);
        assert!(decode_layer_params(&bytes, want).is_ok());
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = load_layer_params(Path::new("/nonexistent/p.msg"), ShapeSpec::any()).unwrap_err();
        assert!(matches!(err, Error::ParamIo { .. }));
    }

    const MB: u64 = 1 << 20;

    fn named(sizes: &[(&str, u64)]) -> Vec<(String, u64)> {
        sizes.iter().map(|(n, s)| (n.to_string(), *s)).collect()
    }

    #[test]
    fn greedy_skips_layers_that_do_not_fit() {
        let plan = plan_cache(&named(&[("A", 100 * MB), ("B", 50 * MB), ("C", 30 * MB)]), 140);
        let expected: BTreeSet<String> = ["A", "C"].iter().map(|s| s.to_string()).collect();
        assert_eq!(plan.resident, expected);
        assert_eq!(plan.resident_bytes, 130 * MB);
    }

    #[test]
    fn zero_budget_and_ample_budget() {
        let sizes = named(&[("a", 10), ("b", 20), ("c", 30)]);
        assert!(plan_cache(&sizes, 0).resident.is_empty());
        assert_eq!(plan_cache(&sizes, 1).resident.len(), 3);
    }

    #[test]
    fn ties_prefer_earlier_layers() {
        let sizes = named(&[("x", MB), ("y", MB), ("z", MB)]);
        let plan = plan_cache(&sizes, 2);
        let expected: BTreeSet<String> = ["x", "y"].iter().map(|s| s.to_string()).collect();
        assert_eq!(plan.resident, expected);
    }

    #[test]
    fn greedy_with_skip_is_not_monotone_in_budget() {
        // A larger budget can swap a smaller layer out for a mid-sized one.
        let sizes = named(&[("a", 6 * MB), ("b", 5 * MB), ("c", 4 * MB)]);
        assert!(plan_cache(&sizes, 10).is_resident("c"));
        assert!(!plan_cache(&sizes, 11).is_resident("c"));
    }

    fn cache_for(resident: &[&str]) -> (ParamCache, MemorySource) {
        let mut src = MemorySource::new();
        for (i, name) in ["l0", "l1", "l2"].iter().enumerate() {
            src.insert(*name, params(Shape4::new(2, 1, 2, 2), i as f32));
        }
        let plan = CachePlan {
            resident: resident.iter().map(|s| s.to_string()).collect(),
            ..CachePlan::default()
        };
        let headers: Vec<_> = ["l0", "l1", "l2"]
            .iter()
            .map(|n| (n.to_string(), src.describe(n).unwrap()))
            .collect();
        (ParamCache::new(Arc::new(src.clone()), plan, headers), src)
    }

    #[test]
    fn resident_layers_are_read_once() {
        let (cache, _) = cache_for(&["l1"]);
        let a = cache.fetch("l1").unwrap();
        let b = cache.fetch("l1").unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(cache.reads("l1"), 1);
    }

    #[test]
    fn non_resident_layers_are_read_every_time() {
        let (cache, src) = cache_for(&["l1"]);
        let a = cache.fetch("l0").unwrap();
        let b = cache.fetch("l0").unwrap();
        assert_eq!(cache.reads("l0"), 2);
        assert_eq!(*a, *b);
        assert_eq!(*a, *src.get("l0").unwrap());
    }

    #[test]
    fn empty_plan_reads_each_layer_per_pass() {
        let (cache, _) = cache_for(&[]);
        for name in ["l0", "l1", "l2"] {
            cache.fetch(name).unwrap();
        }
        assert_eq!(cache.total_reads(), 3);
        assert!(matches!(cache.fetch("nope"), Err(Error::UnknownParams(_))));
    }

    #[test]
    fn concurrent_first_fetch_loads_once() {
        let (cache, _) = cache_for(&["l2"]);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| cache.fetch("l2").unwrap());
            }
        });
        assert_eq!(cache.reads("l2"), 1);
    }

    /// Reference greedy: repeatedly take the largest remaining layer (earliest
    /// on ties) that still fits.
    fn greedy_oracle(sizes: &[(String, u64)], budget: u64) -> BTreeSet<String> {
        let mut taken = vec![false; sizes.len()];
        let mut considered = vec![false; sizes.len()];
        let mut used = 0u64;
        loop {
            let mut best: Option<usize> = None;
            for i in 0..sizes.len() {
                if considered[i] {
                    continue;
                }
                if best.map_or(true, |b| sizes[i].1 > sizes[b].1) {
                    best = Some(i);
                }
            }
            let Some(i) = best else { break };
            considered[i] = true;
            if used + sizes[i].1 <= budget {
                used += sizes[i].1;
                taken[i] = true;
            }
        }
        sizes
            .iter()
            .zip(taken)
            .filter(|(_, t)| *t)
            .map(|(s, _)| s.0.clone())
            .collect()
    }

    proptest! {
        #[test]
        fn plan_never_exceeds_budget(
            sizes in proptest::collection::vec(1u64..64 * MB, 0..12),
            budget in 0u64..256,
        ) {
            let sizes: Vec<_> = sizes.into_iter().enumerate().map(|(i, s)| (format!("l{i}"), s)).collect();
            let plan = plan_cache(&sizes, budget);
            prop_assert!(plan.resident_bytes <= budget * MB);
            let sum: u64 = sizes.iter().filter(|(n, _)| plan.is_resident(n)).map(|(_, s)| s).sum();
            prop_assert_eq!(sum, plan.resident_bytes);
            prop_assert_eq!(plan.resident, greedy_oracle(&sizes, budget * MB));
        }

        #[test]
        fn largest_first_prefix_stays_resident(
            sizes in proptest::collection::vec(1u64..64 * MB, 1..10),
            budget in 0u64..256,
            extra in 0u64..256,
        ) {
            // Layers taken before the first skip remain resident under any
            // larger budget.
            let sizes: Vec<_> = sizes.into_iter().enumerate().map(|(i, s)| (format!("l{i}"), s)).collect();
            let mut order: Vec<_> = sizes.iter().collect();
            order.sort_by(|a, b| b.1.cmp(&a.1));
            let mut used = 0;
            let mut prefix = Vec::new();
            for (name, size) in order {
                if used + size > budget * MB {
                    break;
                }
                used += size;
                prefix.push(name.clone());
            }
            let bigger = plan_cache(&sizes, budget + extra);
            for name in prefix {
                prop_assert!(bigger.is_resident(&name));
            }
        }

        #[test]
        fn fetch_is_value_identical_regardless_of_residency(resident in any::<bool>()) {
            let (cache, src) = cache_for(if resident { &["l0", "l1", "l2"] } else { &[] });
            for name in ["l0", "l1", "l2"] {
                prop_assert_eq!(&*cache.fetch(name).unwrap(), src.get(name).unwrap());
            }
        }
    }
}
