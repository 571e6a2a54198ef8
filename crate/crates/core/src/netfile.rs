//! NetFile: the text description of a network's layer sequence and its
//! runtime parameters.
//!
//! The format is line oriented. Top-level `key: value` lines set the runtime
//! parameters (`allocated_ram`, `execution_mode`, `auto_tuning`); each layer
//! is a `layer {` ... `}` block holding one `key: value` per line. `#` starts
//! a comment that runs to the end of the line. See `docs/netfile.md` for the
//! complete grammar.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{conv_output_shape, pool_output_shape, Shape4, ShapeError};

/// A diagnostic tied to a (1-based) line of the NetFile.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl ParseError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        ParseError {
            line,
            message: message.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    Pool,
    Fc,
    Relu,
    Lrn,
    Softmax,
}

impl LayerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Pool => "pool",
            LayerKind::Fc => "fc",
            LayerKind::Relu => "relu",
            LayerKind::Lrn => "lrn",
            LayerKind::Softmax => "softmax",
        }
    }

    /// Whether layers of this kind carry a parameter file.
    pub fn has_params(&self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::Fc)
    }
}

impl FromStr for LayerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "conv" => LayerKind::Conv,
            "pool" => LayerKind::Pool,
            "fc" => LayerKind::Fc,
            "relu" => LayerKind::Relu,
            "lrn" => LayerKind::Lrn,
            "softmax" => LayerKind::Softmax,
            other => return Err(format!("unknown layer kind `{other}`")),
        })
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolMode {
    Max,
    Mean,
}

impl PoolMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PoolMode::Max => "max",
            PoolMode::Mean => "mean",
        }
    }
}

impl FromStr for PoolMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "max" => Ok(PoolMode::Max),
            "mean" => Ok(PoolMode::Mean),
            other => Err(format!("invalid pool_mode `{other}` (expected max or mean)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum ExecutionMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecutionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExecutionMode::Sequential => "sequential",
            ExecutionMode::Parallel => "parallel",
        }
    }
}

impl FromStr for ExecutionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sequential" => Ok(ExecutionMode::Sequential),
            "parallel" => Ok(ExecutionMode::Parallel),
            other => Err(format!(
                "invalid execution_mode `{other}` (expected sequential or parallel)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum AutoTuning {
    On,
    #[default]
    Off,
}

impl AutoTuning {
    pub fn as_str(&self) -> &'static str {
        match self {
            AutoTuning::On => "on",
            AutoTuning::Off => "off",
        }
    }
}

impl FromStr for AutoTuning {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "on" => Ok(AutoTuning::On),
            "off" => Ok(AutoTuning::Off),
            other => Err(format!("invalid auto_tuning `{other}` (expected on or off)")),
        }
    }
}

/// Across-channel local response normalization hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrnParams {
    /// Window size in channels; odd.
    pub size: usize,
    pub alpha: f32,
    pub beta: f32,
    pub k: f32,
}

impl LrnParams {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.size == 0 || self.size % 2 == 0 {
            return Err(format!("lrn_n must be odd and at least 1, got {}", self.size));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(format!("lrn_alpha must be finite and non-negative, got {}", self.alpha));
        }
        if !self.beta.is_finite() {
            return Err(format!("lrn_beta must be finite, got {}", self.beta));
        }
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(format!("lrn_k must be finite and positive, got {}", self.k));
        }
        Ok(())
    }
}

/// Per-kind layer configuration.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerOp {
    Conv {
        params_file: String,
        pad: usize,
        stride: usize,
        group: usize,
        fused_relu: bool,
    },
    Pool {
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        mode: PoolMode,
    },
    Fc {
        params_file: String,
        fused_relu: bool,
    },
    Relu,
    Lrn(LrnParams),
    Softmax,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub op: LayerOp,
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self.op {
            LayerOp::Conv { .. } => LayerKind::Conv,
            LayerOp::Pool { .. } => LayerKind::Pool,
            LayerOp::Fc { .. } => LayerKind::Fc,
            LayerOp::Relu => LayerKind::Relu,
            LayerOp::Lrn(_) => LayerKind::Lrn,
            LayerOp::Softmax => LayerKind::Softmax,
        }
    }

    pub fn params_file(&self) -> Option<&str> {
        match &self.op {
            LayerOp::Conv { params_file, .. } | LayerOp::Fc { params_file, .. } => {
                Some(params_file)
            }
            _ => None,
        }
    }

    pub fn fused_relu(&self) -> bool {
        matches!(
            self.op,
            LayerOp::Conv { fused_relu: true, .. } | LayerOp::Fc { fused_relu: true, .. }
        )
    }

    /// Marks a conv/fc layer as applying ReLU on output. Returns false for
    /// other kinds.
    pub fn fuse_relu(&mut self) -> bool {
        match &mut self.op {
            LayerOp::Conv { fused_relu, .. } | LayerOp::Fc { fused_relu, .. } => {
                *fused_relu = true;
                true
            }
            _ => false,
        }
    }
}

/// A parsed NetFile.
#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub layers: Vec<LayerSpec>,
    /// Parameter cache budget in megabytes (2^20 bytes).
    pub allocated_ram: u64,
    pub execution_mode: ExecutionMode,
    pub auto_tuning: AutoTuning,
}

impl NetConfig {
    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Groups layers into rows the way benchmark tables list them: a
    /// standalone ReLU is folded into the row of the layer it follows.
    pub fn row_labels(&self) -> Vec<String> {
        let mut rows: Vec<String> = Vec::new();
        for layer in &self.layers {
            let base = match layer.kind() {
                LayerKind::Conv => "Conv",
                LayerKind::Pool => "Pooling",
                LayerKind::Fc => "FC",
                LayerKind::Lrn => "LRN",
                LayerKind::Softmax => "Softmax",
                LayerKind::Relu => {
                    match rows.last_mut() {
                        Some(last) if !last.ends_with("+ReLU") && last != "ReLU" => {
                            last.push_str("+ReLU")
                        }
                        Some(_) => {}
                        None => rows.push("ReLU".into()),
                    }
                    continue;
                }
            };
            let mut label = base.to_string();
            if layer.fused_relu() {
                label.push_str("+ReLU");
            }
            rows.push(label);
        }
        rows
    }
}

impl fmt::Display for NetConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "allocated_ram: {}", self.allocated_ram)?;
        writeln!(f, "execution_mode: {}", self.execution_mode.as_str())?;
        writeln!(f, "auto_tuning: {}", self.auto_tuning.as_str())?;
        for layer in &self.layers {
            writeln!(f)?;
            writeln!(f, "layer {{")?;
            writeln!(f, "  type: {}", layer.kind())?;
            writeln!(f, "  name: {}", layer.name)?;
            match &layer.op {
                LayerOp::Conv {
                    params_file,
                    pad,
                    stride,
                    group,
                    fused_relu,
                } => {
                    writeln!(f, "  params_file: {params_file}")?;
                    writeln!(f, "  pad: {pad}")?;
                    writeln!(f, "  stride: {stride}")?;
                    writeln!(f, "  group: {group}")?;
                    writeln!(f, "  fused_relu: {fused_relu}")?;
                }
                LayerOp::Pool {
                    kernel_h,
                    kernel_w,
                    stride,
                    mode,
                } => {
                    writeln!(f, "  pool_mode: {}", mode.as_str())?;
                    writeln!(f, "  kernel_h: {kernel_h}")?;
                    writeln!(f, "  kernel_w: {kernel_w}")?;
                    writeln!(f, "  stride: {stride}")?;
                }
                LayerOp::Fc {
                    params_file,
                    fused_relu,
                } => {
                    writeln!(f, "  params_file: {params_file}")?;
                    writeln!(f, "  fused_relu: {fused_relu}")?;
                }
                LayerOp::Lrn(p) => {
                    writeln!(f, "  lrn_n: {}", p.size)?;
                    writeln!(f, "  lrn_alpha: {}", p.alpha)?;
                    writeln!(f, "  lrn_beta: {}", p.beta)?;
                    writeln!(f, "  lrn_k: {}", p.k)?;
                }
                LayerOp::Relu | LayerOp::Softmax => {}
            }
            writeln!(f, "}}")?;
        }
        Ok(())
    }
}

struct Entry<'a> {
    value: &'a str,
    line: usize,
}

struct Block<'a> {
    start: usize,
    entries: HashMap<&'a str, Entry<'a>>,
}

impl<'a> Block<'a> {
    fn take(&mut self, key: &str) -> Option<Entry<'a>> {
        self.entries.remove(key)
    }

    fn required(&mut self, key: &str, kind: LayerKind) -> std::result::Result<Entry<'a>, ParseError> {
        self.take(key).ok_or_else(|| {
            ParseError::new(
                self.start,
                format!("{kind} layer is missing required key `{key}`"),
            )
        })
    }
}

fn parse_value<T: FromStr>(entry: &Entry<'_>, key: &str, what: &str) -> std::result::Result<T, ParseError> {
    entry.value.parse().map_err(|_| {
        ParseError::new(
            entry.line,
            format!("`{key}` expects {what}, got `{}`", entry.value),
        )
    })
}

fn parse_enum<T: FromStr<Err = String>>(entry: &Entry<'_>) -> std::result::Result<T, ParseError> {
    entry.value.parse().map_err(|e| ParseError::new(entry.line, e))
}

fn parse_count(entry: &Entry<'_>, key: &str, min: usize) -> std::result::Result<usize, ParseError> {
    let v: usize = parse_value(entry, key, "a non-negative integer")?;
    if v < min {
        return Err(ParseError::new(
            entry.line,
            format!("`{key}` must be at least {min}, got {v}"),
        ));
    }
    Ok(v)
}

fn parse_flag(entry: &Entry<'_>, key: &str) -> std::result::Result<bool, ParseError> {
    parse_value(entry, key, "true or false")
}

fn parse_float(entry: &Entry<'_>, key: &str) -> std::result::Result<f32, ParseError> {
    let v: f32 = parse_value(entry, key, "a number")?;
    if !v.is_finite() {
        return Err(ParseError::new(entry.line, format!("`{key}` must be finite")));
    }
    Ok(v)
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

fn valid_path(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace() || c.is_control())
}

fn split_key_value(line: &str, lineno: usize) -> std::result::Result<(&str, &str), ParseError> {
    let (key, value) = line
        .split_once(':')
        .ok_or_else(|| ParseError::new(lineno, format!("expected `key: value`, got `{line}`")))?;
    let key = key.trim();
    let value = value.trim();
    if key.is_empty() || !key.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
        return Err(ParseError::new(lineno, format!("invalid key `{key}`")));
    }
    if value.is_empty() {
        return Err(ParseError::new(lineno, format!("missing value for `{key}`")));
    }
    Ok((key, value))
}

fn is_block_open(line: &str) -> bool {
    line.strip_prefix("layer")
        .map(|rest| rest.trim() == "{")
        .unwrap_or(false)
}

const COMMON_KEYS: &[&str] = &["type", "name"];

fn allowed_keys(kind: LayerKind) -> &'static [&'static str] {
    match kind {
        LayerKind::Conv => &["params_file", "pad", "stride", "group", "fused_relu"],
        LayerKind::Pool => &["pool_mode", "kernel_h", "kernel_w", "stride"],
        LayerKind::Fc => &["params_file", "fused_relu"],
        LayerKind::Lrn => &["lrn_n", "lrn_alpha", "lrn_beta", "lrn_k"],
        LayerKind::Relu | LayerKind::Softmax => &[],
    }
}

fn build_layer(mut block: Block<'_>) -> std::result::Result<LayerSpec, ParseError> {
    let type_entry = block
        .take("type")
        .ok_or_else(|| ParseError::new(block.start, "layer is missing required key `type`"))?;
    let kind: LayerKind = parse_enum(&type_entry)?;

    let name_entry = block.required("name", kind)?;
    if !valid_name(name_entry.value) {
        return Err(ParseError::new(
            name_entry.line,
            format!(
                "invalid layer name `{}` (use letters, digits, `_`, `-`, `.`)",
                name_entry.value
            ),
        ));
    }
    let name = name_entry.value.to_string();

    // Anything left that the kind does not accept is an error; report the
    // earliest offending line so diagnostics are stable.
    let allowed = allowed_keys(kind);
    if let Some((key, entry)) = block
        .entries
        .iter()
        .filter(|(k, _)| !allowed.contains(k) && !COMMON_KEYS.contains(k))
        .min_by_key(|(_, e)| e.line)
    {
        return Err(ParseError::new(
            entry.line,
            format!("unknown key `{key}` for {kind} layer"),
        ));
    }

    let params_file = |block: &mut Block<'_>| -> std::result::Result<String, ParseError> {
        let e = block.required("params_file", kind)?;
        if !valid_path(e.value) {
            return Err(ParseError::new(e.line, format!("invalid params_file `{}`", e.value)));
        }
        Ok(e.value.to_string())
    };

    let op = match kind {
        LayerKind::Conv => {
            let params_file = params_file(&mut block)?;
            let pad = block.take("pad").map(|e| parse_count(&e, "pad", 0)).transpose()?;
            let stride = block.take("stride").map(|e| parse_count(&e, "stride", 1)).transpose()?;
            let group = block.take("group").map(|e| parse_count(&e, "group", 1)).transpose()?;
            let fused = block.take("fused_relu").map(|e| parse_flag(&e, "fused_relu")).transpose()?;
            LayerOp::Conv {
                params_file,
                pad: pad.unwrap_or(0),
                stride: stride.unwrap_or(1),
                group: group.unwrap_or(1),
                fused_relu: fused.unwrap_or(false),
            }
        }
        LayerKind::Fc => {
            let params_file = params_file(&mut block)?;
            let fused = block.take("fused_relu").map(|e| parse_flag(&e, "fused_relu")).transpose()?;
            LayerOp::Fc {
                params_file,
                fused_relu: fused.unwrap_or(false),
            }
        }
        LayerKind::Pool => {
            let mode = parse_enum(&block.required("pool_mode", kind)?)?;
            let kernel_h = parse_count(&block.required("kernel_h", kind)?, "kernel_h", 1)?;
            let kernel_w = parse_count(&block.required("kernel_w", kind)?, "kernel_w", 1)?;
            let stride = block.take("stride").map(|e| parse_count(&e, "stride", 1)).transpose()?;
            LayerOp::Pool {
                kernel_h,
                kernel_w,
                stride: stride.unwrap_or(1),
                mode,
            }
        }
        LayerKind::Lrn => {
            let n_entry = block.required("lrn_n", kind)?;
            let params = LrnParams {
                size: parse_count(&n_entry, "lrn_n", 1)?,
                alpha: parse_float(&block.required("lrn_alpha", kind)?, "lrn_alpha")?,
                beta: parse_float(&block.required("lrn_beta", kind)?, "lrn_beta")?,
                k: parse_float(&block.required("lrn_k", kind)?, "lrn_k")?,
            };
            params
                .validate()
                .map_err(|m| ParseError::new(n_entry.line, m))?;
            LayerOp::Lrn(params)
        }
        LayerKind::Relu => LayerOp::Relu,
        LayerKind::Softmax => LayerOp::Softmax,
    };
    Ok(LayerSpec { name, op })
}

/// Parses NetFile text.
///
/// Layers keep their textual order. Missing runtime parameters default to
/// `allocated_ram: 0`, `execution_mode: parallel`, `auto_tuning: off`.
pub fn parse_netfile(text: &str) -> std::result::Result<NetConfig, ParseError> {
    let mut layers: Vec<LayerSpec> = Vec::new();
    let mut names: HashMap<String, usize> = HashMap::new();
    let mut allocated_ram: Option<u64> = None;
    let mut execution_mode: Option<ExecutionMode> = None;
    let mut auto_tuning: Option<AutoTuning> = None;
    let mut seen_top: HashSet<&str> = HashSet::new();
    let mut block: Option<Block<'_>> = None;
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        last_line = lineno;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }

        if is_block_open(line) {
            if let Some(open) = &block {
                return Err(ParseError::new(
                    lineno,
                    format!("nested layer block (block opened at line {} is not closed)", open.start),
                ));
            }
            block = Some(Block {
                start: lineno,
                entries: HashMap::new(),
            });
            continue;
        }

        if line == "}" {
            let Some(done) = block.take() else {
                return Err(ParseError::new(lineno, "unmatched `}`"));
            };
            let name_line = done.entries.get("name").map(|e| e.line).unwrap_or(done.start);
            let spec = build_layer(done)?;
            if let Some(first) = names.get(&spec.name) {
                return Err(ParseError::new(
                    name_line,
                    format!("duplicate layer name `{}` (first defined at line {first})", spec.name),
                ));
            }
            names.insert(spec.name.clone(), name_line);
            layers.push(spec);
            continue;
        }

        let (key, value) = split_key_value(line, lineno)?;
        match &mut block {
            Some(open) => {
                if let Some(prev) = open.entries.get(key) {
                    return Err(ParseError::new(
                        lineno,
                        format!("duplicate key `{key}` (first set at line {})", prev.line),
                    ));
                }
                open.entries.insert(key, Entry { value, line: lineno });
            }
            None => {
                if !seen_top.insert(key) && matches!(key, "allocated_ram" | "execution_mode" | "auto_tuning") {
                    return Err(ParseError::new(lineno, format!("duplicate key `{key}`")));
                }
                let entry = Entry { value, line: lineno };
                match key {
                    "allocated_ram" => {
                        allocated_ram = Some(parse_value(&entry, key, "a non-negative integer (megabytes)")?)
                    }
                    "execution_mode" => execution_mode = Some(parse_enum(&entry)?),
                    "auto_tuning" => auto_tuning = Some(parse_enum(&entry)?),
                    other => {
                        return Err(ParseError::new(
                            lineno,
                            format!("unknown top-level key `{other}`"),
                        ))
                    }
                }
            }
        }
    }

    if let Some(open) = block {
        return Err(ParseError::new(
            open.start,
            "layer block is not closed before end of file",
        ));
    }
    if layers.is_empty() {
        return Err(ParseError::new(last_line.max(1), "no layers defined"));
    }

    Ok(NetConfig {
        layers,
        allocated_ram: allocated_ram.unwrap_or(0),
        execution_mode: execution_mode.unwrap_or_default(),
        auto_tuning: auto_tuning.unwrap_or_default(),
    })
}

/// Output shape of a single layer given its input and (for conv/fc) its
/// weight shape.
pub fn layer_output_shape(
    spec: &LayerSpec,
    input: Shape4,
    weight: Option<Shape4>,
) -> std::result::Result<Shape4, Error> {
    let weight = || weight.ok_or_else(|| Error::UnknownParams(spec.name.clone()));
    let out = match &spec.op {
        LayerOp::Conv {
            pad, stride, group, ..
        } => {
            let w = weight()?;
            if input.c % group != 0 || w.n % group != 0 {
                return Err(ShapeError::Mismatch(format!(
                    "group {group} must divide input channels {} and kernel count {}",
                    input.c, w.n
                ))
                .into());
            }
            if w.c * group != input.c {
                return Err(ShapeError::Mismatch(format!(
                    "weight {w} expects {} input channels per group, input {input} has {} per group",
                    w.c,
                    input.c / group
                ))
                .into());
            }
            conv_output_shape(input, w.n, w.h, w.w, *pad, *stride)?
        }
        LayerOp::Fc { .. } => {
            let w = weight()?;
            if w.h != 1 || w.w != 1 {
                return Err(ShapeError::Mismatch(format!(
                    "fully connected weight must have shape (out,in,1,1), got {w}"
                ))
                .into());
            }
            if w.c != input.image_len() {
                return Err(ShapeError::Mismatch(format!(
                    "weight {w} expects {} inputs per image, input {input} has {}",
                    w.c,
                    input.image_len()
                ))
                .into());
            }
            Shape4::new(input.n, w.n, 1, 1)
        }
        LayerOp::Pool {
            kernel_h,
            kernel_w,
            stride,
            ..
        } => pool_output_shape(input, *kernel_h, *kernel_w, *stride)?,
        LayerOp::Relu | LayerOp::Lrn(_) | LayerOp::Softmax => input,
    };
    Ok(out)
}

/// Propagates `input` through every layer and returns each layer's output
/// shape. `weights` maps conv/fc layer names to their weight shapes.
pub fn validate_shapes(
    cfg: &NetConfig,
    input: Shape4,
    weights: &HashMap<String, Shape4>,
) -> Result<Vec<Shape4>> {
    if input.checked_len().is_none() || input.dims().iter().any(|&d| d == 0) {
        return Err(ShapeError::Mismatch(format!("invalid input shape {input}")).into());
    }
    let mut shapes = Vec::with_capacity(cfg.layers.len());
    let mut current = input;
    for layer in &cfg.layers {
        current = layer_output_shape(layer, current, weights.get(&layer.name).copied())
            .map_err(|e| Error::in_layer(&layer.name, e))?;
        shapes.push(current);
    }
    Ok(shapes)
}
