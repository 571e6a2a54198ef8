//! Runtime measurement shared by the CLI and the acceptance suite.

use std::time::Instant;

use crate::engine::Network;
use crate::error::{Error, Result};
use crate::layers::ExecMode;
use crate::netfile::ExecutionMode;
use crate::zoo::random_tensor;

/// Per-image wall time (nanoseconds) of `reps` timed runs after one
/// warm-up. Parameter loading is excluded unless `include_io` is set.
pub fn per_image_samples(
    net: &Network,
    batch: usize,
    mode: ExecMode,
    reps: usize,
    include_io: bool,
    seed: u64,
) -> Result<Vec<f64>> {
    if batch == 0 || reps == 0 {
        return Err(Error::InvalidArgument("batch and repetitions must be at least 1".into()));
    }
    let input = random_tensor(net.input_shape().with_batch(batch), seed);
    net.compute_with(&input, mode)?;
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let ns = if include_io {
            let start = Instant::now();
            net.compute_with(&input, mode)?;
            start.elapsed().as_nanos() as f64
        } else {
            let (_, timings) = net.compute_timed(&input, mode)?;
            timings.iter().map(|t| t.compute.as_nanos() as f64).sum()
        };
        samples.push(ns / batch as f64);
    }
    Ok(samples)
}

pub fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

pub fn median(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    }
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub batch: usize,
    pub reps: usize,
    pub threads: usize,
    pub sequential_ns: f64,
    pub measured_mode: ExecutionMode,
    pub measured_ns: f64,
}

impl BenchReport {
    /// Sequential time over measured-mode time.
    pub fn speedup(&self) -> f64 {
        self.sequential_ns / self.measured_ns
    }

    pub fn to_lines(&self) -> Vec<String> {
        vec![
            format!("batch={}", self.batch),
            format!("reps={}", self.reps),
            format!("threads={}", self.threads),
            format!("sequential_ns_per_image={:.0}", self.sequential_ns),
            format!("{}_ns_per_image={:.0}", self.measured_mode.as_str(), self.measured_ns),
            format!("speedup={:.3}", self.speedup()),
        ]
    }
}

/// Averages per-image runtime over `reps` runs in sequential mode and in
/// `mode`. When `mode` is sequential the same measurement serves both
/// sides, so the speedup is exactly 1.
pub fn benchmark(net: &Network, batch: usize, reps: usize, mode: ExecutionMode, include_io: bool) -> Result<BenchReport> {
    let seq = mean(&per_image_samples(net, batch, ExecMode::Sequential, reps, include_io, 1)?);
    let measured = match mode {
        ExecutionMode::Sequential => seq,
        ExecutionMode::Parallel => mean(&per_image_samples(net, batch, net.mode(mode), reps, include_io, 1)?),
    };
    Ok(BenchReport {
        batch,
        reps,
        threads: net.threads(),
        sequential_ns: seq,
        measured_mode: mode,
        measured_ns: measured,
    })
}
