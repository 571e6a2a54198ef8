//! First-run auto-tuning of the parallel kernels' granularity.
//!
//! The tuner times the network's conv and fc layers under every
//! [`TuningProfile`] in the candidate grid and keeps the fastest. Profiles
//! only change how work is partitioned and chunked, never the order in which
//! terms are accumulated, so every candidate computes identical outputs.

use std::collections::VecDeque;
use std::fmt;
use std::io::ErrorKind;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::engine::Network;
use crate::error::{Error, Result};
use crate::layers::ExecMode;
use crate::Tensor;

pub const ROWS_PER_ITEM: [usize; 4] = [1, 2, 4, 8];
pub const VEC_WIDTHS: [usize; 3] = [4, 8, 16];
pub const FC_OUTPUTS_PER_ITEM: [usize; 3] = [1, 4, 16];

/// File name of the persisted profile inside a model directory.
pub const PROFILE_FILE_NAME: &str = "tuning_profile.txt";

/// Granularity of parallel work.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TuningProfile {
    /// Output rows per conv work item.
    pub rows_per_item: usize,
    /// Chunk length of conv and fc inner products.
    pub vec_width: usize,
    /// Outputs per fc work item.
    pub fc_outputs_per_item: usize,
}

impl Default for TuningProfile {
    fn default() -> Self {
        TuningProfile {
            rows_per_item: 1,
            vec_width: 4,
            fc_outputs_per_item: 1,
        }
    }
}

impl TuningProfile {
    pub fn new(rows_per_item: usize, vec_width: usize, fc_outputs_per_item: usize) -> std::result::Result<Self, String> {
        fn check(name: &str, v: usize, grid: &[usize]) -> std::result::Result<(), String> {
            if grid.contains(&v) {
                Ok(())
            } else {
                Err(format!("{name} {v} is not one of {grid:?}"))
            }
        }
        check("rows_per_item", rows_per_item, &ROWS_PER_ITEM)?;
        check("vec_width", vec_width, &VEC_WIDTHS)?;
        check("fc_outputs_per_item", fc_outputs_per_item, &FC_OUTPUTS_PER_ITEM)?;
        Ok(TuningProfile {
            rows_per_item,
            vec_width,
            fc_outputs_per_item,
        })
    }

    /// All 36 candidates; `rows_per_item` varies slowest.
    pub fn grid() -> Vec<TuningProfile> {
        let mut out = Vec::with_capacity(ROWS_PER_ITEM.len() * VEC_WIDTHS.len() * FC_OUTPUTS_PER_ITEM.len());
        for &rows_per_item in &ROWS_PER_ITEM {
            for &vec_width in &VEC_WIDTHS {
                for &fc_outputs_per_item in &FC_OUTPUTS_PER_ITEM {
                    out.push(TuningProfile {
                        rows_per_item,
                        vec_width,
                        fc_outputs_per_item,
                    });
                }
            }
        }
        out
    }
}

impl fmt::Display for TuningProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {})",
            self.rows_per_item, self.vec_width, self.fc_outputs_per_item
        )
    }
}

/// A monotonic time source.
pub trait Clock: Sync {
    fn now(&self) -> Duration;
}

/// Wall clock measured from construction.
#[derive(Debug)]
pub struct SystemClock(Instant);

impl SystemClock {
    pub fn new() -> Self {
        SystemClock(Instant::now())
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.0.elapsed()
    }
}

/// Clock that advances by a scripted amount on every reading, for
/// deterministic tuner tests. Reading `i` returns the sum of the first `i`
/// steps; once the script runs out the clock stands still.
#[derive(Debug, Default)]
pub struct ScriptedClock {
    steps: Mutex<(Duration, VecDeque<Duration>)>,
}

impl ScriptedClock {
    pub fn new(steps: impl IntoIterator<Item = Duration>) -> Self {
        ScriptedClock {
            steps: Mutex::new((Duration::ZERO, steps.into_iter().collect())),
        }
    }

    /// Script under which the `t`-th timed run of candidate `c` lasts
    /// `durations[c][t]`, matching the tuner's reading pattern (one reading
    /// before and one after each timed run).
    pub fn for_timings(durations: &[Vec<Duration>]) -> Self {
        let steps = durations
            .iter()
            .flatten()
            .flat_map(|&d| [Duration::ZERO, d]);
        ScriptedClock::new(steps)
    }
}

impl Clock for ScriptedClock {
    fn now(&self) -> Duration {
        let mut guard = self.steps.lock().expect("clock lock poisoned");
        let (now, steps) = &mut *guard;
        if let Some(step) = steps.pop_front() {
            *now += step;
        }
        *now
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateTiming {
    pub profile: TuningProfile,
    pub samples_ns: Vec<u64>,
    pub median_ns: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TuneReport {
    pub candidates: Vec<CandidateTiming>,
    pub chosen: TuningProfile,
    pub host: String,
}

impl TuneReport {
    /// `key=value` lines: one per candidate, then the choice.
    pub fn to_lines(&self) -> Vec<String> {
        let mut lines: Vec<String> = self
            .candidates
            .iter()
            .map(|c| {
                format!(
                    "candidate rows_per_item={} vec_width={} fc_outputs_per_item={} median_ns={}",
                    c.profile.rows_per_item, c.profile.vec_width, c.profile.fc_outputs_per_item, c.median_ns
                )
            })
            .collect();
        lines.push(format!(
            "chosen rows_per_item={} vec_width={} fc_outputs_per_item={}",
            self.chosen.rows_per_item, self.chosen.vec_width, self.chosen.fc_outputs_per_item
        ));
        lines.push(format!("host={}", self.host));
        lines
    }
}

/// Describes the machine the profile was tuned on.
pub fn host_descriptor() -> String {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{}-{}-{}threads",
        std::env::consts::OS,
        std::env::consts::ARCH,
        threads
    )
}

/// Median of an odd number of samples.
pub fn median(samples: &[u64]) -> u64 {
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    sorted[sorted.len() / 2]
}

/// Candidate with the smallest median; the earliest wins ties.
pub fn select_profile(candidates: &[CandidateTiming]) -> Option<TuningProfile> {
    let mut best: Option<&CandidateTiming> = None;
    for c in candidates {
        if best.map_or(true, |b| c.median_ns < b.median_ns) {
            best = Some(c);
        }
    }
    best.map(|c| c.profile)
}

/// Times every grid candidate on the network's conv and fc layers.
///
/// Each candidate gets one untimed warm-up pass followed by `repetitions`
/// timed passes; `repetitions` must be odd and at least 3.
pub fn tune(net: &Network, sample: &Tensor, repetitions: usize, clock: &dyn Clock) -> Result<TuneReport> {
    if repetitions < 3 || repetitions % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "repetitions must be odd and at least 3, got {repetitions}"
        )));
    }
    let workload = net.heavy_layer_workload(sample)?;

    let mut candidates = Vec::new();
    for profile in TuningProfile::grid() {
        let mode = ExecMode::Parallel(profile);
        net.run_workload(&workload, mode)?;
        let mut samples_ns = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let start = clock.now();
            net.run_workload(&workload, mode)?;
            let elapsed = clock.now().saturating_sub(start);
            samples_ns.push(u64::try_from(elapsed.as_nanos()).unwrap_or(u64::MAX));
        }
        candidates.push(CandidateTiming {
            profile,
            median_ns: median(&samples_ns),
            samples_ns,
        });
    }
    let chosen = select_profile(&candidates).expect("grid is non-empty");
    Ok(TuneReport {
        candidates,
        chosen,
        host: host_descriptor(),
    })
}

/// A profile read from disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoadedProfile {
    pub profile: TuningProfile,
    /// False when no profile file existed and defaults were used.
    pub tuned: bool,
    pub host: Option<String>,
}

pub fn save_profile(profile: &TuningProfile, host: &str, path: &Path) -> Result<()> {
    let text = format!(
        "rows_per_item={}\nvec_width={}\nfc_outputs_per_item={}\nhost={}\n",
        profile.rows_per_item,
        profile.vec_width,
        profile.fc_outputs_per_item,
        host.replace('\n', " ")
    );
    std::fs::write(path, text).map_err(|e| Error::file(path, e))?;
    Ok(())
}

/// Loads a saved profile. A missing file yields the default profile with
/// `tuned = false`; a present but invalid file is an error.
pub fn load_profile(path: &Path) -> Result<LoadedProfile> {
    let text = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) if e.kind() == ErrorKind::NotFound => {
            return Ok(LoadedProfile {
                profile: TuningProfile::default(),
                tuned: false,
                host: None,
            })
        }
        Err(e) => return Err(Error::file(path, e)),
    };
    parse_profile(&text).map_err(|message| Error::Profile {
        path: path.to_path_buf(),
        message,
    })
}

fn parse_profile(text: &str) -> std::result::Result<LoadedProfile, String> {
    let mut rows = None;
    let mut width = None;
    let mut fc = None;
    let mut host = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value", i + 1))?;
        let number = || {
            value
                .trim()
                .parse::<usize>()
                .map_err(|_| format!("line {}: `{key}` expects an integer, got `{value}`", i + 1))
        };
        let slot = match key.trim() {
            "rows_per_item" => &mut rows,
            "vec_width" => &mut width,
            "fc_outputs_per_item" => &mut fc,
            "host" => {
                if host.replace(value.to_string()).is_some() {
                    return Err(format!("line {}: duplicate key `host`", i + 1));
                }
                continue;
            }
            other => return Err(format!("line {}: unknown key `{other}`", i + 1)),
        };
        if slot.replace(number()?).is_some() {
            return Err(format!("line {}: duplicate key `{}`", i + 1, key.trim()));
        }
    }
    let (Some(rows), Some(width), Some(fc)) = (rows, width, fc) else {
        return Err("missing one of rows_per_item, vec_width, fc_outputs_per_item".into());
    };
    Ok(LoadedProfile {
        profile: TuningProfile::new(rows, width, fc)?,
        tuned: true,
        host,
    })
}
