//! Experiment data model shared by the harness, statistics, simulator and CLI.
//!
//! Durations are stored as integer nanoseconds so raw clock readings survive
//! serialization exactly; ratios are computed in double precision only inside
//! the statistics pipeline. Result files are CSV with the header
//! `workload,run,iteration,start_ns,duration_ns` (the harness appends
//! `filler,affinity_mask` columns), accompanied by a JSON metadata sidecar.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workloads::ArtificialKind;

/// Base name of the per-workload result files inside an experiment directory.
pub const RESULTS_A_FILE: &str = "results_a.csv";
pub const RESULTS_B_FILE: &str = "results_b.csv";
/// Name of the metadata sidecar inside an experiment directory.
pub const METADATA_FILE: &str = "metadata.json";

const CSV_HEADER: &str = "workload,run,iteration,start_ns,duration_ns";
const CSV_HEADER_EXTENDED: &str = "workload,run,iteration,start_ns,duration_ns,filler,affinity_mask";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("no paired runs: workloads share no run indices")]
    NoPairedRuns,
    #[error("run {0} has zero paired iterations")]
    EmptyRun(u32),
    #[error("duration must be > 0 (workload {workload}, run {run}, iteration {iteration})")]
    ZeroDuration {
        workload: WorkloadId,
        run: u32,
        iteration: u32,
    },
    #[error("paired run {0} has mismatched series lengths")]
    LengthMismatch(u32),
    #[error("confidence interval violates lo <= point <= hi: ({lo}, {point}, {hi})")]
    InvalidInterval { lo: f64, point: f64, hi: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid interference model: {0}")]
    InvalidModel(String),
    #[error("{path}: malformed result file: {reason}")]
    MalformedCsv { path: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl ModelError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        ModelError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Which of the two compared workloads a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WorkloadId {
    A,
    B,
}

impl fmt::Display for WorkloadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WorkloadId::A => write!(f, "A"),
            WorkloadId::B => write!(f, "B"),
        }
    }
}

impl FromStr for WorkloadId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(WorkloadId::A),
            "B" | "b" => Ok(WorkloadId::B),
            other => Err(format!("unknown workload id {other:?}")),
        }
    }
}

/// One timed iteration of one workload in one run.
///
/// `filler` marks fill-mode iterations executed only to keep resource
/// utilization even; they never enter analysis. `affinity_mask` is the
/// CPU mask the measuring process observed for itself when it took the
/// sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasurementSample {
    pub workload: WorkloadId,
    pub run: u32,
    pub iteration: u32,
    pub start_ns: u64,
    pub duration_ns: u64,
    pub filler: bool,
    pub affinity_mask: Option<u64>,
}

impl MeasurementSample {
    pub fn new(workload: WorkloadId, run: u32, iteration: u32, start_ns: u64, duration_ns: u64) -> Self {
        MeasurementSample {
            workload,
            run,
            iteration,
            start_ns,
            duration_ns,
            filler: false,
            affinity_mask: None,
        }
    }
}

/// Ordered iteration durations of one run of one workload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSeries {
    pub run: u32,
    pub durations: Vec<u64>,
}

/// One run of index-aligned duet measurements; `x.len() == y.len()` always.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedRun {
    pub run: u32,
    pub x: Vec<u64>,
    pub y: Vec<u64>,
}

/// Aligned duet measurements for R runs; pairing is total after per-run
/// truncation to the shorter series, and every stored duration is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedMatrix {
    runs: Vec<PairedRun>,
}

impl PairedMatrix {
    /// Validates the pairing invariants and builds a matrix.
    pub fn new(runs: Vec<PairedRun>) -> Result<Self, ModelError> {
        if runs.is_empty() {
            return Err(ModelError::NoPairedRuns);
        }
        for pr in &runs {
            if pr.x.len() != pr.y.len() {
                return Err(ModelError::LengthMismatch(pr.run));
            }
            if pr.x.is_empty() {
                return Err(ModelError::EmptyRun(pr.run));
            }
            for (i, (&x, &y)) in pr.x.iter().zip(&pr.y).enumerate() {
                let iteration = i as u32 + 1;
                if x == 0 {
                    return Err(ModelError::ZeroDuration {
                        workload: WorkloadId::A,
                        run: pr.run,
                        iteration,
                    });
                }
                if y == 0 {
                    return Err(ModelError::ZeroDuration {
                        workload: WorkloadId::B,
                        run: pr.run,
                        iteration,
                    });
                }
            }
        }
        Ok(PairedMatrix { runs })
    }

    pub fn runs(&self) -> &[PairedRun] {
        &self.runs
    }

    pub fn run_count(&self) -> usize {
        self.runs.len()
    }

    /// Total number of iteration pairs across all runs.
    pub fn total_pairs(&self) -> usize {
        self.runs.iter().map(|r| r.x.len()).sum()
    }
}

/// Confidence interval flavor: relative performance (ratio of means) or the
/// baseline absolute comparison (difference of means).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CiKind {
    RatioOfMeans,
    DifferenceOfMeans,
}

impl CiKind {
    /// The value meaning "no difference" for this interval kind.
    pub fn neutral(self) -> f64 {
        match self {
            CiKind::RatioOfMeans => 1.0,
            CiKind::DifferenceOfMeans => 0.0,
        }
    }
}

/// A `(lo, hi)` estimate with its confidence level, kind and point estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub kind: CiKind,
    pub point: f64,
}

impl ConfidenceInterval {
    /// Builds an interval, enforcing `lo <= point <= hi`.
    pub fn new(lo: f64, hi: f64, level: f64, kind: CiKind, point: f64) -> Result<Self, ModelError> {
        if !(lo <= point && point <= hi) {
            return Err(ModelError::InvalidInterval { lo, point, hi });
        }
        Ok(ConfidenceInterval {
            lo,
            hi,
            level,
            kind,
            point,
        })
    }

    /// Builds an interval, widening the endpoints to include the point
    /// estimate. Nearest-rank percentiles can exclude the point only for
    /// degenerate inputs (one or two runs).
    pub fn containing_point(lo: f64, hi: f64, level: f64, kind: CiKind, point: f64) -> Self {
        ConfidenceInterval {
            lo: lo.min(point),
            hi: hi.max(point),
            level,
            kind,
            point,
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Execution procedure for an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Duet,
    DuetFill,
    Sequential,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Duet => write!(f, "duet"),
            Mode::DuetFill => write!(f, "duet-fill"),
            Mode::Sequential => write!(f, "sequential"),
        }
    }
}

/// What a workload process is: an external command implementing the wire
/// protocol, or one of the builtin artificial workloads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum WorkloadKind {
    External {
        command: String,
        #[serde(default)]
        args: Vec<String>,
        #[serde(default)]
        env: Vec<(String, String)>,
    },
    Builtin {
        kind: ArtificialKind,
        operation_count: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub label: String,
    pub kind: WorkloadKind,
}

impl WorkloadSpec {
    pub fn builtin(kind: ArtificialKind, operation_count: u64) -> Self {
        WorkloadSpec {
            label: format!("{kind}:{operation_count}"),
            kind: WorkloadKind::Builtin {
                kind,
                operation_count,
            },
        }
    }
}

fn default_max_iterations() -> u32 {
    100
}

fn default_max_time_s() -> f64 {
    600.0
}

/// Workload pair definition plus run/iteration/time budgets and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub workload_a: WorkloadSpec,
    pub workload_b: WorkloadSpec,
    pub runs: u32,
    /// Iteration budget per run; the time budget may cut a run short.
    #[serde(default = "default_max_iterations")]
    pub max_iterations: u32,
    /// Time budget per run, seconds.
    #[serde(default = "default_max_time_s")]
    pub max_time_s: f64,
    /// Fraction of leading iterations discarded before analysis. Use 0.5 for
    /// managed-runtime workloads with warmup artifacts, 0 otherwise.
    #[serde(default)]
    pub warmup_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    /// Explicit logical CPU pair; when absent, the assignment is
    /// re-randomized each run from the run's sub-seed.
    #[serde(default)]
    pub cores: Option<(usize, usize)>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.runs < 1 {
            return Err(ModelError::InvalidConfig("runs must be >= 1".into()));
        }
        if self.max_iterations < 1 {
            return Err(ModelError::InvalidConfig("max_iterations must be >= 1".into()));
        }
        if !(self.max_time_s > 0.0) {
            return Err(ModelError::InvalidConfig("max_time must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(ModelError::InvalidConfig(
                "warmup_fraction must be in [0, 1)".into(),
            ));
        }
        if let Some((a, b)) = self.cores {
            if a == b && self.mode != Mode::Sequential {
                return Err(ModelError::InvalidConfig(
                    "duet modes need two distinct cores".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn max_time(&self) -> Duration {
        Duration::from_secs_f64(self.max_time_s)
    }
}

fn default_magnitude() -> f64 {
    1.0
}

/// Parameters of the synthetic interference generator.
///
/// All noise factors are multiplicative: i.i.d. per-sample lognormal noise,
/// Bernoulli slowdown events that hit both paired samples at the same instant
/// (`sync_*`) or one side only (`desync_*`), and a per-run lognormal effect
/// shared by both workloads of a run. An additive combination is available
/// behind the `additive` flag for robustness probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferenceModel {
    /// True mean iteration time of workload A, nanoseconds.
    pub base_a_ns: f64,
    /// True mean iteration time of workload B, nanoseconds.
    pub base_b_ns: f64,
    /// Lognormal scale of independent per-sample noise.
    #[serde(default)]
    pub iid_sigma: f64,
    /// Per-iteration probability of a synchronized interference event.
    #[serde(default)]
    pub sync_prob: f64,
    /// Multiplicative slowdown applied to both paired samples during an event.
    #[serde(default = "default_magnitude")]
    pub sync_magnitude: f64,
    /// Per-iteration probability of a one-sided interference event.
    #[serde(default)]
    pub desync_prob: f64,
    #[serde(default = "default_magnitude")]
    pub desync_magnitude: f64,
    /// Lognormal scale of the per-run effect shared by both workloads.
    #[serde(default)]
    pub run_sigma: f64,
    /// Combine noise terms additively instead of multiplicatively.
    #[serde(default)]
    pub additive: bool,
}

impl InterferenceModel {
    /// A noise-free model with the given base times.
    pub fn noise_free(base_a_ns: f64, base_b_ns: f64) -> Self {
        InterferenceModel {
            base_a_ns,
            base_b_ns,
            iid_sigma: 0.0,
            sync_prob: 0.0,
            sync_magnitude: 1.0,
            desync_prob: 0.0,
            desync_magnitude: 1.0,
            run_sigma: 0.0,
            additive: false,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: &str| Err(ModelError::InvalidModel(m.into()));
        if !(self.base_a_ns > 0.0 && self.base_a_ns.is_finite()) {
            return err("base_a_ns must be positive and finite");
        }
        if !(self.base_b_ns > 0.0 && self.base_b_ns.is_finite()) {
            return err("base_b_ns must be positive and finite");
        }
        for (name, p) in [("sync_prob", self.sync_prob), ("desync_prob", self.desync_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return err(&format!("{name} must be in [0, 1]"));
            }
        }
        for (name, m) in [
            ("sync_magnitude", self.sync_magnitude),
            ("desync_magnitude", self.desync_magnitude),
        ] {
            if !(m >= 1.0 && m.is_finite()) {
                return err(&format!("{name} must be >= 1"));
            }
        }
        for (name, s) in [("iid_sigma", self.iid_sigma), ("run_sigma", self.run_sigma)] {
            if !(s >= 0.0 && s.is_finite()) {
                return err(&format!("{name} must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Groups non-filler samples of one workload into ordered per-run series.
pub fn run_series(samples: &[MeasurementSample]) -> Vec<RunSeries> {
    let mut by_run: BTreeMap<u32, Vec<(u32, u64)>> = BTreeMap::new();
    for s in samples {
        if s.filler {
            continue;
        }
        by_run.entry(s.run).or_default().push((s.iteration, s.duration_ns));
    }
    by_run
        .into_iter()
        .map(|(run, mut iters)| {
            iters.sort_by_key(|&(i, _)| i);
            RunSeries {
                run,
                durations: iters.into_iter().map(|(_, d)| d).collect(),
            }
        })
        .collect()
}

/// Aligns two workloads' samples into a [`PairedMatrix`].
///
/// Runs are joined by run index (intersection); within a run, iterations are
/// joined by iteration index and truncated to the shorter series. Filler
/// samples never participate. The surviving durations appear verbatim.
pub fn pair_results(
    samples_a: &[MeasurementSample],
    samples_b: &[MeasurementSample],
) -> Result<PairedMatrix, ModelError> {
    let a_runs = run_series(samples_a);
    let b_runs = run_series(samples_b);
    let b_index: BTreeMap<u32, &RunSeries> = b_runs.iter().map(|r| (r.run, r)).collect();

    let mut runs = Vec::new();
    for a in &a_runs {
        let Some(b) = b_index.get(&a.run) else {
            continue;
        };
        let n = a.durations.len().min(b.durations.len());
        if n == 0 {
            return Err(ModelError::EmptyRun(a.run));
        }
        runs.push(PairedRun {
            run: a.run,
            x: a.durations[..n].to_vec(),
            y: b.durations[..n].to_vec(),
        });
    }
    if runs.is_empty() {
        return Err(ModelError::NoPairedRuns);
    }
    PairedMatrix::new(runs)
}

fn format_sample(s: &MeasurementSample, extended: bool) -> String {
    if extended {
        let mask = match s.affinity_mask {
            Some(m) => format!("{m:#x}"),
            None => String::new(),
        };
        format!(
            "{},{},{},{},{},{},{}",
            s.workload,
            s.run,
            s.iteration,
            s.start_ns,
            s.duration_ns,
            u8::from(s.filler),
            mask
        )
    } else {
        format!(
            "{},{},{},{},{}",
            s.workload, s.run, s.iteration, s.start_ns, s.duration_ns
        )
    }
}

/// Writes samples in the result CSV format.
///
/// The base header is exactly `workload,run,iteration,start_ns,duration_ns`;
/// the `filler,affinity_mask` columns are appended only when some sample
/// carries that information (harness output does, simulator output does not).
pub fn write_samples_csv(path: &Path, samples: &[MeasurementSample]) -> Result<(), ModelError> {
    let extended = samples.iter().any(|s| s.filler || s.affinity_mask.is_some());
    let file = File::create(path).map_err(|e| ModelError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = if extended { CSV_HEADER_EXTENDED } else { CSV_HEADER };
    writeln!(w, "{header}").map_err(|e| ModelError::io(path, e))?;
    for s in samples {
        writeln!(w, "{}", format_sample(s, extended)).map_err(|e| ModelError::io(path, e))?;
    }
    w.flush().map_err(|e| ModelError::io(path, e))
}

/// Reads a result CSV written by the harness, a wire-protocol workload, or
/// the simulator. The five base columns are required in order; `filler` and
/// `affinity_mask` are optional.
pub fn read_samples_csv(path: &Path) -> Result<Vec<MeasurementSample>, ModelError> {
    let malformed = |reason: String| ModelError::MalformedCsv {
        path: path.display().to_string(),
        reason,
    };
    let file = File::open(path).map_err(|e| ModelError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(BufReader::new(file));

    let headers = rdr
        .headers()
        .map_err(|e| malformed(e.to_string()))?
        .clone();
    let expected = CSV_HEADER.split(',').collect::<Vec<_>>();
    let got: Vec<&str> = headers.iter().take(expected.len()).collect();
    if got != expected {
        return Err(malformed(format!(
            "header must start with {CSV_HEADER:?}, got {got:?}"
        )));
    }
    let filler_col = headers.iter().position(|h| h == "filler");
    let affinity_col = headers.iter().position(|h| h == "affinity_mask");

    let mut samples = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| malformed(e.to_string()))?;
        let field = |i: usize| -> Result<&str, ModelError> {
            record
                .get(i)
                .ok_or_else(|| malformed(format!("row {}: missing column {i}", line + 2)))
        };
        let parse_err = |what: &str, v: &str| {
            malformed(format!("row {}: bad {what} {v:?}", line + 2))
        };
        let workload = WorkloadId::from_str(field(0)?).map_err(|_| parse_err("workload", &record[0]))?;
        let run: u32 = field(1)?.parse().map_err(|_| parse_err("run", &record[1]))?;
        let iteration: u32 = field(2)?.parse().map_err(|_| parse_err("iteration", &record[2]))?;
        let start_ns: u64 = field(3)?.parse().map_err(|_| parse_err("start_ns", &record[3]))?;
        let duration_ns: u64 = field(4)?.parse().map_err(|_| parse_err("duration_ns", &record[4]))?;
        let filler = match filler_col.and_then(|i| record.get(i)) {
            Some("1") | Some("true") => true,
            Some("0") | Some("false") | Some("") | None => false,
            Some(v) => return Err(parse_err("filler", v)),
        };
        let affinity_mask = match affinity_col.and_then(|i| record.get(i)) {
            Some("") | None => None,
            Some(v) => {
                let digits = v.strip_prefix("0x").unwrap_or(v);
                Some(u64::from_str_radix(digits, 16).map_err(|_| parse_err("affinity_mask", v))?)
            }
        };
        samples.push(MeasurementSample {
            workload,
            run,
            iteration,
            start_ns,
            duration_ns,
            filler,
            affinity_mask,
        });
    }
    Ok(samples)
}

/// Host description recorded into experiment metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostInfo {
    pub cpu_model: String,
    pub logical_cpus: usize,
    pub clock_source: String,
    pub clock_resolution_ns: u64,
    pub os: String,
}

/// Outcome of one run as recorded by the harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: u32,
    /// Logical CPUs assigned to (A, B); sequential runs use one entry.
    pub cores: Vec<usize>,
    pub exit_status_a: Option<i32>,
    pub exit_status_b: Option<i32>,
    /// Present iff the run failed and was excluded from the result files.
    pub failed: Option<String>,
}

/// Metadata sidecar written next to the result files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMetadata {
    pub config: ExperimentConfig,
    pub host: HostInfo,
    pub harness_version: String,
    #[serde(default)]
    pub runs: Vec<RunRecord>,
    /// Sequential mode: the seeded execution order, e.g. `["A2", "B1", ...]`.
    #[serde(default)]
    pub execution_order: Option<Vec<String>>,
    /// Runs excluded from the result files (crashed or timed out).
    #[serde(default)]
    pub discarded_runs: Vec<u32>,
    /// Per-run watchdog timeout used by the harness, seconds.
    #[serde(default)]
    pub run_timeout_s: f64,
}

pub fn write_metadata(path: &Path, meta: &ExperimentMetadata) -> Result<(), ModelError> {
    let json = serde_json::to_string_pretty(meta).map_err(|e| ModelError::Json {
        path: path.display().to_string(),
        source: e,
    })?;
    std::fs::write(path, json + "\n").map_err(|e| ModelError::io(path, e))
}

pub fn read_metadata(path: &Path) -> Result<ExperimentMetadata, ModelError> {
    let data = std::fs::read_to_string(path).map_err(|e| ModelError::io(path, e))?;
    serde_json::from_str(&data).map_err(|e| ModelError::Json {
        path: path.display().to_string(),
        source: e,
    })
}
