//! Artificial single-resource workloads and calibration.
//!
//! Four workload kinds stress one resource each for an exact operation count:
//!
//! * `integer` — dependent xor-shift-add chain on one register; one operation
//!   is one chain step. Runs entirely from registers and L1.
//! * `float` — dependent multiply-add chain `x = x * a + b` with a stable
//!   fixed point; one operation is one multiply-add step.
//! * `cache` — linear walk over a 4 MiB buffer; one operation is one
//!   sequential 8-byte load. Mostly hits in the last level cache.
//! * `memory` — random walk over a 64 MiB buffer; one operation is one
//!   dependent (pointer-chased) load. Mostly misses in the last level cache.
//!
//! The memory walk follows a fixed single-cycle pseudo-random permutation
//! (Sattolo construction), so every load depends on the previous one and the
//! walk covers the whole working set before repeating. Wall time grows
//! linearly in the operation count on an idle machine, so only ratios of
//! operation counts matter. Each `execute` call returns a data-dependent
//! checksum to defeat dead-code elimination.

use std::fmt;
use std::hint::black_box;
use std::str::FromStr;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeds;

const CACHE_BYTES: usize = 4 << 20;
const MEMORY_BYTES: usize = 64 << 20;
const CACHE_WORDS: usize = CACHE_BYTES / 8;
const MEMORY_WORDS: usize = MEMORY_BYTES / 8;

/// Buffer contents are fixed across processes and runs.
const BUFFER_SEED: u64 = 0x6475_6574_2d77_6c64;

const CALIBRATION_TRIALS: usize = 5;
const CALIBRATION_MAX_ROUNDS: usize = 20;
const CALIBRATION_TOLERANCE: f64 = 0.10;
const CALIBRATION_INITIAL_COUNT: u64 = 4096;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("operation_count must be >= 1")]
    ZeroCount,
    #[error("failed to allocate {bytes} byte working set")]
    Alloc { bytes: usize },
    #[error(
        "calibration did not converge within {max_rounds} rounds (target {target_ms} ms); trace: {trace}"
    )]
    NonConvergence {
        max_rounds: usize,
        target_ms: f64,
        trace: String,
    },
}

/// The four artificial workload kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ArtificialKind {
    Integer,
    Float,
    Cache,
    Memory,
}

impl fmt::Display for ArtificialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ArtificialKind::Integer => "integer",
            ArtificialKind::Float => "float",
            ArtificialKind::Cache => "cache",
            ArtificialKind::Memory => "memory",
        };
        write!(f, "{name}")
    }
}

impl FromStr for ArtificialKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "integer" => Ok(ArtificialKind::Integer),
            "float" => Ok(ArtificialKind::Float),
            "cache" => Ok(ArtificialKind::Cache),
            "memory" => Ok(ArtificialKind::Memory),
            other => Err(format!(
                "unknown workload kind {other:?} (expected integer|float|cache|memory)"
            )),
        }
    }
}

fn try_alloc_words(words: usize) -> Result<Vec<u64>, WorkloadError> {
    let mut v: Vec<u64> = Vec::new();
    v.try_reserve_exact(words)
        .map_err(|_| WorkloadError::Alloc { bytes: words * 8 })?;
    Ok(v)
}

fn cache_buffer() -> Result<&'static [u64], WorkloadError> {
    static BUF: OnceLock<Result<Vec<u64>, WorkloadError>> = OnceLock::new();
    let buf = BUF.get_or_init(|| {
        let mut v = try_alloc_words(CACHE_WORDS)?;
        let mut x = BUFFER_SEED;
        for _ in 0..CACHE_WORDS {
            x = seeds::derive(x, "cache-fill", 0);
            v.push(x);
        }
        Ok(v)
    });
    match buf {
        Ok(v) => Ok(v),
        Err(_) => Err(WorkloadError::Alloc { bytes: CACHE_BYTES }),
    }
}

/// Single-cycle permutation over the 64 MiB working set: `buf[i]` holds the
/// successor of slot `i`, so `idx = buf[idx]` visits every slot exactly once
/// per cycle and each load depends on the previous one.
fn memory_buffer() -> Result<&'static [u64], WorkloadError> {
    static BUF: OnceLock<Result<Vec<u64>, WorkloadError>> = OnceLock::new();
    let buf = BUF.get_or_init(|| {
        use rand::Rng;
        let mut perm = try_alloc_words(MEMORY_WORDS)?;
        perm.extend(0..MEMORY_WORDS as u64);
        // Sattolo's algorithm: swapping with a strictly earlier slot yields a
        // permutation with a single cycle.
        let mut rng = seeds::rng(BUFFER_SEED, "memory-cycle", 0);
        for i in (1..MEMORY_WORDS).rev() {
            let j = rng.random_range(0..i);
            perm.swap(i, j);
        }
        Ok(perm)
    });
    match buf {
        Ok(v) => Ok(v),
        Err(_) => Err(WorkloadError::Alloc { bytes: MEMORY_BYTES }),
    }
}

fn run_integer(count: u64) -> u64 {
    let mut acc = 0x243f_6a88_85a3_08d3u64 ^ count;
    for _ in 0..count {
        acc = (acc ^ (acc >> 29)).wrapping_add(0x9e37_79b9_7f4a_7c15);
    }
    acc
}

fn run_float(count: u64) -> u64 {
    // Fixed point b / (1 - a) ~ 1.0 keeps the chain numerically stable for
    // any operation count.
    let a = 0.999_999_999_f64;
    let b = 1e-9_f64;
    let mut x = 0.5 + (count % 1024) as f64 / 2048.0;
    for _ in 0..count {
        x = x * a + b;
    }
    x.to_bits()
}

fn run_cache(count: u64, buf: &[u64]) -> u64 {
    debug_assert!(buf.len().is_power_of_two());
    let mask = buf.len() - 1;
    let mut acc = 0u64;
    let mut i = 0usize;
    for _ in 0..count {
        acc ^= buf[i];
        i = (i + 1) & mask;
    }
    acc
}

fn run_memory(count: u64, buf: &[u64]) -> u64 {
    let mut idx = 0u64;
    let mut acc = 0u64;
    for _ in 0..count {
        idx = buf[idx as usize];
        acc = acc.wrapping_add(idx);
    }
    acc ^ idx
}

/// Performs exactly `operation_count` primitive operations of `kind` and
/// returns a data-dependent checksum. Working buffers are initialized once
/// per process, on first use.
pub fn execute(kind: ArtificialKind, operation_count: u64) -> Result<u64, WorkloadError> {
    if operation_count == 0 {
        return Err(WorkloadError::ZeroCount);
    }
    let count = black_box(operation_count);
    let checksum = match kind {
        ArtificialKind::Integer => run_integer(count),
        ArtificialKind::Float => run_float(count),
        ArtificialKind::Cache => run_cache(count, cache_buffer()?),
        ArtificialKind::Memory => run_memory(count, memory_buffer()?),
    };
    Ok(black_box(checksum))
}

/// Pre-faults the working set of `kind` so the first measured iteration does
/// not pay allocation and page-fault costs.
pub fn warm_up(kind: ArtificialKind) -> Result<(), WorkloadError> {
    execute(kind, 1).map(|_| ())
}

/// One proportional-search round of [`calibrate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRound {
    pub operation_count: u64,
    pub median_ns: u64,
    pub trial_ns: Vec<u64>,
}

/// Result of calibrating a workload to a target iteration time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub kind: ArtificialKind,
    pub operation_count: u64,
    pub rounds: Vec<CalibrationRound>,
}

fn median_ns(trials: &mut [u64]) -> u64 {
    trials.sort_unstable();
    trials[trials.len() / 2]
}

fn calibrate_with<F>(
    kind: ArtificialKind,
    target: Duration,
    mut measure: F,
) -> Result<Calibration, WorkloadError>
where
    F: FnMut(u64) -> Result<Duration, WorkloadError>,
{
    let target_ns = target.as_nanos().max(1) as u64;
    let mut count = CALIBRATION_INITIAL_COUNT;
    let mut rounds: Vec<CalibrationRound> = Vec::new();

    for _ in 0..CALIBRATION_MAX_ROUNDS {
        let mut trials = Vec::with_capacity(CALIBRATION_TRIALS);
        for _ in 0..CALIBRATION_TRIALS {
            trials.push(measure(count)?.as_nanos().max(1) as u64);
        }
        let median = median_ns(&mut trials);
        rounds.push(CalibrationRound {
            operation_count: count,
            median_ns: median,
            trial_ns: trials,
        });

        let err = (median as f64 - target_ns as f64).abs() / target_ns as f64;
        if err <= CALIBRATION_TOLERANCE {
            return Ok(Calibration {
                kind,
                operation_count: count,
                rounds,
            });
        }
        let next = (count as f64 * target_ns as f64 / median as f64).round();
        count = (next.max(1.0) as u64).max(1);
    }

    let trace = rounds
        .iter()
        .map(|r| format!("{} ops -> {} ns", r.operation_count, r.median_ns))
        .collect::<Vec<_>>()
        .join("; ");
    Err(WorkloadError::NonConvergence {
        max_rounds: CALIBRATION_MAX_ROUNDS,
        target_ms: target.as_secs_f64() * 1e3,
        trace,
    })
}

/// Finds an operation count whose execution time lands within ±10% of
/// `target` (median of 5 trials), by iterative proportional search starting
/// from a small count. Errors out with the search trace after 20 rounds.
pub fn calibrate(kind: ArtificialKind, target: Duration) -> Result<Calibration, WorkloadError> {
    warm_up(kind)?;
    calibrate_with(kind, target, |count| {
        let t0 = Instant::now();
        execute(kind, count)?;
        Ok(t0.elapsed())
    })
}

/// The default calibration target of 100 ms.
pub const DEFAULT_CALIBRATION_TARGET: Duration = Duration::from_millis(100);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksums_are_deterministic() {
        for kind in [
            ArtificialKind::Integer,
            ArtificialKind::Float,
            ArtificialKind::Cache,
            ArtificialKind::Memory,
        ] {
            let a = execute(kind, 10_000).unwrap();
            let b = execute(kind, 10_000).unwrap();
            assert_eq!(a, b, "{kind} checksum not deterministic");
        }
    }

    #[test]
    fn single_operation_succeeds() {
        for kind in [
            ArtificialKind::Integer,
            ArtificialKind::Float,
            ArtificialKind::Cache,
            ArtificialKind::Memory,
        ] {
            execute(kind, 1).unwrap();
        }
    }

    #[test]
    fn zero_count_rejected() {
        assert!(matches!(
            execute(ArtificialKind::Integer, 0),
            Err(WorkloadError::ZeroCount)
        ));
    }

    #[test]
    fn count_changes_checksum() {
        let a = execute(ArtificialKind::Integer, 1000).unwrap();
        let b = execute(ArtificialKind::Integer, 1001).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn kind_string_round_trip() {
        for kind in [
            ArtificialKind::Integer,
            ArtificialKind::Float,
            ArtificialKind::Cache,
            ArtificialKind::Memory,
        ] {
            assert_eq!(kind.to_string().parse::<ArtificialKind>().unwrap(), kind);
        }
        assert!("disk".parse::<ArtificialKind>().is_err());
    }

    #[test]
    fn calibration_takes_proportional_steps() {
        // Measured 50 ms at the current count -> next candidate doubles.
        let mut asked = Vec::new();
        let _ = calibrate_with(ArtificialKind::Integer, Duration::from_millis(100), |count| {
            asked.push(count);
            if asked.len() <= CALIBRATION_TRIALS {
                Ok(Duration::from_millis(50))
            } else {
                Ok(Duration::from_millis(100))
            }
        })
        .unwrap();
        assert_eq!(asked[CALIBRATION_TRIALS], asked[0] * 2);
    }

    #[test]
    fn calibration_converges_on_linear_clock() {
        // Perfectly linear fake workload: 1 us per operation.
        let cal = calibrate_with(ArtificialKind::Float, Duration::from_millis(100), |count| {
            Ok(Duration::from_micros(count))
        })
        .unwrap();
        let got = cal.operation_count as f64;
        assert!((got - 100_000.0).abs() / 100_000.0 <= CALIBRATION_TOLERANCE);
        assert!(cal.rounds.len() <= 3, "rounds: {:?}", cal.rounds.len());
    }

    #[test]
    fn calibration_reports_trace_on_divergence() {
        // A clock stuck at 1 ns can never reach 100 ms.
        let err = calibrate_with(ArtificialKind::Cache, Duration::from_millis(100), |_| {
            Ok(Duration::from_nanos(1))
        })
        .unwrap_err();
        match err {
            WorkloadError::NonConvergence { trace, .. } => {
                assert!(trace.contains("ops ->"));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn memory_permutation_is_single_cycle_prefix() {
        // Walking far fewer steps than the cycle length must not revisit the
        // start slot (a multi-cycle permutation would loop early).
        let buf = memory_buffer().unwrap();
        let mut idx = 0u64;
        for _ in 0..100_000 {
            idx = buf[idx as usize];
            assert_ne!(idx, 0, "memory walk revisited the start slot early");
        }
    }
}
