//! Workload-side implementation of the wire protocol.
//!
//! The harness drives workload processes through environment variables:
//!
//! | variable               | meaning                                           |
//! |------------------------|---------------------------------------------------|
//! | `DUET_BARRIER`         | barrier file path; empty/absent in sequential mode|
//! | `DUET_MAX_ITER`        | iteration budget per run                          |
//! | `DUET_MAX_TIME_S`      | time budget per run, seconds                      |
//! | `DUET_OUTPUT`          | CSV path the workload appends rows to             |
//! | `DUET_RUN`             | run index (1-based)                               |
//! | `DUET_FILL`            | `1` = keep executing filler iterations            |
//! | `DUET_WORKLOAD`        | which side this process is (`A` or `B`)           |
//! | `DUET_CPU`             | logical CPU to pin to (workload self-pins)        |
//! | `DUET_BARRIER_TIMEOUT_S` | barrier wait timeout, seconds (default 60)      |
//!
//! Per iteration the workload arrives at the barrier, timestamps, executes
//! one task, timestamps again and appends
//! `workload,run,iteration,start_ns,duration_ns,filler,affinity_mask`.
//! Barrier wait time is *not* part of the measured duration. Exit code 0
//! means success.
//!
//! Builtin workloads run through the same protocol in a re-executed copy of
//! the current binary: the harness spawns the executable with
//! `DUET_CHILD_KIND`/`DUET_CHILD_OPS` set, and [`child_guard`] intercepts
//! those in `main` before any CLI parsing.

use std::fs::OpenOptions;
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::path::PathBuf;
use std::process::exit;
use std::time::Duration;

use super::affinity;
use super::barrier::{BarrierParty, Wait};
use super::monotonic_ns;
use crate::model::WorkloadId;
use crate::workloads::{self, ArtificialKind};

pub const ENV_BARRIER: &str = "DUET_BARRIER";
pub const ENV_MAX_ITER: &str = "DUET_MAX_ITER";
pub const ENV_MAX_TIME_S: &str = "DUET_MAX_TIME_S";
pub const ENV_OUTPUT: &str = "DUET_OUTPUT";
pub const ENV_RUN: &str = "DUET_RUN";
pub const ENV_FILL: &str = "DUET_FILL";
pub const ENV_WORKLOAD: &str = "DUET_WORKLOAD";
pub const ENV_CPU: &str = "DUET_CPU";
pub const ENV_BARRIER_TIMEOUT_S: &str = "DUET_BARRIER_TIMEOUT_S";
pub const ENV_CHILD_KIND: &str = "DUET_CHILD_KIND";
pub const ENV_CHILD_OPS: &str = "DUET_CHILD_OPS";

const DEFAULT_BARRIER_TIMEOUT: Duration = Duration::from_secs(60);

/// Wire-protocol parameters parsed from the environment.
#[derive(Debug, Clone)]
pub struct WireConfig {
    pub barrier: Option<PathBuf>,
    pub max_iterations: u32,
    pub max_time: Duration,
    pub output: PathBuf,
    pub run: u32,
    pub fill: bool,
    pub workload: WorkloadId,
    pub cpu: Option<usize>,
    pub barrier_timeout: Duration,
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("missing environment variable {0}")]
    Missing(&'static str),
    #[error("bad value for {0}: {1}")]
    Bad(&'static str, String),
}

fn env_required(name: &'static str) -> Result<String, WireError> {
    std::env::var(name).map_err(|_| WireError::Missing(name))
}

fn env_parse<T: std::str::FromStr>(name: &'static str, value: &str) -> Result<T, WireError> {
    value
        .parse()
        .map_err(|_| WireError::Bad(name, value.to_string()))
}

impl WireConfig {
    pub fn from_env() -> Result<Self, WireError> {
        let barrier = match std::env::var(ENV_BARRIER) {
            Ok(s) if !s.is_empty() => Some(PathBuf::from(s)),
            _ => None,
        };
        let max_iterations = env_parse(ENV_MAX_ITER, &env_required(ENV_MAX_ITER)?)?;
        let max_time_s: f64 = env_parse(ENV_MAX_TIME_S, &env_required(ENV_MAX_TIME_S)?)?;
        let output = PathBuf::from(env_required(ENV_OUTPUT)?);
        let run = env_parse(ENV_RUN, &env_required(ENV_RUN)?)?;
        let fill = matches!(std::env::var(ENV_FILL).as_deref(), Ok("1") | Ok("true"));
        let workload = env_parse(ENV_WORKLOAD, &env_required(ENV_WORKLOAD)?)?;
        let cpu = match std::env::var(ENV_CPU) {
            Ok(s) if !s.is_empty() => Some(env_parse(ENV_CPU, &s)?),
            _ => None,
        };
        let barrier_timeout = match std::env::var(ENV_BARRIER_TIMEOUT_S) {
            Ok(s) if !s.is_empty() => Duration::from_secs_f64(env_parse(ENV_BARRIER_TIMEOUT_S, &s)?),
            _ => DEFAULT_BARRIER_TIMEOUT,
        };
        Ok(WireConfig {
            barrier,
            max_iterations,
            max_time: Duration::from_secs_f64(max_time_s),
            output,
            run,
            fill,
            workload,
            cpu,
            barrier_timeout,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ChildError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Barrier(#[from] super::barrier::BarrierError),
    #[error(transparent)]
    Workload(#[from] workloads::WorkloadError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

struct RowWriter {
    path: PathBuf,
    out: BufWriter<std::fs::File>,
}

impl RowWriter {
    fn open(path: &PathBuf) -> Result<Self, ChildError> {
        let io_err = |source| ChildError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err)?;
        let empty = file.seek(SeekFrom::End(0)).map_err(io_err)? == 0;
        let mut out = BufWriter::new(file);
        if empty {
            writeln!(out, "workload,run,iteration,start_ns,duration_ns,filler,affinity_mask")
                .map_err(io_err)?;
        }
        Ok(RowWriter {
            path: path.clone(),
            out,
        })
    }

    fn row(
        &mut self,
        workload: WorkloadId,
        run: u32,
        iteration: u32,
        start_ns: u64,
        duration_ns: u64,
        filler: bool,
        mask: u64,
    ) -> Result<(), ChildError> {
        writeln!(
            self.out,
            "{workload},{run},{iteration},{start_ns},{duration_ns},{},{mask:#x}",
            u8::from(filler)
        )
        .map_err(|source| ChildError::Io {
            path: self.path.display().to_string(),
            source,
        })
    }

    fn flush(&mut self) -> Result<(), ChildError> {
        self.out.flush().map_err(|source| ChildError::Io {
            path: self.path.display().to_string(),
            source,
        })
    }
}

/// Runs the builtin workload iteration loop against the wire protocol.
///
/// The task is `workloads::execute(kind, operation_count)`; the measured
/// duration brackets only the task, not the barrier wait.
pub fn run_builtin_child(kind: ArtificialKind, operation_count: u64) -> Result<(), ChildError> {
    let wire = WireConfig::from_env()?;
    if let Some(cpu) = wire.cpu {
        if let Err(e) = affinity::pin_self(cpu) {
            log::warn!("failed to pin to cpu {cpu}: {e}; running unpinned");
        }
    }
    // Fault in working buffers before the first measured iteration.
    workloads::warm_up(kind)?;

    let mut writer = RowWriter::open(&wire.output)?;
    let mut barrier = match &wire.barrier {
        Some(path) => Some(BarrierParty::attach(path, wire.barrier_timeout)?),
        None => None,
    };

    let budget_start = monotonic_ns();
    let max_time_ns = wire.max_time.as_nanos() as u64;
    let mut measured: u32 = 0;
    let mut iteration: u32 = 0;
    let mut partner_gone = false;

    loop {
        let elapsed = monotonic_ns().saturating_sub(budget_start);
        let exhausted = measured >= wire.max_iterations || elapsed >= max_time_ns;
        if exhausted {
            let keep_filling = wire.fill
                && elapsed < max_time_ns
                && barrier.as_ref().map_or(false, |b| !b.is_detached());
            if !keep_filling {
                if let Some(b) = &barrier {
                    b.detach();
                }
                break;
            }
        }

        if !partner_gone {
            if let Some(b) = &mut barrier {
                match b.arrive_and_wait(wire.barrier_timeout)? {
                    Wait::Released => {}
                    Wait::Detached => {
                        if exhausted {
                            // We were only filling for the partner.
                            break;
                        }
                        partner_gone = true;
                    }
                }
            }
        }

        iteration += 1;
        let start = monotonic_ns();
        let checksum = workloads::execute(kind, operation_count)?;
        let duration = monotonic_ns().saturating_sub(start).max(1);
        std::hint::black_box(checksum);

        let mask = affinity::current_mask().unwrap_or(0);
        writer.row(wire.workload, wire.run, iteration, start, duration, exhausted, mask)?;
        if !exhausted {
            measured += 1;
        }
    }
    writer.flush()
}

/// Intercepts builtin-workload re-execution.
///
/// Any binary that runs experiments with builtin workloads must call this
/// first thing in `main`: when the harness re-executes the binary with
/// `DUET_CHILD_KIND` set, the call runs the workload loop and exits instead
/// of returning.
pub fn child_guard() {
    let Ok(kind_str) = std::env::var(ENV_CHILD_KIND) else {
        return;
    };
    let result = (|| -> Result<(), ChildError> {
        let kind: ArtificialKind = kind_str
            .parse()
            .map_err(|e: String| WireError::Bad(ENV_CHILD_KIND, e))?;
        let ops: u64 = env_parse(ENV_CHILD_OPS, &env_required(ENV_CHILD_OPS)?)?;
        run_builtin_child(kind, ops)
    })();
    match result {
        Ok(()) => exit(0),
        Err(e) => {
            eprintln!("duet workload child failed: {e}");
            exit(3);
        }
    }
}
