//! Experiment execution: duet, duet-fill and sequential modes.
//!
//! A duet run spawns the two workloads as separate processes, pins each to
//! its own logical CPU, and releases them together; every iteration start is
//! then synchronized through a shared-memory barrier (see [`barrier`]).
//! A workload that exhausts its budget detaches the barrier so the partner
//! continues unblocked; in fill mode it instead keeps executing filler
//! iterations (excluded from analysis) until the partner finishes, keeping
//! resource utilization even.
//!
//! Sequential mode is the baseline best practice: one process at a time, the
//! `2 x runs` process executions ordered by a seeded random interleaving.
//!
//! Every run uses fresh processes and writes to per-run files; the harness
//! merges successful runs into the experiment result files afterwards, so a
//! crashing run never corrupts the others. Timestamps come from
//! `CLOCK_MONOTONIC`, which all processes on the host share, making
//! cross-process start skew directly measurable.
//!
//! Builtin workloads execute in a re-executed copy of the current binary
//! (or of `$DUET_WORKLOAD_EXE` when set). Binaries that trigger experiments
//! must therefore call [`child_guard`] first thing in `main`.

pub mod affinity;
pub mod barrier;
pub mod child;

pub use child::{child_guard, run_builtin_child, WireConfig};

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use rand::Rng;
use thiserror::Error;

use crate::model::{
    self, ExperimentConfig, ExperimentMetadata, HostInfo, MeasurementSample, Mode, ModelError,
    RunRecord, WorkloadId, WorkloadKind, WorkloadSpec,
};
use crate::seeds;

/// Override for the executable that runs builtin workloads (used by tests
/// and by embedders whose own binary does not call [`child_guard`]).
pub const ENV_WORKLOAD_EXE: &str = "DUET_WORKLOAD_EXE";

/// Watchdog slack added to the per-run time budget, and the barrier wait
/// timeout handed to children. Five times a calibrated iteration would
/// exceed this floor only for tasks longer than 12 s.
const GRACE: Duration = Duration::from_secs(60);

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("duet mode needs at least 2 usable logical CPUs, found {available}")]
    NeedTwoCpus { available: usize },
    #[error("explicit core {core} is not in this process's affinity mask")]
    CoreUnavailable { core: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Barrier(#[from] barrier::BarrierError),
    #[error("failed to spawn {what}: {source}")]
    Spawn {
        what: String,
        #[source]
        source: std::io::Error,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("all {0} runs failed")]
    AllRunsFailed(u32),
}

fn io_err(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Current `CLOCK_MONOTONIC` reading in nanoseconds. Shared across all
/// processes on the host, so child timestamps are mutually comparable.
pub fn monotonic_ns() -> u64 {
    let mut ts = libc::timespec {
        tv_sec: 0,
        tv_nsec: 0,
    };
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_MONOTONIC, &mut ts) };
    debug_assert_eq!(rc, 0);
    ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
}

fn clock_resolution_ns() -> u64 {
    let mut ts = libc::timespec {
        tv_sec: 0,
        tv_nsec: 0,
    };
    let rc = unsafe { libc::clock_getres(libc::CLOCK_MONOTONIC, &mut ts) };
    if rc == 0 {
        (ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64).max(1)
    } else {
        0
    }
}

fn read_cpu_model() -> String {
    let Ok(info) = fs::read_to_string("/proc/cpuinfo") else {
        return "unknown".into();
    };
    info.lines()
        .find_map(|l| l.strip_prefix("model name"))
        .and_then(|l| l.split(':').nth(1))
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

fn read_os() -> String {
    if let Ok(rel) = fs::read_to_string("/etc/os-release") {
        if let Some(name) = rel
            .lines()
            .find_map(|l| l.strip_prefix("PRETTY_NAME="))
            .map(|v| v.trim_matches('"').to_string())
        {
            return name;
        }
    }
    std::env::consts::OS.to_string()
}

/// Collects host facts for the metadata sidecar; missing facts degrade to
/// `"unknown"` rather than failing.
pub fn probe_environment() -> HostInfo {
    HostInfo {
        cpu_model: read_cpu_model(),
        logical_cpus: affinity::available_cpus().len(),
        clock_source: "CLOCK_MONOTONIC".into(),
        clock_resolution_ns: clock_resolution_ns(),
        os: read_os(),
    }
}

/// Paths produced by a completed experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub results_a: PathBuf,
    pub results_b: PathBuf,
    pub metadata: PathBuf,
    /// Runs that crashed or timed out and were excluded from the results.
    pub failed_runs: Vec<u32>,
}

fn workload_exe() -> Result<PathBuf, HarnessError> {
    if let Ok(p) = std::env::var(ENV_WORKLOAD_EXE) {
        return Ok(PathBuf::from(p));
    }
    std::env::current_exe().map_err(|source| HarnessError::Spawn {
        what: "current executable for builtin workload".into(),
        source,
    })
}

struct ChildPlan<'a> {
    spec: &'a WorkloadSpec,
    side: WorkloadId,
    output: PathBuf,
    stderr: PathBuf,
    cpu: usize,
}

fn spawn_child(
    plan: &ChildPlan<'_>,
    config: &ExperimentConfig,
    fill: bool,
    run: u32,
    barrier_path: Option<&Path>,
) -> Result<Child, HarnessError> {
    let mut cmd = match &plan.spec.kind {
        WorkloadKind::Builtin {
            kind,
            operation_count,
        } => {
            let mut c = Command::new(workload_exe()?);
            c.env(child::ENV_CHILD_KIND, kind.to_string());
            c.env(child::ENV_CHILD_OPS, operation_count.to_string());
            c
        }
        WorkloadKind::External { command, args, env } => {
            let mut c = Command::new(command);
            c.args(args);
            c.envs(env.iter().map(|(k, v)| (k.clone(), v.clone())));
            c
        }
    };
    cmd.env(
        child::ENV_BARRIER,
        barrier_path.map_or(String::new(), |p| p.display().to_string()),
    );
    cmd.env(child::ENV_MAX_ITER, config.max_iterations.to_string());
    cmd.env(child::ENV_MAX_TIME_S, config.max_time_s.to_string());
    cmd.env(child::ENV_OUTPUT, &plan.output);
    cmd.env(child::ENV_RUN, run.to_string());
    cmd.env(child::ENV_FILL, if fill { "1" } else { "0" });
    cmd.env(child::ENV_WORKLOAD, plan.side.to_string());
    cmd.env(child::ENV_CPU, plan.cpu.to_string());
    cmd.env(child::ENV_BARRIER_TIMEOUT_S, GRACE.as_secs().to_string());
    cmd.stdin(Stdio::null());
    cmd.stdout(Stdio::null());
    let stderr_file = fs::File::create(&plan.stderr).map_err(|e| io_err(&plan.stderr, e))?;
    cmd.stderr(Stdio::from(stderr_file));

    cmd.spawn().map_err(|source| HarnessError::Spawn {
        what: format!("workload {} ({})", plan.side, plan.spec.label),
        source,
    })
}

fn stderr_tail(path: &Path) -> String {
    let mut text = String::new();
    if let Ok(mut f) = fs::File::open(path) {
        let _ = f.read_to_string(&mut text);
    }
    let tail: Vec<&str> = text.lines().rev().take(3).collect();
    tail.into_iter().rev().collect::<Vec<_>>().join(" | ")
}

enum WaitOutcome {
    Exited(Vec<Option<i32>>),
    TimedOut,
}

fn wait_children(children: &mut [Child], deadline: Instant) -> WaitOutcome {
    let mut statuses: Vec<Option<Option<i32>>> = vec![None; children.len()];
    loop {
        for (i, child) in children.iter_mut().enumerate() {
            if statuses[i].is_none() {
                match child.try_wait() {
                    Ok(Some(status)) => statuses[i] = Some(status.code()),
                    Ok(None) => {}
                    Err(_) => statuses[i] = Some(None),
                }
            }
        }
        if statuses.iter().all(Option::is_some) {
            return WaitOutcome::Exited(statuses.into_iter().map(Option::unwrap).collect());
        }
        if Instant::now() >= deadline {
            for child in children.iter_mut() {
                let _ = child.kill();
                let _ = child.wait();
            }
            return WaitOutcome::TimedOut;
        }
        std::thread::sleep(Duration::from_millis(2));
    }
}

fn pick_distinct_pair(cpus: &[usize], seed: u64, run: u32) -> (usize, usize) {
    let mut rng = seeds::rng(seed, "cores", u64::from(run));
    let i = rng.random_range(0..cpus.len());
    let mut j = rng.random_range(0..cpus.len() - 1);
    if j >= i {
        j += 1;
    }
    (cpus[i], cpus[j])
}

fn check_explicit_cores(cores: &[usize], available: &[usize]) -> Result<(), HarnessError> {
    for &c in cores {
        if !available.contains(&c) {
            return Err(HarnessError::CoreUnavailable { core: c });
        }
    }
    Ok(())
}

fn read_run_samples(path: &Path, run: u32) -> Result<Vec<MeasurementSample>, String> {
    let samples = model::read_samples_csv(path).map_err(|e| e.to_string())?;
    if samples.is_empty() {
        return Err(format!("{} contains no samples", path.display()));
    }
    if let Some(bad) = samples.iter().find(|s| s.run != run) {
        return Err(format!(
            "{} reports run {} but the harness launched run {run}",
            path.display(),
            bad.run
        ));
    }
    Ok(samples)
}

fn write_outputs(
    out_dir: &Path,
    config: &ExperimentConfig,
    host: HostInfo,
    all_a: Vec<MeasurementSample>,
    all_b: Vec<MeasurementSample>,
    run_records: Vec<RunRecord>,
    execution_order: Option<Vec<String>>,
    run_timeout: Duration,
) -> Result<ExperimentOutput, HarnessError> {
    let failed_runs: Vec<u32> = {
        let mut v: Vec<u32> = run_records
            .iter()
            .filter(|r| r.failed.is_some())
            .map(|r| r.run)
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    if failed_runs.len() as u32 >= config.runs {
        return Err(HarnessError::AllRunsFailed(config.runs));
    }

    let results_a = out_dir.join(model::RESULTS_A_FILE);
    let results_b = out_dir.join(model::RESULTS_B_FILE);
    model::write_samples_csv(&results_a, &all_a)?;
    model::write_samples_csv(&results_b, &all_b)?;

    let metadata_path = out_dir.join(model::METADATA_FILE);
    let metadata = ExperimentMetadata {
        config: config.clone(),
        host,
        harness_version: env!("CARGO_PKG_VERSION").into(),
        runs: run_records,
        execution_order,
        discarded_runs: failed_runs.clone(),
        run_timeout_s: run_timeout.as_secs_f64(),
    };
    model::write_metadata(&metadata_path, &metadata)?;

    Ok(ExperimentOutput {
        results_a,
        results_b,
        metadata: metadata_path,
        failed_runs,
    })
}

fn run_paired(
    config: &ExperimentConfig,
    fill: bool,
    out_dir: &Path,
) -> Result<ExperimentOutput, HarnessError> {
    config.validate()?;
    let cpus = affinity::available_cpus();
    if cpus.len() < 2 {
        return Err(HarnessError::NeedTwoCpus {
            available: cpus.len(),
        });
    }
    if let Some((a, b)) = config.cores {
        check_explicit_cores(&[a, b], &cpus)?;
    }
    let host = probe_environment();
    let runs_dir = out_dir.join("runs");
    fs::create_dir_all(&runs_dir).map_err(|e| io_err(&runs_dir, e))?;
    let run_timeout = config.max_time() + GRACE;

    let mut all_a = Vec::new();
    let mut all_b = Vec::new();
    let mut records = Vec::new();

    for run in 1..=config.runs {
        let (core_a, core_b) = match config.cores {
            Some(pair) => pair,
            None => pick_distinct_pair(&cpus, config.seed, run),
        };
        let barrier_path = runs_dir.join(format!("run{run}.barrier"));
        let _ = fs::remove_file(&barrier_path);
        let control = barrier::BarrierControl::create(&barrier_path)?;

        let plans = [
            ChildPlan {
                spec: &config.workload_a,
                side: WorkloadId::A,
                output: runs_dir.join(format!("run{run}_a.csv")),
                stderr: runs_dir.join(format!("run{run}_a.stderr")),
                cpu: core_a,
            },
            ChildPlan {
                spec: &config.workload_b,
                side: WorkloadId::B,
                output: runs_dir.join(format!("run{run}_b.csv")),
                stderr: runs_dir.join(format!("run{run}_b.stderr")),
                cpu: core_b,
            },
        ];
        for plan in &plans {
            let _ = fs::remove_file(&plan.output);
        }

        let mut children = Vec::with_capacity(2);
        let mut spawn_failure: Option<String> = None;
        for plan in &plans {
            match spawn_child(plan, config, fill, run, Some(&barrier_path)) {
                Ok(child) => {
                    // Builtin children pin themselves as well; this covers
                    // external workloads that ignore DUET_CPU.
                    let _ = affinity::pin_pid(child.id(), plan.cpu);
                    children.push(child);
                }
                Err(e) => {
                    spawn_failure = Some(e.to_string());
                    break;
                }
            }
        }
        if let Some(reason) = spawn_failure {
            for child in &mut children {
                let _ = child.kill();
                let _ = child.wait();
            }
            log::warn!("run {run}: {reason}");
            records.push(RunRecord {
                run,
                cores: vec![core_a, core_b],
                exit_status_a: None,
                exit_status_b: None,
                failed: Some(reason),
            });
            let _ = fs::remove_file(&barrier_path);
            continue;
        }

        control.release_start();
        let outcome = wait_children(&mut children, Instant::now() + run_timeout);
        let _ = fs::remove_file(&barrier_path);

        let (exit_a, exit_b, mut failed) = match outcome {
            WaitOutcome::TimedOut => (
                None,
                None,
                Some(format!("run exceeded watchdog timeout {run_timeout:?}")),
            ),
            WaitOutcome::Exited(codes) => {
                let (ca, cb) = (codes[0], codes[1]);
                let mut reason = None;
                for (code, plan) in [(ca, &plans[0]), (cb, &plans[1])] {
                    if code != Some(0) {
                        let tail = stderr_tail(&plan.stderr);
                        reason = Some(format!(
                            "workload {} exited with {:?}: {}",
                            plan.side, code, tail
                        ));
                        break;
                    }
                }
                (ca, cb, reason)
            }
        };

        if failed.is_none() {
            match (
                read_run_samples(&plans[0].output, run),
                read_run_samples(&plans[1].output, run),
            ) {
                (Ok(sa), Ok(sb)) => {
                    all_a.extend(sa);
                    all_b.extend(sb);
                }
                (Err(e), _) | (_, Err(e)) => failed = Some(e),
            }
        }
        if let Some(reason) = &failed {
            log::warn!("run {run} failed: {reason}");
        }
        records.push(RunRecord {
            run,
            cores: vec![core_a, core_b],
            exit_status_a: exit_a,
            exit_status_b: exit_b,
            failed,
        });
    }

    write_outputs(
        out_dir, config, host, all_a, all_b, records, None, run_timeout,
    )
}

/// Runs the plain duet procedure: both workloads in parallel on distinct
/// pinned cores, iteration starts barrier-synchronized, the longer workload
/// continuing unblocked after the shorter finishes.
pub fn run_duet(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutput, HarnessError> {
    run_paired(config, false, out_dir)
}

/// Duet with fill: a workload that exhausts its budget keeps executing
/// filler iterations (marked in the CSV, excluded from analysis) until its
/// partner finishes.
pub fn run_duet_fill(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<ExperimentOutput, HarnessError> {
    run_paired(config, true, out_dir)
}

/// Runs the baseline sequential procedure: one process at a time, the
/// `2 x runs` executions ordered by a seeded random interleaving, each
/// process pinned to one core.
pub fn run_sequential(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<ExperimentOutput, HarnessError> {
    config.validate()?;
    let cpus = affinity::available_cpus();
    if let Some((a, b)) = config.cores {
        check_explicit_cores(&[a, b], &cpus)?;
    }
    let host = probe_environment();
    let runs_dir = out_dir.join("runs");
    fs::create_dir_all(&runs_dir).map_err(|e| io_err(&runs_dir, e))?;
    let run_timeout = config.max_time() + GRACE;

    let mut order: Vec<(WorkloadId, u32)> = (1..=config.runs)
        .map(|r| (WorkloadId::A, r))
        .chain((1..=config.runs).map(|r| (WorkloadId::B, r)))
        .collect();
    let mut rng = seeds::rng(config.seed, "seq-order", 0);
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }

    let mut samples_a = Vec::new();
    let mut samples_b = Vec::new();
    let mut records: Vec<RunRecord> = Vec::new();
    let mut failed_runs: Vec<u32> = Vec::new();

    for (idx, &(side, run)) in order.iter().enumerate() {
        let spec = match side {
            WorkloadId::A => &config.workload_a,
            WorkloadId::B => &config.workload_b,
        };
        let cpu = match config.cores {
            Some((a, b)) => {
                if side == WorkloadId::A {
                    a
                } else {
                    b
                }
            }
            None => {
                let mut rng = seeds::rng(config.seed, "seq-core", idx as u64);
                cpus[rng.random_range(0..cpus.len())]
            }
        };
        let tag = format!("{side}{run}");
        let plan = ChildPlan {
            spec,
            side,
            output: runs_dir.join(format!("run{run}_{}.csv", side.to_string().to_lowercase())),
            stderr: runs_dir.join(format!("run{run}_{}.stderr", side.to_string().to_lowercase())),
            cpu,
        };
        let _ = fs::remove_file(&plan.output);

        let mut failed = None;
        let mut exit_code = None;
        match spawn_child(&plan, config, false, run, None) {
            Ok(mut child) => {
                let _ = affinity::pin_pid(child.id(), plan.cpu);
                match wait_children(std::slice::from_mut(&mut child), Instant::now() + run_timeout)
                {
                    WaitOutcome::TimedOut => {
                        failed = Some(format!("{tag} exceeded watchdog timeout {run_timeout:?}"))
                    }
                    WaitOutcome::Exited(codes) => {
                        exit_code = codes[0];
                        if exit_code != Some(0) {
                            failed = Some(format!(
                                "{tag} exited with {:?}: {}",
                                exit_code,
                                stderr_tail(&plan.stderr)
                            ));
                        }
                    }
                }
            }
            Err(e) => failed = Some(e.to_string()),
        }
        if failed.is_none() {
            match read_run_samples(&plan.output, run) {
                Ok(s) => match side {
                    WorkloadId::A => samples_a.extend(s),
                    WorkloadId::B => samples_b.extend(s),
                },
                Err(e) => failed = Some(e),
            }
        }
        if let Some(reason) = &failed {
            log::warn!("{tag} failed: {reason}");
            failed_runs.push(run);
        }
        records.push(RunRecord {
            run,
            cores: vec![cpu],
            exit_status_a: if side == WorkloadId::A { exit_code } else { None },
            exit_status_b: if side == WorkloadId::B { exit_code } else { None },
            failed,
        });
    }

    // A failure on either side discards the run index on both sides so the
    // result files stay aligned.
    failed_runs.sort_unstable();
    failed_runs.dedup();
    samples_a.retain(|s| !failed_runs.contains(&s.run));
    samples_b.retain(|s| !failed_runs.contains(&s.run));

    let order_tags: Vec<String> = order.iter().map(|(w, r)| format!("{w}{r}")).collect();
    write_outputs(
        out_dir,
        config,
        host,
        samples_a,
        samples_b,
        records,
        Some(order_tags),
        run_timeout,
    )
}

/// Dispatches on `config.mode`.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<ExperimentOutput, HarnessError> {
    match config.mode {
        Mode::Duet => run_duet(config, out_dir),
        Mode::DuetFill => run_duet_fill(config, out_dir),
        Mode::Sequential => run_sequential(config, out_dir),
    }
}

/// Appends experiment notes to a log file; best effort.
pub fn append_log(path: &Path, line: &str) {
    if let Ok(mut f) = fs::OpenOptions::new().create(true).append(true).open(path) {
        let _ = writeln!(f, "{line}");
    }
}
