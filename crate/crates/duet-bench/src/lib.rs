//! Paired benchmark execution and ratio-based performance comparison.
//!
//! This crate compares the performance of two workloads on noisy, shared
//! machines. Instead of running the workloads one after another and comparing
//! mean execution times, the *duet* procedure runs both workloads at the same
//! time on two pinned cores, synchronizing every iteration start through a
//! shared-memory barrier. External interference then hits both workloads at
//! the same instant and cancels out of the per-iteration execution-time
//! ratio, which makes the resulting confidence intervals much narrower than
//! those of the sequential procedure.
//!
//! The crate is organized around six modules:
//!
//! * [`model`] — the experiment data model (samples, paired matrices,
//!   confidence intervals, configuration) and the CSV/JSON file formats.
//! * [`stats`] — the ratio estimator (speedup samples, per-run geometric
//!   means, grand geometric mean, run-level bootstrap), the baseline
//!   difference-of-means bootstrap, winsorization, warmup discard, shuffle
//!   analysis and the equal/different verdict rule.
//! * [`harness`] — experiment execution: duet mode (two child processes,
//!   pinned cores, per-iteration rendezvous), duet fill mode, and the
//!   sequential mode with randomized interleaving.
//! * [`workloads`] — four artificial single-resource workloads (integer,
//!   float, cache, memory) plus calibration to a target iteration time.
//! * [`simgen`] — a synthetic interference generator producing paired and
//!   sequential-style measurements from a parametric noise model.
//! * [`cli`] — the `duet` command-line front end.
//!
//! Most capabilities have a runnable example under `examples/`; start with
//! `simulate_and_analyze` for the statistics path and `duet_smoke` for the
//! execution path. Binaries that execute experiments with builtin workloads
//! must call [`harness::child_guard`] first thing in `main` (see the harness
//! module docs for why).

pub mod cli;
pub mod harness;
pub mod model;
pub mod seeds;
pub mod simgen;
pub mod stats;
pub mod workloads;

pub use model::{
    ConfidenceInterval, ExperimentConfig, InterferenceModel, MeasurementSample, Mode,
    PairedMatrix, RunSeries, WorkloadId, WorkloadSpec,
};
pub use stats::{Outcome, Verdict};
