//! Synthetic paired measurements from a parametric interference model.
//!
//! [`generate`] produces duet-style data: both workloads of a run share one
//! run-level effect and, per iteration, one synchronized slowdown event, on
//! top of independent i.i.d. noise and optional one-sided events. Because
//! the shared factors multiply both sides of a pair, they cancel exactly in
//! the execution-time ratio — the mechanism the duet procedure exploits.
//!
//! [`replay_standard`] produces sequential-style data for the baseline
//! procedure: runs of the two workloads execute at different times, so no
//! sample shares anything with any other. Every sample draws its own
//! independent i.i.d. noise and interference events (an event hits whichever
//! workload happens to be running at that moment); the shared run-window and
//! synchronized-event structure of the paired generator does not apply.
//!
//! Both generators are pure functions of `(model, runs, iterations, seed)`.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::model::{
    self, ExperimentConfig, InterferenceModel, MeasurementSample, Mode, ModelError, PairedMatrix,
    PairedRun, RunSeries, WorkloadId, WorkloadKind, WorkloadSpec,
};
use crate::seeds;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("runs and iterations must be >= 1")]
    EmptyShape,
}

struct FactorDraw {
    iid: f64,
    sync: f64,
    desync: f64,
}

fn lognormal(rng: &mut rand_chacha::ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 1.0;
    }
    let z: f64 = StandardNormal.sample(rng);
    (sigma * z).exp()
}

fn event(rng: &mut rand_chacha::ChaCha8Rng, prob: f64, magnitude: f64) -> f64 {
    if prob > 0.0 && rng.random::<f64>() < prob {
        magnitude
    } else {
        1.0
    }
}

/// Combines a base time with noise factors; multiplicative by default,
/// linearized additive behind the model flag.
fn combine(base: f64, factors: &[f64], additive: bool) -> u64 {
    let value = if additive {
        let extra: f64 = factors.iter().map(|f| f - 1.0).sum();
        base * (1.0 + extra)
    } else {
        base * factors.iter().product::<f64>()
    };
    (value.round() as u64).max(1)
}

/// Generates a paired matrix of `runs x iterations` duet measurements.
///
/// Per run `r`, both workloads share one run effect; per iteration, both
/// share one synchronized event draw. The i.i.d. factors and the one-sided
/// (desynchronized) events are drawn independently per side.
pub fn generate(
    model: &InterferenceModel,
    runs: u32,
    iterations: u32,
    seed: u64,
) -> Result<PairedMatrix, SimError> {
    model.validate()?;
    if runs == 0 || iterations == 0 {
        return Err(SimError::EmptyShape);
    }

    let mut paired = Vec::with_capacity(runs as usize);
    for r in 1..=runs {
        let mut rng = seeds::rng(seed, "sim-run", u64::from(r));
        let run_effect = lognormal(&mut rng, model.run_sigma);
        let mut x = Vec::with_capacity(iterations as usize);
        let mut y = Vec::with_capacity(iterations as usize);
        for _ in 0..iterations {
            let sync = event(&mut rng, model.sync_prob, model.sync_magnitude);
            let side = |rng: &mut rand_chacha::ChaCha8Rng| FactorDraw {
                iid: lognormal(rng, model.iid_sigma),
                sync,
                desync: event(rng, model.desync_prob, model.desync_magnitude),
            };
            let fx = side(&mut rng);
            let fy = side(&mut rng);
            x.push(combine(
                model.base_a_ns,
                &[run_effect, fx.sync, fx.iid, fx.desync],
                model.additive,
            ));
            y.push(combine(
                model.base_b_ns,
                &[run_effect, fy.sync, fy.iid, fy.desync],
                model.additive,
            ));
        }
        paired.push(PairedRun { run: r, x, y });
    }
    Ok(PairedMatrix::new(paired)?)
}

/// Generates unpaired sequential-style measurements for the baseline
/// procedure: independent noise and event draws for every single sample.
pub fn replay_standard(
    model: &InterferenceModel,
    runs: u32,
    iterations: u32,
    seed: u64,
) -> Result<(Vec<RunSeries>, Vec<RunSeries>), SimError> {
    model.validate()?;
    if runs == 0 || iterations == 0 {
        return Err(SimError::EmptyShape);
    }

    let mut side = |which: u64, base: f64| -> Vec<RunSeries> {
        (1..=runs)
            .map(|r| {
                let mut rng = seeds::rng(seed, "replay", (which << 32) | u64::from(r));
                let durations = (0..iterations)
                    .map(|_| {
                        let factors = [
                            lognormal(&mut rng, model.iid_sigma),
                            event(&mut rng, model.sync_prob, model.sync_magnitude),
                            event(&mut rng, model.desync_prob, model.desync_magnitude),
                        ];
                        combine(base, &factors, model.additive)
                    })
                    .collect();
                RunSeries { run: r, durations }
            })
            .collect()
    };
    let a = side(0, model.base_a_ns);
    let b = side(1, model.base_b_ns);
    Ok((a, b))
}

/// Result files written by [`simulate_to_dir`].
pub struct SimulatedFiles {
    pub results_a: PathBuf,
    pub results_b: PathBuf,
    pub metadata: PathBuf,
}

fn matrix_to_samples(matrix: &PairedMatrix) -> (Vec<MeasurementSample>, Vec<MeasurementSample>) {
    let mut a = Vec::with_capacity(matrix.total_pairs());
    let mut b = Vec::with_capacity(matrix.total_pairs());
    // Synthetic start stamps: paired iterations start together, consecutive
    // iterations are laid out back to back.
    let mut clock = 0u64;
    for pr in matrix.runs() {
        for (i, (&x, &y)) in pr.x.iter().zip(&pr.y).enumerate() {
            let iteration = i as u32 + 1;
            a.push(MeasurementSample::new(WorkloadId::A, pr.run, iteration, clock, x));
            b.push(MeasurementSample::new(WorkloadId::B, pr.run, iteration, clock, y));
            clock += x.max(y);
        }
    }
    (a, b)
}

/// Generates a paired matrix and writes it in the harness result-file layout
/// (`results_a.csv`, `results_b.csv`, `metadata.json`), so synthetic and real
/// data flow through the identical analysis path. Byte-deterministic for
/// fixed arguments.
pub fn simulate_to_dir(
    interference: &InterferenceModel,
    runs: u32,
    iterations: u32,
    seed: u64,
    out_dir: &Path,
) -> Result<SimulatedFiles, SimError> {
    let matrix = generate(interference, runs, iterations, seed)?;
    std::fs::create_dir_all(out_dir).map_err(|e| ModelError::Io {
        path: out_dir.display().to_string(),
        source: e,
    })?;

    let (a, b) = matrix_to_samples(&matrix);
    let results_a = out_dir.join(model::RESULTS_A_FILE);
    let results_b = out_dir.join(model::RESULTS_B_FILE);
    model::write_samples_csv(&results_a, &a)?;
    model::write_samples_csv(&results_b, &b)?;

    // The config records the invocation that regenerates this data.
    let regenerate = |label: &str| WorkloadSpec {
        label: label.to_string(),
        kind: WorkloadKind::External {
            command: "duet".into(),
            args: vec![
                "simulate".into(),
                "--runs".into(),
                runs.to_string(),
                "--iterations".into(),
                iterations.to_string(),
                "--seed".into(),
                seed.to_string(),
            ],
            env: vec![],
        },
    };
    let meta = model::ExperimentMetadata {
        config: ExperimentConfig {
            mode: Mode::Duet,
            workload_a: regenerate("synthetic-a"),
            workload_b: regenerate("synthetic-b"),
            runs,
            max_iterations: iterations,
            max_time_s: 600.0,
            warmup_fraction: 0.0,
            seed,
            cores: None,
        },
        host: model::HostInfo {
            cpu_model: "synthetic".into(),
            logical_cpus: 0,
            clock_source: "synthetic".into(),
            clock_resolution_ns: 1,
            os: "synthetic".into(),
        },
        harness_version: env!("CARGO_PKG_VERSION").into(),
        runs: Vec::new(),
        execution_order: None,
        discarded_runs: Vec::new(),
        run_timeout_s: 0.0,
    };
    let metadata = out_dir.join(model::METADATA_FILE);
    model::write_metadata(&metadata, &meta)?;

    // Keep the noise model next to the data for provenance.
    let model_path = out_dir.join("model.json");
    let json = serde_json::to_string_pretty(interference).expect("model serializes");
    std::fs::write(&model_path, json + "\n").map_err(|e| ModelError::Io {
        path: model_path.display().to_string(),
        source: e,
    })?;

    Ok(SimulatedFiles {
        results_a,
        results_b,
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use approx::assert_relative_eq;

    fn eventful() -> InterferenceModel {
        InterferenceModel {
            base_a_ns: 1e8,
            base_b_ns: 1e8,
            iid_sigma: 0.01,
            sync_prob: 0.3,
            sync_magnitude: 3.0,
            desync_prob: 0.0,
            desync_magnitude: 1.0,
            run_sigma: 0.1,
            additive: false,
        }
    }

    #[test]
    fn shared_factors_cancel_exactly() {
        // Only shared noise: every ratio is exactly 1.0 no matter how strong
        // the sync events and run effects are.
        let mut m = InterferenceModel::noise_free(1e8, 1e8);
        m.sync_prob = 0.5;
        m.sync_magnitude = 4.0;
        m.run_sigma = 0.3;
        let matrix = generate(&m, 5, 20, 123).unwrap();
        for pr in matrix.runs() {
            assert_eq!(pr.x, pr.y);
        }
        let analysis = stats::bootstrap_ratio_ci(&matrix, 500, 0.99, 9).unwrap();
        assert_eq!(analysis.interval.width(), 0.0);
        assert_eq!(analysis.interval.point, 1.0);
    }

    #[test]
    fn noise_free_ab_ratio_is_exact() {
        let m = InterferenceModel::noise_free(1e8, 2e8);
        let matrix = generate(&m, 3, 10, 7).unwrap();
        let speedups = stats::speedup_samples(&matrix).unwrap();
        for run in &speedups.runs {
            for &s in &run.ratios {
                assert_eq!(s, 0.5);
            }
        }
    }

    #[test]
    fn generate_is_deterministic() {
        let m = eventful();
        assert_eq!(generate(&m, 4, 8, 99).unwrap(), generate(&m, 4, 8, 99).unwrap());
        assert_ne!(generate(&m, 4, 8, 99).unwrap(), generate(&m, 4, 8, 100).unwrap());
    }

    #[test]
    fn replay_is_deterministic_and_unshared() {
        let m = eventful();
        let (a1, b1) = replay_standard(&m, 4, 8, 5).unwrap();
        let (a2, b2) = replay_standard(&m, 4, 8, 5).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        assert_ne!(a1, b1);
    }

    #[test]
    fn replay_noise_free_is_constant() {
        let m = InterferenceModel::noise_free(250.0, 750.0);
        let (a, b) = replay_standard(&m, 2, 5, 1).unwrap();
        assert!(a.iter().all(|r| r.durations.iter().all(|&d| d == 250)));
        assert!(b.iter().all(|r| r.durations.iter().all(|&d| d == 750)));
    }

    #[test]
    fn invalid_model_rejected() {
        let mut m = eventful();
        m.sync_prob = 2.0;
        assert!(generate(&m, 2, 2, 0).is_err());
        assert!(replay_standard(&m, 2, 2, 0).is_err());
    }

    #[test]
    fn additive_mode_produces_positive_durations() {
        let mut m = eventful();
        m.additive = true;
        let matrix = generate(&m, 3, 16, 3).unwrap();
        assert!(matrix.runs().iter().all(|pr| pr.x.iter().all(|&d| d > 0)));
    }

    #[test]
    fn desync_noise_moves_ratios_off_one() {
        let mut m = InterferenceModel::noise_free(1e8, 1e8);
        m.desync_prob = 0.5;
        m.desync_magnitude = 2.0;
        let matrix = generate(&m, 2, 50, 11).unwrap();
        let speedups = stats::speedup_samples(&matrix).unwrap();
        let off: usize = speedups
            .runs
            .iter()
            .flat_map(|r| &r.ratios)
            .filter(|&&s| s != 1.0)
            .count();
        assert!(off > 0);
    }

    #[test]
    fn simulate_to_dir_round_trips_through_analysis() {
        let dir = tempfile::tempdir().unwrap();
        let m = InterferenceModel::noise_free(1e6, 1e6);
        let files = simulate_to_dir(&m, 3, 4, 21, dir.path()).unwrap();
        let a = model::read_samples_csv(&files.results_a).unwrap();
        let b = model::read_samples_csv(&files.results_b).unwrap();
        let matrix = model::pair_results(&a, &b).unwrap();
        let analysis = stats::bootstrap_ratio_ci(&matrix, 200, 0.99, 0).unwrap();
        assert_eq!(analysis.interval.width(), 0.0);
        let meta = model::read_metadata(&files.metadata).unwrap();
        assert_eq!(meta.config.runs, 3);
    }

    #[test]
    fn simulate_to_dir_is_byte_deterministic() {
        let m = eventful();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        simulate_to_dir(&m, 3, 5, 8, d1.path()).unwrap();
        simulate_to_dir(&m, 3, 5, 8, d2.path()).unwrap();
        for name in [model::RESULTS_A_FILE, model::RESULTS_B_FILE] {
            let x = std::fs::read(d1.path().join(name)).unwrap();
            let y = std::fs::read(d2.path().join(name)).unwrap();
            assert_eq!(x, y, "{name} differs between identical invocations");
        }
    }

    #[test]
    fn ab_construction_recovers_known_ratio() {
        // A/B with base_b = 2 * base_a under full noise: ggms lands near 0.5.
        let mut m = eventful();
        m.base_b_ns = 2e8;
        let matrix = generate(&m, 10, 50, 31).unwrap();
        let analysis = stats::bootstrap_ratio_ci(&matrix, 2000, 0.99, 4).unwrap();
        assert_relative_eq!(analysis.interval.point, 0.5, max_relative = 0.02);
    }
}
