//! The duet estimator and the baseline difference-of-means bootstrap.
//!
//! The ratio pipeline follows five steps: paired execution times form
//! per-iteration speedup samples `s = x / y`; each run's samples aggregate
//! into a per-run geometric mean; the per-run means aggregate into the grand
//! geometric mean `ggms` (the point estimate of relative performance); and a
//! non-parametric bootstrap over the per-run geometric means yields a
//! percentile confidence interval for `ggms`. An interval straddling 1.0
//! means the workloads performed equally.
//!
//! The baseline pipeline is a hierarchical bootstrap for the difference of
//! means: runs are resampled with replacement independently for both
//! workloads, iterations are resampled within each chosen run, and the
//! percentile interval of `mean(a*) - mean(b*)` is reported together with a
//! width normalized by the pooled sample mean so ratio-based and
//! difference-based procedures compare on one scale.
//!
//! Both pipelines winsorize each run's series first (ratios for the ratio
//! pipeline, durations for the difference pipeline): at most one observation
//! per run is replaced by its nearest neighbor when it falls further than
//! 20% of the remaining observations' min-max span outside that span.
//!
//! Percentile intervals use the nearest-rank method on the sorted replicate
//! statistics. All resampling is deterministic: replicate `i` of an
//! operation draws from the sub-stream `(seed, purpose, i)`, so results are
//! reproducible regardless of how the replicate loop is scheduled.

use rayon::prelude::*;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CiKind, ConfidenceInterval, PairedMatrix, PairedRun, RunSeries};
use crate::seeds;

/// Winsorization threshold: fraction of the remaining observations' span an
/// observation may exceed the span by before it is treated as an outlier.
pub const DEFAULT_WINSORIZE_THRESHOLD: f64 = 0.2;

/// Default number of bootstrap replicates.
pub const DEFAULT_REPLICATES: usize = 10_000;

/// Default confidence level.
pub const DEFAULT_LEVEL: f64 = 0.99;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("values must be > 0 for geometric aggregation (got {0})")]
    NonPositive(f64),
    #[error("warmup fraction must be in [0, 1), got {0}")]
    BadFraction(f64),
    #[error("discarding warmup from an empty run {0}")]
    WarmupEmpty(u32),
    #[error("confidence level must be in (0, 1), got {0}")]
    BadLevel(f64),
    #[error("run {0} has no samples")]
    EmptyRun(u32),
    #[error("relative width of a difference interval needs a positive mean, got {0}")]
    NonPositiveMean(f64),
}

/// Drops the first `floor(fraction * n)` durations of a run.
///
/// With `fraction < 1` at least one duration always survives; only an empty
/// input errors.
pub fn discard_warmup(series: &RunSeries, fraction: f64) -> Result<RunSeries, StatsError> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(StatsError::BadFraction(fraction));
    }
    if series.durations.is_empty() {
        return Err(StatsError::WarmupEmpty(series.run));
    }
    let drop = (fraction * series.durations.len() as f64).floor() as usize;
    Ok(RunSeries {
        run: series.run,
        durations: series.durations[drop..].to_vec(),
    })
}

/// Record of the single replacement a winsorization pass made.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Replacement {
    pub index: usize,
    pub original: f64,
    pub replacement: f64,
}

/// Result of winsorizing one run's series.
#[derive(Debug, Clone, PartialEq)]
pub struct Winsorized {
    pub values: Vec<f64>,
    pub replaced: Option<Replacement>,
    /// Series shorter than 3 are returned unchanged and flagged here.
    pub too_short: bool,
}

/// Replaces at most the single most extreme outlier with its nearest
/// neighbor among the remaining observations.
///
/// An observation `v` is an outlier when it lies further than
/// `threshold * span` outside the min-max span of the other observations.
/// When several observations qualify, the one exceeding its bound by the
/// largest distance is replaced, ties broken toward the earlier index.
/// Order and length are always preserved.
pub fn winsorize_run(values: &[f64], threshold: f64) -> Winsorized {
    let n = values.len();
    if n < 3 {
        return Winsorized {
            values: values.to_vec(),
            replaced: None,
            too_short: true,
        };
    }

    // min/max of every prefix and suffix so each "rest of the list" bound
    // costs O(1).
    let mut prefix_min = vec![f64::INFINITY; n + 1];
    let mut prefix_max = vec![f64::NEG_INFINITY; n + 1];
    let mut suffix_min = vec![f64::INFINITY; n + 1];
    let mut suffix_max = vec![f64::NEG_INFINITY; n + 1];
    for i in 0..n {
        prefix_min[i + 1] = prefix_min[i].min(values[i]);
        prefix_max[i + 1] = prefix_max[i].max(values[i]);
    }
    for i in (0..n).rev() {
        suffix_min[i] = suffix_min[i + 1].min(values[i]);
        suffix_max[i] = suffix_max[i + 1].max(values[i]);
    }

    let mut best: Option<(f64, usize, f64)> = None; // (excess, index, replacement)
    for (i, &v) in values.iter().enumerate() {
        let lo = prefix_min[i].min(suffix_min[i + 1]);
        let hi = prefix_max[i].max(suffix_max[i + 1]);
        let span = hi - lo;
        let (excess, replacement) = if v > hi + threshold * span {
            (v - (hi + threshold * span), hi)
        } else if v < lo - threshold * span {
            ((lo - threshold * span) - v, lo)
        } else {
            continue;
        };
        if best.map_or(true, |(e, _, _)| excess > e) {
            best = Some((excess, i, replacement));
        }
    }

    let mut out = values.to_vec();
    let replaced = best.map(|(_, index, replacement)| {
        let original = out[index];
        out[index] = replacement;
        Replacement {
            index,
            original,
            replacement,
        }
    });
    Winsorized {
        values: out,
        replaced,
        too_short: false,
    }
}

/// Per-run speedup samples `s = x / y`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRatios {
    pub run: u32,
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupSamples {
    pub runs: Vec<RunRatios>,
}

/// Elementwise execution-time ratios of the paired iterations.
pub fn speedup_samples(matrix: &PairedMatrix) -> Result<SpeedupSamples, StatsError> {
    let mut runs = Vec::with_capacity(matrix.run_count());
    for pr in matrix.runs() {
        let mut ratios = Vec::with_capacity(pr.x.len());
        for (&x, &y) in pr.x.iter().zip(&pr.y) {
            if x == 0 || y == 0 {
                return Err(StatsError::NonPositive(0.0));
            }
            ratios.push(x as f64 / y as f64);
        }
        runs.push(RunRatios { run: pr.run, ratios });
    }
    Ok(SpeedupSamples { runs })
}

/// Geometric mean, computed in log space.
pub fn geometric_mean(values: &[f64]) -> Result<f64, StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyInput("geometric mean of empty list"));
    }
    let mut sum = 0.0;
    for &v in values {
        if !(v > 0.0 && v.is_finite()) {
            return Err(StatsError::NonPositive(v));
        }
        sum += v.ln();
    }
    Ok((sum / values.len() as f64).exp())
}

/// Grand geometric mean across per-run geometric means.
pub fn grand_geometric_mean(gms: &[f64]) -> Result<f64, StatsError> {
    geometric_mean(gms)
}

/// Per-run geometric means and their grand geometric mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunGeoMeans {
    pub gms: Vec<f64>,
    pub ggms: f64,
}

/// Winsorizes each run's ratio series and aggregates it to `gms_r`;
/// returns the aggregate together with the number of runs in which
/// winsorization replaced an observation.
pub fn run_geo_means(
    speedups: &SpeedupSamples,
    threshold: f64,
) -> Result<(RunGeoMeans, usize), StatsError> {
    if speedups.runs.is_empty() {
        return Err(StatsError::EmptyInput("no runs"));
    }
    let mut gms = Vec::with_capacity(speedups.runs.len());
    let mut winsorized = 0;
    for run in &speedups.runs {
        let w = winsorize_run(&run.ratios, threshold);
        if w.replaced.is_some() {
            winsorized += 1;
        }
        gms.push(geometric_mean(&w.values)?);
    }
    let ggms = grand_geometric_mean(&gms)?;
    Ok((RunGeoMeans { gms, ggms }, winsorized))
}

fn check_level(level: f64) -> Result<(), StatsError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::BadLevel(level));
    }
    Ok(())
}

/// Nearest-rank percentile of an ascending-sorted slice.
fn percentile_nearest_rank(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

fn percentile_interval(mut replicates: Vec<f64>, level: f64) -> (f64, f64) {
    replicates.sort_by(f64::total_cmp);
    let lo = percentile_nearest_rank(&replicates, (1.0 - level) / 2.0);
    let hi = percentile_nearest_rank(&replicates, (1.0 + level) / 2.0);
    (lo, hi)
}

const RATIO_BOOTSTRAP_PURPOSE: &str = "ratio-bootstrap";
const DIFF_BOOTSTRAP_PURPOSE: &str = "diff-bootstrap";

/// Percentile bootstrap of the grand geometric mean, drawing runs with
/// replacement from the per-run geometric means.
///
/// Deterministic for a fixed seed. A single-run input yields the degenerate
/// width-0 interval.
pub fn bootstrap_ggms(
    gms: &[f64],
    replicates: usize,
    level: f64,
    seed: u64,
) -> Result<ConfidenceInterval, StatsError> {
    check_level(level)?;
    if replicates == 0 {
        return Err(StatsError::EmptyInput("zero bootstrap replicates"));
    }
    let point = grand_geometric_mean(gms)?;
    let logs: Vec<f64> = gms.iter().map(|g| g.ln()).collect();
    let n = logs.len();

    let stats: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeds::rng(seed, RATIO_BOOTSTRAP_PURPOSE, i as u64);
            let mut sum = 0.0;
            for _ in 0..n {
                sum += logs[rng.random_range(0..n)];
            }
            (sum / n as f64).exp()
        })
        .collect();

    let (lo, hi) = percentile_interval(stats, level);
    Ok(ConfidenceInterval::containing_point(
        lo,
        hi,
        level,
        CiKind::RatioOfMeans,
        point,
    ))
}

/// Full ratio-pipeline analysis of a paired matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioAnalysis {
    pub interval: ConfidenceInterval,
    pub geo_means: RunGeoMeans,
    /// Runs in which winsorization replaced an observation.
    pub winsorized_count: usize,
    /// True when only one run was available (width-0 interval).
    pub degenerate: bool,
}

/// Speedup samples, winsorization, per-run geometric means and the bootstrap
/// percentile interval for `ggms`, in one call.
pub fn bootstrap_ratio_ci(
    matrix: &PairedMatrix,
    replicates: usize,
    level: f64,
    seed: u64,
) -> Result<RatioAnalysis, StatsError> {
    let speedups = speedup_samples(matrix)?;
    let (geo_means, winsorized_count) = run_geo_means(&speedups, DEFAULT_WINSORIZE_THRESHOLD)?;
    let interval = bootstrap_ggms(&geo_means.gms, replicates, level, seed)?;
    Ok(RatioAnalysis {
        degenerate: geo_means.gms.len() < 2,
        interval,
        geo_means,
        winsorized_count,
    })
}

/// Baseline difference-of-means analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffAnalysis {
    pub interval: ConfidenceInterval,
    /// Pooled sample mean of both workloads, the normalizer for
    /// [`relative_width`].
    pub grand_mean: f64,
    pub winsorized_count: usize,
    /// True when either workload contributed only one run.
    pub degenerate: bool,
}

/// Hierarchical percentile bootstrap for the difference of means.
///
/// Per replicate, runs are resampled with replacement independently for both
/// workloads and iterations are resampled with replacement within each chosen
/// run; the statistic is the difference of the resampled grand means.
/// Winsorization is applied to each run's duration series beforehand.
/// Deterministic for a fixed seed.
pub fn bootstrap_diff_ci(
    a: &[RunSeries],
    b: &[RunSeries],
    replicates: usize,
    level: f64,
    seed: u64,
) -> Result<DiffAnalysis, StatsError> {
    check_level(level)?;
    if replicates == 0 {
        return Err(StatsError::EmptyInput("zero bootstrap replicates"));
    }
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptyInput("difference bootstrap needs runs on both sides"));
    }

    let mut winsorized_count = 0;
    let mut prepare = |side: &[RunSeries]| -> Result<Vec<Vec<f64>>, StatsError> {
        let mut runs = Vec::with_capacity(side.len());
        for rs in side {
            if rs.durations.is_empty() {
                return Err(StatsError::EmptyRun(rs.run));
            }
            let values: Vec<f64> = rs.durations.iter().map(|&d| d as f64).collect();
            let w = winsorize_run(&values, DEFAULT_WINSORIZE_THRESHOLD);
            if w.replaced.is_some() {
                winsorized_count += 1;
            }
            runs.push(w.values);
        }
        Ok(runs)
    };
    let wa = prepare(a)?;
    let wb = prepare(b)?;

    let total: f64 = wa.iter().chain(&wb).flatten().sum();
    let count = wa.iter().chain(&wb).map(Vec::len).sum::<usize>();
    let grand_mean = total / count as f64;

    let mean_of = |side: &[Vec<f64>]| -> f64 {
        let sum: f64 = side.iter().flatten().sum();
        let n: usize = side.iter().map(Vec::len).sum();
        sum / n as f64
    };
    let point = mean_of(&wa) - mean_of(&wb);

    let resample_mean = |side: &[Vec<f64>], rng: &mut rand_chacha::ChaCha8Rng| -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for _ in 0..side.len() {
            let run = &side[rng.random_range(0..side.len())];
            for _ in 0..run.len() {
                sum += run[rng.random_range(0..run.len())];
            }
            n += run.len();
        }
        sum / n as f64
    };

    let stats: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeds::rng(seed, DIFF_BOOTSTRAP_PURPOSE, i as u64);
            let ma = resample_mean(&wa, &mut rng);
            let mb = resample_mean(&wb, &mut rng);
            ma - mb
        })
        .collect();

    let (lo, hi) = percentile_interval(stats, level);
    Ok(DiffAnalysis {
        interval: ConfidenceInterval::containing_point(
            lo,
            hi,
            level,
            CiKind::DifferenceOfMeans,
            point,
        ),
        grand_mean,
        winsorized_count,
        degenerate: a.len() < 2 || b.len() < 2,
    })
}

/// Interval width on the common comparison scale: plain width for ratio
/// intervals, width normalized by the sample mean for difference intervals.
pub fn relative_width(ci: &ConfidenceInterval, grand_mean: f64) -> Result<f64, StatsError> {
    match ci.kind {
        CiKind::RatioOfMeans => Ok(ci.width()),
        CiKind::DifferenceOfMeans => {
            if grand_mean > 0.0 {
                Ok(ci.width() / grand_mean)
            } else {
                Err(StatsError::NonPositiveMean(grand_mean))
            }
        }
    }
}

fn permuted_indices(n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Permutes each run's `y` series by an independent uniform permutation,
/// leaving `x` and the run structure unchanged. Deterministic per seed.
///
/// Note that the per-run geometric mean of ratios equals
/// `gmean(x) / gmean(y)` and is therefore invariant under within-run
/// permutation; this operation changes individual speedup samples but not
/// the ratio pipeline's aggregate. Use [`shuffle_pairing_cross_run`] to
/// break the pairing in a way the aggregate is sensitive to.
pub fn shuffle_pairing(matrix: &PairedMatrix, seed: u64) -> PairedMatrix {
    let runs = matrix
        .runs()
        .iter()
        .map(|pr| {
            let mut rng = seeds::rng(seed, "shuffle", u64::from(pr.run));
            let idx = permuted_indices(pr.y.len(), &mut rng);
            PairedRun {
                run: pr.run,
                x: pr.x.clone(),
                y: idx.into_iter().map(|i| pr.y[i]).collect(),
            }
        })
        .collect();
    PairedMatrix::new(runs).expect("permutation preserves matrix invariants")
}

/// Breaks the pairing entirely: the `y` run series are permuted across runs
/// and each is permuted within itself, so ratios combine measurements from
/// unrelated runs and instants. Pairs truncate to the shorter series when
/// run lengths differ. Deterministic per seed.
pub fn shuffle_pairing_cross_run(matrix: &PairedMatrix, seed: u64) -> PairedMatrix {
    let mut rng = seeds::rng(seed, "cross-shuffle-runs", 0);
    let order = permuted_indices(matrix.run_count(), &mut rng);
    let runs = matrix
        .runs()
        .iter()
        .enumerate()
        .map(|(pos, pr)| {
            let donor = &matrix.runs()[order[pos]];
            let mut rng = seeds::rng(seed, "cross-shuffle-iters", pos as u64);
            let idx = permuted_indices(donor.y.len(), &mut rng);
            let mut y: Vec<u64> = idx.into_iter().map(|i| donor.y[i]).collect();
            let n = pr.x.len().min(y.len());
            y.truncate(n);
            PairedRun {
                run: pr.run,
                x: pr.x[..n].to_vec(),
                y,
            }
        })
        .collect();
    PairedMatrix::new(runs).expect("non-empty runs stay non-empty under cross-run shuffle")
}

/// Equal/different decision for an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Equal,
    Different,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Outcome::Equal => write!(f, "equal"),
            Outcome::Different => write!(f, "different"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub outcome: Outcome,
    pub interval: ConfidenceInterval,
}

/// Equal iff the interval straddles its kind's neutral value (1.0 for
/// ratios, 0.0 for differences), endpoints inclusive.
pub fn verdict(ci: &ConfidenceInterval) -> Verdict {
    let neutral = ci.kind.neutral();
    let outcome = if ci.lo <= neutral && neutral <= ci.hi {
        Outcome::Equal
    } else {
        Outcome::Different
    };
    Verdict {
        outcome,
        interval: *ci,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PairedRun;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn series(run: u32, durations: &[u64]) -> RunSeries {
        RunSeries {
            run,
            durations: durations.to_vec(),
        }
    }

    fn matrix(pairs: &[(&[u64], &[u64])]) -> PairedMatrix {
        let runs = pairs
            .iter()
            .enumerate()
            .map(|(i, (x, y))| PairedRun {
                run: i as u32 + 1,
                x: x.to_vec(),
                y: y.to_vec(),
            })
            .collect();
        PairedMatrix::new(runs).unwrap()
    }

    #[test]
    fn warmup_drops_first_half() {
        let s = discard_warmup(&series(1, &[1, 2, 3, 4]), 0.5).unwrap();
        assert_eq!(s.durations, vec![3, 4]);
    }

    #[test]
    fn warmup_floors_the_drop_count() {
        let s = discard_warmup(&series(1, &[1, 2, 3]), 0.5).unwrap();
        assert_eq!(s.durations, vec![2, 3]);
    }

    #[test]
    fn warmup_zero_fraction_is_identity() {
        let s = discard_warmup(&series(1, &[5]), 0.0).unwrap();
        assert_eq!(s.durations, vec![5]);
    }

    #[test]
    fn warmup_rejects_bad_inputs() {
        assert!(matches!(
            discard_warmup(&series(1, &[1]), 1.0),
            Err(StatsError::BadFraction(_))
        ));
        assert!(matches!(
            discard_warmup(&series(1, &[]), 0.5),
            Err(StatsError::WarmupEmpty(1))
        ));
    }

    #[test]
    fn winsorize_replaces_high_outlier() {
        let w = winsorize_run(&[10.0, 10.1, 10.2, 50.0], 0.2);
        assert_eq!(w.values, vec![10.0, 10.1, 10.2, 10.2]);
        let r = w.replaced.unwrap();
        assert_eq!(r.index, 3);
        assert_eq!(r.original, 50.0);
        assert_eq!(r.replacement, 10.2);
    }

    #[test]
    fn winsorize_keeps_clean_data() {
        let w = winsorize_run(&[10.0, 10.0, 10.0, 10.0], 0.2);
        assert_eq!(w.values, vec![10.0, 10.0, 10.0, 10.0]);
        assert!(w.replaced.is_none());
    }

    #[test]
    fn winsorize_replaces_low_outlier() {
        let w = winsorize_run(&[1.0, 10.0, 10.1, 10.2], 0.2);
        assert_eq!(w.values, vec![10.0, 10.0, 10.1, 10.2]);
    }

    #[test]
    fn winsorize_short_series_untouched() {
        let w = winsorize_run(&[1.0, 100.0], 0.2);
        assert_eq!(w.values, vec![1.0, 100.0]);
        assert!(w.too_short);
    }

    #[test]
    fn winsorize_replaces_most_extreme_of_two() {
        // Low candidate deviates further than the high one.
        let w = winsorize_run(&[-100.0, 10.0, 10.1, 10.2, 13.0], 0.2);
        assert_eq!(w.replaced.unwrap().index, 0);
    }

    #[test]
    fn speedups_match_examples() {
        let s = speedup_samples(&matrix(&[(&[10, 20], &[5, 10])])).unwrap();
        assert_eq!(s.runs[0].ratios, vec![2.0, 2.0]);
        let aa = speedup_samples(&matrix(&[(&[7, 9], &[7, 9])])).unwrap();
        assert_eq!(aa.runs[0].ratios, vec![1.0, 1.0]);
        let f = speedup_samples(&matrix(&[(&[3], &[4])])).unwrap();
        assert_eq!(f.runs[0].ratios, vec![0.75]);
    }

    #[test]
    fn geometric_mean_examples() {
        assert_relative_eq!(geometric_mean(&[2.0, 8.0]).unwrap(), 4.0, max_relative = 1e-12);
        assert_relative_eq!(geometric_mean(&[1.0, 1.0, 1.0]).unwrap(), 1.0, max_relative = 1e-12);
        assert_relative_eq!(geometric_mean(&[0.5, 2.0]).unwrap(), 1.0, max_relative = 1e-12);
        assert!(geometric_mean(&[]).is_err());
        assert!(geometric_mean(&[1.0, 0.0]).is_err());
        assert!(geometric_mean(&[1.0, -2.0]).is_err());
    }

    #[test]
    fn grand_geometric_mean_examples() {
        assert_relative_eq!(grand_geometric_mean(&[4.0, 9.0]).unwrap(), 6.0, max_relative = 1e-12);
        assert_relative_eq!(grand_geometric_mean(&[3.7]).unwrap(), 3.7, max_relative = 1e-12);
    }

    #[test]
    fn geomean_of_equal_length_runs_factors() {
        // gmean(concat) == ggms(per-run gmeans) when runs have equal length.
        let runs = [vec![1.5, 2.0, 0.5], vec![0.9, 1.1, 3.0]];
        let concat: Vec<f64> = runs.iter().flatten().copied().collect();
        let gms: Vec<f64> = runs.iter().map(|r| geometric_mean(r).unwrap()).collect();
        assert_relative_eq!(
            geometric_mean(&concat).unwrap(),
            grand_geometric_mean(&gms).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn bootstrap_zero_variance_is_degenerate_interval() {
        let m = matrix(&[(&[10, 20], &[10, 20]), (&[7, 7], &[7, 7]), (&[3], &[3])]);
        let r = bootstrap_ratio_ci(&m, 500, 0.99, 42).unwrap();
        assert_eq!(r.interval.lo, 1.0);
        assert_eq!(r.interval.hi, 1.0);
        assert_eq!(r.interval.point, 1.0);
    }

    #[test]
    fn bootstrap_single_run_flagged_degenerate() {
        let m = matrix(&[(&[10, 11, 12], &[10, 12, 12])]);
        let r = bootstrap_ratio_ci(&m, 500, 0.99, 1).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.interval.width(), 0.0);
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let m = matrix(&[(&[10, 12, 15], &[11, 12, 13]), (&[9, 14, 15], &[12, 12, 14])]);
        let r1 = bootstrap_ratio_ci(&m, 2000, 0.99, 7).unwrap();
        let r2 = bootstrap_ratio_ci(&m, 2000, 0.99, 7).unwrap();
        assert_eq!(r1.interval, r2.interval);
        let r3 = bootstrap_ratio_ci(&m, 2000, 0.99, 8).unwrap();
        assert!(r1.interval != r3.interval || r1.interval.width() == 0.0);
    }

    #[test]
    fn scaling_x_scales_interval_linearly() {
        let base = matrix(&[
            (&[100, 120, 150], &[110, 120, 130]),
            (&[90, 140, 150], &[120, 120, 140]),
            (&[100, 100, 160], &[100, 130, 140]),
        ]);
        let scaled = matrix(&[
            (&[300, 360, 450], &[110, 120, 130]),
            (&[270, 420, 450], &[120, 120, 140]),
            (&[300, 300, 480], &[100, 130, 140]),
        ]);
        let r1 = bootstrap_ratio_ci(&base, 1000, 0.99, 3).unwrap();
        let r2 = bootstrap_ratio_ci(&scaled, 1000, 0.99, 3).unwrap();
        assert_relative_eq!(r2.interval.point, 3.0 * r1.interval.point, max_relative = 1e-12);
        assert_relative_eq!(r2.interval.lo, 3.0 * r1.interval.lo, max_relative = 1e-12);
        assert_relative_eq!(r2.interval.hi, 3.0 * r1.interval.hi, max_relative = 1e-12);
    }

    #[test]
    fn scaling_both_sides_is_bit_identical() {
        let m1 = matrix(&[
            (&[100, 120, 150], &[110, 120, 130]),
            (&[90, 140, 150], &[120, 120, 140]),
        ]);
        let m2 = matrix(&[
            (&[700, 840, 1050], &[770, 840, 910]),
            (&[630, 980, 1050], &[840, 840, 980]),
        ]);
        let r1 = bootstrap_ratio_ci(&m1, 1000, 0.99, 11).unwrap();
        let r2 = bootstrap_ratio_ci(&m2, 1000, 0.99, 11).unwrap();
        assert_eq!(r1.interval, r2.interval);
    }

    #[test]
    fn antisymmetry_within_tolerance() {
        // End gaps stay well inside 20% of the rest span on both the ratio
        // and the reciprocal-ratio side, so winsorization replaces nothing
        // and the swap maps the interval to its exact mirror.
        let m = matrix(&[
            (&[10000, 10020, 10100, 10200, 10280, 10300], &[10150; 6]),
            (&[10020, 10040, 10120, 10220, 10301, 10321], &[10150; 6]),
            (&[9980, 10000, 10080, 10180, 10259, 10279], &[10150; 6]),
        ]);
        let swapped = PairedMatrix::new(
            m.runs()
                .iter()
                .map(|pr| PairedRun {
                    run: pr.run,
                    x: pr.y.clone(),
                    y: pr.x.clone(),
                })
                .collect(),
        )
        .unwrap();
        let r = bootstrap_ratio_ci(&m, 4000, 0.99, 5).unwrap();
        let s = bootstrap_ratio_ci(&swapped, 4000, 0.99, 5).unwrap();
        assert!(r.winsorized_count == 0 && s.winsorized_count == 0);
        assert_relative_eq!(s.interval.point, 1.0 / r.interval.point, max_relative = 1e-12);
        assert_relative_eq!(s.interval.lo, 1.0 / r.interval.hi, max_relative = 1e-12);
        assert_relative_eq!(s.interval.hi, 1.0 / r.interval.lo, max_relative = 1e-12);
    }

    #[test]
    fn bootstrap_ggms_mirrors_reciprocal_input() {
        // Same seed means the same resampling indices, so the interval of
        // the reciprocal gms list is the exact mirror of the original.
        let gms = [0.98, 1.01, 1.04, 0.99, 1.02];
        let inv: Vec<f64> = gms.iter().map(|g| 1.0 / g).collect();
        let r = bootstrap_ggms(&gms, 3000, 0.99, 77).unwrap();
        let s = bootstrap_ggms(&inv, 3000, 0.99, 77).unwrap();
        assert_relative_eq!(s.point, 1.0 / r.point, max_relative = 1e-12);
        assert_relative_eq!(s.lo, 1.0 / r.hi, max_relative = 1e-12);
        assert_relative_eq!(s.hi, 1.0 / r.lo, max_relative = 1e-12);
    }

    #[test]
    fn diff_identical_sides_straddle_zero() {
        let a = [series(1, &[10, 12, 14]), series(2, &[11, 13, 15])];
        let r = bootstrap_diff_ci(&a, &a, 1000, 0.99, 2).unwrap();
        assert_eq!(r.interval.point, 0.0);
        assert!(r.interval.lo <= 0.0 && 0.0 <= r.interval.hi);
    }

    #[test]
    fn diff_zero_variance_collapses() {
        let a = [series(1, &[10, 10]), series(2, &[10, 10])];
        let b = [series(1, &[7, 7]), series(2, &[7, 7])];
        let r = bootstrap_diff_ci(&a, &b, 1000, 0.99, 2).unwrap();
        assert_eq!(r.interval.point, 3.0);
        assert_eq!((r.interval.lo, r.interval.hi), (3.0, 3.0));
    }

    #[test]
    fn diff_rejects_empty_runs() {
        let a = [series(1, &[])];
        let b = [series(1, &[1])];
        assert!(matches!(
            bootstrap_diff_ci(&a, &b, 100, 0.99, 0),
            Err(StatsError::EmptyRun(1))
        ));
    }

    #[test]
    fn relative_width_examples() {
        let ratio = ConfidenceInterval::containing_point(0.95, 1.05, 0.99, CiKind::RatioOfMeans, 1.0);
        assert_relative_eq!(relative_width(&ratio, 0.0).unwrap(), 0.10, max_relative = 1e-12);
        let diff =
            ConfidenceInterval::containing_point(-2.0, 3.0, 0.99, CiKind::DifferenceOfMeans, 0.0);
        assert_relative_eq!(relative_width(&diff, 100.0).unwrap(), 0.05, max_relative = 1e-12);
        assert!(relative_width(&diff, 0.0).is_err());
        let degenerate =
            ConfidenceInterval::containing_point(1.3, 1.3, 0.99, CiKind::RatioOfMeans, 1.3);
        assert_eq!(relative_width(&degenerate, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn shuffle_of_singleton_runs_is_identity() {
        let m = matrix(&[(&[10], &[5]), (&[20], &[9])]);
        assert_eq!(shuffle_pairing(&m, 123), m);
    }

    #[test]
    fn shuffle_is_deterministic() {
        let m = matrix(&[(&[1, 2, 3, 4, 5, 6], &[6, 5, 4, 3, 2, 1])]);
        assert_eq!(shuffle_pairing(&m, 9), shuffle_pairing(&m, 9));
    }

    #[test]
    fn cross_run_shuffle_preserves_global_multiset() {
        let m = matrix(&[(&[1, 2], &[10, 20]), (&[3, 4], &[30, 40]), (&[5, 6], &[50, 60])]);
        let s = shuffle_pairing_cross_run(&m, 4);
        let mut all_y: Vec<u64> = s.runs().iter().flat_map(|r| r.y.clone()).collect();
        all_y.sort_unstable();
        assert_eq!(all_y, vec![10, 20, 30, 40, 50, 60]);
        let xs: Vec<Vec<u64>> = s.runs().iter().map(|r| r.x.clone()).collect();
        assert_eq!(xs, vec![vec![1, 2], vec![3, 4], vec![5, 6]]);
    }

    #[test]
    fn verdict_examples() {
        let eq = ConfidenceInterval::containing_point(0.98, 1.03, 0.99, CiKind::RatioOfMeans, 1.0);
        assert_eq!(verdict(&eq).outcome, Outcome::Equal);
        let diff = ConfidenceInterval::containing_point(1.02, 1.07, 0.99, CiKind::RatioOfMeans, 1.04);
        assert_eq!(verdict(&diff).outcome, Outcome::Different);
        let d = ConfidenceInterval::containing_point(-1.0, 2.0, 0.99, CiKind::DifferenceOfMeans, 0.5);
        assert_eq!(verdict(&d).outcome, Outcome::Equal);
        // Endpoints are inclusive.
        let edge = ConfidenceInterval::containing_point(1.0, 1.07, 0.99, CiKind::RatioOfMeans, 1.02);
        assert_eq!(verdict(&edge).outcome, Outcome::Equal);
    }

    proptest! {
        #[test]
        fn winsorize_changes_at_most_one_value(
            values in proptest::collection::vec(0.1f64..1000.0, 0..40),
        ) {
            let w = winsorize_run(&values, 0.2);
            prop_assert_eq!(w.values.len(), values.len());
            let changed = w.values.iter().zip(&values).filter(|(a, b)| a != b).count();
            prop_assert!(changed <= 1);
            if let Some(r) = w.replaced {
                prop_assert_eq!(w.values[r.index], r.replacement);
                // The replacement value exists among the other observations.
                prop_assert!(values.iter().enumerate().any(|(i, &v)| i != r.index && v == r.replacement));
            }
        }

        #[test]
        fn shuffle_preserves_per_run_multiset(
            ys in proptest::collection::vec(1u64..1000, 2..30),
            seed in proptest::num::u64::ANY,
        ) {
            let xs: Vec<u64> = (1..=ys.len() as u64).collect();
            let m = matrix(&[(&xs, &ys)]);
            let s = shuffle_pairing(&m, seed);
            let mut got = s.runs()[0].y.clone();
            let mut want = ys.clone();
            got.sort_unstable();
            want.sort_unstable();
            prop_assert_eq!(got, want);
            prop_assert_eq!(&s.runs()[0].x, &xs);
        }

        #[test]
        fn warmup_keeps_a_suffix(
            durs in proptest::collection::vec(1u64..1000, 1..50),
            fraction in 0.0f64..0.999,
        ) {
            let out = discard_warmup(&series(1, &durs), fraction).unwrap();
            prop_assert!(!out.durations.is_empty());
            prop_assert_eq!(&durs[durs.len() - out.durations.len()..], &out.durations[..]);
        }
    }
}
