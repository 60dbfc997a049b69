//! Bootstrap harness: coverage of private confidence intervals against the
//! non-private minimizer, and variability intervals from retraining on
//! resampled data.

use std::fmt::Write as _;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::erm::{solve_erm, TrainConfig};
use crate::error::{invalid, Error, Result};
use crate::intervals::{empirical_quantile_interval, fit_with_intervals, train_private, Perturbation};
use crate::losses::LossModel;
use crate::mechanisms::RngStream;
use crate::types::{check_alpha, BudgetSplit, Dataset, IntervalMethod, IntervalSet, ParamVector};

/// Stream ids at or above this offset belong to variability replicates, so
/// they never collide with coverage replicates under the same seed.
pub const VI_STREAM_OFFSET: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Coverage replicates.
    pub k: usize,
    /// Variability replicates.
    pub m_vi: usize,
    pub alpha: f64,
    pub seed: u64,
    pub budget_split: BudgetSplit,
    pub perturbation: Perturbation,
    pub loss: LossModel,
    pub train: TrainConfig,
    /// Monte Carlo samples per interval.
    pub mc_samples: usize,
    pub workers: usize,
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("k", "must be at least 1"));
        }
        if self.m_vi == 0 {
            return Err(invalid("m_vi", "must be at least 1"));
        }
        if self.workers == 0 {
            return Err(invalid("workers", "must be at least 1"));
        }
        check_alpha(self.alpha)?;
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateStats {
    pub coverage: f64,
    pub mean_ci_length: f64,
    pub sd_ci_length: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vi_length: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub coverage: f64,
    pub mean_ci_length: f64,
    /// Standard deviation over all replicate-coordinate lengths.
    pub sd_ci_length: f64,
    /// Mean variability-interval length; absent when no VI was computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_vi_length: Option<f64>,
    pub per_coordinate: Vec<CoordinateStats>,
    pub replicates: usize,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl EvalReport {
    /// Aggregates per-replicate intervals against the reference parameter.
    pub fn from_intervals(theta0: &ParamVector, intervals: &[IntervalSet]) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::EmptySamples);
        }
        let dim = theta0.len();
        if let Some(bad) = intervals.iter().find(|ci| ci.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        let k = intervals.len() as f64;
        let mut all = Vec::with_capacity(intervals.len() * dim);
        let per_coordinate = (0..dim)
            .map(|j| {
                let hits = intervals.iter().filter(|ci| ci.contains(j, theta0[j])).count();
                let lengths: Vec<f64> = intervals.iter().map(|ci| ci.hi()[j] - ci.lo()[j]).collect();
                all.extend_from_slice(&lengths);
                let (mean, sd) = mean_sd(&lengths);
                CoordinateStats {
                    coverage: hits as f64 / k,
                    mean_ci_length: mean,
                    sd_ci_length: sd,
                    vi_length: None,
                }
            })
            .collect::<Vec<_>>();
        let (mean, sd) = mean_sd(&all);
        let coverage = per_coordinate.iter().map(|c| c.coverage).sum::<f64>() / dim as f64;
        Ok(Self {
            coverage,
            mean_ci_length: mean,
            sd_ci_length: sd,
            mean_vi_length: None,
            per_coordinate,
            replicates: intervals.len(),
        })
    }

    pub fn attach_variability(&mut self, vi: &IntervalSet) -> Result<()> {
        if vi.len() != self.per_coordinate.len() {
            return Err(Error::DimensionMismatch {
                expected: self.per_coordinate.len(),
                found: vi.len(),
            });
        }
        for (stats, len) in self.per_coordinate.iter_mut().zip(vi.lengths()) {
            stats.vi_length = Some(len);
        }
        self.mean_vi_length = Some(vi.lengths().sum::<f64>() / vi.len() as f64);
        Ok(())
    }

    /// Aligned plain-text table, one row per coordinate plus a total row.
    pub fn to_table(&self) -> String {
        let fmt_vi = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        let mut rows = vec![[
            "coord".to_string(),
            "coverage".into(),
            "ci_mean".into(),
            "ci_sd".into(),
            "vi_length".into(),
        ]];
        for (j, c) in self.per_coordinate.iter().enumerate() {
            rows.push([
                j.to_string(),
                format!("{:.4}", c.coverage),
                format!("{:.6}", c.mean_ci_length),
                format!("{:.6}", c.sd_ci_length),
                fmt_vi(c.vi_length),
            ]);
        }
        rows.push([
            "all".into(),
            format!("{:.4}", self.coverage),
            format!("{:.6}", self.mean_ci_length),
            format!("{:.6}", self.sd_ci_length),
            fmt_vi(self.mean_vi_length),
        ]);
        let widths: Vec<usize> = (0..5).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for r in &rows {
            let line: Vec<String> = r.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
            let _ = writeln!(out, "{}", line.join("  "));
        }
        out
    }
}

/// Draws `n` records uniformly with replacement.
pub fn bootstrap_replicate(d: &Dataset, rng: &mut RngStream) -> Dataset {
    let n = d.len();
    let records = (0..n).map(|_| d.records()[rng.random_range(0..n)].clone()).collect();
    Dataset::new(records).expect("resampled records keep the dataset invariants")
}

/// Runs `count` replicates with `job(i, stream)` where replicate `i` gets
/// stream `offset + i`. Results are in replicate order regardless of
/// `workers`. Any failure aborts with a count of failed replicates.
fn run_replicates<T, F>(count: usize, seed: u64, offset: u64, workers: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut RngStream) -> Result<T> + Sync,
{
    let one = |i: usize| job(i, &mut RngStream::new(seed, offset + i as u64));
    let results: Vec<Result<T>> = if workers <= 1 {
        (0..count).map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| invalid("workers", e.to_string()))?;
        pool.install(|| (0..count).into_par_iter().map(one).collect())
    };
    let failed = results.iter().filter(|r| r.is_err()).count();
    if failed > 0 {
        let (first, err) = results
            .into_iter()
            .enumerate()
            .find_map(|(i, r)| r.err().map(|e| (i, e)))
            .expect("at least one failure");
        log::error!("{failed} of {count} replicates failed");
        return Err(Error::ReplicateFailed {
            failed,
            total: count,
            first,
            source: Box::new(err),
        });
    }
    Ok(results.into_iter().map(|r| r.expect("checked above")).collect())
}

/// Coverage of intervals produced by `replicate` against `theta0`.
pub fn coverage_with<F>(theta0: &ParamVector, k: usize, seed: u64, workers: usize, replicate: F) -> Result<EvalReport>
where
    F: Fn(usize, &mut RngStream) -> Result<IntervalSet> + Sync,
{
    let intervals = run_replicates(k, seed, 0, workers, replicate)?;
    EvalReport::from_intervals(theta0, &intervals)
}

/// Per-coordinate empirical `α/2` and `1 − α/2` quantiles of the estimates
/// produced by `replicate`. The result is tagged as a Monte Carlo interval.
pub fn variability_with<F>(m_vi: usize, alpha: f64, seed: u64, workers: usize, replicate: F) -> Result<IntervalSet>
where
    F: Fn(usize, &mut RngStream) -> Result<ParamVector> + Sync,
{
    check_alpha(alpha)?;
    let estimates = run_replicates(m_vi, seed, VI_STREAM_OFFSET, workers, replicate)?;
    let dim = estimates.first().map_or(0, ParamVector::len);
    let mut lo = Vec::with_capacity(dim);
    let mut hi = Vec::with_capacity(dim);
    for j in 0..dim {
        let column: Vec<f64> = estimates.iter().map(|t| t[j]).collect();
        let (l, h) = empirical_quantile_interval(&column, alpha)?;
        lo.push(l);
        hi.push(h);
    }
    IntervalSet::new(lo, hi, alpha, IntervalMethod::MonteCarloDP)
}

/// The reference parameter: non-private ERM on the full dataset.
pub fn reference_parameter(d: &Dataset, cfg: &EvalConfig) -> Result<ParamVector> {
    solve_erm(d, &cfg.loss, &cfg.train, None)
}

/// `k` bootstrap replicates, each trained privately with φ₁ and given
/// intervals with φ₂ and φ₃.
pub fn coverage_percentage(d: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let theta0 = reference_parameter(d, cfg)?;
    log::info!("coverage: {} replicates, {} workers", cfg.k, cfg.workers);
    coverage_with(&theta0, cfg.k, cfg.seed, cfg.workers, |_, rng| {
        let boot = bootstrap_replicate(d, rng);
        let (_, ci) = fit_with_intervals(
            &boot,
            &cfg.loss,
            &cfg.train,
            cfg.perturbation,
            &cfg.budget_split,
            cfg.alpha,
            cfg.mc_samples,
            rng,
        )?;
        Ok(ci)
    })
}

/// `m_vi` bootstrap replicates trained privately with φ₁ only.
pub fn variability_intervals(d: &Dataset, cfg: &EvalConfig) -> Result<IntervalSet> {
    cfg.validate()?;
    log::info!("variability: {} replicates, {} workers", cfg.m_vi, cfg.workers);
    variability_with(cfg.m_vi, cfg.alpha, cfg.seed, cfg.workers, |_, rng| {
        let boot = bootstrap_replicate(d, rng);
        let fit = train_private(&boot, &cfg.loss, &cfg.train, cfg.perturbation, cfg.budget_split.phi1, rng)?;
        Ok(fit.theta_tilde)
    })
}

/// Coverage report with the variability intervals attached.
pub fn evaluate(d: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    let mut report = coverage_percentage(d, cfg)?;
    let vi = variability_intervals(d, cfg)?;
    report.attach_variability(&vi)?;
    Ok(report)
}

/// Writes `x,ci_mean,ci_sd,vi_mean` rows, one per sweep point.
pub fn write_plot_data<W: Write>(points: &[(f64, &EvalReport)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x", "ci_mean", "ci_sd", "vi_mean"])?;
    for (x, r) in points {
        let vi = r.mean_vi_length.map_or_else(String::new, |v| v.to_string());
        w.write_record([x.to_string(), r.mean_ci_length.to_string(), r.sd_ci_length.to_string(), vi])?;
    }
    w.flush()?;
    Ok(())
}
