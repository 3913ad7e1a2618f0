//! Monte Carlo sweeps over randomly generated confounded models.
//!
//! Each replication draws a model with [`sample_params`], a dataset with
//! [`sample_dataset`], runs the estimator and records true and estimated
//! strengths. Replications use independent random streams, so the records
//! are identical whatever the degree of parallelism.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::estimator::{estimate_from_data, GridConfig};
use crate::rng::{cell_stream, stream_rng};
use crate::scm::{beta_prime, ground_truth, sample_dataset, sample_params};

pub const DEFAULT_PERMUTATIONS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationConfig {
    pub dims: Vec<usize>,
    pub sample_sizes: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub grid: GridConfig,
    /// Permutations for the correlation test; 0 disables it.
    pub permutations: usize,
}

impl SimulationConfig {
    pub fn new(dims: Vec<usize>, sample_sizes: Vec<usize>, reps: usize, seed: u64) -> Self {
        Self { dims, sample_sizes, reps, seed, grid: GridConfig::default(), permutations: DEFAULT_PERMUTATIONS }
    }

    fn cells(&self) -> Vec<(usize, usize)> {
        self.dims
            .iter()
            .flat_map(|&d| self.sample_sizes.iter().map(move |&n| (d, n)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub seed: u64,
    pub cell: u32,
    pub rep: u32,
    pub d: usize,
    pub n: usize,
    pub beta_true: f64,
    pub gamma_true: f64,
    pub eta_true: f64,
    pub beta_hat: f64,
    pub eta_hat: f64,
    pub distance: f64,
    pub beta_prime: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub d: usize,
    pub n: usize,
    pub reps: usize,
    /// Replications skipped because of a numerical failure.
    pub failed: usize,
    pub pearson: f64,
    pub rmse: f64,
    pub mean_beta_true: f64,
    pub mean_beta_hat: f64,
    pub permutation_p_value: Option<f64>,
    pub t_test_p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub seed: u64,
    pub grid: GridConfig,
    pub permutations: usize,
    pub cells: Vec<CellSummary>,
}

/// One replication of sweep cell `cell`.
pub fn run_replication(seed: u64, cell: u32, rep: u32, d: usize, n: usize, grid: &GridConfig) -> Result<SimulationRecord> {
    let mut rng = stream_rng(seed, cell_stream(cell, rep));
    let params = sample_params(d, &mut rng)?;
    let truth = ground_truth(&params)?;
    let data = sample_dataset(&params, n, &mut rng)?;
    let est = estimate_from_data(&data, grid)?;
    Ok(SimulationRecord {
        seed,
        cell,
        rep,
        d,
        n,
        beta_true: truth.beta,
        gamma_true: truth.gamma,
        eta_true: truth.eta,
        beta_hat: est.beta_hat,
        eta_hat: est.eta_hat,
        distance: est.distance,
        beta_prime: beta_prime(&data)?,
    })
}

pub fn run_simulation(cfg: &SimulationConfig) -> Result<(Vec<SimulationRecord>, SimulationSummary)> {
    if cfg.reps == 0 || cfg.dims.is_empty() || cfg.sample_sizes.is_empty() {
        return Err(Error::invalid("simulation needs at least one dimension, sample size and replication"));
    }
    if cfg.dims.contains(&0) || cfg.sample_sizes.iter().any(|&n| n < 2) {
        return Err(Error::invalid("dimensions must be positive and sample sizes at least 2"));
    }
    let reps = u32::try_from(cfg.reps).map_err(|_| Error::invalid("too many replications"))?;
    let mut records = Vec::new();
    let mut cells = Vec::new();
    for (cell, (d, n)) in cfg.cells().into_iter().enumerate() {
        let cell = cell as u32;
        let outcomes: Vec<Result<SimulationRecord>> = (0..reps)
            .into_par_iter()
            .map(|rep| run_replication(cfg.seed, cell, rep, d, n, &cfg.grid))
            .collect();
        let mut cell_records = Vec::with_capacity(cfg.reps);
        let mut failed = 0;
        for outcome in outcomes {
            match outcome {
                Ok(r) => cell_records.push(r),
                Err(e) if e.is_numerical() => {
                    log::warn!("cell d={d} n={n}: replication skipped: {e}");
                    failed += 1;
                }
                Err(e) => return Err(e),
            }
        }
        cells.push(summarize_cell(d, n, &cell_records, failed, cfg.permutations, cfg.seed ^ u64::from(cell)));
        records.extend(cell_records);
    }
    let summary = SimulationSummary { seed: cfg.seed, grid: cfg.grid, permutations: cfg.permutations, cells };
    Ok((records, summary))
}

fn summarize_cell(
    d: usize,
    n: usize,
    records: &[SimulationRecord],
    failed: usize,
    permutations: usize,
    perm_seed: u64,
) -> CellSummary {
    let truth: Vec<f64> = records.iter().map(|r| r.beta_true).collect();
    let est: Vec<f64> = records.iter().map(|r| r.beta_hat).collect();
    let r = pearson(&truth, &est);
    CellSummary {
        d,
        n,
        reps: records.len(),
        failed,
        pearson: r,
        rmse: rmse(&truth, &est),
        mean_beta_true: mean(&truth),
        mean_beta_hat: mean(&est),
        permutation_p_value: (permutations > 0).then(|| permutation_p_value(&truth, &est, permutations, perm_seed)),
        t_test_p_value: correlation_t_test(r, records.len()),
    }
}

fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample Pearson correlation; NaN when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    sxy / (sxx * syy).sqrt()
}

pub fn rmse(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    (x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Two-sided p-value of `H0: ρ = 0` from the Student-t distribution of
/// `r √(n−2) / √(1−r²)`.
pub fn correlation_t_test(r: f64, n: usize) -> f64 {
    if n < 3 || !r.is_finite() {
        return f64::NAN;
    }
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r.abs() * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid degrees of freedom");
    2.0 * dist.sf(t)
}

const PERMUTATION_CHUNK: usize = 10_000;

/// Two-sided permutation p-value `(1 + #{|r_π| ≥ |r|}) / (1 + permutations)`.
/// The smallest attainable value is `1 / (1 + permutations)`.
pub fn permutation_p_value(x: &[f64], y: &[f64], permutations: usize, seed: u64) -> f64 {
    assert_eq!(x.len(), y.len());
    let observed = pearson(x, y).abs();
    if !observed.is_finite() {
        return f64::NAN;
    }
    let (mx, my) = (mean(x), mean(y));
    let xc: Vec<f64> = x.iter().map(|v| v - mx).collect();
    let yc: Vec<f64> = y.iter().map(|v| v - my).collect();
    let scale = (xc.iter().map(|v| v * v).sum::<f64>() * yc.iter().map(|v| v * v).sum::<f64>()).sqrt();
    // guard against ties with the observed statistic being lost to rounding
    let threshold = observed * scale * (1.0 - 1e-12);

    let chunks = permutations.div_ceil(PERMUTATION_CHUNK);
    let exceed: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, u64::MAX - c as u64);
            let mut perm = yc.clone();
            let count = PERMUTATION_CHUNK.min(permutations - c * PERMUTATION_CHUNK);
            (0..count)
                .filter(|_| {
                    perm.shuffle(&mut rng);
                    let s: f64 = xc.iter().zip(&perm).map(|(a, b)| a * b).sum();
                    s.abs() >= threshold
                })
                .count()
        })
        .sum();
    (1 + exceed) as f64 / (1 + permutations) as f64
}
