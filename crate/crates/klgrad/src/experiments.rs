//! Drivers that run an experiment, record it, and write its rows.

use std::path::PathBuf;

use klgrad_core::estimators::mc_kl;
use klgrad_core::gradient_lab::SweepSpec;
use klgrad_core::model::exact_kl;
use klgrad_core::seed::derive_stream;
use klgrad_core::trainer::{train_run, TrainConfig, TrainOutcome};
use klgrad_core::BiasVarianceReport;
use rayon::prelude::*;

use crate::config::{EstimateConfig, GradBiasConfig, SweepGrid};
use crate::error::{Error, Result};
use crate::run_store::{run_id, McRow, ResultRow, RowKind, RunRecord, RunStore};

pub fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Error::Validation("--jobs must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::Validation(format!("thread pool: {e}")))
}

/// Parallel version of `klgrad_core::gradient_lab::bias_variance_sweep`.
/// Trials are spread over the pool; results do not depend on its size.
pub fn grad_bias(
    spec: &SweepSpec,
    seed: u64,
    pool: &rayon::ThreadPool,
) -> Result<Vec<BiasVarianceReport>> {
    spec.validate()?;
    let cells = spec.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.trials).map(move |t| (c, t)))
        .collect();
    let means = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, t)| spec.run_trial(cells[c], t, seed))
            .collect::<klgrad_core::Result<Vec<_>>>()
    })?;
    cells
        .iter()
        .zip(means.chunks(spec.trials))
        .map(|(&cell, m)| Ok(spec.summarize(cell, m)?))
        .collect()
}

pub fn estimate(cfg: &EstimateConfig, pool: &rayon::ThreadPool) -> Result<Vec<McRow>> {
    cfg.validate()?;
    let exact = exact_kl(&cfg.policy, &cfg.reference, cfg.seq_len)?;
    pool.install(|| {
        cfg.kinds
            .par_iter()
            .map(|&kind| {
                let mut rng = derive_stream(cfg.seed, "estimate", &[kind as u64]);
                let est = mc_kl(kind, &cfg.policy, &cfg.reference, cfg.seq_len, cfg.n, &mut rng)?;
                Ok(McRow {
                    kind,
                    horizon: cfg.seq_len,
                    n: est.n,
                    mean: est.mean,
                    std_err: est.std_err,
                    sample_variance: est.sample_variance(),
                    exact_kl: exact,
                })
            })
            .collect()
    })
}

/// Where a recorded run left its files.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub dir: PathBuf,
}

fn finish(store: &RunStore, mut record: RunRecord, kind: RowKind, rows: &[ResultRow]) -> Result<RunOutput> {
    let sink = store.sink(&mut record, kind)?;
    sink.append_rows(rows)?;
    store.mark_completed(&mut record)?;
    Ok(RunOutput {
        dir: store.run_dir(&record.run_id),
        record,
    })
}

pub fn run_grad_bias(
    store: &RunStore,
    cfg: &GradBiasConfig,
    pool: &rayon::ThreadPool,
) -> Result<(RunOutput, Vec<BiasVarianceReport>)> {
    cfg.sweep.validate()?;
    let record = store.record_run("grad-bias", cfg)?;
    let reports = grad_bias(&cfg.sweep, cfg.seed, pool)?;
    let rows: Vec<ResultRow> = reports.iter().copied().map(ResultRow::BiasVariance).collect();
    Ok((finish(store, record, RowKind::BiasVariance, &rows)?, reports))
}

pub fn run_estimate(
    store: &RunStore,
    cfg: &EstimateConfig,
    pool: &rayon::ThreadPool,
) -> Result<(RunOutput, Vec<McRow>)> {
    cfg.validate()?;
    let record = store.record_run("estimate", cfg)?;
    let rows = estimate(cfg, pool)?;
    let out: Vec<ResultRow> = rows.iter().copied().map(ResultRow::McEstimate).collect();
    Ok((finish(store, record, RowKind::McEstimate, &out)?, rows))
}

pub fn run_train(store: &RunStore, cfg: &TrainConfig) -> Result<(RunOutput, TrainOutcome)> {
    cfg.validate()?;
    let record = store.record_run("train", cfg)?;
    let outcome = train_run(cfg)?;
    let rows: Vec<ResultRow> = outcome
        .metrics
        .iter()
        .copied()
        .map(ResultRow::TrainMetric)
        .collect();
    Ok((finish(store, record, RowKind::TrainMetric, &rows)?, outcome))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepStatus {
    Completed,
    /// A completed manifest with this run id already existed.
    Skipped,
    Diverged,
}

#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub run_id: String,
    pub config: TrainConfig,
    pub status: SweepStatus,
}

/// Runs every grid point not already completed in `store`.
pub fn run_sweep(
    store: &RunStore,
    grid: &SweepGrid,
    pool: &rayon::ThreadPool,
) -> Result<Vec<SweepEntry>> {
    let configs = grid.expand();
    for cfg in &configs {
        cfg.validate()?;
    }
    pool.install(|| {
        configs
            .into_par_iter()
            .map(|config| {
                let id = run_id("train", &serde_json::to_value(&config)?);
                if store.load(&id)?.is_some_and(|r| r.completed) {
                    return Ok(SweepEntry {
                        run_id: id,
                        config,
                        status: SweepStatus::Skipped,
                    });
                }
                let (out, outcome) = run_train(store, &config)?;
                Ok(SweepEntry {
                    run_id: out.record.run_id,
                    config,
                    status: if outcome.diverged {
                        SweepStatus::Diverged
                    } else {
                        SweepStatus::Completed
                    },
                })
            })
            .collect()
    })
}
