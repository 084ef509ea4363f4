//! Run manifests and CSV result files.
//!
//! Layout under the output root:
//!
//! ```text
//! <out>/<run_id>/manifest.json
//! <out>/<run_id>/<row kind>.csv
//! ```
//!
//! `run_id` is a content hash of the command name and its fully resolved
//! configuration (seed included), so the same configuration always lands in
//! the same directory. Floats are written with 17 significant digits.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use klgrad_core::trainer::TrainMetrics;
use klgrad_core::{BiasVarianceReport, EstimatorKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Bumped whenever a CSV column set changes.
pub const SCHEMA_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub run_id: String,
    pub command: String,
    pub schema_version: u32,
    pub config: serde_json::Value,
    pub code_version: String,
    pub created_at: String,
    pub outputs: Vec<String>,
    pub completed: bool,
}

/// Content hash of `command` and `config`. Object keys are sorted before
/// hashing, so field order in the source file does not matter.
pub fn run_id(command: &str, config: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(config).expect("JSON values always serialize");
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update([0u8]);
    h.update(canonical.as_bytes());
    hex::encode(&h.finalize()[..8])
}

pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    pub fn load(&self, run_id: &str) -> Result<Option<RunRecord>> {
        let path = self.run_dir(run_id).join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_slice(&fs::read(path)?)?))
    }

    /// Writes the manifest for `config`, or returns the existing one if this
    /// exact configuration was recorded before.
    pub fn record_run<C: Serialize>(&self, command: &str, config: &C) -> Result<RunRecord> {
        let value = serde_json::to_value(config)?;
        let id = run_id(command, &value);
        if let Some(existing) = self.load(&id)? {
            return Ok(existing);
        }
        let record = RunRecord {
            run_id: id,
            command: command.to_string(),
            schema_version: SCHEMA_VERSION,
            config: value,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            created_at: chrono::Utc::now().to_rfc3339(),
            outputs: Vec::new(),
            completed: false,
        };
        fs::create_dir_all(self.run_dir(&record.run_id))?;
        self.write_manifest(&record)?;
        Ok(record)
    }

    fn write_manifest(&self, record: &RunRecord) -> Result<()> {
        let dir = self.run_dir(&record.run_id);
        let tmp = dir.join("manifest.json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(record)?)?;
        fs::rename(tmp, dir.join(MANIFEST))?;
        Ok(())
    }

    /// Opens a fresh CSV file for one row kind, replacing any partial output
    /// left by an interrupted attempt.
    pub fn sink(&self, record: &mut RunRecord, kind: RowKind) -> Result<RowSink> {
        let name = kind.file_name().to_string();
        let path = self.run_dir(&record.run_id).join(&name);
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&path)?;
        let mut out = BufWriter::new(file);
        let mut header = csv::Writer::from_writer(Vec::new());
        header.write_record(kind.header())?;
        out.write_all(&header.into_inner().map_err(|e| e.into_error())?)?;
        out.flush()?;
        if !record.outputs.contains(&name) {
            record.outputs.push(name);
        }
        Ok(RowSink {
            kind,
            run_id: record.run_id.clone(),
            path,
            out: Mutex::new(out),
        })
    }

    pub fn mark_completed(&self, record: &mut RunRecord) -> Result<()> {
        record.completed = true;
        self.write_manifest(record)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    BiasVariance,
    TrainMetric,
    McEstimate,
}

impl RowKind {
    pub fn file_name(self) -> &'static str {
        match self {
            RowKind::BiasVariance => "bias_variance.csv",
            RowKind::TrainMetric => "train_metric.csv",
            RowKind::McEstimate => "mc_estimate.csv",
        }
    }

    pub fn header(self) -> &'static [&'static str] {
        match self {
            RowKind::BiasVariance => &[
                "run_id", "schema_version", "estimator", "placement", "seq_len", "trials",
                "n_per_trial", "mean_a", "mean_b", "true_grad_a", "true_grad_b", "bias_a",
                "bias_b", "abs_bias_a", "abs_bias_b", "bias_norm", "se_a", "se_b", "var_a",
                "var_b", "var_trace",
            ],
            RowKind::TrainMetric => &[
                "run_id", "schema_version", "step", "mean_reward", "expected_reward",
                "exact_reverse_kl", "exact_forward_kl", "entropy", "grad_norm",
                "clip_fraction", "collapse_flag",
            ],
            RowKind::McEstimate => &[
                "run_id", "schema_version", "estimator", "seq_len", "n", "mean", "std_err",
                "sample_variance", "exact_kl",
            ],
        }
    }
}

/// One Monte Carlo KL estimate alongside the exact value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McRow {
    pub kind: EstimatorKind,
    pub horizon: usize,
    pub n: usize,
    pub mean: f64,
    pub std_err: f64,
    pub sample_variance: f64,
    pub exact_kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResultRow {
    BiasVariance(BiasVarianceReport),
    TrainMetric(TrainMetrics),
    McEstimate(McRow),
}

pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x:.16e}")
    }
}

impl ResultRow {
    pub fn kind(&self) -> RowKind {
        match self {
            ResultRow::BiasVariance(_) => RowKind::BiasVariance,
            ResultRow::TrainMetric(_) => RowKind::TrainMetric,
            ResultRow::McEstimate(_) => RowKind::McEstimate,
        }
    }

    /// Values after the `run_id, schema_version` prefix.
    fn fields(&self) -> Result<Vec<String>> {
        let f = fmt_f64;
        let fields = match self {
            ResultRow::BiasVariance(r) => {
                let se = r.std_err();
                let v = vec![
                    r.mean_a, r.mean_b, r.true_grad[0], r.true_grad[1], r.bias_a, r.bias_b,
                    r.bias_a.abs(), r.bias_b.abs(), r.bias_norm(), se[0], se[1], r.var_a, r.var_b,
                    r.var_trace(),
                ];
                check_finite(&v, false)?;
                let mut out = vec![
                    r.kind.to_string(),
                    r.placement.to_string(),
                    r.horizon.to_string(),
                    r.trials.to_string(),
                    r.n_per_trial.to_string(),
                ];
                out.extend(v.into_iter().map(f));
                out
            }
            ResultRow::TrainMetric(m) => {
                let v = [
                    m.mean_reward,
                    m.exact_reverse_kl,
                    m.exact_forward_kl,
                    m.entropy,
                    m.grad_norm,
                    m.clip_fraction,
                ];
                check_finite(&v, m.collapse_flag)?;
                vec![
                    m.step.to_string(),
                    f(m.mean_reward),
                    m.expected_reward.map(f).unwrap_or_default(),
                    f(m.exact_reverse_kl),
                    f(m.exact_forward_kl),
                    f(m.entropy),
                    f(m.grad_norm),
                    f(m.clip_fraction),
                    u8::from(m.collapse_flag).to_string(),
                ]
            }
            ResultRow::McEstimate(r) => {
                let v = [r.mean, r.std_err, r.sample_variance, r.exact_kl];
                check_finite(&v, false)?;
                let mut out = vec![r.kind.to_string(), r.horizon.to_string(), r.n.to_string()];
                out.extend(v.into_iter().map(f));
                out
            }
        };
        Ok(fields)
    }
}

fn check_finite(values: &[f64], flagged: bool) -> Result<()> {
    if !flagged && values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(
            "non-finite value in a row without a collapse flag".into(),
        ));
    }
    Ok(())
}

/// Serialized CSV writer for one run and row kind. Shareable across threads;
/// each `append_rows` call lands as one contiguous block.
pub struct RowSink {
    kind: RowKind,
    run_id: String,
    path: PathBuf,
    out: Mutex<BufWriter<File>>,
}

impl RowSink {
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append_rows(&self, rows: &[ResultRow]) -> Result<()> {
        if rows.is_empty() {
            return Ok(());
        }
        let mut block = csv::Writer::from_writer(Vec::new());
        let version = SCHEMA_VERSION.to_string();
        for row in rows {
            if row.kind() != self.kind {
                return Err(Error::Validation(format!(
                    "{:?} row written to a {:?} file",
                    row.kind(),
                    self.kind
                )));
            }
            let mut record = vec![self.run_id.clone(), version.clone()];
            record.extend(row.fields()?);
            block.write_record(&record)?;
        }
        let bytes = block.into_inner().map_err(|e| e.into_error())?;
        let mut out = self.out.lock().expect("sink lock poisoned");
        out.write_all(&bytes)?;
        out.flush()?;
        Ok(())
    }
}
