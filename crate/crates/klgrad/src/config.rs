//! Resolved per-command configurations. Config files are JSON with the same
//! shape; unknown keys are rejected and missing keys take the defaults below.

use std::path::Path;

use klgrad_core::trainer::{KlConfig, TrainConfig};
use klgrad_core::{ArParams, EstimatorKind, KlPlacement, SweepSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| {
        Error::Validation(format!("{}: {e}", path.display()))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExactConfig {
    pub policy: ArParams,
    pub reference: ArParams,
    pub seq_len: usize,
}

impl Default for ExactConfig {
    fn default() -> Self {
        Self {
            policy: ArParams { a: 0.3, b: 0.1 },
            reference: ArParams { a: 0.0, b: 0.0 },
            seq_len: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    pub kinds: Vec<EstimatorKind>,
    pub policy: ArParams,
    pub reference: ArParams,
    pub seq_len: usize,
    pub n: usize,
    pub seed: u64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            kinds: EstimatorKind::ALL.to_vec(),
            policy: ArParams { a: 0.3, b: 0.1 },
            reference: ArParams { a: 0.0, b: 0.0 },
            seq_len: 16,
            n: 200_000,
            seed: 0,
        }
    }
}

impl EstimateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() {
            return Err(Error::Validation("no estimators selected".into()));
        }
        if self.n < 2 {
            return Err(Error::Validation(format!("n must be at least 2, got {}", self.n)));
        }
        if self.seq_len == 0 {
            return Err(klgrad_core::Error::EmptySequence.into());
        }
        self.policy.validate_for(self.seq_len)?;
        self.reference.validate_for(self.seq_len)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct GradBiasConfig {
    pub sweep: SweepSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KlChoice {
    pub kind: EstimatorKind,
    pub placement: KlPlacement,
}

/// Grid of training runs: every `beta × kl × seed` combination applied to
/// `base`. An empty `seeds` list means `[base.seed]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub base: TrainConfig,
    pub betas: Vec<f64>,
    pub kl: Vec<KlChoice>,
    pub seeds: Vec<u64>,
}

impl SweepGrid {
    pub fn expand(&self) -> Vec<TrainConfig> {
        let seeds = if self.seeds.is_empty() {
            vec![self.base.seed]
        } else {
            self.seeds.clone()
        };
        let mut out = Vec::new();
        for &beta in &self.betas {
            for choice in &self.kl {
                for &seed in &seeds {
                    out.push(TrainConfig {
                        kl: KlConfig {
                            kind: choice.kind,
                            placement: choice.placement,
                            beta,
                        },
                        seed,
                        ..self.base.clone()
                    });
                }
            }
        }
        out
    }
}
