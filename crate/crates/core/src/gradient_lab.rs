//! KL-gradient configurations (estimator × placement) and the bias/variance
//! audit against the exact reverse-KL gradient.
//!
//! All gradients here are gradients of the KL term itself, in `(a, b)` space,
//! with the KL coefficient fixed at 1. For one sequence `Y ~ A` with sequence
//! score `s(Y) = ∇ ln A(Y)` and per-token scores `s_t`:
//!
//! | kind | Reward              | Loss              |
//! |------|---------------------|-------------------|
//! | K1   | `(Σ K1_t) · s(Y)`   | `s(Y)`            |
//! | K3   | `(Σ K3_t) · s(Y)`   | `Σ (−r_t) · s_t`  |
//!
//! and `Both` is the sum of the two columns. The reward column is the
//! score-function term (the estimate is a stop-gradient constant), the loss
//! column is the path-wise term.

use alloc::vec::Vec;

use crate::enumeration::for_each_sequence;
use crate::error::{Error, Result};
use crate::estimators::{k3_token, EstimatorKind};
use crate::math::bernoulli_logp;
use crate::model::{
    exact_kl_grad_dp, sample_sequence, ArParams, Conditionals, SequenceSample,
};
use crate::seed::derive_stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum KlPlacement {
    Reward,
    Loss,
    Both,
}

impl KlPlacement {
    pub const ALL: [KlPlacement; 3] = [KlPlacement::Reward, KlPlacement::Loss, KlPlacement::Both];

    pub fn name(self) -> &'static str {
        match self {
            KlPlacement::Reward => "reward",
            KlPlacement::Loss => "loss",
            KlPlacement::Both => "both",
        }
    }

    pub fn in_reward(self) -> bool {
        matches!(self, KlPlacement::Reward | KlPlacement::Both)
    }

    pub fn in_loss(self) -> bool {
        matches!(self, KlPlacement::Loss | KlPlacement::Both)
    }
}

impl core::fmt::Display for KlPlacement {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for KlPlacement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "reward" => Ok(KlPlacement::Reward),
            "loss" => Ok(KlPlacement::Loss),
            "both" => Ok(KlPlacement::Both),
            other => Err(Error::Config(alloc::format!("unknown placement `{other}`"))),
        }
    }
}

/// Batch-mean gradient in `(a, b)` space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradEstimate {
    pub d_a: f64,
    pub d_b: f64,
    pub n: usize,
}

/// Gradient contribution of one sequence under a configuration.
pub fn sequence_gradient(
    kind: EstimatorKind,
    placement: KlPlacement,
    policy: &ArParams,
    reference: &ArParams,
    sample: &SequenceSample,
) -> Result<[f64; 2]> {
    let n = sample.tokens.len();
    if sample.counts.len() != n {
        return Err(Error::Shape {
            expected: n,
            actual: sample.counts.len(),
        });
    }
    let mut score = [0.0; 2];
    let mut estimate = 0.0;
    let mut pathwise_k3 = [0.0; 2];
    for (t, (&y, &c)) in sample.tokens.iter().zip(&sample.counts).enumerate() {
        let lp = bernoulli_logp(policy.logit(t, c), y);
        let lq = bernoulli_logp(reference.logit(t, c), y);
        let s = policy.token_score(y, c);
        score[0] += s[0];
        score[1] += s[1];
        match kind {
            EstimatorKind::K1 => estimate += lp - lq,
            EstimatorKind::K3 => {
                estimate += k3_token(lp, lq);
                let r = libm::exp(lq - lp);
                pathwise_k3[0] -= r * s[0];
                pathwise_k3[1] -= r * s[1];
            }
        }
    }
    let reward = [estimate * score[0], estimate * score[1]];
    let loss = match kind {
        EstimatorKind::K1 => score,
        EstimatorKind::K3 => pathwise_k3,
    };
    Ok(match placement {
        KlPlacement::Reward => reward,
        KlPlacement::Loss => loss,
        KlPlacement::Both => [reward[0] + loss[0], reward[1] + loss[1]],
    })
}

/// Mean of [`sequence_gradient`] over a batch sampled from `policy`.
pub fn grad_config(
    kind: EstimatorKind,
    placement: KlPlacement,
    batch: &[SequenceSample],
    policy: &ArParams,
    reference: &ArParams,
) -> Result<GradEstimate> {
    let first = batch
        .first()
        .ok_or_else(|| Error::Config("gradient batch is empty".into()))?;
    let horizon = first.len();
    policy.validate_for(horizon)?;
    reference.validate_for(horizon)?;
    let mut sum = [0.0; 2];
    for sample in batch {
        if sample.len() != horizon {
            return Err(Error::Shape {
                expected: horizon,
                actual: sample.len(),
            });
        }
        let g = sequence_gradient(kind, placement, policy, reference, sample)?;
        sum[0] += g[0];
        sum[1] += g[1];
    }
    let n = batch.len();
    Ok(GradEstimate {
        d_a: sum[0] / n as f64,
        d_b: sum[1] / n as f64,
        n,
    })
}

/// Exact expectation of a configuration's gradient under `policy`, by
/// probability-weighted enumeration.
pub fn exact_config_expectation(
    kind: EstimatorKind,
    placement: KlPlacement,
    policy: &ArParams,
    reference: &ArParams,
    horizon: usize,
) -> Result<[f64; 2]> {
    policy.validate_for(horizon)?;
    reference.validate_for(horizon)?;
    let mut acc = [0.0; 2];
    for_each_sequence(horizon, |tokens| {
        let sample = SequenceSample::from_tokens(policy, tokens)?;
        let w = libm::exp(sample.log_prob());
        let g = sequence_gradient(kind, placement, policy, reference, &sample)?;
        acc[0] += w * g[0];
        acc[1] += w * g[1];
        Ok(())
    })?;
    Ok(acc)
}

/// Parameters of a bias/variance sweep.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct SweepSpec {
    pub kinds: Vec<EstimatorKind>,
    pub placements: Vec<KlPlacement>,
    pub lengths: Vec<usize>,
    pub trials: usize,
    pub n_per_trial: usize,
    pub policy: ArParams,
    pub reference: ArParams,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            kinds: EstimatorKind::ALL.to_vec(),
            placements: alloc::vec![KlPlacement::Reward, KlPlacement::Loss],
            lengths: alloc::vec![2, 4, 8, 16, 32],
            trials: 200,
            n_per_trial: 1000,
            policy: ArParams { a: 1.0, b: 0.5 },
            reference: ArParams { a: 0.0, b: 0.0 },
        }
    }
}

/// One cell of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepCell {
    pub kind: EstimatorKind,
    pub placement: KlPlacement,
    pub horizon: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 2 {
            return Err(Error::Config("trials must be at least 2".into()));
        }
        if self.n_per_trial < 2 {
            return Err(Error::Config("n_per_trial must be at least 2".into()));
        }
        if let Some(&t) = self.lengths.iter().find(|&&t| t == 0) {
            return Err(Error::Config(alloc::format!("invalid sequence length {t}")));
        }
        for &t in &self.lengths {
            self.policy.validate_for(t)?;
            self.reference.validate_for(t)?;
        }
        Ok(())
    }

    /// Cells in report order: kind, then placement, then length.
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut cells = Vec::new();
        for &kind in &self.kinds {
            for &placement in &self.placements {
                for &horizon in &self.lengths {
                    cells.push(SweepCell {
                        kind,
                        placement,
                        horizon,
                    });
                }
            }
        }
        cells
    }

    /// Batch-mean gradient of one trial. The random stream depends only on
    /// `(master_seed, cell, trial)`.
    pub fn run_trial(&self, cell: SweepCell, trial: usize, master_seed: u64) -> Result<[f64; 2]> {
        let mut rng = derive_stream(
            master_seed,
            "grad-bias",
            &[
                cell.kind as u64,
                cell.placement as u64,
                cell.horizon as u64,
                trial as u64,
            ],
        );
        let mut sum = [0.0; 2];
        for _ in 0..self.n_per_trial {
            let sample = sample_sequence(&self.policy, cell.horizon, &mut rng)?;
            let g = sequence_gradient(cell.kind, cell.placement, &self.policy, &self.reference, &sample)?;
            sum[0] += g[0];
            sum[1] += g[1];
        }
        let n = self.n_per_trial as f64;
        Ok([sum[0] / n, sum[1] / n])
    }

    /// Aggregates per-trial means against the exact gradient.
    pub fn summarize(&self, cell: SweepCell, trial_means: &[[f64; 2]]) -> Result<BiasVarianceReport> {
        let trials = trial_means.len();
        if trials < 2 {
            return Err(Error::Config("need at least 2 trials".into()));
        }
        let true_grad = exact_kl_grad_dp(&self.policy, &self.reference, cell.horizon)?;
        let mut mean = [0.0; 2];
        for m in trial_means {
            mean[0] += m[0];
            mean[1] += m[1];
        }
        mean[0] /= trials as f64;
        mean[1] /= trials as f64;
        let mut var = [0.0; 2];
        for m in trial_means {
            var[0] += (m[0] - mean[0]) * (m[0] - mean[0]);
            var[1] += (m[1] - mean[1]) * (m[1] - mean[1]);
        }
        var[0] /= (trials - 1) as f64;
        var[1] /= (trials - 1) as f64;
        let bias = [mean[0] - true_grad[0], mean[1] - true_grad[1]];
        Ok(BiasVarianceReport {
            kind: cell.kind,
            placement: cell.placement,
            horizon: cell.horizon,
            trials,
            n_per_trial: self.n_per_trial,
            mean_a: mean[0],
            mean_b: mean[1],
            bias_a: bias[0],
            bias_b: bias[1],
            var_a: var[0],
            var_b: var[1],
            true_grad,
        })
    }
}

/// Bias and variance of one configuration's trial-mean gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasVarianceReport {
    pub kind: EstimatorKind,
    pub placement: KlPlacement,
    pub horizon: usize,
    pub trials: usize,
    pub n_per_trial: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    /// Signed `mean − true` per component.
    pub bias_a: f64,
    pub bias_b: f64,
    /// Variance of the trial means (`trials − 1` divisor).
    pub var_a: f64,
    pub var_b: f64,
    pub true_grad: [f64; 2],
}

impl BiasVarianceReport {
    pub fn bias_norm(&self) -> f64 {
        libm::hypot(self.bias_a, self.bias_b)
    }

    pub fn var_trace(&self) -> f64 {
        self.var_a + self.var_b
    }

    /// Standard errors of the bias components.
    pub fn std_err(&self) -> [f64; 2] {
        let n = self.trials as f64;
        [libm::sqrt(self.var_a / n), libm::sqrt(self.var_b / n)]
    }

    /// Whether both bias components are within `z` standard errors of zero.
    pub fn bias_within(&self, z: f64) -> bool {
        let se = self.std_err();
        self.bias_a.abs() <= z * se[0] && self.bias_b.abs() <= z * se[1]
    }
}

/// Runs every cell of `spec` sequentially.
pub fn bias_variance_sweep(spec: &SweepSpec, master_seed: u64) -> Result<Vec<BiasVarianceReport>> {
    spec.validate()?;
    spec.cells()
        .into_iter()
        .map(|cell| {
            let means = (0..spec.trials)
                .map(|trial| spec.run_trial(cell, trial, master_seed))
                .collect::<Result<Vec<_>>>()?;
            spec.summarize(cell, &means)
        })
        .collect()
}
