//! Toy verifiable-reward policy-gradient trainer.
//!
//! REINFORCE with a leave-one-out baseline, an optional clipped importance
//! ratio, minibatching and a parameter-staleness lag to produce off-policy
//! updates. The KL regularizer is applied according to a [`KlConfig`]. Every
//! step records exact diagnostics of the current policy against the frozen
//! reference (the initial policy).

mod policy;
mod reward;
mod update;

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

pub use policy::{PolicyModel, PolicySpec};
pub use reward::RewardSpec;
pub use update::{
    apply_kl_to_reward, kl_loss_gradient, kl_token_values, rloo_advantage, rollout_group,
    surrogate_gradient, SurrogateGradient,
};

use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::gradient_lab::KlPlacement;
use crate::model::{exact_kl, sequence_entropy, ArParams, SequenceSample};
use crate::seed::derive_stream;

/// Entropy (nats) below which a run is flagged as collapsed.
pub const ENTROPY_COLLAPSE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct KlConfig {
    pub kind: EstimatorKind,
    pub placement: KlPlacement,
    pub beta: f64,
}

impl KlConfig {
    pub fn off() -> Self {
        Self {
            kind: EstimatorKind::K1,
            placement: KlPlacement::Reward,
            beta: 0.0,
        }
    }

    pub fn active(&self) -> bool {
        self.beta > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct TrainConfig {
    pub policy: PolicySpec,
    pub reward: RewardSpec,
    pub kl: KlConfig,
    pub group_size: usize,
    pub prompts_per_batch: usize,
    pub minibatches_per_batch: usize,
    /// Sampling uses the parameters from this many steps earlier.
    pub async_lag: usize,
    pub clip_eps: f64,
    /// `None` picks 0.1 for the two-parameter model and 0.05 for tabular.
    pub learning_rate: Option<f64>,
    pub steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            policy: PolicySpec::two_param(ArParams { a: 0.0, b: 0.0 }, 16),
            reward: RewardSpec::CountTarget { k: 10 },
            kl: KlConfig::off(),
            group_size: 4,
            prompts_per_batch: 8,
            minibatches_per_batch: 1,
            async_lag: 0,
            clip_eps: 0.2,
            learning_rate: None,
            steps: 300,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        let fail = |msg: alloc::string::String| Err(Error::Config(msg));
        if self.group_size < 2 {
            return fail(alloc::format!("group_size must be >= 2, got {}", self.group_size));
        }
        if self.prompts_per_batch == 0 {
            return fail("prompts_per_batch must be >= 1".into());
        }
        let batch = self.batch_size();
        if self.minibatches_per_batch == 0 || self.minibatches_per_batch > batch {
            return fail(alloc::format!(
                "minibatches_per_batch must be in 1..={batch}, got {}",
                self.minibatches_per_batch
            ));
        }
        if !self.clip_eps.is_finite() || self.clip_eps <= 0.0 {
            return fail(alloc::format!("clip_eps must be > 0, got {}", self.clip_eps));
        }
        if !self.kl.beta.is_finite() || self.kl.beta < 0.0 {
            return fail(alloc::format!("beta must be >= 0, got {}", self.kl.beta));
        }
        let lr = self.learning_rate();
        if !lr.is_finite() || lr <= 0.0 {
            return fail(alloc::format!("learning_rate must be > 0, got {lr}"));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.group_size * self.prompts_per_batch
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or(match self.policy.model {
            PolicyModel::TwoParam(_) => 0.1,
            PolicyModel::Tabular(_) => 0.05,
        })
    }
}

/// Diagnostics after one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainMetrics {
    pub step: usize,
    /// Mean reward of the batch sampled at this step.
    pub mean_reward: f64,
    /// Exact expected reward of the updated policy, when the reward depends
    /// only on the final count.
    pub expected_reward: Option<f64>,
    pub exact_reverse_kl: f64,
    pub exact_forward_kl: f64,
    pub entropy: f64,
    pub grad_norm: f64,
    /// Share of tokens whose clipped surrogate branch was active.
    pub clip_fraction: f64,
    pub collapse_flag: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub metrics: Vec<TrainMetrics>,
    pub final_policy: PolicySpec,
    /// Parameters or gradients became non-finite and the run stopped early.
    pub diverged: bool,
}

/// Runs `config.steps` sampled batches, each followed by
/// `minibatches_per_batch` gradient-ascent updates.
pub fn train_run(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let horizon = config.policy.horizon;
    let reference = config.policy.clone();
    let mut current = config.policy.clone();
    let lr = config.learning_rate();
    let kl = config.kl;
    let batch_size = config.batch_size();
    let total_tokens = batch_size * horizon;

    let mut history: VecDeque<PolicySpec> = VecDeque::with_capacity(config.async_lag + 1);
    history.push_back(current.clone());
    let mut metrics = Vec::with_capacity(config.steps);
    let mut diverged = false;

    for step in 0..config.steps {
        let sampler = history.front().expect("history holds the current policy").clone();
        let mut rng = derive_stream(config.seed, "rollout", &[step as u64]);

        let mut batch: Vec<SequenceSample> = Vec::with_capacity(batch_size);
        let mut advantages: Vec<f64> = Vec::with_capacity(batch_size);
        let mut reward_sum = 0.0;
        for _ in 0..config.prompts_per_batch {
            let group = rollout_group(&sampler, &config.reward, config.group_size, &mut rng)?;
            let rewards: Vec<f64> = group.iter().map(|(_, r)| *r).collect();
            reward_sum += rewards.iter().sum::<f64>();
            advantages.extend(rloo_advantage(&rewards)?);
            batch.extend(group.into_iter().map(|(s, _)| s));
        }

        let token_advantages = if kl.active() && kl.placement.in_reward() {
            let penalties: Vec<Vec<f64>> = batch
                .iter()
                .map(|s| kl_token_values(kl.kind, s, &reference))
                .collect();
            apply_kl_to_reward(&advantages, &penalties, kl.beta)?
        } else {
            advantages.iter().map(|&a| vec![a; horizon]).collect()
        };

        let mut step_grad = vec![0.0; current.n_params()];
        let mut clipped = 0usize;
        let mut collapse = false;
        let chunk = batch_size.div_ceil(config.minibatches_per_batch);
        for (mb, mb_adv) in batch.chunks(chunk).zip(token_advantages.chunks(chunk)) {
            let mut grad = match surrogate_gradient(
                &current,
                &sampler,
                mb,
                mb_adv,
                config.clip_eps,
                total_tokens,
            ) {
                Ok(g) => {
                    clipped += g.clipped_tokens;
                    g.grad
                }
                Err(Error::NumericalCollapse(_)) => {
                    collapse = true;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if kl.active() && kl.placement.in_loss() {
                // kl_loss_gradient averages over sequences; rescale to the
                // batch token normalizer used by the surrogate.
                let kl_grad = kl_loss_gradient(kl.kind, &current, &reference, mb, kl.beta)?;
                let scale = mb.len() as f64 / total_tokens as f64;
                for (g, k) in grad.iter_mut().zip(&kl_grad) {
                    *g -= scale * k;
                }
            }
            if grad.iter().any(|g| !g.is_finite()) {
                collapse = true;
                diverged = true;
                break;
            }
            current.ascend(&grad, lr);
            for (s, g) in step_grad.iter_mut().zip(&grad) {
                *s += g;
            }
            if !current.is_finite() {
                collapse = true;
                diverged = true;
                break;
            }
        }

        let grad_norm = libm::sqrt(step_grad.iter().map(|g| g * g).sum());
        let mean_reward = reward_sum / batch_size as f64;
        let clip_fraction = clipped as f64 / total_tokens as f64;
        if diverged {
            metrics.push(TrainMetrics {
                step,
                mean_reward,
                expected_reward: None,
                exact_reverse_kl: f64::NAN,
                exact_forward_kl: f64::NAN,
                entropy: f64::NAN,
                grad_norm,
                clip_fraction,
                collapse_flag: true,
            });
            break;
        }
        let entropy = sequence_entropy(&current, horizon)?;
        metrics.push(TrainMetrics {
            step,
            mean_reward,
            expected_reward: config.reward.expected(&current, horizon)?,
            exact_reverse_kl: exact_kl(&current, &reference, horizon)?,
            exact_forward_kl: exact_kl(&reference, &current, horizon)?,
            entropy,
            grad_norm,
            clip_fraction,
            collapse_flag: collapse || entropy < ENTROPY_COLLAPSE,
        });

        history.push_back(current.clone());
        if history.len() > config.async_lag + 1 {
            history.pop_front();
        }
    }

    Ok(TrainOutcome {
        metrics,
        final_policy: current,
        diverged,
    })
}
