//! Building blocks of one policy update: rollouts, leave-one-out advantages,
//! KL reward shaping, the clipped surrogate gradient and the path-wise KL
//! loss gradient.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::math::bernoulli_logp;
use crate::model::{sample_sequence, Conditionals, SequenceSample};

use super::policy::PolicySpec;
use super::reward::RewardSpec;

/// `G` independent sequences from `policy` with their rewards.
pub fn rollout_group<R: Rng + ?Sized>(
    policy: &PolicySpec,
    reward: &RewardSpec,
    group_size: usize,
    rng: &mut R,
) -> Result<Vec<(SequenceSample, f64)>> {
    if group_size < 2 {
        return Err(Error::Config(alloc::format!(
            "group size must be at least 2, got {group_size}"
        )));
    }
    (0..group_size)
        .map(|_| {
            let s = sample_sequence(policy, policy.horizon, rng)?;
            let r = reward.reward(&s.tokens);
            Ok((s, r))
        })
        .collect()
}

/// `A_i = R_i − mean_{j≠i} R_j`.
pub fn rloo_advantage(rewards: &[f64]) -> Result<Vec<f64>> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::Config(alloc::format!(
            "leave-one-out baseline needs at least 2 samples, got {g}"
        )));
    }
    let total: f64 = rewards.iter().sum();
    Ok(rewards
        .iter()
        .map(|&r| r - (total - r) / (g - 1) as f64)
        .collect())
}

/// Per-token advantages with the KL penalty folded in as a constant:
/// every token of sequence `i` gets `A_i − β Σ_t KL_{i,t}`.
pub fn apply_kl_to_reward(
    advantages: &[f64],
    kl_token_values: &[Vec<f64>],
    beta: f64,
) -> Result<Vec<Vec<f64>>> {
    if advantages.len() != kl_token_values.len() {
        return Err(Error::Shape {
            expected: advantages.len(),
            actual: kl_token_values.len(),
        });
    }
    if beta.is_nan() || beta < 0.0 {
        return Err(Error::Config(alloc::format!("beta must be >= 0, got {beta}")));
    }
    Ok(advantages
        .iter()
        .zip(kl_token_values)
        .map(|(&a, kl)| {
            let adjusted = if beta == 0.0 {
                a
            } else {
                a - beta * kl.iter().sum::<f64>()
            };
            vec![adjusted; kl.len()]
        })
        .collect())
}

/// Per-token KL estimates of a sampled sequence against `reference`, using
/// the log-probabilities recorded at sampling time.
pub fn kl_token_values<Q: Conditionals>(
    kind: EstimatorKind,
    sample: &SequenceSample,
    reference: &Q,
) -> Vec<f64> {
    sample
        .logp_policy
        .iter()
        .zip(sample.logp_under(reference))
        .map(|(&lp, lq)| kind.token(lp, lq))
        .collect()
}

/// Gradient of the clipped importance-ratio surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateGradient {
    pub grad: Vec<f64>,
    /// Tokens whose clipped branch was selected (zero gradient).
    pub clipped_tokens: usize,
}

/// Gradient of `Σ_i Σ_t min(ω A, clip(ω, 1 − ε, 1 + ε) A) / token_norm`,
/// with `ω = π_θ / π_old` per token and advantages held constant.
pub fn surrogate_gradient(
    policy: &PolicySpec,
    old_policy: &PolicySpec,
    batch: &[SequenceSample],
    advantages: &[Vec<f64>],
    clip_eps: f64,
    token_norm: usize,
) -> Result<SurrogateGradient> {
    if batch.len() != advantages.len() {
        return Err(Error::Shape {
            expected: batch.len(),
            actual: advantages.len(),
        });
    }
    if token_norm == 0 {
        return Err(Error::Config("token normalizer must be positive".into()));
    }
    let mut grad = vec![0.0; policy.n_params()];
    let mut clipped_tokens = 0;
    let norm = token_norm as f64;
    for (sample, adv) in batch.iter().zip(advantages) {
        if adv.len() != sample.len() {
            return Err(Error::Shape {
                expected: sample.len(),
                actual: adv.len(),
            });
        }
        for (t, ((&y, &c), &a)) in sample.tokens.iter().zip(&sample.counts).zip(adv).enumerate() {
            let lp = bernoulli_logp(policy.logit(t, c), y);
            let lold = bernoulli_logp(old_policy.logit(t, c), y);
            let ratio = libm::exp(lp - lold);
            if !ratio.is_finite() {
                return Err(Error::NumericalCollapse(alloc::format!(
                    "non-finite importance ratio at token {t}"
                )));
            }
            let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
            // The clipped branch is constant in θ; it wins only when strictly smaller.
            if clipped * a < ratio * a {
                clipped_tokens += 1;
                continue;
            }
            // ∇(ω A) = ω A ∇ ln π_θ
            policy.add_token_score(t, c, y, ratio * a / norm, &mut grad);
        }
    }
    Ok(SurrogateGradient {
        grad,
        clipped_tokens,
    })
}

/// `β · mean_batch Σ_t ∇ KL_t` at the current policy.
///
/// K1 contributes the sequence score. K3 contributes `Σ_t (−r_t) ∇ ln π_θ(y_t)`
/// with `r_t = π_ref / π_θ`.
pub fn kl_loss_gradient<Q: Conditionals>(
    kind: EstimatorKind,
    policy: &PolicySpec,
    reference: &Q,
    batch: &[SequenceSample],
    beta: f64,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; policy.n_params()];
    if beta == 0.0 || batch.is_empty() {
        return Ok(grad);
    }
    let scale = beta / batch.len() as f64;
    for sample in batch {
        for (t, (&y, &c)) in sample.tokens.iter().zip(&sample.counts).enumerate() {
            let weight = match kind {
                EstimatorKind::K1 => 1.0,
                EstimatorKind::K3 => {
                    let lp = bernoulli_logp(policy.logit(t, c), y);
                    let lq = bernoulli_logp(reference.logit(t, c), y);
                    -libm::exp(lq - lp)
                }
            };
            policy.add_token_score(t, c, y, scale * weight, &mut grad);
        }
    }
    Ok(grad)
}
