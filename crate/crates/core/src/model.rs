//! The autoregressive Bernoulli sequence model.
//!
//! Token `t` (0-based) is drawn from `Ber(σ(a + b·c))` where `c` is the number
//! of ones among the tokens before it. Because the conditional depends on the
//! prefix only through `c`, the count is a sufficient state and expectations
//! over all `2^T` sequences collapse to an `O(T²)` forward recursion.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::enumeration;
use crate::error::{Error, Result};
use crate::math::{bernoulli_entropy, bernoulli_kl, bernoulli_logp, sigmoid};

/// Largest `T` handled by full `2^T` enumeration.
pub const ENUMERATION_LIMIT: usize = 20;

/// A sequence model whose step-`t` conditional depends on the prefix only
/// through the running count of ones.
pub trait Conditionals {
    /// Logit of `P(y_t = 1 | c_{t-1} = count)`, `t` counted from 0.
    fn logit(&self, t: usize, count: usize) -> f64;

    fn prob(&self, t: usize, count: usize) -> f64 {
        sigmoid(self.logit(t, count))
    }
}

impl<M: Conditionals + ?Sized> Conditionals for &M {
    fn logit(&self, t: usize, count: usize) -> f64 {
        (**self).logit(t, count)
    }
}

/// Intercept `a` and count coefficient `b` of the two-parameter model.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ArParams {
    pub a: f64,
    pub b: f64,
}

impl ArParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        let params = Self { a, b };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.a.is_finite() || !self.b.is_finite() {
            return Err(Error::InvalidParameter(alloc::format!(
                "non-finite model parameters (a = {}, b = {})",
                self.a,
                self.b
            )));
        }
        Ok(())
    }

    /// Checks that every logit reachable within `horizon` steps is finite.
    pub fn validate_for(&self, horizon: usize) -> Result<()> {
        self.validate()?;
        let last = horizon.saturating_sub(1) as f64;
        if !(self.a + self.b * last).is_finite() {
            return Err(Error::InvalidParameter(alloc::format!(
                "logit overflows at count {last}"
            )));
        }
        Ok(())
    }

    /// `σ(a + b·count_prev)`.
    pub fn cond_prob(&self, count_prev: usize) -> Result<f64> {
        self.validate()?;
        Ok(sigmoid(self.a + self.b * count_prev as f64))
    }

    /// Per-token score `∇_(a,b) ln P(y | count)`.
    pub fn token_score(&self, y: bool, count: usize) -> [f64; 2] {
        let resid = f64::from(u8::from(y)) - sigmoid(self.a + self.b * count as f64);
        [resid, resid * count as f64]
    }
}

impl Conditionals for ArParams {
    fn logit(&self, _t: usize, count: usize) -> f64 {
        self.a + self.b * count as f64
    }
}

/// A sampled binary sequence with its per-token log-probabilities under the
/// model that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub tokens: Vec<bool>,
    pub logp_policy: Vec<f64>,
    /// `counts[t]` is the number of ones in `tokens[..t]`.
    pub counts: Vec<usize>,
}

impl SequenceSample {
    /// Scores a fixed token sequence under `model`.
    pub fn from_tokens<M: Conditionals>(model: &M, tokens: &[bool]) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptySequence);
        }
        let mut counts = Vec::with_capacity(tokens.len());
        let mut logp = Vec::with_capacity(tokens.len());
        let mut count = 0usize;
        for (t, &y) in tokens.iter().enumerate() {
            counts.push(count);
            logp.push(bernoulli_logp(model.logit(t, count), y));
            count += usize::from(y);
        }
        Ok(Self {
            tokens: tokens.to_vec(),
            logp_policy: logp,
            counts,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of ones in the whole sequence.
    pub fn ones(&self) -> usize {
        self.tokens.iter().filter(|&&y| y).count()
    }

    pub fn log_prob(&self) -> f64 {
        self.logp_policy.iter().sum()
    }

    /// Log-probabilities of the same tokens under another model.
    pub fn logp_under<M: Conditionals>(&self, model: &M) -> Vec<f64> {
        self.tokens
            .iter()
            .zip(&self.counts)
            .enumerate()
            .map(|(t, (&y, &c))| bernoulli_logp(model.logit(t, c), y))
            .collect()
    }

    fn check_shape(&self) -> Result<()> {
        let n = self.tokens.len();
        for len in [self.logp_policy.len(), self.counts.len()] {
            if len != n {
                return Err(Error::Shape {
                    expected: n,
                    actual: len,
                });
            }
        }
        Ok(())
    }
}

/// Draws `horizon` tokens left to right from `model`.
pub fn sample_sequence<M: Conditionals, R: Rng + ?Sized>(
    model: &M,
    horizon: usize,
    rng: &mut R,
) -> Result<SequenceSample> {
    if horizon == 0 {
        return Err(Error::EmptySequence);
    }
    let mut tokens = Vec::with_capacity(horizon);
    let mut logp = Vec::with_capacity(horizon);
    let mut counts = Vec::with_capacity(horizon);
    let mut count = 0usize;
    for t in 0..horizon {
        let z = model.logit(t, count);
        let y = rng.gen::<f64>() < sigmoid(z);
        counts.push(count);
        logp.push(bernoulli_logp(z, y));
        tokens.push(y);
        count += usize::from(y);
    }
    Ok(SequenceSample {
        tokens,
        logp_policy: logp,
        counts,
    })
}

/// `Σ_t [y_t ln p_t + (1 − y_t) ln(1 − p_t)]`.
pub fn log_prob<M: Conditionals>(model: &M, tokens: &[bool]) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut count = 0usize;
    let mut total = 0.0;
    for (t, &y) in tokens.iter().enumerate() {
        total += bernoulli_logp(model.logit(t, count), y);
        count += usize::from(y);
    }
    Ok(total)
}

/// Sequence score `∇_(a,b) ln A(Y) = (Σ (y_t − p_t), Σ (y_t − p_t)·c_{t−1})`.
pub fn score_vector(params: &ArParams, sample: &SequenceSample) -> Result<[f64; 2]> {
    params.validate()?;
    sample.check_shape()?;
    let mut g = [0.0; 2];
    for (&y, &c) in sample.tokens.iter().zip(&sample.counts) {
        let s = params.token_score(y, c);
        g[0] += s[0];
        g[1] += s[1];
    }
    Ok(g)
}

/// Distribution of the running count after `t` tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct CountDistribution {
    pub t: usize,
    /// `probs[c] = P(c_t = c)` for `c` in `0..=t`.
    pub probs: Vec<f64>,
}

/// Count distributions for `t = 0..=horizon` (`t = 0` is the point mass at 0).
pub fn count_distributions<M: Conditionals>(
    model: &M,
    horizon: usize,
) -> Result<Vec<CountDistribution>> {
    if horizon == 0 {
        return Err(Error::EmptySequence);
    }
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(CountDistribution {
        t: 0,
        probs: vec![1.0],
    });
    for t in 0..horizon {
        let prev = &out[t].probs;
        let mut next = vec![0.0; t + 2];
        for (c, &mass) in prev.iter().enumerate() {
            let z = checked_logit(model, t, c)?;
            let p = sigmoid(z);
            next[c] += mass * (1.0 - p);
            next[c + 1] += mass * p;
        }
        out.push(CountDistribution {
            t: t + 1,
            probs: next,
        });
    }
    Ok(out)
}

fn checked_logit<M: Conditionals>(model: &M, t: usize, c: usize) -> Result<f64> {
    let z = model.logit(t, c);
    if z.is_finite() {
        Ok(z)
    } else {
        Err(Error::InvalidParameter(alloc::format!(
            "non-finite logit at step {t}, count {c}"
        )))
    }
}

/// Expectation under `model` of `Σ_t f(t, c_{t−1})`, by forward recursion.
fn expect_per_step<M: Conditionals, F>(model: &M, horizon: usize, mut f: F) -> Result<f64>
where
    F: FnMut(usize, usize, f64) -> Result<f64>,
{
    if horizon == 0 {
        return Err(Error::EmptySequence);
    }
    let mut mass = vec![1.0];
    let mut total = 0.0;
    for t in 0..horizon {
        let mut next = vec![0.0; t + 2];
        for (c, &m) in mass.iter().enumerate() {
            let z = checked_logit(model, t, c)?;
            if m > 0.0 {
                total += m * f(t, c, z)?;
            }
            let p = sigmoid(z);
            next[c] += m * (1.0 - p);
            next[c + 1] += m * p;
        }
        mass = next;
    }
    Ok(total)
}

/// Exact sequence-level `KL(policy || reference)` by count-state recursion.
pub fn exact_kl<P: Conditionals, Q: Conditionals>(
    policy: &P,
    reference: &Q,
    horizon: usize,
) -> Result<f64> {
    let kl = expect_per_step(policy, horizon, |t, c, z| {
        let zq = checked_logit(reference, t, c)?;
        let k = bernoulli_kl(z, zq);
        if k.is_finite() {
            Ok(k)
        } else {
            Err(Error::InfiniteDivergence)
        }
    })?;
    Ok(kl.max(0.0))
}

/// Exact sequence entropy of `model` in nats.
pub fn sequence_entropy<M: Conditionals>(model: &M, horizon: usize) -> Result<f64> {
    let h = expect_per_step(model, horizon, |_, _, z| Ok(bernoulli_entropy(z)))?;
    Ok(h.max(0.0))
}

/// Gradient of the exact reverse KL with respect to `policy`'s `(a, b)`,
/// by probability-weighted enumeration of all `2^T` sequences.
pub fn exact_kl_grad(policy: &ArParams, reference: &ArParams, horizon: usize) -> Result<[f64; 2]> {
    policy.validate_for(horizon)?;
    reference.validate_for(horizon)?;
    let mut grad = [0.0; 2];
    enumeration::for_each_sequence(horizon, |tokens| {
        let sample = SequenceSample::from_tokens(policy, tokens)?;
        let lp = sample.log_prob();
        let lq = log_prob(reference, tokens)?;
        let s = score_vector(policy, &sample)?;
        let w = libm::exp(lp) * (lp - lq);
        grad[0] += w * s[0];
        grad[1] += w * s[1];
        Ok(())
    })?;
    Ok(grad)
}

/// Same quantity as [`exact_kl_grad`], by forward-mode differentiation of the
/// count recursion. `O(T²)`, so usable for any `T`.
pub fn exact_kl_grad_dp(
    policy: &ArParams,
    reference: &ArParams,
    horizon: usize,
) -> Result<[f64; 2]> {
    if horizon == 0 {
        return Err(Error::EmptySequence);
    }
    policy.validate_for(horizon)?;
    reference.validate_for(horizon)?;
    let mut mass = vec![1.0];
    let mut dmass = vec![[0.0f64; 2]];
    let mut grad = [0.0; 2];
    for t in 0..horizon {
        let mut next = vec![0.0; t + 2];
        let mut dnext = vec![[0.0f64; 2]; t + 2];
        for c in 0..=t {
            let z = policy.logit(t, c);
            let zq = reference.logit(t, c);
            let p = sigmoid(z);
            let k = bernoulli_kl(z, zq);
            let dz = [1.0, c as f64];
            let slope = p * (1.0 - p);
            // d KL_t / d z = p (1 − p) (z − z_ref)
            let dk = slope * (z - zq);
            for i in 0..2 {
                grad[i] += dmass[c][i] * k + mass[c] * dk * dz[i];
                let dp = slope * dz[i];
                dnext[c][i] += dmass[c][i] * (1.0 - p) - mass[c] * dp;
                dnext[c + 1][i] += dmass[c][i] * p + mass[c] * dp;
            }
            next[c] += mass[c] * (1.0 - p);
            next[c + 1] += mass[c] * p;
        }
        mass = next;
        dmass = dnext;
    }
    if grad.iter().all(|g| g.is_finite()) {
        Ok(grad)
    } else {
        Err(Error::InfiniteDivergence)
    }
}
