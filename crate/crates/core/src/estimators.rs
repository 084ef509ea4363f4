//! Token- and sequence-level reverse-KL estimators and their Monte Carlo
//! aggregation.
//!
//! With `r = π_ref / π_θ` evaluated per token:
//!
//! * K1 is `−ln r`, the plain log-ratio. Unbiased, unbounded in sign.
//! * K3 is `r − 1 − ln r`. Unbiased and pointwise non-negative.
//!
//! The ratio is formed in log space and never clipped.

use alloc::vec::Vec;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{sample_sequence, Conditionals};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum EstimatorKind {
    K1,
    K3,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 2] = [EstimatorKind::K1, EstimatorKind::K3];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::K1 => "k1",
            EstimatorKind::K3 => "k3",
        }
    }

    pub fn token(self, logp_policy: f64, logp_ref: f64) -> f64 {
        match self {
            EstimatorKind::K1 => k1_token(logp_policy, logp_ref),
            EstimatorKind::K3 => k3_token(logp_policy, logp_ref),
        }
    }
}

impl core::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "k1" => Ok(EstimatorKind::K1),
            "k3" => Ok(EstimatorKind::K3),
            other => Err(Error::Config(alloc::format!("unknown estimator `{other}`"))),
        }
    }
}

/// `ln π_θ(y_t) − ln π_ref(y_t)`.
pub fn k1_token(logp_policy: f64, logp_ref: f64) -> f64 {
    logp_policy - logp_ref
}

/// `r − 1 − ln r` with `r = exp(logp_ref − logp_policy)`.
pub fn k3_token(logp_policy: f64, logp_ref: f64) -> f64 {
    let log_r = logp_ref - logp_policy;
    libm::expm1(log_r) - log_r
}

/// Per-token log-probabilities of one sequence under the policy and the
/// reference.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenRatios {
    logp_policy: Vec<f64>,
    logp_ref: Vec<f64>,
}

impl TokenRatios {
    pub fn new(logp_policy: Vec<f64>, logp_ref: Vec<f64>) -> Result<Self> {
        if logp_policy.len() != logp_ref.len() {
            return Err(Error::Shape {
                expected: logp_policy.len(),
                actual: logp_ref.len(),
            });
        }
        if logp_policy.iter().chain(&logp_ref).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite log-probability".into()));
        }
        Ok(Self {
            logp_policy,
            logp_ref,
        })
    }

    pub fn len(&self) -> usize {
        self.logp_policy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logp_policy.is_empty()
    }

    pub fn logp_policy(&self) -> &[f64] {
        &self.logp_policy
    }

    pub fn logp_ref(&self) -> &[f64] {
        &self.logp_ref
    }

    pub fn token_values(&self, kind: EstimatorKind) -> impl Iterator<Item = f64> + '_ {
        self.logp_policy
            .iter()
            .zip(&self.logp_ref)
            .map(move |(&lp, &lq)| kind.token(lp, lq))
    }
}

/// Sum of the token-level estimates over the sequence.
pub fn sequence_estimate(kind: EstimatorKind, ratios: &TokenRatios) -> Result<f64> {
    if ratios.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(ratios.token_values(kind).sum())
}

/// Sample mean with its standard error (`n − 1` variance divisor).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

impl McEstimate {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::Config(alloc::format!(
                "need at least 2 samples for a standard error, got {n}"
            )));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        Ok(Self {
            mean,
            std_err: libm::sqrt(var / n as f64),
            n,
        })
    }

    /// Unbiased sample variance of the underlying values.
    pub fn sample_variance(&self) -> f64 {
        self.std_err * self.std_err * self.n as f64
    }
}

/// Monte Carlo estimate of `KL(policy || reference)` from `n` sequences drawn
/// from `policy`.
pub fn mc_kl<P, Q, R>(
    kind: EstimatorKind,
    policy: &P,
    reference: &Q,
    horizon: usize,
    n: usize,
    rng: &mut R,
) -> Result<McEstimate>
where
    P: Conditionals,
    Q: Conditionals,
    R: Rng + ?Sized,
{
    if n < 2 {
        return Err(Error::Config(alloc::format!("n must be at least 2, got {n}")));
    }
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let sample = sample_sequence(policy, horizon, rng)?;
        let logp_ref = sample.logp_under(reference);
        let value = sample
            .logp_policy
            .iter()
            .zip(&logp_ref)
            .map(|(&lp, &lq)| kind.token(lp, lq))
            .sum();
        values.push(value);
    }
    McEstimate::from_values(&values)
}
