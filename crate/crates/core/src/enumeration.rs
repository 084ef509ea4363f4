//! Brute-force evaluation over all `2^T` binary sequences.
//!
//! Slow but assumption-free. Used as the reference that the count-state
//! recursion and the Monte Carlo estimators are checked against, and for the
//! exact per-configuration gradient expectations.

use alloc::vec;

use crate::error::{Error, Result};
use crate::model::{log_prob, Conditionals, ENUMERATION_LIMIT};

/// Calls `visit` once for every binary sequence of length `horizon`.
pub fn for_each_sequence<F>(horizon: usize, mut visit: F) -> Result<()>
where
    F: FnMut(&[bool]) -> Result<()>,
{
    if horizon == 0 {
        return Err(Error::EmptySequence);
    }
    if horizon > ENUMERATION_LIMIT {
        return Err(Error::UnsupportedExactSize {
            requested: horizon,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut tokens = vec![false; horizon];
    for mask in 0u64..(1u64 << horizon) {
        for (t, y) in tokens.iter_mut().enumerate() {
            *y = (mask >> t) & 1 == 1;
        }
        visit(&tokens)?;
    }
    Ok(())
}

/// `Σ_Y P(Y) · ln(P(Y) / Q(Y))`.
pub fn enumerated_kl<P: Conditionals, Q: Conditionals>(
    policy: &P,
    reference: &Q,
    horizon: usize,
) -> Result<f64> {
    let mut kl = 0.0;
    for_each_sequence(horizon, |tokens| {
        let lp = log_prob(policy, tokens)?;
        let lq = log_prob(reference, tokens)?;
        kl += libm::exp(lp) * (lp - lq);
        Ok(())
    })?;
    Ok(kl)
}
