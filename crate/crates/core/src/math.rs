//! Log-space helpers for Bernoulli conditionals parameterised by logits.

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `ln σ(z)`.
pub(crate) fn log_sigmoid(z: f64) -> f64 {
    -softplus(-z)
}

/// Log-probability of `y` under `Ber(σ(z))`.
pub(crate) fn bernoulli_logp(z: f64, y: bool) -> f64 {
    if y {
        log_sigmoid(z)
    } else {
        log_sigmoid(-z)
    }
}

/// `KL(Ber(σ(zp)) || Ber(σ(zq)))`.
pub(crate) fn bernoulli_kl(zp: f64, zq: f64) -> f64 {
    let p = sigmoid(zp);
    let kl = p * (log_sigmoid(zp) - log_sigmoid(zq))
        + (1.0 - p) * (log_sigmoid(-zp) - log_sigmoid(-zq));
    // Rounding can leave a tiny negative value when the two logits coincide.
    if kl < 0.0 && kl > -1e-15 {
        0.0
    } else {
        kl
    }
}

/// Binary entropy of `Ber(σ(z))` in nats.
pub(crate) fn bernoulli_entropy(z: f64) -> f64 {
    let p = sigmoid(z);
    -(p * log_sigmoid(z) + (1.0 - p) * log_sigmoid(-z))
}
