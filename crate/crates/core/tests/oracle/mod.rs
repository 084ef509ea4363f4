//! Test-only brute-force reference computations.
//!
//! These deliberately share no code with the crate: probabilities come
//! straight from `1 / (1 + e^{-z})` and sequences are expanded explicitly.

#![allow(dead_code)]

pub struct Seq {
    pub tokens: Vec<bool>,
    pub counts: Vec<usize>,
    /// `P(y_t = 1)` per step under the model being enumerated.
    pub p: Vec<f64>,
    pub prob: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Every length-`t` sequence with its probability under `σ(a + b·c)`.
pub fn all_sequences(a: f64, b: f64, horizon: usize) -> Vec<Seq> {
    let mut out = Vec::with_capacity(1 << horizon);
    for mask in 0u32..(1u32 << horizon) {
        let mut tokens = Vec::with_capacity(horizon);
        let mut counts = Vec::with_capacity(horizon);
        let mut ps = Vec::with_capacity(horizon);
        let mut prob = 1.0;
        let mut c = 0;
        for t in 0..horizon {
            let y = (mask >> t) & 1 == 1;
            let p = sigmoid(a + b * c as f64);
            prob *= if y { p } else { 1.0 - p };
            tokens.push(y);
            counts.push(c);
            ps.push(p);
            c += y as usize;
        }
        out.push(Seq {
            tokens,
            counts,
            p: ps,
            prob,
        });
    }
    out
}

pub fn seq_prob(a: f64, b: f64, tokens: &[bool]) -> f64 {
    let mut prob = 1.0;
    let mut c = 0;
    for &y in tokens {
        let p = sigmoid(a + b * c as f64);
        prob *= if y { p } else { 1.0 - p };
        c += y as usize;
    }
    prob
}

pub fn token_prob(a: f64, b: f64, c: usize, y: bool) -> f64 {
    let p = sigmoid(a + b * c as f64);
    if y {
        p
    } else {
        1.0 - p
    }
}

/// `Σ_Y A(Y) ln(A(Y)/B(Y))`.
pub fn brute_kl(pa: (f64, f64), pb: (f64, f64), horizon: usize) -> f64 {
    all_sequences(pa.0, pa.1, horizon)
        .iter()
        .map(|s| s.prob * (s.prob / seq_prob(pb.0, pb.1, &s.tokens)).ln())
        .sum()
}

/// Central difference of `f` along each parameter.
pub fn central_diff(f: impl Fn(f64, f64) -> f64, a: f64, b: f64, h: f64) -> [f64; 2] {
    [
        (f(a + h, b) - f(a - h, b)) / (2.0 * h),
        (f(a, b + h) - f(a, b - h)) / (2.0 * h),
    ]
}

/// Per-sequence score `(Σ (y − p), Σ (y − p) c)`.
pub fn score(s: &Seq) -> [f64; 2] {
    let mut g = [0.0; 2];
    for t in 0..s.tokens.len() {
        let r = s.tokens[t] as u8 as f64 - s.p[t];
        g[0] += r;
        g[1] += r * s.counts[t] as f64;
    }
    g
}

/// Expectation of the K3-in-reward gradient in its rewritten form
/// `E[Σ_t (r_t + ln(π_θ/π_ref)_t) · ∇ ln π_θ(Y)]`.
pub fn k3_reward_rewritten(pa: (f64, f64), pb: (f64, f64), horizon: usize) -> [f64; 2] {
    let mut acc = [0.0; 2];
    for s in all_sequences(pa.0, pa.1, horizon) {
        let mut w = 0.0;
        for t in 0..horizon {
            let pt = token_prob(pa.0, pa.1, s.counts[t], s.tokens[t]);
            let qt = token_prob(pb.0, pb.1, s.counts[t], s.tokens[t]);
            w += qt / pt + (pt / qt).ln();
        }
        let g = score(&s);
        acc[0] += s.prob * w * g[0];
        acc[1] += s.prob * w * g[1];
    }
    acc
}

/// Expectation of `Σ_t (−r_t) ∇ ln π_θ(y_t)` by enumeration.
pub fn k3_loss_enumerated(pa: (f64, f64), pb: (f64, f64), horizon: usize) -> [f64; 2] {
    let mut acc = [0.0; 2];
    for s in all_sequences(pa.0, pa.1, horizon) {
        for t in 0..horizon {
            let pt = token_prob(pa.0, pa.1, s.counts[t], s.tokens[t]);
            let qt = token_prob(pb.0, pb.1, s.counts[t], s.tokens[t]);
            let resid = s.tokens[t] as u8 as f64 - s.p[t];
            acc[0] -= s.prob * (qt / pt) * resid;
            acc[1] -= s.prob * (qt / pt) * resid * s.counts[t] as f64;
        }
    }
    acc
}

/// The same quantity through its per-prefix form: summing over steps, the
/// expected gradient of `KL(π_ref(·|prefix) || π_θ(·|prefix))`, which for a
/// Bernoulli logit is `(p_θ − p_ref)·∂z/∂θ`. Uses the count marginals
/// accumulated from the enumeration, not the crate's recursion.
pub fn k3_loss_via_forward_kl(pa: (f64, f64), pb: (f64, f64), horizon: usize) -> [f64; 2] {
    let mut marg = vec![vec![0.0; horizon + 1]; horizon];
    for s in all_sequences(pa.0, pa.1, horizon) {
        for t in 0..horizon {
            marg[t][s.counts[t]] += s.prob;
        }
    }
    let mut acc = [0.0; 2];
    for (t, row) in marg.iter().enumerate() {
        for (c, &m) in row.iter().enumerate().take(t + 1) {
            let d = sigmoid(pa.0 + pa.1 * c as f64) - sigmoid(pb.0 + pb.1 * c as f64);
            acc[0] += m * d;
            acc[1] += m * d * c as f64;
        }
    }
    acc
}
