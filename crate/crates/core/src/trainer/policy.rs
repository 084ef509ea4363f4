use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::model::{ArParams, Conditionals};

/// Trainable policy over binary sequences of a fixed length.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct PolicySpec {
    pub horizon: usize,
    pub model: PolicyModel,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PolicyModel {
    /// The two-parameter model `σ(a + b·c)`.
    TwoParam(ArParams),
    /// One free logit per reachable `(t, count)` state, stored row-major with
    /// row `t` holding counts `0..=t`.
    Tabular(Vec<f64>),
}

pub(crate) fn tabular_index(t: usize, count: usize) -> usize {
    t * (t + 1) / 2 + count
}

impl PolicySpec {
    pub fn two_param(params: ArParams, horizon: usize) -> Self {
        Self {
            horizon,
            model: PolicyModel::TwoParam(params),
        }
    }

    /// Tabular policy with every logit set to `logit`.
    pub fn tabular_constant(horizon: usize, logit: f64) -> Self {
        Self {
            horizon,
            model: PolicyModel::Tabular(vec![logit; tabular_index(horizon, 0)]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::EmptySequence);
        }
        match &self.model {
            PolicyModel::TwoParam(p) => p.validate_for(self.horizon),
            PolicyModel::Tabular(logits) => {
                let want = tabular_index(self.horizon, 0);
                if logits.len() != want {
                    return Err(Error::Shape {
                        expected: want,
                        actual: logits.len(),
                    });
                }
                if logits.iter().any(|z| !z.is_finite()) {
                    return Err(Error::InvalidParameter("non-finite tabular logit".into()));
                }
                Ok(())
            }
        }
    }

    pub fn n_params(&self) -> usize {
        match &self.model {
            PolicyModel::TwoParam(_) => 2,
            PolicyModel::Tabular(logits) => logits.len(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match &self.model {
            PolicyModel::TwoParam(p) => vec![p.a, p.b],
            PolicyModel::Tabular(logits) => logits.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match &self.model {
            PolicyModel::TwoParam(p) => p.validate_for(self.horizon).is_ok(),
            PolicyModel::Tabular(logits) => logits.iter().all(|z| z.is_finite()),
        }
    }

    /// `θ ← θ + step · direction`.
    pub fn ascend(&mut self, direction: &[f64], step: f64) {
        match &mut self.model {
            PolicyModel::TwoParam(p) => {
                p.a += step * direction[0];
                p.b += step * direction[1];
            }
            PolicyModel::Tabular(logits) => {
                for (z, d) in logits.iter_mut().zip(direction) {
                    *z += step * d;
                }
            }
        }
    }

    /// Adds `scale · ∇_θ ln π(y | t, count)` to `out`.
    pub fn add_token_score(&self, t: usize, count: usize, y: bool, scale: f64, out: &mut [f64]) {
        let resid = f64::from(u8::from(y)) - sigmoid(self.logit(t, count));
        match &self.model {
            PolicyModel::TwoParam(_) => {
                out[0] += scale * resid;
                out[1] += scale * resid * count as f64;
            }
            PolicyModel::Tabular(_) => out[tabular_index(t, count)] += scale * resid,
        }
    }
}

impl Conditionals for PolicySpec {
    fn logit(&self, t: usize, count: usize) -> f64 {
        match &self.model {
            PolicyModel::TwoParam(p) => p.logit(t, count),
            PolicyModel::Tabular(logits) => logits[tabular_index(t, count)],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tabular_layout() {
        let p = PolicySpec::tabular_constant(4, 0.0);
        assert_eq!(p.n_params(), 10);
        assert_eq!(tabular_index(3, 3), 9);
        p.validate().unwrap();
        let bad = PolicySpec {
            horizon: 4,
            model: PolicyModel::Tabular(vec![0.0; 9]),
        };
        assert!(matches!(bad.validate(), Err(Error::Shape { .. })));
    }

    #[test]
    fn token_score_matches_two_param_model() {
        let ar = ArParams::new(0.4, -0.2).unwrap();
        let p = PolicySpec::two_param(ar, 5);
        let mut g = vec![0.0; 2];
        p.add_token_score(3, 2, true, 2.0, &mut g);
        let s = ar.token_score(true, 2);
        assert_eq!(g, vec![2.0 * s[0], 2.0 * s[1]]);
    }
}
