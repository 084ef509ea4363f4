use crate::error::Result;
use crate::model::{count_distributions, Conditionals};

/// Verifiable 0/1 reward on a whole sequence.
#[derive(Debug, Clone, Copy)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RewardSpec {
    /// 1 when the sequence contains at least `k` ones.
    CountTarget { k: usize },
    /// 1 when the number of ones is odd.
    ParityOnes,
    /// Arbitrary predicate; not serializable.
    #[cfg_attr(feature = "serde", serde(skip))]
    Custom(fn(&[bool]) -> bool),
}

impl PartialEq for RewardSpec {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (RewardSpec::CountTarget { k: a }, RewardSpec::CountTarget { k: b }) => a == b,
            (RewardSpec::ParityOnes, RewardSpec::ParityOnes) => true,
            (RewardSpec::Custom(a), RewardSpec::Custom(b)) => core::ptr::fn_addr_eq(*a, *b),
            _ => false,
        }
    }
}

impl RewardSpec {
    pub fn reward(&self, tokens: &[bool]) -> f64 {
        let hit = match self {
            RewardSpec::Custom(pred) => pred(tokens),
            _ => self.hits_count(tokens.iter().filter(|&&y| y).count()),
        };
        if hit {
            1.0
        } else {
            0.0
        }
    }

    fn hits_count(&self, ones: usize) -> bool {
        match self {
            RewardSpec::CountTarget { k } => ones >= *k,
            RewardSpec::ParityOnes => ones % 2 == 1,
            RewardSpec::Custom(_) => false,
        }
    }

    /// Exact expected reward for rewards that depend only on the final count.
    pub fn expected<M: Conditionals>(&self, model: &M, horizon: usize) -> Result<Option<f64>> {
        if let RewardSpec::Custom(_) = self {
            return Ok(None);
        }
        let dists = count_distributions(model, horizon)?;
        let expected = dists[horizon]
            .probs
            .iter()
            .enumerate()
            .filter(|&(ones, _)| self.hits_count(ones))
            .map(|(_, p)| p)
            .sum();
        Ok(Some(expected))
    }
}
