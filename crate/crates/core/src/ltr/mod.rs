//! Learning to rank with LambdaMART.

mod groups;
mod lambdamart;
mod tree;

use serde::{Deserialize, Serialize};

pub use groups::{assemble_training_groups, QueryGroup};
pub use lambdamart::{
    rank_topn, score, train_ranker, train_ranker_traced, LtrRanker, TrainTrace, TreeEnsemble,
};
pub use tree::{Node, RegressionTree};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LtrConfig {
    pub num_trees: usize,
    pub max_leaves: usize,
    pub shrinkage: f64,
    pub min_samples_per_leaf: usize,
    pub sigma: f64,
    pub truncation_k: usize,
    pub negatives_per_positive: usize,
    pub seed: u64,
}

impl Default for LtrConfig {
    fn default() -> Self {
        Self {
            num_trees: 100,
            max_leaves: 10,
            shrinkage: 0.1,
            min_samples_per_leaf: 1,
            sigma: 1.0,
            truncation_k: 10,
            negatives_per_positive: 10,
            seed: 0,
        }
    }
}

impl LtrConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: usize, f: &str| {
            if v == 0 {
                Err(Error::config(f, "must be positive"))
            } else {
                Ok(())
            }
        };
        positive(self.num_trees, "ltr.num_trees")?;
        positive(self.max_leaves, "ltr.max_leaves")?;
        positive(self.min_samples_per_leaf, "ltr.min_samples_per_leaf")?;
        positive(self.truncation_k, "ltr.truncation_k")?;
        positive(self.negatives_per_positive, "ltr.negatives_per_positive")?;
        if !(self.shrinkage.is_finite() && self.shrinkage > 0.0) {
            return Err(Error::config("ltr.shrinkage", "must be a positive real"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::config("ltr.sigma", "must be a positive real"));
        }
        Ok(())
    }
}

/// Discount of 1-based rank `r` under truncation `k`.
pub(crate) fn discount(rank: usize, k: usize) -> f64 {
    if rank > k {
        0.0
    } else {
        1.0 / ((rank + 1) as f64).log2()
    }
}

pub(crate) fn gain(label: u8) -> f64 {
    (1u32 << label) as f64 - 1.0
}

/// Ideal DCG@k for the given labels (any order).
pub(crate) fn ideal_dcg(labels: &[u8], k: usize) -> f64 {
    let mut sorted = labels.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    sorted
        .iter()
        .enumerate()
        .map(|(i, &l)| gain(l) * discount(i + 1, k))
        .sum()
}

/// NDCG@k of labels listed in ranked order, with gain `2^label − 1` and
/// discount `1/log2(rank + 1)`. Zero when nothing is relevant.
pub fn ndcg_at_k(labels_in_ranked_order: &[u8], k: usize) -> f64 {
    let ideal = ideal_dcg(labels_in_ranked_order, k);
    if ideal == 0.0 {
        return 0.0;
    }
    let dcg: f64 = labels_in_ranked_order
        .iter()
        .enumerate()
        .map(|(i, &l)| gain(l) * discount(i + 1, k))
        .sum();
    dcg / ideal
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&[1, 0, 0], 3), 1.0);
        assert_relative_eq!(ndcg_at_k(&[0, 1], 2), 1.0 / 3f64.log2(), epsilon = 1e-15);
        assert_relative_eq!(ndcg_at_k(&[0, 1], 2), 0.63093, epsilon = 1e-5);
        assert_eq!(ndcg_at_k(&[0, 0, 0], 3), 0.0);
        // relevant item below the cutoff contributes nothing
        assert_eq!(ndcg_at_k(&[0, 0, 1], 2), 0.0);
    }

    #[test]
    fn config_validation_names_field() {
        let cfg = LtrConfig { shrinkage: -1.0, ..Default::default() };
        assert!(cfg.validate().unwrap_err().to_string().contains("ltr.shrinkage"));
    }
}
