use log::debug;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{self, Dataset, RegressionTree};
use super::{discount, gain, ideal_dcg, ndcg_at_k, LtrConfig, QueryGroup};
use crate::error::{Error, Result};
use crate::features::FeatureView;
use crate::kg::EntityId;
use crate::rank::{self, Ranker};

/// Lambdas are accumulated in fixed point so that each group's sum is
/// exactly zero regardless of summation order.
const LAMBDA_SCALE: f64 = (1u64 << 40) as f64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub feature_count: usize,
    pub shrinkage: f64,
    #[serde(default)]
    pub feature_names: Vec<String>,
    pub trees: Vec<RegressionTree>,
}

impl TreeEnsemble {
    pub fn empty(feature_count: usize, shrinkage: f64) -> Self {
        Self {
            feature_count,
            shrinkage,
            feature_names: Vec::new(),
            trees: Vec::new(),
        }
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Self {
        self.feature_names = names;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.shrinkage.is_finite() && self.shrinkage > 0.0) {
            return Err(Error::Parse("ensemble shrinkage must be a positive real".into()));
        }
        if !self.feature_names.is_empty() && self.feature_names.len() != self.feature_count {
            return Err(Error::Parse(format!(
                "{} feature names for {} features",
                self.feature_names.len(),
                self.feature_count
            )));
        }
        if let Some(t) = self.trees.iter().position(|t| t.nodes.is_empty() || !t.is_well_formed(self.feature_count)) {
            return Err(Error::Parse(format!("tree {t} is malformed")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let e: Self = serde_json::from_str(text)?;
        e.validate()?;
        Ok(e)
    }
}

/// Σ over trees of shrinkage × reached leaf value.
pub fn score(ensemble: &TreeEnsemble, row: &[f64]) -> Result<f64> {
    if row.len() != ensemble.feature_count {
        return Err(Error::DimensionMismatch {
            left: row.len(),
            right: ensemble.feature_count,
        });
    }
    Ok(ensemble.trees.iter().map(|t| ensemble.shrinkage * t.predict(row)).sum())
}

/// Per-round diagnostics: mean training NDCG@k after each round, and the
/// lambda sum of every group in every round.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    pub ndcg: Vec<f64>,
    pub lambda_sums: Vec<Vec<f64>>,
}

pub fn train_ranker(groups: &[QueryGroup], cfg: &LtrConfig) -> Result<TreeEnsemble> {
    train_ranker_traced(groups, cfg).map(|(e, _)| e)
}

struct GroupGrad {
    lambdas: Vec<f64>,
    weights: Vec<f64>,
    sum: f64,
}

/// Ranks positions by score descending with ties in input order.
fn positions(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut rank = vec![0; scores.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r + 1;
    }
    rank
}

fn group_lambdas(labels: &[u8], scores: &[f64], cfg: &LtrConfig) -> GroupGrad {
    let n = labels.len();
    let ideal = ideal_dcg(labels, cfg.truncation_k);
    let rank = positions(scores);
    let mut fixed = vec![0i64; n];
    let mut weights = vec![0.0; n];
    if ideal > 0.0 {
        for i in 0..n {
            for j in 0..n {
                if labels[i] <= labels[j] {
                    continue;
                }
                let delta = ((gain(labels[i]) - gain(labels[j]))
                    * (discount(rank[i], cfg.truncation_k) - discount(rank[j], cfg.truncation_k)))
                    .abs()
                    / ideal;
                if delta == 0.0 {
                    continue;
                }
                let rho = 1.0 / (1.0 + (cfg.sigma * (scores[i] - scores[j])).exp());
                let q = (rho * delta * LAMBDA_SCALE).round() as i64;
                fixed[i] += q;
                fixed[j] -= q;
                let w = cfg.sigma * rho * (1.0 - rho) * delta;
                weights[i] += w;
                weights[j] += w;
            }
        }
    }
    let lambdas: Vec<f64> = fixed.iter().map(|&q| q as f64 / LAMBDA_SCALE).collect();
    let sum = lambdas.iter().sum();
    GroupGrad { lambdas, weights, sum }
}

fn mean_ndcg(groups: &[QueryGroup], scores: &[f64], offsets: &[usize], k: usize) -> f64 {
    let total: f64 = groups
        .iter()
        .enumerate()
        .map(|(g, group)| {
            let s = &scores[offsets[g]..offsets[g + 1]];
            let rank = positions(s);
            let mut ordered = vec![0u8; s.len()];
            for (i, &r) in rank.iter().enumerate() {
                ordered[r - 1] = group.labels[i];
            }
            ndcg_at_k(&ordered, k)
        })
        .sum();
    total / groups.len() as f64
}

/// Boosts `cfg.num_trees` rounds. Each round computes lambdas and hessians
/// per group, fits one tree to the lambdas, and adds `shrinkage × tree`.
pub fn train_ranker_traced(groups: &[QueryGroup], cfg: &LtrConfig) -> Result<(TreeEnsemble, TrainTrace)> {
    cfg.validate()?;
    let first = groups
        .first()
        .ok_or_else(|| Error::Empty("training groups".into()))?;
    let feature_count = first.features.first().map_or(0, Vec::len);
    for g in groups {
        g.validate(feature_count)?;
    }
    let mut offsets = vec![0];
    for g in groups {
        offsets.push(offsets.last().unwrap() + g.len());
    }
    let data = Dataset::from_rows(groups.iter().flat_map(|g| g.features.iter().map(Vec::as_slice)), feature_count);
    let n = data.rows();
    let mut scores = vec![0.0; n];
    let mut lambdas = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let mut ensemble = TreeEnsemble::empty(feature_count, cfg.shrinkage);
    let mut trace = TrainTrace::default();

    for round in 0..cfg.num_trees {
        let compute = |g: usize| {
            let range = offsets[g]..offsets[g + 1];
            group_lambdas(&groups[g].labels, &scores[range], cfg)
        };
        #[cfg(feature = "parallel")]
        let grads: Vec<GroupGrad> = (0..groups.len()).into_par_iter().map(compute).collect();
        #[cfg(not(feature = "parallel"))]
        let grads: Vec<GroupGrad> = (0..groups.len()).map(compute).collect();

        let mut sums = Vec::with_capacity(groups.len());
        for (g, grad) in grads.into_iter().enumerate() {
            lambdas[offsets[g]..offsets[g + 1]].copy_from_slice(&grad.lambdas);
            weights[offsets[g]..offsets[g + 1]].copy_from_slice(&grad.weights);
            sums.push(grad.sum);
        }
        trace.lambda_sums.push(sums);

        let (tree, outputs) = tree::fit(&data, &lambdas, &weights, cfg.max_leaves, cfg.min_samples_per_leaf);
        for (s, o) in scores.iter_mut().zip(&outputs) {
            *s += cfg.shrinkage * o;
        }
        ensemble.trees.push(tree);
        let ndcg = mean_ndcg(groups, &scores, &offsets, cfg.truncation_k);
        debug!("round {round}: mean training NDCG@{} = {ndcg:.5}", cfg.truncation_k);
        trace.ndcg.push(ndcg);
    }
    Ok((ensemble, trace))
}

/// Scores (user, item) pairs through a feature view. Pairs without a
/// feature row score negative infinity.
pub struct LtrRanker<'a> {
    pub ensemble: &'a TreeEnsemble,
    pub view: FeatureView<'a>,
    pub label: String,
}

impl<'a> LtrRanker<'a> {
    pub fn new(ensemble: &'a TreeEnsemble, view: FeatureView<'a>) -> Result<Self> {
        if view.feature_count() != ensemble.feature_count {
            return Err(Error::DimensionMismatch {
                left: view.feature_count(),
                right: ensemble.feature_count,
            });
        }
        Ok(Self {
            ensemble,
            view,
            label: "lambdamart".into(),
        })
    }

    pub fn named(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

impl Ranker for LtrRanker<'_> {
    fn name(&self) -> &str {
        &self.label
    }

    fn score_items(&self, user: EntityId, items: &[EntityId]) -> Vec<f64> {
        items
            .iter()
            .map(|&i| match self.view.row(user, i) {
                Some(row) => score(self.ensemble, &row).unwrap_or(f64::NEG_INFINITY),
                None => f64::NEG_INFINITY,
            })
            .collect()
    }
}

pub fn rank_topn(
    ensemble: &TreeEnsemble,
    user: EntityId,
    candidates: &[EntityId],
    features: &FeatureView<'_>,
    n: usize,
) -> Result<Vec<(EntityId, f64)>> {
    let ranker = LtrRanker::new(ensemble, features.clone())?;
    Ok(rank::rank_topn(&ranker, user, candidates, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ltr::Node;

    fn group(user: u32, rows: Vec<Vec<f64>>, labels: Vec<u8>) -> QueryGroup {
        QueryGroup {
            user: EntityId(user),
            items: (0..rows.len() as u32).map(|i| EntityId(1000 + i)).collect(),
            features: rows,
            labels,
        }
    }

    #[test]
    fn separable_pair_is_learned() {
        let g = group(0, vec![vec![1.0], vec![0.0]], vec![1, 0]);
        let e = train_ranker(&[g], &LtrConfig { num_trees: 5, ..Default::default() }).unwrap();
        assert!(score(&e, &[1.0]).unwrap() > score(&e, &[0.0]).unwrap());
    }

    #[test]
    fn constant_features_give_constant_scores() {
        let g = group(0, vec![vec![3.0]; 4], vec![1, 0, 0, 1]);
        let e = train_ranker(&[g], &LtrConfig { num_trees: 5, ..Default::default() }).unwrap();
        assert!(e.trees.iter().all(|t| t.nodes.len() == 1));
        let s = score(&e, &[3.0]).unwrap();
        assert!(s.is_finite());
    }

    #[test]
    fn score_examples() {
        let e = TreeEnsemble::empty(2, 0.1);
        assert_eq!(score(&e, &[1.0, 2.0]).unwrap(), 0.0);
        let mut e = TreeEnsemble::empty(1, 0.1);
        e.trees.push(RegressionTree::leaf(2.0));
        assert!((score(&e, &[0.0]).unwrap() - 0.2).abs() < 1e-15);
        assert!(score(&e, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn invalid_group_is_fatal() {
        let g = group(0, vec![vec![1.0], vec![0.0]], vec![1, 1]);
        assert!(matches!(train_ranker(&[g], &LtrConfig::default()), Err(Error::InvalidGroup { .. })));
        assert!(train_ranker(&[], &LtrConfig::default()).is_err());
    }

    #[test]
    fn lambdas_balance_and_push_positives_up() {
        let grad = group_lambdas(&[0, 1, 0], &[0.5, 0.0, -0.5], &LtrConfig::default());
        assert_eq!(grad.sum, 0.0);
        assert!(grad.lambdas[1] > 0.0);
        assert!(grad.lambdas[0] < 0.0 && grad.lambdas[2] < 0.0);
        assert!(grad.weights.iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn json_round_trip_and_validation() {
        let groups: Vec<_> = (0..3)
            .map(|u| group(u, vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.5, 0.5]], vec![0, 1, 0]))
            .collect();
        let e = train_ranker(&groups, &LtrConfig { num_trees: 3, ..Default::default() })
            .unwrap()
            .with_feature_names(vec!["a".into(), "b".into()]);
        let back = TreeEnsemble::from_json(&e.to_json().unwrap()).unwrap();
        assert_eq!(back, e);

        let mut bad = e.clone();
        bad.trees[0].nodes[0] = Node::Split { feature: 7, threshold: 0.0, left: 0, right: 0 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn serial_lambdas_are_deterministic() {
        let groups: Vec<_> = (0..5)
            .map(|u| {
                let rows = (0..8).map(|i| vec![((i * 7 + u) % 5) as f64, (i % 3) as f64]).collect();
                group(u, rows, (0..8).map(|i| u8::from(i % 4 == 0)).collect())
            })
            .collect();
        let cfg = LtrConfig { num_trees: 10, ..Default::default() };
        let a = train_ranker(&groups, &cfg).unwrap().to_json().unwrap();
        let b = train_ranker(&groups, &cfg).unwrap().to_json().unwrap();
        assert_eq!(a, b);
    }
}
