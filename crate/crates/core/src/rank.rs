//! The scoring interface shared by the learned ranker and the baselines.

use crate::kg::EntityId;

pub trait Ranker: Sync {
    fn name(&self) -> &str;

    /// Scores for `items`, aligned with the input. Higher is better.
    fn score_items(&self, user: EntityId, items: &[EntityId]) -> Vec<f64>;
}

/// Sorts by score descending, ties by item id ascending, and keeps `n`.
pub fn top_n(mut scored: Vec<(EntityId, f64)>, n: usize) -> Vec<(EntityId, f64)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(n);
    scored
}

pub fn rank_topn<R: Ranker + ?Sized>(ranker: &R, user: EntityId, candidates: &[EntityId], n: usize) -> Vec<(EntityId, f64)> {
    if candidates.is_empty() {
        return Vec::new();
    }
    let scores = ranker.score_items(user, candidates);
    top_n(candidates.iter().copied().zip(scores).collect(), n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_break_by_item_id() {
        let scored = vec![(EntityId(1), 0.2), (EntityId(7), 0.9), (EntityId(3), 0.9)];
        let ranked = top_n(scored.clone(), 3);
        assert_eq!(ranked.iter().map(|r| r.0 .0).collect::<Vec<_>>(), vec![3, 7, 1]);
        assert_eq!(top_n(scored, 10).len(), 3);
    }
}
