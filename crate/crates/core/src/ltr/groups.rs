use log::warn;
use rand::seq::index;

use super::LtrConfig;
use crate::error::{Error, Result};
use crate::features::FeatureView;
use crate::kg::{EntityId, InteractionStore};
use crate::rng;

/// One user's candidate list with feature rows and binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryGroup {
    pub user: EntityId,
    pub items: Vec<EntityId>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl QueryGroup {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Checks aligned lengths, binary labels, consistent row width and at
    /// least one positive and one negative.
    pub fn validate(&self, feature_count: usize) -> Result<()> {
        let bad = |reason: String| Error::InvalidGroup {
            user: self.user.0,
            reason,
        };
        if self.features.len() != self.items.len() || self.labels.len() != self.items.len() {
            return Err(bad("items, feature rows and labels differ in length".into()));
        }
        if let Some(row) = self.features.iter().find(|r| r.len() != feature_count) {
            return Err(bad(format!("row of width {} where {feature_count} expected", row.len())));
        }
        if self.labels.iter().any(|&l| l > 1) {
            return Err(bad("labels must be 0 or 1".into()));
        }
        if !self.labels.contains(&1) || !self.labels.contains(&0) {
            return Err(bad("needs at least one positive and one negative".into()));
        }
        Ok(())
    }
}

/// Builds one training group per user: all train positives plus
/// `negatives_per_positive × |positives|` items drawn uniformly without
/// replacement from the items the user has no train-visible interaction
/// with. Users without positives, or without any eligible negative, are
/// skipped. Items within a group are sorted by id.
pub fn assemble_training_groups(
    interactions: &InteractionStore,
    features: &FeatureView<'_>,
    cfg: &LtrConfig,
) -> Result<Vec<QueryGroup>> {
    cfg.validate()?;
    let catalog: Vec<EntityId> = interactions.items().collect();
    let mut groups = Vec::new();
    for user in interactions.users() {
        let positives = interactions.train_positives(user);
        if positives.is_empty() {
            continue;
        }
        let seen = interactions.train_interacted(user);
        let eligible: Vec<EntityId> = catalog
            .iter()
            .copied()
            .filter(|i| seen.binary_search(i).is_err())
            .collect();
        let wanted = cfg.negatives_per_positive * positives.len();
        if eligible.len() < wanted {
            warn!(
                "user {user}: only {} eligible negatives for {wanted} requested",
                eligible.len()
            );
        }
        if eligible.is_empty() {
            continue;
        }
        let mut rng = rng::stream(&[cfg.seed, 0x6772_6f75, user.0 as u64]);
        let amount = wanted.min(eligible.len());
        let negatives = index::sample(&mut rng, eligible.len(), amount)
            .into_iter()
            .map(|i| eligible[i]);

        let mut labelled: Vec<(EntityId, u8)> = positives.iter().map(|&i| (i, 1)).chain(negatives.map(|i| (i, 0))).collect();
        labelled.sort_unstable();

        let mut group = QueryGroup {
            user,
            items: Vec::with_capacity(labelled.len()),
            features: Vec::with_capacity(labelled.len()),
            labels: Vec::with_capacity(labelled.len()),
        };
        for (item, label) in labelled {
            let row = features
                .row(user, item)
                .ok_or_else(|| Error::Parse(format!("no feature row for user {user}, item {item}")))?;
            group.items.push(item);
            group.features.push(row);
            group.labels.push(label);
        }
        groups.push(group);
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureMatrix, FeatureVector};
    use crate::kg::{Interaction, SplitTag};

    fn setup(positives: u32, items: u32) -> (InteractionStore, FeatureMatrix) {
        let user = EntityId(0);
        let mut store = InteractionStore::from_interactions((1..=positives).map(|i| Interaction {
            user,
            item: EntityId(i),
            label: 1,
            split: SplitTag::Train,
        }))
        .unwrap();
        store.add_catalog_items((1..=items).map(EntityId));
        let mut m = FeatureMatrix::new(vec!["f".into()]);
        for i in 1..=items {
            m.insert(FeatureVector {
                user,
                item: EntityId(i),
                scores: vec![i as f64],
                label: None,
            });
        }
        (store, m)
    }

    #[test]
    fn group_size_is_positives_times_ratio_plus_one() {
        let (store, m) = setup(3, 5537);
        let groups = assemble_training_groups(&store, &FeatureView::all(&m), &LtrConfig::default()).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].len(), 33);
        assert_eq!(groups[0].labels.iter().filter(|&&l| l == 1).count(), 3);
        groups[0].validate(1).unwrap();
    }

    #[test]
    fn users_without_positives_are_skipped() {
        let store = InteractionStore::from_interactions([Interaction {
            user: EntityId(0),
            item: EntityId(1),
            label: 0,
            split: SplitTag::Train,
        }])
        .unwrap();
        let m = FeatureMatrix::new(vec!["f".into()]);
        let groups = assemble_training_groups(&store, &FeatureView::all(&m), &LtrConfig::default()).unwrap();
        assert!(groups.is_empty());
    }

    #[test]
    fn short_supply_takes_everything() {
        let (store, m) = setup(2, 7);
        let groups = assemble_training_groups(&store, &FeatureView::all(&m), &LtrConfig::default()).unwrap();
        assert_eq!(groups[0].len(), 7);
    }

    #[test]
    fn deterministic_given_seed() {
        let (store, m) = setup(4, 300);
        let cfg = LtrConfig::default();
        let a = assemble_training_groups(&store, &FeatureView::all(&m), &cfg).unwrap();
        let b = assemble_training_groups(&store, &FeatureView::all(&m), &cfg).unwrap();
        assert_eq!(a, b);
        let c = assemble_training_groups(&store, &FeatureView::all(&m), &LtrConfig { seed: 9, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn validation_rejects_single_class() {
        let g = QueryGroup {
            user: EntityId(0),
            items: vec![EntityId(1)],
            features: vec![vec![0.0]],
            labels: vec![1],
        };
        assert!(g.validate(1).is_err());
    }
}
