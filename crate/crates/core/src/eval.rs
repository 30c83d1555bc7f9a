//! Train/test splitting, top-n metrics and evaluation reports.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, InteractionStore, SplitTag};
use crate::rank::{rank_topn, Ranker};
use crate::rng;

/// Cutoff used for MAP in reports.
pub const MAP_CUTOFF: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train_ratio: f64,
    pub seed: u64,
    pub per_user: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_ratio: 0.8,
            seed: 0,
            per_user: true,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(Error::config("split.train_ratio", "must lie strictly between 0 and 1"));
        }
        Ok(())
    }
}

fn train_share(ratio: f64, count: usize) -> usize {
    ((ratio * count as f64 - 1e-9).ceil() as usize).min(count)
}

/// Tags every interaction Train or Test. Positives of each user are
/// shuffled and the first `⌈ratio·count⌉` go to train; users with fewer
/// than two positives and all label-0 rows go to train. Without `per_user`
/// the shuffle and cut are over all positives of users with at least two.
pub fn split(interactions: &InteractionStore, cfg: &SplitConfig) -> Result<InteractionStore> {
    cfg.validate()?;
    let records = interactions.interactions();
    let mut tags = vec![SplitTag::Train; records.len()];
    let mut pool: Vec<Vec<usize>> = Vec::new();
    let mut start = 0;
    while start < records.len() {
        let user = records[start].user;
        let end = start + records[start..].iter().take_while(|r| r.user == user).count();
        let positives: Vec<usize> = (start..end).filter(|&k| records[k].label == 1).collect();
        if positives.len() >= 2 {
            pool.push(positives);
        }
        start = end;
    }
    if cfg.per_user {
        for positives in &mut pool {
            let user = records[positives[0]].user;
            let mut r = rng::stream(&[cfg.seed, 0x73_706c, user.0 as u64]);
            positives.shuffle(&mut r);
            for &k in &positives[train_share(cfg.train_ratio, positives.len())..] {
                tags[k] = SplitTag::Test;
            }
        }
    } else {
        let mut all: Vec<usize> = pool.into_iter().flatten().collect();
        let mut r = rng::stream(&[cfg.seed, 0x73_706c]);
        all.shuffle(&mut r);
        for &k in &all[train_share(cfg.train_ratio, all.len())..] {
            tags[k] = SplitTag::Test;
        }
    }
    Ok(interactions.with_split_tags(&tags))
}

fn hits(ranked: &[EntityId], relevant: &HashSet<EntityId>, n: usize) -> usize {
    ranked.iter().take(n).filter(|i| relevant.contains(i)).count()
}

/// `|top-n ∩ relevant| / n`.
pub fn precision_at_n(ranked: &[EntityId], relevant: &HashSet<EntityId>, n: usize) -> f64 {
    hits(ranked, relevant, n) as f64 / n as f64
}

/// `|top-n ∩ relevant| / |relevant|`; an empty relevant set is an error.
pub fn recall_at_n(ranked: &[EntityId], relevant: &HashSet<EntityId>, n: usize) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::Empty("relevant set for recall".into()));
    }
    Ok(hits(ranked, relevant, n) as f64 / relevant.len() as f64)
}

/// `(1/min(n, |relevant|)) Σ_{k≤n} P(k)·rel(k)`; zero for an empty relevant set.
pub fn average_precision_at_n(ranked: &[EntityId], relevant: &HashSet<EntityId>, n: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let mut found = 0;
    let mut sum = 0.0;
    for (k, item) in ranked.iter().take(n).enumerate() {
        if relevant.contains(item) {
            found += 1;
            sum += found as f64 / (k + 1) as f64;
        }
    }
    sum / n.min(relevant.len()) as f64
}

/// Mean AP@n over users with a nonempty relevant set.
pub fn map_at_n(ranked_per_user: &[Vec<EntityId>], relevant_per_user: &[HashSet<EntityId>], n: usize) -> Result<f64> {
    let aps: Vec<f64> = ranked_per_user
        .iter()
        .zip(relevant_per_user)
        .filter(|(_, rel)| !rel.is_empty())
        .map(|(ranked, rel)| average_precision_at_n(ranked, rel, n))
        .collect();
    if aps.is_empty() {
        return Err(Error::Empty("users with relevant items".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(rename = "P5")]
    pub p5: f64,
    #[serde(rename = "P10")]
    pub p10: f64,
    #[serde(rename = "MAP")]
    pub map: f64,
    #[serde(rename = "R5")]
    pub r5: f64,
    #[serde(rename = "R10")]
    pub r10: f64,
}

impl Metrics {
    fn user(ranked: &[EntityId], relevant: &HashSet<EntityId>) -> Self {
        let recall = |n| hits(ranked, relevant, n) as f64 / relevant.len() as f64;
        Self {
            p5: precision_at_n(ranked, relevant, 5),
            p10: precision_at_n(ranked, relevant, 10),
            map: average_precision_at_n(ranked, relevant, MAP_CUTOFF),
            r5: recall(5),
            r10: recall(10),
        }
    }

    pub fn in_unit_range(&self) -> bool {
        [self.p5, self.p10, self.map, self.r5, self.r10]
            .iter()
            .all(|x| (0.0..=1.0).contains(x))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub mode: String,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub users_evaluated: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_feature: BTreeMap<String, Metrics>,
}

impl MetricsReport {
    pub fn with_mode(mut self, mode: &str) -> Self {
        self.mode = mode.to_string();
        self
    }
}

/// Ranks, for every user with at least one test positive, all items except
/// the user's train positives, and averages the metrics over those users.
pub fn evaluate<R: Ranker + ?Sized>(ranker: &R, interactions: &InteractionStore) -> Result<MetricsReport> {
    let catalog: Vec<EntityId> = interactions.items().collect();
    let users: Vec<EntityId> = interactions
        .users()
        .filter(|&u| interactions.of_user(u).iter().any(|r| r.label == 1 && r.split == SplitTag::Test))
        .collect();
    if users.is_empty() {
        return Err(Error::Empty("evaluable users (none has a test positive)".into()));
    }
    let per_user = |&u: &EntityId| {
        let train = interactions.train_positives(u);
        let relevant: HashSet<EntityId> = interactions.test_positives(u).into_iter().collect();
        let candidates: Vec<EntityId> = catalog
            .iter()
            .copied()
            .filter(|i| train.binary_search(i).is_err())
            .collect();
        let ranked: Vec<EntityId> = rank_topn(ranker, u, &candidates, 10).into_iter().map(|r| r.0).collect();
        Metrics::user(&ranked, &relevant)
    };
    #[cfg(feature = "parallel")]
    let rows: Vec<Metrics> = users.par_iter().map(per_user).collect();
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Metrics> = users.iter().map(per_user).collect();

    let k = rows.len() as f64;
    let mut m = Metrics::default();
    for r in &rows {
        m.p5 += r.p5;
        m.p10 += r.p10;
        m.map += r.map;
        m.r5 += r.r5;
        m.r10 += r.r10;
    }
    for x in [&mut m.p5, &mut m.p10, &mut m.map, &mut m.r5, &mut m.r10] {
        *x /= k;
    }
    Ok(MetricsReport {
        model: ranker.name().to_string(),
        mode: "full".into(),
        metrics: m,
        users_evaluated: rows.len(),
        per_feature: BTreeMap::new(),
    })
}

/// Aligned plain-text table: one row per report, followed by any
/// per-feature rows of that report.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let mut rows: Vec<(String, Metrics)> = Vec::new();
    for r in reports {
        for (name, m) in &r.per_feature {
            rows.push((name.clone(), *m));
        }
        rows.push((r.model.clone(), r.metrics));
    }
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max("Model".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}", "Model", "P5", "P10", "MAP", "R5", "R10");
    for (name, m) in rows {
        let _ = writeln!(
            out,
            "{name:<width$}  {:>6.4}  {:>6.4}  {:>6.4}  {:>6.4}  {:>6.4}",
            m.p5, m.p10, m.map, m.r5, m.r10
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::kg::Interaction;

    fn ids(v: &[u32]) -> Vec<EntityId> {
        v.iter().map(|&i| EntityId(i)).collect()
    }

    fn set(v: &[u32]) -> HashSet<EntityId> {
        ids(v).into_iter().collect()
    }

    #[test]
    fn metric_examples() {
        let ranked = ids(&[1, 2, 3, 4, 5]);
        assert_eq!(precision_at_n(&ranked, &set(&[2, 4, 9]), 5), 0.4);
        assert_eq!(precision_at_n(&ranked, &set(&[9]), 5), 0.0);
        assert_eq!(precision_at_n(&ranked, &set(&[1, 2, 3, 4, 5]), 5), 1.0);
        assert_eq!(recall_at_n(&ranked, &set(&[1, 2, 8, 9]), 5).unwrap(), 0.5);
        assert_eq!(recall_at_n(&ranked, &set(&[1, 2, 3, 4]), 5).unwrap(), 1.0);
        assert!(recall_at_n(&ranked, &set(&[]), 5).is_err());
        assert_eq!(average_precision_at_n(&ranked, &set(&[1]), 5), 1.0);
        assert_eq!(average_precision_at_n(&ranked, &set(&[2]), 5), 0.5);
        let map = map_at_n(&[ranked.clone(), ranked.clone()], &[set(&[1]), set(&[2])], 5).unwrap();
        assert_relative_eq!(map, 0.75);
    }

    fn store(per_user: &[u32]) -> InteractionStore {
        let mut records = vec![];
        for (u, &n) in per_user.iter().enumerate() {
            for i in 0..n {
                records.push(Interaction {
                    user: EntityId(u as u32),
                    item: EntityId(100 + i),
                    label: 1,
                    split: SplitTag::Unassigned,
                });
            }
            records.push(Interaction {
                user: EntityId(u as u32),
                item: EntityId(99),
                label: 0,
                split: SplitTag::Unassigned,
            });
        }
        InteractionStore::from_interactions(records).unwrap()
    }

    #[test]
    fn split_counts() {
        let s = split(&store(&[10, 1]), &SplitConfig::default()).unwrap();
        assert_eq!(s.train_positives(EntityId(0)).len(), 8);
        assert_eq!(s.test_positives(EntityId(0)).len(), 2);
        assert_eq!(s.train_positives(EntityId(1)).len(), 1);
        assert!(s.test_positives(EntityId(1)).is_empty());
        assert!(s.interactions().iter().filter(|r| r.label == 0).all(|r| r.split == SplitTag::Train));
        let again = split(&store(&[10, 1]), &SplitConfig::default()).unwrap();
        assert_eq!(s.interactions(), again.interactions());
        assert!(split(&store(&[3]), &SplitConfig { train_ratio: 1.0, ..Default::default() }).is_err());
    }

    struct Oracle<'a>(&'a InteractionStore);

    impl Ranker for Oracle<'_> {
        fn name(&self) -> &str {
            "oracle"
        }

        fn score_items(&self, user: EntityId, items: &[EntityId]) -> Vec<f64> {
            let rel = self.0.test_positives(user);
            items.iter().map(|i| f64::from(u8::from(rel.contains(i)))).collect()
        }
    }

    #[test]
    fn oracle_ranker_hits_the_ceiling() {
        let s = split(&store(&[10, 30, 1]), &SplitConfig::default()).unwrap();
        let report = evaluate(&Oracle(&s), &s).unwrap();
        assert_eq!(report.users_evaluated, 2);
        // test sizes 2 and 6
        assert_relative_eq!(report.metrics.p5, (2.0 / 5.0 + 5.0 / 5.0) / 2.0);
        assert_relative_eq!(report.metrics.r10, 1.0);
        assert_relative_eq!(report.metrics.map, 1.0);
        assert!(report.metrics.in_unit_range());
    }

    #[test]
    fn no_test_positives_is_an_error() {
        let s = store(&[3]);
        assert!(evaluate(&Oracle(&s), &s).is_err());
    }

    #[test]
    fn report_json_and_table() {
        let mut r = MetricsReport {
            model: "lambdamart".into(),
            mode: "full".into(),
            metrics: Metrics { p5: 0.5, ..Default::default() },
            users_evaluated: 3,
            per_feature: BTreeMap::new(),
        };
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["P5"], 0.5);
        assert!(json.get("per_feature").is_none());
        r.per_feature.insert("Fuel type".into(), Metrics::default());
        let table = render_table(&[r]);
        assert_eq!(table.lines().count(), 3);
        assert!(table.lines().nth(1).unwrap().starts_with("Fuel type"));
    }
}
