use std::collections::HashSet;

use kgrec::embed::sgns_loss_and_grad;
use kgrec::eval::{self, SplitConfig};
use kgrec::features::cosine;
use kgrec::kg::{Interaction, InteractionStore, RelationSubgraph, SplitTag, SubgraphKind};
use kgrec::ltr::{self, LtrConfig, QueryGroup};
use kgrec::rank::top_n;
use kgrec::walk::{self, WalkConfig};
use kgrec::{EntityId, RelationId};
use proptest::prelude::*;

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, dim)
}

fn ranked_and_relevant() -> impl Strategy<Value = (Vec<EntityId>, HashSet<EntityId>)> {
    (1u32..25).prop_flat_map(|n| {
        (
            Just((0..n).map(EntityId).collect::<Vec<_>>()).prop_shuffle(),
            prop::collection::hash_set((0..n).prop_map(EntityId), 1..=n as usize),
        )
    })
}

fn edges(nodes: u32) -> impl Strategy<Value = Vec<(EntityId, EntityId)>> {
    prop::collection::vec((0..nodes, 0..nodes), 1..30)
        .prop_map(|v| v.into_iter().map(|(a, b)| (EntityId(a), EntityId(b))).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sgns_gradient_matches_central_differences(
        (center, context, negatives) in (1usize..6).prop_flat_map(|d| {
            (vector(d), vector(d), prop::collection::vec(vector(d), 1..5))
        })
    ) {
        let eval_at = |c: &[f64], t: &[f64], n: &[Vec<f64>]| {
            let refs: Vec<&[f64]> = n.iter().map(Vec::as_slice).collect();
            sgns_loss_and_grad(c, t, &refs).unwrap()
        };
        let g = eval_at(&center, &context, &negatives);
        let h = 1e-6;
        let mut all = vec![center, context];
        all.extend(negatives);
        let analytic: Vec<Vec<f64>> =
            [g.center.clone(), g.context.clone()].into_iter().chain(g.negatives.clone()).collect();
        for v in 0..all.len() {
            for c in 0..all[v].len() {
                let x = all[v][c];
                all[v][c] = x + h;
                let up = eval_at(&all[0], &all[1], &all[2..]).loss;
                all[v][c] = x - h;
                let down = eval_at(&all[0], &all[1], &all[2..]).loss;
                all[v][c] = x;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[v][c];
                prop_assert!((a - numeric).abs() <= 1e-6 * a.abs().max(numeric.abs()).max(1.0));
            }
        }
    }

    #[test]
    fn metrics_match_counting_definitions((ranked, relevant) in ranked_and_relevant(), n in 1usize..15) {
        let hits_at = |k: usize| ranked.iter().take(k).filter(|i| relevant.contains(i)).count();
        let p = eval::precision_at_n(&ranked, &relevant, n);
        prop_assert_eq!(p, hits_at(n) as f64 / n as f64);
        let r = eval::recall_at_n(&ranked, &relevant, n).unwrap();
        prop_assert_eq!(r, hits_at(n) as f64 / relevant.len() as f64);
        let mut ap = 0.0;
        for k in 1..=n.min(ranked.len()) {
            if relevant.contains(&ranked[k - 1]) {
                ap += hits_at(k) as f64 / k as f64;
            }
        }
        ap /= n.min(relevant.len()) as f64;
        let got = eval::average_precision_at_n(&ranked, &relevant, n);
        prop_assert!((got - ap).abs() < 1e-12);
        for v in [p, r, got] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn ranking_is_invariant_under_increasing_transforms(raw in prop::collection::vec(-40i32..40, 1..30), n in 1usize..40) {
        // multiples of 1/8 keep the transforms below exact in f64
        let scored: Vec<(EntityId, f64)> =
            raw.iter().enumerate().map(|(i, &s)| (EntityId(i as u32), s as f64 / 8.0)).collect();
        let order = |f: &dyn Fn(f64) -> f64| -> Vec<EntityId> {
            top_n(scored.iter().map(|&(i, s)| (i, f(s))).collect(), n).into_iter().map(|(i, _)| i).collect()
        };
        let base = order(&|s| s);
        prop_assert_eq!(&base, &order(&|s| 2.0 * s + 3.0));
        prop_assert_eq!(&base, &order(&|s| s * s * s));
        prop_assert_eq!(&base, &order(&|s| s - 100.0));
    }

    #[test]
    fn ndcg_is_bounded_and_one_exactly_when_positives_lead(labels in prop::collection::vec(0u8..2, 1..20), k in 1usize..12) {
        let v = ltr::ndcg_at_k(&labels, k);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        let positives = labels.iter().filter(|&&l| l == 1).count();
        if positives == 0 {
            prop_assert_eq!(v, 0.0);
        } else {
            let ideal = labels.iter().take(k.min(positives)).all(|&l| l == 1);
            prop_assert_eq!((v - 1.0).abs() < 1e-12, ideal);
        }
    }

    #[test]
    fn cosine_ignores_positive_scaling(
        (v, w) in (1usize..10).prop_flat_map(|d| (vector(d), vector(d))),
        c in 1e-3f64..1e3,
    ) {
        let base = cosine(&v, &w).unwrap();
        let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
        prop_assert!((cosine(&scaled, &w).unwrap() - base).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&base));
    }

    #[test]
    fn walks_follow_edges(
        edges in edges(12),
        p in 0.1f64..4.0,
        q in 0.1f64..4.0,
        len in 1usize..20,
        seed in any::<u64>(),
    ) {
        let g = RelationSubgraph::from_edges(SubgraphKind::Relation(RelationId(0)), false, edges);
        prop_assume!(!g.is_empty());
        let cfg = WalkConfig { walks_per_node: 3, walk_length: len, return_param_p: p, inout_param_q: q, seed };
        let corpus = walk::generate_walks(&g, &cfg).unwrap();
        prop_assert_eq!(corpus.len(), 3 * g.node_count());
        for w in corpus.walks() {
            prop_assert_eq!(w.len(), len);
            for pair in w.windows(2) {
                let (a, b) = (g.local_index(pair[0]).unwrap(), g.local_index(pair[1]).unwrap());
                prop_assert!(g.has_edge(a, b));
            }
        }
        prop_assert_eq!(corpus, walk::generate_walks(&g, &cfg).unwrap());
    }

    #[test]
    fn lambdas_cancel_within_every_group(
        groups in prop::collection::vec(
            (1usize..4, 1usize..8).prop_flat_map(|(pos, neg)| {
                prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), pos + neg)
                    .prop_map(move |rows| (pos, rows))
            }),
            1..6,
        ),
    ) {
        let groups: Vec<QueryGroup> = groups
            .into_iter()
            .enumerate()
            .map(|(u, (pos, rows))| QueryGroup {
                user: EntityId(u as u32),
                items: (0..rows.len() as u32).map(EntityId).collect(),
                labels: (0..rows.len()).map(|i| u8::from(i < pos)).collect(),
                features: rows,
            })
            .collect();
        let cfg = LtrConfig { num_trees: 4, ..Default::default() };
        let (ensemble, trace) = ltr::train_ranker_traced(&groups, &cfg).unwrap();
        prop_assert!(trace.lambda_sums.iter().flatten().all(|&s| s == 0.0));
        prop_assert!(ensemble.trees.iter().all(|t| t.is_well_formed(2)));
        prop_assert!(trace.ndcg.iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)));
    }

    #[test]
    fn split_sends_ceil_ratio_of_each_users_positives_to_train(
        counts in prop::collection::vec(0usize..15, 1..8),
        ratio in 0.1f64..0.9,
        seed in any::<u64>(),
    ) {
        let mut records = Vec::new();
        for (u, &c) in counts.iter().enumerate() {
            for i in 0..c {
                records.push(Interaction {
                    user: EntityId(u as u32),
                    item: EntityId(100 + i as u32),
                    label: 1,
                    split: SplitTag::Unassigned,
                });
            }
            records.push(Interaction { user: EntityId(u as u32), item: EntityId(99), label: 0, split: SplitTag::Unassigned });
        }
        let store = InteractionStore::from_interactions(records).unwrap();
        let split = eval::split(&store, &SplitConfig { train_ratio: ratio, seed, per_user: true }).unwrap();
        for (u, &c) in counts.iter().enumerate() {
            let u = EntityId(u as u32);
            let train = split.train_positives(u).len();
            let test = split.test_positives(u).len();
            prop_assert_eq!(train + test, c);
            if c < 2 {
                prop_assert_eq!(test, 0);
            } else {
                prop_assert_eq!(train, (ratio * c as f64 - 1e-9).ceil() as usize);
            }
            prop_assert_eq!(split.get(u, EntityId(99)).unwrap().split, SplitTag::Train);
        }
    }
}
