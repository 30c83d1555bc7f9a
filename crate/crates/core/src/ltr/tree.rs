//! Regression trees grown best-first by variance reduction.

use serde::{Deserialize, Serialize};

/// A tree node. Rows with `row[feature] <= threshold` go left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Nodes in creation order; node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Checks child indices, feature bounds and finiteness.
    pub fn is_well_formed(&self, feature_count: usize) -> bool {
        self.nodes.iter().all(|n| match *n {
            Node::Leaf { value } => value.is_finite(),
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => feature < feature_count && !threshold.is_nan() && left < self.nodes.len() && right < self.nodes.len(),
        })
    }
}

/// Column-major training matrix with each column's row order presorted.
pub(crate) struct Dataset {
    columns: Vec<Vec<f64>>,
    sorted: Vec<Vec<u32>>,
    rows: usize,
}

impl Dataset {
    pub fn from_rows<'a>(rows: impl Iterator<Item = &'a [f64]>, feature_count: usize) -> Self {
        let mut columns = vec![Vec::new(); feature_count];
        let mut n = 0;
        for row in rows {
            for (c, &x) in columns.iter_mut().zip(row) {
                c.push(x);
            }
            n += 1;
        }
        let sorted = columns
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Self {
            columns,
            sorted,
            rows: n,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct OpenLeaf {
    node: usize,
    /// Member rows, one list per feature, each ordered by that feature.
    members: Vec<Vec<u32>>,
    best: Option<Candidate>,
}

fn best_split(data: &Dataset, members: &[Vec<u32>], count: usize, target: &[f64], min_leaf: usize) -> Option<Candidate> {
    if count < 2 * min_leaf || members.is_empty() {
        return None;
    }
    let total: f64 = members[0].iter().map(|&r| target[r as usize]).sum();
    let base = total * total / count as f64;
    let mut best: Option<Candidate> = None;
    for (f, list) in members.iter().enumerate() {
        let col = &data.columns[f];
        let mut left_sum = 0.0;
        for pos in 0..count - 1 {
            let r = list[pos] as usize;
            left_sum += target[r];
            let nl = pos + 1;
            let nr = count - nl;
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let v = col[r];
            let next = col[list[pos + 1] as usize];
            if v >= next {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64 - base;
            if gain > best.map_or(0.0, |b| b.gain) {
                let mut threshold = 0.5 * (v + next);
                if threshold >= next {
                    threshold = v;
                }
                best = Some(Candidate {
                    feature: f,
                    threshold,
                    gain,
                });
            }
        }
    }
    best
}

/// Fits a tree to `target` (the lambdas) with Newton leaf values
/// `Σ target / (Σ weight + 1e-9)`. Returns the tree and each row's output.
pub(crate) fn fit(
    data: &Dataset,
    target: &[f64],
    weight: &[f64],
    max_leaves: usize,
    min_leaf: usize,
) -> (RegressionTree, Vec<f64>) {
    const EPS: f64 = 1e-9;
    let n = data.rows();
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let root_members = if data.sorted.is_empty() {
        vec![(0..n as u32).collect()]
    } else {
        data.sorted.clone()
    };
    let mut open = vec![OpenLeaf {
        node: 0,
        best: if data.sorted.is_empty() {
            None
        } else {
            best_split(data, &root_members, n, target, min_leaf)
        },
        members: root_members,
    }];

    let mut goes_left = vec![false; n];
    while open.len() < max_leaves {
        let mut pick: Option<usize> = None;
        for (i, leaf) in open.iter().enumerate() {
            if let Some(c) = leaf.best {
                if pick.is_none_or(|p| c.gain > open[p].best.unwrap().gain) {
                    pick = Some(i);
                }
            }
        }
        let Some(pick) = pick else { break };
        let leaf = open.swap_remove(pick);
        let split = leaf.best.unwrap();
        let col = &data.columns[split.feature];
        for &r in &leaf.members[0] {
            goes_left[r as usize] = col[r as usize] <= split.threshold;
        }
        let mut left_members = Vec::with_capacity(leaf.members.len());
        let mut right_members = Vec::with_capacity(leaf.members.len());
        for list in &leaf.members {
            let (l, r): (Vec<u32>, Vec<u32>) = list.iter().partition(|&&r| goes_left[r as usize]);
            left_members.push(l);
            right_members.push(r);
        }
        let left_count = left_members[0].len();
        let right_count = right_members[0].len();

        let left_node = nodes.len();
        nodes.push(Node::Leaf { value: 0.0 });
        nodes.push(Node::Leaf { value: 0.0 });
        nodes[leaf.node] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: left_node,
            right: left_node + 1,
        };
        open.push(OpenLeaf {
            node: left_node,
            best: best_split(data, &left_members, left_count, target, min_leaf),
            members: left_members,
        });
        open.push(OpenLeaf {
            node: left_node + 1,
            best: best_split(data, &right_members, right_count, target, min_leaf),
            members: right_members,
        });
        // Keep candidate order stable by node index for tie-breaking.
        open.sort_by_key(|l| l.node);
    }

    let mut outputs = vec![0.0; n];
    for leaf in &open {
        let (s, w) = leaf.members[0]
            .iter()
            .fold((0.0, 0.0), |(s, w), &r| (s + target[r as usize], w + weight[r as usize]));
        let value = s / (w + EPS);
        nodes[leaf.node] = Node::Leaf { value };
        for &r in &leaf.members[0] {
            outputs[r as usize] = value;
        }
    }
    (RegressionTree { nodes }, outputs)
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;

    fn data(rows: &[Vec<f64>]) -> Dataset {
        let f = rows.first().map_or(0, Vec::len);
        Dataset::from_rows(rows.iter().map(Vec::as_slice), f)
    }

    #[test]
    fn splits_on_the_informative_feature() {
        let rows = vec![vec![5.0, 0.0], vec![5.0, 1.0], vec![5.0, 2.0], vec![5.0, 3.0]];
        let target = [-1.0, -1.0, 1.0, 1.0];
        let (tree, out) = fit(&data(&rows), &target, &[1.0; 4], 2, 1);
        assert_eq!(tree.leaf_count(), 2);
        match tree.nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(feature, 1);
                assert_eq!(threshold, 1.5);
            }
            _ => panic!("expected split"),
        }
        assert_relative_eq!(out[0], -1.0, epsilon = 1e-8);
        assert_relative_eq!(out[3], 1.0, epsilon = 1e-8);
        for (row, o) in rows.iter().zip(&out) {
            assert_eq!(tree.predict(row), *o);
        }
    }

    #[test]
    fn constant_features_give_a_single_leaf() {
        let rows = vec![vec![1.0]; 6];
        let target = [1.0, -1.0, 0.5, -0.5, 0.0, 0.0];
        let (tree, _) = fit(&data(&rows), &target, &[1.0; 6], 10, 1);
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.predict(&[1.0]), 0.0);
    }

    #[test]
    fn leaf_budget_and_min_samples_are_respected() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let target: Vec<f64> = (0..20).map(|i| ((i * 7) % 5) as f64 - 2.0 + i as f64 / 4.0).collect();
        let (tree, _) = fit(&data(&rows), &target, &[1.0; 20], 4, 3);
        assert_eq!(tree.leaf_count(), 4);
        assert!(tree.is_well_formed(1));
        let (tree, out) = fit(&data(&rows), &target, &[1.0; 20], 10, 10);
        assert_eq!(tree.leaf_count(), 2);
        assert_eq!(out.iter().filter(|&&o| o == out[0]).count(), 10);
    }

    #[test]
    fn serde_shape() {
        let tree = RegressionTree {
            nodes: vec![
                Node::Split { feature: 0, threshold: 0.5, left: 1, right: 2 },
                Node::Leaf { value: -1.0 },
                Node::Leaf { value: 2.0 },
            ],
        };
        let json = serde_json::to_string(&tree).unwrap();
        assert_eq!(
            json,
            r#"{"nodes":[{"feature":0,"threshold":0.5,"left":1,"right":2},{"value":-1.0},{"value":2.0}]}"#
        );
        assert_eq!(serde_json::from_str::<RegressionTree>(&json).unwrap(), tree);
    }
}
