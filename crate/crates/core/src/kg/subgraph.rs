use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{EntityId, InteractionStore, KnowledgeGraph, RelationId};
use crate::error::Result;

/// Which embedding space a subgraph (and everything derived from it)
/// belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubgraphKind {
    Relation(RelationId),
    Feedback,
}

impl fmt::Display for SubgraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubgraphKind::Relation(r) => write!(f, "{r}"),
            SubgraphKind::Feedback => f.write_str("feedback"),
        }
    }
}

/// Undirected, unweighted graph over the triples of one relation type,
/// optionally merged with user–item feedback edges.
///
/// Nodes are stored sorted by entity id; adjacency lists hold local node
/// indices, sorted and free of duplicates and self-loops.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationSubgraph {
    pub kind: SubgraphKind,
    pub includes_feedback: bool,
    nodes: Vec<EntityId>,
    adjacency: Vec<Vec<u32>>,
    edge_count: usize,
}

impl RelationSubgraph {
    /// Builds a subgraph from an edge list over entity ids. Duplicate
    /// undirected edges collapse; self-loops are dropped.
    pub fn from_edges(
        kind: SubgraphKind,
        includes_feedback: bool,
        edges: impl IntoIterator<Item = (EntityId, EntityId)>,
    ) -> Self {
        let mut pairs: Vec<(EntityId, EntityId)> = edges
            .into_iter()
            .filter(|(a, b)| a != b)
            .map(|(a, b)| if a < b { (a, b) } else { (b, a) })
            .collect();
        pairs.sort_unstable();
        pairs.dedup();

        let mut nodes: Vec<EntityId> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        nodes.sort_unstable();
        nodes.dedup();

        let mut adjacency = vec![Vec::new(); nodes.len()];
        for &(a, b) in &pairs {
            let la = nodes.binary_search(&a).expect("endpoint indexed") as u32;
            let lb = nodes.binary_search(&b).expect("endpoint indexed") as u32;
            adjacency[la as usize].push(lb);
            adjacency[lb as usize].push(la);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Self {
            kind,
            includes_feedback,
            nodes,
            adjacency,
            edge_count: pairs.len(),
        }
    }

    /// Adds nodes with no edges (they emit singleton walks).
    pub fn with_isolated(mut self, extra: impl IntoIterator<Item = EntityId>) -> Self {
        let mut added = false;
        let mut all = self.nodes.clone();
        for e in extra {
            if self.nodes.binary_search(&e).is_err() {
                all.push(e);
                added = true;
            }
        }
        if !added {
            return self;
        }
        all.sort_unstable();
        all.dedup();
        let mut adjacency = vec![Vec::new(); all.len()];
        for (old, list) in self.adjacency.iter().enumerate() {
            let new = all.binary_search(&self.nodes[old]).unwrap();
            adjacency[new] = list
                .iter()
                .map(|&n| all.binary_search(&self.nodes[n as usize]).unwrap() as u32)
                .collect();
        }
        self.nodes = all;
        self.adjacency = adjacency;
        self
    }

    pub fn nodes(&self) -> &[EntityId] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn local_index(&self, e: EntityId) -> Option<usize> {
        self.nodes.binary_search(&e).ok()
    }

    pub fn entity(&self, local: usize) -> EntityId {
        self.nodes[local]
    }

    pub fn neighbors(&self, local: usize) -> &[u32] {
        &self.adjacency[local]
    }

    pub fn degree(&self, local: usize) -> usize {
        self.adjacency[local].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&(b as u32)).is_ok()
    }

    /// Undirected edges as `(a, b)` entity pairs with `a < b`, ascending.
    pub fn edges(&self) -> Vec<(EntityId, EntityId)> {
        let mut out = Vec::with_capacity(self.edge_count);
        for (a, list) in self.adjacency.iter().enumerate() {
            for &b in list {
                if (a as u32) < b {
                    out.push((self.nodes[a], self.nodes[b as usize]));
                }
            }
        }
        out
    }
}

fn feedback_edges(store: &InteractionStore) -> impl Iterator<Item = (EntityId, EntityId)> + '_ {
    store
        .interactions()
        .iter()
        .filter(|r| r.label == 1 && r.split.is_train_visible())
        .map(|r| (r.user, r.item))
}

/// Extracts the subgraph of relation `relation`. When `feedback` is given,
/// train-visible positive user–item edges are merged in so every active user
/// has a node.
pub fn extract_subgraph(
    kg: &KnowledgeGraph,
    relation: RelationId,
    feedback: Option<&InteractionStore>,
) -> Result<RelationSubgraph> {
    if relation.index() >= kg.relation_count() {
        return Err(crate::Error::UnknownRelation(relation.to_string()));
    }
    if kg.relation_triple_count(relation) == 0 {
        warn!("relation {} has no triples", kg.relation_label(relation));
    }
    let attr = kg.relation_triples(relation).map(|t| (t.head, t.tail));
    let graph = match feedback {
        Some(store) => RelationSubgraph::from_edges(
            SubgraphKind::Relation(relation),
            true,
            attr.chain(feedback_edges(store)),
        ),
        None => RelationSubgraph::from_edges(SubgraphKind::Relation(relation), false, attr),
    };
    Ok(graph)
}

/// The user–item interaction graph as its own embedding space.
pub fn feedback_subgraph(store: &InteractionStore) -> RelationSubgraph {
    RelationSubgraph::from_edges(SubgraphKind::Feedback, true, feedback_edges(store))
}
