//! Knowledge graph and interaction log storage.
//!
//! Entities and relation types are interned into dense `u32` handles. The
//! same entity dictionary is shared by the triple store and the interaction
//! log, so a user or item label that appears in both refers to one node.

mod dictionary;
mod interactions;
mod subgraph;
mod triples;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use dictionary::Dictionary;
pub use interactions::{
    ingest_interactions, read_interactions, Interaction, InteractionReport, InteractionStore,
    SplitTag,
};
pub use subgraph::{extract_subgraph, feedback_subgraph, RelationSubgraph, SubgraphKind};
pub use triples::{
    ingest_triples, read_triples, BucketConfig, IngestReport, KnowledgeGraph, RawTriple, Triple,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}
