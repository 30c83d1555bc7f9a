//! Second-order biased random walks (node2vec).
//!
//! From a walker that arrived at `cur` from `prev`, a neighbor `x` of `cur`
//! has unnormalized weight `1/p` if `x == prev`, `1` if `x` is adjacent to
//! `prev` and `1/q` otherwise. Steps are drawn by rejection: propose a
//! uniform neighbor, accept with probability `weight / max_weight`.
//!
//! Each walk owns an RNG stream keyed by `(seed, start entity, walk index)`,
//! so serial and parallel generation produce the same corpus.

use std::io::{BufRead, Write};

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{Dictionary, EntityId, RelationSubgraph, SubgraphKind};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WalkConfig {
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub return_param_p: f64,
    pub inout_param_q: f64,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            walks_per_node: 100,
            walk_length: 80,
            return_param_p: 1.0,
            inout_param_q: 1.0,
            seed: 0,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.walks_per_node == 0 {
            return Err(Error::config("walk.walks_per_node", "must be positive"));
        }
        if self.walk_length == 0 {
            return Err(Error::config("walk.walk_length", "must be positive"));
        }
        if !(self.return_param_p.is_finite() && self.return_param_p > 0.0) {
            return Err(Error::config("walk.return_param_p", "must be a positive real"));
        }
        if !(self.inout_param_q.is_finite() && self.inout_param_q > 0.0) {
            return Err(Error::config("walk.inout_param_q", "must be a positive real"));
        }
        Ok(())
    }
}

/// Walks stored back to back; `offsets[i]..offsets[i + 1]` is walk `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WalkCorpus {
    pub source: SubgraphKind,
    tokens: Vec<EntityId>,
    offsets: Vec<usize>,
}

impl WalkCorpus {
    pub fn new(source: SubgraphKind) -> Self {
        Self {
            source,
            tokens: Vec::new(),
            offsets: vec![0],
        }
    }

    pub fn from_walks(source: SubgraphKind, walks: impl IntoIterator<Item = Vec<EntityId>>) -> Self {
        let mut corpus = Self::new(source);
        for w in walks {
            corpus.push(&w);
        }
        corpus
    }

    pub fn push(&mut self, walk: &[EntityId]) {
        self.tokens.extend_from_slice(walk);
        self.offsets.push(self.tokens.len());
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    pub fn walk(&self, i: usize) -> &[EntityId] {
        &self.tokens[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn walks(&self) -> impl Iterator<Item = &[EntityId]> + '_ {
        self.offsets.windows(2).map(|w| &self.tokens[w[0]..w[1]])
    }

    pub fn tokens(&self) -> &[EntityId] {
        &self.tokens
    }

    /// One walk per line, tab-separated entity labels.
    pub fn write<W: Write>(&self, dict: &Dictionary, mut out: W) -> std::io::Result<()> {
        for walk in self.walks() {
            let mut first = true;
            for e in walk {
                if !first {
                    out.write_all(b"\t")?;
                }
                first = false;
                out.write_all(dict.label(e.0).unwrap_or("?").as_bytes())?;
            }
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn read<R: BufRead>(source: SubgraphKind, dict: &Dictionary, reader: R) -> Result<Self> {
        let mut corpus = Self::new(source);
        let mut walk = Vec::new();
        for line in reader.lines() {
            let line = line.map_err(|e| Error::Parse(e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            walk.clear();
            for label in line.split('\t') {
                let id = dict.id(label).ok_or_else(|| Error::UnknownEntity(label.to_owned()))?;
                walk.push(EntityId(id));
            }
            corpus.push(&walk);
        }
        Ok(corpus)
    }
}

/// Second-order transition weights out of `cur`.
#[derive(Clone, Copy, Debug)]
struct Bias {
    inv_p: f64,
    inv_q: f64,
    max: f64,
}

impl Bias {
    fn new(cfg: &WalkConfig) -> Self {
        let inv_p = 1.0 / cfg.return_param_p;
        let inv_q = 1.0 / cfg.inout_param_q;
        Self {
            inv_p,
            inv_q,
            max: inv_p.max(1.0).max(inv_q),
        }
    }

    fn weight(&self, g: &RelationSubgraph, prev: usize, x: usize) -> f64 {
        if x == prev {
            self.inv_p
        } else if g.has_edge(prev, x) {
            1.0
        } else {
            self.inv_q
        }
    }
}

/// Exact next-step distribution from `cur`, having arrived from `prev`
/// (`None` on the first step, which is uniform). Local node indices.
pub fn transition_distribution(
    g: &RelationSubgraph,
    cfg: &WalkConfig,
    prev: Option<usize>,
    cur: usize,
) -> Vec<(usize, f64)> {
    let bias = Bias::new(cfg);
    let weights: Vec<(usize, f64)> = g
        .neighbors(cur)
        .iter()
        .map(|&x| {
            let x = x as usize;
            (x, prev.map_or(1.0, |p| bias.weight(g, p, x)))
        })
        .collect();
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    weights.into_iter().map(|(x, w)| (x, w / total)).collect()
}

/// Samples the next local node. `cur` must have at least one neighbor.
fn step<R: Rng>(g: &RelationSubgraph, bias: &Bias, prev: Option<usize>, cur: usize, rng: &mut R) -> usize {
    let nbrs = g.neighbors(cur);
    let Some(prev) = prev else {
        return nbrs[rng.random_range(0..nbrs.len())] as usize;
    };
    loop {
        let x = nbrs[rng.random_range(0..nbrs.len())] as usize;
        let w = bias.weight(g, prev, x);
        if rng.random::<f64>() * bias.max < w {
            return x;
        }
    }
}

/// One walk of up to `walk_length` nodes starting at local node `start`.
fn walk_from(g: &RelationSubgraph, cfg: &WalkConfig, bias: &Bias, start: usize, index: usize) -> Vec<EntityId> {
    let mut rng = rng::stream(&[cfg.seed, g.entity(start).0 as u64, index as u64]);
    let mut walk = Vec::with_capacity(cfg.walk_length);
    walk.push(g.entity(start));
    if g.degree(start) == 0 {
        return walk;
    }
    let mut prev = None;
    let mut cur = start;
    while walk.len() < cfg.walk_length {
        let next = step(g, bias, prev, cur, &mut rng);
        walk.push(g.entity(next));
        prev = Some(cur);
        cur = next;
    }
    walk
}

fn walks_for_node(g: &RelationSubgraph, cfg: &WalkConfig, bias: &Bias, node: usize) -> Vec<Vec<EntityId>> {
    if g.degree(node) == 0 {
        // Isolated nodes contribute one singleton walk so they still get a vector.
        return vec![walk_from(g, cfg, bias, node, 0)];
    }
    (0..cfg.walks_per_node)
        .map(|w| walk_from(g, cfg, bias, node, w))
        .collect()
}

/// Generates the walk corpus for `g`. Output order is canonical: by start
/// node (entity id ascending), then walk index.
pub fn generate_walks(g: &RelationSubgraph, cfg: &WalkConfig) -> Result<WalkCorpus> {
    cfg.validate()?;
    let mut corpus = WalkCorpus::new(g.kind);
    if g.is_empty() {
        warn!("walks requested on empty subgraph {}", g.kind);
        return Ok(corpus);
    }
    let bias = Bias::new(cfg);

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let per_node: Vec<Vec<Vec<EntityId>>> = (0..g.node_count())
            .into_par_iter()
            .map(|n| walks_for_node(g, cfg, &bias, n))
            .collect();
        for walks in per_node {
            for w in walks {
                corpus.push(&w);
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    for n in 0..g.node_count() {
        for w in walks_for_node(g, cfg, &bias, n) {
            corpus.push(&w);
        }
    }
    Ok(corpus)
}
