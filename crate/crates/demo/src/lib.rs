//! Browser demo. Each export takes plain numbers and returns a JSON string
//! the page renders directly.

use std::collections::HashMap;

use kgrec::embed::{self, EmbedConfig};
use kgrec::features::cosine;
use kgrec::kg::{RelationSubgraph, SubgraphKind};
use kgrec::synth::{self, SynthConfig};
use kgrec::walk::{self, WalkConfig};
use kgrec::{EntityId, RelationId};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Two triangles joined by the bridge 2-3, plus a tail 5-6-7.
pub const EXPLORER_EDGES: [(u32, u32); 9] = [(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (3, 5), (4, 5), (5, 6), (6, 7)];

const CLIQUE: u32 = 5;

fn subgraph(edges: impl IntoIterator<Item = (u32, u32)>) -> RelationSubgraph {
    RelationSubgraph::from_edges(
        SubgraphKind::Relation(RelationId(0)),
        false,
        edges.into_iter().map(|(a, b)| (EntityId(a), EntityId(b))),
    )
}

#[derive(Debug, Serialize)]
pub struct Transitions {
    pub edges: Vec<(u32, u32)>,
    /// (node, probability) for every neighbour of `cur`.
    pub next: Vec<(u32, f64)>,
}

/// Exact next-step distribution on the explorer graph.
pub fn transitions(p: f64, q: f64, prev: Option<u32>, cur: u32) -> Result<Transitions, String> {
    let cfg = WalkConfig { return_param_p: p, inout_param_q: q, ..Default::default() };
    cfg.validate().map_err(|e| e.to_string())?;
    let g = subgraph(EXPLORER_EDGES);
    let local = |n: u32| g.local_index(EntityId(n)).ok_or(format!("no node {n}"));
    let c = local(cur)?;
    let prev = match prev {
        Some(n) => {
            let l = local(n)?;
            if !g.has_edge(l, c) {
                return Err(format!("{n} and {cur} are not adjacent"));
            }
            Some(l)
        }
        None => None,
    };
    let next = walk::transition_distribution(&g, &cfg, prev, c)
        .into_iter()
        .map(|(x, pr)| (g.entity(x).0, pr))
        .collect();
    Ok(Transitions { edges: EXPLORER_EDGES.to_vec(), next })
}

#[derive(Debug, Serialize)]
pub struct CliqueCosines {
    pub nodes: Vec<u32>,
    pub cosine: Vec<Vec<f64>>,
    pub within: f64,
    pub across: f64,
}

/// Embeds two 5-cliques joined by one bridge edge and returns the pairwise
/// cosine matrix with mean within and across clique similarity.
pub fn clique_cosines(p: f64, q: f64, dim: usize, seed: u64) -> Result<CliqueCosines, String> {
    let mut edges = Vec::new();
    for base in [0, CLIQUE] {
        for a in 0..CLIQUE {
            for b in a + 1..CLIQUE {
                edges.push((base + a, base + b));
            }
        }
    }
    edges.push((CLIQUE - 1, CLIQUE));
    let g = subgraph(edges);
    let wcfg = WalkConfig { walks_per_node: 20, walk_length: 20, return_param_p: p, inout_param_q: q, seed };
    let ecfg = EmbedConfig { dim, window: 3, epochs: 3, seed, ..Default::default() };
    ecfg.validate().map_err(|e| e.to_string())?;
    let corpus = walk::generate_walks(&g, &wcfg).map_err(|e| e.to_string())?;
    let table = embed::train_embeddings(&corpus, &ecfg).map_err(|e| e.to_string())?;

    let nodes: Vec<u32> = (0..2 * CLIQUE).collect();
    let vectors: Vec<Vec<f64>> = nodes
        .iter()
        .map(|&n| table.vector(EntityId(n)).map(|v| v.into_owned()).ok_or(format!("node {n} has no vector")))
        .collect::<Result<_, _>>()?;
    let mut cos = vec![vec![0.0; nodes.len()]; nodes.len()];
    let (mut within, mut across) = (Vec::new(), Vec::new());
    for i in 0..nodes.len() {
        for j in 0..nodes.len() {
            cos[i][j] = cosine(&vectors[i], &vectors[j]).map_err(|e| e.to_string())?;
            if i < j {
                if (i as u32 / CLIQUE) == (j as u32 / CLIQUE) { &mut within } else { &mut across }.push(cos[i][j]);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(CliqueCosines { nodes, cosine: cos, within: mean(&within), across: mean(&across) })
}

#[derive(Debug, Serialize)]
pub struct RelationSignal {
    pub relation: String,
    /// Share of liked items carrying the user's preferred value.
    pub match_rate: f64,
    /// The same share for a uniformly random item.
    pub chance: f64,
}

/// Generates synthetic vehicle data and measures how strongly each relation's
/// planted preference shows up in the positives.
pub fn planted_signal(strength: f64, dominant: Option<String>, seed: u64) -> Result<Vec<RelationSignal>, String> {
    let cfg = SynthConfig {
        num_users: 40,
        num_items: 300,
        interactions_per_user: 20,
        preference_strength: strength,
        dominant_relation: dominant,
        seed,
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let data = synth::generate(&cfg).map_err(|e| e.to_string())?;
    let prefs = &data.preferences;
    let items: HashMap<&str, &synth::ItemRecord> = prefs.items.iter().map(|i| (i.label.as_str(), i)).collect();
    let mut hits = vec![0usize; prefs.relations.len()];
    for (user, item) in &data.positives {
        let preferred = &prefs.users[user];
        let item = items[item.as_str()];
        for (r, h) in hits.iter_mut().enumerate() {
            *h += usize::from(item.classes[r] == preferred[r]);
        }
    }
    Ok(prefs
        .relations
        .iter()
        .zip(hits)
        .map(|(rel, h)| RelationSignal {
            relation: rel.name.clone(),
            match_rate: h as f64 / data.positives.len() as f64,
            chance: 1.0 / rel.values.classes() as f64,
        })
        .collect())
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string())).map_err(|e| JsValue::from_str(&e))
}

/// `prev` < 0 means the walk has just started.
#[wasm_bindgen(js_name = transitions)]
pub fn transitions_js(p: f64, q: f64, prev: i32, cur: u32) -> Result<String, JsValue> {
    to_js(transitions(p, q, u32::try_from(prev).ok(), cur))
}

#[wasm_bindgen(js_name = cliqueCosines)]
pub fn clique_cosines_js(p: f64, q: f64, dim: usize, seed: u32) -> Result<String, JsValue> {
    to_js(clique_cosines(p, q, dim, seed as u64))
}

/// An empty `dominant` means no dominant relation.
#[wasm_bindgen(js_name = plantedSignal)]
pub fn planted_signal_js(strength: f64, dominant: String, seed: u32) -> Result<String, JsValue> {
    let dominant = (!dominant.is_empty()).then_some(dominant);
    to_js(planted_signal(strength, dominant, seed as u64))
}
