use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{Dictionary, EntityId, RelationId};
use crate::error::{Error, Result};

/// Relations whose numeric tails are replaced by equal-frequency bucket
/// entities named `relation#bucket_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BucketConfig {
    pub relations: Vec<String>,
    pub buckets: usize,
}

impl Default for BucketConfig {
    fn default() -> Self {
        Self {
            relations: Vec::new(),
            buckets: 10,
        }
    }
}

impl BucketConfig {
    pub fn new(relations: impl IntoIterator<Item = impl Into<String>>, buckets: usize) -> Self {
        Self {
            relations: relations.into_iter().map(Into::into).collect(),
            buckets,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.buckets == 0 {
            return Err(Error::config("bucket.buckets", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn is_self_loop(&self) -> bool {
        self.head == self.tail
    }
}

/// A triple as read from text, before interning.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl RawTriple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Self {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    /// Non-empty, non-comment lines.
    pub lines: usize,
    pub accepted: usize,
    pub malformed: usize,
    pub bucketed: usize,
    pub self_loops: usize,
}

#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    pub entities: Dictionary,
    pub relations: Dictionary,
    triples: Vec<Triple>,
    by_relation: Vec<Vec<usize>>,
}

impl KnowledgeGraph {
    /// Interns raw triples, bucketing numeric tails of the configured
    /// relations first. Handles are assigned in order of first appearance.
    pub fn from_raw(raw: Vec<RawTriple>, buckets: &BucketConfig) -> Result<(Self, IngestReport)> {
        Self::from_raw_with_entities(raw, buckets, Dictionary::new())
    }

    pub fn from_raw_with_entities(
        mut raw: Vec<RawTriple>,
        buckets: &BucketConfig,
        entities: Dictionary,
    ) -> Result<(Self, IngestReport)> {
        buckets.validate()?;
        let bucketed = apply_buckets(&mut raw, buckets);

        let mut kg = KnowledgeGraph {
            entities,
            ..Default::default()
        };
        let mut report = IngestReport {
            lines: raw.len(),
            accepted: raw.len(),
            bucketed,
            ..Default::default()
        };
        kg.triples.reserve(raw.len());
        for t in &raw {
            let head = EntityId(kg.entities.get_or_insert(&t.head));
            let relation = RelationId(kg.relations.get_or_insert(&t.relation));
            let tail = EntityId(kg.entities.get_or_insert(&t.tail));
            let triple = Triple {
                head,
                relation,
                tail,
            };
            if triple.is_self_loop() {
                report.self_loops += 1;
            }
            if kg.by_relation.len() <= relation.index() {
                kg.by_relation.resize_with(relation.index() + 1, Vec::new);
            }
            kg.by_relation[relation.index()].push(kg.triples.len());
            kg.triples.push(triple);
        }
        if report.self_loops > 0 {
            warn!("{} self-loop triples kept", report.self_loops);
        }
        Ok((kg, report))
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn relation_ids(&self) -> impl Iterator<Item = RelationId> {
        (0..self.relations.len() as u32).map(RelationId)
    }

    pub fn relation_triples(&self, relation: RelationId) -> impl Iterator<Item = &Triple> + '_ {
        self.by_relation
            .get(relation.index())
            .into_iter()
            .flatten()
            .map(move |&i| &self.triples[i])
    }

    pub fn relation_triple_count(&self, relation: RelationId) -> usize {
        self.by_relation.get(relation.index()).map_or(0, Vec::len)
    }

    pub fn relation(&self, label: &str) -> Result<RelationId> {
        self.relations
            .id(label)
            .map(RelationId)
            .ok_or_else(|| Error::UnknownRelation(label.to_owned()))
    }

    pub fn entity(&self, label: &str) -> Result<EntityId> {
        self.entities
            .id(label)
            .map(EntityId)
            .ok_or_else(|| Error::UnknownEntity(label.to_owned()))
    }

    pub fn entity_label(&self, e: EntityId) -> &str {
        self.entities.label(e.0).unwrap_or("?")
    }

    pub fn relation_label(&self, r: RelationId) -> &str {
        self.relations.label(r.0).unwrap_or("?")
    }

    /// Distinct heads of all triples, ascending.
    pub fn heads(&self) -> Vec<EntityId> {
        let mut heads: Vec<EntityId> = self.triples.iter().map(|t| t.head).collect();
        heads.sort_unstable();
        heads.dedup();
        heads
    }

    /// Writes every triple as `head<TAB>relation<TAB>tail`, in storage order.
    pub fn export_triples<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for t in &self.triples {
            writeln!(
                out,
                "{}\t{}\t{}",
                self.entity_label(t.head),
                self.relation_label(t.relation),
                self.entity_label(t.tail)
            )?;
        }
        out.flush()
    }
}

/// Parses the triples text format. Returns the well-formed triples, the
/// number of malformed lines and the number of content lines.
pub fn read_triples<R: BufRead>(reader: R) -> std::io::Result<(Vec<RawTriple>, usize, usize)> {
    let mut triples = Vec::new();
    let mut malformed = 0;
    let mut total = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        total += 1;
        let mut fields = line.split('\t');
        match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(h), Some(r), Some(t), None) if !h.is_empty() && !r.is_empty() && !t.is_empty() => {
                triples.push(RawTriple::new(h, r, t));
            }
            _ => {
                malformed += 1;
                if malformed <= 10 {
                    warn!("line {}: expected 3 tab-separated fields", lineno + 1);
                }
            }
        }
    }
    Ok((triples, malformed, total))
}

/// Loads a triples file into a fresh knowledge graph.
pub fn ingest_triples(path: &Path, buckets: &BucketConfig) -> Result<(KnowledgeGraph, IngestReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (raw, malformed, total) =
        read_triples(BufReader::new(file)).map_err(|e| Error::io(path, e))?;
    if malformed * 10 > total {
        return Err(Error::TooManyMalformed {
            path: path.to_owned(),
            malformed,
            total,
        });
    }
    if malformed > 0 {
        warn!("{}: skipped {malformed} malformed lines", path.display());
    }
    let (kg, mut report) = KnowledgeGraph::from_raw(raw, buckets)?;
    report.lines = total;
    report.malformed = malformed;
    Ok((kg, report))
}

fn parse_numeric(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Replaces numeric tails of configured relations by bucket labels, in place.
/// Returns the number of replaced tails.
fn apply_buckets(raw: &mut [RawTriple], cfg: &BucketConfig) -> usize {
    if cfg.relations.is_empty() {
        return 0;
    }
    let wanted: HashSet<&str> = cfg.relations.iter().map(String::as_str).collect();
    let mut values: HashMap<String, Vec<f64>> = HashMap::new();
    for t in raw.iter() {
        if wanted.contains(t.relation.as_str()) {
            if let Some(v) = parse_numeric(&t.tail) {
                values.entry(t.relation.clone()).or_default().push(v);
            }
        }
    }
    let boundaries: HashMap<String, Vec<f64>> = values
        .into_iter()
        .map(|(rel, mut vals)| {
            vals.sort_by(f64::total_cmp);
            (rel, equal_frequency_boundaries(&vals, cfg.buckets))
        })
        .collect();

    let mut replaced = 0;
    for t in raw.iter_mut() {
        let Some(bounds) = boundaries.get(&t.relation) else {
            continue;
        };
        if let Some(v) = parse_numeric(&t.tail) {
            let k = bounds.partition_point(|&b| b <= v);
            t.tail = format!("{}#bucket_{k}", t.relation);
            replaced += 1;
        }
    }
    replaced
}

/// Cut points at the `k·n/B` order statistics; a value `v` falls in bucket
/// `#{b : b <= v}`, so equal values always share a bucket.
pub(crate) fn equal_frequency_boundaries(sorted: &[f64], buckets: usize) -> Vec<f64> {
    let n = sorted.len();
    (1..buckets)
        .map(|k| k * n / buckets)
        .filter(|&i| i > 0 && i < n)
        .map(|i| sorted[i])
        .collect()
}
