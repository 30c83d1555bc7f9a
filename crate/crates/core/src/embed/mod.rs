//! Skip-gram with negative sampling over walk corpora.
//!
//! Every `(center, context)` pair within `window` positions of each other in
//! a walk gets one SGD step on
//! `log σ(x_c·y_t) + Σ_k log σ(−x_c·y_{n_k})`, with `x` the input vectors,
//! `y` the output vectors and negatives drawn from the corpus unigram
//! distribution raised to `noise_exponent`.

mod hogwild;
mod sgns;

use std::borrow::Cow;
use std::io::{BufRead, Write};

use log::warn;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_distr::weighted::WeightedAliasIndex;
use serde::{Deserialize, Serialize};

pub use hogwild::train_embeddings_concurrent;
pub use sgns::{log_sigmoid, sgns_loss_and_grad, sigmoid, SgnsGrad};
pub(crate) use sgns::{axpy, dot, sigmoid_terms};
pub(crate) use rand_pcg::Pcg64Mcg as FastRng;

use crate::error::{Error, Result};
use crate::kg::{Dictionary, EntityId, SubgraphKind};
use crate::walk::WalkCorpus;

/// Which vectors a table exposes as the entity embedding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorExport {
    #[default]
    Input,
    /// Mean of input and output vectors.
    Average,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives_per_pair: usize,
    pub epochs: usize,
    pub lr_initial: f64,
    pub noise_exponent: f64,
    pub export: VectorExport,
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            dim: 200,
            window: 10,
            negatives_per_pair: 5,
            epochs: 5,
            lr_initial: 0.025,
            noise_exponent: 0.75,
            export: VectorExport::Input,
            seed: 0,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("embed.dim", "must be positive"));
        }
        if self.window == 0 {
            return Err(Error::config("embed.window", "must be at least 1"));
        }
        if self.negatives_per_pair == 0 {
            return Err(Error::config("embed.negatives_per_pair", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("embed.epochs", "must be positive"));
        }
        if !(self.lr_initial.is_finite() && self.lr_initial > 0.0) {
            return Err(Error::config("embed.lr_initial", "must be a positive real"));
        }
        if !self.noise_exponent.is_finite() {
            return Err(Error::config("embed.noise_exponent", "must be finite"));
        }
        Ok(())
    }

    /// Learning rate after `done` of `total` pairs: linear from
    /// `lr_initial` down to `lr_initial / 1000`.
    pub(crate) fn learning_rate(&self, done: u64, total: u64) -> f64 {
        let progress = if total == 0 {
            0.0
        } else {
            (done as f64 / total as f64).min(1.0)
        };
        self.lr_initial * (1.0 - (1.0 - 1e-3) * progress)
    }
}

/// Embedding space `x_p` for one relation type (or the feedback graph).
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub kind: SubgraphKind,
    pub dim: usize,
    pub export: VectorExport,
    entities: Vec<EntityId>,
    input: Vec<f64>,
    output: Vec<f64>,
}

impl EmbeddingTable {
    /// A table over `entities` (sorted and deduplicated here) with the given
    /// row-major input vectors and zero output vectors.
    pub fn from_vectors(kind: SubgraphKind, dim: usize, rows: Vec<(EntityId, Vec<f64>)>) -> Result<Self> {
        let mut rows = rows;
        rows.sort_by_key(|(e, _)| *e);
        rows.dedup_by_key(|(e, _)| *e);
        let mut input = Vec::with_capacity(rows.len() * dim);
        let mut entities = Vec::with_capacity(rows.len());
        for (e, v) in rows {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    left: dim,
                    right: v.len(),
                });
            }
            entities.push(e);
            input.extend_from_slice(&v);
        }
        let output = vec![0.0; input.len()];
        Ok(Self {
            kind,
            dim,
            export: VectorExport::Input,
            entities,
            input,
            output,
        })
    }

    pub fn entities(&self) -> &[EntityId] {
        &self.entities
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn row(&self, e: EntityId) -> Option<usize> {
        self.entities.binary_search(&e).ok()
    }

    pub fn contains(&self, e: EntityId) -> bool {
        self.row(e).is_some()
    }

    pub fn input_vector(&self, e: EntityId) -> Option<&[f64]> {
        self.row(e).map(|r| &self.input[r * self.dim..(r + 1) * self.dim])
    }

    pub fn output_vector(&self, e: EntityId) -> Option<&[f64]> {
        self.row(e).map(|r| &self.output[r * self.dim..(r + 1) * self.dim])
    }

    /// The exported embedding of `e`.
    pub fn vector(&self, e: EntityId) -> Option<Cow<'_, [f64]>> {
        let input = self.input_vector(e)?;
        match self.export {
            VectorExport::Input => Some(Cow::Borrowed(input)),
            VectorExport::Average => {
                let output = self.output_vector(e)?;
                Some(Cow::Owned(input.iter().zip(output).map(|(a, b)| 0.5 * (a + b)).collect()))
            }
        }
    }

    /// Multiplies every stored vector by `c`.
    pub fn scale(&mut self, c: f64) {
        self.input.iter_mut().chain(self.output.iter_mut()).for_each(|x| *x *= c);
    }

    pub fn all_finite(&self) -> bool {
        self.input.iter().chain(&self.output).all(|x| x.is_finite())
    }

    /// Dump format: `<count> <dim>` then `label c1 … c_dim` per entity,
    /// entities ascending by id.
    pub fn write<W: Write>(&self, dict: &Dictionary, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.len(), self.dim)?;
        for &e in &self.entities {
            out.write_all(dict.label(e.0).unwrap_or("?").as_bytes())?;
            for x in self.vector(e).expect("own entity").iter() {
                write!(out, " {x:?}")?;
            }
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    /// Reads a dump written by [`write`](Self::write). Labels may contain
    /// spaces: the last `dim` fields of each line are the components.
    pub fn read<R: BufRead>(kind: SubgraphKind, dict: &Dictionary, reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(l) => l.map_err(|e| Error::Parse(e.to_string()))?,
            None => return Err(Error::Parse("embedding dump is empty".into())),
        };
        let mut parts = header.split_whitespace();
        let (count, dim) = match (parts.next(), parts.next(), parts.next()) {
            (Some(c), Some(d), None) => (
                c.parse::<usize>().map_err(|e| Error::Parse(format!("header count: {e}")))?,
                d.parse::<usize>().map_err(|e| Error::Parse(format!("header dim: {e}")))?,
            ),
            _ => return Err(Error::Parse(format!("bad embedding header `{header}`"))),
        };
        let mut rows = Vec::with_capacity(count);
        for line in lines {
            let line = line.map_err(|e| Error::Parse(e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let mut fields: Vec<&str> = line.rsplitn(dim + 1, ' ').collect();
            if fields.len() != dim + 1 {
                return Err(Error::Parse(format!("embedding line has fewer than {dim} values")));
            }
            let label = fields.pop().unwrap();
            let mut v = Vec::with_capacity(dim);
            for f in fields.iter().rev() {
                v.push(f.parse::<f64>().map_err(|e| Error::Parse(format!("component `{f}`: {e}")))?);
            }
            let e = dict
                .id(label)
                .map(EntityId)
                .ok_or_else(|| Error::UnknownEntity(label.to_owned()))?;
            rows.push((e, v));
        }
        if rows.len() != count {
            return Err(Error::Parse(format!("header says {count} rows, found {}", rows.len())));
        }
        Self::from_vectors(kind, dim, rows)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainStats {
    pub pairs_per_epoch: u64,
    /// Mean per-pair loss of each epoch, measured before each step on a
    /// fixed subsample of pairs.
    pub epoch_losses: Vec<f64>,
}

/// Corpus rewritten over dense vocabulary indices.
pub(crate) struct Vocab {
    pub entities: Vec<EntityId>,
    pub walks: Vec<u32>,
    pub offsets: Vec<usize>,
    pub noise: Option<WeightedAliasIndex<f64>>,
    pub pairs_per_epoch: u64,
}

impl Vocab {
    pub fn build(corpus: &WalkCorpus, cfg: &EmbedConfig) -> Result<Self> {
        let mut entities: Vec<EntityId> = corpus.tokens().to_vec();
        entities.sort_unstable();
        entities.dedup();
        let max_id = entities.last().map_or(0, |e| e.index());
        let mut lookup = vec![u32::MAX; max_id + 1];
        for (i, e) in entities.iter().enumerate() {
            lookup[e.index()] = i as u32;
        }
        let walks: Vec<u32> = corpus.tokens().iter().map(|e| lookup[e.index()]).collect();
        let mut offsets = Vec::with_capacity(corpus.len() + 1);
        offsets.push(0);
        let mut pairs = 0u64;
        for w in corpus.walks() {
            offsets.push(offsets.last().unwrap() + w.len());
            pairs += pairs_in_walk(w.len(), cfg.window);
        }
        let mut counts = vec![0.0f64; entities.len()];
        for &t in &walks {
            counts[t as usize] += 1.0;
        }
        let noise = if entities.len() > 1 {
            let weights = counts.iter().map(|c| c.powf(cfg.noise_exponent)).collect();
            Some(WeightedAliasIndex::new(weights).map_err(|e| Error::Parse(format!("noise table: {e}")))?)
        } else {
            None
        };
        Ok(Self {
            entities,
            walks,
            offsets,
            noise,
            pairs_per_epoch: pairs,
        })
    }

    pub fn walk_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn walk(&self, i: usize) -> &[u32] {
        &self.walks[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Fills `out` with negatives different from `context`. Empty when the
    /// vocabulary has a single entry.
    pub fn draw_negatives<R: Rng>(&self, context: u32, k: usize, rng: &mut R, out: &mut Vec<u32>) {
        out.clear();
        let Some(noise) = &self.noise else { return };
        while out.len() < k {
            let n = noise.sample(rng) as u32;
            if n != context {
                out.push(n);
            }
        }
    }
}

fn pairs_in_walk(len: usize, window: usize) -> u64 {
    (0..len)
        .map(|i| (i.min(window) + (len - 1 - i).min(window)) as u64)
        .sum()
}

/// Input vectors i.i.d. uniform in `[−0.5/dim, 0.5/dim)`, output vectors zero.
pub(crate) fn initial_vectors(n: usize, cfg: &EmbedConfig) -> (Vec<f64>, Vec<f64>) {
    let mut rng = crate::rng::stream(&[cfg.seed, 0x696e_6974]);
    let dim = cfg.dim as f64;
    let input = (0..n * cfg.dim).map(|_| (rng.random::<f64>() - 0.5) / dim).collect();
    (input, vec![0.0; n * cfg.dim])
}

/// The table before any training step, as [`train_embeddings`] starts it.
pub fn initial_table(corpus: &WalkCorpus, cfg: &EmbedConfig) -> Result<EmbeddingTable> {
    cfg.validate()?;
    let vocab = Vocab::build(corpus, cfg)?;
    let (input, output) = initial_vectors(vocab.entities.len(), cfg);
    Ok(EmbeddingTable {
        kind: corpus.source,
        dim: cfg.dim,
        export: cfg.export,
        entities: vocab.entities,
        input,
        output,
    })
}

/// Epoch losses are estimated from every `LOSS_SAMPLE`-th pair.
pub(crate) const LOSS_SAMPLE: u64 = 8;

/// One SGD ascent step for a pair. Returns the pair loss before the step
/// when `track` is set, else 0.
#[allow(clippy::too_many_arguments)]
#[inline]
fn step_pair(
    x: &mut [f64],
    output: &mut [f64],
    dim: usize,
    context: u32,
    negatives: &[u32],
    lr: f64,
    neu1e: &mut [f64],
    track: bool,
) -> f64 {
    neu1e.fill(0.0);
    let mut loss = 0.0;
    for (target, label) in std::iter::once((context, 1.0)).chain(negatives.iter().map(|&n| (n, 0.0))) {
        let y = &mut output[target as usize * dim..(target as usize + 1) * dim];
        let f = dot(x, y);
        let sig = if track {
            let (sig, log_pos, log_neg) = sigmoid_terms(f);
            loss -= if label > 0.5 { log_pos } else { log_neg };
            sig
        } else {
            sigmoid(f)
        };
        let g = lr * (label - sig);
        axpy(g, y, neu1e);
        axpy(g, x, y);
    }
    axpy(1.0, neu1e, x);
    loss
}

pub fn train_embeddings(corpus: &WalkCorpus, cfg: &EmbedConfig) -> Result<EmbeddingTable> {
    train_embeddings_with_stats(corpus, cfg).map(|(t, _)| t)
}

/// Deterministic single-threaded training.
pub fn train_embeddings_with_stats(corpus: &WalkCorpus, cfg: &EmbedConfig) -> Result<(EmbeddingTable, TrainStats)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Empty(format!("walk corpus for {}", corpus.source)));
    }
    let vocab = Vocab::build(corpus, cfg)?;
    let dim = cfg.dim;
    let (mut input, mut output) = initial_vectors(vocab.entities.len(), cfg);
    let mut stats = TrainStats {
        pairs_per_epoch: vocab.pairs_per_epoch,
        epoch_losses: Vec::with_capacity(cfg.epochs),
    };
    if vocab.pairs_per_epoch == 0 {
        warn!("corpus for {} has no training pairs; vectors stay at initialization", corpus.source);
    } else {
        let total = vocab.pairs_per_epoch * cfg.epochs as u64;
        let mut done = 0u64;
        let mut rng = FastRng::from_rng(&mut crate::rng::stream(&[cfg.seed, 0x7367_6e73]));
        let mut neu1e = vec![0.0; dim];
        let mut negs = Vec::with_capacity(cfg.negatives_per_pair);
        for _ in 0..cfg.epochs {
            let mut epoch_loss = 0.0;
            let mut tracked = 0u64;
            for w in 0..vocab.walk_count() {
                let walk = vocab.walk(w);
                for (i, &c) in walk.iter().enumerate() {
                    let lo = i.saturating_sub(cfg.window);
                    let hi = (i + cfg.window).min(walk.len() - 1);
                    for (j, &t) in walk.iter().enumerate().take(hi + 1).skip(lo) {
                        if j == i {
                            continue;
                        }
                        vocab.draw_negatives(t, cfg.negatives_per_pair, &mut rng, &mut negs);
                        let lr = cfg.learning_rate(done, total);
                        let x = &mut input[c as usize * dim..(c as usize + 1) * dim];
                        let track = done.is_multiple_of(LOSS_SAMPLE);
                        epoch_loss += step_pair(x, &mut output, dim, t, &negs, lr, &mut neu1e, track);
                        tracked += u64::from(track);
                        done += 1;
                    }
                }
            }
            stats.epoch_losses.push(epoch_loss / tracked.max(1) as f64);
        }
    }
    let table = EmbeddingTable {
        kind: corpus.source,
        dim,
        export: cfg.export,
        entities: vocab.entities,
        input,
        output,
    };
    Ok((table, stats))
}

/// Top-`k` entities by cosine of exported vectors, excluding `e` itself;
/// ties broken by entity id ascending.
pub fn nearest_neighbors(table: &EmbeddingTable, e: EntityId, k: usize) -> Result<Vec<(EntityId, f64)>> {
    let query = table
        .vector(e)
        .ok_or_else(|| Error::UnknownEntity(e.to_string()))?
        .into_owned();
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut scored: Vec<(EntityId, f64)> = table
        .entities()
        .iter()
        .filter(|&&o| o != e)
        .map(|&o| {
            let v = table.vector(o).expect("own entity");
            (o, crate::features::cosine(&query, &v).expect("same table, same dim"))
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}
