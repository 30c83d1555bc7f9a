//! Lock-free concurrent training. Threads share the table and update it
//! without synchronization; concurrent writes to the same component may be
//! lost. Results are not reproducible across runs.

use std::sync::atomic::{AtomicU64, Ordering::Relaxed};

use rand::SeedableRng;

use super::{
    axpy, dot, initial_vectors, sigmoid, sigmoid_terms, EmbedConfig, EmbeddingTable, FastRng, TrainStats, Vocab, LOSS_SAMPLE,
};
use crate::error::{Error, Result};
use crate::walk::WalkCorpus;

struct SharedVectors {
    data: Vec<AtomicU64>,
    dim: usize,
}

impl SharedVectors {
    fn new(values: Vec<f64>, dim: usize) -> Self {
        Self {
            data: values.into_iter().map(|x| AtomicU64::new(x.to_bits())).collect(),
            dim,
        }
    }

    fn load(&self, row: u32, out: &mut [f64]) {
        let start = row as usize * self.dim;
        for (o, a) in out.iter_mut().zip(&self.data[start..start + self.dim]) {
            *o = f64::from_bits(a.load(Relaxed));
        }
    }

    fn store(&self, row: u32, values: &[f64]) {
        let start = row as usize * self.dim;
        for (a, v) in self.data[start..start + self.dim].iter().zip(values) {
            a.store(v.to_bits(), Relaxed);
        }
    }

    fn into_vec(self) -> Vec<f64> {
        self.data.into_iter().map(|a| f64::from_bits(a.into_inner())).collect()
    }
}

/// Trains with `threads` workers, each sweeping a contiguous share of the
/// walks for every epoch. Falls back to the deterministic trainer when
/// `threads <= 1`.
pub fn train_embeddings_concurrent(
    corpus: &WalkCorpus,
    cfg: &EmbedConfig,
    threads: usize,
) -> Result<(EmbeddingTable, TrainStats)> {
    if threads <= 1 {
        return super::train_embeddings_with_stats(corpus, cfg);
    }
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Empty(format!("walk corpus for {}", corpus.source)));
    }
    let vocab = Vocab::build(corpus, cfg)?;
    let dim = cfg.dim;
    let (input, output) = initial_vectors(vocab.entities.len(), cfg);
    let input = SharedVectors::new(input, dim);
    let output = SharedVectors::new(output, dim);
    let total = vocab.pairs_per_epoch * cfg.epochs as u64;
    let done = AtomicU64::new(0);
    let walks = vocab.walk_count();
    let chunk = walks.div_ceil(threads);

    let per_thread: Vec<Vec<(f64, u64)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let (vocab, input, output, done) = (&vocab, &input, &output, &done);
                s.spawn(move || {
                    let mut rng = FastRng::from_rng(&mut crate::rng::stream(&[cfg.seed, 0x686f_6777, t as u64]));
                    let mut step = 0u64;
                    let mut x = vec![0.0; dim];
                    let mut y = vec![0.0; dim];
                    let mut neu1e = vec![0.0; dim];
                    let mut negs = Vec::with_capacity(cfg.negatives_per_pair);
                    let mut losses = Vec::with_capacity(cfg.epochs);
                    let range = (t * chunk).min(walks)..((t + 1) * chunk).min(walks);
                    for _ in 0..cfg.epochs {
                        let mut epoch_loss = 0.0;
                        let mut tracked = 0u64;
                        for w in range.clone() {
                            let walk = vocab.walk(w);
                            for (i, &c) in walk.iter().enumerate() {
                                let lo = i.saturating_sub(cfg.window);
                                let hi = (i + cfg.window).min(walk.len() - 1);
                                for (j, &ctx) in walk.iter().enumerate().take(hi + 1).skip(lo) {
                                    if j == i {
                                        continue;
                                    }
                                    vocab.draw_negatives(ctx, cfg.negatives_per_pair, &mut rng, &mut negs);
                                    let lr = cfg.learning_rate(done.fetch_add(1, Relaxed), total);
                                    input.load(c, &mut x);
                                    neu1e.fill(0.0);
                                    let track = step.is_multiple_of(LOSS_SAMPLE);
                                    step += 1;
                                    tracked += u64::from(track);
                                    let targets = std::iter::once((ctx, 1.0)).chain(negs.iter().map(|&n| (n, 0.0)));
                                    for (target, label) in targets {
                                        output.load(target, &mut y);
                                        let f = dot(&x, &y);
                                        let sig = if track {
                                            let (sig, log_pos, log_neg) = sigmoid_terms(f);
                                            epoch_loss -= if label > 0.5 { log_pos } else { log_neg };
                                            sig
                                        } else {
                                            sigmoid(f)
                                        };
                                        let g = lr * (label - sig);
                                        axpy(g, &y, &mut neu1e);
                                        axpy(g, &x, &mut y);
                                        output.store(target, &y);
                                    }
                                    axpy(1.0, &neu1e, &mut x);
                                    input.store(c, &x);
                                }
                            }
                        }
                        losses.push((epoch_loss, tracked));
                    }
                    losses
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    });

    let epoch_losses = (0..cfg.epochs)
        .map(|ep| {
            let loss: f64 = per_thread.iter().map(|l| l[ep].0).sum();
            let tracked: u64 = per_thread.iter().map(|l| l[ep].1).sum();
            loss / tracked.max(1) as f64
        })
        .collect();
    let stats = TrainStats {
        pairs_per_epoch: vocab.pairs_per_epoch,
        epoch_losses,
    };
    let table = EmbeddingTable {
        kind: corpus.source,
        dim,
        export: cfg.export,
        entities: vocab.entities,
        input: input.into_vec(),
        output: output.into_vec(),
    };
    Ok((table, stats))
}
