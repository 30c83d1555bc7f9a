//! Reference rankers: popularity, random, and pairwise matrix factorization
//! trained with the BPR or the soft-margin (hinge) objective.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embed::sigmoid;
use crate::error::{Error, Result};
use crate::kg::{Dictionary, EntityId, InteractionStore};
use crate::rank::Ranker;
use crate::rng;

/// Scores every item by its number of train positives.
#[derive(Clone, Debug, Default)]
pub struct MostPopular {
    counts: HashMap<EntityId, u32>,
}

impl MostPopular {
    pub fn count(&self, item: EntityId) -> u32 {
        self.counts.get(&item).copied().unwrap_or(0)
    }
}

pub fn most_popular(interactions: &InteractionStore) -> MostPopular {
    let mut counts = HashMap::new();
    for r in interactions.interactions() {
        if r.label == 1 && r.split.is_train_visible() {
            *counts.entry(r.item).or_insert(0) += 1;
        }
    }
    MostPopular { counts }
}

impl Ranker for MostPopular {
    fn name(&self) -> &str {
        "MostPopular"
    }

    fn score_items(&self, _user: EntityId, items: &[EntityId]) -> Vec<f64> {
        items.iter().map(|&i| self.count(i) as f64).collect()
    }
}

/// Uniform scores that are a pure function of (seed, user, item).
#[derive(Clone, Copy, Debug)]
pub struct RandomRanker {
    pub seed: u64,
}

impl Ranker for RandomRanker {
    fn name(&self) -> &str {
        "Random"
    }

    fn score_items(&self, user: EntityId, items: &[EntityId]) -> Vec<f64> {
        items
            .iter()
            .map(|&i| (rng::derive_seed(&[self.seed, user.0 as u64, i.0 as u64]) >> 11) as f64 / (1u64 << 53) as f64)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfConfig {
    pub factors: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for MfConfig {
    fn default() -> Self {
        Self {
            factors: 32,
            learning_rate: 0.05,
            regularization: 0.0025,
            epochs: 30,
            seed: 0,
        }
    }
}

impl MfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factors == 0 {
            return Err(Error::config("mf.factors", "must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("mf.learning_rate", "must be a positive real"));
        }
        if !(self.regularization.is_finite() && self.regularization >= 0.0) {
            return Err(Error::config("mf.regularization", "must be a non-negative real"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairLoss {
    Bpr,
    SoftMargin,
}

impl PairLoss {
    pub fn name(self) -> &'static str {
        match self {
            PairLoss::Bpr => "BPRMF",
            PairLoss::SoftMargin => "SoftMarginRankingMF",
        }
    }

    /// Loss at score difference `delta = x̂_ui − x̂_uj`.
    pub fn loss(self, delta: f64) -> f64 {
        match self {
            PairLoss::Bpr => -crate::embed::log_sigmoid(delta),
            PairLoss::SoftMargin => (1.0 - delta).max(0.0),
        }
    }

    /// Negative derivative of the loss with respect to `delta`.
    pub fn step(self, delta: f64) -> f64 {
        match self {
            PairLoss::Bpr => sigmoid(-delta),
            PairLoss::SoftMargin => {
                if delta < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MfModel {
    pub name: String,
    pub factors: usize,
    users: Vec<EntityId>,
    items: Vec<EntityId>,
    user_factors: Vec<f64>,
    item_factors: Vec<f64>,
    item_bias: Vec<f64>,
}

impl MfModel {
    fn user_row(&self, u: EntityId) -> Option<&[f64]> {
        let k = self.users.binary_search(&u).ok()?;
        Some(&self.user_factors[k * self.factors..(k + 1) * self.factors])
    }

    fn item_index(&self, i: EntityId) -> Option<usize> {
        self.items.binary_search(&i).ok()
    }

    pub fn users(&self) -> &[EntityId] {
        &self.users
    }

    pub fn items(&self) -> &[EntityId] {
        &self.items
    }

    pub fn item_bias(&self, i: EntityId) -> Option<f64> {
        self.item_index(i).map(|k| self.item_bias[k])
    }

    /// `user_factors(u)·item_factors(i) + item_bias(i)`; unknown users score
    /// by bias alone, unknown items score zero.
    pub fn predict(&self, u: EntityId, i: EntityId) -> f64 {
        let Some(k) = self.item_index(i) else { return 0.0 };
        let q = &self.item_factors[k * self.factors..(k + 1) * self.factors];
        let dot = self.user_row(u).map_or(0.0, |p| p.iter().zip(q).map(|(a, b)| a * b).sum());
        dot + self.item_bias[k]
    }

    pub fn all_finite(&self) -> bool {
        self.user_factors
            .iter()
            .chain(&self.item_factors)
            .chain(&self.item_bias)
            .all(|x| x.is_finite())
    }

    /// `count factors` header, then one line per user and per item:
    /// `label f1 … ff bias`. Users carry a zero bias column.
    pub fn write<W: Write>(&self, dict: &Dictionary, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.users.len() + self.items.len(), self.factors)?;
        let f = self.factors;
        let rows = self
            .users
            .iter()
            .enumerate()
            .map(|(k, &u)| (u, &self.user_factors[k * f..(k + 1) * f], 0.0))
            .chain(
                self.items
                    .iter()
                    .enumerate()
                    .map(|(k, &i)| (i, &self.item_factors[k * f..(k + 1) * f], self.item_bias[k])),
            );
        for (e, v, b) in rows {
            write!(out, "{}", dict.label(e.0).unwrap_or("?"))?;
            for x in v {
                write!(out, " {x:?}")?;
            }
            writeln!(out, " {b:?}")?;
        }
        Ok(())
    }

    /// Reads a dump, using `interactions` to tell users from items.
    pub fn read<R: BufRead>(name: &str, dict: &Dictionary, interactions: &InteractionStore, reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty model dump".into()))?
            .map_err(|e| Error::Parse(e.to_string()))?;
        let mut h = header.split_whitespace().map(str::parse::<usize>);
        let (Some(Ok(count)), Some(Ok(factors))) = (h.next(), h.next()) else {
            return Err(Error::Parse(format!("bad model header {header:?}")));
        };
        let mut model = MfModel {
            name: name.to_string(),
            factors,
            users: Vec::new(),
            items: Vec::new(),
            user_factors: Vec::new(),
            item_factors: Vec::new(),
            item_bias: Vec::new(),
        };
        let mut seen = 0;
        for line in lines {
            let line = line.map_err(|e| Error::Parse(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.rsplitn(factors + 2, ' ');
            let mut nums: Vec<f64> = Vec::with_capacity(factors + 1);
            for _ in 0..=factors {
                let tok = parts.next().ok_or_else(|| Error::Parse(format!("short model line {line:?}")))?;
                nums.push(tok.parse().map_err(|_| Error::Parse(format!("bad number {tok:?}")))?);
            }
            nums.reverse();
            let label = parts.next().ok_or_else(|| Error::Parse(format!("short model line {line:?}")))?;
            let e = dict.id(label).map(EntityId).ok_or_else(|| Error::UnknownEntity(label.to_string()))?;
            let bias = nums.pop().unwrap();
            if interactions.is_user(e) {
                model.users.push(e);
                model.user_factors.extend(nums);
            } else {
                model.items.push(e);
                model.item_factors.extend(nums);
                model.item_bias.push(bias);
            }
            seen += 1;
        }
        if seen != count {
            return Err(Error::Parse(format!("model header says {count} rows, found {seen}")));
        }
        if !model.users.is_sorted() || !model.items.is_sorted() {
            return Err(Error::Parse("model rows out of id order".into()));
        }
        Ok(model)
    }
}

impl Ranker for MfModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn score_items(&self, user: EntityId, items: &[EntityId]) -> Vec<f64> {
        items.iter().map(|&i| self.predict(user, i)).collect()
    }
}

/// Per-epoch mean loss over a fixed sample of held-aside triples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MfTrace {
    pub validation_losses: Vec<f64>,
}

struct Triples {
    /// (user index, item index) for every sampleable positive.
    positives: Vec<(u32, u32)>,
    /// Per user index, its sorted positive item indices.
    seen: Vec<Vec<u32>>,
    item_count: u32,
}

impl Triples {
    fn build(store: &InteractionStore, users: &[EntityId], items: &[EntityId]) -> Self {
        let mut seen = vec![Vec::new(); users.len()];
        let mut positives = Vec::new();
        for r in store.interactions() {
            if r.label != 1 || !r.split.is_train_visible() {
                continue;
            }
            let (Ok(u), Ok(i)) = (users.binary_search(&r.user), items.binary_search(&r.item)) else {
                continue;
            };
            seen[u].push(i as u32);
        }
        for (u, s) in seen.iter_mut().enumerate() {
            s.sort_unstable();
            s.dedup();
            if s.len() >= items.len() {
                warn!("user {}: positives cover every item, no negative to sample; skipped", users[u]);
                continue;
            }
            positives.extend(s.iter().map(|&i| (u as u32, i)));
        }
        Self {
            positives,
            seen,
            item_count: items.len() as u32,
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> (usize, usize, usize) {
        let (u, i) = self.positives[rng.random_range(0..self.positives.len())];
        let seen = &self.seen[u as usize];
        loop {
            let j = rng.random_range(0..self.item_count);
            if seen.binary_search(&j).is_err() {
                return (u as usize, i as usize, j as usize);
            }
        }
    }
}

fn train_mf(store: &InteractionStore, cfg: &MfConfig, loss: PairLoss) -> Result<(MfModel, MfTrace)> {
    cfg.validate()?;
    let users: Vec<EntityId> = store.users().collect();
    let items: Vec<EntityId> = store.items().collect();
    let triples = Triples::build(store, &users, &items);
    if triples.positives.is_empty() {
        return Err(Error::Empty("train positives with a sampleable negative".into()));
    }
    let f = cfg.factors;
    let tag = match loss {
        PairLoss::Bpr => 0x0062_7072,
        PairLoss::SoftMargin => 0x0073_6d72,
    };
    let mut rng = rng::stream(&[cfg.seed, tag]);
    let normal = Normal::new(0.0, 0.1).expect("valid normal");
    let mut model = MfModel {
        name: loss.name().to_string(),
        factors: f,
        user_factors: (0..users.len() * f).map(|_| normal.sample(&mut rng)).collect(),
        item_factors: (0..items.len() * f).map(|_| normal.sample(&mut rng)).collect(),
        item_bias: vec![0.0; items.len()],
        users,
        items,
    };

    let mut val_rng = rng::stream(&[cfg.seed, tag, 0x76616c]);
    let validation: Vec<_> = (0..1000).map(|_| triples.draw(&mut val_rng)).collect();
    let val_loss = |m: &MfModel| {
        validation
            .iter()
            .map(|&(u, i, j)| {
                let p = &m.user_factors[u * f..(u + 1) * f];
                let xi: f64 = p.iter().zip(&m.item_factors[i * f..(i + 1) * f]).map(|(a, b)| a * b).sum();
                let xj: f64 = p.iter().zip(&m.item_factors[j * f..(j + 1) * f]).map(|(a, b)| a * b).sum();
                loss.loss(xi + m.item_bias[i] - xj - m.item_bias[j])
            })
            .sum::<f64>()
            / validation.len() as f64
    };

    let lr = cfg.learning_rate;
    let reg = 2.0 * cfg.regularization;
    let mut trace = MfTrace::default();
    let mut p_old = vec![0.0; f];
    for _ in 0..cfg.epochs {
        for _ in 0..triples.positives.len() {
            let (u, i, j) = triples.draw(&mut rng);
            let (pu, qi, qj) = (u * f, i * f, j * f);
            let mut delta = model.item_bias[i] - model.item_bias[j];
            for k in 0..f {
                delta += model.user_factors[pu + k] * (model.item_factors[qi + k] - model.item_factors[qj + k]);
            }
            let g = loss.step(delta);
            if loss == PairLoss::SoftMargin && g == 0.0 {
                continue;
            }
            p_old.copy_from_slice(&model.user_factors[pu..pu + f]);
            for (k, &pk) in p_old.iter().enumerate() {
                let diff = model.item_factors[qi + k] - model.item_factors[qj + k];
                model.user_factors[pu + k] += lr * (g * diff - reg * pk);
                model.item_factors[qi + k] += lr * (g * pk - reg * model.item_factors[qi + k]);
                model.item_factors[qj + k] += lr * (-g * pk - reg * model.item_factors[qj + k]);
            }
            model.item_bias[i] += lr * (g - reg * model.item_bias[i]);
            model.item_bias[j] += lr * (-g - reg * model.item_bias[j]);
        }
        trace.validation_losses.push(val_loss(&model));
    }
    Ok((model, trace))
}

/// Stochastic gradient ascent on `ln σ(x̂_ui − x̂_uj) − reg·‖θ‖²` over
/// uniformly drawn (user, positive, negative) triples, `|train|` draws per
/// epoch.
pub fn train_bprmf(interactions: &InteractionStore, cfg: &MfConfig) -> Result<MfModel> {
    train_mf(interactions, cfg, PairLoss::Bpr).map(|(m, _)| m)
}

/// As [`train_bprmf`] with the hinge `max(0, 1 − (x̂_ui − x̂_uj))`; triples
/// that already satisfy the margin take no step.
pub fn train_softmargin_mf(interactions: &InteractionStore, cfg: &MfConfig) -> Result<MfModel> {
    train_mf(interactions, cfg, PairLoss::SoftMargin).map(|(m, _)| m)
}

pub fn train_mf_traced(interactions: &InteractionStore, cfg: &MfConfig, loss: PairLoss) -> Result<(MfModel, MfTrace)> {
    train_mf(interactions, cfg, loss)
}
