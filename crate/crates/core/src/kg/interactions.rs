use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{Dictionary, EntityId};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
    #[default]
    Unassigned,
}

impl SplitTag {
    /// Train and unassigned interactions are visible to model fitting.
    pub fn is_train_visible(self) -> bool {
        !matches!(self, SplitTag::Test)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
            SplitTag::Unassigned => "unassigned",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitTag::Train),
            "test" => Some(SplitTag::Test),
            "unassigned" => Some(SplitTag::Unassigned),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: EntityId,
    pub item: EntityId,
    pub label: u8,
    pub split: SplitTag,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionReport {
    pub lines: usize,
    pub malformed: usize,
    pub bad_label: usize,
    pub role_conflicts: usize,
    pub duplicates: usize,
}

/// The interaction log `D`: users, items and labelled user–item pairs.
///
/// Interactions are kept sorted by `(user, item)` with one entry per pair.
#[derive(Clone, Debug, Default)]
pub struct InteractionStore {
    users: BTreeSet<EntityId>,
    items: BTreeSet<EntityId>,
    interactions: Vec<Interaction>,
    by_user: BTreeMap<EntityId, Range<usize>>,
}

impl InteractionStore {
    /// Builds a store from interactions. Duplicate `(user, item)` pairs
    /// collapse to one entry holding the maximum label; the split tag of the
    /// first occurrence is kept.
    pub fn from_interactions(records: impl IntoIterator<Item = Interaction>) -> Result<Self> {
        let (store, _) = Self::build(records)?;
        Ok(store)
    }

    fn build(records: impl IntoIterator<Item = Interaction>) -> Result<(Self, usize)> {
        let mut merged: BTreeMap<(EntityId, EntityId), Interaction> = BTreeMap::new();
        let mut duplicates = 0;
        for r in records {
            if r.label > 1 {
                return Err(Error::Parse(format!("label {} outside {{0,1}}", r.label)));
            }
            merged
                .entry((r.user, r.item))
                .and_modify(|prev| {
                    duplicates += 1;
                    prev.label = prev.label.max(r.label);
                })
                .or_insert(r);
        }
        let mut store = InteractionStore::default();
        for ((u, i), r) in merged {
            store.users.insert(u);
            store.items.insert(i);
            store.interactions.push(r);
        }
        if let Some(&both) = store.users.intersection(&store.items).next() {
            return Err(Error::Parse(format!("entity {both} is both a user and an item")));
        }
        store.reindex();
        Ok((store, duplicates))
    }

    fn reindex(&mut self) {
        self.by_user.clear();
        let mut start = 0;
        while start < self.interactions.len() {
            let user = self.interactions[start].user;
            let mut end = start;
            while end < self.interactions.len() && self.interactions[end].user == user {
                end += 1;
            }
            self.by_user.insert(user, start..end);
            start = end;
        }
    }

    /// Adds catalog items that have no interactions (e.g. every item head of
    /// the knowledge graph). Entities already registered as users are ignored.
    pub fn add_catalog_items(&mut self, items: impl IntoIterator<Item = EntityId>) {
        for i in items {
            if !self.users.contains(&i) {
                self.items.insert(i);
            }
        }
    }

    pub fn users(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.users.iter().copied()
    }

    pub fn items(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.items.iter().copied()
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    pub fn is_user(&self, e: EntityId) -> bool {
        self.users.contains(&e)
    }

    pub fn is_item(&self, e: EntityId) -> bool {
        self.items.contains(&e)
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn of_user(&self, user: EntityId) -> &[Interaction] {
        self.by_user
            .get(&user)
            .map_or(&[][..], |r| &self.interactions[r.clone()])
    }

    pub fn get(&self, user: EntityId, item: EntityId) -> Option<&Interaction> {
        let list = self.of_user(user);
        list.binary_search_by_key(&item, |r| r.item)
            .ok()
            .map(|i| &list[i])
    }

    /// Positive items of `user` visible to training, ascending.
    pub fn train_positives(&self, user: EntityId) -> Vec<EntityId> {
        self.of_user(user)
            .iter()
            .filter(|r| r.label == 1 && r.split.is_train_visible())
            .map(|r| r.item)
            .collect()
    }

    pub fn test_positives(&self, user: EntityId) -> Vec<EntityId> {
        self.of_user(user)
            .iter()
            .filter(|r| r.label == 1 && r.split == SplitTag::Test)
            .map(|r| r.item)
            .collect()
    }

    /// Items `user` has any train-visible interaction with, ascending.
    pub fn train_interacted(&self, user: EntityId) -> Vec<EntityId> {
        self.of_user(user)
            .iter()
            .filter(|r| r.split.is_train_visible())
            .map(|r| r.item)
            .collect()
    }

    /// Returns a copy with split tags replaced; `tags` is aligned with
    /// [`interactions`](Self::interactions).
    pub fn with_split_tags(&self, tags: &[SplitTag]) -> Self {
        assert_eq!(tags.len(), self.interactions.len());
        let mut out = self.clone();
        for (r, &t) in out.interactions.iter_mut().zip(tags) {
            r.split = t;
        }
        out
    }

    /// Writes `user<TAB>item<TAB>label<TAB>split` lines.
    pub fn write_tagged<W: Write>(&self, dict: &Dictionary, mut out: W) -> std::io::Result<()> {
        for r in &self.interactions {
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                dict.label(r.user.0).unwrap_or("?"),
                dict.label(r.item.0).unwrap_or("?"),
                r.label,
                r.split.as_str()
            )?;
        }
        out.flush()
    }
}

/// Parses `user<TAB>item<TAB>label[<TAB>split]` lines, registering labels
/// in `entities`. Lines with a bad label or a user/item role conflict are
/// skipped with a warning.
pub fn read_interactions<R: BufRead>(
    reader: R,
    entities: &mut Dictionary,
) -> std::io::Result<(Result<InteractionStore>, InteractionReport)> {
    let mut report = InteractionReport::default();
    let mut roles: HashMap<EntityId, bool> = HashMap::new();
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        report.lines += 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if !(3..=4).contains(&fields.len()) || fields[0].is_empty() || fields[1].is_empty() {
            report.malformed += 1;
            warn!("interactions line {}: expected user, item, label", lineno + 1);
            continue;
        }
        let label = match fields[2].trim() {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                report.bad_label += 1;
                warn!("interactions line {}: label `{other}` not in {{0,1}}", lineno + 1);
                continue;
            }
        };
        let split = match fields.get(3) {
            None => SplitTag::Unassigned,
            Some(s) => match SplitTag::parse(s.trim()) {
                Some(t) => t,
                None => {
                    report.malformed += 1;
                    warn!("interactions line {}: unknown split tag `{s}`", lineno + 1);
                    continue;
                }
            },
        };
        let user = EntityId(entities.get_or_insert(fields[0]));
        let item = EntityId(entities.get_or_insert(fields[1]));
        // true = user, false = item; first role seen wins.
        let user_role = *roles.entry(user).or_insert(true);
        let item_role = *roles.entry(item).or_insert(false);
        if !user_role || item_role {
            report.role_conflicts += 1;
            warn!("interactions line {}: user/item role conflict", lineno + 1);
            continue;
        }
        records.push(Interaction {
            user,
            item,
            label,
            split,
        });
    }
    let built = InteractionStore::build(records).map(|(store, dups)| {
        report.duplicates = dups;
        store
    });
    Ok((built, report))
}

/// Loads an interactions file, sharing `entities` with the knowledge graph
/// so matching labels resolve to the same entity.
pub fn ingest_interactions(
    path: &Path,
    entities: &mut Dictionary,
) -> Result<(InteractionStore, InteractionReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (store, report) =
        read_interactions(BufReader::new(file), entities).map_err(|e| Error::io(path, e))?;
    Ok((store?, report))
}
