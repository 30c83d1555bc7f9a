//! Planted-preference vehicle dataset.
//!
//! Every item takes one value per relation. Every user prefers one value per
//! relation. A user's positives are drawn without replacement with weight
//! `∏_r (s if item matches the preference on r else 1 − s)`, the dominant
//! relation's factor squared.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const TRIPLES_FILE: &str = "triples.tsv";
pub const INTERACTIONS_FILE: &str = "interactions.tsv";
pub const PREFERENCES_FILE: &str = "preferences.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Values {
    Categorical(Vec<String>),
    /// `bands` equal-width bands of `[low, low + bands·width)`.
    Numeric { low: u32, width: u32, bands: u32 },
}

impl Values {
    pub fn classes(&self) -> usize {
        match self {
            Values::Categorical(v) => v.len(),
            Values::Numeric { bands, .. } => *bands as usize,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationSchema {
    pub name: String,
    pub values: Values,
}

fn categorical(name: &str, values: &[&str]) -> RelationSchema {
    RelationSchema {
        name: name.into(),
        values: Values::Categorical(values.iter().map(|v| v.to_string()).collect()),
    }
}

/// The six vehicle relations.
pub fn vehicle_schema() -> Vec<RelationSchema> {
    vec![
        categorical(
            "Vehicle style",
            &["Sedan", "SUV", "Hatchback", "Coupe", "Convertible", "Wagon", "Minivan", "Pickup"],
        ),
        categorical("Fuel type", &["Petrol", "Diesel", "Hybrid", "Electric"]),
        RelationSchema {
            name: "Mileage".into(),
            values: Values::Numeric {
                low: 0,
                width: 30_000,
                bands: 5,
            },
        },
        categorical("Number of seats", &["seats_2", "seats_4", "seats_5", "seats_7"]),
        categorical("Transmission type", &["Automatic", "Manual"]),
        RelationSchema {
            name: "Vehicle price".into(),
            values: Values::Numeric {
                low: 10_000,
                width: 15_000,
                bands: 5,
            },
        },
    ]
}

/// Relations whose tails are numeric and need bucketing.
pub fn numeric_relations(schema: &[RelationSchema]) -> Vec<String> {
    schema
        .iter()
        .filter(|r| matches!(r.values, Values::Numeric { .. }))
        .map(|r| r.name.clone())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub preference_strength: f64,
    pub interactions_per_user: usize,
    pub dominant_relation: Option<String>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_users: 50,
            num_items: 500,
            preference_strength: 0.9,
            interactions_per_user: 40,
            dominant_relation: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// A strength of exactly 0.5 is accepted as the no-signal control.
    pub fn validate(&self) -> Result<()> {
        if self.num_users == 0 {
            return Err(Error::config("synth.num_users", "must be positive"));
        }
        if self.num_items == 0 {
            return Err(Error::config("synth.num_items", "must be positive"));
        }
        if self.interactions_per_user == 0 {
            return Err(Error::config("synth.interactions_per_user", "must be positive"));
        }
        if !(self.preference_strength >= 0.5 && self.preference_strength <= 1.0) {
            return Err(Error::config("synth.preference_strength", "must lie in [0.5, 1]"));
        }
        if self.interactions_per_user > self.num_items {
            return Err(Error::config(
                "synth.interactions_per_user",
                format!(
                    "{} positives per user cannot be drawn from {} items",
                    self.interactions_per_user, self.num_items
                ),
            ));
        }
        if let Some(d) = &self.dominant_relation {
            if !vehicle_schema().iter().any(|r| &r.name == d) {
                return Err(Error::config("synth.dominant_relation", format!("unknown relation {d:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub label: String,
    /// Value class index per relation, schema order.
    pub classes: Vec<usize>,
    /// The tail written for each relation.
    pub tails: Vec<String>,
}

/// Ground truth: everything needed to recompute each item's sampling
/// weight for each user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preferences {
    pub preference_strength: f64,
    pub dominant_relation: Option<String>,
    pub relations: Vec<RelationSchema>,
    /// Preferred value class per relation, schema order.
    pub users: BTreeMap<String, Vec<usize>>,
    pub items: Vec<ItemRecord>,
}

impl Preferences {
    fn exponent(&self, r: usize) -> i32 {
        if self.dominant_relation.as_deref() == Some(self.relations[r].name.as_str()) {
            2
        } else {
            1
        }
    }

    /// Unnormalized sampling weight of `item` for a user with `preferred`.
    pub fn weight(&self, preferred: &[usize], item: &ItemRecord) -> f64 {
        let s = self.preference_strength;
        (0..self.relations.len())
            .map(|r| {
                let f = if item.classes[r] == preferred[r] { s } else { 1.0 - s };
                f.powi(self.exponent(r))
            })
            .product()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub preferences: Preferences,
    /// (user label, item label) positives, user order then item order.
    pub positives: Vec<(String, String)>,
}

impl SynthData {
    pub fn triples_tsv(&self) -> String {
        let mut out = String::new();
        for item in &self.preferences.items {
            for (r, tail) in self.preferences.relations.iter().zip(&item.tails) {
                out.push_str(&format!("{}\t{}\t{}\n", item.label, r.name, tail));
            }
        }
        out
    }

    pub fn interactions_tsv(&self) -> String {
        self.positives.iter().map(|(u, i)| format!("{u}\t{i}\t1\n")).collect()
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, body: &[u8]| {
            let path = dir.join(name);
            fs::File::create(&path)
                .and_then(|mut f| f.write_all(body))
                .map_err(|e| Error::io(&path, e))
        };
        put(TRIPLES_FILE, self.triples_tsv().as_bytes())?;
        put(INTERACTIONS_FILE, self.interactions_tsv().as_bytes())?;
        let mut json = serde_json::to_string_pretty(&self.preferences)?;
        json.push('\n');
        put(PREFERENCES_FILE, json.as_bytes())
    }
}

pub fn user_label(u: usize) -> String {
    format!("user_{u}")
}

pub fn item_label(i: usize) -> String {
    format!("item_{i:04}")
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let relations = vehicle_schema();
    let mut rng = rng::stream(&[cfg.seed, 0x7379_6e74, 0]);
    let items: Vec<ItemRecord> = (0..cfg.num_items)
        .map(|i| {
            let mut classes = Vec::with_capacity(relations.len());
            let mut tails = Vec::with_capacity(relations.len());
            for r in &relations {
                let c = rng.random_range(0..r.values.classes());
                classes.push(c);
                tails.push(match &r.values {
                    Values::Categorical(v) => v[c].clone(),
                    Values::Numeric { low, width, .. } => (low + c as u32 * width + rng.random_range(0..*width)).to_string(),
                });
            }
            ItemRecord {
                label: item_label(i),
                classes,
                tails,
            }
        })
        .collect();

    let mut rng = rng::stream(&[cfg.seed, 0x7379_6e74, 1]);
    let users: BTreeMap<String, Vec<usize>> = (0..cfg.num_users)
        .map(|u| {
            let prefs = relations.iter().map(|r| rng.random_range(0..r.values.classes())).collect();
            (user_label(u), prefs)
        })
        .collect();

    let preferences = Preferences {
        preference_strength: cfg.preference_strength,
        dominant_relation: cfg.dominant_relation.clone(),
        relations,
        users,
        items,
    };

    let mut positives = Vec::with_capacity(cfg.num_users * cfg.interactions_per_user);
    for u in 0..cfg.num_users {
        let label = user_label(u);
        let preferred = &preferences.users[&label];
        let weights: Vec<f64> = preferences.items.iter().map(|it| preferences.weight(preferred, it)).collect();
        let nonzero = weights.iter().filter(|&&w| w > 0.0).count();
        if nonzero < cfg.interactions_per_user {
            return Err(Error::config(
                "synth.preference_strength",
                format!(
                    "{label} has only {nonzero} items with nonzero weight, {} positives requested; lower the strength or add items",
                    cfg.interactions_per_user
                ),
            ));
        }
        let mut r = rng::stream(&[cfg.seed, 0x7379_6e74, 2, u as u64]);
        let chosen = index::sample_weighted(&mut r, weights.len(), |k| weights[k], cfg.interactions_per_user)
            .map_err(|e| Error::Parse(format!("weighted sampling failed: {e}")))?;
        let mut chosen: Vec<usize> = chosen.into_iter().collect();
        chosen.sort_unstable();
        positives.extend(chosen.into_iter().map(|i| (label.clone(), preferences.items[i].label.clone())));
    }
    Ok(SynthData { preferences, positives })
}
