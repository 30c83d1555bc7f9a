//! User–item relatedness features: one cosine similarity per embedding
//! space, in canonical relation order, followed by the feedback space.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::kg::{Dictionary, EntityId, InteractionStore};

/// `v·w / (‖v‖‖w‖)`, or `0.0` when either norm is zero. Clamped to `[−1, 1]`.
pub fn cosine(v: &[f64], w: &[f64]) -> Result<f64> {
    if v.len() != w.len() {
        return Err(Error::DimensionMismatch {
            left: v.len(),
            right: w.len(),
        });
    }
    let (mut vw, mut vv, mut ww) = (0.0, 0.0, 0.0);
    for (a, b) in v.iter().zip(w) {
        vw += a * b;
        vv += a * a;
        ww += b * b;
    }
    if vv == 0.0 || ww == 0.0 {
        return Ok(0.0);
    }
    Ok((vw / (vv.sqrt() * ww.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// `cos(x_p(u), x_p(i))`.
    #[default]
    UserVector,
    /// Mean over the user's train positives `i′` of `cos(x_p(i′), x_p(i))`.
    ProfileAverage,
}

/// Relatedness of user `u` and item `i` in one embedding space.
///
/// Returns the `0.0` sentinel when `u` has no vector (user-vector mode) or
/// when no profile item has a vector (profile mode).
pub fn relatedness(
    table: &EmbeddingTable,
    user: EntityId,
    item: EntityId,
    mode: FeatureMode,
    profile: &[EntityId],
) -> Result<f64> {
    let iv = table
        .vector(item)
        .ok_or_else(|| Error::UnknownEntity(item.to_string()))?;
    match mode {
        FeatureMode::UserVector => match table.vector(user) {
            Some(uv) => cosine(&uv, &iv),
            None => Ok(0.0),
        },
        FeatureMode::ProfileAverage => {
            let mut sum = 0.0;
            let mut n = 0usize;
            for &p in profile {
                if let Some(pv) = table.vector(p) {
                    sum += cosine(&pv, &iv)?;
                    n += 1;
                }
            }
            Ok(if n == 0 { 0.0 } else { sum / n as f64 })
        }
    }
}

/// Embedding tables in canonical feature order; the last entry is the
/// feedback space.
#[derive(Clone, Debug)]
pub struct FeatureTables {
    pub names: Vec<String>,
    pub tables: Vec<EmbeddingTable>,
}

impl FeatureTables {
    pub fn new(names: Vec<String>, tables: Vec<EmbeddingTable>) -> Result<Self> {
        if names.len() != tables.len() {
            return Err(Error::DimensionMismatch {
                left: names.len(),
                right: tables.len(),
            });
        }
        Ok(Self { names, tables })
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub user: EntityId,
    pub item: EntityId,
    pub scores: Vec<f64>,
    pub label: Option<u8>,
}

/// Feature vectors of `user` against each candidate. An item with no
/// vector in some space (e.g. never interacted with, for the feedback
/// space) scores `0.0` there.
pub fn build_features(
    user: EntityId,
    candidates: &[EntityId],
    tables: &FeatureTables,
    interactions: &InteractionStore,
    mode: FeatureMode,
) -> Result<Vec<FeatureVector>> {
    let profile = match mode {
        FeatureMode::ProfileAverage => interactions.train_positives(user),
        FeatureMode::UserVector => Vec::new(),
    };
    let user_vecs: Vec<Option<Vec<f64>>> = tables
        .tables
        .iter()
        .map(|t| t.vector(user).map(|v| v.into_owned()))
        .collect();
    candidates
        .iter()
        .map(|&item| {
            let scores = tables
                .tables
                .iter()
                .zip(&user_vecs)
                .map(|(t, uv)| {
                    if !t.contains(item) {
                        return Ok(0.0);
                    }
                    match (mode, uv) {
                        (FeatureMode::UserVector, Some(uv)) => cosine(uv, &t.vector(item).unwrap()),
                        (FeatureMode::UserVector, None) => Ok(0.0),
                        (FeatureMode::ProfileAverage, _) => relatedness(t, user, item, mode, &profile),
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            let label = interactions
                .get(user, item)
                .filter(|r| r.split.is_train_visible())
                .map(|r| r.label);
            Ok(FeatureVector {
                user,
                item,
                scores,
                label,
            })
        })
        .collect()
}

/// File-safe form of a feature or relation name.
pub fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

/// Feature rows keyed by `(user, item)`, with the canonical names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    rows: HashMap<(EntityId, EntityId), Vec<f64>>,
    labels: HashMap<(EntityId, EntityId), u8>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>) -> Self {
        Self {
            names,
            ..Default::default()
        }
    }

    pub fn insert(&mut self, fv: FeatureVector) {
        if let Some(l) = fv.label {
            self.labels.insert((fv.user, fv.item), l);
        }
        self.rows.insert((fv.user, fv.item), fv.scores);
    }

    pub fn feature_count(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, user: EntityId, item: EntityId) -> Option<&[f64]> {
        self.rows.get(&(user, item)).map(Vec::as_slice)
    }

    pub fn label(&self, user: EntityId, item: EntityId) -> Option<u8> {
        self.labels.get(&(user, item)).copied()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// CSV with header `user,item,label,feat_<name>…`; rows ordered by user
    /// id then item id. Unknown labels are left empty.
    pub fn write_csv<W: Write>(&self, dict: &Dictionary, mut out: W) -> std::io::Result<()> {
        write!(out, "user,item,label")?;
        for n in &self.names {
            write!(out, ",feat_{}", sanitize(n))?;
        }
        writeln!(out)?;
        let mut keys: Vec<&(EntityId, EntityId)> = self.rows.keys().collect();
        keys.sort_unstable();
        for key in keys {
            let (u, i) = *key;
            write!(out, "{},{},", dict.label(u.0).unwrap_or("?"), dict.label(i.0).unwrap_or("?"))?;
            if let Some(l) = self.label(u, i) {
                write!(out, "{l}")?;
            }
            for x in &self.rows[key] {
                write!(out, ",{x:?}")?;
            }
            writeln!(out)?;
        }
        out.flush()
    }

    /// Reads a CSV written by [`write_csv`](Self::write_csv). `names` is the
    /// expected canonical order; a header mismatch is an error.
    pub fn read_csv<R: BufRead>(dict: &Dictionary, names: &[String], reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("feature file is empty".into()))?
            .map_err(|e| Error::Parse(e.to_string()))?;
        let expected = std::iter::once("user,item,label".to_owned())
            .chain(names.iter().map(|n| format!("feat_{}", sanitize(n))))
            .collect::<Vec<_>>()
            .join(",");
        if header != expected {
            return Err(Error::Parse(format!(
                "feature header `{header}` does not match canonical order `{expected}`"
            )));
        }
        let mut m = FeatureMatrix::new(names.to_vec());
        for line in lines {
            let line = line.map_err(|e| Error::Parse(e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 + names.len() {
                return Err(Error::Parse(format!("feature row has {} fields", fields.len())));
            }
            let ent = |s: &str| dict.id(s).map(EntityId).ok_or_else(|| Error::UnknownEntity(s.to_owned()));
            let user = ent(fields[0])?;
            let item = ent(fields[1])?;
            let label = match fields[2] {
                "" => None,
                "0" => Some(0),
                "1" => Some(1),
                other => return Err(Error::Parse(format!("bad label `{other}`"))),
            };
            let scores = fields[3..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| Error::Parse(format!("feature `{f}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            m.insert(FeatureVector {
                user,
                item,
                scores,
                label,
            });
        }
        Ok(m)
    }
}

/// A column subset of a [`FeatureMatrix`]; what a ranker actually sees.
#[derive(Clone, Debug)]
pub struct FeatureView<'a> {
    matrix: &'a FeatureMatrix,
    columns: Vec<usize>,
}

impl<'a> FeatureView<'a> {
    pub fn all(matrix: &'a FeatureMatrix) -> Self {
        Self {
            matrix,
            columns: (0..matrix.feature_count()).collect(),
        }
    }

    pub fn select(matrix: &'a FeatureMatrix, columns: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = columns.iter().find(|&&c| c >= matrix.feature_count()) {
            return Err(Error::DimensionMismatch {
                left: matrix.feature_count(),
                right: bad + 1,
            });
        }
        Ok(Self { matrix, columns })
    }

    pub fn feature_count(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|&c| self.matrix.names[c].clone()).collect()
    }

    pub fn row(&self, user: EntityId, item: EntityId) -> Option<Vec<f64>> {
        let full = self.matrix.row(user, item)?;
        Some(self.columns.iter().map(|&c| full[c]).collect())
    }
}
