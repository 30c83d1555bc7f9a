use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::PipelineConfig;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Ingest,
    Walk,
    Embed,
    Features,
    Train,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Synth,
        Stage::Ingest,
        Stage::Walk,
        Stage::Embed,
        Stage::Features,
        Stage::Train,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Walk => "walk",
            Stage::Embed => "embed",
            Stage::Features => "features",
            Stage::Train => "train",
            Stage::Eval => "eval",
        }
    }

    /// Hash of every config section this stage's output depends on,
    /// including those of upstream stages.
    pub fn config_hash(self, cfg: &PipelineConfig) -> String {
        let c = cfg.effective();
        let mut sections: Vec<(&str, serde_json::Value)> = Vec::new();
        let synthesized = c.paths.triples.is_none();
        if synthesized {
            sections.push(("synth", j(&c.synth)));
        }
        if self >= Stage::Ingest {
            sections.push(("triples", j(&c.paths.triples)));
            sections.push(("interactions", j(&c.paths.interactions)));
            sections.push(("buckets", j(&c.buckets)));
            sections.push(("split", j(&c.split)));
        }
        if self >= Stage::Walk {
            sections.push(("walk", j(&c.walk)));
            sections.push(("hybrid", j(&c.hybrid)));
        }
        if self >= Stage::Embed {
            sections.push(("embed", j(&c.embed)));
        }
        if self >= Stage::Features {
            sections.push(("feature_mode", j(&c.feature_mode)));
        }
        if self >= Stage::Train {
            sections.push(("ltr", j(&c.ltr)));
            sections.push(("mf", j(&c.mf)));
        }
        let mut h = Sha256::new();
        for (name, value) in sections {
            h.update(name.as_bytes());
            h.update([0]);
            h.update(value.to_string().as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }
}

fn j<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    pub seed: u64,
    /// Paths relative to the work dir.
    pub artifacts: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn load(work_dir: &Path) -> Result<Self> {
        let path = work_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, work_dir: &Path) -> Result<()> {
        let path = work_dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn get(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.get(stage.name())
    }

    /// Records `stage` and forgets every later stage, whose outputs were
    /// built from the artifacts just replaced.
    pub fn record(&mut self, stage: Stage, record: StageRecord) {
        for later in Stage::ALL.iter().filter(|&&s| s > stage) {
            self.stages.remove(later.name());
        }
        self.stages.insert(stage.name().to_string(), record);
    }
}
