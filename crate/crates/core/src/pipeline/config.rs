use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::MfConfig;
use crate::embed::EmbedConfig;
use crate::error::{Error, Result};
use crate::eval::SplitConfig;
use crate::features::FeatureMode;
use crate::kg::BucketConfig;
use crate::ltr::LtrConfig;
use crate::rng;
use crate::synth::{self, SynthConfig};
use crate::walk::WalkConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Input triples; when unset the synth stage provides them.
    pub triples: Option<PathBuf>,
    pub interactions: Option<PathBuf>,
    pub work_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    /// Forces single-threaded, reproducible embedding training.
    pub deterministic: bool,
    /// Merge feedback edges into every relation subgraph.
    pub hybrid: bool,
    /// Write walk corpora to disk in cmd_all.
    pub dump_walks: bool,
    pub feature_mode: FeatureMode,
    pub ablation: bool,
    pub buckets: BucketConfig,
    pub walk: WalkConfig,
    pub embed: EmbedConfig,
    pub ltr: LtrConfig,
    pub mf: MfConfig,
    pub split: SplitConfig,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: Paths {
                work_dir: PathBuf::from("kgrec-work"),
                ..Default::default()
            },
            seed: 0,
            threads: 0,
            deterministic: false,
            hybrid: true,
            dump_walks: false,
            feature_mode: FeatureMode::UserVector,
            ablation: false,
            buckets: BucketConfig::new(synth::numeric_relations(&synth::vehicle_schema()), 10),
            walk: WalkConfig::default(),
            embed: EmbedConfig::default(),
            ltr: LtrConfig::default(),
            mf: MfConfig::default(),
            split: SplitConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Walk and embedding sizes small enough for the synthetic dataset to
    /// run end to end in seconds.
    pub fn small() -> Self {
        let mut cfg = Self::default();
        cfg.walk.walks_per_node = 10;
        cfg.walk.walk_length = 40;
        cfg.embed.dim = 32;
        cfg.embed.window = 5;
        cfg.embed.epochs = 2;
        cfg
    }

    /// `small` sizes over pure relation subgraphs with profile-average
    /// features. In hybrid mode a user's vector is trained on the very
    /// interactions the ranker learns from, so held-out items never reach
    /// the feature range of training positives.
    pub fn bench() -> Self {
        let mut cfg = Self::small();
        cfg.hybrid = false;
        cfg.feature_mode = FeatureMode::ProfileAverage;
        cfg
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Sets the field at a dotted path such as `ltr.num_trees`. The value
    /// is read as JSON when it parses, otherwise as a string.
    pub fn set(&mut self, dotted: &str, raw: &str) -> Result<()> {
        let mut doc = serde_json::to_value(&*self)?;
        let mut at = &mut doc;
        for part in dotted.split('.') {
            at = at
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| Error::config(dotted, "no such setting"))?;
        }
        let value = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        *at = value;
        *self = serde_json::from_value(doc).map_err(|e| Error::config(dotted, e.to_string()))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.buckets.validate()?;
        self.walk.validate()?;
        self.embed.validate()?;
        self.ltr.validate()?;
        self.mf.validate()?;
        self.split.validate()?;
        if self.paths.triples.is_none() || self.paths.interactions.is_none() {
            self.synth.validate()?;
        }
        if self.paths.triples.is_some() != self.paths.interactions.is_some() {
            return Err(Error::config(
                "paths.interactions",
                "triples and interactions must be given together",
            ));
        }
        Ok(())
    }

    /// Module configs with seeds mixed from the global seed and each
    /// module's own seed field.
    pub fn effective(&self) -> Self {
        let mix = |tag: u64, own: u64| rng::derive_seed(&[self.seed, tag, own]);
        let mut c = self.clone();
        c.walk.seed = mix(1, self.walk.seed);
        c.embed.seed = mix(2, self.embed.seed);
        c.ltr.seed = mix(3, self.ltr.seed);
        c.mf.seed = mix(4, self.mf.seed);
        c.split.seed = mix(5, self.split.seed);
        c.synth.seed = mix(6, self.synth.seed);
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_overrides() {
        let mut c = PipelineConfig::default();
        c.set("ltr.num_trees", "7").unwrap();
        c.set("synth.dominant_relation", "Transmission type").unwrap();
        c.set("feature_mode", "profile_average").unwrap();
        assert_eq!(c.ltr.num_trees, 7);
        assert_eq!(c.synth.dominant_relation.as_deref(), Some("Transmission type"));
        assert_eq!(c.feature_mode, FeatureMode::ProfileAverage);
        let err = c.set("ltr.nonsense", "1").unwrap_err().to_string();
        assert!(err.contains("ltr.nonsense"));
        let err = c.set("walk.walk_length", "\"long\"").unwrap_err().to_string();
        assert!(err.contains("walk.walk_length"));
    }

    #[test]
    fn validation_names_the_field() {
        let mut c = PipelineConfig::default();
        c.set("embed.dim", "0").unwrap();
        assert!(c.validate().unwrap_err().to_string().contains("embed.dim"));
    }

    #[test]
    fn json_round_trip_and_partial_documents() {
        let c = PipelineConfig::small();
        assert_eq!(PipelineConfig::from_json(&c.to_json()).unwrap(), c);
        let p = PipelineConfig::from_json(r#"{"seed": 4, "ltr": {"num_trees": 3}}"#).unwrap();
        assert_eq!(p.seed, 4);
        assert_eq!(p.ltr.num_trees, 3);
        assert_eq!(p.ltr.max_leaves, 10);
    }

    #[test]
    fn effective_seeds_differ_per_module() {
        let e = PipelineConfig::default().effective();
        assert_ne!(e.walk.seed, e.embed.seed);
        let e2 = PipelineConfig { seed: 1, ..Default::default() }.effective();
        assert_ne!(e.walk.seed, e2.walk.seed);
    }
}
