use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::config::PipelineConfig;
use super::manifest::{Manifest, Stage, StageRecord};
use super::StageError;
use crate::baselines::{self, MfModel};
use crate::embed::{self, EmbeddingTable};
use crate::error::Error;
use crate::eval::{self, MetricsReport};
use crate::features::{self, FeatureMatrix, FeatureTables, FeatureView};
use crate::kg::{
    self, BucketConfig, Dictionary, EntityId, InteractionStore, KnowledgeGraph, RelationSubgraph, SplitTag,
    SubgraphKind,
};
use crate::ltr::{self, LtrRanker, TreeEnsemble};
use crate::rank;
use crate::synth;
use crate::walk::{self, WalkCorpus};

type StageResult<T> = std::result::Result<T, StageError>;

const GRAPH_TRIPLES: &str = "graph/triples.tsv";
const GRAPH_INTERACTIONS: &str = "graph/interactions.tsv";
const FEATURES_CSV: &str = "features/features.csv";
const LTR_MODEL: &str = "models/lambdamart.json";
const CONTENT_MODEL: &str = "models/lambdamart_content.json";
const BPR_MODEL: &str = "models/bprmf.txt";
const SOFTMARGIN_MODEL: &str = "models/softmargin.txt";
const METRICS_JSON: &str = "reports/metrics.json";
const BASELINES_JSON: &str = "reports/baselines.json";
const METRICS_TXT: &str = "reports/metrics.txt";
pub const FEEDBACK_NAME: &str = "feedback";

/// The loaded graph stage: knowledge graph, split-tagged interactions over
/// the shared dictionary, and the canonical feature names.
pub struct Graph {
    pub kg: KnowledgeGraph,
    pub store: InteractionStore,
}

impl Graph {
    pub fn dict(&self) -> &Dictionary {
        &self.kg.entities
    }

    /// Relation labels in id order, then the feedback space.
    pub fn feature_names(&self) -> Vec<String> {
        self.kg
            .relation_ids()
            .map(|r| self.kg.relation_label(r).to_string())
            .chain(std::iter::once(FEEDBACK_NAME.to_string()))
            .collect()
    }

    pub fn spaces(&self) -> Vec<SubgraphKind> {
        self.kg
            .relation_ids()
            .map(SubgraphKind::Relation)
            .chain(std::iter::once(SubgraphKind::Feedback))
            .collect()
    }

    pub fn catalog(&self) -> Vec<EntityId> {
        self.store.items().collect()
    }

    pub fn user(&self, label: &str) -> StageResult<EntityId> {
        match self.dict().id(label).map(EntityId) {
            Some(u) if self.store.is_user(u) => Ok(u),
            _ => Err(StageError::Config(format!("unknown user `{label}`"))),
        }
    }
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub force: bool,
}

fn file_name(name: &str) -> String {
    features::sanitize(name)
}

fn create(path: &Path) -> StageResult<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn open(path: &Path) -> StageResult<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> StageError + '_ {
    move |e| Error::io(path, e).into()
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, force: bool) -> StageResult<Self> {
        cfg.validate()?;
        Ok(Self { cfg, force })
    }

    fn root(&self) -> &Path {
        &self.cfg.paths.work_dir
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root().join(rel)
    }

    fn eff(&self) -> PipelineConfig {
        self.cfg.effective()
    }

    fn synthesized(&self) -> bool {
        self.cfg.paths.triples.is_none()
    }

    /// Fails unless `stage` ran under the current config (or `--force`)
    /// and its artifacts are still on disk.
    fn require(&self, stage: Stage) -> StageResult<()> {
        let manifest = Manifest::load(self.root())?;
        let Some(rec) = manifest.get(stage) else {
            return Err(StageError::Missing {
                what: format!("{} output in {}", stage.name(), self.root().display()),
                run: stage.name(),
            });
        };
        if let Some(missing) = rec.artifacts.iter().find(|a| !self.path(a).exists()) {
            return Err(StageError::Missing {
                what: self.path(missing).display().to_string(),
                run: stage.name(),
            });
        }
        if rec.config_hash != stage.config_hash(&self.cfg) {
            if self.force {
                warn!("{} output was produced under a different config; using it anyway", stage.name());
            } else {
                return Err(StageError::Stale { stage: stage.name() });
            }
        }
        Ok(())
    }

    fn record(&self, stage: Stage, artifacts: Vec<String>) -> StageResult<()> {
        let mut manifest = Manifest::load(self.root())?;
        manifest.record(
            stage,
            StageRecord {
                config_hash: stage.config_hash(&self.cfg),
                seed: self.cfg.seed,
                artifacts,
            },
        );
        manifest.save(self.root())?;
        Ok(())
    }

    pub fn cmd_synth(&self) -> StageResult<()> {
        let data = synth::generate(&self.eff().synth)?;
        let dir = self.path("data");
        data.write_to(&dir)?;
        info!(
            "synth: {} items, {} users, {} positives",
            data.preferences.items.len(),
            data.preferences.users.len(),
            data.positives.len()
        );
        self.record(
            Stage::Synth,
            [synth::TRIPLES_FILE, synth::INTERACTIONS_FILE, synth::PREFERENCES_FILE]
                .iter()
                .map(|f| format!("data/{f}"))
                .collect(),
        )
    }

    fn inputs(&self) -> StageResult<(PathBuf, PathBuf)> {
        match (&self.cfg.paths.triples, &self.cfg.paths.interactions) {
            (Some(t), Some(i)) => {
                for p in [t, i] {
                    if !p.exists() {
                        return Err(StageError::Missing {
                            what: p.display().to_string(),
                            run: "ingest (check paths.triples / paths.interactions)",
                        });
                    }
                }
                Ok((t.clone(), i.clone()))
            }
            _ => {
                self.require(Stage::Synth)?;
                Ok((
                    self.path(&format!("data/{}", synth::TRIPLES_FILE)),
                    self.path(&format!("data/{}", synth::INTERACTIONS_FILE)),
                ))
            }
        }
    }

    /// Reads the inputs, buckets numeric tails, assigns the train/test
    /// split and writes the normalized graph.
    pub fn cmd_ingest(&self) -> StageResult<()> {
        let eff = self.eff();
        let (triples_path, interactions_path) = self.inputs()?;
        let (kg, report) = kg::ingest_triples(&triples_path, &eff.buckets)?;
        info!(
            "ingest: {} triples ({} malformed lines, {} bucketed), {} entities, {} relations",
            report.accepted,
            report.malformed,
            report.bucketed,
            kg.entities.len(),
            kg.relation_count()
        );
        let mut dict = kg.entities.clone();
        let (store, ireport) = kg::ingest_interactions(&interactions_path, &mut dict)?;
        info!(
            "ingest: {} interactions, {} users, {} items ({} skipped lines)",
            store.len(),
            store.user_count(),
            store.item_count(),
            ireport.malformed + ireport.bad_label + ireport.role_conflicts
        );
        let assigned = !store.is_empty() && store.interactions().iter().all(|r| r.split != SplitTag::Unassigned);
        let store = if assigned {
            info!("ingest: keeping split tags from the interactions file");
            store
        } else {
            eval::split(&store, &eff.split)?
        };

        let tp = self.path(GRAPH_TRIPLES);
        let mut out = create(&tp)?;
        kg.export_triples(&mut out).map_err(io_err(&tp))?;
        out.flush().map_err(io_err(&tp))?;
        let ip = self.path(GRAPH_INTERACTIONS);
        let mut out = create(&ip)?;
        store.write_tagged(&dict, &mut out).map_err(io_err(&ip))?;
        out.flush().map_err(io_err(&ip))?;
        self.record(Stage::Ingest, vec![GRAPH_TRIPLES.into(), GRAPH_INTERACTIONS.into()])
    }

    /// Loads the normalized graph written by the ingest stage.
    pub fn load_graph(&self) -> StageResult<Graph> {
        self.require(Stage::Ingest)?;
        let tp = self.path(GRAPH_TRIPLES);
        let (raw, malformed, _) = kg::read_triples(open(&tp)?).map_err(io_err(&tp))?;
        if malformed > 0 {
            return Err(Error::Parse(format!("{}: {malformed} malformed lines", tp.display())).into());
        }
        let (kg, _) = KnowledgeGraph::from_raw(raw, &BucketConfig::new(Vec::<String>::new(), 1))?;
        let mut dict = kg.entities.clone();
        let ip = self.path(GRAPH_INTERACTIONS);
        let (store, _) = kg::read_interactions(open(&ip)?, &mut dict).map_err(io_err(&ip))?;
        let mut store = store?;
        let mut kg = kg;
        kg.entities = dict;
        let catalog: Vec<EntityId> = kg.heads().into_iter().filter(|&h| !store.is_user(h)).collect();
        store.add_catalog_items(catalog);
        Ok(Graph { kg, store })
    }

    fn subgraph(&self, g: &Graph, kind: SubgraphKind) -> StageResult<RelationSubgraph> {
        Ok(match kind {
            SubgraphKind::Relation(r) => kg::extract_subgraph(&g.kg, r, self.cfg.hybrid.then_some(&g.store))?,
            SubgraphKind::Feedback => kg::feedback_subgraph(&g.store),
        })
    }

    fn space_file(&self, g: &Graph, kind: SubgraphKind, dir: &str, ext: &str) -> String {
        let name = match kind {
            SubgraphKind::Relation(r) => file_name(g.kg.relation_label(r)),
            SubgraphKind::Feedback => FEEDBACK_NAME.to_string(),
        };
        format!("{dir}/{name}.{ext}")
    }

    /// Writes one walk corpus per embedding space.
    pub fn cmd_walk(&self) -> StageResult<()> {
        let g = self.load_graph()?;
        let eff = self.eff();
        let mut artifacts = Vec::new();
        for kind in g.spaces() {
            let sub = self.subgraph(&g, kind)?;
            let corpus = walk::generate_walks(&sub, &eff.walk)?;
            let rel = self.space_file(&g, kind, "walks", "walks");
            let p = self.path(&rel);
            let mut out = create(&p)?;
            corpus.write(g.dict(), &mut out).map_err(io_err(&p))?;
            info!("walk: {} walks, {} tokens -> {rel}", corpus.len(), corpus.token_count());
            artifacts.push(rel);
        }
        self.record(Stage::Walk, artifacts)
    }

    fn corpus(&self, g: &Graph, kind: SubgraphKind, dumped: bool) -> StageResult<WalkCorpus> {
        if dumped {
            let p = self.path(&self.space_file(g, kind, "walks", "walks"));
            return Ok(WalkCorpus::read(kind, g.dict(), open(&p)?)?);
        }
        let sub = self.subgraph(g, kind)?;
        Ok(walk::generate_walks(&sub, &self.eff().walk)?)
    }

    fn threads(&self) -> usize {
        if self.cfg.deterministic {
            return 1;
        }
        match self.cfg.threads {
            0 => std::thread::available_parallelism().map_or(1, usize::from),
            n => n,
        }
    }

    /// Trains one embedding table per space, reusing dumped walks when the
    /// walk stage ran under the current config.
    pub fn cmd_embed(&self) -> StageResult<()> {
        let g = self.load_graph()?;
        let eff = self.eff();
        let dumped = Manifest::load(self.root())?
            .get(Stage::Walk)
            .is_some_and(|r| r.config_hash == Stage::Walk.config_hash(&self.cfg))
            && self.require(Stage::Walk).is_ok();
        let threads = self.threads();
        let mut artifacts = Vec::new();
        for kind in g.spaces() {
            let corpus = self.corpus(&g, kind, dumped)?;
            let table = if corpus.is_empty() {
                warn!("embed: space {kind} has no nodes; writing an empty table");
                EmbeddingTable::from_vectors(kind, eff.embed.dim, Vec::new())?
            } else {
                let (table, stats) = embed::train_embeddings_concurrent(&corpus, &eff.embed, threads)?;
                info!(
                    "embed: space {kind}, {} entities, {} pairs/epoch, losses {:?}",
                    table.len(),
                    stats.pairs_per_epoch,
                    stats.epoch_losses
                );
                table
            };
            let rel = self.space_file(&g, kind, "embeddings", "emb");
            let p = self.path(&rel);
            let mut out = create(&p)?;
            table.write(g.dict(), &mut out).map_err(io_err(&p))?;
            out.flush().map_err(io_err(&p))?;
            artifacts.push(rel);
        }
        self.record(Stage::Embed, artifacts)
    }

    pub fn load_tables(&self, g: &Graph) -> StageResult<FeatureTables> {
        self.require(Stage::Embed)?;
        let mut tables = Vec::new();
        for kind in g.spaces() {
            let p = self.path(&self.space_file(g, kind, "embeddings", "emb"));
            tables.push(EmbeddingTable::read(kind, g.dict(), open(&p)?)?);
        }
        Ok(FeatureTables::new(g.feature_names(), tables)?)
    }

    /// Feature rows for every (user, catalog item) pair.
    pub fn cmd_features(&self) -> StageResult<()> {
        let g = self.load_graph()?;
        let tables = self.load_tables(&g)?;
        let catalog = g.catalog();
        let users: Vec<EntityId> = g.store.users().collect();
        let mode = self.cfg.feature_mode;
        let build = |&u: &EntityId| features::build_features(u, &catalog, &tables, &g.store, mode);
        #[cfg(feature = "parallel")]
        let rows: Vec<_> = users.par_iter().map(build).collect();
        #[cfg(not(feature = "parallel"))]
        let rows: Vec<_> = users.iter().map(build).collect();
        let mut m = FeatureMatrix::new(g.feature_names());
        for r in rows {
            for fv in r? {
                m.insert(fv);
            }
        }
        let p = self.path(FEATURES_CSV);
        let mut out = create(&p)?;
        m.write_csv(g.dict(), &mut out).map_err(io_err(&p))?;
        info!("features: {} rows x {} features", m.len(), m.feature_count());
        self.record(Stage::Features, vec![FEATURES_CSV.into()])
    }

    pub fn load_features(&self, g: &Graph) -> StageResult<FeatureMatrix> {
        self.require(Stage::Features)?;
        let p = self.path(FEATURES_CSV);
        Ok(FeatureMatrix::read_csv(g.dict(), &g.feature_names(), open(&p)?)?)
    }

    fn train_on(&self, g: &Graph, view: &FeatureView<'_>) -> StageResult<TreeEnsemble> {
        let eff = self.eff();
        let groups = ltr::assemble_training_groups(&g.store, view, &eff.ltr)?;
        let (ensemble, trace) = ltr::train_ranker_traced(&groups, &eff.ltr)?;
        info!(
            "train: {} groups, {:?} -> NDCG@{} {:.4} after {} trees",
            groups.len(),
            view.names(),
            eff.ltr.truncation_k,
            trace.ndcg.last().copied().unwrap_or(0.0),
            ensemble.trees.len()
        );
        Ok(ensemble.with_feature_names(view.names()))
    }

    fn write_mf(&self, g: &Graph, model: &MfModel, rel: &str) -> StageResult<()> {
        let p = self.path(rel);
        let mut out = create(&p)?;
        model.write(g.dict(), &mut out).map_err(io_err(&p))?;
        out.flush().map_err(io_err(&p))?;
        Ok(())
    }

    /// Trains the full-feature ranker and both factorization baselines.
    fn write_ensemble(&self, ensemble: &TreeEnsemble, rel: &str) -> StageResult<()> {
        let mut out = create(&self.path(rel))?;
        let p = self.path(rel);
        out.write_all((ensemble.to_json()? + "\n").as_bytes()).map_err(io_err(&p))?;
        out.flush().map_err(io_err(&p))
    }

    /// The content view leaves out the feedback column.
    fn content_view<'m>(&self, g: &Graph, m: &'m FeatureMatrix) -> StageResult<FeatureView<'m>> {
        Ok(FeatureView::select(m, g.kg.relation_ids().map(|r| r.index()).collect())?)
    }

    pub fn cmd_train(&self) -> StageResult<()> {
        let g = self.load_graph()?;
        let m = self.load_features(&g)?;
        self.write_ensemble(&self.train_on(&g, &FeatureView::all(&m))?, LTR_MODEL)?;
        self.write_ensemble(&self.train_on(&g, &self.content_view(&g, &m)?)?, CONTENT_MODEL)?;

        let mf = self.eff().mf;
        self.write_mf(&g, &baselines::train_bprmf(&g.store, &mf)?, BPR_MODEL)?;
        self.write_mf(&g, &baselines::train_softmargin_mf(&g.store, &mf)?, SOFTMARGIN_MODEL)?;
        self.record(
            Stage::Train,
            vec![LTR_MODEL.into(), CONTENT_MODEL.into(), BPR_MODEL.into(), SOFTMARGIN_MODEL.into()],
        )
    }

    pub fn load_model(&self) -> StageResult<TreeEnsemble> {
        self.load_ensemble(LTR_MODEL)
    }

    fn load_ensemble(&self, rel: &str) -> StageResult<TreeEnsemble> {
        self.require(Stage::Train)?;
        let p = self.path(rel);
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        Ok(TreeEnsemble::from_json(&text)?)
    }

    fn load_mf(&self, g: &Graph, name: &str, rel: &str) -> StageResult<MfModel> {
        let p = self.path(rel);
        Ok(MfModel::read(name, g.dict(), &g.store, open(&p)?)?)
    }

    /// Evaluates the full model. With `ablation`, also one single-feature
    /// model per relation type and the three baselines.
    pub fn cmd_eval(&self, ablation: bool) -> StageResult<Vec<MetricsReport>> {
        let g = self.load_graph()?;
        let m = self.load_features(&g)?;
        let ensemble = self.load_model()?;
        let full_view = FeatureView::all(&m);
        let ranker = LtrRanker::new(&ensemble, full_view)?.named("Full model");
        let mut full = eval::evaluate(&ranker, &g.store)?;
        let content_model = self.load_ensemble(CONTENT_MODEL)?;
        let ranker = LtrRanker::new(&content_model, self.content_view(&g, &m)?)?.named("Content model");
        let mut content = eval::evaluate(&ranker, &g.store)?;
        let mut reports = Vec::new();
        let mut artifacts = vec![METRICS_JSON.to_string(), METRICS_TXT.to_string()];
        let reports_dir = self.path("reports");
        fs::create_dir_all(&reports_dir).map_err(io_err(&reports_dir))?;
        if ablation {
            full.mode = "ablation".into();
            content.mode = "ablation".into();
            let mut per_feature = BTreeMap::new();
            for r in g.kg.relation_ids() {
                let name = g.kg.relation_label(r).to_string();
                let view = FeatureView::select(&m, vec![r.index()])?;
                let single = self.train_on(&g, &view)?;
                let rel = format!("models/single_{}.json", file_name(&name));
                let p = self.path(&rel);
                fs::write(&p, single.to_json()? + "\n").map_err(io_err(&p))?;
                let ranker = LtrRanker::new(&single, view)?.named(&name);
                per_feature.insert(format!("{name} Feature"), eval::evaluate(&ranker, &g.store)?.metrics);
            }
            full.per_feature = per_feature;
            let pop = baselines::most_popular(&g.store);
            let bpr = self.load_mf(&g, "BPRMF", BPR_MODEL)?;
            let sm = self.load_mf(&g, "SoftMarginRankingMF", SOFTMARGIN_MODEL)?;
            for b in [&pop as &dyn rank::Ranker, &bpr, &sm] {
                reports.push(eval::evaluate(b, &g.store)?.with_mode("baseline"));
            }
            let p = self.path(BASELINES_JSON);
            fs::write(&p, serde_json::to_string_pretty(&reports)? + "\n").map_err(io_err(&p))?;
            artifacts.push(BASELINES_JSON.into());
        }
        reports.insert(0, content);
        reports.insert(0, full);
        let p = self.path(METRICS_JSON);
        fs::write(&p, serde_json::to_string_pretty(&reports[..2])? + "\n").map_err(io_err(&p))?;
        let p = self.path(METRICS_TXT);
        fs::write(&p, eval::render_table(&reports)).map_err(io_err(&p))?;
        self.record(Stage::Eval, artifacts)?;
        Ok(reports)
    }

    /// `rank item score` lines for the top `n` unseen items of `user`.
    /// Top-`n` lines `rank item score` from the full model, or from the
    /// content model (no feedback feature) when `content` is set.
    pub fn cmd_recommend(&self, user: &str, n: usize, content: bool) -> StageResult<Vec<String>> {
        if n == 0 {
            return Err(StageError::Config("-n must be at least 1".into()));
        }
        let g = self.load_graph()?;
        let u = g.user(user)?;
        let m = self.load_features(&g)?;
        let (ensemble, view) = if content {
            (self.load_ensemble(CONTENT_MODEL)?, self.content_view(&g, &m)?)
        } else {
            (self.load_model()?, FeatureView::all(&m))
        };
        let seen = g.store.train_positives(u);
        let candidates: Vec<EntityId> = g.catalog().into_iter().filter(|i| seen.binary_search(i).is_err()).collect();
        let top = ltr::rank_topn(&ensemble, u, &candidates, &view, n)?;
        Ok(top
            .iter()
            .enumerate()
            .map(|(k, (item, score))| format!("{} {} {score:.6}", k + 1, g.dict().label(item.0).unwrap_or("?")))
            .collect())
    }

    pub fn cmd_all(&self) -> StageResult<Vec<MetricsReport>> {
        if self.synthesized() {
            self.cmd_synth()?;
        }
        self.cmd_ingest()?;
        if self.cfg.dump_walks {
            self.cmd_walk()?;
        }
        self.cmd_embed()?;
        self.cmd_features()?;
        self.cmd_train()?;
        self.cmd_eval(self.cfg.ablation)
    }
}
