//! End-to-end orchestration: link, subsample, embed, build, train, evaluate
//! and analyze, repeated over consecutive seeds with a manifest per run set.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{self, CooccurrenceIndex, HighLowSummary, PairStats};
use crate::ehr_ingest::{self, EhrDataset, Split, SplitRatios, SplitUnit};
use crate::error::{Error, Result};
use crate::hypergraph::{self, Hypergraph, NodeFeatures};
use crate::kg_embed::{self, EmbedTrainConfig, EmbeddingTable};
use crate::kg_store::{self, EntityId, KnowledgeGraph, Neighborhood};
use crate::linker::{
    self, Adjudicator, ArgmaxCosine, AttributeName, EmbeddingProvider, FileProvider, HashedNgramProvider,
    LinkOptions, LinkTable, ReplayAdjudicator,
};
use crate::metrics::MetricsReport;
use crate::model::{self, ModelConfig, ModelParams, TrainConfig, TrainOutput};
use crate::util;

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Tab-separated `head<TAB>relation<TAB>tail` triples.
    pub kg: PathBuf,
    /// Visit records, one JSON object per line.
    pub ehr: PathBuf,
    /// Optional `visit_id,l1,...` labels overriding those in the visit file.
    pub labels: Option<PathBuf>,
    /// Language-model vectors for attribute and entity names.
    pub lm_vectors: Option<PathBuf>,
    /// Tab-separated `attribute<TAB>entity` synonym pairs.
    pub synonyms: Option<PathBuf>,
    /// Recorded adjudicator decisions, `attribute,chosen_entity`.
    pub decisions: Option<PathBuf>,
    /// Precomputed KG embeddings; training is skipped when given.
    pub kg_embeddings: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjudicatorMode {
    #[default]
    ArgmaxCosine,
    Replay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkerConfig {
    pub lc: usize,
    pub adjudicator: AdjudicatorMode,
    pub exact_match: bool,
    /// Width of the built-in hashed n-gram vectors used without `lm_vectors`.
    pub hashed_dim: usize,
}

impl Default for LinkerConfig {
    fn default() -> Self {
        Self {
            lc: 10,
            adjudicator: AdjudicatorMode::ArgmaxCosine,
            exact_match: true,
            hashed_dim: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KgConfig {
    pub k: usize,
    pub neighborhood: Neighborhood,
}

impl Default for KgConfig {
    fn default() -> Self {
        Self {
            k: 800,
            neighborhood: Neighborhood::OneHop,
        }
    }
}

/// Optional fusion of KG embeddings with external per-entity matrices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub matrices: Vec<PathBuf>,
    /// Output width after PCA; defaults to the KG embedding width.
    pub dims: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub layers: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub final_dim: usize,
    pub residual: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            layers: 3,
            hidden_dim: 48,
            heads: 4,
            final_dim: 48,
            residual: false,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, input_dim: usize, tasks: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden_dim: self.hidden_dim,
            heads: self.heads,
            layers: self.layers,
            final_dim: self.final_dim,
            tasks,
            residual: self.residual,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub ratios: SplitRatios,
    pub unit: SplitUnit,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Permute hyperedge memberships while keeping sizes and degrees.
    pub shuffle_hyperedges: bool,
    /// Replace KG-derived node features with random ones.
    pub random_node_init: bool,
    /// Randomly reassign name vectors among names before linking.
    pub embedding_shuffle: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub enabled: bool,
    pub bins: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { enabled: true, bins: 40 }
    }
}

/// Everything a pipeline run needs, loadable from a sectioned TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub repeats: usize,
    pub paths: PathsConfig,
    pub linker: LinkerConfig,
    pub kg: KgConfig,
    pub embed: EmbedTrainConfig,
    pub fusion: FusionConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub ablation: Ablation,
    pub analysis: AnalysisConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            repeats: 1,
            paths: PathsConfig::default(),
            linker: LinkerConfig::default(),
            kg: KgConfig::default(),
            embed: EmbedTrainConfig::default(),
            fusion: FusionConfig::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            split: SplitConfig::default(),
            ablation: Ablation::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&util::read_to_string(path)?)?;
        // Relative paths in a config file are relative to that file.
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        fix(&mut paths.kg);
        fix(&mut paths.ehr);
        fix(&mut paths.output);
        for p in [
            &mut paths.labels,
            &mut paths.lm_vectors,
            &mut paths.synonyms,
            &mut paths.decisions,
            &mut paths.kg_embeddings,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        for p in &mut self.fusion.matrices {
            fix(p);
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be positive".into()));
        }
        if self.paths.kg.as_os_str().is_empty() || self.paths.ehr.as_os_str().is_empty() {
            return Err(Error::Config("paths.kg and paths.ehr are required".into()));
        }
        if self.paths.output.as_os_str().is_empty() {
            return Err(Error::Config("paths.output is required".into()));
        }
        if self.linker.adjudicator == AdjudicatorMode::Replay && self.paths.decisions.is_none() {
            return Err(Error::Config("replay adjudication needs paths.decisions".into()));
        }
        self.model.model_config(1, 1).validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_toml()?.as_bytes()))
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_checksum(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Loaded inputs shared by all repeats.
pub struct Inputs {
    pub kg: KnowledgeGraph,
    pub dataset: EhrDataset,
    pub lm_vectors: Option<FileProvider>,
    pub synonyms: HashMap<String, String>,
    pub decisions: Option<ReplayAdjudicator>,
    pub kg_embeddings: Option<EmbeddingTable>,
    pub fusion: Vec<(Vec<String>, Array2<f64>)>,
}

impl Inputs {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let p = &cfg.paths;
        let kg = kg_store::load_triples(&p.kg).map_err(|e| e.in_stage("load"))?;
        let mut dataset = ehr_ingest::load_ehr(&p.ehr).map_err(|e| e.in_stage("load"))?;
        if let Some(labels) = &p.labels {
            dataset = dataset.with_labels_csv(labels).map_err(|e| e.in_stage("load"))?;
        }
        let lm_vectors = p.lm_vectors.as_deref().map(FileProvider::load).transpose().map_err(|e| e.in_stage("load"))?;
        let synonyms = match &p.synonyms {
            Some(s) => linker::load_synonyms(s).map_err(|e| e.in_stage("load"))?,
            None => HashMap::new(),
        };
        let decisions = p.decisions.as_deref().map(ReplayAdjudicator::load).transpose().map_err(|e| e.in_stage("load"))?;
        let kg_embeddings = p
            .kg_embeddings
            .as_deref()
            .map(|path| kg_embed::read_vectors(path).and_then(|(n, m)| EmbeddingTable::external(n, m)))
            .transpose()
            .map_err(|e| e.in_stage("load"))?;
        let fusion = cfg
            .fusion
            .matrices
            .iter()
            .map(|path| kg_embed::read_vectors(path))
            .collect::<Result<_>>()
            .map_err(|e| e.in_stage("load"))?;
        Ok(Self {
            kg,
            dataset,
            lm_vectors,
            synonyms,
            decisions,
            kg_embeddings,
            fusion,
        })
    }

    pub fn in_memory(kg: KnowledgeGraph, dataset: EhrDataset) -> Self {
        Self {
            kg,
            dataset,
            lm_vectors: None,
            synonyms: HashMap::new(),
            decisions: None,
            kg_embeddings: None,
            fusion: Vec::new(),
        }
    }
}

/// Links the dataset's attribute vocabulary onto KG entity names.
pub fn link_stage(inputs: &Inputs, cfg: &RunConfig, seed: u64) -> Result<LinkTable> {
    let attrs: Vec<AttributeName> = inputs.dataset.attribute_vocab().iter().map(AttributeName::new).collect();
    let kg_names = inputs.kg.entity_names();
    let hashed = HashedNgramProvider::new(cfg.linker.hashed_dim);
    let base: &dyn EmbeddingProvider = match &inputs.lm_vectors {
        Some(p) => p,
        None => &hashed,
    };
    let mut exact_match = cfg.linker.exact_match;
    let shuffled;
    let provider: &dyn EmbeddingProvider = if cfg.ablation.embedding_shuffle {
        // Exact matching would bypass the vectors entirely, so the ablation disables it.
        exact_match = false;
        let names: Vec<String> = attrs.iter().map(|a| a.raw.clone()).chain(kg_names.iter().cloned()).collect();
        let rows = names
            .iter()
            .map(|n| base.embed(n).ok_or_else(|| Error::MissingVector(n.clone())))
            .collect::<Result<Vec<_>>>()?;
        shuffled = FileProvider::from_rows(names, rows, base.dim()).shuffled(seed);
        &shuffled
    } else {
        base
    };
    let adjudicator: &dyn Adjudicator = match cfg.linker.adjudicator {
        AdjudicatorMode::ArgmaxCosine => &ArgmaxCosine,
        AdjudicatorMode::Replay => inputs
            .decisions
            .as_ref()
            .ok_or_else(|| Error::Config("replay adjudication needs recorded decisions".into()))?,
    };
    let opts = LinkOptions {
        lc: cfg.linker.lc,
        exact_match,
        synonyms: inputs.synonyms.clone(),
    };
    linker::link_attributes(&attrs, kg_names, provider, adjudicator, &opts)
}

/// Entities that some attribute links to.
pub fn anchors(kg: &KnowledgeGraph, links: &LinkTable) -> HashSet<EntityId> {
    links.links().iter().filter_map(|l| kg.entity_id(&l.entity_name)).collect()
}

/// KG embeddings for the subsampled graph, optionally fused with external matrices.
pub fn embed_stage(sub: &KnowledgeGraph, inputs: &Inputs, cfg: &RunConfig, seed: u64) -> Result<EmbeddingTable> {
    let table = match &inputs.kg_embeddings {
        Some(t) => t.clone(),
        None => {
            let ecfg = EmbedTrainConfig {
                seed,
                ..cfg.embed.clone()
            };
            kg_embed::train_embeddings(sub, &ecfg)?
        }
    };
    if inputs.fusion.is_empty() {
        return Ok(table);
    }
    fuse_embeddings(&table, &inputs.fusion, cfg.fusion.dims)
}

/// Concatenates per-entity external matrices onto the KG embeddings (rows
/// matched by name) and reduces the result with PCA.
pub fn fuse_embeddings(
    table: &EmbeddingTable,
    external: &[(Vec<String>, Array2<f64>)],
    dims: Option<usize>,
) -> Result<EmbeddingTable> {
    let names = table.entity_names().to_vec();
    let mut blocks = vec![table.entities().clone()];
    for (fnames, m) in external {
        let index: HashMap<&str, usize> = fnames.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut block = Array2::zeros((names.len(), m.ncols()));
        for (r, n) in names.iter().enumerate() {
            let i = index.get(n.as_str()).ok_or_else(|| Error::MissingVector(n.clone()))?;
            block.row_mut(r).assign(&m.row(*i));
        }
        blocks.push(block);
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let fused = kg_embed::concat_columns(&views)?;
    let dims = dims.unwrap_or(table.dim()).min(names.len()).min(fused.ncols());
    EmbeddingTable::external(names, kg_embed::pca_reduce(&fused, dims)?)
}

/// Visit labels as a float matrix aligned with hyperedges.
pub fn label_matrix(ds: &EhrDataset, hg: &Hypergraph) -> Result<Array2<f64>> {
    let by_id: HashMap<&str, &[u8]> = ds.visits().iter().map(|v| (v.visit_id.as_str(), v.labels.as_slice())).collect();
    let mut y = Array2::zeros((hg.num_edges(), ds.task_count()));
    for (e, id) in hg.edge_ids().iter().enumerate() {
        let labels = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Dataset(format!("hyperedge `{id}` has no visit")))?;
        for (t, &l) in labels.iter().enumerate() {
            y[(e, t)] = f64::from(l);
        }
    }
    Ok(y)
}

/// Re-expresses a visit-index split in hyperedge indices.
pub fn edge_split(ds: &EhrDataset, hg: &Hypergraph, split: &Split) -> Result<Split> {
    let edge_of: HashMap<&str, usize> = hg.edge_ids().iter().enumerate().map(|(e, id)| (id.as_str(), e)).collect();
    let map = |rows: &[usize]| {
        rows.iter()
            .map(|&v| {
                let id = ds.visits()[v].visit_id.as_str();
                edge_of
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::Dataset(format!("visit `{id}` has no hyperedge")))
            })
            .collect::<Result<Vec<_>>>()
    };
    Ok(Split {
        train: map(&split.train)?,
        val: map(&split.val)?,
        test: map(&split.test)?,
    })
}

#[derive(Clone, Debug)]
pub struct AnalysisOutput {
    pub stats: Vec<PairStats>,
    pub deltas: Vec<f64>,
    pub summary: HighLowSummary,
}

/// Similarity deltas and co-occurrence classes for every node pair.
pub fn analyze(
    ds: &EhrDataset,
    links: &LinkTable,
    node_names: &[String],
    before: &Array2<f64>,
    after: &Array2<f64>,
) -> Result<AnalysisOutput> {
    let n = node_names.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let deltas = analysis::similarity_delta(before, after, &pairs)?;
    let index = CooccurrenceIndex::new(ds, links);
    let entity = |v: usize| {
        links
            .entity_of(&node_names[v])
            .ok_or_else(|| Error::Unlinked(node_names[v].clone()))
    };
    let stats = pairs
        .iter()
        .map(|&(a, b)| Ok(index.stats(entity(a)?, entity(b)?)))
        .collect::<Result<Vec<_>>>()?;
    let summary = analysis::high_low_study(&stats, &deltas)?;
    Ok(AnalysisOutput { stats, deltas, summary })
}

/// Outcome of one seeded repeat.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub seed: u64,
    pub dir: PathBuf,
    pub links: LinkTable,
    pub train: TrainOutput,
    pub analysis: Option<AnalysisOutput>,
}

impl RunResult {
    pub fn metrics(&self) -> &MetricsReport {
        &self.train.test_metrics
    }
}

#[derive(Serialize)]
struct RunMetrics<'a> {
    seed: u64,
    best_epoch: usize,
    best_val_auroc: Option<f64>,
    #[serde(flatten)]
    test: &'a MetricsReport,
}

fn write_predictions(path: &Path, hg: &Hypergraph, split: &Split, probs: &Array2<f64>) -> Result<()> {
    let folds = split.fold_of(hg.num_edges());
    let mut w = csv::Writer::from_writer(util::create_writer(path)?);
    let mut header = vec!["visit_id".to_string(), "fold".to_string()];
    header.extend((0..probs.ncols()).map(|t| format!("p{t}")));
    w.write_record(&header)?;
    for (e, id) in hg.edge_ids().iter().enumerate() {
        let mut rec = vec![id.clone(), folds[e].map_or("none", |f| f.as_str()).to_string()];
        rec.extend(probs.row(e).iter().map(|p| p.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One seeded repeat of every stage. Artifacts go to `dir`.
pub fn run_once(inputs: &Inputs, cfg: &RunConfig, seed: u64, dir: &Path) -> Result<RunResult> {
    let links = link_stage(inputs, cfg, seed).map_err(|e| e.in_stage("link"))?;
    links.write_csv(&dir.join("links.csv")).map_err(|e| e.in_stage("link"))?;

    let sub = kg_store::subsample_kg(&inputs.kg, &anchors(&inputs.kg, &links), cfg.kg.k, cfg.kg.neighborhood)
        .map_err(|e| e.in_stage("subsample"))?;
    sub.write_triples(&dir.join("subgraph.tsv")).map_err(|e| e.in_stage("subsample"))?;

    let table = embed_stage(&sub, inputs, cfg, seed).map_err(|e| e.in_stage("embed"))?;
    table.write(&dir.join("kg_embeddings.tsv")).map_err(|e| e.in_stage("embed"))?;

    let (train, analysis) = model_stages(&inputs.dataset, &links, &table, cfg, seed, dir)?;
    Ok(RunResult {
        seed,
        dir: dir.to_path_buf(),
        links,
        train,
        analysis,
    })
}

/// Build, train, evaluate and analyze from linked attributes and KG embeddings.
pub fn model_stages(
    ds: &EhrDataset,
    links: &LinkTable,
    table: &EmbeddingTable,
    cfg: &RunConfig,
    seed: u64,
    dir: &Path,
) -> Result<(TrainOutput, Option<AnalysisOutput>)> {
    let build = || -> Result<(Hypergraph, NodeFeatures)> {
        let mut hg = hypergraph::build_hypergraph(ds, links)?;
        if cfg.ablation.shuffle_hyperedges {
            hg = hypergraph::shuffle_hyperedges(&hg, seed);
        }
        let x0 = if cfg.ablation.random_node_init {
            hypergraph::random_node_features(&hg, table.dim(), seed)
        } else {
            hypergraph::init_node_features(&hg, table, links)?
        };
        hg.write_jsonl(&dir.join("hypergraph.jsonl"))?;
        Ok((hg, x0))
    };
    let (hg, x0) = build().map_err(|e| e.in_stage("build"))?;

    let trained = (|| -> Result<(Split, TrainOutput)> {
        let split = ehr_ingest::split_dataset(ds, cfg.split.ratios, seed, cfg.split.unit)?;
        split.write_csv(ds, &dir.join("split.csv"))?;
        let split = edge_split(ds, &hg, &split)?;
        let labels = label_matrix(ds, &hg)?;
        let mcfg = cfg.model.model_config(x0.dim(), ds.task_count());
        let params = ModelParams::init(&mcfg, seed)?;
        let tcfg = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let out = model::train(&hg, x0.matrix.view(), labels.view(), &split, params, &tcfg)?;
        model::write_history(&dir.join("history.csv"), &out.history)?;
        Ok((split, out))
    })()
    .map_err(|e| e.in_stage("train"))?;
    let (split, out) = trained;

    (|| -> Result<()> {
        let metrics = RunMetrics {
            seed,
            best_epoch: out.best_epoch,
            best_val_auroc: out.best_val_auroc,
            test: &out.test_metrics,
        };
        util::write_string(&dir.join("metrics.json"), &serde_json::to_string_pretty(&metrics)?)?;
        model::save_checkpoint(&dir.join("checkpoint.json"), &out.best_params, seed, out.best_epoch)?;
        write_predictions(&dir.join("predictions.csv"), &hg, &split, &out.probabilities)?;
        kg_embed::write_vectors(&dir.join("node_features.tsv"), hg.node_names(), &x0.matrix)?;
        kg_embed::write_vectors(&dir.join("node_embeddings.tsv"), hg.node_names(), &out.node_embeddings)
    })()
    .map_err(|e| e.in_stage("eval"))?;

    let analysis = if cfg.analysis.enabled {
        let a = (|| -> Result<AnalysisOutput> {
            let a = analyze(ds, links, hg.node_names(), &x0.matrix, &out.node_embeddings)?;
            analysis::write_pair_csv(&dir.join("pairs.csv"), &a.stats, &a.deltas)?;
            analysis::write_histogram_csv(&dir.join("delta_histogram.csv"), &a.stats, &a.deltas, cfg.analysis.bins)?;
            util::write_string(&dir.join("similarity.json"), &serde_json::to_string_pretty(&a.summary)?)?;
            Ok(a)
        })()
        .map_err(|e| e.in_stage("analyze"))?;
        Some(a)
    } else {
        None
    };

    Ok((out, analysis))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Population standard deviation across repeats.
    pub std: f64,
    pub runs: Vec<f64>,
}

impl MetricSummary {
    pub fn of(runs: Vec<f64>) -> Self {
        let n = runs.len() as f64;
        let mean = runs.iter().sum::<f64>() / n;
        let var = runs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            runs,
        }
    }
}

pub fn summarize(results: &[RunResult]) -> BTreeMap<String, MetricSummary> {
    let pick = |f: fn(&MetricsReport) -> f64| MetricSummary::of(results.iter().map(|r| f(r.metrics())).collect());
    let mut out = BTreeMap::new();
    out.insert("accuracy".to_string(), pick(|m| m.accuracy));
    out.insert("auroc".to_string(), pick(|m| m.auroc));
    out.insert("aucpr".to_string(), pick(|m| m.aucpr));
    out.insert("macro_f1".to_string(), pick(|m| m.macro_f1));
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Input path → SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
}

fn input_files(cfg: &RunConfig) -> Vec<&Path> {
    let p = &cfg.paths;
    let mut files: Vec<&Path> = vec![&p.kg, &p.ehr];
    files.extend(
        [&p.labels, &p.lm_vectors, &p.synonyms, &p.decisions, &p.kg_embeddings]
            .into_iter()
            .flatten()
            .map(PathBuf::as_path),
    );
    files.extend(cfg.fusion.matrices.iter().map(PathBuf::as_path));
    files
}

pub fn manifest(cfg: &RunConfig) -> Result<Manifest> {
    let mut inputs = BTreeMap::new();
    for f in input_files(cfg) {
        inputs.insert(f.display().to_string(), file_checksum(f)?);
    }
    Ok(Manifest {
        version: VERSION.to_string(),
        config_hash: cfg.hash()?,
        seeds: (0..cfg.repeats as u64).map(|i| cfg.seed + i).collect(),
        inputs,
    })
}

/// Runs every repeat and writes per-run artifacts, `summary.json` and `manifest.json`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    let out = &cfg.paths.output;
    let manifest = manifest(cfg).map_err(|e| e.in_stage("load"))?;
    util::write_string(&out.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)?;
    util::write_string(&out.join("config.toml"), &cfg.to_toml()?)?;
    let inputs = Inputs::load(cfg)?;
    let mut results = Vec::with_capacity(cfg.repeats);
    for (i, &seed) in manifest.seeds.iter().enumerate() {
        log::info!("run {}/{} with seed {seed}", i + 1, cfg.repeats);
        let r = run_once(&inputs, cfg, seed, &out.join(format!("run_{i}")))?;
        log::info!("run {i}: test macro-AUROC {:.4}", r.metrics().auroc);
        results.push(r);
    }
    util::write_string(&out.join("summary.json"), &serde_json::to_string_pretty(&summarize(&results))?)?;
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_settings() {
        let c = RunConfig::default();
        assert_eq!((c.model.layers, c.model.hidden_dim, c.model.heads, c.model.final_dim), (3, 48, 4, 48));
        assert_eq!((c.train.weight_decay, c.train.epochs, c.train.learning_rate), (1e-3, 1000, 1e-3));
        assert_eq!((c.linker.lc, c.kg.k, c.embed.dim), (10, 800, 128));
    }

    #[test]
    fn toml_round_trip_and_partial_sections() {
        let c = RunConfig::from_toml(
            "seed = 3\nrepeats = 2\n[paths]\nkg = \"kg.tsv\"\nehr = \"ehr.jsonl\"\noutput = \"out\"\n[model]\nheads = 2\n[ablation]\nshuffle_hyperedges = true\n",
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.model.heads, 2);
        assert_eq!(c.model.hidden_dim, 48);
        assert!(c.ablation.shuffle_hyperedges);
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash().unwrap(), c.hash().unwrap());
        assert!(RunConfig::from_toml("seed = \"x\"").is_err());
    }

    #[test]
    fn validation_catches_bad_settings() {
        let mut c = RunConfig::default();
        assert!(c.validate().is_err());
        c.paths.kg = "a".into();
        c.paths.ehr = "b".into();
        c.paths.output = "o".into();
        c.validate().unwrap();
        c.model.heads = 5;
        assert!(c.validate().is_err());
        c.model.heads = 4;
        c.repeats = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn population_std() {
        let s = MetricSummary::of(vec![1.0, 3.0]);
        assert_eq!((s.mean, s.std), (2.0, 1.0));
    }
}
