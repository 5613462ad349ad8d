//! `hypkg`: command-line driver for linking, embedding, hypergraph training,
//! evaluation and analysis.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hypkg_core::ehr_ingest::{self, generate_synthetic, SynthConfig};
use hypkg_core::kg_embed::{self, EmbedTrainConfig, EmbeddingKind, EmbeddingTable};
use hypkg_core::kg_store::{self, Neighborhood};
use hypkg_core::linker::LinkTable;
use hypkg_core::pipeline::{self, AdjudicatorMode, Inputs, RunConfig};
use hypkg_core::{analysis, hypergraph, metrics};
use ndarray::Array2;

#[derive(Parser, Debug)]
#[command(name = "hypkg", version, about = "Contextualize KG embeddings with visit hypergraphs")]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace)
    #[arg(long, global = true, default_value = "info")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a clustered synthetic KG and visit cohort with a ready-to-run config
    Synth(SynthArgs),
    /// Link visit attributes to KG entities
    Link(LinkArgs),
    /// Subsample the KG around linked entities and train KG embeddings
    Embed(EmbedArgs),
    /// Build the visit hypergraph and its initial node features
    Build(BuildArgs),
    /// Train the hypergraph transformer and write metrics and checkpoints
    Train(TrainArgs),
    /// Score predictions against labels
    Eval(EvalArgs),
    /// Similarity deltas and co-occurrence classes of node pairs
    Analyze(AnalyzeArgs),
    /// Run the full pipeline from a config file
    Run(RunArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    clusters: usize,
    #[arg(long, default_value_t = 200)]
    attrs_per_cluster: usize,
    #[arg(long, default_value_t = 400)]
    visits: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Inputs shared by every command that links attributes.
#[derive(Args, Debug, Clone)]
struct LinkerFlags {
    /// Candidates shown to the adjudicator per attribute
    #[arg(long, default_value_t = 10)]
    lc: usize,
    /// Language-model vectors for names (`N d` header, `name<TAB>v1,...`)
    #[arg(long)]
    lm_vectors: Option<PathBuf>,
    /// Recorded adjudicator decisions; switches to replay adjudication
    #[arg(long)]
    decisions: Option<PathBuf>,
    /// Synonym pairs `attribute<TAB>entity`
    #[arg(long)]
    synonyms: Option<PathBuf>,
    /// Skip the exact normalized-name stage
    #[arg(long)]
    no_exact_match: bool,
}

#[derive(Args, Debug)]
struct LinkArgs {
    #[arg(long)]
    kg: PathBuf,
    #[arg(long)]
    ehr: PathBuf,
    /// Output links CSV
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    linker: LinkerFlags,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelKind {
    Complex,
    Transe,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[arg(long)]
    kg: PathBuf,
    /// Links CSV; when given, the KG is subsampled around linked entities
    #[arg(long)]
    links: Option<PathBuf>,
    /// Output embedding file
    #[arg(long)]
    out: PathBuf,
    /// Neighbors kept per entity when subsampling
    #[arg(long, default_value_t = 800)]
    k: usize,
    #[arg(long, value_enum, default_value = "complex")]
    model: ModelKind,
    #[arg(long, default_value_t = 128)]
    dim: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Additional per-entity matrices to concatenate before PCA
    #[arg(long)]
    fuse: Vec<PathBuf>,
    /// Width after PCA when fusing
    #[arg(long)]
    pca_dims: Option<usize>,
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[arg(long)]
    ehr: PathBuf,
    #[arg(long)]
    links: PathBuf,
    /// Output hypergraph JSONL
    #[arg(long)]
    out: PathBuf,
    /// KG embeddings; node features are written when given
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    features_out: Option<PathBuf>,
    /// Shuffle hyperedge memberships with this seed
    #[arg(long)]
    shuffle_seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum AblationArg {
    /// Shuffled hyperedges: structure carries no visit information
    KgOnly,
    /// Random node features: no KG information
    EhrOnly,
    /// Shuffled name vectors before linking
    EmbeddingShuffle,
}

/// Settings that override the corresponding config entries.
#[derive(Args, Debug, Clone, Default)]
struct Overrides {
    /// Config file (TOML); flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    /// Add residual connections between layers
    #[arg(long)]
    residual: bool,
    #[arg(long, value_enum)]
    ablation: Vec<AblationArg>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.train.learning_rate = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.train.weight_decay = v;
        }
        if let Some(v) = self.layers {
            cfg.model.layers = v;
        }
        if let Some(v) = self.hidden_dim {
            cfg.model.hidden_dim = v;
        }
        if let Some(v) = self.heads {
            cfg.model.heads = v;
        }
        if self.residual {
            cfg.model.residual = true;
        }
        for a in &self.ablation {
            match a {
                AblationArg::KgOnly => cfg.ablation.shuffle_hyperedges = true,
                AblationArg::EhrOnly => cfg.ablation.random_node_init = true,
                AblationArg::EmbeddingShuffle => cfg.ablation.embedding_shuffle = true,
            }
        }
    }

    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        self.apply(&mut cfg);
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    ehr: PathBuf,
    #[arg(long)]
    links: PathBuf,
    /// KG embeddings of the linked entities
    #[arg(long)]
    embeddings: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Labels CSV overriding visit labels
    #[arg(long)]
    labels: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predictions CSV `visit_id,p1,...,pT` (header optional)
    #[arg(long)]
    pred: PathBuf,
    /// Labels CSV `visit_id,l1,...,lT` (header optional)
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Also write the report here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    ehr: PathBuf,
    #[arg(long)]
    links: PathBuf,
    /// Node vectors before training
    #[arg(long)]
    before: PathBuf,
    /// Node vectors after training
    #[arg(long)]
    after: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40)]
    bins: usize,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    repeats: Option<usize>,
    /// Output directory, overriding the config
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let core = err.downcast_ref::<hypkg_core::Error>();
            let record = serde_json::json!({
                "error": {
                    "message": format!("{err:#}"),
                    "stage": core.and_then(|e| e.stage()),
                }
            });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Link(a) => link(a),
        Command::Embed(a) => embed(a),
        Command::Build(a) => build(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Analyze(a) => analyze(a),
        Command::Run(a) => run(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_clusters: a.clusters,
        attrs_per_cluster: a.attrs_per_cluster,
        n_visits: a.visits,
        noise_rate: a.noise,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let data = generate_synthetic(&cfg)?;
    data.kg.write_triples(&a.out.join("kg.tsv"))?;
    data.dataset.write_jsonl(&a.out.join("ehr.jsonl"))?;
    data.dataset.write_labels_csv(&a.out.join("labels.csv"))?;
    data.truth.write_csv(&a.out.join("truth_links.csv"))?;
    let mut run = RunConfig::default();
    run.seed = a.seed;
    run.paths.kg = "kg.tsv".into();
    run.paths.ehr = "ehr.jsonl".into();
    run.paths.output = "runs".into();
    run.train.epochs = 300;
    std::fs::write(a.out.join("config.toml"), run.to_toml()?).context("writing config.toml")?;
    println!(
        "{}",
        serde_json::json!({
            "visits": data.dataset.len(),
            "attributes": data.dataset.attribute_vocab().len(),
            "entities": data.kg.num_entities(),
            "triples": data.kg.triples().len(),
        })
    );
    Ok(())
}

fn run_config_for_linking(kg: &Path, ehr: &Path, flags: &LinkerFlags) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.paths.kg = kg.to_path_buf();
    cfg.paths.ehr = ehr.to_path_buf();
    cfg.paths.lm_vectors = flags.lm_vectors.clone();
    cfg.paths.synonyms = flags.synonyms.clone();
    cfg.paths.decisions = flags.decisions.clone();
    cfg.linker.lc = flags.lc;
    cfg.linker.exact_match = !flags.no_exact_match;
    if flags.decisions.is_some() {
        cfg.linker.adjudicator = AdjudicatorMode::Replay;
    }
    cfg
}

fn link(a: LinkArgs) -> Result<()> {
    let cfg = run_config_for_linking(&a.kg, &a.ehr, &a.linker);
    let inputs = Inputs::load(&cfg)?;
    let links = pipeline::link_stage(&inputs, &cfg, cfg.seed)?;
    links.write_csv(&a.out)?;
    log::info!("linked {} attributes", links.len());
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let kg = kg_store::load_triples(&a.kg)?;
    let kg = match &a.links {
        Some(path) => {
            let links = LinkTable::read_csv(path)?;
            kg_store::subsample_kg(&kg, &pipeline::anchors(&kg, &links), a.k, Neighborhood::OneHop)?
        }
        None => kg,
    };
    let cfg = EmbedTrainConfig {
        dim: a.dim,
        epochs: a.epochs,
        learning_rate: a.lr,
        seed: a.seed,
        model: match a.model {
            ModelKind::Complex => EmbeddingKind::Complex,
            ModelKind::Transe => EmbeddingKind::Translational,
        },
        ..EmbedTrainConfig::default()
    };
    let table = kg_embed::train_embeddings(&kg, &cfg)?;
    let table = if a.fuse.is_empty() {
        table
    } else {
        let external = a.fuse.iter().map(|p| kg_embed::read_vectors(p)).collect::<Result<Vec<_>, _>>()?;
        pipeline::fuse_embeddings(&table, &external, a.pca_dims)?
    };
    table.write(&a.out)?;
    Ok(())
}

fn load_table(path: &Path) -> Result<EmbeddingTable> {
    let (names, m) = kg_embed::read_vectors(path)?;
    Ok(EmbeddingTable::external(names, m)?)
}

fn build(a: BuildArgs) -> Result<()> {
    let ds = ehr_ingest::load_ehr(&a.ehr)?;
    let links = LinkTable::read_csv(&a.links)?;
    let mut hg = hypergraph::build_hypergraph(&ds, &links)?;
    if let Some(seed) = a.shuffle_seed {
        hg = hypergraph::shuffle_hyperedges(&hg, seed);
    }
    hg.write_jsonl(&a.out)?;
    if let Some(emb) = &a.embeddings {
        let x0 = hypergraph::init_node_features(&hg, &load_table(emb)?, &links)?;
        let out = a.features_out.clone().unwrap_or_else(|| a.out.with_extension("features.tsv"));
        kg_embed::write_vectors(&out, hg.node_names(), &x0.matrix)?;
    }
    println!(
        "{}",
        serde_json::json!({"nodes": hg.num_nodes(), "edges": hg.num_edges(), "incidences": hg.incidence_count()})
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = a.overrides.load()?;
    let mut ds = ehr_ingest::load_ehr(&a.ehr)?;
    if let Some(l) = &a.labels {
        ds = ds.with_labels_csv(l)?;
    }
    let links = LinkTable::read_csv(&a.links)?;
    let table = load_table(&a.embeddings)?;
    let (out, _) = pipeline::model_stages(&ds, &links, &table, &cfg, cfg.seed, &a.out)?;
    println!("{}", out.test_metrics.to_json()?);
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let preds = ehr_ingest::read_score_csv(&a.pred)?;
    let labels = ehr_ingest::read_labels_csv(&a.labels)?;
    let tasks = preds.first().map(|(_, v)| v.len()).ok_or_else(|| anyhow!("no predictions"))?;
    let mut p = Array2::zeros((preds.len(), tasks));
    let mut y = Array2::zeros((preds.len(), tasks));
    let mut seen = HashSet::new();
    for (i, (id, scores)) in preds.iter().enumerate() {
        if !seen.insert(id) {
            bail!("duplicate prediction for `{id}`");
        }
        let l = labels.get(id).ok_or_else(|| anyhow!("no label for `{id}`"))?;
        if l.len() != tasks {
            bail!("`{id}` has {} labels but {tasks} predictions", l.len());
        }
        for t in 0..tasks {
            p[(i, t)] = scores[t];
            y[(i, t)] = f64::from(l[t]);
        }
    }
    let rows: Vec<usize> = (0..preds.len()).collect();
    let report = metrics::evaluate(p.view(), y.view(), &rows, a.threshold)?;
    let json = report.to_json()?;
    if let Some(out) = &a.out {
        std::fs::write(out, &json).with_context(|| format!("writing {}", out.display()))?;
    }
    println!("{json}");
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let ds = ehr_ingest::load_ehr(&a.ehr)?;
    let links = LinkTable::read_csv(&a.links)?;
    let (names, before) = kg_embed::read_vectors(&a.before)?;
    let (after_names, after) = kg_embed::read_vectors(&a.after)?;
    let pos: HashMap<&str, usize> = after_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut aligned = Array2::zeros((names.len(), after.ncols()));
    for (i, n) in names.iter().enumerate() {
        let j = pos.get(n.as_str()).ok_or_else(|| anyhow!("`{n}` missing from --after"))?;
        aligned.row_mut(i).assign(&after.row(*j));
    }
    let out = pipeline::analyze(&ds, &links, &names, &before, &aligned)?;
    analysis::write_pair_csv(&a.out.join("pairs.csv"), &out.stats, &out.deltas)?;
    analysis::write_histogram_csv(&a.out.join("delta_histogram.csv"), &out.stats, &out.deltas, a.bins)?;
    let summary = serde_json::to_string_pretty(&out.summary)?;
    std::fs::write(a.out.join("similarity.json"), &summary).context("writing similarity.json")?;
    println!("{summary}");
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = a.overrides.load()?;
    if a.overrides.config.is_none() {
        bail!("run needs --config");
    }
    if let Some(r) = a.repeats {
        cfg.repeats = r;
    }
    if let Some(o) = a.output {
        cfg.paths.output = o;
    }
    let results = pipeline::run_pipeline(&cfg)?;
    println!("{}", serde_json::to_string_pretty(&pipeline::summarize(&results))?);
    Ok(())
}
