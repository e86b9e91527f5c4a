//! Command-line front end for rollout trees, credit assignment, and training.
//!
//! Four subcommands cover the pipeline: `gen-corpus` builds a synthetic
//! retrieval corpus, `rollout` grows and scores one tree, `train` runs the
//! tabular policy optimizer, and `export-tree` renders a stored tree as DOT.
//! Every directory-producing command also writes a manifest so reruns can be
//! compared artifact by artifact.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.

pub mod config;
pub mod export;
pub mod manifest;

use clap::{Args, Parser, Subcommand};
use config::{PolicyKind, RunConfig};
use export::{MetricsDocument, PolicyDocument, TreeDocument};
use manifest::{RunManifest, MANIFEST_FILE};
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;
use treeps::credit::score_tree;
use treeps::engine::{build_tree, EngineError, PruningMode};
use treeps::experience::{build_records, sample_paths, write_jsonl, WhitespaceTokenizer};
use treeps::model::PromptContext;
use treeps::policy::remote::{RemoteEndpointConfig, RemotePolicy};
use treeps::policy::scripted::ScriptedPolicy;
use treeps::policy::tabular::TabularPolicy;
use treeps::policy::Policy;
use treeps::pruner::Linkage;
use treeps::seeding;
use treeps::sim_env::{generate_corpus, Corpus, EnvError, SimRetriever, TaskIndex};
use treeps::trainer::{run_training, AdvantageMode, TrainError};

/// Seed stream domain for the rollout command's path sampling; distinct from
/// the domains the engine and trainer reserve for themselves.
const CLI_PATH_DOMAIN: u64 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, bad config file, bad input file shape. Exit code 1.
    #[error("{0}")]
    Config(String),
    /// Failure while doing the work. Exit code 2.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn engine_error(e: EngineError) -> CliError {
    match e {
        EngineError::Config(msg) => CliError::Config(msg),
        other => CliError::Runtime(other.to_string()),
    }
}

fn env_error(e: EnvError) -> CliError {
    match e {
        EnvError::InvalidConfig(msg) => CliError::Config(msg),
        other => CliError::Runtime(other.to_string()),
    }
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::Config(msg) | TrainError::Engine(EngineError::Config(msg)) => {
            CliError::Config(msg)
        }
        other => CliError::Runtime(other.to_string()),
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "treeps",
    version,
    about = "Layered rollout trees with similarity pruning, per-node credit, and policy training"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic multi-hop retrieval corpus.
    GenCorpus(GenCorpusArgs),
    /// Build one rollout tree, score it, and export paths as experience.
    Rollout(RolloutArgs),
    /// Train the tabular policy on every question in a corpus.
    Train(TrainArgs),
    /// Render a stored tree document as a Graphviz DOT file.
    ExportTree(ExportTreeArgs),
}

/// Command-line mirror of the pruning mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PruningFlag {
    Similarity,
    Random,
}

impl From<PruningFlag> for PruningMode {
    fn from(flag: PruningFlag) -> Self {
        match flag {
            PruningFlag::Similarity => PruningMode::Similarity,
            PruningFlag::Random => PruningMode::Random,
        }
    }
}

/// Command-line mirror of the cluster linkage rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum LinkageFlag {
    Single,
    Complete,
    Average,
}

impl From<LinkageFlag> for Linkage {
    fn from(flag: LinkageFlag) -> Self {
        match flag {
            LinkageFlag::Single => Linkage::Single,
            LinkageFlag::Complete => Linkage::Complete,
            LinkageFlag::Average => Linkage::Average,
        }
    }
}

/// Command-line mirror of the advantage estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AdvantageFlag {
    Process,
    OutcomeGrpo,
}

impl From<AdvantageFlag> for AdvantageMode {
    fn from(flag: AdvantageFlag) -> Self {
        match flag {
            AdvantageFlag::Process => AdvantageMode::Process,
            AdvantageFlag::OutcomeGrpo => AdvantageMode::OutcomeGrpo,
        }
    }
}

#[derive(Args, Debug)]
pub struct GenCorpusArgs {
    /// Output directory; receives corpus.json and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of fact chains (one question each).
    #[arg(long)]
    pub chains: Option<usize>,
    /// Hops per chain (1 to 4).
    #[arg(long)]
    pub hops: Option<usize>,
    /// Distractor passages per chain.
    #[arg(long)]
    pub distractors: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RolloutArgs {
    /// Corpus file produced by gen-corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory; receives tree.json, tree.dot, experience.jsonl,
    /// and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Question id to roll out; defaults to the first question.
    #[arg(long)]
    pub question: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-layer child budget.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Maximum tree depth.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Survivors kept per expanded parent.
    #[arg(long)]
    pub retain: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long, value_enum)]
    pub pruning: Option<PruningFlag>,
    #[arg(long, value_enum)]
    pub linkage: Option<LinkageFlag>,
    /// Fixed per-depth branching, e.g. "9,7,5,1"; overrides the budget split.
    #[arg(long, value_name = "N,N,...")]
    pub fixed_branching: Option<String>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyKind>,
    /// Trained policy file from the train command; overrides --policy.
    #[arg(long, conflicts_with = "policy")]
    pub policy_file: Option<PathBuf>,
    #[arg(long)]
    pub p_good: Option<f64>,
    #[arg(long)]
    pub p_bad: Option<f64>,
    #[arg(long)]
    pub remote_url: Option<String>,
    /// Root-to-leaf paths sampled into experience.jsonl.
    #[arg(long)]
    pub paths: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Corpus file produced by gen-corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory; receives metrics.json, policy.json, and
    /// manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, value_enum)]
    pub advantage: Option<AdvantageFlag>,
    /// Paths sampled per tree for the update.
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub retain: Option<usize>,
    #[arg(long, value_enum)]
    pub pruning: Option<PruningFlag>,
}

#[derive(Args, Debug)]
pub struct ExportTreeArgs {
    /// tree.json file produced by the rollout command.
    #[arg(long)]
    pub tree: PathBuf,
    /// Output DOT file path.
    #[arg(long)]
    pub out: PathBuf,
}

/// Writes through a temp file in the target directory so readers never see a
/// half-written artifact. Returns the byte count for the manifest.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<u64, CliError> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut file = tempfile::NamedTempFile::new_in(parent)
        .map_err(|e| CliError::Runtime(format!("cannot create temp file in {}: {e}", parent.display())))?;
    file.write_all(bytes)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    file.persist(path)
        .map_err(|e| CliError::Runtime(format!("cannot persist {}: {e}", path.display())))?;
    Ok(bytes.len() as u64)
}

fn json_bytes(value: &impl Serialize) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::Runtime(format!("serialization failed: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{} is not a {what}: {e}", path.display())))
}

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_artifact(
    dir: &Path,
    name: &str,
    bytes: &[u8],
    manifest: &mut RunManifest,
) -> Result<(), CliError> {
    let written = write_atomic(&dir.join(name), bytes)?;
    manifest.record(name, written);
    Ok(())
}

/// Writes the manifest last, listing every other artifact but not itself.
fn finish_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), CliError> {
    let bytes = json_bytes(manifest)?;
    write_atomic(&dir.join(MANIFEST_FILE), &bytes)?;
    Ok(())
}

fn parse_branching(raw: &str) -> Result<Vec<usize>, CliError> {
    raw.split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Config(format!("--fixed-branching expects integers, got {part:?}")))
        })
        .collect()
}

fn read_corpus(path: &Path) -> Result<Corpus, CliError> {
    read_json(path, "corpus file")
}

/// Builds the policy the configuration asks for. The trained-policy path is
/// handled separately by the rollout command.
fn build_configured_policy(
    config: &RunConfig,
    tasks: &Arc<TaskIndex>,
) -> Result<Box<dyn Policy>, CliError> {
    match config.policy.kind {
        PolicyKind::Uniform => Ok(Box::new(TabularPolicy::uniform(
            Arc::clone(tasks),
            config.rollout.max_depth,
            config.train.noise_templates,
        ))),
        PolicyKind::Planted => Ok(Box::new(ScriptedPolicy::planted(
            Arc::clone(tasks),
            config.policy.p_good,
            config.policy.p_bad,
        ))),
        PolicyKind::Remote => {
            let url = config.policy.url.clone().ok_or_else(|| {
                CliError::Config("remote policy needs a url (--remote-url or [policy] url)".into())
            })?;
            Ok(Box::new(RemotePolicy::new(RemoteEndpointConfig::new(url))))
        }
    }
}

fn load_trained_policy(
    path: &Path,
    tasks: &Arc<TaskIndex>,
    rollout_depth: usize,
) -> Result<Box<dyn Policy>, CliError> {
    let doc: PolicyDocument = read_json(path, "policy file")?;
    if doc.max_depth != rollout_depth {
        log::warn!(
            "policy was trained for max depth {}, rolling out at {}",
            doc.max_depth,
            rollout_depth
        );
    }
    let base = TabularPolicy::uniform(Arc::clone(tasks), doc.max_depth, doc.noise_templates);
    let expect = &base.params.logits;
    let got = &doc.params.logits;
    if expect.len() != got.len()
        || expect
            .first()
            .zip(got.first())
            .is_some_and(|(a, b)| a.len() != b.len())
    {
        return Err(CliError::Config(format!(
            "{}: parameter shape {}x{} does not match this corpus ({}x{})",
            path.display(),
            got.len(),
            got.first().map_or(0, Vec::len),
            expect.len(),
            expect.first().map_or(0, Vec::len),
        )));
    }
    Ok(Box::new(base.with_params(doc.params)))
}

fn cmd_gen_corpus(args: GenCorpusArgs) -> Result<(), CliError> {
    let mut config = config::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.env.seed = seed;
    }
    if let Some(chains) = args.chains {
        config.env.num_chains = chains;
    }
    if let Some(hops) = args.hops {
        config.env.hop_count = hops;
    }
    if let Some(distractors) = args.distractors {
        config.env.distractors_per_chain = distractors;
    }
    config::apply_seed_env(&mut config)?;

    let corpus = generate_corpus(&config.env).map_err(env_error)?;
    ensure_out_dir(&args.out)?;
    let mut manifest = RunManifest::new("gen-corpus", config.env.seed, config::digest_of(&config));
    write_artifact(&args.out, "corpus.json", &json_bytes(&corpus)?, &mut manifest)?;
    finish_manifest(&args.out, &manifest)?;
    println!(
        "corpus: {} passages, {} questions -> {}",
        corpus.passages.len(),
        corpus.questions.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_rollout(args: RolloutArgs) -> Result<(), CliError> {
    let mut config = config::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.rollout.seed = seed;
    }
    if let Some(budget) = args.budget {
        config.rollout.rollout_budget = budget;
    }
    if let Some(depth) = args.depth {
        config.rollout.max_depth = depth;
    }
    if let Some(retain) = args.retain {
        config.rollout.retention_budget = retain;
    }
    if let Some(temperature) = args.temperature {
        config.rollout.temperature = temperature;
    }
    if let Some(pruning) = args.pruning {
        config.rollout.pruning = pruning.into();
    }
    if let Some(linkage) = args.linkage {
        config.rollout.linkage = linkage.into();
    }
    if let Some(raw) = &args.fixed_branching {
        config.rollout.fixed_branching = Some(parse_branching(raw)?);
    }
    if let Some(kind) = args.policy {
        config.policy.kind = kind;
    }
    if let Some(p_good) = args.p_good {
        config.policy.p_good = p_good;
    }
    if let Some(p_bad) = args.p_bad {
        config.policy.p_bad = p_bad;
    }
    if let Some(url) = &args.remote_url {
        config.policy.url = Some(url.clone());
        if args.policy.is_none() && args.policy_file.is_none() {
            config.policy.kind = PolicyKind::Remote;
        }
    }
    if let Some(paths) = args.paths {
        config.train.paths_per_tree = paths;
    }
    config.train.rollout = config.rollout.clone();
    config::apply_seed_env(&mut config)?;
    config.rollout.validate().map_err(engine_error)?;
    if config.train.paths_per_tree == 0 {
        return Err(CliError::Config("--paths must be positive".into()));
    }

    let corpus = Arc::new(read_corpus(&args.corpus)?);
    config.env = corpus.config.clone();
    let question = match &args.question {
        Some(id) => corpus
            .question(id)
            .ok_or_else(|| CliError::Config(format!("question {id:?} is not in the corpus")))?
            .clone(),
        None => corpus
            .questions
            .first()
            .ok_or_else(|| CliError::Config("corpus has no questions".into()))?
            .clone(),
    };
    let tasks = Arc::new(TaskIndex::from_corpus(&corpus));
    let policy: Box<dyn Policy> = match &args.policy_file {
        Some(path) => load_trained_policy(path, &tasks, config.rollout.max_depth)?,
        None => build_configured_policy(&config, &tasks)?,
    };
    let retriever = SimRetriever::from_corpus(Arc::clone(&corpus));

    let context = PromptContext::new(question);
    let tree = build_tree(context, &*policy, &retriever, &config.rollout).map_err(engine_error)?;
    let (rewards, credit) =
        score_tree(&tree).map_err(|e| CliError::Runtime(format!("credit assignment failed: {e}")))?;

    let mut path_rng = seeding::stream(config.rollout.seed, &[CLI_PATH_DOMAIN]);
    let trajectories = sample_paths(&tree, config.train.paths_per_tree, &mut path_rng)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let records = build_records(&tree, &trajectories, &credit, &rewards, &WhitespaceTokenizer)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    ensure_out_dir(&args.out)?;
    let digest = config::digest_of(&config);
    let doc = TreeDocument::from_parts(&tree, &credit, digest.clone());
    let mut manifest = RunManifest::new("rollout", config.rollout.seed, digest);
    write_artifact(&args.out, "tree.json", &json_bytes(&doc)?, &mut manifest)?;
    write_artifact(&args.out, "tree.dot", export::render_dot(&doc).as_bytes(), &mut manifest)?;
    let mut jsonl = Vec::new();
    write_jsonl(&records, &mut jsonl)
        .map_err(|e| CliError::Runtime(format!("cannot encode experience records: {e}")))?;
    write_artifact(&args.out, "experience.jsonl", &jsonl, &mut manifest)?;
    finish_manifest(&args.out, &manifest)?;
    println!(
        "rollout: question {} -> {} nodes, {} leaves, {} experience records -> {}",
        tree.question_id,
        tree.len(),
        tree.leaf_ids().len(),
        records.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut config = config::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.rollout.seed = seed;
    }
    if let Some(budget) = args.budget {
        config.rollout.rollout_budget = budget;
    }
    if let Some(depth) = args.depth {
        config.rollout.max_depth = depth;
    }
    if let Some(retain) = args.retain {
        config.rollout.retention_budget = retain;
    }
    if let Some(pruning) = args.pruning {
        config.rollout.pruning = pruning.into();
    }
    if let Some(iterations) = args.iterations {
        config.train.iterations = iterations;
    }
    if let Some(learning_rate) = args.learning_rate {
        config.train.learning_rate = learning_rate;
    }
    if let Some(advantage) = args.advantage {
        config.train.advantage_mode = advantage.into();
    }
    if let Some(paths) = args.paths {
        config.train.paths_per_tree = paths;
    }
    config.train.rollout = config.rollout.clone();
    config::apply_seed_env(&mut config)?;
    config.train.validate().map_err(train_error)?;

    let corpus = Arc::new(read_corpus(&args.corpus)?);
    config.env = corpus.config.clone();
    let tasks = Arc::new(TaskIndex::from_corpus(&corpus));
    if tasks.is_empty() {
        return Err(CliError::Config("corpus has no questions".into()));
    }
    let retriever = SimRetriever::from_corpus(Arc::clone(&corpus));
    let outcome = run_training(Arc::clone(&tasks), &retriever, &config.train).map_err(train_error)?;

    ensure_out_dir(&args.out)?;
    let digest = config::digest_of(&config);
    let final_mean_reward = outcome.metrics.last().map_or(0.0, |m| m.mean_reward);
    let metrics = MetricsDocument {
        config: config.clone(),
        iterations: outcome.metrics,
        final_mean_reward,
    };
    let policy_doc = PolicyDocument {
        hop_count: tasks.hop_count(),
        noise_templates: config.train.noise_templates,
        max_depth: config.rollout.max_depth,
        temperature: config.rollout.temperature,
        config_digest: digest.clone(),
        params: outcome.policy.params.clone(),
    };
    let mut manifest = RunManifest::new("train", config.train.rollout.seed, digest);
    write_artifact(&args.out, "metrics.json", &json_bytes(&metrics)?, &mut manifest)?;
    write_artifact(&args.out, "policy.json", &json_bytes(&policy_doc)?, &mut manifest)?;
    finish_manifest(&args.out, &manifest)?;
    println!(
        "train: {} iterations on {} questions, final mean reward {:.3} -> {}",
        metrics.iterations.len(),
        tasks.len(),
        final_mean_reward,
        args.out.display()
    );
    Ok(())
}

fn cmd_export_tree(args: ExportTreeArgs) -> Result<(), CliError> {
    let doc: TreeDocument = read_json(&args.tree, "tree document")?;
    let dot = export::render_dot(&doc);
    write_atomic(&args.out, dot.as_bytes())?;
    println!("export-tree: {} nodes -> {}", doc.nodes.len(), args.out.display());
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenCorpus(args) => cmd_gen_corpus(args),
        Command::Rollout(args) => cmd_rollout(args),
        Command::Train(args) => cmd_train(args),
        Command::ExportTree(args) => cmd_export_tree(args),
    }
}

/// Parses and runs, returning the process exit code. Kept separate from
/// `main` so tests can drive the full dispatch in process.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                eprint!("{e}");
                return 1;
            }
            // --help and --version land here
            print!("{e}");
            return 0;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
