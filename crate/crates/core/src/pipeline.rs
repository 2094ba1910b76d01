//! End-to-end analysis driven by one JSON configuration file.
//!
//! Stages run in a fixed order, each writing its tables into the output
//! directory:
//!
//! | stage     | files |
//! |-----------|-------|
//! | `ingest`  | `corpus_summary.tsv` |
//! | `logodds` | `logodds_D.tsv`, `logodds_R.tsv`, `shared_terms.tsv` |
//! | `embed`   | `embeddings.vec` (when trained), `party_terms.tsv` |
//! | `project` | `term_map_D.tsv`, `term_map_R.tsv` and their `.svg` plots |
//! | `frames`  | `frames_diff.tsv`, `frames_top_tweets.tsv` |
//! | `verbs`   | `verb_clusters_D.tsv`, `verb_clusters_R.tsv` and their `.svg` plots |
//! | `roles`   | `roles_combinations.tsv`, `roles_agents.tsv`, `roles_patients.tsv`, `roles_memberships.tsv`, `relationships.tsv` |
//!
//! A `manifest.json` lists every file in the directory with its SHA-256,
//! the stage that wrote it, and a hash of the configuration. Nothing in
//! the outputs depends on wall-clock time, so a rerun with the same
//! configuration reproduces every byte (GloVe must use one worker).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{
    filter_topic, ingest_tweets, normalize_topic_tokens, partition_by_party, CorpusPartition, Party, PartySplit,
    TopicKeywords, DEFAULT_TOPIC_KEYWORDS,
};
use crate::embedding::{
    build_cooccurrence, expand_party_terms, load_embeddings, train_glove, EmbeddingModel, GloveParams, DEFAULT_DIM,
    DEFAULT_EPOCHS, DEFAULT_MIN_COUNT, DEFAULT_WINDOW,
};
use crate::frameaxis::{
    differential_microframes, load_microframes, top_documents, write_differential_tsv, BaselineBias, FrameScorer,
    DEFAULT_TOP_DOCUMENTS, DEFAULT_TOP_FRAMES,
};
use crate::geometry::{
    kmeans, project_umap, KMeansParams, LabeledVectors, Projection, UmapParams, DEFAULT_VERB_CLUSTERS,
};
use crate::overrepresentation::{
    dense_rank_shared_terms, top_terms, weighted_log_odds, write_shared_terms_tsv, TopTerms, DEFAULT_TOP_TERMS,
};
use crate::report::{emit_scatter_svg, tsv_cell};
use crate::roles::{
    categorize_memberships, category_counts, combination_frequencies, differential_combinations, filter_triples,
    load_triples, of_party, relationships, top_agents_patients, top_verbs, write_combinations_tsv,
    write_memberships_tsv, write_ranked_tsv, write_relationships_tsv, LoadedTriples, MembershipLists, PatientMerge,
    VerbSet, DEFAULT_MAX_ROLE_TOKENS, DEFAULT_THEM_TERMS, DEFAULT_TOP_VERBS, DEFAULT_US_TERMS,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.vec";

const PARTIES: [Party; 2] = [Party::D, Party::R];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
#[error("stage {stage} failed: {message}")]
pub struct StageError {
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Stage(#[from] StageError),
}

impl PipelineError {
    /// Process exit status: 2 for configuration problems, 3 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage(_) => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Logodds,
    Embed,
    Project,
    Frames,
    Verbs,
    Roles,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Logodds,
        Stage::Embed,
        Stage::Project,
        Stage::Frames,
        Stage::Verbs,
        Stage::Roles,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Logodds => "logodds",
            Stage::Embed => "embed",
            Stage::Project => "project",
            Stage::Frames => "frames",
            Stage::Verbs => "verbs",
            Stage::Roles => "roles",
        }
    }

    fn requires(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Logodds | Stage::Embed => &[Stage::Ingest],
            Stage::Project => &[Stage::Logodds, Stage::Embed],
            Stage::Frames | Stage::Verbs | Stage::Roles => &[Stage::Embed],
        }
    }

    /// `targets` plus everything they depend on, in execution order.
    pub fn plan(targets: &[Stage]) -> Vec<Stage> {
        let mut needed: BTreeSet<Stage> = BTreeSet::new();
        let mut todo: Vec<Stage> = targets.to_vec();
        while let Some(s) = todo.pop() {
            if needed.insert(s) {
                todo.extend_from_slice(s.requires());
            }
        }
        Stage::ALL.into_iter().filter(|s| needed.contains(s)).collect()
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub tweets: PathBuf,
    pub antonyms: PathBuf,
    pub triples: PathBuf,
    /// Pretrained vectors in text format; when set, no embedding is trained.
    pub vectors: Option<PathBuf>,
}

impl Default for Inputs {
    fn default() -> Self {
        Inputs {
            tweets: PathBuf::new(),
            antonyms: PathBuf::new(),
            triples: PathBuf::new(),
            vectors: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicConfig {
    pub keywords: Vec<String>,
}

impl Default for TopicConfig {
    fn default() -> Self {
        TopicConfig {
            keywords: DEFAULT_TOPIC_KEYWORDS.map(String::from).to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogOddsConfig {
    pub top_terms: usize,
    pub shared_terms: usize,
    /// Tokens never reported as over-represented, such as politicians' names.
    pub exclude: Vec<String>,
    /// Also exclude `@handles`.
    pub exclude_handles: bool,
}

impl Default for LogOddsConfig {
    fn default() -> Self {
        LogOddsConfig {
            top_terms: DEFAULT_TOP_TERMS,
            shared_terms: DEFAULT_TOP_TERMS,
            exclude: Vec::new(),
            exclude_handles: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub epochs: usize,
    pub window: usize,
    pub min_count: u64,
    pub x_max: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub workers: usize,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        let g = GloveParams::default();
        EmbeddingConfig {
            dim: DEFAULT_DIM,
            epochs: DEFAULT_EPOCHS,
            window: DEFAULT_WINDOW,
            min_count: DEFAULT_MIN_COUNT,
            x_max: g.x_max,
            alpha: g.alpha,
            learning_rate: g.learning_rate,
            workers: g.workers,
            seed: g.seed,
        }
    }
}

impl EmbeddingConfig {
    pub fn glove_params(&self) -> GloveParams {
        GloveParams {
            dim: self.dim,
            epochs: self.epochs,
            x_max: self.x_max,
            alpha: self.alpha,
            learning_rate: self.learning_rate,
            seed: self.seed,
            workers: self.workers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartyTermConfig {
    pub democrat_seeds: Vec<String>,
    pub republican_seeds: Vec<String>,
    /// Neighbors taken per seed.
    pub neighbors: usize,
}

impl Default for PartyTermConfig {
    fn default() -> Self {
        PartyTermConfig {
            democrat_seeds: vec!["democrat".into(), "democratic".into()],
            republican_seeds: vec!["republican".into()],
            neighbors: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionConfig {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub negative_sample_rate: usize,
    pub seed: u64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        let u = UmapParams::default();
        ProjectionConfig {
            n_neighbors: u.n_neighbors,
            min_dist: u.min_dist,
            spread: u.spread,
            epochs: u.epochs,
            learning_rate: u.learning_rate,
            negative_sample_rate: u.negative_sample_rate,
            seed: u.seed,
        }
    }
}

impl ProjectionConfig {
    pub fn umap_params(&self) -> UmapParams {
        UmapParams {
            n_neighbors: self.n_neighbors,
            min_dist: self.min_dist,
            spread: self.spread,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            negative_sample_rate: self.negative_sample_rate,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FramesConfig {
    pub top_frames: usize,
    pub top_documents: usize,
    /// Replaces the built-in English stopword list when set.
    pub stopwords: Option<Vec<String>>,
}

impl Default for FramesConfig {
    fn default() -> Self {
        FramesConfig {
            top_frames: DEFAULT_TOP_FRAMES,
            top_documents: DEFAULT_TOP_DOCUMENTS,
            stopwords: None,
        }
    }
}

/// Where verbs are clustered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterSpace {
    /// On the 2-D projection.
    Projection,
    /// On the embedding vectors themselves.
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerbsConfig {
    pub top_verbs: usize,
    pub clusters: usize,
    pub cluster_space: ClusterSpace,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for VerbsConfig {
    fn default() -> Self {
        let k = KMeansParams::default();
        VerbsConfig {
            top_verbs: DEFAULT_TOP_VERBS,
            clusters: DEFAULT_VERB_CLUSTERS,
            cluster_space: ClusterSpace::Projection,
            restarts: k.restarts,
            max_iter: k.max_iter,
            seed: k.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolesConfig {
    pub max_role_tokens: usize,
    pub top_combinations: usize,
    pub top_agents: usize,
    pub top_patients: usize,
    /// Patients kept per verb set, category and party in `relationships.tsv`.
    pub relationship_patients: usize,
    pub us_terms: Vec<String>,
    pub them_terms: Vec<String>,
    /// Terms referring to Democrats. When empty, the embedding expansion of
    /// the Democratic seeds is used.
    pub democrat_terms: Vec<String>,
    /// Terms referring to Republicans; same fallback as `democrat_terms`.
    pub republican_terms: Vec<String>,
    pub verb_sets: Vec<VerbSet>,
    /// Patient merge map applied in `relationships.tsv` only.
    pub merge: BTreeMap<String, String>,
}

impl Default for RolesConfig {
    fn default() -> Self {
        let strings = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let set = |name: &str, verbs: &[&str]| VerbSet {
            name: name.to_string(),
            verbs: verbs.iter().map(|s| s.to_string()).collect(),
        };
        RolesConfig {
            max_role_tokens: DEFAULT_MAX_ROLE_TOKENS,
            top_combinations: 10,
            top_agents: 20,
            top_patients: 20,
            relationship_patients: 10,
            us_terms: strings(&DEFAULT_US_TERMS),
            them_terms: strings(&DEFAULT_THEM_TERMS),
            democrat_terms: strings(&[
                "democrat",
                "democrats",
                "democratic",
                "dems",
                "housedemocrats",
                "reddemocrats",
                "democraticled",
                "pelosi",
                "speakerpelosi",
                "nancy pelosi",
                "chuck schumer",
                "ralph northam",
                "ayanna pressley",
                "gwen moore",
                "senatedems",
            ]),
            republican_terms: strings(&[
                "republican",
                "republicans",
                "gop",
                "president",
                "trump",
                "donald trump",
                "patrick mchenry",
                "larry hogan",
                "mitch mcconnell",
                "mcconnell",
            ]),
            verb_sets: vec![
                set("help", &["help", "save", "protect"]),
                set("stop", &["stop", "slow", "prevent"]),
                set("want", &["want"]),
            ],
            merge: BTreeMap::new(),
        }
    }
}

/// Complete analysis configuration. Relative input paths are resolved
/// against the directory holding the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub inputs: Inputs,
    pub output_dir: PathBuf,
    pub topic: TopicConfig,
    pub logodds: LogOddsConfig,
    pub embedding: EmbeddingConfig,
    pub party_terms: PartyTermConfig,
    pub projection: ProjectionConfig,
    pub frames: FramesConfig,
    pub verbs: VerbsConfig,
    pub roles: RolesConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            inputs: Inputs::default(),
            output_dir: PathBuf::from("narraframe-out"),
            topic: TopicConfig::default(),
            logodds: LogOddsConfig::default(),
            embedding: EmbeddingConfig::default(),
            party_terms: PartyTermConfig::default(),
            projection: ProjectionConfig::default(),
            frames: FramesConfig::default(),
            verbs: VerbsConfig::default(),
            roles: RolesConfig::default(),
        }
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    /// Seed for every stochastic step of the selected stages.
    pub seed: Option<u64>,
    /// Main list length of the selected stages.
    pub top_k: Option<usize>,
}

/// A parsed configuration and the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub base_dir: PathBuf,
}

pub fn load_config(path: impl AsRef<Path>) -> Result<LoadedConfig, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let config = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { config, base_dir })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_sha256(path: &Path) -> io::Result<String> {
    let mut hasher = Sha256::new();
    let mut f = File::open(path)?;
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

impl PipelineConfig {
    pub fn apply_overrides(&mut self, o: &Overrides, stages: &[Stage]) {
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
        for stage in stages {
            if let Some(seed) = o.seed {
                match stage {
                    Stage::Embed => self.embedding.seed = seed,
                    Stage::Project => self.projection.seed = seed,
                    Stage::Verbs => {
                        self.projection.seed = seed;
                        self.verbs.seed = seed;
                    }
                    _ => {}
                }
            }
            if let Some(k) = o.top_k {
                match stage {
                    Stage::Logodds => self.logodds.top_terms = k,
                    Stage::Frames => self.frames.top_frames = k,
                    Stage::Verbs => self.verbs.top_verbs = k,
                    Stage::Roles => self.roles.top_combinations = k,
                    _ => {}
                }
            }
        }
    }

    /// Checks that inputs exist and every count is positive.
    pub fn validate(&self, base_dir: &Path) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        let required = [
            ("inputs.tweets", &self.inputs.tweets),
            ("inputs.antonyms", &self.inputs.antonyms),
            ("inputs.triples", &self.inputs.triples),
        ];
        for (name, p) in required {
            if p.as_os_str().is_empty() {
                return invalid(format!("{name} is required"));
            }
            if !base_dir.join(p).is_file() {
                return invalid(format!("{name}: {} does not exist", base_dir.join(p).display()));
            }
        }
        if let Some(v) = &self.inputs.vectors {
            if !base_dir.join(v).is_file() {
                return invalid(format!("inputs.vectors: {} does not exist", base_dir.join(v).display()));
            }
        }
        if self.output_dir.as_os_str().is_empty() {
            return invalid("output_dir is required".into());
        }
        if self.topic.keywords.iter().all(|k| k.trim().is_empty()) {
            return invalid("topic.keywords must not be empty".into());
        }
        let counts = [
            ("logodds.top_terms", self.logodds.top_terms),
            ("logodds.shared_terms", self.logodds.shared_terms),
            ("embedding.dim", self.embedding.dim),
            ("embedding.epochs", self.embedding.epochs),
            ("embedding.window", self.embedding.window),
            ("embedding.workers", self.embedding.workers),
            ("party_terms.neighbors", self.party_terms.neighbors),
            ("projection.n_neighbors", self.projection.n_neighbors),
            ("projection.epochs", self.projection.epochs),
            ("projection.negative_sample_rate", self.projection.negative_sample_rate),
            ("frames.top_frames", self.frames.top_frames),
            ("frames.top_documents", self.frames.top_documents),
            ("verbs.top_verbs", self.verbs.top_verbs),
            ("verbs.clusters", self.verbs.clusters),
            ("verbs.restarts", self.verbs.restarts),
            ("verbs.max_iter", self.verbs.max_iter),
            ("roles.max_role_tokens", self.roles.max_role_tokens),
            ("roles.top_combinations", self.roles.top_combinations),
            ("roles.top_agents", self.roles.top_agents),
            ("roles.top_patients", self.roles.top_patients),
            ("roles.relationship_patients", self.roles.relationship_patients),
        ];
        for (name, v) in counts {
            if v == 0 {
                return invalid(format!("{name} must be positive"));
            }
        }
        let reals = [
            ("embedding.x_max", self.embedding.x_max),
            ("embedding.alpha", self.embedding.alpha),
            ("embedding.learning_rate", self.embedding.learning_rate),
            ("projection.spread", self.projection.spread),
            ("projection.learning_rate", self.projection.learning_rate),
        ];
        for (name, v) in reals {
            if !(v.is_finite() && v > 0.0) {
                return invalid(format!("{name} must be a positive number"));
            }
        }
        if !(self.projection.min_dist.is_finite() && self.projection.min_dist >= 0.0) {
            return invalid("projection.min_dist must be non-negative".into());
        }
        if self.projection.n_neighbors < 2 {
            return invalid("projection.n_neighbors must be at least 2".into());
        }
        if let Some(set) = self.roles.verb_sets.iter().find(|s| s.verbs.is_empty()) {
            return invalid(format!("roles.verb_sets: set {:?} has no verbs", set.name));
        }
        Ok(())
    }

    /// SHA-256 of the configuration with the output location removed.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub stage: Option<Stage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Hash of everything the stage's output depends on.
    pub inputs_hash: String,
    pub stats: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: Stage,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    /// `complete`, or `failed` when some outputs are missing or stale.
    pub status: String,
    pub failure: Option<Failure>,
    pub stages: BTreeMap<Stage, StageRecord>,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Option<Manifest> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn file(&self, name: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.path == name)
    }
}

/// Outcome of a pipeline run.
#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
}

struct Corpora {
    topical: PartySplit,
    background: CorpusPartition,
    all: CorpusPartition,
}

#[derive(Default)]
struct State {
    corpora: Option<Corpora>,
    top_terms: BTreeMap<Party, TopTerms>,
    model: Option<EmbeddingModel>,
    party_terms: BTreeMap<Party, Vec<String>>,
    triples: Option<LoadedTriples>,
}

struct Run<'a> {
    config: &'a PipelineConfig,
    base_dir: &'a Path,
    out_dir: PathBuf,
    previous: Option<Manifest>,
    written: BTreeMap<String, Stage>,
    records: BTreeMap<Stage, StageRecord>,
    state: State,
}

type StageResult<T> = Result<T, String>;

fn err<E: fmt::Display>(e: E) -> String {
    e.to_string()
}

fn stat(stats: &mut BTreeMap<String, serde_json::Value>, key: &str, v: impl Into<serde_json::Value>) {
    stats.insert(key.to_string(), v.into());
}

/// Runs `targets` and the stages they depend on.
pub fn run_pipeline(
    config: &PipelineConfig,
    base_dir: &Path,
    targets: &[Stage],
) -> Result<ReportBundle, PipelineError> {
    config.validate(base_dir)?;
    let out_dir = base_dir.join(&config.output_dir);
    fs::create_dir_all(&out_dir)
        .map_err(|e| ConfigError::Invalid(format!("cannot create output directory {}: {e}", out_dir.display())))?;
    let mut run = Run {
        config,
        base_dir,
        previous: Manifest::load(&out_dir),
        out_dir,
        written: BTreeMap::new(),
        records: BTreeMap::new(),
        state: State::default(),
    };

    let mut failure = None;
    for stage in Stage::plan(targets) {
        log::info!("running stage {stage}");
        if let Err(message) = run.stage(stage) {
            failure = Some(StageError { stage, message });
            break;
        }
    }
    let manifest = run.write_manifest(failure.as_ref()).map_err(|e| StageError {
        stage: failure.as_ref().map_or(Stage::Roles, |f| f.stage),
        message: format!("cannot write manifest: {e}"),
    })?;
    match failure {
        Some(f) => Err(f.into()),
        None => Ok(ReportBundle {
            out_dir: run.out_dir,
            manifest,
        }),
    }
}

impl Run<'_> {
    fn input(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    fn emit<F>(&mut self, stage: Stage, name: &str, f: F) -> StageResult<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> io::Result<()>,
    {
        let path = self.out_dir.join(name);
        let file = File::create(&path).map_err(|e| format!("cannot create {}: {e}", path.display()))?;
        let mut w = BufWriter::new(file);
        f(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        self.written.insert(name.to_string(), stage);
        Ok(())
    }

    fn record(&mut self, stage: Stage, inputs_hash: String, stats: BTreeMap<String, serde_json::Value>) {
        self.records.insert(stage, StageRecord { inputs_hash, stats });
    }

    fn section_hash<T: Serialize>(&self, section: &T, inputs: &[&Path]) -> StageResult<String> {
        let mut parts = vec![serde_json::to_string(section).map_err(err)?];
        for p in inputs {
            parts.push(file_sha256(&self.input(p)).map_err(|e| format!("cannot read {}: {e}", p.display()))?);
        }
        Ok(sha256_hex(parts.join("\n").as_bytes()))
    }

    fn stage(&mut self, stage: Stage) -> StageResult<()> {
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::Logodds => self.logodds(),
            Stage::Embed => self.embed(),
            Stage::Project => self.project(),
            Stage::Frames => self.frames(),
            Stage::Verbs => self.verbs(),
            Stage::Roles => self.roles(),
        }
    }

    fn corpora(&self) -> &Corpora {
        self.state.corpora.as_ref().expect("ingest runs first")
    }

    fn model(&self) -> &EmbeddingModel {
        self.state.model.as_ref().expect("embed runs first")
    }

    fn ingest(&mut self) -> StageResult<()> {
        let cfg = self.config;
        let ingested = ingest_tweets(self.input(&cfg.inputs.tweets)).map_err(err)?;
        let keywords = TopicKeywords::new(&cfg.topic.keywords).map_err(err)?;
        let all = ingested.corpus.map_tokens(|t| normalize_topic_tokens(t, &keywords));
        let (topical, background) = filter_topic(&all, &keywords);
        let topical_split = partition_by_party(&topical);
        let background_split = partition_by_party(&background);
        if topical_split.democrat.is_empty() || topical_split.republican.is_empty() {
            return Err("both parties need at least one topical tweet".into());
        }
        if background.total_tokens() == 0 {
            return Err("the background (non-topical) corpus is empty".into());
        }

        self.emit(Stage::Ingest, "corpus_summary.tsv", |w| {
            writeln!(
                w,
                "party\ttweets\ttopical\tbackground\ttopical_tokens\tbackground_tokens"
            )?;
            for p in &PARTIES {
                let (t, b) = (topical_split.get(p).unwrap(), background_split.get(p).unwrap());
                writeln!(
                    w,
                    "{p}\t{}\t{}\t{}\t{}\t{}",
                    t.len() + b.len(),
                    t.len(),
                    b.len(),
                    t.total_tokens(),
                    b.total_tokens()
                )?;
            }
            Ok(())
        })?;

        let mut stats = BTreeMap::new();
        stat(&mut stats, "records", all.len());
        stat(&mut stats, "malformed", ingested.malformed);
        stat(&mut stats, "non_english", ingested.non_english);
        stat(&mut stats, "duplicates", ingested.duplicates);
        stat(
            &mut stats,
            "other_party",
            topical_split.excluded + background_split.excluded,
        );
        let hash = self.section_hash(&cfg.topic, &[&cfg.inputs.tweets])?;
        self.record(Stage::Ingest, hash, stats);
        self.state.corpora = Some(Corpora {
            topical: topical_split,
            background,
            all,
        });
        Ok(())
    }

    fn logodds(&mut self) -> StageResult<()> {
        let cfg = &self.config.logodds;
        let c = self.corpora();
        let (d, r, bg) = (&c.topical.democrat, &c.topical.republican, &c.background);
        let mut exclusions: BTreeSet<String> = cfg.exclude.iter().map(|s| s.to_lowercase()).collect();
        if cfg.exclude_handles {
            exclusions.extend(
                d.term_counts()
                    .keys()
                    .chain(r.term_counts().keys())
                    .filter(|t| t.starts_with('@'))
                    .cloned(),
            );
        }
        let d_res = weighted_log_odds(d, r, bg).map_err(err)?;
        let r_res = weighted_log_odds(r, d, bg).map_err(err)?;
        let top_d = top_terms(&d_res, cfg.top_terms, &exclusions);
        let top_r = top_terms(&r_res, cfg.top_terms, &exclusions);
        let shared = dense_rank_shared_terms(d, r, bg, cfg.shared_terms);

        let mut stats = BTreeMap::new();
        stat(&mut stats, "vocabulary", d_res.scores.len());
        stat(&mut stats, "excluded", exclusions.len());
        stat(&mut stats, "shared_terms", shared.len());
        for (p, t) in [("D", &top_d), ("R", &top_r)] {
            if t.short {
                log::warn!("fewer than {} scorable terms for {p}", cfg.top_terms);
            }
        }

        self.emit(Stage::Logodds, "logodds_D.tsv", |w| top_d.write_tsv(w))?;
        self.emit(Stage::Logodds, "logodds_R.tsv", |w| top_r.write_tsv(w))?;
        self.emit(Stage::Logodds, "shared_terms.tsv", |w| {
            write_shared_terms_tsv(w, &shared)
        })?;
        let hash = self.section_hash(&(&self.config.topic, cfg), &[&self.config.inputs.tweets])?;
        self.record(Stage::Logodds, hash, stats);
        self.state.top_terms = BTreeMap::from([(Party::D, top_d), (Party::R, top_r)]);
        Ok(())
    }

    fn embed(&mut self) -> StageResult<()> {
        let cfg = self.config;
        let mut stats = BTreeMap::new();
        let model = if let Some(vectors) = &cfg.inputs.vectors {
            let hash = self.section_hash(&"pretrained", &[vectors])?;
            let model = load_embeddings(self.input(vectors)).map_err(err)?;
            self.record(Stage::Embed, hash, BTreeMap::new());
            model
        } else {
            let hash = self.section_hash(&(&cfg.topic, &cfg.embedding), &[&cfg.inputs.tweets])?;
            let cache = self.out_dir.join(EMBEDDINGS_FILE);
            let cached = self.previous.as_ref().and_then(|m| {
                let same_inputs = m.stages.get(&Stage::Embed)?.inputs_hash == hash;
                let entry = m.file(EMBEDDINGS_FILE)?;
                let intact = file_sha256(&cache).ok()? == entry.sha256;
                (same_inputs && intact).then_some(())
            });
            let model = match cached.map(|_| load_embeddings(&cache)) {
                Some(Ok(model)) => {
                    log::info!("reusing cached embeddings from {}", cache.display());
                    model
                }
                _ => {
                    if cfg.embedding.workers > 1 {
                        log::warn!("training with {} workers is not reproducible", cfg.embedding.workers);
                    }
                    let cooc = build_cooccurrence(&self.corpora().all, cfg.embedding.window, cfg.embedding.min_count)
                        .map_err(err)?;
                    log::info!(
                        "co-occurrence table: {} words, {} entries",
                        cooc.vocab().len(),
                        cooc.len()
                    );
                    let trained = train_glove(&cooc, &cfg.embedding.glove_params()).map_err(err)?;
                    if let (Some(first), Some(last)) = (trained.epoch_losses.first(), trained.epoch_losses.last()) {
                        log::info!("GloVe objective {first:.4} -> {last:.4}");
                    }
                    trained.embedding().map_err(err)?
                }
            };
            self.emit(Stage::Embed, EMBEDDINGS_FILE, |w| model.write_text(w))?;
            self.record(Stage::Embed, hash, BTreeMap::new());
            model
        };
        stat(&mut stats, "vocabulary", model.len());
        stat(&mut stats, "dim", model.dim());

        let pt = &cfg.party_terms;
        let mut party_terms = BTreeMap::new();
        for (party, seeds) in [(Party::D, &pt.democrat_seeds), (Party::R, &pt.republican_seeds)] {
            let terms = match expand_party_terms(&model, seeds, pt.neighbors) {
                Ok(t) => t,
                Err(e) => {
                    log::warn!("party term expansion for {party}: {e}");
                    Vec::new()
                }
            };
            party_terms.insert(party, terms);
        }
        self.emit(Stage::Embed, "party_terms.tsv", |w| {
            writeln!(w, "party\trank\tterm")?;
            for (party, terms) in &party_terms {
                for (i, t) in terms.iter().enumerate() {
                    writeln!(w, "{party}\t{}\t{t}", i + 1)?;
                }
            }
            Ok(())
        })?;

        let record = self.records.get_mut(&Stage::Embed).expect("recorded above");
        record.stats = stats;
        self.state.model = Some(model);
        self.state.party_terms = party_terms;
        Ok(())
    }

    fn project_tokens(&self, tokens: Vec<&str>, what: &str) -> StageResult<(LabeledVectors, Projection, usize)> {
        let (vectors, missing) = LabeledVectors::from_model(self.model(), tokens);
        if !missing.is_empty() {
            log::warn!("{} {what} have no vector: {}", missing.len(), missing.join(", "));
        }
        let projection =
            project_umap(&vectors, &self.config.projection.umap_params()).map_err(|e| format!("{what}: {e}"))?;
        Ok((vectors, projection, missing.len()))
    }

    fn project(&mut self) -> StageResult<()> {
        let mut stats = BTreeMap::new();
        for party in PARTIES {
            let tokens: Vec<&str> = self.state.top_terms[&party].tokens().collect();
            let (_, projection, missing) = self.project_tokens(tokens, &format!("{party} top terms"))?;
            stat(&mut stats, &format!("missing_{party}"), missing);
            self.emit(Stage::Project, &format!("term_map_{party}.tsv"), |w| {
                projection.write_tsv(w, None)
            })?;
            let title = format!("Over-represented terms ({party})");
            self.emit(Stage::Project, &format!("term_map_{party}.svg"), |w| {
                emit_scatter_svg(w, &projection, None, &title)
            })?;
        }
        let cfg = self.config;
        let hash = self.section_hash(
            &(
                &cfg.topic,
                &cfg.logodds,
                &cfg.embedding,
                &cfg.projection,
                &cfg.inputs.vectors,
            ),
            &[&cfg.inputs.tweets],
        )?;
        self.record(Stage::Project, hash, stats);
        Ok(())
    }

    fn frames(&mut self) -> StageResult<()> {
        let cfg = self.config;
        let model = self.model();
        let set = load_microframes(self.input(&cfg.inputs.antonyms), model).map_err(err)?;
        let scorer = match &cfg.frames.stopwords {
            Some(words) => FrameScorer::with_stopwords(model, words.iter().map(|w| w.to_lowercase())),
            None => FrameScorer::new(model),
        };
        let c = self.corpora();
        let mut frames = Vec::new();
        let mut baselines: Vec<BaselineBias> = Vec::new();
        let mut unscorable = 0usize;
        for f in &set.frames {
            match scorer.baseline_bias(&c.background, f) {
                Ok(b) => {
                    frames.push(f.clone());
                    baselines.push(b);
                }
                Err(e) => {
                    log::warn!("{e}");
                    unscorable += 1;
                }
            }
        }
        if frames.is_empty() {
            return Err("no microframe can be scored on the background corpus".into());
        }
        let (d, r) = (&c.topical.democrat, &c.topical.republican);
        let diff = differential_microframes(&scorer, d, r, &frames, &baselines, cfg.frames.top_frames);

        let mut tweets = Vec::new();
        for (direction, rows, corpus) in [("D>R", &diff.a_over_b, d), ("R>D", &diff.b_over_a, r)] {
            for row in rows {
                let i = frames
                    .iter()
                    .position(|f| f.id() == row.frame)
                    .expect("ranked frame exists");
                for (rank, s) in top_documents(&scorer, corpus, &frames[i], &baselines[i], cfg.frames.top_documents)
                    .into_iter()
                    .enumerate()
                {
                    tweets.push(format!(
                        "{direction}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{}",
                        row.frame,
                        rank + 1,
                        s.doc.id,
                        s.doc.party,
                        s.bias,
                        s.intensity,
                        tsv_cell(&s.doc.text)
                    ));
                }
            }
        }

        self.emit(Stage::Frames, "frames_diff.tsv", |w| {
            write_differential_tsv(w, &diff, "D", "R")
        })?;
        self.emit(Stage::Frames, "frames_top_tweets.tsv", |w| {
            writeln!(w, "direction\tframe\trank\tdoc_id\tparty\tbias\tintensity\ttext")?;
            tweets.iter().try_for_each(|line| writeln!(w, "{line}"))
        })?;
        let mut stats = BTreeMap::new();
        stat(&mut stats, "frames", frames.len());
        stat(&mut stats, "skipped_oov", set.skipped_oov);
        stat(&mut stats, "skipped_invalid", set.skipped_invalid);
        stat(&mut stats, "unscorable", unscorable);
        let hash = self.section_hash(
            &(&cfg.topic, &cfg.embedding, &cfg.frames, &cfg.inputs.vectors),
            &[&cfg.inputs.tweets, &cfg.inputs.antonyms],
        )?;
        self.record(Stage::Frames, hash, stats);
        Ok(())
    }

    fn triples(&mut self) -> StageResult<&LoadedTriples> {
        if self.state.triples.is_none() {
            let loaded = load_triples(&self.input(&self.config.inputs.triples)).map_err(err)?;
            if loaded.triples.is_empty() {
                return Err("the triple file holds no usable triples".into());
            }
            self.state.triples = Some(loaded);
        }
        Ok(self.state.triples.as_ref().unwrap())
    }

    fn verbs(&mut self) -> StageResult<()> {
        let cfg = self.config;
        let all = self.triples()?.triples.clone();
        let mut stats = BTreeMap::new();
        for party in PARTIES {
            let verbs = top_verbs(of_party(&all, &party), cfg.verbs.top_verbs);
            let (vectors, projection, missing) =
                self.project_tokens(verbs.iter().map(String::as_str).collect(), &format!("{party} verbs"))?;
            stat(&mut stats, &format!("missing_{party}"), missing);
            let space = match cfg.verbs.cluster_space {
                ClusterSpace::Projection => projection.to_vectors(),
                ClusterSpace::Embedding => vectors,
            };
            let params = KMeansParams {
                k: cfg.verbs.clusters,
                restarts: cfg.verbs.restarts,
                max_iter: cfg.verbs.max_iter,
                seed: cfg.verbs.seed,
            };
            let clustering = kmeans(&space, &params).map_err(|e| format!("{party} verbs: {e}"))?;
            stat(
                &mut stats,
                &format!("inertia_{party}"),
                format!("{:.6}", clustering.inertia),
            );
            let assignment = clustering.assignment;
            self.emit(Stage::Verbs, &format!("verb_clusters_{party}.tsv"), |w| {
                projection.write_tsv(w, Some(&assignment))
            })?;
            let title = format!("Most frequent verbs ({party})");
            self.emit(Stage::Verbs, &format!("verb_clusters_{party}.svg"), |w| {
                emit_scatter_svg(w, &projection, Some(&assignment), &title)
            })?;
        }
        let hash = self.section_hash(
            &(
                &cfg.topic,
                &cfg.embedding,
                &cfg.projection,
                &cfg.verbs,
                &cfg.inputs.vectors,
            ),
            &[&cfg.inputs.tweets, &cfg.inputs.triples],
        )?;
        self.record(Stage::Verbs, hash, stats);
        Ok(())
    }

    fn roles(&mut self) -> StageResult<()> {
        let cfg = &self.config.roles;
        let loaded = self.triples()?.clone();
        let triples = filter_triples(&loaded.triples, cfg.max_role_tokens);

        let d_counts = combination_frequencies(of_party(&triples, &Party::D));
        let r_counts = combination_frequencies(of_party(&triples, &Party::R));
        let diff = differential_combinations(&d_counts, &r_counts, cfg.top_combinations);

        let mut agents = Vec::new();
        let mut patients = Vec::new();
        for party in PARTIES {
            let ap = top_agents_patients(of_party(&triples, &party), cfg.top_agents.max(cfg.top_patients));
            agents.push((party.clone(), ap.agents.into_iter().take(cfg.top_agents).collect()));
            patients.push((party, ap.patients.into_iter().take(cfg.top_patients).collect()));
        }

        let terms = |configured: &Vec<String>, party: Party| {
            if configured.is_empty() {
                self.state.party_terms.get(&party).cloned().unwrap_or_default()
            } else {
                configured.clone()
            }
        };
        let lists = MembershipLists::new(
            &cfg.us_terms,
            &cfg.them_terms,
            &terms(&cfg.democrat_terms, Party::D),
            &terms(&cfg.republican_terms, Party::R),
        );
        let tagged = categorize_memberships(&triples, &lists);
        let categories = category_counts(&tagged);
        let merge = PatientMerge {
            merge: cfg
                .merge
                .iter()
                .map(|(k, v)| (k.to_lowercase(), v.to_lowercase()))
                .collect(),
        };
        let rels = relationships(&tagged, &cfg.verb_sets, &merge, cfg.relationship_patients);

        self.emit(Stage::Roles, "roles_combinations.tsv", |w| {
            write_combinations_tsv(w, &diff, "D", "R")
        })?;
        self.emit(Stage::Roles, "roles_agents.tsv", |w| {
            write_ranked_tsv(w, "agent", &agents)
        })?;
        self.emit(Stage::Roles, "roles_patients.tsv", |w| {
            write_ranked_tsv(w, "patient", &patients)
        })?;
        self.emit(Stage::Roles, "roles_memberships.tsv", |w| {
            write_memberships_tsv(w, &categories)
        })?;
        self.emit(Stage::Roles, "relationships.tsv", |w| write_relationships_tsv(w, &rels))?;

        let mut stats = BTreeMap::new();
        stat(&mut stats, "loaded", loaded.triples.len());
        stat(&mut stats, "invalid", loaded.invalid);
        stat(&mut stats, "missing_roles", loaded.missing_roles);
        stat(&mut stats, "kept", triples.len());
        stat(&mut stats, "combinations_D", d_counts.len());
        stat(&mut stats, "combinations_R", r_counts.len());
        let c = self.config;
        let hash = self.section_hash(
            &(&c.roles, &c.topic, &c.embedding, &c.party_terms, &c.inputs.vectors),
            &[&c.inputs.tweets, &c.inputs.triples],
        )?;
        self.record(Stage::Roles, hash, stats);
        Ok(())
    }

    /// Lists every file in the output directory. Stage attribution comes
    /// from this run, or from the previous manifest for untouched files.
    fn write_manifest(&mut self, failure: Option<&StageError>) -> io::Result<Manifest> {
        let mut names: Vec<String> = Vec::new();
        for entry in fs::read_dir(&self.out_dir)? {
            let entry = entry?;
            if entry.file_type()?.is_file() {
                let name = entry.file_name().to_string_lossy().into_owned();
                if name != MANIFEST_FILE {
                    names.push(name);
                }
            }
        }
        names.sort();

        let previous = self.previous.take();
        let mut files = Vec::with_capacity(names.len());
        for name in names {
            let sha256 = file_sha256(&self.out_dir.join(&name))?;
            let stage = self.written.get(&name).copied().or_else(|| {
                previous
                    .as_ref()
                    .and_then(|m| m.file(&name))
                    .filter(|e| e.sha256 == sha256)
                    .and_then(|e| e.stage)
            });
            files.push(FileEntry {
                path: name,
                sha256,
                stage,
            });
        }

        let mut stages = previous.map(|m| m.stages).unwrap_or_default();
        stages.retain(|s, _| files.iter().any(|f| f.stage == Some(*s)));
        stages.extend(std::mem::take(&mut self.records));
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.config.hash(),
            status: if failure.is_some() { "failed" } else { "complete" }.to_string(),
            failure: failure.map(|f| Failure {
                stage: f.stage,
                error: f.message.clone(),
            }),
            stages,
            files,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(self.out_dir.join(MANIFEST_FILE), text)?;
        Ok(manifest)
    }
}
