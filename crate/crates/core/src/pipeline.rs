//! Stage orchestration: configuration, flat on-disk artifacts, run
//! manifests and the collated report.
//!
//! Every stage reads its inputs from the configured paths or from earlier
//! stages' directories under the output root, and writes CSV/NDJSON/JSON
//! files plus a `manifest.json`. Outputs other than the manifest's timing
//! fields are pure functions of inputs and configuration.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attributes::{self, AttributeError, StateAttributeTable};
use crate::catalog::{self, CatalogError, DomainCatalog, NewsComment, NewsTally, NewsType, TrustSummary};
use crate::contagion::{self, ContagionError, InferenceRule, StateGraph};
use crate::diffusion::{self, ReachFilter, Unit, UrlTimeline};
use crate::geolocation::{self, CohortComparison, GeoError, LocationTable};
use crate::ingest::{self, CommentRecord, FieldMap, IngestError, IngestStats, UrlMention};
use crate::interaction::{self, InteractionError, Scope, StateCentroids};
use crate::scaling::{self, CirculationModel, CirculationTable, Metric, ModelGroup, ScalingError, StateTallies};
use crate::states::State;
use crate::stats::{self, Direction, StatsError};
use crate::synth::{self, Ledger, SynthConfig, SynthError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Synth,
    Ingest,
    Classify,
    Geolocate,
    Attributes,
    Scale,
    Regress,
    Diffusion,
    Connectivity,
    Contagion,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 11] = [
        Stage::Synth,
        Stage::Ingest,
        Stage::Classify,
        Stage::Geolocate,
        Stage::Attributes,
        Stage::Scale,
        Stage::Regress,
        Stage::Diffusion,
        Stage::Connectivity,
        Stage::Contagion,
        Stage::Report,
    ];

    /// Analysis stages in dependency order; `synth` is optional and comes first.
    pub const PIPELINE: [Stage; 10] = [
        Stage::Ingest,
        Stage::Classify,
        Stage::Geolocate,
        Stage::Attributes,
        Stage::Scale,
        Stage::Regress,
        Stage::Diffusion,
        Stage::Connectivity,
        Stage::Contagion,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Classify => "classify",
            Stage::Geolocate => "geolocate",
            Stage::Attributes => "attributes",
            Stage::Scale => "scale",
            Stage::Regress => "regress",
            Stage::Diffusion => "diffusion",
            Stage::Connectivity => "connectivity",
            Stage::Contagion => "contagion",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("stage `{needed_by}` needs {missing}; run `{stage}` first")]
    Dependency {
        stage: Stage,
        needed_by: Stage,
        missing: PathBuf,
    },
    #[error("input error: {0}")]
    Input(Box<dyn std::error::Error + Send + Sync>),
    #[error("analysis error: {0}")]
    Analysis(Box<dyn std::error::Error + Send + Sync>),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{failed} ledger check(s) failed; see {report}")]
    LedgerMismatch { failed: usize, report: PathBuf },
}

impl PipelineError {
    /// Process exit status for this error class.
    pub fn exit_code(&self) -> u8 {
        match self {
            PipelineError::Config { .. } => 2,
            PipelineError::Dependency { .. } => 3,
            PipelineError::Input(_) => 4,
            PipelineError::Analysis(_) => 5,
            PipelineError::Io { .. } => 6,
            PipelineError::LedgerMismatch { .. } => 7,
        }
    }

    fn config(key: &str, message: impl Into<String>) -> Self {
        PipelineError::Config {
            key: key.to_string(),
            message: message.into(),
        }
    }
}

macro_rules! error_class {
    ($variant:ident: $($t:ty),*) => {
        $(impl From<$t> for PipelineError {
            fn from(e: $t) -> Self {
                PipelineError::$variant(Box::new(e))
            }
        })*
    };
}
error_class!(Input: IngestError, CatalogError, GeoError, AttributeError, csv::Error, serde_json::Error);
error_class!(Analysis: StatsError, ScalingError, ContagionError, InteractionError);

impl From<SynthError> for PipelineError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Infeasible { key, message } => PipelineError::config(&format!("synth.{key}"), message),
            other => PipelineError::Input(Box::new(other)),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogInput {
    pub path: PathBuf,
    pub label: NewsType,
}

/// Raw input files. Anything left unset falls back to the `synth` stage's
/// output directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub archive: Option<PathBuf>,
    pub submissions: Option<PathBuf>,
    pub subreddits: Option<PathBuf>,
    pub populations: Option<PathBuf>,
    pub centroids: Option<PathBuf>,
    pub attributes: Option<PathBuf>,
    pub trust_scores: Option<PathBuf>,
    pub catalog: Vec<CatalogInput>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub bin_km: u64,
    pub damping: f64,
    pub min_states: usize,
    pub alpha: f64,
    pub scopes: Vec<Scope>,
    pub rule: InferenceRule,
    pub direction: Direction,
    pub intercept: bool,
    pub groups: Vec<ModelGroup>,
    pub max_k: usize,
    pub decay_min_km: u64,
    pub pagerank_tol: f64,
    pub pagerank_max_iter: usize,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            bin_km: 100,
            damping: 0.85,
            min_states: 5,
            alpha: 0.05,
            scopes: vec![Scope::AllSubreddits, Scope::NonLocationSubreddits],
            rule: InferenceRule::Chain,
            direction: Direction::Both,
            intercept: true,
            groups: ModelGroup::ALL.to_vec(),
            max_k: 10,
            decay_min_km: 100,
            pagerank_tol: 1e-10,
            pagerank_max_iter: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Worker threads for intra-stage parallelism.
    pub threads: usize,
    pub fields: FieldMap,
    pub inputs: Inputs,
    pub params: Params,
    pub synth: SynthConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            threads: 1,
            fields: FieldMap::default(),
            inputs: Inputs::default(),
            params: Params::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl Config {
    /// Parses and validates a TOML configuration. Every rejection names the
    /// offending key.
    pub fn from_toml_str(text: &str) -> Result<Config, PipelineError> {
        let de = toml::Deserializer::parse(text).map_err(|e| PipelineError::config("<document>", e.to_string()))?;
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let message = e.inner().to_string();
            let key = match unknown_field(&message) {
                Some(field) if path == "." => field.to_string(),
                Some(field) => format!("{path}.{field}"),
                None => path,
            };
            PipelineError::Config { key, message }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Config::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let p = &self.params;
        if self.threads == 0 {
            return Err(PipelineError::config("threads", "must be at least 1"));
        }
        if p.bin_km == 0 {
            return Err(PipelineError::config("params.bin_km", "must be positive"));
        }
        if !(p.damping > 0.0 && p.damping < 1.0) {
            return Err(PipelineError::config("params.damping", "must be in (0, 1)"));
        }
        if p.min_states < 2 {
            return Err(PipelineError::config("params.min_states", "must be at least 2"));
        }
        if !(p.alpha > 0.0 && p.alpha < 1.0) {
            return Err(PipelineError::config("params.alpha", "must be in (0, 1)"));
        }
        if p.scopes.is_empty() {
            return Err(PipelineError::config("params.scopes", "must list at least one scope"));
        }
        if p.groups.is_empty() {
            return Err(PipelineError::config("params.groups", "must list at least one group"));
        }
        if p.max_k < 1 {
            return Err(PipelineError::config("params.max_k", "must be at least 1"));
        }
        if !(p.pagerank_tol > 0.0 && p.pagerank_tol.is_finite()) {
            return Err(PipelineError::config("params.pagerank_tol", "must be positive"));
        }
        if p.pagerank_max_iter == 0 {
            return Err(PipelineError::config("params.pagerank_max_iter", "must be positive"));
        }
        let f = &self.fields;
        for (key, name) in [
            ("fields.id", &f.id),
            ("fields.author", &f.author),
            ("fields.subreddit", &f.subreddit),
            ("fields.created_utc", &f.created_utc),
            ("fields.body", &f.body),
        ] {
            if name.is_empty() {
                return Err(PipelineError::config(key, "field name must be non-empty"));
            }
        }
        self.synth.validate().map_err(PipelineError::from)
    }
}

fn unknown_field(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("unknown field `")?;
    rest.split('`').next()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub bytes: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: Stage,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub parameters: serde_json::Value,
    pub notes: Vec<String>,
    pub threads: usize,
    pub started_unix: f64,
    pub wall_time_s: f64,
}

pub const MANIFEST_FILE: &str = "manifest.json";

struct Ctx<'a> {
    p: &'a Pipeline,
    stage: Stage,
    inputs: Vec<Artifact>,
    outputs: Vec<Artifact>,
    notes: Vec<String>,
    parameters: serde_json::Map<String, serde_json::Value>,
}

fn count_rows(name: &str, bytes: &[u8]) -> Option<u64> {
    let lines = bytes.iter().filter(|&&b| b == b'\n').count() as u64;
    if name.ends_with(".csv") {
        Some(lines.saturating_sub(1))
    } else if name.ends_with(".ndjson") {
        Some(lines)
    } else {
        None
    }
}

impl<'a> Ctx<'a> {
    fn dir(&self) -> PathBuf {
        self.p.stage_dir(self.stage)
    }

    fn read(&mut self, path: &Path) -> Result<Vec<u8>, PipelineError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        self.inputs.push(Artifact {
            path: path.display().to_string(),
            bytes: bytes.len() as u64,
            rows: None,
        });
        Ok(bytes)
    }

    /// Path of an earlier stage's artifact, or a dependency error.
    fn upstream(&self, stage: Stage, file: &str) -> Result<PathBuf, PipelineError> {
        let path = self.p.stage_dir(stage).join(file);
        if path.is_file() {
            Ok(path)
        } else {
            Err(PipelineError::Dependency {
                stage,
                needed_by: self.stage,
                missing: path,
            })
        }
    }

    fn read_upstream(&mut self, stage: Stage, file: &str) -> Result<Vec<u8>, PipelineError> {
        let path = self.upstream(stage, file)?;
        self.read(&path)
    }

    /// A configured raw input, or the synth stage's file of the same role.
    fn raw(&self, configured: &Option<PathBuf>, synth_file: &str) -> Result<PathBuf, PipelineError> {
        match configured {
            Some(p) if p.is_file() => Ok(p.clone()),
            Some(p) => Err(PipelineError::Io {
                path: p.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "configured input not found"),
            }),
            None => self.upstream(Stage::Synth, synth_file),
        }
    }

    fn write(&mut self, file: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = self.dir().join(file);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        self.outputs.push(Artifact {
            path: path.display().to_string(),
            bytes: bytes.len() as u64,
            rows: count_rows(file, bytes),
        });
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, file: &str, value: &T) -> Result<(), PipelineError> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(file, &bytes)
    }

    fn write_ndjson<T: Serialize>(&mut self, file: &str, items: &[T]) -> Result<(), PipelineError> {
        let mut bytes = Vec::new();
        for item in items {
            serde_json::to_writer(&mut bytes, item)?;
            bytes.push(b'\n');
        }
        self.write(file, &bytes)
    }

    fn param<T: Serialize>(&mut self, key: &str, value: T) {
        self.parameters
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
    }

    fn note(&mut self, msg: impl Into<String>) {
        self.notes.push(msg.into());
    }
}

fn parse_ndjson<T: DeserializeOwned>(bytes: &[u8]) -> Result<Vec<T>, PipelineError> {
    bytes
        .split(|&b| b == b'\n')
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_slice(l).map_err(PipelineError::from))
        .collect()
}

fn csv_bytes<F, E>(f: F) -> Result<Vec<u8>, PipelineError>
where
    F: FnOnce(&mut Vec<u8>) -> Result<(), E>,
    PipelineError: From<E>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Artifact file names, shared by the stages and the report.
pub mod files {
    pub const COMMENTS: &str = "comments.ndjson";
    pub const MENTIONS: &str = "mentions.ndjson";
    pub const INGEST_STATS: &str = "stats.json";
    pub const NEWS: &str = "news_comments.ndjson";
    pub const TALLIES_CSV: &str = "tallies.csv";
    pub const TALLIES_JSON: &str = "tallies.json";
    pub const CATALOG: &str = "catalog.json";
    pub const TRUST: &str = "trust.json";
    pub const LOCATIONS: &str = "locations.csv";
    pub const GEO_SUMMARY: &str = "summary.json";
    pub const ADOPTION: &str = "adoption.csv";
    pub const ADOPTION_FIT: &str = "adoption_fit.json";
    pub const COHORT: &str = "cohort.json";
    pub const ATTRIBUTES: &str = "attributes.csv";
    pub const CORRELATIONS: &str = "correlations.csv";
    pub const STATE_TALLIES: &str = "state_tallies.csv";
    pub const CIRCULATION: &str = "circulation.csv";
    pub const FITS: &str = "fits.json";
    pub const TABLE3: &str = "table3.csv";
    pub const MODELS: &str = "models.json";
    pub const TIMELINES: &str = "timelines.ndjson";
    pub const REACH: &str = "reach.csv";
    pub const CASCADE: &str = "cascade.csv";
    pub const PROFILES: &str = "profiles.csv";
    pub const CONNECTIVITY: &str = "connectivity.json";
    pub const PAGERANK: &str = "pagerank.csv";
    pub const DIFFERENTIAL: &str = "differential.csv";
    pub const ASSORTATIVITY: &str = "assortativity.csv";
    pub const GRAPHS: &str = "graphs.json";
    pub const LEDGER_CHECKS: &str = "ledger_checks.json";

    pub fn pairs(scope: super::Scope) -> String {
        format!("pairs_{}.csv", scope.as_str())
    }

    pub fn edges(t: super::NewsType) -> String {
        format!("edges_{t}.csv")
    }
}

pub struct Pipeline {
    pub config: Config,
    pub out_dir: PathBuf,
}

impl Pipeline {
    pub fn new(config: Config, out_dir: impl Into<PathBuf>) -> Pipeline {
        Pipeline {
            config,
            out_dir: out_dir.into(),
        }
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.out_dir.join(stage.as_str())
    }

    /// Runs one stage on a pool of `threads` workers and writes its manifest.
    pub fn run(&self, stage: Stage) -> Result<Manifest, PipelineError> {
        let started = Instant::now();
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0.0, |d| d.as_secs_f64());
        let dir = self.stage_dir(stage);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut ctx = Ctx {
            p: self,
            stage,
            inputs: Vec::new(),
            outputs: Vec::new(),
            notes: Vec::new(),
            parameters: serde_json::Map::new(),
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.threads)
            .build()
            .map_err(|e| PipelineError::config("threads", e.to_string()))?;
        let result = pool.install(|| match stage {
            Stage::Synth => run_synth(&mut ctx),
            Stage::Ingest => run_ingest(&mut ctx),
            Stage::Classify => run_classify(&mut ctx),
            Stage::Geolocate => run_geolocate(&mut ctx),
            Stage::Attributes => run_attributes(&mut ctx),
            Stage::Scale => run_scale(&mut ctx),
            Stage::Regress => run_regress(&mut ctx),
            Stage::Diffusion => run_diffusion(&mut ctx),
            Stage::Connectivity => run_connectivity(&mut ctx),
            Stage::Contagion => run_contagion(&mut ctx),
            Stage::Report => run_report(&mut ctx),
        });
        // A ledger mismatch still leaves a complete report behind.
        if let Err(e) = &result {
            if !matches!(e, PipelineError::LedgerMismatch { .. }) {
                return Err(result.unwrap_err());
            }
        }
        let manifest = Manifest {
            stage,
            inputs: ctx.inputs,
            outputs: ctx.outputs,
            parameters: serde_json::Value::Object(ctx.parameters),
            notes: ctx.notes,
            threads: self.config.threads,
            started_unix,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(io_err(&path))?;
        result.map(|_| manifest)
    }

    /// Runs every analysis stage in order, stopping at the first failure.
    pub fn run_all(&self) -> Result<Vec<Manifest>, PipelineError> {
        Stage::PIPELINE.iter().map(|&s| self.run(s)).collect()
    }
}

fn run_synth(ctx: &mut Ctx) -> Result<(), PipelineError> {
    let cfg = &ctx.p.config.synth;
    ctx.param("synth", cfg);
    let out = synth::generate(cfg)?;
    out.write_to(&ctx.dir())?;
    let dir = ctx.dir();
    let mut names = vec![
        synth::ARCHIVE_FILE.to_string(),
        synth::LEDGER_FILE.to_string(),
        synth::SUBREDDITS_FILE.to_string(),
        synth::POPULATIONS_FILE.to_string(),
        synth::CENTROIDS_FILE.to_string(),
        synth::ATTRIBUTES_FILE.to_string(),
        synth::TRUST_FILE.to_string(),
    ];
    names.extend(NewsType::ALL.map(synth::catalog_file));
    for name in names {
        let path = dir.join(&name);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let rows = match name.as_str() {
            synth::ARCHIVE_FILE => Some(out.ledger.comments),
            n => count_rows(n, &bytes),
        };
        ctx.outputs.push(Artifact {
            path: path.display().to_string(),
            bytes: bytes.len() as u64,
            rows,
        });
    }
    Ok(())
}

fn run_ingest(ctx: &mut Ctx) -> Result<(), PipelineError> {
    let path = ctx.raw(&ctx.p.config.inputs.archive, synth::ARCHIVE_FILE)?;
    let data = ctx.read(&path)?;
    let fields = ctx.p.config.fields.clone();
    ctx.param("fields", &fields);
    let (records, stats) = ingest::parse_sharded(&data, &fields, ctx.p.config.threads)?;
    drop(data);
    let mentions: Vec<UrlMention> = records.iter().flat_map(ingest::mentions_of).collect();
    ctx.write_ndjson(files::COMMENTS, &records)?;
    ctx.write_ndjson(files::MENTIONS, &mentions)?;
    ctx.write_json(files::INGEST_STATS, &stats)?;
    if stats.malformed > 0 {
        ctx.note(format!("{} malformed lines skipped", stats.malformed));
    }
    Ok(())
}

fn load_catalog(ctx: &mut Ctx) -> Result<DomainCatalog, PipelineError> {
    let lists: Vec<(PathBuf, NewsType)> = if ctx.p.config.inputs.catalog.is_empty() {
        NewsType::ALL
            .iter()
            .map(|&t| Ok((ctx.upstream(Stage::Synth, &synth::catalog_file(t))?, t)))
            .collect::<Result<_, PipelineError>>()?
    } else {
        ctx.p.config.inputs.catalog.iter().map(|c| (c.path.clone(), c.label)).collect()
    };
    for (path, _) in &lists {
        ctx.read(path)?;
    }
    Ok(catalog::load_catalog(&lists)?)
}

fn run_classify(ctx: &mut Ctx) -> Result<(), PipelineError> {
    let mentions: Vec<UrlMention> = parse_ndjson(&ctx.read_upstream(Stage::Ingest, files::MENTIONS)?)?;
    let catalog = load_catalog(ctx)?;
    let (news, tallies) = catalog::classify_mentions(&mentions, &catalog);
    ctx.write_ndjson(files::NEWS, &news)?;
    let csv = csv_bytes(|w| catalog::write_tallies_csv(w, &tallies))?;
    ctx.write(files::TALLIES_CSV, &csv)?;
    ctx.write_json(files::TALLIES_JSON, &tallies)?;
    let counts: BTreeMap<NewsType, usize> = NewsType::ALL
        .iter()
        .map(|&t| (t, catalog.label_counts()[t.index()]))
        .collect();
    ctx.write_json(files::CATALOG, &counts)?;

    let trust_path = match &ctx.p.config.inputs.trust_scores {
        Some(p) => Some(p.clone()),
        None => ctx.upstream(Stage::Synth, synth::TRUST_FILE).ok(),
    };
    if let Some(path) = trust_path {
        let bytes = ctx.read(&path)?;
        let scores = catalog::read_trust_scores(&bytes[..])?;
        let summary = catalog::validate_trust_scores(&catalog, &scores);
        if !summary.ordered {
            ctx.note("trust-score means are not ordered reputable > lowcred > fake");
        }
        ctx.write_json(files::TRUST, &summary)?;
    } else {
        ctx.note("no trust scores supplied; validation skipped");
    }
    Ok(())
}

fn read_locations(ctx: &mut Ctx) -> Result<LocationTable, PipelineError> {
    let bytes = ctx.read_upstream(Stage::Geolocate, files::LOCATIONS)?;
    Ok(LocationTable::read_csv(&bytes[..])?)
}

fn read_news(ctx: &mut Ctx) -> Result<Vec<NewsComment>, PipelineError> {
    parse_ndjson(&ctx.read_upstream(Stage::Classify, files::NEWS)?)
}

fn read_comments(ctx: &mut Ctx) -> Result<Vec<CommentRecord>, PipelineError> {
    parse_ndjson(&ctx.read_upstream(Stage::Ingest, files::COMMENTS)?)
}

fn load_subreddit_map(ctx: &mut Ctx) -> Result<geolocation::SubredditStateMap, PipelineError> {
    let path = ctx.raw(&ctx.p.config.inputs.subreddits, synth::SUBREDDITS_FILE)?;
    let bytes = ctx.read(&path)?;
    Ok(geolocation::load_subreddit_state_map(&bytes[..])?)
}

fn run_geolocate(ctx: &mut Ctx) -> Result<(), PipelineError> {
    let records = read_comments(ctx)?;
    let news = read_news(ctx)?;
    let map = load_subreddit_map(ctx)?;
    let pop_path = ctx.raw(&ctx.p.config.inputs.populations, synth::POPULATIONS_FILE)?;
    let populations = geolocation::read_populations(&ctx.read(&pop_path)?[..])?;

    let (table, summary) = geolocation::assign_user_states(&records, &map);
    let csv = csv_bytes(|w| table.write_csv(w))?;
    ctx.write(files::LOCATIONS, &csv)?;
    ctx.write_json(files::GEO_SUMMARY, &summary)?;

    let (rows, fit) = geolocation::adoption_and_scaling(&table.users_per_state(), &populations)?;
    let csv = csv_bytes(|w| -> Result<(), csv::Error> {
        let mut cw = csv::Writer::from_writer(w);
        for r in &rows {
            cw.serialize(r)?;
        }
        cw.flush()?;
        Ok(())
    })?;
    ctx.write(files::ADOPTION, &csv)?;
    ctx.write_json(files::ADOPTION_FIT, &fit)?;

    let geotagged = table.geotagged();
    let non_geotagged: HashSet<&str> = records
        .iter()
        .filter(|r| !r.is_deleted() && !geotagged.contains(r.author.as_str()))
        .map(|r| r.author.as_str())
        .collect();
    match geolocation::cohort_compare(&geotagged, &non_geotagged, &records, &news) {
        Ok(cmp) => ctx.write_json(files::COHORT, &cmp)?,
        Err(e) => ctx.note(format!("cohort comparison skipped: {e}")),
    }
    Ok(())
}

fn read_adoption(bytes: &[u8]) -> Result<BTreeMap<State, f64>, PipelineError> {
    #[derive(Deserialize)]
    struct Row {
        state: State,
        adoption: f64,
    }
    let mut out = BTreeMap::new();
    for row in csv::Reader::from_reader(bytes).deserialize() {
        let row: Row = row?;
        out.insert(row.state, row.adoption);
    }
    Ok(out)
}

fn write_attribute_table(table: &StateAttributeTable) -> Result<Vec<u8>, PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["state".to_string()];
    header.extend(table.variables().iter().cloned());
    w.write_record(&header)?;
    for s in table.states() {
        let mut row = vec![s.code().to_string()];
        for v in table.variables() {
            row.push(table.get(s, v).map_or_else(String::new, |x| format!("{x}")));
        }
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| PipelineError::Io {
        path: PathBuf::from(files::ATTRIBUTES),
        source: e.into_error(),
    })
}

fn run_attributes(ctx: &mut Ctx) -> Result<(), PipelineError> {
    let path = ctx.raw(&ctx.p.config.inputs.attributes, synth::ATTRIBUTES_FILE)?;
    let mut table = attributes::load_attributes(&ctx.read(&path)?[..])?;
    let adoption = read_adoption(&ctx.read_upstream(Stage::Geolocate, files::ADOPTION)?)?;
    // Only states present in the attribute file get an adoption value.
    table.set_column("adoption", &adoption)?;
    ctx.write(files::ATTRIBUTES, &write_attribute_table(&table)?)?;

    let alpha = ctx.p.config.params.alpha;
    ctx.param("alpha", alpha);
    let vars: Vec<String> = table.variables().to_vec();
    let var_refs: Vec<&str> = vars.iter().map(String::as_str).collect();
    let corr = attributes::cross_correlation(&table, &var_refs, alpha)?;
    let csv = csv_bytes(|w| corr.write_csv(w))?;
    ctx.write(files::CORRELATIONS, &csv)?;
    let incomplete = table.incomplete_states(&var_refs)?;
    if !incomplete.is_empty() {
        let codes: Vec<&str> = incomplete.iter().map(|s| s.code()).collect();
        ctx.note(format!("states with missing attributes: {}", codes.join(" ")));
    }
    Ok(())
}

fn circulation(ctx: &mut Ctx, tallies: &StateTallies) -> Result<CirculationTable, PipelineError> {
    let types: Vec<NewsType> = NewsType::ALL
        .into_iter()
        .filter(|&t| tallies.usable_states(t) >= 3)
        .collect();
    for t in NewsType::ALL.into_iter().filter(|t| !types.contains(t)) {
        ctx.note(format!("{t}: fewer than 3 states with news and users; no circulation fit"));
    }
    Ok(scaling::circulation_residual(tallies, &types, ctx.p.config.params.intercept)?)
}

fn run_scale(ctx: &mut Ctx) -> Result<(), PipelineError> {
    let news = read_news(ctx)?;
    let locations = read_locations(ctx)?;
    let tallies = StateTallies::from_news(&news, &locations);
    let csv = csv_bytes(|w| tallies.write_csv(w))?;
    ctx.write(files::STATE_TALLIES, &csv)?;
    ctx.param("intercept", ctx.p.config.params.intercept);
    let table = circulation(ctx, &tallies)?;
    let csv = csv_bytes(|w| table.write_csv(w))?;
    ctx.write(files::CIRCULATION, &csv)?;
    ctx.write_json(files::FITS, &table.fits)?;
    Ok(())
}

#[derive(Serialize)]
struct ModelRecord<'a> {
    news_type: NewsType,
    group: ModelGroup,
    metric: Metric,
    states: &'a [State],
    dropped: &'a [State],
    selected: &'a [String],
    fit: &'a stats::OlsResult,
    trace: &'a [stats::Step],
}

fn run_regress(ctx: &mut Ctx) -> Result<(), PipelineError> {
    let tallies = StateTallies::read_csv(&ctx.read_upstream(Stage::Scale, files::STATE_TALLIES)?[..])?;
    let table = attributes::load_attributes(&ctx.read_upstream(Stage::Attributes, files::ATTRIBUTES)?[..])?;
    let circ = circulation(ctx, &tallies)?;
    let params = ctx.p.config.params.clone();
    ctx.param("direction", params.direction);
    ctx.param("groups", &params.groups);

    let mut suite: Vec<CirculationModel> = Vec::new();
    for metric in [Metric::Residual, Metric::Normalized] {
        for t in circ.fits.iter().map(|f| f.news_type) {
            let dependent = match metric {
                Metric::Residual => circ.residuals(t),
                Metric::Normalized => circ.rates(t),
            };
            for &g in &params.groups {
                match scaling::circulation_model(t, &dependent, &table, g, metric, params.direction) {
                    Ok(m) => suite.push(m),
                    Err(e) => ctx.note(format!("{t} ({g}, {metric:?}): {e}")),
                }
            }
        }
    }
    for metric in [Metric::Residual, Metric::Normalized] {
        let models: Vec<CirculationModel> = suite.iter().filter(|m| m.metric == metric).cloned().collect();
        let name = format!("models_{}.csv", metric_name(metric));
        let csv = csv_bytes(|w| scaling::write_suite_csv(w, &models))?;
        ctx.write(&name, &csv)?;
    }
    let table3: Vec<CirculationModel> = suite
        .iter()
        .filter(|m| m.metric == Metric::Residual && m.group == ModelGroup::All)
        .cloned()
        .collect();
    let csv = csv_bytes(|w| scaling::write_suite_csv(w, &table3))?;
    ctx.write(files::TABLE3, &csv)?;
    let records: Vec<ModelRecord> = suite
        .iter()
        .map(|m| ModelRecord {
            news_type: m.news_type,
            group: m.group,
            metric: m.metric,
            states: &m.states,
            dropped: &m.dropped,
            selected: m.fit().predictors(),
            fit: m.fit(),
            trace: &m.selection.trace,
        })
        .collect();
    ctx.write_json(files::MODELS, &records)?;
    Ok(())
}

fn metric_name(m: Metric) -> &'static str {
    match m {
        Metric::Residual => "residual",
        Metric::Normalized => "normalized",
    }
}

fn timelines(ctx: &mut Ctx) -> Result<Vec<UrlTimeline>, PipelineError> {
    let news = read_news(ctx)?;
    let locations = read_locations(ctx)?;
    Ok(diffusion::build_url_timelines(&news, &locations))
}

fn run_diffusion(ctx: &mut Ctx) -> Result<(), PipelineError> {
    let tls = timelines(ctx)?;
    let max_k = ctx.p.config.params.max_k;
    ctx.param("max_k", max_k);
    ctx.write_ndjson(files::TIMELINES, &tls)?;
    let mut reach = diffusion::reach_distribution(&tls, Unit::Authors);
    reach.extend(diffusion::reach_distribution(&tls, Unit::States));
    let csv = csv_bytes(|w| diffusion::write_reach_csv(w, &reach))?;
    ctx.write(files::REACH, &csv)?;
    let mut cascade = diffusion::cascade_curve(&tls, Unit::Authors, max_k, ReachFilter::AtLeast);
    cascade.extend(diffusion::cascade_curve(&tls, Unit::States, max_k, ReachFilter::AtLeast));
    let csv = csv_bytes(|w| diffusion::write_cascade_csv(w, &cascade))?;
    ctx.write(files::CASCADE, &csv)?;
    Ok(())
}

#[derive(Serialize)]
struct ScopeSummary {
    scope: Scope,
    pairs: usize,
    stats: interaction::PairStats,
    decay_slope: Option<f64>,
}

fn run_connectivity(ctx: &mut Ctx) -> Result<(), PipelineError> {
    let records = read_comments(ctx)?;
    let locations = read_locations(ctx)?;
    let map = load_subreddit_map(ctx)?;
    let centroids = match &ctx.p.config.inputs.centroids {
        Some(p) => StateCentroids::read_csv(&ctx.read(&p.clone())?[..])?,
        None => match ctx.upstream(Stage::Synth, synth::CENTROIDS_FILE) {
            Ok(p) => StateCentroids::read_csv(&ctx.read(&p)?[..])?,
            Err(_) => {
                ctx.note("using built-in state centroids");
                StateCentroids::default()
            }
        },
    };
    let comments = ingest::build_author_index(&records)?;
    let posts = match ctx.p.config.inputs.submissions.clone() {
        Some(p) => {
            let data = ctx.read(&p)?;
            let (subs, _) = ingest::parse_sharded(&data, &ctx.p.config.fields, ctx.p.config.threads)?;
            Some(ingest::build_author_index(&subs)?)
        }
        None => None,
    };
    let params = ctx.p.config.params.clone();
    ctx.param("bin_km", params.bin_km);
    ctx.param("scopes", &params.scopes);
    ctx.param("decay_min_km", params.decay_min_km);

    let mut profiles = Vec::new();
    let mut summaries = Vec::new();
    for &scope in &params.scopes {
        let pairs = interaction::build_interaction_pairs(&records, &comments, posts.as_ref(), &locations, &map, scope);
        let csv = csv_bytes(|w| -> Result<(), csv::Error> {
            let mut cw = csv::Writer::from_writer(w);
            cw.write_record(["user_a", "user_b", "replies"])?;
            for ((a, b), n) in &pairs.pairs {
                cw.write_record([a.as_str(), b.as_str(), &n.to_string()])?;
            }
            cw.flush()?;
            Ok(())
        })?;
        ctx.write(&files::pairs(scope), &csv)?;
        let profile = interaction::connectivity_profile(&pairs, &locations, &centroids, params.bin_km)?;
        let slope = match profile.decay_slope(params.decay_min_km) {
            Ok(s) => Some(s),
            Err(e) => {
                ctx.note(format!("{}: no decay slope: {e}", scope.as_str()));
                None
            }
        };
        summaries.push(ScopeSummary {
            scope,
            pairs: pairs.len(),
            stats: pairs.stats.clone(),
            decay_slope: slope,
        });
        profiles.push(profile);
    }
    let csv = csv_bytes(|w| interaction::write_profiles_csv(w, &profiles))?;
    ctx.write(files::PROFILES, &csv)?;
    ctx.write_json(files::CONNECTIVITY, &summaries)?;
    Ok(())
}

#[derive(Serialize)]
struct GraphSummary<'a> {
    news_type: NewsType,
    rule: InferenceRule,
    min_states: usize,
    urls_used: usize,
    nodes: usize,
    edges: usize,
    total_weight: f64,
    diagnostic: Option<&'a str>,
}

fn run_contagion(ctx: &mut Ctx) -> Result<(), PipelineError> {
    let tls = timelines(ctx)?;
    let table = attributes::load_attributes(&ctx.read_upstream(Stage::Attributes, files::ATTRIBUTES)?[..])?;
    let params = ctx.p.config.params.clone();
    ctx.param("min_states", params.min_states);
    ctx.param("rule", params.rule);
    ctx.param("damping", params.damping);
    ctx.param("pagerank_tol", params.pagerank_tol);

    let mut graphs: BTreeMap<NewsType, StateGraph> = BTreeMap::new();
    let mut scores: BTreeMap<NewsType, BTreeMap<State, f64>> = BTreeMap::new();
    for t in NewsType::ALL {
        let g = contagion::infer_state_network(&tls, t, params.min_states, params.rule);
        let csv = csv_bytes(|w| g.write_edges_csv(w))?;
        ctx.write(&files::edges(t), &csv)?;
        if !g.nodes.is_empty() {
            scores.insert(t, contagion::pagerank(&g, params.damping, params.pagerank_tol, params.pagerank_max_iter)?);
        }
        graphs.insert(t, g);
    }

    let csv = csv_bytes(|w| -> Result<(), csv::Error> {
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record(["news_type", "state", "pagerank"])?;
        for (t, sc) in &scores {
            for (s, v) in sc {
                cw.write_record([t.as_str(), s.code(), &format!("{v}")])?;
            }
        }
        cw.flush()?;
        Ok(())
    })?;
    ctx.write(files::PAGERANK, &csv)?;

    let empty = BTreeMap::new();
    let reputable = scores.get(&NewsType::Reputable).unwrap_or(&empty);
    let csv = csv_bytes(|w| -> Result<(), PipelineError> {
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record(["news_type", "state", "differential"])?;
        for t in [NewsType::Fake, NewsType::Lowcred, NewsType::Satire] {
            let Some(sc) = scores.get(&t) else { continue };
            let (a, b) = contagion::align_scores(sc, reputable);
            for (s, v) in contagion::pagerank_differential(&a, &b)? {
                cw.write_record([t.as_str(), s.code(), &format!("{v}")])?;
            }
        }
        cw.flush().map_err(|e| PipelineError::Io {
            path: PathBuf::from(files::DIFFERENTIAL),
            source: e,
        })?;
        Ok(())
    })?;
    ctx.write(files::DIFFERENTIAL, &csv)?;

    let csv = csv_bytes(|w| -> Result<(), csv::Error> {
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record(["news_type", "variable", "assortativity", "note"])?;
        for (t, g) in &graphs {
            for v in table.variables() {
                let attr: BTreeMap<State, f64> = table.states().filter_map(|s| Some((s, table.get(s, v)?))).collect();
                let (value, note) = match contagion::assortativity(g, &attr) {
                    Ok(r) => (format!("{r}"), String::new()),
                    Err(e) => (String::new(), e.to_string()),
                };
                cw.write_record([t.as_str(), v.as_str(), &value, &note])?;
            }
        }
        cw.flush()?;
        Ok(())
    })?;
    ctx.write(files::ASSORTATIVITY, &csv)?;

    let summaries: Vec<GraphSummary> = graphs
        .iter()
        .map(|(t, g)| GraphSummary {
            news_type: *t,
            rule: g.rule,
            min_states: g.min_states,
            urls_used: g.urls_used,
            nodes: g.nodes.len(),
            edges: g.edges.len(),
            total_weight: g.total_weight(),
            diagnostic: g.diagnostic.as_deref(),
        })
        .collect();
    ctx.write_json(files::GRAPHS, &summaries)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(out: &mut Vec<LedgerCheck>, name: &str, pass: bool, detail: impl Into<String>) {
    out.push(LedgerCheck {
        name: name.to_string(),
        pass,
        detail: detail.into(),
    });
}

fn read_pairs(bytes: &[u8]) -> Result<BTreeMap<(String, String), u64>, PipelineError> {
    let mut out = BTreeMap::new();
    for row in csv::Reader::from_reader(bytes).records() {
        let row = row?;
        let n = row.get(2).unwrap_or("").parse::<u64>().map_err(|e| PipelineError::Input(Box::new(e)))?;
        out.insert((row[0].to_string(), row[1].to_string()), n);
    }
    Ok(out)
}

/// Compares every stage artifact against the planted ledger.
fn ledger_checks(ctx: &mut Ctx, ledger: &Ledger) -> Result<Vec<LedgerCheck>, PipelineError> {
    let mut out = Vec::new();

    let stats: IngestStats = serde_json::from_slice(&ctx.read_upstream(Stage::Ingest, files::INGEST_STATS)?)?;
    check(
        &mut out,
        "ingest.records",
        stats.records == ledger.comments && stats.malformed == 0,
        format!("parsed {} of {} planted, {} malformed", stats.records, ledger.comments, stats.malformed),
    );
    check(
        &mut out,
        "ingest.deleted",
        stats.deleted == ledger.deleted_comments,
        format!("{} vs {}", stats.deleted, ledger.deleted_comments),
    );
    let mentions = count_rows(".ndjson", &ctx.read_upstream(Stage::Ingest, files::MENTIONS)?).unwrap_or(0);
    check(
        &mut out,
        "ingest.url_mentions",
        mentions == ledger.url_mentions,
        format!("{mentions} vs {}", ledger.url_mentions),
    );

    let tallies: Vec<NewsTally> = serde_json::from_slice(&ctx.read_upstream(Stage::Classify, files::TALLIES_JSON)?)?;
    for t in NewsType::ALL {
        let want = &ledger.tallies[t.index()];
        let got = tallies.iter().find(|x| x.news_type == t);
        let pass = got.is_some_and(|g| {
            g.unique_comments == want.unique_comments
                && g.unique_users == want.unique_users
                && g.unique_sites == want.unique_sites
                && g.unique_urls == want.unique_urls
                && g.mentions == want.mentions
        });
        check(&mut out, &format!("classify.tally.{t}"), pass, format!("{got:?} vs {want:?}"));
    }
    let counts: BTreeMap<NewsType, u64> = serde_json::from_slice(&ctx.read_upstream(Stage::Classify, files::CATALOG)?)?;
    let got: Vec<u64> = NewsType::ALL.iter().map(|t| counts.get(t).copied().unwrap_or(0)).collect();
    check(
        &mut out,
        "classify.catalog_counts",
        got == ledger.catalog_counts,
        format!("{got:?} vs {:?}", ledger.catalog_counts),
    );
    if let Ok(path) = ctx.upstream(Stage::Classify, files::TRUST) {
        let trust: TrustSummary = serde_json::from_slice(&ctx.read(&path)?)?;
        let pass = trust.means.iter().zip(&ledger.trust_means).all(|(a, b)| match (a, b) {
            (Some(a), Some(b)) => (a - b).abs() <= 1e-12,
            (None, None) => true,
            _ => false,
        });
        check(&mut out, "classify.trust_means", pass, format!("{:?} vs {:?}", trust.means, ledger.trust_means));
    }

    let locations = read_locations(ctx)?;
    let mut wrong = Vec::new();
    for (author, want) in &ledger.assignments {
        let got = locations.get(author).map(|u| u.state);
        if got != Some(*want) {
            wrong.push(author.clone());
        }
    }
    check(
        &mut out,
        "geolocate.assignments",
        wrong.is_empty() && locations.len() == ledger.assignments.len(),
        format!(
            "{} of {} mismatched, {} mapped vs {} planted",
            wrong.len(),
            ledger.assignments.len(),
            locations.len(),
            ledger.assignments.len()
        ),
    );
    let users = locations.users_per_state();
    check(
        &mut out,
        "geolocate.users_per_state",
        users == ledger.users_per_state,
        format!("{} states vs {}", users.len(), ledger.users_per_state.len()),
    );
    if let Ok(path) = ctx.upstream(Stage::Geolocate, files::COHORT) {
        let cohort: CohortComparison = serde_json::from_slice(&ctx.read(&path)?)?;
        for (name, got, want) in [
            ("geotagged", &cohort.geotagged, &ledger.geotagged),
            ("non_geotagged", &cohort.non_geotagged, &ledger.non_geotagged),
        ] {
            let n = want.users as f64;
            let pass = got.users == want.users
                && got.mean_comments == want.comments as f64 / n
                && (0..4).all(|i| got.sharer_fraction[i] == want.sharers[i] as f64 / n);
            check(&mut out, &format!("geolocate.cohort.{name}"), pass, format!("{got:?} vs {want:?}"));
        }
    } else {
        check(&mut out, "geolocate.cohort", false, "cohort.json missing");
    }

    let tallies = StateTallies::read_csv(&ctx.read_upstream(Stage::Scale, files::STATE_TALLIES)?[..])?;
    let mismatched: Vec<State> = ledger
        .state_counts
        .iter()
        .filter(|(s, c)| NewsType::ALL.iter().any(|&t| tallies.count(**s, t) != c[t.index()]))
        .map(|(s, _)| *s)
        .collect();
    check(
        &mut out,
        "scale.state_counts",
        mismatched.is_empty(),
        format!("mismatched states: {mismatched:?}"),
    );

    let tls: Vec<UrlTimeline> = parse_ndjson(&ctx.read_upstream(Stage::Diffusion, files::TIMELINES)?)?;
    let by_url: BTreeMap<&str, &UrlTimeline> = tls.iter().map(|t| (t.url.as_str(), t)).collect();
    let mut bad = 0usize;
    for lt in &ledger.timelines {
        let mut want: Vec<(i64, &str, &str, Option<State>)> = lt
            .events
            .iter()
            .map(|e| (e.created_utc, e.comment_id.as_str(), e.author.as_str(), e.state))
            .collect();
        want.sort();
        let ok = by_url.get(lt.url.as_str()).is_some_and(|t| {
            t.news_type == lt.news_type
                && t.events
                    .iter()
                    .map(|e| (e.created_utc, e.comment_id.as_str(), e.author.as_str(), e.state))
                    .eq(want.iter().copied())
        });
        bad += usize::from(!ok);
    }
    check(
        &mut out,
        "diffusion.timelines",
        bad == 0 && tls.len() == ledger.timelines.len(),
        format!("{bad} mismatched; {} built vs {} planted", tls.len(), ledger.timelines.len()),
    );

    for &scope in &ctx.p.config.params.scopes.clone() {
        let Ok(path) = ctx.upstream(Stage::Connectivity, &files::pairs(scope)) else {
            continue;
        };
        let got = read_pairs(&ctx.read(&path)?)?;
        let want: BTreeMap<(String, String), u64> = ledger
            .pairs
            .iter()
            .filter_map(|p| {
                let n = match scope {
                    Scope::AllSubreddits => p.replies,
                    Scope::NonLocationSubreddits => p.non_location_replies,
                };
                (n > 0).then(|| ((p.a.clone(), p.b.clone()), n))
            })
            .collect();
        check(
            &mut out,
            &format!("connectivity.pairs.{}", scope.as_str()),
            got == want,
            format!("{} pairs vs {} planted", got.len(), want.len()),
        );
    }
    Ok(out)
}

#[derive(Serialize)]
struct PlantedVsFitted {
    news_type: NewsType,
    planted_beta: f64,
    fitted_beta: Option<f64>,
}

fn copy_upstream(ctx: &mut Ctx, stage: Stage, file: &str, as_name: &str) -> Result<Vec<u8>, PipelineError> {
    let bytes = ctx.read_upstream(stage, file)?;
    ctx.write(as_name, &bytes)?;
    Ok(bytes)
}

fn csv_to_json(bytes: &[u8]) -> Result<Vec<BTreeMap<String, String>>, PipelineError> {
    let mut reader = csv::Reader::from_reader(bytes);
    let headers = reader.headers()?.clone();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        rows.push(headers.iter().zip(rec.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect());
    }
    Ok(rows)
}

fn run_report(ctx: &mut Ctx) -> Result<(), PipelineError> {
    // Fail fast, naming the earliest missing stage.
    let required = [
        (Stage::Classify, files::TALLIES_CSV),
        (Stage::Geolocate, files::LOCATIONS),
        (Stage::Scale, files::FITS),
        (Stage::Regress, files::TABLE3),
        (Stage::Diffusion, files::REACH),
        (Stage::Connectivity, files::PROFILES),
        (Stage::Contagion, files::GRAPHS),
    ];
    for (stage, file) in required {
        ctx.upstream(stage, file)?;
    }

    let t1 = copy_upstream(ctx, Stage::Classify, files::TALLIES_CSV, "table1.csv")?;
    ctx.write_json("table1.json", &csv_to_json(&t1)?)?;
    let t3 = copy_upstream(ctx, Stage::Regress, files::TABLE3, "table3.csv")?;
    ctx.write_json("table3.json", &csv_to_json(&t3)?)?;
    let f3 = copy_upstream(ctx, Stage::Connectivity, files::PROFILES, "fig3_connectivity.csv")?;
    ctx.write_json("fig3_connectivity.json", &csv_to_json(&f3)?)?;
    let reach = copy_upstream(ctx, Stage::Diffusion, files::REACH, "fig5_reach.csv")?;
    ctx.write_json("fig5_reach.json", &csv_to_json(&reach)?)?;
    let cascade = copy_upstream(ctx, Stage::Diffusion, files::CASCADE, "fig5_cascade.csv")?;
    ctx.write_json("fig5_cascade.json", &csv_to_json(&cascade)?)?;
    let pr = copy_upstream(ctx, Stage::Contagion, files::PAGERANK, "contagion_pagerank.csv")?;
    ctx.write_json("contagion_pagerank.json", &csv_to_json(&pr)?)?;

    #[derive(Deserialize, Serialize)]
    struct FitRow {
        news_type: NewsType,
        beta: f64,
        intercept: Option<f64>,
        r_squared: f64,
        regime: scaling::Regime,
        states_fitted: usize,
        excluded: Vec<State>,
    }
    let fits: Vec<FitRow> = serde_json::from_slice(&ctx.read_upstream(Stage::Scale, files::FITS)?)?;
    ctx.write_json("scaling.json", &fits)?;

    // Ledger checks apply only when the archive is the synthetic one.
    if ctx.p.config.inputs.archive.is_none() {
        if let Ok(path) = ctx.upstream(Stage::Synth, synth::LEDGER_FILE) {
            let ledger: Ledger = serde_json::from_slice(&ctx.read(&path)?)?;
            let planted: Vec<PlantedVsFitted> = NewsType::ALL
                .iter()
                .map(|&t| PlantedVsFitted {
                    news_type: t,
                    planted_beta: ledger.betas[t.index()],
                    fitted_beta: fits.iter().find(|f| f.news_type == t).map(|f| f.beta),
                })
                .collect();
            ctx.write_json("planted_vs_fitted.json", &planted)?;
            let checks = ledger_checks(ctx, &ledger)?;
            ctx.write_json(files::LEDGER_CHECKS, &checks)?;
            let failed = checks.iter().filter(|c| !c.pass).count();
            if failed > 0 {
                return Err(PipelineError::LedgerMismatch {
                    failed,
                    report: ctx.dir().join(files::LEDGER_CHECKS),
                });
            }
        }
    }
    Ok(())
}

/// Stage names with the set of earlier stages each one reads from.
pub fn dependencies(stage: Stage) -> BTreeSet<Stage> {
    use Stage::*;
    let deps: &[Stage] = match stage {
        Synth | Ingest => &[],
        Classify => &[Ingest],
        Geolocate => &[Ingest, Classify],
        Attributes => &[Geolocate],
        Scale => &[Classify, Geolocate],
        Regress => &[Scale, Attributes],
        Diffusion => &[Classify, Geolocate],
        Connectivity => &[Ingest, Geolocate],
        Contagion => &[Classify, Geolocate, Attributes],
        Report => &[Classify, Geolocate, Scale, Regress, Diffusion, Connectivity, Contagion],
    };
    deps.iter().copied().collect()
}
