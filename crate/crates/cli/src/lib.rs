//! Command implementations behind the `pilework` binary.
//!
//! Every command reads and writes artifacts under one workspace directory:
//!
//! ```text
//! index/corpus.jsonl          ingest
//! embeddings/documents.jsonl  embed
//! embeddings/cache/           embed, search, serve (embedding cache)
//! kg/facts.jsonl              build-kg
//! kg/report.json              build-kg
//! workspace.json              run-task, serve
//! ```

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use pilework_core::corpus::{ingest_corpus, CorpusError, CorpusFormat, FileTopicProvider};
use pilework_core::kg_build::{build_kg, write_kg_artifacts, DedupThresholds, KgBuildConfig, KgError};
use pilework_core::kg_query::{entity_context, rank_facts, search_entity, DEFAULT_ENTITY_CAP, DEFAULT_FACT_LIMIT};
use pilework_core::piles::{PileError, TaskKind, TaskParams, TaskTemplates, Workspace, DEFAULT_TEMPERATURE};
use pilework_core::providers::{ProviderConfig, ProviderError, Providers};
use pilework_core::search::{build_doc_embeddings, DocEmbeddings, SearchError, DEFAULT_SEARCH_K};
use pilework_core::{CorpusIndex, FactStore, SCHEMA_VERSION};
use pilework_server::{AppState, Artifacts, ServerConfig, StartupError};

/// Fixed artifact locations inside a workspace directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn index_dir(&self) -> PathBuf {
        self.root.join("index")
    }

    pub fn corpus(&self) -> PathBuf {
        self.index_dir().join("corpus.jsonl")
    }

    pub fn embeddings(&self) -> PathBuf {
        self.root.join("embeddings").join("documents.jsonl")
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.root.join("embeddings").join("cache")
    }

    pub fn kg_dir(&self) -> PathBuf {
        self.root.join("kg")
    }

    pub fn facts(&self) -> PathBuf {
        self.kg_dir().join(pilework_core::kg_build::FACTS_FILE)
    }

    pub fn report(&self) -> PathBuf {
        self.kg_dir().join(pilework_core::kg_build::REPORT_FILE)
    }

    pub fn workspace(&self) -> PathBuf {
        self.root.join(pilework_core::piles::WORKSPACE_FILE)
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing {}; run `pilework {command}` first", path.display())]
    MissingArtifact { path: PathBuf, command: &'static str },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Pile(#[from] PileError),
    #[error(transparent)]
    Startup(#[from] StartupError),
    #[error("{path}: {source}", path = path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn require(path: PathBuf, command: &'static str) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingArtifact { path, command })
    }
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(io_err(dir)),
        _ => Ok(()),
    }
}

#[derive(Debug, Parser)]
#[command(name = "pilework", version, about = "Document sensemaking pipeline and server")]
pub struct Cli {
    /// Workspace directory holding all artifacts.
    #[arg(long, global = true, default_value = ".", env = "PILEWORK_WORKSPACE")]
    pub workspace: PathBuf,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// Provider configuration file; defaults to offline mock providers.
    #[arg(long, global = true, env = "PILEWORK_PROVIDER_CONFIG")]
    pub provider_config: Option<PathBuf>,
    /// Task template overrides (JSON).
    #[arg(long, global = true, env = "PILEWORK_TASK_TEMPLATES")]
    pub templates: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read a corpus into the index.
    Ingest(IngestArgs),
    /// Embed every indexed document.
    Embed(EmbedArgs),
    /// Extract and deduplicate knowledge-graph facts.
    BuildKg(BuildKgArgs),
    /// Rank documents against a free-text query.
    Search(SearchArgs),
    /// Look up facts and related entities for an entity.
    Kg(KgArgs),
    /// Run an LLM task over a pile.
    RunTask(RunTaskArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    /// Corpus source: a JSONL file or a directory of text files.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory for the index (default: <workspace>/index).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Topic labels, one `{"id", "topic"}` record per line.
    #[arg(long)]
    pub topics: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EmbedArgs {
    /// Output file (default: <workspace>/embeddings/documents.jsonl).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BuildKgArgs {
    #[arg(long, default_value_t = DedupThresholds::default().entity)]
    pub threshold_entity: f64,
    #[arg(long, default_value_t = DedupThresholds::default().relation)]
    pub threshold_relation: f64,
    /// Output directory (default: <workspace>/kg).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub query: String,
    #[arg(long, default_value_t = DEFAULT_SEARCH_K)]
    pub k: usize,
}

#[derive(Debug, Clone, Args)]
pub struct KgArgs {
    #[arg(long)]
    pub entity: String,
    /// Text to rank the entity's facts against.
    #[arg(long, default_value = "")]
    pub context: String,
    #[arg(long, default_value_t = DEFAULT_FACT_LIMIT)]
    pub k: usize,
}

#[derive(Debug, Clone, Args)]
pub struct RunTaskArgs {
    /// Task kind (Analyze, Summarize, Extract, Classify, Generate, List,
    /// Explain, Answer, Custom).
    #[arg(long)]
    pub kind: TaskKind,
    /// Existing pile id in workspace.json.
    #[arg(long, conflicts_with = "docs")]
    pub pile: Option<String>,
    /// Create a new pile from these document ids.
    #[arg(long, value_delimiter = ',')]
    pub docs: Vec<String>,
    /// Name for a pile created with --docs.
    #[arg(long, default_value = "cli")]
    pub name: String,
    #[arg(long)]
    pub question: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub entity_types: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub concepts: Vec<String>,
    #[arg(long)]
    pub custom: Option<String>,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    pub temperature: f64,
    #[arg(long, default_value = "")]
    pub model: String,
    /// Print the assembled prompt without calling the provider.
    #[arg(long)]
    pub preview: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080, env = "PILEWORK_PORT")]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1", env = "PILEWORK_HOST")]
    pub host: String,
    /// Timeout for provider-bound requests, in seconds.
    #[arg(long, default_value_t = 120)]
    pub timeout_secs: u64,
}

/// Result of one command: structured data plus its text rendering.
#[derive(Debug, Clone)]
pub struct Output {
    pub data: Value,
    pub text: String,
}

impl Output {
    fn new(data: impl Serialize, text: String) -> Self {
        Self {
            data: serde_json::to_value(data).expect("output serializes"),
            text,
        }
    }

    /// `{"schemaVersion": 1, "data": ...}` on one line.
    pub fn to_json_line(&self) -> String {
        json!({ "schemaVersion": SCHEMA_VERSION, "data": self.data }).to_string()
    }
}

/// Shared inputs resolved from the global flags.
pub struct Context {
    pub layout: Layout,
    pub provider_config: ProviderConfig,
    pub templates: TaskTemplates,
}

impl Context {
    pub fn from_cli(cli: &Cli) -> Result<Self, CliError> {
        let provider_config = match &cli.provider_config {
            Some(p) => ProviderConfig::load(p)?,
            None => ProviderConfig::default(),
        };
        let templates = match &cli.templates {
            Some(p) => TaskTemplates::load(p)?,
            None => TaskTemplates::default(),
        };
        Ok(Self {
            layout: Layout::new(&cli.workspace),
            provider_config,
            templates,
        })
    }

    pub fn providers(&self) -> Result<Providers, CliError> {
        Ok(self.provider_config.build(Some(&self.layout.cache_dir()))?)
    }

    pub fn corpus(&self) -> Result<CorpusIndex, CliError> {
        let path = require(self.layout.corpus(), "ingest")?;
        Ok(ingest_corpus(&path, CorpusFormat::Jsonl)?)
    }

    pub fn embeddings(&self) -> Result<DocEmbeddings, CliError> {
        Ok(DocEmbeddings::load(&require(self.layout.embeddings(), "embed")?)?)
    }

    pub fn facts(&self) -> Result<FactStore, CliError> {
        Ok(FactStore::load(&require(self.layout.facts(), "build-kg")?)?)
    }

    pub fn workspace(&self) -> Result<Workspace, CliError> {
        let path = self.layout.workspace();
        if path.exists() {
            Ok(Workspace::load(&path)?)
        } else {
            Ok(Workspace::new("default"))
        }
    }
}

/// Run one command. `serve` blocks until the server stops.
pub fn execute(cli: &Cli) -> Result<Output, CliError> {
    let ctx = Context::from_cli(cli)?;
    match &cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Embed(a) => embed(&ctx, a),
        Command::BuildKg(a) => build_kg_cmd(&ctx, a),
        Command::Search(a) => search(&ctx, a),
        Command::Kg(a) => kg(&ctx, a),
        Command::RunTask(a) => run_task(&ctx, a),
        Command::Serve(a) => serve(&ctx, a),
    }
}

pub fn ingest(ctx: &Context, args: &IngestArgs) -> Result<Output, CliError> {
    let mut index = ingest_corpus(&args.input, CorpusFormat::detect(&args.input))?;
    if let Some(labels) = &args.topics {
        index = index.assign_topics(&FileTopicProvider::load(labels)?)?;
    }
    let out = match &args.out {
        Some(dir) => dir.join("corpus.jsonl"),
        None => ctx.layout.corpus(),
    };
    create_parent(&out)?;
    index.save(&out)?;
    let topics = index.topic_groups().len();
    Ok(Output::new(
        json!({ "documents": index.len(), "topics": topics, "path": out }),
        format!(
            "ingested {} documents ({topics} topics) into {}",
            index.len(),
            out.display()
        ),
    ))
}

pub fn embed(ctx: &Context, args: &EmbedArgs) -> Result<Output, CliError> {
    let index = ctx.corpus()?;
    let providers = ctx.providers()?;
    let table = build_doc_embeddings(&index, &providers.embedding)?;
    let out = args.out.clone().unwrap_or_else(|| ctx.layout.embeddings());
    create_parent(&out)?;
    table.save(&out).map_err(io_err(&out))?;
    let dim = providers.embedding.dim();
    Ok(Output::new(
        json!({ "documents": table.len(), "dimension": dim, "path": out }),
        format!(
            "embedded {} documents (dimension {dim}) into {}",
            table.len(),
            out.display()
        ),
    ))
}

pub fn build_kg_cmd(ctx: &Context, args: &BuildKgArgs) -> Result<Output, CliError> {
    let index = ctx.corpus()?;
    let providers = ctx.providers()?;
    let config = KgBuildConfig {
        thresholds: DedupThresholds {
            entity: args.threshold_entity,
            relation: args.threshold_relation,
        },
        ..Default::default()
    };
    let (store, report) = build_kg(&index, providers.generator.as_ref(), &providers.embedding, &config)?;
    let dir = args.out.clone().unwrap_or_else(|| ctx.layout.kg_dir());
    write_kg_artifacts(&dir, &store, &report)?;
    Ok(Output::new(
        json!({
            "facts": report.facts,
            "totalTriples": report.total_triples,
            "totalSkipped": report.total_skipped,
            "failures": report.failures,
            "path": dir,
        }),
        format!(
            "{} facts from {} triples ({} lines skipped, {} documents failed) in {}",
            report.facts,
            report.total_triples,
            report.total_skipped,
            report.failures,
            dir.display()
        ),
    ))
}

pub fn search(ctx: &Context, args: &SearchArgs) -> Result<Output, CliError> {
    let index = ctx.corpus()?;
    let table = ctx.embeddings()?;
    let providers = ctx.providers()?;
    let results = table.semantic_search(&providers.embedding, &args.query, args.k, None)?;
    let text = results
        .iter()
        .map(|r| {
            let title = index.get(&r.doc_id).map(|d| d.title.as_str()).unwrap_or("");
            format!("{:>3}. {:<16} {:.4}  {title}", r.rank, r.doc_id, r.score)
        })
        .collect::<Vec<_>>()
        .join("\n");
    Ok(Output::new(results, text))
}

pub fn kg(ctx: &Context, args: &KgArgs) -> Result<Output, CliError> {
    let store = ctx.facts()?;
    let providers = ctx.providers()?;
    let matches = search_entity(&store, &args.entity);
    let facts = rank_facts(&matches, &args.context, &providers.embedding, args.k)?;
    let context = entity_context(
        &store,
        &args.entity,
        &providers.embedding,
        DEFAULT_ENTITY_CAP,
        DEFAULT_ENTITY_CAP,
    )?;

    let mut text = format!("{} facts mention {:?}\n", matches.len(), context.entity);
    for f in &facts {
        let sources: Vec<&str> = f.fact.sources.iter().map(String::as_str).collect();
        text.push_str(&format!(
            "  {} | {} | {}  [{}]\n",
            f.fact.subject,
            f.fact.predicate,
            f.fact.object,
            sources.join(", ")
        ));
    }
    let connected: Vec<&str> = context.connected.iter().map(|(e, _)| e.as_str()).collect();
    let similar: Vec<&str> = context.similar.iter().map(|(e, _)| e.as_str()).collect();
    text.push_str(&format!(
        "connected: {}\nsimilar: {}",
        connected.join(", "),
        similar.join(", ")
    ));
    Ok(Output::new(
        json!({ "entity": context.entity, "total": matches.len(), "facts": facts, "context": context }),
        text,
    ))
}

fn task_params(args: &RunTaskArgs) -> TaskParams {
    let list = |v: &Vec<String>| (!v.is_empty()).then(|| v.clone());
    TaskParams {
        question: args.question.clone(),
        entity_types: list(&args.entity_types),
        concepts: list(&args.concepts),
        custom_text: args.custom.clone(),
        temperature: args.temperature,
        model: args.model.clone(),
    }
}

pub fn run_task(ctx: &Context, args: &RunTaskArgs) -> Result<Output, CliError> {
    let index = ctx.corpus()?;
    let mut ws = ctx.workspace()?;
    let pile = match &args.pile {
        Some(id) => ws.pile(id)?.id.clone(),
        None if args.docs.is_empty() => return Err(CliError::Usage("give --pile or --docs".into())),
        None => {
            let id = ws.create_pile(&args.name)?.id.clone();
            ws.add_docs(&id, &args.docs, &index)?;
            id
        }
    };
    let params = task_params(args);
    let task = ws.prepare_task(&pile, args.kind, &params, &index, &ctx.templates)?;
    if args.preview {
        let text = task.prompt.text.clone();
        return Ok(Output::new(task.prompt, text));
    }
    let providers = ctx.providers()?;
    let result = task.execute(providers.generator.as_ref())?;
    let record = ws.commit_task(task, result)?.clone();
    let path = ctx.layout.workspace();
    create_parent(&path)?;
    ws.save(&path)?;
    let text = format!(
        "[{} {} on pile {pile}]\n{}",
        record.id, record.task_kind, record.response
    );
    Ok(Output::new(record, text))
}

/// Load every artifact the service needs, naming the first missing one.
pub fn server_state(ctx: &Context, config: ServerConfig) -> Result<AppState, CliError> {
    let artifacts = Artifacts {
        corpus: ctx.corpus()?,
        embeddings: ctx.embeddings()?,
        facts: ctx.facts()?,
    };
    let workspace = ctx.workspace()?;
    Ok(AppState::new(
        artifacts,
        ctx.providers()?,
        ctx.templates.clone(),
        workspace,
        config,
    )?)
}

pub fn serve(ctx: &Context, args: &ServeArgs) -> Result<Output, CliError> {
    let config = ServerConfig {
        workspace_file: Some(ctx.layout.workspace()),
        provider_timeout: Duration::from_secs(args.timeout_secs),
        ..Default::default()
    };
    let state = server_state(ctx, config)?;
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .map_err(|e| CliError::Usage(format!("bad listen address: {e}")))?;
    let runtime = tokio::runtime::Runtime::new().map_err(io_err(Path::new("<runtime>")))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Usage(format!("cannot listen on {addr}: {e}")))?;
        eprintln!(
            "listening on http://{}",
            listener.local_addr().map_err(io_err(Path::new("<socket>")))?
        );
        pilework_server::serve(listener, state)
            .await
            .map_err(io_err(Path::new("<server>")))
    })?;
    Ok(Output::new(json!({ "stopped": true }), "server stopped".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("pilework").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn layout_paths() {
        let l = Layout::new("/w");
        assert_eq!(l.corpus(), Path::new("/w/index/corpus.jsonl"));
        assert_eq!(l.embeddings(), Path::new("/w/embeddings/documents.jsonl"));
        assert_eq!(l.cache_dir(), Path::new("/w/embeddings/cache"));
        assert_eq!(l.facts(), Path::new("/w/kg/facts.jsonl"));
        assert_eq!(l.report(), Path::new("/w/kg/report.json"));
        assert_eq!(l.workspace(), Path::new("/w/workspace.json"));
    }

    #[test]
    fn envelope_line() {
        let out = Output::new(json!({"n": 1}), "one".into());
        let v: Value = serde_json::from_str(&out.to_json_line()).unwrap();
        assert_eq!(v, json!({"schemaVersion": 1, "data": {"n": 1}}));
    }

    #[test]
    fn run_task_flags_map_to_params() {
        let cli = parse(&[
            "run-task",
            "--kind",
            "extract",
            "--docs",
            "a,b",
            "--entity-types",
            "people,places",
            "--temperature",
            "0.3",
        ]);
        let Command::RunTask(args) = cli.command else {
            panic!("wrong command")
        };
        assert_eq!(args.kind, TaskKind::Extract);
        assert_eq!(args.docs, ["a", "b"]);
        let p = task_params(&args);
        assert_eq!(
            p.entity_types.as_deref(),
            Some(&["people".to_string(), "places".to_string()][..])
        );
        assert_eq!(p.concepts, None);
        assert_eq!(p.temperature, 0.3);
        assert_eq!(p.model, "");
    }

    #[test]
    fn defaults_and_conflicts() {
        let cli = parse(&["search", "--query", "x"]);
        let Command::Search(args) = cli.command else {
            panic!("wrong command")
        };
        assert_eq!(args.k, DEFAULT_SEARCH_K);
        let cli = parse(&["build-kg"]);
        let Command::BuildKg(args) = cli.command else {
            panic!("wrong command")
        };
        assert_eq!((args.threshold_entity, args.threshold_relation), (0.90, 0.85));
        let cli = parse(&["serve"]);
        let Command::Serve(args) = cli.command else {
            panic!("wrong command")
        };
        assert_eq!(args.host, "127.0.0.1");
        assert!(
            Cli::try_parse_from(["pilework", "run-task", "--kind", "list", "--pile", "p1", "--docs", "a"]).is_err()
        );
        assert!(Cli::try_parse_from(["pilework", "run-task", "--kind", "bogus", "--pile", "p1"]).is_err());
    }
}
