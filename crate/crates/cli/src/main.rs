mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;

/// Generative tool retrieval experiments.
///
/// Every command reads a run configuration (TOML, overridden by flags) and
/// writes its artifacts under `<out-dir>/<config hash>/`.
#[derive(Parser, Debug)]
#[command(name = "tooltok", version, about)]
struct Cli {
    #[command(flatten)]
    opts: GlobalOpts,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct GlobalOpts {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root of the run directories.
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,

    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Seed for every stochastic component.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Tool registry: a JSON/JSONL file or a directory of them.
    #[arg(long, global = true)]
    registry: Option<PathBuf>,

    /// Query annotations (JSONL `{query, relevant, domain}`).
    #[arg(long, global = true)]
    annotations: Option<PathBuf>,

    /// Raw ReAct trajectories (JSONL).
    #[arg(long, global = true)]
    trajectories: Option<PathBuf>,

    /// Simulated tool responses (JSONL `{tool, params, body}`).
    #[arg(long, global = true)]
    fixtures: Option<PathBuf>,

    /// HTTP endpoints (JSONL `{tool, url_template, method, timeout_ms}`).
    #[arg(long, global = true)]
    endpoints: Option<PathBuf>,

    /// Index scheme: atomic, semantic, numeric[:width], hierarchical[:branching[:seed]].
    #[arg(long, global = true)]
    scheme: Option<String>,

    /// Retrieval candidate pool: in-domain or multi-domain.
    #[arg(long, global = true)]
    setting: Option<String>,

    /// Additive smoothing of the count scorer.
    #[arg(long, global = true)]
    alpha: Option<f64>,

    /// Beam width for retrieval.
    #[arg(long, global = true)]
    beam_width: Option<usize>,

    /// Comma-separated NDCG cutoffs.
    #[arg(long, global = true, value_delimiter = ',')]
    cutoffs: Option<Vec<usize>>,

    /// Announce ground-truth tools before the first thought.
    #[arg(long, global = true)]
    gt_tools: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load and validate the registry; writes registry.jsonl.
    Ingest,
    /// Build vocabulary and tool index; writes vocab.tsv and index.jsonl.
    Index,
    /// Token-length histogram of the index; writes stats.json.
    Stats,
    /// Build the training corpora; writes memorization.jsonl, retrieval.jsonl,
    /// agent.jsonl, rejects.jsonl and corpus_stats.txt.
    BuildData,
    /// Train the count scorer on the corpora; writes scorer.json.
    TrainScorer,
    /// Retrieve tools for one query.
    Retrieve {
        #[arg(long)]
        query: String,
        #[arg(short, long, default_value_t = 5)]
        k: usize,
        #[arg(long, value_enum, default_value_t = Method::Generative)]
        method: Method,
    },
    /// NDCG per domain; writes ndcg_<method>_<setting>.csv.
    EvalRetrieval {
        #[arg(long, value_enum, default_value_t = Method::Generative)]
        method: Method,
    },
    /// Run agent sessions over the annotated queries (or one --query);
    /// writes trajectories.jsonl and agent_summary.json.
    AgentRun {
        #[arg(long)]
        query: Option<String>,
        /// Run at most this many sessions.
        #[arg(long)]
        limit: Option<usize>,
        /// Decode actions without the trie.
        #[arg(long)]
        unconstrained: bool,
    },
    /// Hallucination rate of a trajectory log, or of constrained versus
    /// unconstrained sessions; writes hallucination.json.
    EvalHallucination {
        /// Existing trajectory log to score instead of running sessions.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Method {
    Generative,
    Bm25,
}

/// A failed command: usage problems exit with 2, data problems with 1.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.into())
    }
}

fn effective_config(opts: &GlobalOpts) -> Result<RunConfig, Failure> {
    let mut cfg = match &opts.config {
        Some(path) => RunConfig::from_file(path).map_err(Failure::Usage)?,
        None => RunConfig::default(),
    };
    macro_rules! apply {
        ($($field:ident),*) => {$(
            if let Some(v) = &opts.$field {
                cfg.$field = v.clone().into();
            }
        )*};
    }
    apply!(seed, registry, annotations, trajectories, fixtures, endpoints, scheme, setting, alpha, cutoffs);
    if let Some(w) = opts.beam_width {
        cfg.decode.beam_width = w;
    }
    cfg.gt_tools |= opts.gt_tools;
    cfg.decode.seed = cfg.seed;
    cfg.validate().map_err(Failure::Usage)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = effective_config(&cli.opts)?;
    if let Some(n) = cli.opts.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let ctx = commands::Context::new(cfg, &cli.opts.out_dir)?;
    match cli.command {
        Command::Ingest => ctx.ingest(),
        Command::Index => ctx.index(),
        Command::Stats => ctx.stats(),
        Command::BuildData => ctx.build_data(),
        Command::TrainScorer => ctx.train_scorer(),
        Command::Retrieve { query, k, method } => ctx.retrieve(&query, k, method == Method::Bm25),
        Command::EvalRetrieval { method } => ctx.eval_retrieval(method == Method::Bm25),
        Command::AgentRun {
            query,
            limit,
            unconstrained,
        } => ctx.agent_run(query, limit, unconstrained),
        Command::EvalHallucination { log, limit } => ctx.eval_hallucination(log, limit),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // help and version exit 0, everything else is a usage error
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
