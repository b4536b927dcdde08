mod commands;
mod config;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Layers, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, configuration or input files (exit 2).
    Usage(String),
    /// The pipeline itself failed (exit 1).
    Failure(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

#[derive(Parser)]
#[command(name = "gcr", version, about = "Graph-constrained reasoning over a knowledge graph")]
struct Cli {
    #[command(flatten)]
    common: Common,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Default)]
struct Common {
    /// Knowledge graph as tab-separated head, relation, tail lines.
    #[arg(long, global = true)]
    kg: Option<PathBuf>,
    /// Questions as JSON lines.
    #[arg(long, global = true)]
    qa: Option<PathBuf>,
    /// Token vocabulary as a JSON object of token to id.
    #[arg(long, global = true)]
    vocab: Option<PathBuf>,
    /// Prebuilt trie file.
    #[arg(long, global = true)]
    trie: Option<PathBuf>,
    /// Hop limit L.
    #[arg(long, global = true)]
    hops: Option<u32>,
    /// Beam width K.
    #[arg(long, global = true)]
    beam: Option<usize>,
    /// `uniform`, `echo`, `table:<file>` or a scoring server URL.
    #[arg(long, global = true)]
    scorer: Option<String>,
    /// `stub:majority`, `stub:<file>` or a chat-completions URL.
    #[arg(long, global = true)]
    chat: Option<String>,
    #[arg(long, global = true)]
    cache_capacity: Option<usize>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Answer token budget; 0 decodes paths only.
    #[arg(long, global = true)]
    max_answer_tokens: Option<usize>,
    /// `key = value` settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct QuestionArgs {
    #[arg(long)]
    question: String,
    /// Question entity (repeatable).
    #[arg(long = "entity", required = true)]
    entities: Vec<String>,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Enumerate paths from the given entities and write a trie file.
    BuildTrie {
        /// Start entity (repeatable). Defaults to every question entity in --qa.
        #[arg(long = "entity")]
        entities: Vec<String>,
    },
    /// Print the top-K grounded paths and hypothesis answers for a question.
    Decode(QuestionArgs),
    /// Answer one question with decoding plus one chat call.
    Answer(QuestionArgs),
    /// Run the pipeline over a QA file and write a metrics report.
    Eval {
        /// Report every runtime as 0 so reruns are byte-identical.
        #[arg(long)]
        no_timings: bool,
    },
    /// Write fine-tuning instances built from shortest paths.
    GenTrain {
        /// Shortest paths kept per (entity, answer) pair.
        #[arg(long, default_value_t = gcr_core::trainset::DEFAULT_CAP_PER_PAIR)]
        cap: usize,
    },
}

fn flag_layer(c: &Common) -> BTreeMap<&'static str, String> {
    let mut m = BTreeMap::new();
    let mut put = |k: &'static str, v: Option<String>| {
        if let Some(v) = v {
            m.insert(k, v);
        }
    };
    let p = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    put("kg", p(&c.kg));
    put("qa", p(&c.qa));
    put("vocab", p(&c.vocab));
    put("trie", p(&c.trie));
    put("hops", c.hops.map(|v| v.to_string()));
    put("beam", c.beam.map(|v| v.to_string()));
    put("scorer", c.scorer.clone());
    put("chat", c.chat.clone());
    put("cache_capacity", c.cache_capacity.map(|v| v.to_string()));
    put("jobs", c.jobs.map(|v| v.to_string()));
    put("out", p(&c.out));
    put("seed", c.seed.map(|v| v.to_string()));
    put("max_answer_tokens", c.max_answer_tokens.map(|v| v.to_string()));
    m
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            config::parse_file(&text, path)?
        }
        None => BTreeMap::new(),
    };
    let env = |k: &str| std::env::var(k).ok();
    let cfg = RunConfig::resolve(&Layers {
        flags: flag_layer(&cli.common),
        env: &env,
        file,
    })?;
    log::debug!("seed {}", cfg.seed);
    match cli.cmd {
        Cmd::BuildTrie { entities } => commands::build_trie(&cfg, &entities),
        Cmd::Decode(q) => commands::decode(&cfg, &q.question, &q.entities, q.json),
        Cmd::Answer(q) => commands::answer(&cfg, &q.question, &q.entities, q.json),
        Cmd::Eval { no_timings } => commands::eval(&cfg, !no_timings),
        Cmd::GenTrain { cap } => commands::gen_train(&cfg, cap),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
