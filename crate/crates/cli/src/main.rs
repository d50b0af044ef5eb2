//! `xtra`: preprocess, cluster, train, infer, export and evaluate
//! cross-lingual topic models from the command line.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "xtra", version, about = "Cross-lingual neural topic modeling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

/// Flags that override keys of the config file.
#[derive(Debug, Args)]
struct Overrides {
    /// Flat TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding every intermediate and output file.
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,
    /// Line-delimited `{"id": ...}` records, one per embedding row.
    #[arg(long, global = true)]
    embedding_ids: Option<PathBuf>,
    #[arg(long, global = true)]
    reference: Option<PathBuf>,
    /// Number of topics K (and clusters T).
    #[arg(long, global = true)]
    topics: Option<usize>,
    #[arg(long, global = true)]
    pivot: Option<String>,
    #[arg(long, global = true)]
    svd_rank: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    lambda1: Option<f64>,
    #[arg(long, global = true)]
    lambda2: Option<f64>,
    #[arg(long, global = true)]
    lambda3: Option<f64>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    /// Words per topic in exports.
    #[arg(long, global = true)]
    top: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split the corpus and build both vocabularies.
    Preprocess,
    /// Cluster document embeddings and derive the topic prior.
    Cluster,
    /// Train the model.
    Train,
    /// Topic proportions for a split of the corpus.
    Infer {
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Write the top words of every topic.
    ExportTopics,
    /// CNPMI, TU and TQ of the exported topics.
    EvalTopics,
    /// Intra- and cross-lingual classification with topic proportions.
    EvalClf,
    /// Rate topics with an external LLM endpoint.
    EvalLlm {
        /// `intra` or `cross`.
        #[arg(long, default_value = "intra")]
        task: String,
    },
}

/// Failure classes mapped onto exit codes 1 and 2.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<xtra::Error> for Failure {
    fn from(e: xtra::Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl Overrides {
    fn apply(self, mut c: RunConfig) -> RunConfig {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { c.$f = v; })*};
        }
        set!(work_dir, topics, pivot, seed, epochs, lr, lambda1, lambda2, lambda3, batch_size, top);
        macro_rules! set_opt {
            ($($f:ident),*) => {$(if self.$f.is_some() { c.$f = self.$f; })*};
        }
        set_opt!(corpus, embeddings, embedding_ids, reference, svd_rank);
        c
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let base = match &cli.overrides.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = cli.overrides.apply(base);
    cfg.validate()?;
    match cli.command {
        Command::Preprocess => commands::preprocess(&cfg),
        Command::Cluster => commands::cluster(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Infer { split } => commands::infer(&cfg, &split),
        Command::ExportTopics => commands::export_topics(&cfg),
        Command::EvalTopics => commands::eval_topics(&cfg),
        Command::EvalClf => commands::eval_clf(&cfg),
        Command::EvalLlm { task } => commands::eval_llm(&cfg, &task),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
