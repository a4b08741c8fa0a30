mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

/// Mine, generate, rerank and evaluate variable names for C++ functions.
#[derive(Parser)]
#[command(name = "namerepair", version)]
struct Cli {
    /// JSON file with option values; a top-level object named after the
    /// subcommand takes precedence over the rest of the document.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract functions, mask one identifier each, write JSONL.
    Mine(MineFlags),
    /// Cut a mined stream into train, pool and validation files.
    Split(SplitFlags),
    /// Produce candidate names for masked examples.
    Generate(GenerateFlags),
    /// Train the dual-encoder reranker from examples and candidates.
    TrainReranker(TrainFlags),
    /// Reorder candidate lists with a trained reranker.
    Rerank(RerankFlags),
    /// Score candidates against gold names.
    Eval(EvalFlags),
}

macro_rules! flags {
    ($(#[$meta:meta])* struct $name:ident { $($(#[$fmeta:meta])* $field:ident : $ty:ty,)* }) => {
        $(#[$meta])*
        #[derive(Args, Serialize)]
        pub struct $name {
            $(
                $(#[$fmeta])*
                #[serde(skip_serializing_if = "Option::is_none")]
                pub $field: Option<$ty>,
            )*
        }
    };
}

flags! {
    struct MineFlags {
        #[arg(long)]
        input_dir: PathBuf,
        /// File listing source paths, one per line.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_functions: usize,
        /// Placeholder index n in `<ID_n>`.
        #[arg(long)]
        placeholder: u32,
    }
}

flags! {
    struct SplitFlags {
        #[arg(long = "in")]
        #[serde(rename = "in")]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        train_count: usize,
        #[arg(long)]
        pool_skip: usize,
        #[arg(long)]
        pool_size: usize,
        #[arg(long)]
        val_size: usize,
        #[arg(long)]
        seed: u64,
    }
}

flags! {
    struct GenerateFlags {
        #[arg(long = "in")]
        #[serde(rename = "in")]
        input: PathBuf,
        /// `http` or `file`.
        #[arg(long)]
        backend: String,
        /// Candidate file replayed by the file backend.
        #[arg(long)]
        replay: PathBuf,
        #[arg(long)]
        endpoint: String,
        #[arg(long)]
        model: String,
        /// Name of the environment variable holding the API key.
        #[arg(long)]
        api_key_env: String,
        /// Number of in-context examples: 0 or 3.
        #[arg(long)]
        shots: usize,
        #[arg(long)]
        shots_file: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        temperature: f64,
        #[arg(long)]
        top_p: f64,
        #[arg(long)]
        max_tokens: u32,
        /// `independent` (k requests) or `batched` (one request, n = k).
        #[arg(long)]
        sampling: String,
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        strict_json: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: usize,
    }
}

flags! {
    struct TrainFlags {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        batch: usize,
        #[arg(long)]
        lr: f64,
        #[arg(long)]
        warmup: usize,
        /// `warmup_cosine` or `constant`.
        #[arg(long)]
        schedule: String,
        #[arg(long)]
        dropout: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        window: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        min_count: usize,
        #[arg(long)]
        max_vocab: usize,
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        in_batch_negatives: bool,
        #[arg(long)]
        collision_penalty: f64,
        #[arg(long)]
        length_threshold: usize,
        #[arg(long)]
        length_penalty: f64,
    }
}

flags! {
    struct RerankFlags {
        #[arg(long)]
        in_candidates: PathBuf,
        #[arg(long)]
        examples: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    }
}

flags! {
    struct EvalFlags {
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        /// `builtin` or `http`.
        #[arg(long)]
        embedder: String,
        #[arg(long)]
        embed_dim: usize,
        #[arg(long)]
        embed_endpoint: String,
        #[arg(long)]
        embed_model: String,
        #[arg(long)]
        embed_api_key_env: String,
        #[arg(long)]
        rerank_model: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out_summary: PathBuf,
        #[arg(long)]
        out_records: PathBuf,
        #[arg(long)]
        jobs: usize,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = cli.config.as_deref();
    let result = match &cli.command {
        Command::Mine(f) => commands::mine(cfg, f),
        Command::Split(f) => commands::split(cfg, f),
        Command::Generate(f) => commands::generate(cfg, f),
        Command::TrainReranker(f) => commands::train_reranker(cfg, f),
        Command::Rerank(f) => commands::rerank(cfg, f),
        Command::Eval(f) => commands::eval(cfg, f),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
