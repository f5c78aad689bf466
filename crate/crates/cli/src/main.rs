mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stag_core::InferencePath;

/// Tokenize text-attributed graphs into a frozen vocabulary and evaluate the
/// tokens with LLMs or lightweight heads.
#[derive(Parser, Debug)]
#[command(name = "stag", version)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Chat-completion endpoint URL, or `stub` for the offline classifier.
    #[arg(long, global = true)]
    pub llm: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Model {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Token codebook directory.
    #[arg(long)]
    pub codebook: PathBuf,
    /// Checkpoint directory written by `pretrain`.
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct Episodes {
    #[command(flatten)]
    pub model: Model,
    /// Class codebook directory.
    #[arg(long)]
    pub classes: Option<PathBuf>,
    #[arg(long, default_value = "llm")]
    pub path: InferencePath,
    #[arg(long)]
    pub n_way: Option<usize>,
    #[arg(long)]
    pub num_tasks: Option<usize>,
    /// JSONL log of every prompt and reply.
    #[arg(long)]
    pub audit: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Embed a vocabulary (and optionally class explanations) into codebooks.
    BuildCodebook {
        /// One raw token per line; filtered before embedding.
        #[arg(long)]
        vocab: PathBuf,
        /// Precomputed vectors, `text<TAB>space-separated floats` per line.
        /// Without it the remote service named by `EMBED_ENDPOINT` is used.
        #[arg(long)]
        vectors: Option<PathBuf>,
        /// JSON array of `{"name", "explanation"}` objects.
        #[arg(long)]
        classes: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Where the class codebook goes; defaults to `<out>/classes`.
        #[arg(long)]
        class_out: Option<PathBuf>,
    },
    /// Self-supervised pre-training; writes a checkpoint and loss report.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit each node's top tokens and their weights as JSONL.
    Tokenize {
        #[command(flatten)]
        model: Model,
        /// Comma-separated node ids; all nodes when omitted.
        #[arg(long, value_delimiter = ',')]
        nodes: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// N-way k-shot episodic evaluation.
    EvalFewshot {
        #[command(flatten)]
        episodes: Episodes,
        #[arg(long)]
        k_shot: Option<usize>,
    },
    /// N-way episodes without labeled support examples.
    EvalZeroshot {
        #[command(flatten)]
        episodes: Episodes,
    },
    /// Fit a prompt network on a few labels per class and report held-out
    /// accuracy against the class codebook.
    PromptTune {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        classes: PathBuf,
        /// Labeled nodes per class used for tuning.
        #[arg(long, default_value_t = 5)]
        shots: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Link prediction on held-out edges and sampled non-edges.
    Linkpred {
        #[command(flatten)]
        model: Model,
        /// Positive pairs to score; as many negatives are drawn.
        #[arg(long, default_value_t = 200)]
        pairs: usize,
        #[arg(long, default_value_t = stag_core::infer::DEFAULT_LINK_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relation classification with a linear probe on `[z_head ; z_tail]`.
    Edgecls {
        #[command(flatten)]
        model: Model,
        /// `head<TAB>tail<TAB>relation` per line.
        #[arg(long)]
        edges: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        train_fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Subgraph classification with a linear probe on mean-pooled `z_f`.
    Subgraphcls {
        #[command(flatten)]
        model: Model,
        /// JSONL of `{"nodes": [int], "label": str}`.
        #[arg(long)]
        subgraphs: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        train_fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the full model and each ablated variant; compare them.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        /// Class codebook; enables the stub-path column.
        #[arg(long)]
        classes: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time soft assignment plus quantization over a B × K × d grid.
    BenchQuantize {
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
