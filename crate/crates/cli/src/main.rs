mod commands;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "lookmatch",
    version,
    about = "Pair garment product images with lookbook images"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Worker threads for parallel stages (0 = one per core)
    #[arg(long, default_value_t = 0, global = true)]
    workers: usize,

    /// Log filter, e.g. "info" or "lookmatch_core=debug"
    #[arg(long, default_value = "info", global = true)]
    log: String,
}

#[derive(Subcommand)]
enum Command {
    /// Validate an embedding block file and print its summary
    EmbedCheck {
        /// Block file to check
        path: PathBuf,
        /// Corpus manifest every row key must resolve against
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Compute one similarity channel into a score table
    Score {
        /// fi2i, t2i, bb2i or i2i
        #[arg(long)]
        channel: String,
        /// Query image block
        #[arg(long)]
        queries: PathBuf,
        /// Gallery image block (fi2i, i2i)
        #[arg(long)]
        gallery: Option<PathBuf>,
        /// Gallery description-text block (t2i)
        #[arg(long)]
        text: Option<PathBuf>,
        /// Gallery crop block (bb2i, i2i)
        #[arg(long)]
        crops: Option<PathBuf>,
        /// Gallery corpus manifest (t2i, bb2i, i2i)
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Estimate per-model mean and standard deviation
    Calibrate {
        /// Score table or candidate file
        #[arg(short, long)]
        input: PathBuf,
        /// Number of scores to sample
        #[arg(short = 'n', long, default_value_t = lookmatch_core::standardize::DEFAULT_SAMPLE_SIZE)]
        sample_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Apply calibration stats: z = (s - mu) / sigma
    Standardize {
        /// Score table or candidate file
        #[arg(short, long)]
        input: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Exact top-k retrieval with an optional brand prefilter
    Retrieve {
        /// Query image block
        #[arg(long)]
        queries: PathBuf,
        /// Gallery block: image, description-text or crop embeddings
        #[arg(long)]
        gallery: PathBuf,
        #[arg(short, long, default_value_t = lookmatch_core::retrieval::DEFAULT_K)]
        k: usize,
        /// Minimum brand similarity in [0, 100]; omit to disable the prefilter
        #[arg(long)]
        brand_threshold: Option<f64>,
        /// Query and gallery corpus manifests
        #[arg(long, num_args = 2, value_names = ["QUERIES", "GALLERY"])]
        corpus: Vec<PathBuf>,
        /// Model name for the lists (defaults to the channel of the gallery block)
        #[arg(long)]
        model: Option<String>,
        /// Output directory; lists go to <dir>/<model>.tsv
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Fuse standardized member tables into an ensemble table
    Fuse {
        /// Ensemble spec (TOML)
        #[arg(long)]
        spec: PathBuf,
        /// Member score tables or candidate files
        #[arg(short, long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Evaluation: recall, rank correlation, quality curve
    Eval {
        #[command(subcommand)]
        metric: EvalCommand,
    },
    /// Form best pairs and rank them into a tiered manifest
    Curate {
        /// Fused score table
        #[arg(long)]
        fused: PathBuf,
        #[arg(long, default_value = "10000,50000,300000")]
        cutoffs: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Draw annotation tasks around probe ranks of a manifest
    Sample {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "100,2000,8000,32000,128000,512000,2048000")]
        probes: String,
        #[arg(long, default_value_t = lookmatch_core::curation::DEFAULT_PER_PROBE)]
        per_probe: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Query corpus manifest, for image URIs
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Gallery corpus manifest, for image URIs
        #[arg(long)]
        gallery: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run every stage from a config file
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Reuse stage outputs written under the same config
        #[arg(long)]
        resume: bool,
    },
    /// Write a synthetic mock-embedded dataset with planted matches
    Fixture {
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 200)]
        queries: usize,
        #[arg(long, default_value_t = 1000)]
        gallery: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Recall@K of each table's ranking against ground truth
    Recall {
        /// Score tables, one per model
        #[arg(short, long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        /// Ground-truth pairs, query_id<TAB>gallery_id per line
        #[arg(long)]
        truth: PathBuf,
        #[arg(short, long, default_value = "1,5,10")]
        k: String,
        /// Write a JSON report here
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Spearman correlation matrix between models
    Corr {
        #[arg(short, long, num_args = 2.., required = true)]
        input: Vec<PathBuf>,
        /// Number of common pairs to sample
        #[arg(long, default_value_t = 100_000)]
        sample: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Match fraction per probe from annotation records
    Curve {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value = "100,2000,8000,32000,128000,512000,2048000")]
        probes: String,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::new(&cli.log))
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();

    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build()?;
    pool.install(|| commands::run(cli.command))
}
