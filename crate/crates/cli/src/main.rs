//! `araida` command-line entry point.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use araida_core::harness::{
    gaussian_clusters, run_experiment, sweep_variants, ExperimentConfig, ExperimentFile, RunReport, SyntheticSpec,
};
use araida_core::{embed_corpus, Corpus, EmbedMode, EmbeddingTable, LabelSpace};
use araida_service::AppState;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "araida", version, about = "Interactive annotation with analogical reasoning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate annotation runs described by a config file and write MCA reports.
    Run(RunArgs),
    /// Run the datastore grid (capacity x k x eviction) from a config file.
    Sweep(RunArgs),
    /// Serve annotation sessions over HTTP.
    Serve(ServeArgs),
    /// Write a synthetic Gaussian-cluster corpus as JSONL.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment file.
    #[arg(long)]
    config: PathBuf,
    /// Directory for mca_raw.csv, mca_aggregate.csv and diagnostics.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// JSONL corpus; may be repeated. Sessions refer to a corpus by file stem.
    #[arg(long, required = true)]
    corpus: Vec<PathBuf>,
    /// Comma-separated class names (default: sorted labels found in the corpus).
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<String>>,
    /// Word vectors used to embed the `text` of each example.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value = "token_average")]
    embed_mode: EmbedMode,
    #[arg(long, default_value = "checkpoints")]
    checkpoint_dir: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 2000)]
    size: usize,
    /// Distance between class means in standard deviations.
    #[arg(long, default_value_t = 3.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn print_aggregate(report: &RunReport) {
    println!("{:<32} {:>6} {:>9} {:>9}", "variant", "size", "mca_mean", "mca_std");
    for row in report.aggregate() {
        println!("{:<32} {:>6} {:>9.4} {:>9.4}", row.variant, row.size, row.mca_mean, row.mca_std);
    }
}

fn run(args: &RunArgs, sweep: bool) -> Result<()> {
    let file = ExperimentFile::load(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let corpus = file.source.load().context("loading corpus")?;
    let experiment = if sweep {
        ExperimentConfig { variants: sweep_variants(&file.sweep), ..file.experiment }
    } else {
        file.experiment
    };
    tracing::info!(
        examples = corpus.len(),
        variants = experiment.variants.len(),
        sizes = ?experiment.sizes,
        seeds = experiment.seeds.len(),
        "starting"
    );
    let report = run_experiment(&corpus, &experiment)?;
    report.write(&args.out).with_context(|| format!("writing reports to {}", args.out.display()))?;
    print_aggregate(&report);
    Ok(())
}

fn corpus_name(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(String::from)
        .with_context(|| format!("cannot name corpus {}", path.display()))
}

fn load_corpus(path: &Path, args: &ServeArgs, table: Option<&EmbeddingTable>) -> Result<Corpus> {
    let classes = args.classes.as_ref().map(|c| LabelSpace::new(c.iter().cloned())).transpose()?;
    let corpus = Corpus::load_jsonl(path, classes).with_context(|| format!("loading {}", path.display()))?;
    Ok(match table {
        Some(t) => embed_corpus(&corpus, t, args.embed_mode)?,
        None => corpus,
    })
}

fn serve(args: ServeArgs) -> Result<()> {
    let table = args.embeddings.as_ref().map(EmbeddingTable::load).transpose().context("loading embeddings")?;
    let mut state = AppState::new(&args.checkpoint_dir);
    for path in &args.corpus {
        let name = corpus_name(path)?;
        if state.corpus_names().contains(&name.as_str()) {
            bail!("two corpora named {name:?}");
        }
        state = state.with_corpus(name, load_corpus(path, &args, table.as_ref())?);
    }
    let addr: SocketAddr = format!("{}:{}", args.host, args.port).parse().context("bad host/port")?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        araida_service::serve(listener, Arc::new(state)).await?;
        Ok(())
    })
}

fn synth(args: &SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        classes: args.classes,
        dim: args.dim,
        size: args.size,
        separation: args.separation,
        seed: args.seed,
        ..Default::default()
    };
    gaussian_clusters(&spec)?.write_jsonl(&args.out)?;
    println!("wrote {} examples to {}", args.size, args.out.display());
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Run(args) => run(&args, false),
        Command::Sweep(args) => run(&args, true),
        Command::Serve(args) => serve(args),
        Command::Synth(args) => synth(&args),
    }
}
