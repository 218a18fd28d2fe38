use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use clda::pipeline::{self, PipelineConfig, Stage};

/// Clustered Latent Dirichlet Allocation pipeline.
#[derive(Parser)]
#[command(name = "clda", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage: ingest, train, merge, cluster, evaluate, report.
    Run(StageArgs),
    /// Read the input corpus, build the vocabulary, write encoded splits.
    Ingest(StageArgs),
    /// Train per-segment topic models concurrently.
    Train(StageArgs),
    /// Pool local topics into the shared vocabulary space.
    Merge(StageArgs),
    /// Cluster pooled topics into global topics.
    Cluster(StageArgs),
    /// Fold in held-out documents and compute perplexity.
    Evaluate(StageArgs),
    /// Write proportion, composition, and birth/death reports.
    Report(StageArgs),
    /// Greedy-match two topic files by their top-N word sets.
    Compare {
        /// First topic file.
        #[arg(long)]
        topics_a: PathBuf,
        /// Second topic file.
        #[arg(long)]
        topics_b: PathBuf,
        /// Representative word set size.
        #[arg(long, default_value_t = 20)]
        top_n: usize,
        /// Output CSV path.
        #[arg(long)]
        output: PathBuf,
    },
}

/// Configuration file plus per-key overrides. Flags win over the file.
#[derive(Args, Default)]
struct StageArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long)]
    input: Option<PathBuf>,
    /// Input format: tsv | bow.
    #[arg(long)]
    format: Option<String>,
    /// Word list for bow input (one word per line, line number = id).
    #[arg(long)]
    vocab_file: Option<PathBuf>,
    /// Stopword list, one word per line.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long)]
    min_count: Option<usize>,
    #[arg(long)]
    min_doc_fraction: Option<f64>,
    /// Segment key ordering: lex | numeric.
    #[arg(long)]
    segment_order: Option<String>,
    /// Local topics per segment (L).
    #[arg(long)]
    local_topics: Option<usize>,
    /// Global topics (K).
    #[arg(long)]
    global_topics: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Gibbs sweeps per segment.
    #[arg(long)]
    iterations: Option<usize>,
    /// Concurrent document shards per segment.
    #[arg(long)]
    shards: Option<usize>,
    /// Smoothing added to every merged topic entry.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Row normalization before clustering: l2 | l1.
    #[arg(long)]
    norm: Option<String>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Centroid initialization: random | full-lda.
    #[arg(long)]
    init_mode: Option<String>,
    #[arg(long)]
    full_lda_iterations: Option<usize>,
    #[arg(long)]
    holdout_fraction: Option<f64>,
    #[arg(long)]
    top_n: Option<usize>,
    #[arg(long)]
    fold_in_sweeps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker pool size; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
    /// Proportion weighting: token | doc.
    #[arg(long)]
    mass_weighting: Option<String>,
    /// Topic file matched against the centroids during evaluation.
    #[arg(long)]
    compare_topics: Option<PathBuf>,
    /// Also write raw count matrices per segment.
    #[arg(long)]
    raw_counts: bool,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl StageArgs {
    fn into_config(self) -> clda::Result<PipelineConfig> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::from_file(path)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    config.set(stringify!($field), &v.to_string())?;
                }
            };
        }
        if let Some(v) = self.input {
            config.input = v;
        }
        set!(format);
        if let Some(v) = self.vocab_file {
            config.vocab_file = Some(v);
        }
        if let Some(v) = self.stopwords {
            config.stopwords = Some(v);
        }
        set!(min_count);
        set!(min_doc_fraction);
        set!(segment_order);
        set!(local_topics);
        set!(global_topics);
        set!(alpha);
        set!(beta);
        set!(iterations);
        set!(shards);
        set!(epsilon);
        set!(norm);
        set!(restarts);
        set!(max_iters);
        set!(tol);
        set!(init_mode);
        set!(full_lda_iterations);
        set!(holdout_fraction);
        set!(top_n);
        set!(fold_in_sweeps);
        set!(seed);
        set!(workers);
        set!(mass_weighting);
        if let Some(v) = self.compare_topics {
            config.compare_topics = Some(v);
        }
        if self.raw_counts {
            config.raw_counts = true;
        }
        if let Some(v) = self.output {
            config.output = v;
        }
        Ok(config)
    }
}

fn run_one(args: StageArgs, stage: Stage) -> clda::Result<()> {
    let config = args.into_config()?;
    let outcome = pipeline::run_stage(&config, stage)?;
    report_outcome(&outcome);
    Ok(())
}

fn report_outcome(outcome: &pipeline::StageOutcome) {
    for note in &outcome.notes {
        eprintln!("[{}] {}", outcome.stage, note);
    }
    eprintln!("[{}] done in {:.2}s", outcome.stage, outcome.seconds);
}

fn run(cli: Cli) -> clda::Result<()> {
    match cli.command {
        Command::Run(args) => {
            let config = args.into_config()?;
            for outcome in pipeline::run_pipeline(&config)? {
                report_outcome(&outcome);
            }
            Ok(())
        }
        Command::Ingest(args) => run_one(args, Stage::Ingest),
        Command::Train(args) => run_one(args, Stage::Train),
        Command::Merge(args) => run_one(args, Stage::Merge),
        Command::Cluster(args) => run_one(args, Stage::Cluster),
        Command::Evaluate(args) => run_one(args, Stage::Evaluate),
        Command::Report(args) => run_one(args, Stage::Report),
        Command::Compare { topics_a, topics_b, top_n, output } => {
            let report = pipeline::compare_models(&topics_a, &topics_b, top_n, &output)?;
            eprintln!(
                "[compare] matched {} topic pairs, mean jaccard {:.4}",
                report.pairs.len(),
                report.mean_jaccard()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::FAILURE
        }
    }
}
