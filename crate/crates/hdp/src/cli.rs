//! The `hdp-train` command-line trainer: corpus loading, the iteration loop,
//! trace and checkpoint output.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};

use crate::corpus::{corpus_stats, parse_stoplist, parse_token_lines, parse_uci_bow, preprocess, Corpus, PreprocessSpec, Vocabulary};
use crate::diag::{load_checkpoint, quantile_topic_summary, save_checkpoint, write_topic_summary, SummarySpec, TraceWriter};
use crate::sampler::gibbs_iteration;
use crate::state::{init_state, HdpConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorpusFormat {
    /// UCI bag-of-words (docword + vocab files).
    Uci,
    /// Plain text, one document per line.
    Text,
}

#[derive(Debug, Parser)]
#[command(name = "hdp-train", about = "Train an HDP topic model with the sparse parallel sampler")]
pub struct TrainArgs {
    /// Corpus file: UCI docword file or one document per line.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Vocabulary file; required with --format uci.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CorpusFormat::Text)]
    pub format: CorpusFormat,
    /// Stoplist file, one term per line.
    #[arg(long)]
    pub stoplist: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    pub beta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Truncation level (flag topic index).
    #[arg(long, default_value_t = 1000)]
    pub kstar: u32,
    #[arg(long, default_value_t = 100)]
    pub iterations: u64,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
    /// Iterations between checkpoints; defaults to iterations / 20.
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long, default_value_t = 8)]
    pub summary_top_words: usize,
    #[arg(long, default_value_t = 10)]
    pub min_doc_tokens: usize,
    #[arg(long, default_value_t = 10)]
    pub rare_word_limit: u64,
    /// Resume from a checkpoint; hyperparameters and seed come from it.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Zero the wall-time trace columns for byte-reproducible output.
    #[arg(long, default_value_t = false)]
    pub zero_timings: bool,
}

fn open(path: &PathBuf) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("cannot open `{}`", path.display()))?,
    ))
}

/// Loads and preprocesses the corpus named by the CLI flags.
pub fn load_corpus(args: &TrainArgs) -> Result<(Corpus, Vocabulary)> {
    let stoplist = match &args.stoplist {
        Some(path) => parse_stoplist(open(path)?)
            .with_context(|| format!("bad stoplist `{}`", path.display()))?,
        None => Default::default(),
    };
    let spec = PreprocessSpec {
        stoplist,
        min_doc_tokens: args.min_doc_tokens,
        rare_word_limit: args.rare_word_limit,
    };
    let raw = match args.format {
        CorpusFormat::Text => parse_token_lines(open(&args.corpus)?)
            .with_context(|| format!("bad corpus `{}`", args.corpus.display()))?,
        CorpusFormat::Uci => {
            let Some(vocab_path) = &args.vocab else {
                bail!("--format uci requires --vocab");
            };
            let (corpus, vocab) = parse_uci_bow(open(&args.corpus)?, open(vocab_path)?)
                .with_context(|| format!("bad corpus `{}`", args.corpus.display()))?;
            corpus.to_raw(&vocab)
        }
    };
    Ok(preprocess(&raw, &spec))
}

/// Runs the trainer end to end; errors carry enough context for the CLI to
/// print a one-line diagnostic.
pub fn run_train(args: &TrainArgs) -> Result<()> {
    let flag_config = HdpConfig {
        alpha: args.alpha,
        beta: args.beta,
        gamma: args.gamma,
        k_star: args.kstar,
        iterations: args.iterations,
        threads: args.threads,
        seed: args.seed,
    };
    flag_config.validate()?;

    let (corpus, vocab) = load_corpus(args)?;
    let stats = corpus_stats(&corpus);
    println!(
        "corpus: {} docs, {} tokens, vocabulary {} (max doc length {})",
        stats.num_docs, stats.num_tokens, stats.vocab_size, stats.max_doc_len
    );

    std::fs::create_dir_all(&args.output_dir)
        .with_context(|| format!("cannot create output dir `{}`", args.output_dir.display()))?;

    let (mut state, config, start_iteration) = match &args.resume {
        Some(path) => {
            let (state, mut config, iteration) = load_checkpoint(path, &corpus)
                .with_context(|| format!("cannot resume from `{}`", path.display()))?;
            config.threads = args.threads;
            config.iterations = args.iterations;
            println!("resumed from `{}` at iteration {iteration}", path.display());
            (state, config, iteration)
        }
        None => (init_state(&corpus, &flag_config)?, flag_config, 0),
    };

    let trace_path = args.output_dir.join("trace.csv");
    let mut trace = if start_iteration > 0 && trace_path.exists() {
        TraceWriter::append_to(&trace_path)
    } else {
        TraceWriter::create(&trace_path)
    }
    .with_context(|| format!("cannot write `{}`", trace_path.display()))?;

    let checkpoint_every = args
        .checkpoint_every
        .unwrap_or_else(|| (config.iterations / 20).max(1))
        .max(1);

    for iteration in start_iteration + 1..=config.iterations {
        let mut record = gibbs_iteration(&mut state, &corpus, &config, iteration)?;
        if args.zero_timings {
            record.zero_timings();
        }
        trace.write(&record)?;
        if iteration % checkpoint_every == 0 || iteration == config.iterations {
            let path = args.output_dir.join(format!("checkpoint-{iteration}.hdpc"));
            save_checkpoint(&state, &config, iteration, &corpus, &path)?;
        }
    }

    let summary_spec = SummarySpec { top_words: args.summary_top_words, ..SummarySpec::default() };
    let summaries = quantile_topic_summary(&state, &summary_spec);
    let topics_path = args.output_dir.join("topics.txt");
    write_topic_summary(&summaries, &vocab, &topics_path)
        .with_context(|| format!("cannot write `{}`", topics_path.display()))?;

    println!(
        "done: {} iterations, {} active topics, outputs in `{}`",
        config.iterations,
        crate::diag::active_topic_count(&state),
        args.output_dir.display()
    );
    Ok(())
}
