//! `tipformer` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or format
//! error, 3 numeric failure. `TIPFORMER_THREADS` caps the worker pool used
//! for scoring.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{DataSection, Overrides};

#[derive(Parser, Debug)]
#[command(name = "tipformer", version, about = "Toxin-protein interaction prediction")]
struct Cli {
    /// TOML file with dotted keys (seed, model.*, train.*, split.*, data.*); flags override it
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct CorpusArgs {
    /// Directory containing toxins.tsv, proteins.tsv and pairs.tsv [default: .]
    #[arg(long, value_name = "DIR")]
    corpus: Option<PathBuf>,
    /// Toxin file (toxin_id, smiles); overrides --corpus
    #[arg(long, value_name = "FILE")]
    toxins: Option<PathBuf>,
    /// Protein file (protein_id, sequence); overrides --corpus
    #[arg(long, value_name = "FILE")]
    proteins: Option<PathBuf>,
    /// Pair file (toxin_id, protein_id, label); overrides --corpus
    #[arg(long, value_name = "FILE")]
    pairs: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct EmbeddingArgs {
    /// TPFE file of per-token toxin embeddings (omit both for the learned fallback)
    #[arg(long, value_name = "FILE")]
    toxin_embeddings: Option<PathBuf>,
    /// TPFE file of per-residue protein embeddings
    #[arg(long, value_name = "FILE")]
    protein_embeddings: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct SplitArgs {
    /// random, new-toxin or new-target
    #[arg(long)]
    policy: Option<String>,
    /// train,val,test fractions [default: 0.8,0.1,0.1]
    #[arg(long, value_name = "T,V,E")]
    fractions: Option<String>,
    /// Sampled negatives per positive [default: 1]
    #[arg(long, value_name = "RATIO")]
    neg_ratio: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the seeded synthetic corpus (toxins.tsv, proteins.tsv, pairs.tsv)
    MakeToy {
        /// Output directory
        #[arg(long, default_value = ".", value_name = "DIR")]
        out: PathBuf,
        /// Number of toxins
        #[arg(long, default_value_t = 60)]
        n_toxins: usize,
        /// Number of proteins
        #[arg(long, default_value_t = 60)]
        n_proteins: usize,
        /// Number of interaction classes
        #[arg(long, default_value_t = 4)]
        classes: usize,
        /// Generator seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sample negatives and write a train/val/test manifest
    Split {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        split: SplitArgs,
        /// Seed for negative sampling and the split
        #[arg(long)]
        seed: Option<u64>,
        /// Manifest to write
        #[arg(long, default_value = "split.tsv", value_name = "FILE")]
        out: PathBuf,
    },
    /// Train tipFormer or DeepCNN and write the best checkpoint and an epoch log
    Train {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        embeddings: EmbeddingArgs,
        /// Split manifest; without one the corpus is split with --policy/--fractions/--seed
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        split: SplitArgs,
        /// tipformer or deepcnn
        #[arg(long)]
        variant: Option<String>,
        /// Maximum number of epochs
        #[arg(long)]
        epochs: Option<usize>,
        /// Learning rate (0 leaves the weights at their initialisation)
        #[arg(long)]
        lr: Option<f64>,
        /// Epochs without a new validation minimum before stopping
        #[arg(long)]
        patience: Option<usize>,
        /// Seed for negatives, the split, initialisation, shuffling and dropout
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint to write (TPFC)
        #[arg(long, default_value = "model.tpfc", value_name = "FILE")]
        checkpoint: PathBuf,
        /// Per-epoch loss log (TSV)
        #[arg(long, default_value = "train_log.tsv", value_name = "FILE")]
        log: PathBuf,
    },
    /// Compute metrics for a checkpoint, an external score file, or repeated runs
    Evaluate {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        embeddings: EmbeddingArgs,
        /// Trained checkpoint (TPFC)
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// External scores (toxin_id, protein_id, score) instead of a model
        #[arg(long, value_name = "FILE")]
        scores: Option<PathBuf>,
        /// Split manifest holding the labelled pairs (required with --checkpoint or --scores)
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,
        /// Manifest partition to score: train, val or test
        #[arg(long, default_value = "test")]
        partition: String,
        /// Run the full protocol this many times (fresh negatives, split and model each run)
        #[arg(long, value_name = "N")]
        repeats: Option<usize>,
        /// tipformer, deepcnn or knn (repeat mode) [default: model.variant]
        #[arg(long)]
        method: Option<String>,
        /// Neighbours for the knn method
        #[arg(long, default_value_t = 5)]
        knn_k: usize,
        #[command(flatten)]
        split: SplitArgs,
        /// Maximum epochs per run (repeat mode)
        #[arg(long)]
        epochs: Option<usize>,
        /// Base seed; run r uses seed + r
        #[arg(long)]
        seed: Option<u64>,
        /// Metrics TSV: one row per run plus mean and std
        #[arg(long, default_value = "metrics.tsv", value_name = "FILE")]
        out: PathBuf,
        /// Also write the ROC curve (single evaluation only)
        #[arg(long, value_name = "FILE")]
        roc: Option<PathBuf>,
    },
    /// Interaction probabilities for the toxin x protein cross product or a pair list
    Predict {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        embeddings: EmbeddingArgs,
        /// Trained checkpoint (TPFC)
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Pairs to score (toxin_id, protein_id per line); default is every combination
        #[arg(long, value_name = "FILE")]
        pair_list: Option<PathBuf>,
        /// Output TSV [default: stdout]
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Top-k protein residues from the interaction map of one pair
    Hotspots {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        embeddings: EmbeddingArgs,
        /// Trained checkpoint (TPFC)
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Toxin id
        #[arg(long, value_name = "ID")]
        toxin: String,
        /// Protein id
        #[arg(long, value_name = "ID")]
        protein: String,
        /// Number of residues to report
        #[arg(short, long, default_value_t = 28)]
        k: usize,
        /// Added to every residue number (position j is reported as j + 1 + offset)
        #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
        offset: i64,
        /// Output TSV [default: stdout]
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Pooled pair representations as CSV
    ExportFeatures {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        embeddings: EmbeddingArgs,
        /// Trained checkpoint (TPFC)
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Export these manifest pairs instead of the corpus pairs
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,
        /// Output CSV
        #[arg(long, default_value = "features.csv", value_name = "FILE")]
        out: PathBuf,
    },
}

fn data_section(c: CorpusArgs, e: EmbeddingArgs, manifest: Option<PathBuf>) -> DataSection {
    DataSection {
        corpus: c.corpus,
        toxins: c.toxins,
        proteins: c.proteins,
        pairs: c.pairs,
        manifest,
        toxin_embeddings: e.toxin_embeddings,
        protein_embeddings: e.protein_embeddings,
    }
}

fn overrides(seed: Option<u64>, split: SplitArgs, data: DataSection) -> Overrides {
    Overrides { seed, policy: split.policy, fractions: split.fractions, neg_ratio: split.neg_ratio, data }
}

fn run(cli: Cli) -> tipformer::Result<()> {
    let file = config::FileConfig::load(cli.config.as_deref())?;
    let merge = |o: Overrides| config::RunConfig::merge(file, o);
    match cli.command {
        Command::MakeToy { out, n_toxins, n_proteins, classes, seed } => {
            let cfg = tipformer::toy::ToyConfig { toxins: n_toxins, proteins: n_proteins, classes, seed };
            commands::make_toy(&out, &cfg)
        }
        Command::Split { corpus, split, seed, out } => {
            let rc = merge(overrides(seed, split, data_section(corpus, EmbeddingArgs::default(), None)))?;
            commands::split(&rc, &out)
        }
        Command::Train {
            corpus,
            embeddings,
            manifest,
            split,
            variant,
            epochs,
            lr,
            patience,
            seed,
            checkpoint,
            log,
        } => {
            let mut rc = merge(overrides(seed, split, data_section(corpus, embeddings, manifest)))?;
            if let Some(v) = variant {
                rc.model.variant = v.parse()?;
            }
            if let Some(e) = epochs {
                rc.train.max_epochs = e;
            }
            if let Some(lr) = lr {
                rc.train.learning_rate = lr;
            }
            if let Some(p) = patience {
                rc.train.patience = p;
            }
            commands::train(rc, &checkpoint, &log)
        }
        Command::Evaluate {
            corpus,
            embeddings,
            checkpoint,
            scores,
            manifest,
            partition,
            repeats,
            method,
            knn_k,
            split,
            epochs,
            seed,
            out,
            roc,
        } => {
            let mut rc = merge(overrides(seed, split, data_section(corpus, embeddings, manifest)))?;
            if let Some(e) = epochs {
                rc.train.max_epochs = e;
            }
            let partition = partition.parse()?;
            match (repeats, checkpoint, scores) {
                (Some(n), None, None) => commands::evaluate_repeats(rc, n, method.as_deref(), knn_k, &out),
                (None, Some(ck), None) => commands::evaluate_checkpoint(&rc, &ck, partition, &out, roc.as_deref()),
                (None, None, Some(s)) => commands::evaluate_scores_file(&rc, &s, partition, &out, roc.as_deref()),
                (None, None, None) => {
                    Err(tipformer::Error::usage("evaluate needs one of --checkpoint, --scores or --repeats"))
                }
                _ => Err(tipformer::Error::usage("--checkpoint, --scores and --repeats are mutually exclusive")),
            }
        }
        Command::Predict { corpus, embeddings, checkpoint, pair_list, out } => {
            let rc = merge(overrides(None, SplitArgs::default(), data_section(corpus, embeddings, None)))?;
            commands::predict(&rc, &checkpoint, pair_list.as_deref(), out.as_deref())
        }
        Command::Hotspots { corpus, embeddings, checkpoint, toxin, protein, k, offset, out } => {
            let rc = merge(overrides(None, SplitArgs::default(), data_section(corpus, embeddings, None)))?;
            commands::hotspots(&rc, &checkpoint, &toxin, &protein, k, offset, out.as_deref())
        }
        Command::ExportFeatures { corpus, embeddings, checkpoint, manifest, out } => {
            let rc = merge(overrides(None, SplitArgs::default(), data_section(corpus, embeddings, manifest)))?;
            commands::export(&rc, &checkpoint, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // downstream reader closed early, e.g. `| head`
        Err(tipformer::Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
