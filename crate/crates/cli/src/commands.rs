use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use tipformer::data::{read_manifest, split as split_pairs, write_manifest, DatasetSplit, InteractionPair, Partition};
use tipformer::embedding::InputCache;
use tipformer::eval::{
    evaluate_scores, export_features, format_summary, read_scores, roc_auc, scores_for, write_metrics_tsv,
    write_roc_tsv, write_scores, MetricsReport, RepeatSummary,
};
use tipformer::model::{extract_hotspots, TipFormer, Variant};
use tipformer::protocol::{labelled_pairs, run_protocol, Method, ProtocolSettings};
use tipformer::toy::{make_toy as build_toy, ToyConfig};
use tipformer::train::{fit, load_checkpoint, save_checkpoint, score_examples, write_epoch_log, Checkpoint};
use tipformer::{Error, Result};

use crate::config::{prepare_output, require_files, RunConfig};

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    prepare_output(path)?;
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("cannot create {}: {e}", path.display()))))
}

/// File when given, stdout otherwise.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn make_toy(out: &Path, cfg: &ToyConfig) -> Result<()> {
    let corpus = build_toy(cfg)?;
    fs::create_dir_all(out)?;
    corpus.write_tsv(&out.join("toxins.tsv"), &out.join("proteins.tsv"), &out.join("pairs.tsv"))?;
    let (t, p, n) = corpus.counts();
    println!("wrote {t} toxins, {p} proteins and {n} interacting pairs to {}", out.display());
    Ok(())
}

fn fresh_split(rc: &RunConfig) -> Result<DatasetSplit> {
    let corpus = rc.load_corpus()?;
    split_pairs(&labelled_pairs(&corpus, rc.neg_ratio, rc.seed)?, rc.policy, rc.fractions, rc.seed)
}

fn print_sizes(ds: &DatasetSplit) {
    println!("train {}  val {}  test {}", ds.train.len(), ds.validation.len(), ds.test.len());
}

pub fn split(rc: &RunConfig, out: &Path) -> Result<()> {
    require_files(&rc.corpus_inputs(true))?;
    let ds = fresh_split(rc)?;
    prepare_output(out)?;
    write_manifest(&ds, out)?;
    print_sizes(&ds);
    if ds.policy != tipformer::data::SplitPolicy::Random {
        let kind = if ds.policy == tipformer::data::SplitPolicy::NewTarget { "proteins" } else { "toxins" };
        println!("held-out {kind}: {}", ds.held_out_entities().len());
    }
    Ok(())
}

fn manifest_inputs(rc: &RunConfig) -> Vec<PathBuf> {
    rc.data.manifest.iter().cloned().collect()
}

pub fn train(mut rc: RunConfig, checkpoint: &Path, log: &Path) -> Result<()> {
    rc.apply_embedding_choice()?;
    rc.model.validate()?;
    rc.train.validate()?;
    let manifest = manifest_inputs(&rc);
    require_files(rc.corpus_inputs(manifest.is_empty()).iter().chain(&manifest))?;
    prepare_output(checkpoint)?;
    prepare_output(log)?;

    let ds = match &rc.data.manifest {
        Some(m) => read_manifest(m)?,
        None => fresh_split(&rc)?,
    };
    let corpus = rc.load_entities()?;
    let source = rc.embedding_source(&rc.model)?;
    eprintln!("inputs: {}", source.describe());
    print_sizes(&ds);
    let inputs = InputCache::build(&corpus, &source)?;
    let train = inputs.examples(&corpus, &ds.train)?;
    let val = inputs.examples(&corpus, &ds.validation)?;
    let model = TipFormer::new(rc.model.clone(), rc.seed)?;
    let result = fit(model, &train, &val, &rc.train, |e| {
        eprintln!("epoch {:>3}  train_loss {:.6}  val_loss {:.6}  {:.1}s", e.epoch, e.train_loss, e.val_loss, e.seconds);
    })?;
    save_checkpoint(&result.best, checkpoint)?;
    let mut out = create(log)?;
    write_epoch_log(&result.log, &mut out)?;
    out.flush()?;
    println!(
        "best validation loss {:.6} at epoch {} -> {}",
        result.best.best.val_loss,
        result.best.best.epoch,
        checkpoint.display()
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<Checkpoint> {
    require_files([&path.to_path_buf()])?;
    load_checkpoint(path).map_err(|e| e.context(path.display()))
}

fn write_report(report: MetricsReport, seed: u64, out: &Path) -> Result<()> {
    let summary = RepeatSummary::from_runs(vec![report], seed);
    let mut f = create(out)?;
    write_metrics_tsv(&summary, &mut f)?;
    f.flush()?;
    println!("{}", format_summary(&summary));
    Ok(())
}

fn write_roc(scores: &[f64], labels: &[u8], path: &Path) -> Result<()> {
    if !(labels.contains(&0) && labels.contains(&1)) {
        eprintln!("warning: single-class labels, no ROC curve written");
        return Ok(());
    }
    let roc = roc_auc(scores, labels)?;
    let mut f = create(path)?;
    write_roc_tsv(&roc, &mut f)?;
    f.flush()?;
    Ok(())
}

fn require_manifest(rc: &RunConfig) -> Result<DatasetSplit> {
    let m = rc.data.manifest.as_ref().ok_or_else(|| Error::usage("this mode needs --manifest"))?;
    require_files([m])?;
    read_manifest(m)
}

pub fn evaluate_checkpoint(
    rc: &RunConfig,
    checkpoint: &Path,
    partition: Partition,
    out: &Path,
    roc: Option<&Path>,
) -> Result<()> {
    let ds = require_manifest(rc)?;
    require_files(&rc.corpus_inputs(false))?;
    let ck = load_model(checkpoint)?;
    let corpus = rc.load_entities()?;
    let inputs = InputCache::build(&corpus, &rc.embedding_source(ck.model.config())?)?;
    let pairs = ds.partition(partition);
    if pairs.is_empty() {
        return Err(Error::data(format!("manifest partition {} is empty", partition.as_str())));
    }
    let examples = inputs.examples(&corpus, pairs)?;
    let scores = score_examples(&ck.model, &examples)?;
    let labels: Vec<u8> = pairs.iter().map(|p| p.label).collect();
    if let Some(r) = roc {
        write_roc(&scores, &labels, r)?;
    }
    write_report(evaluate_scores(&scores, &labels)?, rc.seed, out)
}

pub fn evaluate_scores_file(
    rc: &RunConfig,
    scores: &Path,
    partition: Partition,
    out: &Path,
    roc: Option<&Path>,
) -> Result<()> {
    let ds = require_manifest(rc)?;
    require_files([&scores.to_path_buf()])?;
    let pairs = ds.partition(partition);
    let scores = scores_for(pairs, &read_scores(scores)?)?;
    let labels: Vec<u8> = pairs.iter().map(|p| p.label).collect();
    if let Some(r) = roc {
        write_roc(&scores, &labels, r)?;
    }
    write_report(evaluate_scores(&scores, &labels)?, rc.seed, out)
}

pub fn evaluate_repeats(mut rc: RunConfig, runs: usize, method: Option<&str>, knn_k: usize, out: &Path) -> Result<()> {
    if runs == 0 {
        return Err(Error::usage("--repeats must be at least 1"));
    }
    rc.apply_embedding_choice()?;
    let method = match method {
        Some("knn") => Method::Knn { k: knn_k },
        Some(v) => {
            rc.model.variant = v.parse::<Variant>()?;
            Method::Model(rc.model.clone())
        }
        None => Method::Model(rc.model.clone()),
    };
    if let Method::Model(cfg) = &method {
        cfg.validate()?;
        rc.train.validate()?;
    }
    require_files(&rc.corpus_inputs(true))?;
    prepare_output(out)?;
    let corpus = rc.load_corpus()?;
    let source = rc.embedding_source(&rc.model)?;
    eprintln!("inputs: {}", source.describe());
    let settings = ProtocolSettings {
        method,
        train: rc.train.clone(),
        policy: rc.policy,
        fractions: rc.fractions,
        neg_ratio: rc.neg_ratio,
        runs,
        seed_base: rc.seed,
    };
    let summary = run_protocol(&corpus, &source, &settings, |r, e| {
        eprintln!("run {} epoch {:>3}  train_loss {:.6}  val_loss {:.6}", r + 1, e.epoch, e.train_loss, e.val_loss);
    })?;
    let mut f = create(out)?;
    write_metrics_tsv(&summary, &mut f)?;
    f.flush()?;
    println!("{}", format_summary(&summary));
    Ok(())
}

/// `toxin_id  protein_id [label]` lines; blank and `#` lines are skipped.
fn read_pair_list(path: &Path) -> Result<Vec<InteractionPair>> {
    let text = fs::read_to_string(path).map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 2 || f.len() > 3 {
            return Err(Error::data_at(path, i + 1, "expected toxin_id, protein_id and an optional label"));
        }
        pairs.push(InteractionPair::new(f[0], f[1], 0));
    }
    Ok(pairs)
}

pub fn predict(rc: &RunConfig, checkpoint: &Path, pair_list: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let mut inputs_needed = rc.corpus_inputs(false);
    inputs_needed.extend(pair_list.map(Path::to_path_buf));
    require_files(&inputs_needed)?;
    let ck = load_model(checkpoint)?;
    let corpus = rc.load_entities()?;
    let pairs = match pair_list {
        Some(p) => read_pair_list(p)?,
        None => corpus
            .toxins()
            .iter()
            .flat_map(|t| corpus.proteins().iter().map(|p| InteractionPair::new(t.toxin_id.clone(), p.protein_id.clone(), 0)))
            .collect(),
    };
    let inputs = InputCache::build(&corpus, &rc.embedding_source(ck.model.config())?)?;
    let examples = inputs.examples(&corpus, &pairs)?;
    let scores = score_examples(&ck.model, &examples)?;
    let ids: Vec<(&str, &str)> = pairs.iter().map(|p| p.key()).collect();
    let mut w = sink(out)?;
    write_scores(&ids, &scores, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn hotspots(
    rc: &RunConfig,
    checkpoint: &Path,
    toxin: &str,
    protein: &str,
    k: usize,
    offset: i64,
    out: Option<&Path>,
) -> Result<()> {
    require_files(&rc.corpus_inputs(false))?;
    let ck = load_model(checkpoint)?;
    let corpus = rc.load_entities()?;
    let t = corpus.toxin(toxin).ok_or_else(|| Error::data(format!("unknown toxin id {toxin}")))?;
    let p = corpus.protein(protein).ok_or_else(|| Error::data(format!("unknown protein id {protein}")))?;
    let source = rc.embedding_source(ck.model.config())?;
    let hs = extract_hotspots(&ck.model, &source.toxin_input(t)?, &source.protein_input(p)?, k, offset)?;
    let mut w = sink(out)?;
    writeln!(w, "residue_number\tscore")?;
    for h in hs {
        writeln!(w, "{}\t{}", h.residue, h.score)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export(rc: &RunConfig, checkpoint: &Path, out: &Path) -> Result<()> {
    let manifest = manifest_inputs(rc);
    require_files(rc.corpus_inputs(manifest.is_empty()).iter().chain(&manifest))?;
    let ck = load_model(checkpoint)?;
    let (corpus, pairs) = match &rc.data.manifest {
        Some(m) => {
            let ds = read_manifest(m)?;
            let all: Vec<InteractionPair> = [Partition::Train, Partition::Val, Partition::Test]
                .iter()
                .flat_map(|&p| ds.partition(p).to_vec())
                .collect();
            (rc.load_entities()?, all)
        }
        None => {
            let c = rc.load_corpus()?;
            let pairs = c.pairs().to_vec();
            (c, pairs)
        }
    };
    let inputs = InputCache::build(&corpus, &rc.embedding_source(ck.model.config())?)?;
    let examples = inputs.examples(&corpus, &pairs)?;
    let mut w = create(out)?;
    export_features(&ck.model, &examples, &mut w)?;
    w.flush()?;
    println!("wrote {} feature rows to {}", examples.len(), out.display());
    Ok(())
}
