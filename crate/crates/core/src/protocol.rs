//! The repeated evaluation protocol: for every run, fresh negatives, a fresh
//! split, a freshly initialised model, training and test-set metrics.

use crate::data::{sample_negatives, split, Corpus, DatasetSplit, Fractions, InteractionPair, SplitPolicy};
use crate::embedding::{EmbeddingSource, InputCache};
use crate::error::Result;
use crate::eval::{evaluate_scores, knn_baseline, repeat_evaluate, MetricsReport, RepeatSummary};
use crate::model::{ModelConfig, TipFormer};
use crate::train::{fit, score_examples, EpochLog, TrainConfig};

#[derive(Clone, Debug)]
pub enum Method {
    /// tipFormer or DeepCNN, depending on `ModelConfig::variant`.
    Model(ModelConfig),
    Knn { k: usize },
}

#[derive(Clone, Debug)]
pub struct ProtocolSettings {
    pub method: Method,
    pub train: TrainConfig,
    pub policy: SplitPolicy,
    pub fractions: Fractions,
    pub neg_ratio: f64,
    pub runs: usize,
    pub seed_base: u64,
}

/// Labelled pairs of one run: corpus pairs plus sampled negatives.
pub fn labelled_pairs(corpus: &Corpus, neg_ratio: f64, seed: u64) -> Result<Vec<InteractionPair>> {
    let mut pairs = corpus.pairs().to_vec();
    pairs.extend(sample_negatives(corpus, neg_ratio, seed)?);
    Ok(pairs)
}

/// Split for run `seed`, as used by [`run_protocol`].
pub fn run_split(corpus: &Corpus, s: &ProtocolSettings, seed: u64) -> Result<DatasetSplit> {
    split(&labelled_pairs(corpus, s.neg_ratio, seed)?, s.policy, s.fractions, seed)
}

/// Executes one run and returns its test-set report.
pub fn run_once(
    corpus: &Corpus,
    inputs: &InputCache,
    s: &ProtocolSettings,
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<MetricsReport> {
    let ds = run_split(corpus, s, seed)?;
    let train = inputs.examples(corpus, &ds.train)?;
    let test = inputs.examples(corpus, &ds.test)?;
    let labels: Vec<u8> = test.iter().map(|e| e.label).collect();
    let scores = match &s.method {
        Method::Model(cfg) => {
            let val = inputs.examples(corpus, &ds.validation)?;
            let model = TipFormer::new(cfg.clone(), seed)?;
            let tc = TrainConfig { seed, ..s.train.clone() };
            let result = fit(model, &train, &val, &tc, |e| on_epoch(e))?;
            score_examples(&result.best.model, &test)?
        }
        Method::Knn { k } => knn_baseline(&train, &test, *k)?,
    };
    evaluate_scores(&scores, &labels)
}

/// Runs the protocol `s.runs` times with seeds `seed_base + r`.
pub fn run_protocol(
    corpus: &Corpus,
    source: &EmbeddingSource,
    s: &ProtocolSettings,
    mut on_epoch: impl FnMut(usize, &EpochLog),
) -> Result<RepeatSummary> {
    let inputs = InputCache::build(corpus, source)?;
    repeat_evaluate(|r, seed| run_once(corpus, &inputs, s, seed, &mut |e| on_epoch(r, e)), s.runs, s.seed_base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Metric;
    use crate::toy::{make_toy, ToyConfig};

    fn settings(method: Method) -> ProtocolSettings {
        ProtocolSettings {
            method,
            train: TrainConfig { max_epochs: 1, ..Default::default() },
            policy: SplitPolicy::Random,
            fractions: Fractions::new(0.8, 0.1, 0.1).unwrap(),
            neg_ratio: 1.0,
            runs: 2,
            seed_base: 3,
        }
    }

    #[test]
    fn knn_protocol_is_deterministic() {
        let corpus = make_toy(&ToyConfig { toxins: 16, proteins: 16, classes: 2, seed: 1 }).unwrap();
        let s = settings(Method::Knn { k: 5 });
        let a = run_protocol(&corpus, &EmbeddingSource::Fallback, &s, |_, _| {}).unwrap();
        let b = run_protocol(&corpus, &EmbeddingSource::Fallback, &s, |_, _| {}).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.runs.len(), 2);
        assert!(a.get(Metric::Acc).mean.is_some());
    }

    #[test]
    fn model_protocol_runs() {
        let corpus = make_toy(&ToyConfig { toxins: 8, proteins: 8, classes: 2, seed: 1 }).unwrap();
        let cfg = ModelConfig { hidden: 8, heads: 2, interaction_layers: 1, fallback_dim: 8, ..Default::default() };
        let mut epochs = 0;
        let s = settings(Method::Model(cfg));
        let r = run_protocol(&corpus, &EmbeddingSource::Fallback, &s, |_, _| epochs += 1).unwrap();
        assert_eq!(r.runs.len(), 2);
        assert_eq!(epochs, 2);
    }
}
