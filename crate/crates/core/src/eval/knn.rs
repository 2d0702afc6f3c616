use crate::embedding::{Example, TokenVocabulary};
use crate::error::{Error, Result};

/// Mean-pooled toxin embedding followed by the mean-pooled protein embedding.
/// Token inputs pool one-hot rows, i.e. symbol composition.
pub fn pair_features(e: &Example<'_>) -> Vec<f64> {
    let mut f = e.toxin.mean_pooled(TokenVocabulary::smiles().size());
    f.extend(e.protein.mean_pooled(TokenVocabulary::protein().size()));
    f
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Fraction of positives among the `k` nearest training points (Euclidean),
/// ties broken by ascending training index.
pub fn knn_scores(train: &[Vec<f64>], train_labels: &[u8], test: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
    if train.len() != train_labels.len() {
        return Err(Error::usage("training features and labels differ in length"));
    }
    if k == 0 || k > train.len() {
        return Err(Error::usage(format!("k = {k} must be between 1 and the training size {}", train.len())));
    }
    Ok(crate::parallel::par_map(test, |x| {
        let mut d: Vec<(f64, usize)> = train.iter().enumerate().map(|(i, t)| (euclidean(x, t), i)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d[..k].iter().filter(|&&(_, i)| train_labels[i] == 1).count() as f64 / k as f64
    }))
}

/// KNN baseline over labelled examples.
pub fn knn_baseline(train: &[Example<'_>], test: &[Example<'_>], k: usize) -> Result<Vec<f64>> {
    let tf: Vec<Vec<f64>> = train.iter().map(pair_features).collect();
    let labels: Vec<u8> = train.iter().map(|e| e.label).collect();
    let xf: Vec<Vec<f64>> = test.iter().map(pair_features).collect();
    knn_scores(&tf, &labels, &xf, k)
}
