use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Corpus, InteractionPair};
use crate::error::{Error, Result};

/// Draws `round(ratio × positives)` label-0 pairs uniformly without
/// replacement from the toxin × protein grid minus every pair already in
/// the corpus. Output is in grid order (toxin-major), so the result is a
/// pure function of `(corpus, ratio, seed)`.
pub fn sample_negatives(corpus: &Corpus, ratio: f64, seed: u64) -> Result<Vec<InteractionPair>> {
    if !(ratio.is_finite() && ratio >= 0.0) {
        return Err(Error::usage(format!("negative ratio {ratio} must be a non-negative number")));
    }
    let n_pos = corpus.positives().count();
    let wanted = (ratio * n_pos as f64).round() as usize;
    let n_prot = corpus.proteins().len();
    let taken: HashSet<usize> = corpus
        .pairs()
        .iter()
        .map(|p| {
            let t = corpus.toxin_position(&p.toxin_id).expect("validated pair");
            let q = corpus.protein_position(&p.protein_id).expect("validated pair");
            t * n_prot + q
        })
        .collect();
    let grid = corpus.toxins().len() * n_prot;
    let complement = grid - taken.len();
    if wanted > complement {
        return Err(Error::data(format!(
            "requested {wanted} negatives but only {complement} unlabelled toxin-protein combinations exist"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, complement, wanted).into_vec();
    picked.sort_unstable();

    // map complement ranks to grid cells in one sweep
    let mut out = Vec::with_capacity(wanted);
    let mut rank = 0usize;
    let mut next = picked.iter().peekable();
    for cell in 0..grid {
        if next.peek().is_none() {
            break;
        }
        if taken.contains(&cell) {
            continue;
        }
        if **next.peek().unwrap() == rank {
            next.next();
            let t = &corpus.toxins()[cell / n_prot];
            let p = &corpus.proteins()[cell % n_prot];
            out.push(InteractionPair::new(t.toxin_id.clone(), p.protein_id.clone(), 0));
        }
        rank += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ProteinTarget, Toxin};

    pub(crate) fn grid_corpus(nt: usize, np: usize, positives: &[(usize, usize)]) -> Corpus {
        let toxins = (0..nt).map(|i| Toxin { toxin_id: format!("T{i}"), smiles: "C".into() }).collect();
        let proteins = (0..np)
            .map(|i| ProteinTarget { protein_id: format!("P{i}"), sequence: "A".into() })
            .collect();
        let pairs = positives
            .iter()
            .map(|&(t, p)| InteractionPair::new(format!("T{t}"), format!("P{p}"), 1))
            .collect();
        Corpus::new(toxins, proteins, pairs).unwrap()
    }

    #[test]
    fn two_by_two_grid() {
        let c = grid_corpus(2, 2, &[(0, 1)]);
        let neg = sample_negatives(&c, 1.0, 5).unwrap();
        assert_eq!(neg.len(), 1);
        assert_ne!(neg[0].key(), ("T0", "P1"));
        assert_eq!(neg[0].label, 0);
    }

    #[test]
    fn deterministic_given_seed() {
        let c = grid_corpus(10, 12, &[(0, 1), (3, 3), (9, 11)]);
        let a = sample_negatives(&c, 2.0, 42).unwrap();
        let b = sample_negatives(&c, 2.0, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
    }

    #[test]
    fn too_many_requested_is_data_error() {
        let c = grid_corpus(2, 2, &[(0, 0), (0, 1), (1, 0)]);
        assert!(matches!(sample_negatives(&c, 2.0, 0), Err(Error::Data(_))));
        assert_eq!(sample_negatives(&c, 1.0 / 3.0, 0).unwrap().len(), 1);
    }

    #[test]
    fn never_emits_positives_and_is_uniform() {
        let positives: Vec<(usize, usize)> = (0..10).map(|i| (i * 7 % 100, i * 13 % 100)).collect();
        let c = grid_corpus(100, 100, &positives);
        let pos: HashSet<(String, String)> =
            c.positives().map(|p| (p.toxin_id.clone(), p.protein_id.clone())).collect();
        let mut counts = std::collections::HashMap::<(String, String), u64>::new();
        let seeds = 1000u64;
        for seed in 0..seeds {
            for n in sample_negatives(&c, 1.0, seed).unwrap() {
                assert!(!pos.contains(&(n.toxin_id.clone(), n.protein_id.clone())));
                *counts.entry((n.toxin_id, n.protein_id)).or_default() += 1;
            }
        }
        // chi-square over all complement cells against the uniform expectation
        let cells = 100 * 100 - 10;
        let expected = seeds as f64 * 10.0 / cells as f64;
        let mut chi2 = 0.0;
        for t in 0..100 {
            for p in 0..100 {
                let key = (format!("T{t}"), format!("P{p}"));
                if pos.contains(&key) {
                    continue;
                }
                let o = *counts.get(&key).unwrap_or(&0) as f64;
                chi2 += (o - expected).powi(2) / expected;
            }
        }
        let df = (cells - 1) as f64;
        assert!((chi2 - df).abs() <= 3.0 * (2.0 * df).sqrt(), "chi2 {chi2} df {df}");
    }
}
