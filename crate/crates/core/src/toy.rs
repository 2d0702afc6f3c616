//! Seeded synthetic corpus with a planted co-occurrence rule.
//!
//! Every toxin and protein belongs to one of `classes` classes. A toxin of
//! class `c` carries the SMILES marker character `TOXIN_MARKERS[c]` and a
//! protein of class `c` the residue `PROTEIN_MARKERS[c]`; neither marker
//! appears anywhere else. A pair interacts exactly when the classes match.
//! All interacting pairs are written as positives, so negatives sampled
//! from the complement are true non-interactions.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Corpus, InteractionPair, ProteinTarget, Toxin, AMINO_ACIDS};
use crate::error::{Error, Result};

pub const TOXIN_MARKERS: [char; 6] = ['N', 'O', 'S', 'P', 'I', 'K'];
pub const PROTEIN_MARKERS: [char; 6] = ['W', 'C', 'H', 'Y', 'M', 'F'];

const SMILES_FILLER: &[char] = &['C', 'C', 'C', 'c', 'c', '(', ')', '=', '1', '2', '#', 'l', 'B', 'r'];

#[derive(Clone, Debug, PartialEq)]
pub struct ToyConfig {
    pub toxins: usize,
    pub proteins: usize,
    pub classes: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig { toxins: 60, proteins: 60, classes: 4, seed: 0 }
    }
}

fn with_markers(rng: &mut ChaCha8Rng, filler: &[char], len: usize, marker: char, copies: usize) -> String {
    let mut s: Vec<char> = (0..len).map(|_| *filler.choose(rng).expect("non-empty filler")).collect();
    for _ in 0..copies {
        let at = rng.gen_range(0..=s.len());
        s.insert(at, marker);
    }
    s.into_iter().collect()
}

/// Class of entity `i`; classes are dealt round-robin.
pub fn toy_class(i: usize, classes: usize) -> usize {
    i % classes
}

pub fn make_toy(cfg: &ToyConfig) -> Result<Corpus> {
    if cfg.classes < 2 || cfg.classes > TOXIN_MARKERS.len() {
        return Err(Error::usage(format!("toy classes must be between 2 and {}", TOXIN_MARKERS.len())));
    }
    if cfg.toxins < cfg.classes || cfg.proteins < cfg.classes {
        return Err(Error::usage("need at least one toxin and one protein per class"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let residues: Vec<char> = AMINO_ACIDS.chars().filter(|c| !PROTEIN_MARKERS.contains(c)).collect();
    let toxins: Vec<Toxin> = (0..cfg.toxins)
        .map(|i| {
            let len = rng.gen_range(6..=12);
            let marker = TOXIN_MARKERS[toy_class(i, cfg.classes)];
            Toxin { toxin_id: format!("TOX{i:03}"), smiles: with_markers(&mut rng, SMILES_FILLER, len, marker, 2) }
        })
        .collect();
    let proteins: Vec<ProteinTarget> = (0..cfg.proteins)
        .map(|i| {
            let len = rng.gen_range(10..=18);
            let marker = PROTEIN_MARKERS[toy_class(i, cfg.classes)];
            ProteinTarget { protein_id: format!("PRT{i:03}"), sequence: with_markers(&mut rng, &residues, len, marker, 3) }
        })
        .collect();
    let mut pairs = Vec::new();
    for (i, t) in toxins.iter().enumerate() {
        for (j, p) in proteins.iter().enumerate() {
            if toy_class(i, cfg.classes) == toy_class(j, cfg.classes) {
                pairs.push(InteractionPair::new(t.toxin_id.clone(), p.protein_id.clone(), 1));
            }
        }
    }
    Corpus::new(toxins, proteins, pairs)
}
