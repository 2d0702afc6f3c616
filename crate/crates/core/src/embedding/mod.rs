//! Token embeddings for toxins and proteins.
//!
//! Two providers sit behind [`EmbeddingSource`]: precomputed per-token
//! matrices from an external chemical / protein language model (TPFE files),
//! or a learned character/residue lookup table that lives inside the model.
//! The fallback is not ChemBERTa/ProtBert and adds no positional encoding.

mod inputs;
mod store;
mod vocab;

pub use inputs::{Example, InputCache};
pub use store::{
    load_embeddings, parse_embeddings, save_embeddings, EmbeddingMatrix, EmbeddingStore, CLM_DIM, PLM_DIM,
    TPFE_MAGIC, TPFE_VERSION,
};
pub use vocab::{tokenize_protein, tokenize_smiles, TokenVocabulary, VocabKind};

use crate::data::{ProteinTarget, Toxin};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Default width of the learned fallback embedding.
pub const FALLBACK_DIM: usize = 64;

/// What the model consumes for one entity.
#[derive(Clone, Debug, PartialEq)]
pub enum SequenceInput {
    /// Vocabulary indices for the fallback lookup table.
    Tokens(Vec<usize>),
    /// `L×D` precomputed embeddings.
    Embedded(Tensor<f32>),
}

impl SequenceInput {
    pub fn len(&self) -> usize {
        match self {
            SequenceInput::Tokens(t) => t.len(),
            SequenceInput::Embedded(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Component-wise mean over tokens. Token inputs use one-hot rows of a
    /// `vocab_size`-wide table (i.e. symbol frequencies).
    pub fn mean_pooled(&self, vocab_size: usize) -> Vec<f64> {
        match self {
            SequenceInput::Tokens(t) => {
                let mut v = vec![0.0; vocab_size];
                for &i in t {
                    v[i] += 1.0;
                }
                v.iter_mut().for_each(|x| *x /= t.len() as f64);
                v
            }
            SequenceInput::Embedded(m) => {
                let (l, d) = (m.rows(), m.cols());
                (0..d).map(|j| (0..l).map(|r| m.get(r, j) as f64).sum::<f64>() / l as f64).collect()
            }
        }
    }
}

#[derive(Clone, Debug)]
pub enum EmbeddingSource {
    Fallback,
    Precomputed { toxins: EmbeddingStore, proteins: EmbeddingStore },
}

impl EmbeddingSource {
    pub fn describe(&self) -> String {
        match self {
            EmbeddingSource::Fallback => {
                "fallback learned character/residue embeddings (not ChemBERTa/ProtBert)".to_owned()
            }
            EmbeddingSource::Precomputed { toxins, proteins } => format!(
                "precomputed embeddings (toxin dim {}, protein dim {})",
                toxins.dim(),
                proteins.dim()
            ),
        }
    }

    pub fn toxin_input(&self, toxin: &Toxin) -> Result<SequenceInput> {
        match self {
            EmbeddingSource::Fallback => Ok(SequenceInput::Tokens(tokenize_smiles(&toxin.smiles)?)),
            EmbeddingSource::Precomputed { toxins, .. } => toxins
                .get(&toxin.toxin_id)
                .map(|m| SequenceInput::Embedded(m.values.clone()))
                .ok_or_else(|| Error::data(format!("no embedding for toxin {}", toxin.toxin_id))),
        }
    }

    /// Precomputed protein matrices must have one row per residue so that
    /// row `i` stays residue `i + 1`.
    pub fn protein_input(&self, protein: &ProteinTarget) -> Result<SequenceInput> {
        match self {
            EmbeddingSource::Fallback => Ok(SequenceInput::Tokens(tokenize_protein(&protein.sequence)?)),
            EmbeddingSource::Precomputed { proteins, .. } => {
                let m = proteins
                    .get(&protein.protein_id)
                    .ok_or_else(|| Error::data(format!("no embedding for protein {}", protein.protein_id)))?;
                let len = protein.sequence.chars().count();
                if m.rows() != len {
                    return Err(Error::data(format!(
                        "embedding for {} has {} rows but the sequence has {len} residues",
                        protein.protein_id,
                        m.rows()
                    )));
                }
                Ok(SequenceInput::Embedded(m.values.clone()))
            }
        }
    }
}

/// Looks up rows of a trainable table; row `i` of the result is `table[indices[i]]`.
pub fn fallback_embed<F: Scalar>(tape: &mut Tape<F>, table: Var, indices: &[usize]) -> Result<Var> {
    tape.gather(table, indices)
}
