use super::{EmbeddingSource, SequenceInput};
use crate::data::{Corpus, InteractionPair};
use crate::error::{Error, Result};

/// Model inputs for every corpus entity, resolved once.
#[derive(Clone, Debug)]
pub struct InputCache {
    toxins: Vec<SequenceInput>,
    proteins: Vec<SequenceInput>,
}

/// One labelled pair with borrowed model inputs.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub toxin_id: &'a str,
    pub protein_id: &'a str,
    pub toxin: &'a SequenceInput,
    pub protein: &'a SequenceInput,
    pub label: u8,
}

impl InputCache {
    pub fn build(corpus: &Corpus, source: &EmbeddingSource) -> Result<Self> {
        let toxins = corpus.toxins().iter().map(|t| source.toxin_input(t)).collect::<Result<_>>()?;
        let proteins = corpus.proteins().iter().map(|p| source.protein_input(p)).collect::<Result<_>>()?;
        Ok(InputCache { toxins, proteins })
    }

    pub fn toxin(&self, corpus: &Corpus, id: &str) -> Result<&SequenceInput> {
        corpus
            .toxin_position(id)
            .map(|i| &self.toxins[i])
            .ok_or_else(|| Error::data(format!("unknown toxin id {id}")))
    }

    pub fn protein(&self, corpus: &Corpus, id: &str) -> Result<&SequenceInput> {
        corpus
            .protein_position(id)
            .map(|i| &self.proteins[i])
            .ok_or_else(|| Error::data(format!("unknown protein id {id}")))
    }

    pub fn examples<'a>(&'a self, corpus: &Corpus, pairs: &'a [InteractionPair]) -> Result<Vec<Example<'a>>> {
        pairs
            .iter()
            .map(|p| {
                Ok(Example {
                    toxin_id: &p.toxin_id,
                    protein_id: &p.protein_id,
                    toxin: self.toxin(corpus, &p.toxin_id)?,
                    protein: self.protein(corpus, &p.protein_id)?,
                    label: p.label,
                })
            })
            .collect()
    }
}
