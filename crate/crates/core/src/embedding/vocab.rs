use crate::data::{normalize_sequence, AMINO_ACIDS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VocabKind {
    Protein,
    Smiles,
}

/// Fixed symbol list with a trailing unknown slot.
///
/// * protein: `ACDEFGHIKLMNPQRSTVWY`, then `X` at index 20 (21 symbols).
///   Non-standard residues are normalised to `X` before lookup, so `X`
///   doubles as the unknown symbol.
/// * SMILES: every printable ASCII character `!`..=`~` in code-point order
///   (94 symbols), then UNK at index 94.
#[derive(Clone, Debug)]
pub struct TokenVocabulary {
    kind: VocabKind,
    symbols: Vec<char>,
}

impl TokenVocabulary {
    pub fn protein() -> Self {
        let mut symbols: Vec<char> = AMINO_ACIDS.chars().collect();
        symbols.push('X');
        TokenVocabulary { kind: VocabKind::Protein, symbols }
    }

    pub fn smiles() -> Self {
        TokenVocabulary { kind: VocabKind::Smiles, symbols: ('!'..='~').collect() }
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    /// Number of rows an embedding table for this vocabulary needs.
    pub fn size(&self) -> usize {
        match self.kind {
            VocabKind::Protein => self.symbols.len(),
            VocabKind::Smiles => self.symbols.len() + 1,
        }
    }

    pub fn unk(&self) -> usize {
        match self.kind {
            VocabKind::Protein => self.symbols.len() - 1,
            VocabKind::Smiles => self.symbols.len(),
        }
    }

    pub fn index_of(&self, c: char) -> usize {
        match self.kind {
            VocabKind::Protein => AMINO_ACIDS.find(c).unwrap_or(self.unk()),
            VocabKind::Smiles if c.is_ascii_graphic() => c as usize - '!' as usize,
            VocabKind::Smiles => self.unk(),
        }
    }

    pub fn symbol(&self, index: usize) -> Option<char> {
        self.symbols.get(index).copied()
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        match self.kind {
            VocabKind::Protein => tokenize_protein(text),
            VocabKind::Smiles => tokenize_smiles(text),
        }
    }

    /// Inverse of tokenisation. The SMILES UNK slot renders as U+FFFD.
    pub fn detokenize(&self, indices: &[usize]) -> String {
        indices.iter().map(|&i| self.symbol(i).unwrap_or('\u{FFFD}')).collect()
    }
}

/// One index per residue; output position `i` is residue `i + 1`.
pub fn tokenize_protein(sequence: &str) -> Result<Vec<usize>> {
    if sequence.is_empty() {
        return Err(Error::data("empty protein sequence"));
    }
    let norm = normalize_sequence(sequence).map_err(|c| Error::data(format!("illegal residue {c:?}")))?;
    let vocab = TokenVocabulary::protein();
    Ok(norm.chars().map(|c| vocab.index_of(c)).collect())
}

/// Character-level SMILES tokens; characters outside the vocabulary map to UNK.
pub fn tokenize_smiles(smiles: &str) -> Result<Vec<usize>> {
    if smiles.is_empty() {
        return Err(Error::data("empty SMILES string"));
    }
    let vocab = TokenVocabulary::smiles();
    Ok(smiles.chars().map(|c| vocab.index_of(c)).collect())
}
