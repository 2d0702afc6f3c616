//! Toxin / protein / pair corpus: parsing, negative sampling and splits.

mod negatives;
mod split;

pub use negatives::sample_negatives;
pub use split::{read_manifest, split, write_manifest, DatasetSplit, Fractions, Partition, SplitPolicy};

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Canonical amino-acid alphabet; `X` stands for anything non-standard.
pub const AMINO_ACIDS: &str = "ACDEFGHIKLMNPQRSTVWY";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Toxin {
    pub toxin_id: String,
    pub smiles: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProteinTarget {
    pub protein_id: String,
    pub sequence: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InteractionPair {
    pub toxin_id: String,
    pub protein_id: String,
    pub label: u8,
}

impl InteractionPair {
    pub fn new(toxin_id: impl Into<String>, protein_id: impl Into<String>, label: u8) -> Self {
        InteractionPair { toxin_id: toxin_id.into(), protein_id: protein_id.into(), label }
    }

    pub fn key(&self) -> (&str, &str) {
        (&self.toxin_id, &self.protein_id)
    }
}

/// Validated corpus. Entity order is file order.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    toxins: Vec<Toxin>,
    proteins: Vec<ProteinTarget>,
    pairs: Vec<InteractionPair>,
    toxin_index: HashMap<String, usize>,
    protein_index: HashMap<String, usize>,
}

/// Maps B, Z, J, U, O to X and upper-cases. Anything else outside the
/// alphabet is returned as the offending character.
pub fn normalize_sequence(seq: &str) -> std::result::Result<String, char> {
    seq.chars()
        .map(|c| {
            let c = c.to_ascii_uppercase();
            if AMINO_ACIDS.contains(c) || c == 'X' {
                Ok(c)
            } else if matches!(c, 'B' | 'Z' | 'J' | 'U' | 'O') {
                Ok('X')
            } else {
                Err(c)
            }
        })
        .collect()
}

fn check_smiles(smiles: &str) -> std::result::Result<(), char> {
    match smiles.chars().find(|c| !c.is_ascii_graphic()) {
        Some(c) => Err(c),
        None => Ok(()),
    }
}

impl Corpus {
    /// Builds a corpus from in-memory records, applying the same validation
    /// as [`parse_corpus`].
    pub fn new(toxins: Vec<Toxin>, proteins: Vec<ProteinTarget>, pairs: Vec<InteractionPair>) -> Result<Self> {
        let mut corpus = Corpus::default();
        for (i, t) in toxins.into_iter().enumerate() {
            corpus.push_toxin(t).map_err(|e| Error::data(format!("toxin record {}: {e}", i + 1)))?;
        }
        for (i, p) in proteins.into_iter().enumerate() {
            corpus.push_protein(p).map_err(|e| Error::data(format!("protein record {}: {e}", i + 1)))?;
        }
        let mut seen = HashSet::new();
        for (i, p) in pairs.into_iter().enumerate() {
            corpus
                .push_pair(p, &mut seen)
                .map_err(|e| Error::data(format!("pair record {}: {e}", i + 1)))?;
        }
        Ok(corpus)
    }

    fn push_toxin(&mut self, t: Toxin) -> std::result::Result<(), String> {
        if t.toxin_id.is_empty() {
            return Err("empty toxin_id".into());
        }
        if t.smiles.is_empty() {
            return Err(format!("empty SMILES for {}", t.toxin_id));
        }
        if let Err(c) = check_smiles(&t.smiles) {
            return Err(format!("illegal SMILES character {c:?} in {}", t.toxin_id));
        }
        if self.toxin_index.contains_key(&t.toxin_id) {
            return Err(format!("duplicate toxin_id {}", t.toxin_id));
        }
        self.toxin_index.insert(t.toxin_id.clone(), self.toxins.len());
        self.toxins.push(t);
        Ok(())
    }

    fn push_protein(&mut self, p: ProteinTarget) -> std::result::Result<(), String> {
        if p.protein_id.is_empty() {
            return Err("empty protein_id".into());
        }
        if p.sequence.is_empty() {
            return Err(format!("empty sequence for {}", p.protein_id));
        }
        let sequence = normalize_sequence(&p.sequence)
            .map_err(|c| format!("illegal residue {c:?} in {}", p.protein_id))?;
        if self.protein_index.contains_key(&p.protein_id) {
            return Err(format!("duplicate protein_id {}", p.protein_id));
        }
        self.protein_index.insert(p.protein_id.clone(), self.proteins.len());
        self.proteins.push(ProteinTarget { protein_id: p.protein_id, sequence });
        Ok(())
    }

    fn push_pair(
        &mut self,
        p: InteractionPair,
        seen: &mut HashSet<(String, String)>,
    ) -> std::result::Result<(), String> {
        if p.label > 1 {
            return Err(format!("label {} is not 0 or 1", p.label));
        }
        if !self.toxin_index.contains_key(&p.toxin_id) {
            return Err(format!("unknown toxin_id {}", p.toxin_id));
        }
        if !self.protein_index.contains_key(&p.protein_id) {
            return Err(format!("unknown protein_id {}", p.protein_id));
        }
        if !seen.insert((p.toxin_id.clone(), p.protein_id.clone())) {
            return Err(format!("duplicate pair ({}, {})", p.toxin_id, p.protein_id));
        }
        self.pairs.push(p);
        Ok(())
    }

    pub fn toxins(&self) -> &[Toxin] {
        &self.toxins
    }

    pub fn proteins(&self) -> &[ProteinTarget] {
        &self.proteins
    }

    pub fn pairs(&self) -> &[InteractionPair] {
        &self.pairs
    }

    pub fn toxin(&self, id: &str) -> Option<&Toxin> {
        self.toxin_index.get(id).map(|&i| &self.toxins[i])
    }

    pub fn protein(&self, id: &str) -> Option<&ProteinTarget> {
        self.protein_index.get(id).map(|&i| &self.proteins[i])
    }

    pub fn toxin_position(&self, id: &str) -> Option<usize> {
        self.toxin_index.get(id).copied()
    }

    pub fn protein_position(&self, id: &str) -> Option<usize> {
        self.protein_index.get(id).copied()
    }

    pub fn positives(&self) -> impl Iterator<Item = &InteractionPair> {
        self.pairs.iter().filter(|p| p.label == 1)
    }

    /// (toxins, proteins, pairs)
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.toxins.len(), self.proteins.len(), self.pairs.len())
    }

    pub fn write_tsv(&self, toxin_file: &Path, protein_file: &Path, pair_file: &Path) -> Result<()> {
        let mut out = fs::File::create(toxin_file)?;
        for t in &self.toxins {
            writeln!(out, "{}\t{}", t.toxin_id, t.smiles)?;
        }
        let mut out = fs::File::create(protein_file)?;
        for p in &self.proteins {
            writeln!(out, "{}\t{}", p.protein_id, p.sequence)?;
        }
        let mut out = fs::File::create(pair_file)?;
        for p in &self.pairs {
            writeln!(out, "{}\t{}\t{}", p.toxin_id, p.protein_id, p.label)?;
        }
        Ok(())
    }
}

/// Yields `(line_number, fields)` for every non-blank, non-comment line.
pub(crate) fn tsv_records(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r').split('\t').map(str::to_owned).collect()))
        .collect())
}

fn expect_fields(path: &Path, line: usize, fields: &[String], n: usize) -> Result<()> {
    if fields.len() != n {
        return Err(Error::data_at(path, line, format!("expected {n} tab-separated fields, found {}", fields.len())));
    }
    Ok(())
}

/// Reads and validates the three corpus TSV files.
pub fn parse_corpus(toxin_file: &Path, protein_file: &Path, pair_file: &Path) -> Result<Corpus> {
    let mut corpus = parse_entities(toxin_file, protein_file)?;
    let mut seen = HashSet::new();
    for (line, f) in tsv_records(pair_file)? {
        expect_fields(pair_file, line, &f, 3)?;
        let label = match f[2].as_str() {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::data_at(pair_file, line, format!("label {other:?} is not 0 or 1"))),
        };
        let p = InteractionPair::new(f[0].clone(), f[1].clone(), label);
        corpus.push_pair(p, &mut seen).map_err(|e| Error::data_at(pair_file, line, e))?;
    }
    Ok(corpus)
}

/// Toxins and proteins only; the result has no pairs.
pub fn parse_entities(toxin_file: &Path, protein_file: &Path) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    for (line, f) in tsv_records(toxin_file)? {
        expect_fields(toxin_file, line, &f, 2)?;
        let t = Toxin { toxin_id: f[0].clone(), smiles: f[1].clone() };
        corpus.push_toxin(t).map_err(|e| Error::data_at(toxin_file, line, e))?;
    }
    for (line, f) in tsv_records(protein_file)? {
        expect_fields(protein_file, line, &f, 2)?;
        let p = ProteinTarget { protein_id: f[0].clone(), sequence: f[1].clone() };
        corpus.push_protein(p).map_err(|e| Error::data_at(protein_file, line, e))?;
    }
    Ok(corpus)
}
