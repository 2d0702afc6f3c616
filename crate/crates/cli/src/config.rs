//! Run configuration: TOML file with dotted keys, then command-line flags.
//!
//! ```toml
//! seed = 7
//! model.hidden = 32
//! model.variant = "deepcnn"
//! train.learning_rate = 1e-4
//! split.policy = "new_toxin"
//! split.fractions = [0.8, 0.1, 0.1]
//! data.corpus = "toy"
//! ```
//!
//! Relative paths are resolved against the working directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use tipformer::data::{parse_corpus, parse_entities, Corpus, Fractions, SplitPolicy};
use tipformer::embedding::{load_embeddings, EmbeddingSource};
use tipformer::model::{EmbeddingKind, ModelConfig};
use tipformer::train::TrainConfig;
use tipformer::{Error, Result};

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub policy: Option<SplitPolicy>,
    pub fractions: Option<[f64; 3]>,
    pub neg_ratio: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Directory with `toxins.tsv`, `proteins.tsv` and `pairs.tsv`.
    pub corpus: Option<PathBuf>,
    pub toxins: Option<PathBuf>,
    pub proteins: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub toxin_embeddings: Option<PathBuf>,
    pub protein_embeddings: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitSection,
    pub data: DataSection,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {}", path.display(), e.message())))
    }
}

/// Command-line values that override the file.
#[derive(Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub policy: Option<String>,
    pub fractions: Option<String>,
    pub neg_ratio: Option<f64>,
    pub data: DataSection,
}

/// Merged view used by every subcommand.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub policy: SplitPolicy,
    pub fractions: Fractions,
    pub neg_ratio: f64,
    pub seed: u64,
    pub data: DataSection,
}

fn pick<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

impl RunConfig {
    pub fn merge(file: FileConfig, o: Overrides) -> Result<Self> {
        let policy = match o.policy {
            Some(p) => p.parse()?,
            None => file.split.policy.unwrap_or(SplitPolicy::Random),
        };
        let fractions = match (o.fractions, file.split.fractions) {
            (Some(s), _) => s.parse()?,
            (None, Some([a, b, c])) => Fractions::new(a, b, c).map_err(|e| Error::config(e.to_string()))?,
            (None, None) => Fractions::new(0.8, 0.1, 0.1)?,
        };
        let seed = o.seed.or(file.seed).unwrap_or(file.train.seed);
        let f = file.data;
        let d = o.data;
        let data = DataSection {
            corpus: pick(d.corpus, f.corpus),
            toxins: pick(d.toxins, f.toxins),
            proteins: pick(d.proteins, f.proteins),
            pairs: pick(d.pairs, f.pairs),
            manifest: pick(d.manifest, f.manifest),
            toxin_embeddings: pick(d.toxin_embeddings, f.toxin_embeddings),
            protein_embeddings: pick(d.protein_embeddings, f.protein_embeddings),
        };
        let rc = RunConfig {
            model: file.model,
            train: TrainConfig { seed, ..file.train },
            policy,
            fractions,
            neg_ratio: o.neg_ratio.or(file.split.neg_ratio).unwrap_or(1.0),
            seed,
            data,
        };
        if !(rc.neg_ratio.is_finite() && rc.neg_ratio >= 0.0) {
            return Err(Error::usage(format!("--neg-ratio {} must be a non-negative number", rc.neg_ratio)));
        }
        Ok(rc)
    }

    fn corpus_file(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        explicit
            .clone()
            .unwrap_or_else(|| self.data.corpus.clone().unwrap_or_else(|| PathBuf::from(".")).join(name))
    }

    pub fn toxin_file(&self) -> PathBuf {
        self.corpus_file(&self.data.toxins, "toxins.tsv")
    }

    pub fn protein_file(&self) -> PathBuf {
        self.corpus_file(&self.data.proteins, "proteins.tsv")
    }

    pub fn pair_file(&self) -> PathBuf {
        self.corpus_file(&self.data.pairs, "pairs.tsv")
    }

    /// Input paths a command will read; checked up front by [`require_files`].
    pub fn corpus_inputs(&self, with_pairs: bool) -> Vec<PathBuf> {
        let mut v = vec![self.toxin_file(), self.protein_file()];
        if with_pairs {
            v.push(self.pair_file());
        }
        v.extend(self.data.toxin_embeddings.iter().cloned());
        v.extend(self.data.protein_embeddings.iter().cloned());
        v
    }

    pub fn load_corpus(&self) -> Result<Corpus> {
        parse_corpus(&self.toxin_file(), &self.protein_file(), &self.pair_file())
    }

    pub fn load_entities(&self) -> Result<Corpus> {
        parse_entities(&self.toxin_file(), &self.protein_file())
    }

    /// Switches the model to precomputed inputs when embedding files are given.
    pub fn apply_embedding_choice(&mut self) -> Result<()> {
        match (&self.data.toxin_embeddings, &self.data.protein_embeddings) {
            (Some(_), Some(_)) => self.model.embedding = EmbeddingKind::Precomputed,
            (None, None) => {}
            _ => return Err(Error::usage("give both --toxin-embeddings and --protein-embeddings, or neither")),
        }
        Ok(())
    }

    /// Embedding source matching `model`.
    pub fn embedding_source(&self, model: &ModelConfig) -> Result<EmbeddingSource> {
        match model.embedding {
            EmbeddingKind::Fallback => Ok(EmbeddingSource::Fallback),
            EmbeddingKind::Precomputed => {
                let (Some(t), Some(p)) = (&self.data.toxin_embeddings, &self.data.protein_embeddings) else {
                    return Err(Error::usage(
                        "the model uses precomputed embeddings; pass --toxin-embeddings and --protein-embeddings",
                    ));
                };
                Ok(EmbeddingSource::Precomputed {
                    toxins: load_embeddings(t, model.toxin_dim).map_err(|e| e.context(t.display()))?,
                    proteins: load_embeddings(p, model.protein_dim).map_err(|e| e.context(p.display()))?,
                })
            }
        }
    }
}

/// Every input must exist before any work starts.
pub fn require_files<'a>(paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            return Err(Error::data(format!("input file {} does not exist", p.display())));
        }
    }
    Ok(())
}

/// Creates the parent directory of an output file when needed.
pub fn prepare_output(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    if path.is_dir() {
        return Err(Error::usage(format!("output path {} is a directory", path.display())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tipformer::model::Variant;

    fn parse(text: &str) -> Result<FileConfig> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    #[test]
    fn dotted_keys_fill_sections() {
        let f = parse("seed = 3\nmodel.hidden = 16\nmodel.variant = \"deepcnn\"\ntrain.max_epochs = 2\n").unwrap();
        assert_eq!(f.model.hidden, 16);
        assert_eq!(f.model.variant, Variant::Deepcnn);
        assert_eq!(f.model.heads, ModelConfig::default().heads);
        let rc = RunConfig::merge(f, Overrides::default()).unwrap();
        assert_eq!((rc.seed, rc.train.seed, rc.train.max_epochs), (3, 3, 2));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse("model.hiden = 16\n").is_err());
        assert!(parse("learning_rate = 0.1\n").is_err());
        assert!(parse("[data]\ncorpus_dir = \"x\"\n").is_err());
    }

    #[test]
    fn flags_win() {
        let f = parse("seed = 3\nsplit.policy = \"new_target\"\nsplit.fractions = [0.6, 0.2, 0.2]\n").unwrap();
        let o = Overrides { seed: Some(9), policy: Some("new-toxin".into()), ..Default::default() };
        let rc = RunConfig::merge(f, o).unwrap();
        assert_eq!(rc.seed, 9);
        assert_eq!(rc.policy, SplitPolicy::NewToxin);
        assert_eq!(rc.fractions, Fractions::new(0.6, 0.2, 0.2).unwrap());
    }

    #[test]
    fn corpus_paths() {
        let mut rc = RunConfig::merge(FileConfig::default(), Overrides::default()).unwrap();
        assert_eq!(rc.pair_file(), PathBuf::from("./pairs.tsv"));
        rc.data.corpus = Some("toy".into());
        rc.data.pairs = Some("other.tsv".into());
        assert_eq!(rc.toxin_file(), PathBuf::from("toy/toxins.tsv"));
        assert_eq!(rc.pair_file(), PathBuf::from("other.tsv"));
    }
}
