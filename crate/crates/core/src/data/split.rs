use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{tsv_records, InteractionPair};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    Random,
    NewToxin,
    NewTarget,
}

impl fmt::Display for SplitPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitPolicy::Random => "random",
            SplitPolicy::NewToxin => "new_toxin",
            SplitPolicy::NewTarget => "new_target",
        })
    }
}

impl FromStr for SplitPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "random" => Ok(SplitPolicy::Random),
            "new_toxin" => Ok(SplitPolicy::NewToxin),
            "new_target" => Ok(SplitPolicy::NewTarget),
            _ => Err(Error::usage(format!("unknown split policy {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "val" => Ok(Partition::Val),
            "test" => Ok(Partition::Test),
            _ => Err(Error::usage(format!("unknown partition {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Fractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let all = [train, val, test];
        if all.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::usage(format!("split fractions {all:?} must all be positive")));
        }
        if (train + val + test - 1.0).abs() > 1e-6 {
            return Err(Error::usage(format!("split fractions {all:?} must sum to 1")));
        }
        Ok(Fractions { train, val, test })
    }

    /// Partition sizes for `n` items: val and test are floored, the
    /// remainder goes to train.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let floor = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
        let val = floor(self.val);
        let test = floor(self.test);
        (n - val - test, val, test)
    }
}

impl FromStr for Fractions {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::usage(format!("fractions {s:?} must be three comma-separated numbers")))?;
        match parts[..] {
            [a, b, c] => Fractions::new(a, b, c),
            _ => Err(Error::usage(format!("fractions {s:?} must be three comma-separated numbers"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<InteractionPair>,
    pub validation: Vec<InteractionPair>,
    pub test: Vec<InteractionPair>,
    pub policy: SplitPolicy,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn partition(&self, p: Partition) -> &[InteractionPair] {
        match p {
            Partition::Train => &self.train,
            Partition::Val => &self.validation,
            Partition::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Toxin ids (or protein ids for `new_target`) held out in test.
    pub fn held_out_entities(&self) -> BTreeSet<&str> {
        self.test
            .iter()
            .map(|p| match self.policy {
                SplitPolicy::NewTarget => p.protein_id.as_str(),
                _ => p.toxin_id.as_str(),
            })
            .collect()
    }
}

/// Partitions `pairs` into train / validation / test.
///
/// `Random` shuffles pairs. The cold policies shuffle the distinct toxin
/// (or protein) ids and send every pair to the partition of its entity, so
/// test entities never occur in train or validation.
pub fn split(pairs: &[InteractionPair], policy: SplitPolicy, fractions: Fractions, seed: u64) -> Result<DatasetSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DatasetSplit { train: vec![], validation: vec![], test: vec![], policy, seed };
    match policy {
        SplitPolicy::Random => {
            let mut order: Vec<usize> = (0..pairs.len()).collect();
            order.shuffle(&mut rng);
            let (_, n_val, n_test) = fractions.sizes(pairs.len());
            let (test, rest) = order.split_at_mut(n_test);
            let (val, train) = rest.split_at_mut(n_val);
            // input order inside each partition
            for (idx, dst) in [(test, &mut out.test), (val, &mut out.validation), (train, &mut out.train)] {
                idx.sort_unstable();
                dst.extend(idx.iter().map(|&i| pairs[i].clone()));
            }
        }
        SplitPolicy::NewToxin | SplitPolicy::NewTarget => {
            let entity = |p: &InteractionPair| -> String {
                if policy == SplitPolicy::NewToxin {
                    p.toxin_id.clone()
                } else {
                    p.protein_id.clone()
                }
            };
            let mut ids: Vec<String> = pairs.iter().map(entity).collect::<BTreeSet<_>>().into_iter().collect();
            ids.shuffle(&mut rng);
            let (n_train, n_val, n_test) = fractions.sizes(ids.len());
            if n_train == 0 || n_val == 0 || n_test == 0 {
                return Err(Error::data(format!(
                    "{policy} split of {} entities gives an empty partition ({n_train}/{n_val}/{n_test})",
                    ids.len()
                )));
            }
            let test: BTreeSet<&String> = ids[..n_test].iter().collect();
            let val: BTreeSet<&String> = ids[n_test..n_test + n_val].iter().collect();
            for p in pairs {
                let e = entity(p);
                if test.contains(&e) {
                    out.test.push(p.clone());
                } else if val.contains(&e) {
                    out.validation.push(p.clone());
                } else {
                    out.train.push(p.clone());
                }
            }
        }
    }
    Ok(out)
}

pub fn write_manifest(split: &DatasetSplit, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "# policy={} seed={}", split.policy, split.seed)?;
    for part in [Partition::Train, Partition::Val, Partition::Test] {
        for p in split.partition(part) {
            writeln!(out, "{}\t{}\t{}\t{}", p.toxin_id, p.protein_id, p.label, part.as_str())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetSplit> {
    let text = fs::read_to_string(path).map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let mut out = DatasetSplit { train: vec![], validation: vec![], test: vec![], policy: SplitPolicy::Random, seed: 0 };
    if let Some(meta) = text.lines().next().and_then(|l| l.strip_prefix("# ")) {
        for kv in meta.split_whitespace() {
            match kv.split_once('=') {
                Some(("policy", v)) => out.policy = v.parse()?,
                Some(("seed", v)) => out.seed = v.parse().unwrap_or(0),
                _ => {}
            }
        }
    }
    for (line, f) in tsv_records(path)? {
        if f.len() != 4 {
            return Err(Error::data_at(path, line, "expected toxin_id, protein_id, label, partition"));
        }
        let label = match f[2].as_str() {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::data_at(path, line, format!("bad label {other:?}"))),
        };
        let part: Partition = f[3].parse().map_err(|_| Error::data_at(path, line, format!("bad partition {:?}", f[3])))?;
        let pair = InteractionPair::new(f[0].clone(), f[1].clone(), label);
        match part {
            Partition::Train => out.train.push(pair),
            Partition::Val => out.validation.push(pair),
            Partition::Test => out.test.push(pair),
        }
    }
    Ok(out)
}
