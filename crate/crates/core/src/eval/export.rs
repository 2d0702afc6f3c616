use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::data::{tsv_records, InteractionPair};
use crate::embedding::Example;
use crate::error::{Error, Result};
use crate::model::TipFormer;
use crate::parallel::par_map;

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// CSV of the eval-mode `[o_1 ‖ o_2]` vectors:
/// `toxin_id,protein_id,label,f0,…,f{2d-1}`, one row per example.
pub fn export_features(model: &TipFormer, examples: &[Example<'_>], out: &mut dyn Write) -> Result<()> {
    let width = model.feature_dim();
    write!(out, "toxin_id,protein_id,label")?;
    for i in 0..width {
        write!(out, ",f{i}")?;
    }
    writeln!(out)?;
    let feats = par_map(examples, |e| model.features(e.toxin, e.protein));
    for (e, f) in examples.iter().zip(feats) {
        write!(out, "{},{},{}", csv_field(e.toxin_id), csv_field(e.protein_id), e.label)?;
        for v in f? {
            // shortest representation that round-trips
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Reads `toxin_id  protein_id  score` rows.
pub fn read_scores(path: &Path) -> Result<HashMap<(String, String), f64>> {
    let mut map = HashMap::new();
    for (line, f) in tsv_records(path)? {
        if f.len() != 3 {
            return Err(Error::data_at(path, line, "expected toxin_id, protein_id, score"));
        }
        let score: f64 = f[2]
            .trim()
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| Error::data_at(path, line, format!("bad score {:?}", f[2])))?;
        if map.insert((f[0].clone(), f[1].clone()), score).is_some() {
            return Err(Error::data_at(path, line, format!("duplicate score for ({}, {})", f[0], f[1])));
        }
    }
    Ok(map)
}

/// Looks up a score for every pair, in pair order.
pub fn scores_for(pairs: &[InteractionPair], scores: &HashMap<(String, String), f64>) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|p| {
            scores
                .get(&(p.toxin_id.clone(), p.protein_id.clone()))
                .copied()
                .ok_or_else(|| Error::data(format!("no score for pair ({}, {})", p.toxin_id, p.protein_id)))
        })
        .collect()
}

/// Writes `toxin_id  protein_id  score` rows.
pub fn write_scores(pairs: &[(&str, &str)], scores: &[f64], out: &mut dyn Write) -> Result<()> {
    writeln!(out, "toxin_id\tprotein_id\tprobability")?;
    for ((t, p), s) in pairs.iter().zip(scores) {
        writeln!(out, "{t}\t{p}\t{s}")?;
    }
    Ok(())
}
