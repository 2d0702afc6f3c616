use std::cmp::Ordering;

use super::{HotspotAggregate, TipFormer};
use crate::embedding::SequenceInput;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hotspot {
    pub residue: i64,
    pub score: f64,
}

/// Per-residue score: column mean (or max) of an `n×m` interaction map.
pub fn aggregate_columns(map: &Tensor<f64>, how: HotspotAggregate) -> Vec<f64> {
    let (n, m) = (map.rows(), map.cols());
    (0..m)
        .map(|j| {
            let col = (0..n).map(|i| map.get(i, j));
            match how {
                HotspotAggregate::Mean => col.sum::<f64>() / n as f64,
                HotspotAggregate::Max => col.fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

/// Top `k` residues by descending score, ties to the lower residue number.
/// Position `j` (0-based) is reported as residue `j + 1 + offset`.
pub fn top_k_residues(scores: &[f64], k: usize, offset: i64) -> Result<Vec<Hotspot>> {
    if k == 0 || k > scores.len() {
        return Err(Error::usage(format!("k = {k} must be between 1 and the sequence length {}", scores.len())));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    Ok(order[..k].iter().map(|&j| Hotspot { residue: j as i64 + 1 + offset, score: scores[j] }).collect())
}

/// Ranks protein residues by the outer product of the final toxin and
/// protein feature matrices, aggregated over toxin positions.
pub fn extract_hotspots<F: Scalar>(
    model: &TipFormer<F>,
    toxin: &SequenceInput,
    protein: &SequenceInput,
    k: usize,
    residue_offset: i64,
) -> Result<Vec<Hotspot>> {
    if k == 0 || k > protein.len() {
        return Err(Error::usage(format!("k = {k} must be between 1 and the protein length {}", protein.len())));
    }
    let (_, out) = model.predict_details(toxin, protein)?;
    let scores = aggregate_columns(&out.attention.interaction_map, model.config().hotspot_aggregate);
    top_k_residues(&scores, k, residue_offset)
}
