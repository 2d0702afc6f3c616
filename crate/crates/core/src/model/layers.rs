use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Var};

pub const LN_EPS: f64 = 1e-5;

/// Scaled dot-product attention over already projected `q`, `k`, `v`.
///
/// Head `i` uses columns `i*dk .. (i+1)*dk`. Returns the concatenated head
/// outputs (`L_q×d`) and one `L_q×L_k` weight node per head.
pub fn scaled_dot_attention<F: Scalar>(
    tape: &mut Tape<F>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
) -> Result<(Var, Vec<Var>)> {
    let d = tape.value(q).cols();
    if heads == 0 || d % heads != 0 {
        return Err(Error::dim(format!("width {d} is not divisible into {heads} heads")));
    }
    if tape.value(k).cols() != d || tape.value(v).cols() != d {
        return Err(Error::dim("query, key and value widths differ"));
    }
    let dk = d / heads;
    let scale = F::lit(1.0 / (dk as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (tape.slice_cols(q, h * dk, dk)?, tape.slice_cols(k, h * dk, dk)?, tape.slice_cols(v, h * dk, dk)?)
        };
        let scores = tape.matmul_bt(qh, kh)?;
        let scores = tape.scale(scores, scale)?;
        let w = tape.softmax(scores)?;
        outs.push(tape.matmul(w, vh)?);
        weights.push(w);
    }
    let out = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    Ok((out, weights))
}

/// Projection matrices of one attention block (no biases).
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

/// `concat_i softmax(Q_i K_iᵀ / √dk) V_i · Wo` with `Q = q_src·Wq`, `K = kv_src·Wk`, `V = kv_src·Wv`.
pub fn multi_head_attention<F: Scalar>(
    tape: &mut Tape<F>,
    q_src: Var,
    kv_src: Var,
    w: AttentionVars,
    heads: usize,
) -> Result<(Var, Vec<Var>)> {
    let q = tape.matmul(q_src, w.wq)?;
    let k = tape.matmul(kv_src, w.wk)?;
    let v = tape.matmul(kv_src, w.wv)?;
    let (mixed, weights) = scaled_dot_attention(tape, q, k, v, heads)?;
    Ok((tape.matmul(mixed, w.wo)?, weights))
}

/// Softmax over positions of the row L2 norms, then the weighted row sum (`1×d`).
pub fn weighted_pool<F: Scalar>(tape: &mut Tape<F>, feats: Var) -> Result<Var> {
    let norms = tape.row_norm(feats)?;
    let norms = tape.transpose(norms)?;
    let w = tape.softmax(norms)?;
    tape.matmul(w, feats)
}
