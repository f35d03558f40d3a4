use super::{linear, ParamInit};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Var};

/// Query/key/value/output projections of one attention block. The key
/// projection has no bias: it would add a per-query constant to every score,
/// which the softmax cancels.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

impl AttentionParams {
    pub fn new(prefix: &str, d_model: usize, init: &mut ParamInit) -> Result<Self> {
        let sq = [d_model, d_model];
        let b = [d_model];
        Ok(Self {
            wq: init.normal(&format!("{prefix}.wq"), &sq)?,
            bq: init.zeros(&format!("{prefix}.bq"), &b)?,
            wk: init.normal(&format!("{prefix}.wk"), &sq)?,
            wv: init.normal(&format!("{prefix}.wv"), &sq)?,
            bv: init.zeros(&format!("{prefix}.bv"), &b)?,
            wo: init.normal(&format!("{prefix}.wo"), &sq)?,
            bo: init.zeros(&format!("{prefix}.bo"), &b)?,
        })
    }
}

pub struct AttentionOutput {
    /// `[L_q x d_model]`.
    pub output: Var,
    /// One `[L_q x L_k]` weight matrix per head.
    pub weights: Vec<Var>,
}

/// Scaled dot-product attention over `n_heads` heads for one sequence.
///
/// `query`, `key` and `value` are `[L x d_model]` inputs that are projected
/// here; keys with `key_mask[j] == false` get exactly zero weight.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention(
    g: &mut Graph,
    store: &ParamStore,
    p: &AttentionParams,
    query: Var,
    key: Var,
    value: Var,
    key_mask: &[bool],
    n_heads: usize,
) -> Result<AttentionOutput> {
    let d = g.shape(query).get(1).copied().unwrap_or(0);
    if n_heads == 0 || d % n_heads != 0 {
        return Err(Error::Config(format!(
            "d_model {d} not divisible by {n_heads} heads"
        )));
    }
    if g.shape(key) != g.shape(value) || g.shape(key).get(1) != Some(&d) {
        return Err(Error::Dimension {
            op: "attention",
            lhs: g.shape(key).to_vec(),
            rhs: g.shape(value).to_vec(),
        });
    }
    let q = linear(g, store, query, p.wq, p.bq)?;
    let wk = g.param(store, p.wk);
    let k = g.matmul(key, wk)?;
    let v = linear(g, store, value, p.wv, p.bv)?;
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = h * dh..(h + 1) * dh;
        let (qh, kh, vh) = if n_heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, cols.clone())?,
                g.slice_cols(k, cols.clone())?,
                g.slice_cols(v, cols)?,
            )
        };
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale)?;
        let w = g.masked_softmax(scores, key_mask)?;
        heads.push(g.matmul(w, vh)?);
        weights.push(w);
    }
    let merged = if n_heads == 1 {
        heads[0]
    } else {
        g.concat_cols(&heads)?
    };
    let output = linear(g, store, merged, p.wo, p.bo)?;
    Ok(AttentionOutput { output, weights })
}
