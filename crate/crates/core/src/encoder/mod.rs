//! Pre-norm transformer encoders and segment pooling.

mod attention;
mod pooling;
#[cfg(test)]
mod tests;

pub use attention::{multi_head_attention, AttentionOutput, AttentionParams};
pub use pooling::{pool, pool_sequence, PoolStrategy};

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Mode, ParamId, ParamStore, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

fn default_dropout() -> f64 {
    0.1
}

fn default_max_seq_len() -> usize {
    512
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    #[serde(default = "default_dropout")]
    pub dropout_p: f64,
    #[serde(default = "default_max_seq_len")]
    pub max_seq_len: usize,
    /// Ignored by encoders that consume vectors rather than token ids.
    #[serde(default)]
    pub vocab_size: usize,
}

impl EncoderConfig {
    pub fn new(
        n_layers: usize,
        n_heads: usize,
        d_model: usize,
        d_ff: usize,
        vocab_size: usize,
    ) -> Self {
        Self {
            n_layers,
            n_heads,
            d_model,
            d_ff,
            dropout_p: default_dropout(),
            max_seq_len: default_max_seq_len(),
            vocab_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return Err(Error::Config(
                "n_layers, n_heads, d_model and d_ff must be positive".into(),
            ));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_seq_len < 2 {
            return Err(Error::Config("max_seq_len must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p {} not in [0, 1)",
                self.dropout_p
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Allocates named parameters with the standard transformer initialization.
pub struct ParamInit<'a> {
    pub store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    normal: Normal<f64>,
}

impl<'a> ParamInit<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self::with_std(store, rng, INIT_STD)
    }

    /// Same as [`ParamInit::new`] with a custom weight standard deviation.
    pub fn with_std(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng, std: f64) -> Self {
        Self {
            store,
            rng,
            normal: Normal::new(0.0, std).expect("valid std"),
        }
    }

    pub fn normal(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.normal.sample(self.rng)).collect();
        self.store.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.store.insert(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.store.insert(name, Tensor::ones(shape))
    }
}

#[derive(Clone, Debug)]
struct FeedForward {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
struct Layer {
    ln1: (ParamId, ParamId),
    attn: AttentionParams,
    ln2: (ParamId, ParamId),
    ff: FeedForward,
}

fn layer_norm(g: &mut Graph, store: &ParamStore, x: Var, ln: (ParamId, ParamId)) -> Result<Var> {
    let gain = g.param(store, ln.0);
    let bias = g.param(store, ln.1);
    g.layer_norm(x, gain, bias, LAYER_NORM_EPS)
}

pub(crate) fn linear(
    g: &mut Graph,
    store: &ParamStore,
    x: Var,
    w: ParamId,
    b: ParamId,
) -> Result<Var> {
    let w = g.param(store, w);
    let b = g.param(store, b);
    let y = g.matmul(x, w)?;
    g.add_bias(y, b)
}

/// A stack of pre-norm layers followed by a final layer norm.
#[derive(Clone, Debug)]
pub struct TransformerStack {
    cfg: EncoderConfig,
    layers: Vec<Layer>,
    final_ln: (ParamId, ParamId),
}

impl TransformerStack {
    pub fn new(prefix: &str, cfg: &EncoderConfig, init: &mut ParamInit) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for i in 0..cfg.n_layers {
            let p = format!("{prefix}.layers.{i}");
            let ln1 = (
                init.ones(&format!("{p}.ln1.gain"), &[d])?,
                init.zeros(&format!("{p}.ln1.bias"), &[d])?,
            );
            let attn = AttentionParams::new(&format!("{p}.attn"), d, init)?;
            let ln2 = (
                init.ones(&format!("{p}.ln2.gain"), &[d])?,
                init.zeros(&format!("{p}.ln2.bias"), &[d])?,
            );
            let ff = FeedForward {
                w1: init.normal(&format!("{p}.ff.w1"), &[d, cfg.d_ff])?,
                b1: init.zeros(&format!("{p}.ff.b1"), &[cfg.d_ff])?,
                w2: init.normal(&format!("{p}.ff.w2"), &[cfg.d_ff, d])?,
                b2: init.zeros(&format!("{p}.ff.b2"), &[d])?,
            };
            layers.push(Layer { ln1, attn, ln2, ff });
        }
        let final_ln = (
            init.ones(&format!("{prefix}.final_ln.gain"), &[d])?,
            init.zeros(&format!("{prefix}.final_ln.bias"), &[d])?,
        );
        Ok(Self {
            cfg: cfg.clone(),
            layers,
            final_ln,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Runs one `[L x d]` sequence. Returns the final states and the
    /// attention weights per layer and head.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        mut x: Var,
        mask: &[bool],
        mode: &mut Mode,
    ) -> Result<(Var, Vec<Vec<Var>>)> {
        let p = self.cfg.dropout_p;
        let mut weights = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let h = layer_norm(g, store, x, layer.ln1)?;
            let att = multi_head_attention(g, store, &layer.attn, h, h, h, mask, self.cfg.n_heads)?;
            weights.push(att.weights);
            let a = g.dropout(att.output, p, mode)?;
            x = g.add(x, a)?;

            let h = layer_norm(g, store, x, layer.ln2)?;
            let f = linear(g, store, h, layer.ff.w1, layer.ff.b1)?;
            let f = g.gelu(f)?;
            let f = linear(g, store, f, layer.ff.w2, layer.ff.b2)?;
            let f = g.dropout(f, p, mode)?;
            x = g.add(x, f)?;
        }
        let out = layer_norm(g, store, x, self.final_ln)?;
        Ok((out, weights))
    }
}

/// Last-layer states of a padded batch.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// `[B x L x d_model]`.
    pub hidden: Var,
    /// `[B x d_model]`, the position-0 state of every row.
    pub cls: Var,
    /// Per-row `[L x d_model]` views of `hidden`.
    pub rows: Vec<Var>,
    /// Attention weights, indexed `[row][layer][head]`, each `[L x L]`.
    pub attention: Vec<Vec<Vec<Var>>>,
}

fn check_batch(ids_len: &[usize], mask: &[Vec<bool>], max: usize) -> Result<usize> {
    let len = *ids_len
        .first()
        .ok_or_else(|| Error::Empty("encoder batch".into()))?;
    if ids_len.iter().any(|&l| l != len) || mask.len() != ids_len.len() {
        return Err(Error::Contract(
            "batch rows must share one padded length".into(),
        ));
    }
    if len == 0 {
        return Err(Error::Empty("zero-length sequence".into()));
    }
    if len > max {
        return Err(Error::Length { len, max });
    }
    if let Some(m) = mask.iter().find(|m| m.len() != len) {
        return Err(Error::Dimension {
            op: "encoder_mask",
            lhs: vec![len],
            rhs: vec![m.len()],
        });
    }
    Ok(len)
}

fn assemble(
    g: &mut Graph,
    rows: Vec<Var>,
    attention: Vec<Vec<Vec<Var>>>,
    d: usize,
) -> Result<EncoderOutput> {
    let len = g.shape(rows[0])[0];
    let b = rows.len();
    let stacked = g.concat_rows(&rows)?;
    let hidden = g.reshape(stacked, &[b, len, d])?;
    let firsts = rows
        .iter()
        .map(|&r| g.slice_rows(r, 0..1))
        .collect::<Result<Vec<_>>>()?;
    let cls = g.concat_rows(&firsts)?;
    Ok(EncoderOutput {
        hidden,
        cls,
        rows,
        attention,
    })
}

/// Encoder over token ids with learned token and absolute position
/// embeddings.
#[derive(Clone, Debug)]
pub struct TokenEncoder {
    token_embedding: ParamId,
    position_embedding: ParamId,
    stack: TransformerStack,
}

impl TokenEncoder {
    pub fn new(prefix: &str, cfg: &EncoderConfig, init: &mut ParamInit) -> Result<Self> {
        cfg.validate()?;
        if cfg.vocab_size == 0 {
            return Err(Error::Config("token encoder needs vocab_size > 0".into()));
        }
        Ok(Self {
            token_embedding: init.normal(
                &format!("{prefix}.token_embedding"),
                &[cfg.vocab_size, cfg.d_model],
            )?,
            position_embedding: init.normal(
                &format!("{prefix}.position_embedding"),
                &[cfg.max_seq_len, cfg.d_model],
            )?,
            stack: TransformerStack::new(prefix, cfg, init)?,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        self.stack.config()
    }

    pub fn token_embedding(&self) -> ParamId {
        self.token_embedding
    }

    /// Encodes a padded batch `token_ids[B][L]`; `mask` is true on real
    /// tokens. Position 0 must be unmasked.
    pub fn encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        token_ids: &[Vec<usize>],
        mask: &[Vec<bool>],
        mode: &mut Mode,
    ) -> Result<EncoderOutput> {
        let cfg = self.config();
        let lens: Vec<usize> = token_ids.iter().map(Vec::len).collect();
        let len = check_batch(&lens, mask, cfg.max_seq_len)?;
        if let Some(&id) = token_ids.iter().flatten().find(|&&id| id >= cfg.vocab_size) {
            return Err(Error::Vocab {
                id,
                vocab: cfg.vocab_size,
            });
        }
        let tok = g.param(store, self.token_embedding);
        let pos_table = g.param(store, self.position_embedding);
        let positions: Vec<usize> = (0..len).collect();
        let pos = g.embedding(pos_table, &positions)?;
        let mut rows = Vec::with_capacity(token_ids.len());
        let mut attention = Vec::with_capacity(token_ids.len());
        for (ids, m) in token_ids.iter().zip(mask) {
            let e = g.embedding(tok, ids)?;
            let x = g.add(e, pos)?;
            let x = g.dropout(x, cfg.dropout_p, mode)?;
            let (h, w) = self.stack.forward(g, store, x, m, mode)?;
            rows.push(h);
            attention.push(w);
        }
        assemble(g, rows, attention, cfg.d_model)
    }
}

/// Second-level encoder: consumes a sequence of `[1 x d]` vectors behind a
/// learned CLS vector, with learned position embeddings.
#[derive(Clone, Debug)]
pub struct SequenceEncoder {
    cls: ParamId,
    position_embedding: ParamId,
    stack: TransformerStack,
}

impl SequenceEncoder {
    pub fn new(prefix: &str, cfg: &EncoderConfig, init: &mut ParamInit) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cls: init.normal(&format!("{prefix}.cls"), &[1, cfg.d_model])?,
            position_embedding: init.normal(
                &format!("{prefix}.position_embedding"),
                &[cfg.max_seq_len, cfg.d_model],
            )?,
            stack: TransformerStack::new(prefix, cfg, init)?,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        self.stack.config()
    }

    /// Encodes each row `[CLS] v_1 .. v_n`, padding every row with zero
    /// vectors to the longest row plus `extra_pad` positions.
    pub fn encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        rows_in: &[Vec<Var>],
        extra_pad: usize,
        mode: &mut Mode,
    ) -> Result<EncoderOutput> {
        let cfg = self.config();
        let d = cfg.d_model;
        let longest = rows_in
            .iter()
            .map(Vec::len)
            .max()
            .ok_or_else(|| Error::Empty("encoder batch".into()))?;
        let len = longest + 1 + extra_pad;
        if len > cfg.max_seq_len {
            return Err(Error::Length {
                len,
                max: cfg.max_seq_len,
            });
        }
        let cls = g.param(store, self.cls);
        let pos_table = g.param(store, self.position_embedding);
        let positions: Vec<usize> = (0..len).collect();
        let pos = g.embedding(pos_table, &positions)?;
        let mut rows = Vec::with_capacity(rows_in.len());
        let mut attention = Vec::with_capacity(rows_in.len());
        for vecs in rows_in {
            let mut parts = Vec::with_capacity(vecs.len() + 2);
            parts.push(cls);
            for &v in vecs {
                if g.shape(v) != [1, d] {
                    return Err(Error::Dimension {
                        op: "sequence_encoder",
                        lhs: vec![1, d],
                        rhs: g.shape(v).to_vec(),
                    });
                }
                parts.push(v);
            }
            let pad = len - vecs.len() - 1;
            if pad > 0 {
                parts.push(g.input(Tensor::zeros(&[pad, d])));
            }
            let x = g.concat_rows(&parts)?;
            let x = g.add(x, pos)?;
            let x = g.dropout(x, cfg.dropout_p, mode)?;
            let mask: Vec<bool> = (0..len).map(|i| i <= vecs.len()).collect();
            let (h, w) = self.stack.forward(g, store, x, &mask, mode)?;
            rows.push(h);
            attention.push(w);
        }
        assemble(g, rows, attention, d)
    }
}
