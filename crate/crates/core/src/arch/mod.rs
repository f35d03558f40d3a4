//! Document-scoring architectures: vanilla, hierarchical, multi-task and
//! fact-aware transformers, plus the weight-shared ranking wrapper.

mod head;
#[cfg(test)]
mod tests;

pub use head::{HeadKind, HeadSpec, TaskHead};

use std::ops::Range;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    pool_sequence, EncoderConfig, EncoderOutput, ParamInit, PoolStrategy, SequenceEncoder,
    TokenEncoder, INIT_STD,
};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Mode, ParamId, ParamStore, Tensor, Var};
use crate::text::{CLS, PAD, SEP};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    Vanilla,
    #[serde(alias = "hier")]
    Hierarchical,
    Mtl,
    #[serde(alias = "fact", alias = "fact-aware")]
    FactAware,
}

impl ArchKind {
    pub const ALL: [ArchKind; 4] = [
        Self::Vanilla,
        Self::Hierarchical,
        Self::Mtl,
        Self::FactAware,
    ];

    fn has_doc_encoder(self) -> bool {
        matches!(self, Self::Hierarchical | Self::FactAware)
    }
}

/// How the hierarchical sentence encoder sees sentences.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceMode {
    /// `[CLS] s1 [SEP] s2 [SEP] ...`, split into more packs on overflow.
    #[default]
    Packed,
    /// One `[CLS] s [SEP]` pass per sentence.
    PerSentence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub kind: ArchKind,
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub doc_encoder: Option<EncoderConfig>,
    #[serde(default)]
    pub pooling: PoolStrategy,
    pub head: HeadSpec,
    #[serde(default)]
    pub aux_head: Option<HeadSpec>,
    #[serde(default)]
    pub sentence_mode: SentenceMode,
}

impl ArchitectureSpec {
    /// Fills in the second-level encoder (a copy of `encoder`) and the
    /// entailment head where `kind` needs them.
    pub fn for_kind(kind: ArchKind, encoder: EncoderConfig, head: HeadSpec) -> Self {
        let doc_encoder = kind.has_doc_encoder().then(|| EncoderConfig {
            vocab_size: 0,
            ..encoder.clone()
        });
        let aux_head =
            (kind == ArchKind::Mtl).then(|| HeadSpec::new(HeadKind::Entail, head.hidden_dim));
        Self {
            kind,
            encoder,
            doc_encoder,
            pooling: PoolStrategy::Mean,
            head,
            aux_head,
            sentence_mode: SentenceMode::Packed,
        }
    }

    /// One layer, two heads, `d_model = 8`, no dropout.
    pub fn tiny(kind: ArchKind, head: HeadKind, vocab_size: usize) -> Self {
        let mut enc = EncoderConfig::new(1, 2, 8, 16, vocab_size);
        enc.dropout_p = 0.0;
        enc.max_seq_len = 64;
        Self::for_kind(kind, enc, HeadSpec::new(head, 8))
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        match (&self.doc_encoder, self.kind.has_doc_encoder()) {
            (Some(doc), true) => {
                doc.validate()?;
                if doc.d_model != self.encoder.d_model {
                    return Err(Error::Config(format!(
                        "doc_encoder d_model {} differs from encoder d_model {}",
                        doc.d_model, self.encoder.d_model
                    )));
                }
            }
            (None, true) => {
                return Err(Error::Config(format!("{:?} needs doc_encoder", self.kind)));
            }
            (Some(_), false) => {
                return Err(Error::Config(format!(
                    "{:?} takes no doc_encoder",
                    self.kind
                )));
            }
            (None, false) => {}
        }
        match (&self.aux_head, self.kind) {
            (Some(h), ArchKind::Mtl) if h.kind == HeadKind::Entail => {}
            (_, ArchKind::Mtl) => {
                return Err(Error::Config("mtl needs an aux_head of kind entail".into()));
            }
            (Some(_), _) => {
                return Err(Error::Config("aux_head is only used by mtl".into()));
            }
            (None, _) => {}
        }
        if self.head.kind == HeadKind::Entail {
            return Err(Error::Config("entail is only valid as aux_head".into()));
        }
        Ok(())
    }
}

/// Token ids of one fact's subject, verb and object.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FactInput {
    pub sentence_index: usize,
    pub subject: Vec<usize>,
    pub verb: Vec<usize>,
    pub object: Vec<usize>,
}

/// A tokenized document. `facts` is only read by the fact-aware model.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DocInput {
    pub sentences: Vec<Vec<usize>>,
    pub facts: Vec<FactInput>,
}

impl DocInput {
    pub fn new(sentences: Vec<Vec<usize>>) -> Self {
        Self {
            sentences,
            facts: Vec::new(),
        }
    }

    /// `[CLS]` followed by every sentence's tokens.
    pub fn flat_sequence(&self) -> Vec<usize> {
        std::iter::once(CLS)
            .chain(self.sentences.iter().flatten().copied())
            .collect()
    }

    /// Facts sorted by source sentence, keeping extraction order within a
    /// sentence.
    fn ordered_facts(&self) -> Result<Vec<&FactInput>> {
        if let Some(f) = self
            .facts
            .iter()
            .find(|f| f.sentence_index >= self.sentences.len())
        {
            return Err(Error::FactAlignment(format!(
                "fact references sentence {} of a {}-sentence document",
                f.sentence_index,
                self.sentences.len()
            )));
        }
        let mut facts: Vec<&FactInput> = self.facts.iter().collect();
        facts.sort_by_key(|f| f.sentence_index);
        Ok(facts)
    }
}

impl FactInput {
    /// `[CLS] subject [SEP] verb [SEP] object`.
    pub fn sequence(&self) -> Vec<usize> {
        let mut s = vec![CLS];
        s.extend(&self.subject);
        s.push(SEP);
        s.extend(&self.verb);
        s.push(SEP);
        s.extend(&self.object);
        s
    }
}

/// A tokenized entailment pair.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PairInput {
    pub premise: Vec<usize>,
    pub hypothesis: Vec<usize>,
}

impl PairInput {
    /// `[CLS] premise [SEP] hypothesis`.
    pub fn sequence(&self) -> Vec<usize> {
        let mut s = vec![CLS];
        s.extend(&self.premise);
        s.push(SEP);
        s.extend(&self.hypothesis);
        s
    }
}

/// Supervision for one batch.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Scores(Vec<f64>),
}

/// Cross-entropy for classifier heads, MSE for the regression head.
pub fn task_loss(g: &mut Graph, kind: HeadKind, output: Var, targets: &Targets) -> Result<Var> {
    match (kind.is_classifier(), kind, targets) {
        (true, _, Targets::Classes(c)) => g.cross_entropy(output, c),
        (false, HeadKind::Regress, Targets::Scores(s)) => {
            let t = Tensor::new(vec![s.len(), 1], s.clone())?;
            g.mse(output, &t)
        }
        (_, HeadKind::RankScore, _) => Err(Error::Contract(
            "rank_score heads are trained through siamese_rank".into(),
        )),
        _ => Err(Error::Contract(format!(
            "{kind:?} head cannot take {targets:?}"
        ))),
    }
}

/// Encoder states behind a batch of document representations.
pub struct Representation {
    /// `[B x d_model]`.
    pub cls: Var,
    /// First-level pass over token sequences (documents, sentence packs or
    /// facts, depending on the architecture).
    pub token_level: EncoderOutput,
    /// Second-level pass of the hierarchical and fact-aware models.
    pub doc_level: Option<EncoderOutput>,
}

pub struct MtlOutput {
    pub coherence: Var,
    pub entail: Var,
    pub coherence_loss: Var,
    pub entail_loss: Var,
    /// `coherence_loss + entail_loss`.
    pub joint_loss: Var,
}

pub struct SiameseOutput {
    /// `[B x 1]` scores of the first documents.
    pub score_a: Var,
    pub score_b: Var,
    pub loss: Var,
}

/// A sentence located inside one encoded pack.
#[derive(Clone, Debug)]
struct Located {
    pack: usize,
    segment: Range<usize>,
}

/// Sentence-encoder passes and, per document, where each sentence landed.
type Packing = (Vec<Vec<usize>>, Vec<Vec<Located>>);

/// Parameter layout of one architecture. Weights live in a separate
/// [`ParamStore`] so that several graphs can read them at once.
#[derive(Clone, Debug)]
pub struct CoherenceModel {
    spec: ArchitectureSpec,
    encoder: TokenEncoder,
    doc_encoder: Option<SequenceEncoder>,
    pool_query: Option<ParamId>,
    head: TaskHead,
    aux_head: Option<TaskHead>,
}

impl CoherenceModel {
    pub fn new(spec: &ArchitectureSpec, rng: &mut ChaCha8Rng) -> Result<(Self, ParamStore)> {
        Self::with_init_std(spec, rng, INIT_STD)
    }

    pub fn with_init_std(
        spec: &ArchitectureSpec,
        rng: &mut ChaCha8Rng,
        std: f64,
    ) -> Result<(Self, ParamStore)> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let mut init = ParamInit::with_std(&mut store, rng, std);
        let d = spec.encoder.d_model;
        let encoder = TokenEncoder::new("encoder", &spec.encoder, &mut init)?;
        let doc_encoder = match &spec.doc_encoder {
            Some(cfg) => Some(SequenceEncoder::new("doc_encoder", cfg, &mut init)?),
            None => None,
        };
        let pool_query =
            if spec.kind == ArchKind::Hierarchical && spec.pooling == PoolStrategy::Attention {
                Some(init.normal("pool_query", &[d, 1])?)
            } else {
                None
            };
        let head = TaskHead::new("head", spec.head, d, &mut init)?;
        let aux_head = match spec.aux_head {
            Some(h) => Some(TaskHead::new("aux_head", h, d, &mut init)?),
            None => None,
        };
        let model = Self {
            spec: spec.clone(),
            encoder,
            doc_encoder,
            pool_query,
            head,
            aux_head,
        };
        Ok((model, store))
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn encoder(&self) -> &TokenEncoder {
        &self.encoder
    }

    /// Encodes token sequences as one batch padded to the longest sequence
    /// plus `extra_pad` positions.
    pub fn encode_tokens(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        seqs: &[Vec<usize>],
        extra_pad: usize,
        mode: &mut Mode,
    ) -> Result<EncoderOutput> {
        let len = seqs.iter().map(Vec::len).max().unwrap_or(0) + extra_pad;
        let mut ids = Vec::with_capacity(seqs.len());
        let mut mask = Vec::with_capacity(seqs.len());
        for s in seqs {
            let mut row = s.clone();
            row.resize(len, PAD);
            ids.push(row);
            mask.push((0..len).map(|i| i < s.len()).collect());
        }
        self.encoder.encode(g, store, &ids, &mask, mode)
    }

    /// Document representations fed to the task head, `[B x d_model]`.
    /// `extra_pad` appends that many masked positions to every padded
    /// sequence at each level.
    pub fn represent(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        docs: &[DocInput],
        extra_pad: usize,
        mode: &mut Mode,
    ) -> Result<Var> {
        Ok(self
            .represent_detailed(g, store, docs, extra_pad, mode)?
            .cls)
    }

    pub fn represent_detailed(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        docs: &[DocInput],
        extra_pad: usize,
        mode: &mut Mode,
    ) -> Result<Representation> {
        if docs.is_empty() {
            return Err(Error::Empty("document batch".into()));
        }
        match self.spec.kind {
            ArchKind::Vanilla | ArchKind::Mtl => {
                let seqs: Vec<Vec<usize>> = docs.iter().map(DocInput::flat_sequence).collect();
                let out = self.encode_tokens(g, store, &seqs, extra_pad, mode)?;
                Ok(Representation {
                    cls: out.cls,
                    token_level: out,
                    doc_level: None,
                })
            }
            ArchKind::Hierarchical => self.hierarchical(g, store, docs, extra_pad, mode),
            ArchKind::FactAware => self.fact_aware(g, store, docs, extra_pad, mode),
        }
    }

    /// Head outputs, `[B x k]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        docs: &[DocInput],
        mode: &mut Mode,
    ) -> Result<Var> {
        self.forward_padded(g, store, docs, 0, mode)
    }

    pub fn forward_padded(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        docs: &[DocInput],
        extra_pad: usize,
        mode: &mut Mode,
    ) -> Result<Var> {
        let rep = self.represent(g, store, docs, extra_pad, mode)?;
        self.head.forward(g, store, rep)
    }

    /// Entailment logits `[B x 2]` from the shared encoder.
    pub fn entail_forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        pairs: &[PairInput],
        mode: &mut Mode,
    ) -> Result<Var> {
        let aux = self.aux_head.as_ref().ok_or_else(|| {
            Error::Contract(format!("{:?} has no entailment head", self.spec.kind))
        })?;
        if pairs.is_empty() {
            return Err(Error::Contract("entailment batch is empty".into()));
        }
        let seqs: Vec<Vec<usize>> = pairs.iter().map(PairInput::sequence).collect();
        let cls = self.encode_tokens(g, store, &seqs, 0, mode)?.cls;
        aux.forward(g, store, cls)
    }

    /// Coherence and entailment batches through the shared encoder; the
    /// joint loss is the plain sum of the two task losses.
    #[allow(clippy::too_many_arguments)]
    pub fn mtl_forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        docs: &[DocInput],
        targets: &Targets,
        pairs: &[PairInput],
        entail_targets: &[usize],
        mode: &mut Mode,
    ) -> Result<MtlOutput> {
        if self.spec.kind != ArchKind::Mtl {
            return Err(Error::Contract(format!(
                "mtl_forward on a {:?} model",
                self.spec.kind
            )));
        }
        if pairs.is_empty() {
            return Err(Error::Contract("mtl step needs an entailment batch".into()));
        }
        let coherence = self.forward(g, store, docs, mode)?;
        let coherence_loss = task_loss(g, self.spec.head.kind, coherence, targets)?;
        let entail = self.entail_forward(g, store, pairs, mode)?;
        let entail_loss = g.cross_entropy(entail, entail_targets)?;
        let joint_loss = g.add(coherence_loss, entail_loss)?;
        Ok(MtlOutput {
            coherence,
            entail,
            coherence_loss,
            entail_loss,
            joint_loss,
        })
    }

    /// Scores both document batches with the same weights and applies the
    /// margin ranking loss, preferring `a`.
    pub fn siamese_rank(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        a: &[DocInput],
        b: &[DocInput],
        margin: f64,
        mode: &mut Mode,
    ) -> Result<SiameseOutput> {
        if self.spec.head.kind != HeadKind::RankScore {
            return Err(Error::Contract(format!(
                "siamese ranking needs a rank_score head, got {:?}",
                self.spec.head.kind
            )));
        }
        if a.len() != b.len() {
            return Err(Error::Contract(format!(
                "ranking batches differ in size: {} vs {}",
                a.len(),
                b.len()
            )));
        }
        let score_a = self.forward(g, store, a, mode)?;
        let score_b = self.forward(g, store, b, mode)?;
        let loss = g.margin_ranking(score_a, score_b, margin)?;
        Ok(SiameseOutput {
            score_a,
            score_b,
            loss,
        })
    }

    fn doc_encoder(&self) -> &SequenceEncoder {
        self.doc_encoder
            .as_ref()
            .expect("validated spec has a doc encoder")
    }

    /// Splits each document into sentence-encoder passes and records where
    /// every sentence ended up.
    fn pack(&self, docs: &[DocInput]) -> Result<Packing> {
        let max = self.spec.encoder.max_seq_len;
        let mut packs: Vec<Vec<usize>> = Vec::new();
        let mut located = Vec::with_capacity(docs.len());
        for doc in docs {
            if doc.sentences.is_empty() {
                return Err(Error::Empty("document without sentences".into()));
            }
            let mut spots = Vec::with_capacity(doc.sentences.len());
            let mut open = false;
            for (index, s) in doc.sentences.iter().enumerate() {
                if s.len() + 2 > max {
                    return Err(Error::SentenceLength {
                        index,
                        len: s.len(),
                        max: max - 2,
                    });
                }
                let fits = open && packs.last().is_some_and(|p| p.len() + s.len() < max);
                if self.spec.sentence_mode == SentenceMode::PerSentence || !fits {
                    packs.push(vec![CLS]);
                }
                open = true;
                let p = packs.last_mut().expect("pack just ensured");
                let start = p.len();
                p.extend(s);
                p.push(SEP);
                let segment = if s.is_empty() {
                    start..start + 1
                } else {
                    start..start + s.len()
                };
                spots.push(Located {
                    pack: packs.len() - 1,
                    segment,
                });
            }
            located.push(spots);
        }
        Ok((packs, located))
    }

    fn hierarchical(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        docs: &[DocInput],
        extra_pad: usize,
        mode: &mut Mode,
    ) -> Result<Representation> {
        let (packs, located) = self.pack(docs)?;
        let out = self.encode_tokens(g, store, &packs, extra_pad, mode)?;
        let query = self.pool_query.map(|q| g.param(store, q));
        let mut sentence_vecs = Vec::with_capacity(docs.len());
        for spots in &located {
            let mut vecs = Vec::with_capacity(spots.len());
            for spot in spots {
                let row = out.rows[spot.pack];
                vecs.push(pool_sequence(
                    g,
                    row,
                    spot.segment.clone(),
                    self.spec.pooling,
                    query,
                )?);
            }
            sentence_vecs.push(vecs);
        }
        let doc = self
            .doc_encoder()
            .encode(g, store, &sentence_vecs, extra_pad, mode)?;
        Ok(Representation {
            cls: doc.cls,
            token_level: out,
            doc_level: Some(doc),
        })
    }

    fn fact_aware(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        docs: &[DocInput],
        extra_pad: usize,
        mode: &mut Mode,
    ) -> Result<Representation> {
        let mut seqs: Vec<Vec<usize>> = docs.iter().map(DocInput::flat_sequence).collect();
        let mut counts = Vec::with_capacity(docs.len());
        for doc in docs {
            let facts = doc.ordered_facts()?;
            counts.push(facts.len());
            seqs.extend(facts.into_iter().map(FactInput::sequence));
        }
        let out = self.encode_tokens(g, store, &seqs, extra_pad, mode)?;
        let mut next = docs.len();
        let mut inputs = Vec::with_capacity(docs.len());
        for (i, &m) in counts.iter().enumerate() {
            let mut vecs = Vec::with_capacity(m + 1);
            vecs.push(g.slice_rows(out.rows[i], 0..1)?);
            for row in &out.rows[next..next + m] {
                vecs.push(g.slice_rows(*row, 0..1)?);
            }
            next += m;
            inputs.push(vecs);
        }
        let doc = self
            .doc_encoder()
            .encode(g, store, &inputs, extra_pad, mode)?;
        Ok(Representation {
            cls: doc.cls,
            token_level: out,
            doc_level: Some(doc),
        })
    }
}
