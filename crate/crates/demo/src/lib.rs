//! Logic behind the browser demo. Everything here is plain Rust returning
//! serde types; `web` wraps it for JavaScript on wasm32.

use coherence_core::arch::{ArchKind, ArchitectureSpec, CoherenceModel, DocInput};
use coherence_core::metrics::{f_beta_low, FBeta};
use coherence_core::tensor::{Graph, Mode, ParamStore};
use coherence_core::text::{
    build_vocab, doc_input, generate_permutations, segment_sentences, synth_corpus, BinaryLabel,
    Document, Vocabulary,
};
use coherence_core::train::{
    data, evaluate, predict, train_task_observed, Dataset, Task, TrainConfig,
};
use coherence_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[cfg(target_arch = "wasm32")]
mod web;

pub const SENTS: usize = 5;
pub const ENTITIES: usize = 30;
pub const PERMS_PER_DOC: usize = 4;

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub epoch_losses: Vec<f64>,
    pub train_pra: f64,
    pub eval_pra: f64,
    pub train_pairs: usize,
    pub eval_pairs: usize,
    /// A held-out document to try in the scorer.
    pub sample: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct AttentionMap {
    pub tokens: Vec<String>,
    pub layers: usize,
    pub heads: usize,
    /// Row-major `[L x L]`, row = query position.
    pub weights: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Scored {
    pub sentences: Vec<String>,
    pub score: f64,
}

pub fn ranker_spec(vocab: usize) -> ArchitectureSpec {
    let mut spec = ArchitectureSpec::tiny(ArchKind::Vanilla, Task::Order.head_kind(), vocab);
    spec.encoder.d_model = 16;
    spec.encoder.d_ff = 32;
    spec.encoder.max_seq_len = 256;
    spec.head.hidden_dim = 16;
    spec
}

/// A trained sentence-ordering ranker and its vocabulary.
pub struct Lab {
    vocab: Vocabulary,
    model: CoherenceModel,
    store: ParamStore,
}

impl Lab {
    /// Trains on `n_docs` entity-chain documents (a quarter held out), with
    /// `on_epoch` seeing each epoch's training loss.
    pub fn train(
        seed: u64,
        n_docs: usize,
        epochs: usize,
        on_epoch: impl FnMut(usize, f64),
    ) -> Result<(Self, TrainSummary)> {
        if n_docs < 4 {
            return Err(Error::Config(format!(
                "need at least 4 documents, got {n_docs}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus = synth_corpus(n_docs, SENTS, ENTITIES, &mut rng)?;
        let (train_docs, test_docs) = corpus.coherent.split_at(n_docs - n_docs / 4);
        let vocab = build_vocab(train_docs, 1)?;
        let mut perms = |docs: &[Document]| -> Result<Vec<_>> {
            let mut out = Vec::new();
            for d in docs {
                out.extend(generate_permutations(d, PERMS_PER_DOC, &mut rng)?);
            }
            Ok(out)
        };
        let (train_perms, test_perms) = (perms(train_docs)?, perms(test_docs)?);
        let ds = Dataset {
            train: data::pairs(&vocab, train_docs, &train_perms, &[])?,
            eval: Some(data::pairs(&vocab, test_docs, &test_perms, &[])?),
            entail: None,
        };
        let cfg = TrainConfig {
            epochs,
            seed,
            dropout_p: 0.0,
            ..TrainConfig::default()
        };
        let run = train_task_observed(&ranker_spec(vocab.len()), &cfg, &ds, Task::Order, on_epoch)?;
        let eval_pra = evaluate(
            &run.model,
            &run.store,
            ds.eval.as_ref().expect("set above"),
            16,
        )?["pra"];
        let summary = TrainSummary {
            train_pra: run.result.metrics["train.pra"],
            eval_pra,
            epoch_losses: run.result.epoch_losses,
            train_pairs: ds.train.len(),
            eval_pairs: test_perms.len(),
            sample: test_docs[0].text.clone(),
        };
        Ok((
            Self {
                vocab,
                model: run.model,
                store: run.store,
            },
            summary,
        ))
    }

    fn input(&self, text: &str) -> Result<DocInput> {
        let sentences = segment_sentences(text);
        if sentences.is_empty() {
            return Err(Error::Empty("no sentences in the text".into()));
        }
        Ok(doc_input(
            &self.vocab,
            &Document::from_sentences("input", sentences),
            &[],
        ))
    }

    /// Ranker score of `text` in its given order; higher reads as more coherent.
    pub fn score(&self, text: &str) -> Result<Scored> {
        let doc = self.input(text)?;
        let score = predict(&self.model, &self.store, std::slice::from_ref(&doc), 1)?[0][0];
        Ok(Scored {
            sentences: segment_sentences(text),
            score,
        })
    }

    /// Token-level self-attention of one layer and head over `text`.
    pub fn attention(&self, text: &str, layer: usize, head: usize) -> Result<AttentionMap> {
        let doc = self.input(text)?;
        let enc = &self.model.spec().encoder;
        if layer >= enc.n_layers || head >= enc.n_heads {
            return Err(Error::Config(format!(
                "layer {layer} / head {head} out of range ({} layers, {} heads)",
                enc.n_layers, enc.n_heads
            )));
        }
        let seq = doc.flat_sequence();
        let mut g = Graph::new();
        let out = self.model.encode_tokens(
            &mut g,
            &self.store,
            std::slice::from_ref(&seq),
            0,
            &mut Mode::Eval,
        )?;
        let w = g.value(out.attention[0][layer][head]);
        let n = seq.len();
        Ok(AttentionMap {
            tokens: self
                .vocab
                .decode(&seq)
                .into_iter()
                .map(str::to_string)
                .collect(),
            layers: enc.n_layers,
            heads: enc.n_heads,
            weights: w.data().chunks(n).map(<[f64]>::to_vec).collect(),
        })
    }
}

/// F-beta of the non-coherent class from confusion counts, with
/// non-coherent as the positive class.
pub fn f_beta_counts(tp: usize, fp: usize, fn_: usize, tn: usize, beta: f64) -> Result<FBeta> {
    use BinaryLabel::{NonCoherent as N, Other as O};
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    for (n, p, g) in [(tp, N, N), (fp, N, O), (fn_, O, N), (tn, O, O)] {
        pred.extend(std::iter::repeat_n(p, n));
        gold.extend(std::iter::repeat_n(g, n));
    }
    f_beta_low(&pred, &gold, beta)
}
