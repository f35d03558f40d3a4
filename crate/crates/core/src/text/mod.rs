//! Tokenization, corpus I/O, permutation pairs, facts, labels and synthetic
//! corpora.

mod corpus;
mod facts;
mod labels;
mod permute;
mod sentences;
mod synth;
#[cfg(test)]
mod tests;
mod vocab;

pub use corpus::{
    parse_jsonl, read_jsonl, to_jsonl, write_jsonl, BinaryLabel, Document, EntailExample,
    EntailLabel, Fact, Label3, PermutationPair, Record,
};
pub use facts::{align_facts, extract_facts_naive, load_facts_sidecar, reorder_facts};
pub use labels::{derive_binary_label, derive_gold_score};
pub use permute::{apply_order, generate_permutations, inverse_order};
pub use sentences::segment_sentences;
pub use synth::{entity, intact_links, synth_corpus, synth_entailment, SynthCorpus, SYNTH_VERBS};
pub use vocab::{build_vocab, tokenize, words, Vocabulary};

use crate::arch::{DocInput, FactInput, PairInput};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;

/// Tokenizes a document's sentences and the facts that point into it.
pub fn doc_input(vocab: &Vocabulary, doc: &Document, facts: &[Fact]) -> DocInput {
    DocInput {
        sentences: doc.sentences.iter().map(|s| vocab.tokenize(s)).collect(),
        facts: facts
            .iter()
            .filter(|f| f.doc_id == doc.id)
            .map(|f| FactInput {
                sentence_index: f.sentence_index,
                subject: vocab.tokenize(&f.subject),
                verb: vocab.tokenize(&f.verb),
                object: vocab.tokenize(&f.object),
            })
            .collect(),
    }
}

pub fn pair_input(vocab: &Vocabulary, ex: &EntailExample) -> PairInput {
    PairInput {
        premise: vocab.tokenize(&ex.premise),
        hypothesis: vocab.tokenize(&ex.hypothesis),
    }
}
