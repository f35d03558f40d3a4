#![allow(dead_code)]

use coherence_core::arch::{ArchKind, ArchitectureSpec, HeadKind};
use coherence_core::text::{
    build_vocab, generate_permutations, synth_corpus, Document, Vocabulary,
};
use coherence_core::train::{data, Dataset, Task, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One-layer, two-head vanilla classifier sized for memorising a few dozen
/// documents.
pub fn overfit_spec(vocab: usize) -> ArchitectureSpec {
    let mut spec = ArchitectureSpec::tiny(ArchKind::Vanilla, HeadKind::Classify3, vocab);
    spec.encoder.d_model = 32;
    spec.encoder.d_ff = 64;
    spec.head.hidden_dim = 32;
    spec
}

/// 32 labeled entity-chain documents (4 sentences each) with the default
/// training configuration run for 200 epochs.
pub fn overfit_experiment() -> (ArchitectureSpec, TrainConfig, Dataset) {
    let corpus = synth_corpus(32, 4, 12, &mut rng(0)).unwrap();
    let vocab = build_vocab(&corpus.labeled, 1).unwrap();
    let train = data::three_way(&vocab, &corpus.labeled, &[]).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        ..TrainConfig::default()
    };
    let ds = Dataset {
        train,
        eval: None,
        entail: None,
    };
    (overfit_spec(vocab.len()), cfg, ds)
}

pub struct OrderingSplit {
    pub vocab: Vocabulary,
    pub train_docs: Vec<Document>,
    pub test_docs: Vec<Document>,
    pub dataset: Dataset,
}

/// Entity-chain ordering data: `n_train` + `n_test` documents with `k`
/// permutations each, the held-out documents never seen in training.
pub fn ordering_split(n_train: usize, n_test: usize, k: usize, seed: u64) -> OrderingSplit {
    let mut r = rng(seed);
    let corpus = synth_corpus(n_train + n_test, 5, 30, &mut r).unwrap();
    let vocab = build_vocab(&corpus.coherent, 1).unwrap();
    let (train_docs, test_docs) = corpus.coherent.split_at(n_train);
    let mut perms = |docs: &[Document]| {
        docs.iter()
            .flat_map(|d| generate_permutations(d, k, &mut r).unwrap())
            .collect::<Vec<_>>()
    };
    let (train_perms, test_perms) = (perms(train_docs), perms(test_docs));
    let dataset = Dataset {
        train: data::pairs(&vocab, train_docs, &train_perms, &[]).unwrap(),
        eval: Some(data::pairs(&vocab, test_docs, &test_perms, &[]).unwrap()),
        entail: None,
    };
    OrderingSplit {
        vocab,
        train_docs: train_docs.to_vec(),
        test_docs: test_docs.to_vec(),
        dataset,
    }
}

pub fn ranker_spec(vocab: usize, d_model: usize) -> ArchitectureSpec {
    let mut spec = ArchitectureSpec::tiny(ArchKind::Vanilla, Task::Order.head_kind(), vocab);
    spec.encoder.d_model = d_model;
    spec.encoder.d_ff = 2 * d_model;
    spec.head.hidden_dim = d_model;
    spec
}
