use rand::{Rng, SeedableRng};

use super::*;
use crate::tensor::gradcheck_params;

const VOCAB: usize = 20;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_doc(r: &mut ChaCha8Rng, n_sents: usize) -> DocInput {
    let sentences = (0..n_sents)
        .map(|_| {
            let len = r.random_range(1..5);
            (0..len).map(|_| r.random_range(4..VOCAB)).collect()
        })
        .collect();
    DocInput::new(sentences)
}

fn random_fact(r: &mut ChaCha8Rng, sentence_index: usize) -> FactInput {
    let mut span = |n: usize| (0..n).map(|_| r.random_range(4..VOCAB)).collect::<Vec<_>>();
    FactInput {
        sentence_index,
        subject: span(1),
        verb: span(2),
        object: span(1),
    }
}

fn model(kind: ArchKind, head: HeadKind, seed: u64) -> (CoherenceModel, ParamStore) {
    CoherenceModel::new(&ArchitectureSpec::tiny(kind, head, VOCAB), &mut rng(seed)).unwrap()
}

fn eval(model: &CoherenceModel, store: &ParamStore, docs: &[DocInput]) -> Tensor {
    let mut g = Graph::new();
    let y = model.forward(&mut g, store, docs, &mut Mode::Eval).unwrap();
    g.value(y).clone()
}

#[test]
fn spec_validation() {
    let ok = ArchitectureSpec::tiny(ArchKind::Mtl, HeadKind::Classify3, VOCAB);
    ok.validate().unwrap();

    let mut no_aux = ok.clone();
    no_aux.aux_head = None;
    assert!(matches!(no_aux.validate(), Err(Error::Config(_))));

    let mut wrong_aux = ok.clone();
    wrong_aux.aux_head = Some(HeadSpec::new(HeadKind::Classify2, 4));
    assert!(matches!(wrong_aux.validate(), Err(Error::Config(_))));

    let mut hier = ArchitectureSpec::tiny(ArchKind::Hierarchical, HeadKind::Classify3, VOCAB);
    hier.validate().unwrap();
    hier.doc_encoder.as_mut().unwrap().d_model = 4;
    hier.doc_encoder.as_mut().unwrap().n_heads = 1;
    assert!(matches!(hier.validate(), Err(Error::Config(_))));
    hier.doc_encoder = None;
    assert!(matches!(hier.validate(), Err(Error::Config(_))));

    let json = serde_json::to_string(&ok).unwrap();
    let back: ArchitectureSpec = serde_json::from_str(&json).unwrap();
    assert_eq!(back, ok);
}

#[test]
fn vanilla_classify3_batch_shape() {
    let (m, store) = model(ArchKind::Vanilla, HeadKind::Classify3, 1);
    let mut r = rng(2);
    let docs: Vec<DocInput> = (0..4).map(|_| random_doc(&mut r, 3)).collect();
    assert_eq!(eval(&m, &store, &docs).shape(), &[4, 3]);
}

#[test]
fn identical_documents_get_identical_rows() {
    for kind in ArchKind::ALL {
        let (m, store) = model(kind, HeadKind::Classify3, 3);
        let mut r = rng(4);
        let d = random_doc(&mut r, 3);
        let other = random_doc(&mut r, 5);
        let y = eval(&m, &store, &[d.clone(), other, d]);
        assert_eq!(y.row(0), y.row(2), "{kind:?}");
    }
}

#[test]
fn classifier_probabilities_sum_to_one() {
    for head in [HeadKind::Classify2, HeadKind::Classify3] {
        let (m, store) = model(ArchKind::Vanilla, head, 5);
        let mut r = rng(6);
        let docs: Vec<DocInput> = (0..5).map(|_| random_doc(&mut r, 2)).collect();
        let mut g = Graph::new();
        let y = m.forward(&mut g, &store, &docs, &mut Mode::Eval).unwrap();
        let p = g.softmax(y, 1).unwrap();
        let k = head.outputs();
        for row in g.value(p).data().chunks(k) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}

fn gradcheck_arch(kind: ArchKind) {
    let spec = ArchitectureSpec::tiny(kind, HeadKind::Classify3, VOCAB);
    let mut r = rng(11);
    let (m, store) = CoherenceModel::with_init_std(&spec, &mut r, 0.5).unwrap();
    let mut docs: Vec<DocInput> = vec![random_doc(&mut r, 3), random_doc(&mut r, 2)];
    docs[0].facts = vec![random_fact(&mut r, 2), random_fact(&mut r, 0)];
    docs[1].facts = vec![random_fact(&mut r, 1)];
    let targets = Targets::Classes(vec![2, 0]);
    let pairs = vec![PairInput {
        premise: vec![5, 6, 7],
        hypothesis: vec![8, 9],
    }];
    let report = gradcheck_params(
        |g, s| {
            if kind == ArchKind::Mtl {
                let out = m.mtl_forward(g, s, &docs, &targets, &pairs, &[1], &mut Mode::Eval)?;
                Ok(out.joint_loss)
            } else {
                let y = m.forward(g, s, &docs, &mut Mode::Eval)?;
                task_loss(g, HeadKind::Classify3, y, &targets)
            }
        },
        &store,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed, "{kind:?}: {report:?}");
}

#[test]
fn gradcheck_vanilla() {
    gradcheck_arch(ArchKind::Vanilla);
}

#[test]
fn gradcheck_hierarchical() {
    gradcheck_arch(ArchKind::Hierarchical);
}

#[test]
fn gradcheck_mtl() {
    gradcheck_arch(ArchKind::Mtl);
}

#[test]
fn gradcheck_fact_aware() {
    gradcheck_arch(ArchKind::FactAware);
}

#[test]
fn gradcheck_regression_and_ranking_heads() {
    let mut r = rng(12);
    let docs = vec![random_doc(&mut r, 2), random_doc(&mut r, 3)];
    let spec = ArchitectureSpec::tiny(ArchKind::Vanilla, HeadKind::Regress, VOCAB);
    let (m, store) = CoherenceModel::with_init_std(&spec, &mut r, 0.5).unwrap();
    let targets = Targets::Scores(vec![1.5, 3.0]);
    let report = gradcheck_params(
        |g, s| {
            let y = m.forward(g, s, &docs, &mut Mode::Eval)?;
            task_loss(g, HeadKind::Regress, y, &targets)
        },
        &store,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");

    let spec = ArchitectureSpec::tiny(ArchKind::Vanilla, HeadKind::RankScore, VOCAB);
    let (m, store) = CoherenceModel::with_init_std(&spec, &mut r, 0.5).unwrap();
    let shuffled: Vec<DocInput> = docs
        .iter()
        .map(|d| DocInput::new(d.sentences.iter().rev().cloned().collect()))
        .collect();
    let report = gradcheck_params(
        |g, s| {
            Ok(
                m.siamese_rank(g, s, &docs, &shuffled, 50.0, &mut Mode::Eval)?
                    .loss,
            )
        },
        &store,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn packing_tracks_sentence_segments() {
    let (m, _) = model(ArchKind::Hierarchical, HeadKind::Classify3, 1);
    let doc = DocInput::new(vec![vec![5], vec![6, 7], vec![]]);
    let (packs, located) = m.pack(&[doc]).unwrap();
    assert_eq!(packs, vec![vec![CLS, 5, SEP, 6, 7, SEP, SEP]]);
    let segs: Vec<_> = located[0].iter().map(|l| l.segment.clone()).collect();
    assert_eq!(segs, vec![1..2, 3..5, 6..7]);
}

#[test]
fn packing_splits_on_overflow_and_rejects_long_sentences() {
    let mut spec = ArchitectureSpec::tiny(ArchKind::Hierarchical, HeadKind::Classify3, VOCAB);
    spec.encoder.max_seq_len = 6;
    let (m, _) = CoherenceModel::new(&spec, &mut rng(1)).unwrap();
    let doc = DocInput::new(vec![vec![5, 6], vec![7, 8], vec![9]]);
    let (packs, located) = m.pack(std::slice::from_ref(&doc)).unwrap();
    assert_eq!(
        packs,
        vec![vec![CLS, 5, 6, SEP], vec![CLS, 7, 8, SEP, 9, SEP]]
    );
    let spots: Vec<_> = located[0]
        .iter()
        .map(|l| (l.pack, l.segment.clone()))
        .collect();
    assert_eq!(spots, vec![(0, 1..3), (1, 1..3), (1, 4..5)]);

    let long = DocInput::new(vec![vec![5], vec![5, 6, 7, 8, 9]]);
    match m.pack(&[long]) {
        Err(Error::SentenceLength { index, len, max }) => assert_eq!((index, len, max), (1, 5, 4)),
        other => panic!(
            "expected sentence length error, got {:?}",
            other.map(|_| ())
        ),
    }

    let mut per = spec.clone();
    per.sentence_mode = SentenceMode::PerSentence;
    let (m, store) = CoherenceModel::new(&per, &mut rng(1)).unwrap();
    let (packs, _) = m.pack(std::slice::from_ref(&doc)).unwrap();
    assert_eq!(packs.len(), 3);
    assert_eq!(eval(&m, &store, &[doc]).shape(), &[1, 3]);
}

#[test]
fn hierarchical_document_encoder_sees_cls_plus_sentences() {
    let (m, store) = model(ArchKind::Hierarchical, HeadKind::Classify3, 2);
    let doc = random_doc(&mut rng(3), 5);
    let mut g = Graph::new();
    let rep = m
        .represent_detailed(&mut g, &store, &[doc], 0, &mut Mode::Eval)
        .unwrap();
    let doc_level = rep.doc_level.unwrap();
    assert_eq!(g.shape(doc_level.rows[0]), &[6, 8]);
}

#[test]
fn one_token_sentence_mean_pools_to_its_state() {
    let (m, store) = model(ArchKind::Hierarchical, HeadKind::Classify3, 2);
    let doc = DocInput::new(vec![vec![7], vec![8, 9]]);
    let (packs, located) = m.pack(std::slice::from_ref(&doc)).unwrap();
    let mut g = Graph::new();
    let out = m
        .encode_tokens(&mut g, &store, &packs, 0, &mut Mode::Eval)
        .unwrap();
    let row = out.rows[0];
    let pooled = pool_sequence(
        &mut g,
        row,
        located[0][0].segment.clone(),
        PoolStrategy::Mean,
        None,
    )
    .unwrap();
    assert_eq!(g.value(pooled).data(), g.value(row).row(1));
}

#[test]
fn sentence_order_matters() {
    for kind in ArchKind::ALL {
        let (m, store) = model(kind, HeadKind::Classify3, 8);
        let doc = random_doc(&mut rng(9), 4);
        let mut swapped = doc.clone();
        swapped.sentences.swap(0, 3);
        let a = eval(&m, &store, &[doc]);
        let b = eval(&m, &store, &[swapped]);
        assert!(a.max_abs_diff(&b) > 0.0, "{kind:?}");
    }
}

#[test]
fn attention_pooling_uses_a_learned_query() {
    let mut spec = ArchitectureSpec::tiny(ArchKind::Hierarchical, HeadKind::Classify3, VOCAB);
    spec.pooling = PoolStrategy::Attention;
    let (m, store) = CoherenceModel::with_init_std(&spec, &mut rng(4), 0.5).unwrap();
    assert!(store.id("pool_query").is_some());
    let mut r = rng(5);
    let docs = vec![random_doc(&mut r, 3)];
    let report = gradcheck_params(
        |g, s| {
            let y = m.forward(g, s, &docs, &mut Mode::Eval)?;
            task_loss(g, HeadKind::Classify3, y, &Targets::Classes(vec![1]))
        },
        &store,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn fact_aware_input_lengths() {
    let (m, store) = model(ArchKind::FactAware, HeadKind::Classify3, 2);
    let mut r = rng(3);
    let bare = random_doc(&mut r, 3);
    let mut with_facts = random_doc(&mut r, 3);
    with_facts.facts = vec![random_fact(&mut r, 0), random_fact(&mut r, 0)];
    let mut g = Graph::new();
    let rep = m
        .represent_detailed(&mut g, &store, &[bare, with_facts], 0, &mut Mode::Eval)
        .unwrap();
    let doc_level = rep.doc_level.unwrap();
    let masks: Vec<usize> = doc_level
        .attention
        .iter()
        .map(|layers| {
            let w = g.value(layers[0][0]);
            w.row(0).iter().filter(|&&x| x > 0.0).count()
        })
        .collect();
    assert_eq!(masks, vec![2, 4]);
}

#[test]
fn fact_order_matters_and_alignment_is_checked() {
    let (m, store) = model(ArchKind::FactAware, HeadKind::Classify3, 6);
    let mut r = rng(7);
    let mut doc = random_doc(&mut r, 3);
    doc.facts = vec![random_fact(&mut r, 1), random_fact(&mut r, 1)];
    let mut swapped = doc.clone();
    swapped.facts.swap(0, 1);
    assert!(eval(&m, &store, &[doc.clone()]).max_abs_diff(&eval(&m, &store, &[swapped])) > 0.0);

    let mut sorted = doc.clone();
    sorted.facts = vec![random_fact(&mut r, 2), random_fact(&mut r, 0)];
    let mut presorted = sorted.clone();
    presorted.facts.reverse();
    assert_eq!(eval(&m, &store, &[sorted]), eval(&m, &store, &[presorted]));

    doc.facts.push(random_fact(&mut r, 3));
    let mut g = Graph::new();
    assert!(matches!(
        m.forward(&mut g, &store, &[doc], &mut Mode::Eval),
        Err(Error::FactAlignment(_))
    ));
}

fn mtl_fixture() -> (CoherenceModel, ParamStore, Vec<DocInput>, Vec<PairInput>) {
    let spec = ArchitectureSpec::tiny(ArchKind::Mtl, HeadKind::Classify3, VOCAB);
    let mut r = rng(21);
    let (m, store) = CoherenceModel::with_init_std(&spec, &mut r, 0.5).unwrap();
    let docs = vec![random_doc(&mut r, 3), random_doc(&mut r, 2)];
    let pairs = vec![
        PairInput {
            premise: vec![4, 5, 6],
            hypothesis: vec![7],
        },
        PairInput {
            premise: vec![8],
            hypothesis: vec![9, 10],
        },
        PairInput {
            premise: vec![11, 12],
            hypothesis: vec![13],
        },
    ];
    (m, store, docs, pairs)
}

#[test]
fn mtl_joint_loss_is_the_sum() {
    let (m, store, docs, pairs) = mtl_fixture();
    let targets = Targets::Classes(vec![0, 2]);
    let mut g = Graph::new();
    let out = m
        .mtl_forward(
            &mut g,
            &store,
            &docs,
            &targets,
            &pairs,
            &[1, 0, 1],
            &mut Mode::Eval,
        )
        .unwrap();
    let coh = g.value(out.coherence_loss).item().unwrap();
    let ent = g.value(out.entail_loss).item().unwrap();
    assert_eq!(
        g.value(out.joint_loss).item().unwrap().to_bits(),
        (coh + ent).to_bits()
    );
    assert_eq!(g.shape(out.entail), &[3, 2]);
    assert_eq!(g.shape(out.coherence), &[2, 3]);
}

#[test]
fn mtl_shared_gradients_add_up() {
    let (m, store, docs, pairs) = mtl_fixture();
    let targets = Targets::Classes(vec![0, 2]);
    let entail = [1, 0, 1];

    let mut joint = Graph::new();
    let out = m
        .mtl_forward(
            &mut joint,
            &store,
            &docs,
            &targets,
            &pairs,
            &entail,
            &mut Mode::Eval,
        )
        .unwrap();
    joint.backward(out.joint_loss).unwrap();
    let joint = joint.param_grads(&store);

    let mut coh = Graph::new();
    let y = m.forward(&mut coh, &store, &docs, &mut Mode::Eval).unwrap();
    let l = task_loss(&mut coh, HeadKind::Classify3, y, &targets).unwrap();
    coh.backward(l).unwrap();
    let coh = coh.param_grads(&store);

    let mut ent = Graph::new();
    let y = m
        .entail_forward(&mut ent, &store, &pairs, &mut Mode::Eval)
        .unwrap();
    let l = ent.cross_entropy(y, &entail).unwrap();
    ent.backward(l).unwrap();
    let ent = ent.param_grads(&store);

    let shared = store.id("encoder.layers.0.attn.wq").unwrap();
    let mut checked = 0;
    for id in store.ids() {
        let j = joint.get(id).unwrap_or_default();
        let c = coh.get(id);
        let e = ent.get(id);
        if store.name(id).starts_with("encoder.") {
            assert!(c.is_some() && e.is_some(), "{}", store.name(id));
        }
        for i in 0..j.len() {
            let sum = c.map_or(0.0, |c| c[i]) + e.map_or(0.0, |e| e[i]);
            assert!((j[i] - sum).abs() <= 1e-12, "{} [{i}]", store.name(id));
            checked += 1;
        }
    }
    assert!(checked > 0);
    assert!(coh.get(shared).unwrap().iter().any(|v| *v != 0.0));
    assert!(ent.get(shared).unwrap().iter().any(|v| *v != 0.0));
}

#[test]
fn mtl_requires_entailment_batch() {
    let (m, store, docs, _) = mtl_fixture();
    let mut g = Graph::new();
    let r = m.mtl_forward(
        &mut g,
        &store,
        &docs,
        &Targets::Classes(vec![0, 1]),
        &[],
        &[],
        &mut Mode::Eval,
    );
    assert!(matches!(r, Err(Error::Contract(_))));
    let (v, vs) = model(ArchKind::Vanilla, HeadKind::Classify3, 1);
    let pair = PairInput::default();
    assert!(matches!(
        v.entail_forward(&mut g, &vs, &[pair], &mut Mode::Eval),
        Err(Error::Contract(_))
    ));
}

#[test]
fn entailment_input_format() {
    let pair = PairInput {
        premise: vec![10, 11],
        hypothesis: vec![12],
    };
    assert_eq!(pair.sequence(), vec![CLS, 10, 11, SEP, 12]);
    let fact = FactInput {
        sentence_index: 0,
        subject: vec![4],
        verb: vec![5, 6],
        object: vec![7],
    };
    assert_eq!(fact.sequence(), vec![CLS, 4, SEP, 5, 6, SEP, 7]);
}

fn ranker(kind: ArchKind, seed: u64) -> (CoherenceModel, ParamStore) {
    model(kind, HeadKind::RankScore, seed)
}

#[test]
fn siamese_self_comparison_costs_the_margin() {
    let (m, store) = ranker(ArchKind::Vanilla, 31);
    let mut r = rng(32);
    for _ in 0..10 {
        let d = vec![random_doc(&mut r, 3)];
        let mut g = Graph::new();
        let out = m
            .siamese_rank(&mut g, &store, &d, &d, 1.0, &mut Mode::Eval)
            .unwrap();
        assert_eq!(g.value(out.score_a), g.value(out.score_b));
        assert_eq!(g.value(out.loss).item().unwrap(), 1.0);
    }
}

#[test]
fn siamese_swap_and_hinge() {
    let (m, store) = ranker(ArchKind::Hierarchical, 33);
    let mut r = rng(34);
    let a = vec![random_doc(&mut r, 3)];
    let b = vec![random_doc(&mut r, 4)];
    let mut g = Graph::new();
    let ab = m
        .siamese_rank(&mut g, &store, &a, &b, 1.0, &mut Mode::Eval)
        .unwrap();
    let ba = m
        .siamese_rank(&mut g, &store, &b, &a, 1.0, &mut Mode::Eval)
        .unwrap();
    assert_eq!(g.value(ab.score_a), g.value(ba.score_b));
    assert_eq!(g.value(ab.score_b), g.value(ba.score_a));

    let sa = g.value(ab.score_a).item().unwrap();
    let sb = g.value(ab.score_b).item().unwrap();
    let (hi, lo) = if sa > sb { (&a, &b) } else { (&b, &a) };
    let margin = (sa - sb).abs() / 2.0;
    let out = m
        .siamese_rank(&mut g, &store, hi, lo, margin, &mut Mode::Eval)
        .unwrap();
    assert_eq!(g.value(out.loss).item().unwrap(), 0.0);
}

#[test]
fn siamese_branches_share_parameter_leaves() {
    let (m, mut store) = ranker(ArchKind::Vanilla, 35);
    let mut r = rng(36);
    let a = vec![random_doc(&mut r, 2)];
    let b = vec![random_doc(&mut r, 2)];

    let mut single = Graph::new();
    m.forward(&mut single, &store, &a, &mut Mode::Eval).unwrap();
    let mut g = Graph::new();
    let before = m
        .siamese_rank(&mut g, &store, &a, &b, 1.0, &mut Mode::Eval)
        .unwrap();
    assert_eq!(g.params_used(), single.params_used());
    let (sa, sb) = (
        g.value(before.score_a).clone(),
        g.value(before.score_b).clone(),
    );

    let w = store.id("encoder.layers.0.ff.w1").unwrap();
    store.get_mut(w).data_mut()[0] += 0.5;
    let mut g = Graph::new();
    let after = m
        .siamese_rank(&mut g, &store, &a, &b, 1.0, &mut Mode::Eval)
        .unwrap();
    assert_ne!(g.value(after.score_a), &sa);
    assert_ne!(g.value(after.score_b), &sb);
}

#[test]
fn siamese_needs_rank_head() {
    let (m, store) = model(ArchKind::Vanilla, HeadKind::Classify2, 1);
    let d = vec![random_doc(&mut rng(1), 2)];
    let mut g = Graph::new();
    assert!(matches!(
        m.siamese_rank(&mut g, &store, &d, &d, 1.0, &mut Mode::Eval),
        Err(Error::Contract(_))
    ));
}

#[test]
fn padding_leaves_representations_unchanged() {
    for kind in ArchKind::ALL {
        let (m, store) = model(kind, HeadKind::Classify3, 41);
        let mut r = rng(42);
        let mut docs: Vec<DocInput> = (0..3).map(|i| random_doc(&mut r, 2 + i)).collect();
        docs[1].facts = vec![random_fact(&mut r, 0), random_fact(&mut r, 2)];
        let rep = |pad: usize| {
            let mut g = Graph::new();
            let v = m
                .represent(&mut g, &store, &docs, pad, &mut Mode::Eval)
                .unwrap();
            g.value(v).clone()
        };
        let base = rep(0);
        for pad in [1, 3, 7] {
            assert!(base.max_abs_diff(&rep(pad)) < 1e-10, "{kind:?} pad {pad}");
        }
    }
}

#[test]
fn empty_batch_and_empty_document() {
    let (m, store) = model(ArchKind::Hierarchical, HeadKind::Classify3, 1);
    let mut g = Graph::new();
    assert!(matches!(
        m.forward(&mut g, &store, &[], &mut Mode::Eval),
        Err(Error::Empty(_))
    ));
    assert!(matches!(
        m.forward(&mut g, &store, &[DocInput::default()], &mut Mode::Eval),
        Err(Error::Empty(_))
    ));
}

#[test]
fn task_loss_checks_target_kind() {
    let (m, store) = model(ArchKind::Vanilla, HeadKind::Regress, 1);
    let d = vec![random_doc(&mut rng(1), 2)];
    let mut g = Graph::new();
    let y = m.forward(&mut g, &store, &d, &mut Mode::Eval).unwrap();
    assert!(task_loss(&mut g, HeadKind::Regress, y, &Targets::Classes(vec![0])).is_err());
    assert!(task_loss(&mut g, HeadKind::Regress, y, &Targets::Scores(vec![2.0])).is_ok());
    assert!(task_loss(&mut g, HeadKind::RankScore, y, &Targets::Scores(vec![2.0])).is_err());
}
