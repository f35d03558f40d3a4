use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::permute::count_arrangements;
use super::*;
use crate::error::Error;

fn doc(id: &str, text: &str) -> Document {
    let mut d = Document {
        id: id.into(),
        text: text.into(),
        sentences: Vec::new(),
        label3: None,
        expert_scores: None,
        gold_score: None,
    };
    d.check().unwrap();
    d
}

fn sentences_doc(sentences: &[&str]) -> Document {
    Document::from_sentences("d", sentences.iter().map(|s| s.to_string()).collect())
}

fn all_orders(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for rest in all_orders(n - 1) {
        for pos in 0..=rest.len() {
            let mut o = rest.clone();
            o.insert(pos, n - 1);
            out.push(o);
        }
    }
    out
}

#[test]
fn vocab_counts_and_min_freq() {
    let corpus = [doc("1", "a b"), doc("2", "a")];
    let v = build_vocab(&corpus, 1).unwrap();
    assert_eq!(v.len(), 6);
    assert_eq!(v.id("a"), Some(4));
    assert_eq!(v.id("b"), Some(5));
    let v2 = build_vocab(&corpus, 2).unwrap();
    assert_eq!(v2.len(), 5);
    assert_eq!(v2.id("a"), Some(4));
    assert_eq!(v2.id("b"), None);
    assert_eq!(build_vocab(&corpus, 1).unwrap(), v);
    assert!(matches!(build_vocab(&[], 1), Err(Error::Empty(_))));
}

#[test]
fn vocab_ties_break_lexicographically() {
    let v = Vocabulary::from_texts(["zeta alpha mid", "mid"], 1);
    let order: Vec<&str> = (4..v.len()).map(|i| v.token(i).unwrap()).collect();
    assert_eq!(order, vec!["mid", "alpha", "zeta"]);
    let specials = v.specials();
    assert_eq!(specials.iter().collect::<HashSet<_>>().len(), 4);
    assert!(specials.iter().all(|&s| s < v.len()));
}

#[test]
fn vocab_serde_round_trip() {
    let v = Vocabulary::from_texts(["The cat sat.", "A dog ran!"], 1);
    let json = serde_json::to_string(&v).unwrap();
    let back: Vocabulary = serde_json::from_str(&json).unwrap();
    assert_eq!(back, v);
    assert!(serde_json::from_str::<Vocabulary>(r#"["a","b"]"#).is_err());
}

#[test]
fn tokenize_examples() {
    let v = Vocabulary::from_texts(["a b"], 1);
    assert_eq!(tokenize(&v, ""), Vec::<usize>::new());
    assert_eq!(
        tokenize(&v, "a b"),
        vec![v.id("a").unwrap(), v.id("b").unwrap()]
    );
    assert_eq!(tokenize(&v, "zebra"), vec![UNK]);
    assert_eq!(
        words("Hello, World! e_12"),
        vec!["hello", ",", "world", "!", "e_12"]
    );
}

proptest! {
    #[test]
    fn tokenize_round_trips_in_vocab_text(ws in prop::collection::vec("[a-z]{1,6}", 1..12)) {
        let text = ws.join(" ");
        let v = Vocabulary::from_texts([text.as_str()], 1);
        let ids = v.tokenize(&text);
        prop_assert!(!ids.contains(&UNK));
        prop_assert_eq!(v.decode(&ids), ws.iter().map(String::as_str).collect::<Vec<_>>());
        prop_assert_eq!(v.tokenize(&v.decode(&ids).join(" ")), ids);
    }
}

#[test]
fn segmentation_examples() {
    assert_eq!(segment_sentences("A. B!"), vec!["A.", "B!"]);
    assert_eq!(
        segment_sentences("Mr. Smith left."),
        vec!["Mr. Smith left."]
    );
    assert_eq!(segment_sentences(""), Vec::<String>::new());
    assert_eq!(
        segment_sentences("Is it? Yes!!  Dr. No said \"go.\" Then 3.5 left"),
        vec!["Is it?", "Yes!!", "Dr. No said \"go.\"", "Then 3.5 left"]
    );
    assert_eq!(
        segment_sentences("See e.g. this. Done"),
        vec!["See e.g. this.", "Done"]
    );
}

#[test]
fn document_schema_checks() {
    let d = doc("x", "One. Two.");
    assert_eq!(d.sentences, vec!["One.", "Two."]);

    let bad = r#"{"id":"x","text":"One. Two.","sentences":["One.","Three."]}"#;
    assert!(matches!(
        parse_jsonl::<Document>(bad),
        Err(Error::Parse { line: 1, .. })
    ));
    let bad_score = "\n{\"id\":\"x\",\"text\":\"a\",\"expert_scores\":[1,4]}";
    assert!(matches!(
        parse_jsonl::<Document>(bad_score),
        Err(Error::Parse { line: 2, .. })
    ));

    let mut labeled = doc("y", "Alpha beta. Gamma.");
    labeled.label3 = Some(Label3::Medium);
    labeled.expert_scores = Some(vec![2, 2, 3]);
    labeled.gold_score = Some(7.0 / 3.0);
    let text = to_jsonl(&[d.clone(), labeled.clone()]).unwrap();
    assert!(text.contains("\"label3\":\"medium\""));
    assert_eq!(parse_jsonl::<Document>(&text).unwrap(), vec![d, labeled]);
}

#[test]
fn jsonl_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("perms.jsonl");
    let pairs = vec![PermutationPair {
        original_id: "d".into(),
        perm_index: 0,
        order: vec![1, 0],
    }];
    write_jsonl(&path, &pairs).unwrap();
    assert_eq!(read_jsonl::<PermutationPair>(&path).unwrap(), pairs);

    let identity = r#"{"original_id":"d","perm_index":0,"order":[0,1]}"#;
    assert!(parse_jsonl::<PermutationPair>(identity).is_err());
    let not_perm = r#"{"original_id":"d","perm_index":0,"order":[1,1]}"#;
    assert!(parse_jsonl::<PermutationPair>(not_perm).is_err());
    let extra = r#"{"original_id":"d","perm_index":0,"order":[1,0],"x":1}"#;
    assert!(parse_jsonl::<PermutationPair>(extra).is_err());
    assert!(matches!(
        read_jsonl::<Document>(dir.path().join("missing.jsonl")),
        Err(Error::Io(_))
    ));
}

#[test]
fn permutations_of_two_sentences() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let p = generate_permutations(&sentences_doc(&["x.", "y."]), 20, &mut r).unwrap();
    assert_eq!(p.len(), 1);
    assert_eq!(p[0].order, vec![1, 0]);
    let same = generate_permutations(&sentences_doc(&["x.", "x."]), 20, &mut r).unwrap();
    assert!(same.is_empty());
    assert!(matches!(
        generate_permutations(&sentences_doc(&["x."]), 20, &mut r),
        Err(Error::ExcludedDocument(_))
    ));
}

#[test]
fn permutations_of_four_sentences() {
    let d = sentences_doc(&["a.", "b.", "c.", "d."]);
    let candidates: HashSet<Vec<usize>> = all_orders(4)
        .into_iter()
        .filter(|o| o != &vec![0, 1, 2, 3])
        .collect();
    assert_eq!(candidates.len(), 23);
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let p = generate_permutations(&d, 20, &mut r).unwrap();
    assert_eq!(p.len(), 20);
    let got: HashSet<Vec<usize>> = p.iter().map(|x| x.order.clone()).collect();
    assert_eq!(got.len(), 20);
    assert!(got.is_subset(&candidates));
    assert_eq!(
        p.iter().map(|x| x.perm_index).collect::<Vec<_>>(),
        (0..20).collect::<Vec<_>>()
    );
    let all = generate_permutations(&d, 100, &mut r).unwrap();
    let all: HashSet<Vec<usize>> = all.into_iter().map(|x| x.order).collect();
    assert_eq!(all, candidates);
}

#[test]
fn permutations_skip_arrangements_with_the_original_text() {
    let d = sentences_doc(&["a.", "a.", "b."]);
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let p = generate_permutations(&d, 20, &mut r).unwrap();
    let texts: HashSet<Vec<String>> = p
        .iter()
        .map(|x| apply_order(&d.sentences, &x.order).unwrap())
        .collect();
    assert_eq!(p.len(), 2);
    assert_eq!(texts.len(), 2);
    assert!(!texts.contains(&d.sentences));
}

#[test]
fn arrangement_counts_match_enumeration() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let n = r.random_range(1..7);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..3)).collect();
        let distinct: HashSet<Vec<usize>> = all_orders(n)
            .into_iter()
            .map(|o| o.iter().map(|&i| labels[i]).collect())
            .collect();
        let mut sizes = [0; 3];
        labels.iter().for_each(|&l| sizes[l] += 1);
        assert_eq!(count_arrangements(&sizes), distinct.len());
    }
    assert_eq!(count_arrangements(&[1; 40]), usize::MAX);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn permutation_contract(seed in any::<u64>(), n in 2usize..8, k in 1usize..30, dup in 0usize..3) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut sents: Vec<String> = (0..n).map(|i| format!("s{i}.")).collect();
        for _ in 0..dup.min(n - 1) {
            let i = r.random_range(1..n);
            sents[i] = sents[0].clone();
        }
        let d = Document::from_sentences("p", sents.clone());
        let pairs = generate_permutations(&d, k, &mut r).unwrap();
        let distinct: HashSet<Vec<String>> = all_orders(n)
            .into_iter()
            .map(|o| apply_order(&sents, &o).unwrap())
            .collect();
        prop_assert_eq!(pairs.len(), k.min(distinct.len() - 1));
        let mut seen = HashSet::new();
        for p in &pairs {
            let permuted = apply_order(&sents, &p.order).unwrap();
            prop_assert!(permuted != sents);
            prop_assert!(seen.insert(permuted.clone()));
            prop_assert_eq!(apply_order(&permuted, &inverse_order(&p.order)).unwrap(), sents.clone());
        }
    }
}

#[test]
fn naive_extraction_rules() {
    let lex = |ws: &[&str]| ws.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let d = sentences_doc(&["dogs chase cats", "nothing here", "cats sleep"]);
    let facts = extract_facts_naive(&d, &lex(&["chase", "sleep"])).unwrap();
    assert_eq!(facts.len(), 1);
    assert_eq!(
        (
            facts[0].subject.as_str(),
            facts[0].verb.as_str(),
            facts[0].object.as_str()
        ),
        ("dogs", "chase", "cats")
    );
    assert_eq!(facts[0].sentence_index, 0);

    let d = sentences_doc(&["The Cat Was Used To feed e_1."]);
    let facts = extract_facts_naive(&d, &lex(&["was used", "was used to", "feed"])).unwrap();
    assert_eq!(facts[0].subject, "The Cat");
    assert_eq!(facts[0].verb, "Was Used To");
    assert_eq!(facts[0].object, "feed e_1");
    assert!(matches!(extract_facts_naive(&d, &[]), Err(Error::Empty(_))));
}

#[test]
fn sidecar_with_two_triples_for_one_sentence() {
    let d = Document::from_sentences(
        "court-1",
        vec![
            "Police asked whether it was used to attack Steenkamp and whether she used bat in self-defense.".into(),
            "The hearing continues.".into(),
            "No verdict yet.".into(),
        ],
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("facts.jsonl");
    std::fs::write(
        &path,
        concat!(
            r#"{"doc_id":"court-1","sentence_index":0,"subject":"it","verb":"was used to attack","object":"Steenkamp"}"#,
            "\n",
            r#"{"doc_id":"court-1","sentence_index":0,"subject":"she","verb":"used bat in","object":"self-defense"}"#,
            "\n"
        ),
    )
    .unwrap();
    let facts = load_facts_sidecar(&path, std::slice::from_ref(&d)).unwrap();
    assert_eq!(facts.len(), 2);
    assert_eq!(facts[0].verb, "was used to attack");
    assert_eq!(facts[1].object, "self-defense");

    let vocab = build_vocab(std::slice::from_ref(&d), 1).unwrap();
    assert_eq!(doc_input(&vocab, &d, &facts).facts.len(), 2);

    std::fs::write(&path, "").unwrap();
    assert!(load_facts_sidecar(&path, std::slice::from_ref(&d))
        .unwrap()
        .is_empty());

    std::fs::write(
        &path,
        r#"{"doc_id":"court-1","sentence_index":99,"subject":"a","verb":"b","object":"c"}"#,
    )
    .unwrap();
    assert!(matches!(
        load_facts_sidecar(&path, std::slice::from_ref(&d)),
        Err(Error::FactAlignment(_))
    ));

    std::fs::write(
        &path,
        "{\"doc_id\":\"court-1\",\"sentence_index\":0,\"subject\":\"a\",\"verb\":\"b\",\"object\":\"c\"}\nnot json\n",
    )
    .unwrap();
    assert!(matches!(
        load_facts_sidecar(&path, std::slice::from_ref(&d)),
        Err(Error::Parse { line: 2, .. })
    ));
}

#[test]
fn reordered_facts_follow_their_sentences() {
    let d = sentences_doc(&["a x b.", "c x d.", "e x f."]);
    let facts = extract_facts_naive(&d, &["x".to_string()]).unwrap();
    let order = vec![2, 0, 1];
    let moved = d.reordered("d2", &order).unwrap();
    let refs = reorder_facts(&facts, &order, "d2");
    align_facts(&refs, std::slice::from_ref(&moved)).unwrap();
    for f in &refs {
        assert!(moved.sentences[f.sentence_index].starts_with(&f.subject));
    }
}

#[test]
fn label_truth_table() {
    for a in 1..=3u8 {
        for b in 1..=3u8 {
            for c in 1..=3u8 {
                let s = [a, b, c];
                let lows = (a == 1) as u8 + (b == 1) as u8 + (c == 1) as u8;
                let expected = if lows >= 2 {
                    BinaryLabel::NonCoherent
                } else {
                    BinaryLabel::Other
                };
                assert_eq!(derive_binary_label(&s).unwrap(), expected, "{s:?}");
                let mean = (a as f64 + b as f64 + c as f64) / 3.0;
                assert_eq!(derive_gold_score(&s).unwrap(), mean);
            }
        }
    }
    assert_eq!(
        derive_binary_label(&[1, 1, 3]).unwrap(),
        BinaryLabel::NonCoherent
    );
    assert_eq!(derive_binary_label(&[1, 2, 3]).unwrap(), BinaryLabel::Other);
    assert_eq!(derive_gold_score(&[1, 2, 3]).unwrap(), 2.0);
    assert!((derive_gold_score(&[1, 1, 2]).unwrap() - 1.3333).abs() < 1e-4);
    assert!(matches!(derive_binary_label(&[0, 1]), Err(Error::Label(_))));
    assert!(matches!(derive_gold_score(&[]), Err(Error::Label(_))));
}

fn entities(sentence: &str) -> HashSet<String> {
    words(sentence)
        .into_iter()
        .filter(|w| w.starts_with("e_"))
        .collect()
}

#[test]
fn synthetic_chains_link_adjacent_sentences() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let corpus = synth_corpus(30, 3, 12, &mut r).unwrap();
    let mut broken = 0;
    for d in &corpus.coherent {
        for w in d.sentences.windows(2) {
            assert_eq!(entities(&w[0]).intersection(&entities(&w[1])).count(), 1);
        }
        let mut shuffled = d.sentences.clone();
        for _ in 0..5 {
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut r);
            if shuffled
                .windows(2)
                .any(|w| entities(&w[0]).is_disjoint(&entities(&w[1])))
            {
                broken += 1;
            }
        }
    }
    assert!(broken > 0);
}

#[test]
fn synthetic_variants_carry_consistent_labels() {
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let corpus = synth_corpus(30, 4, 12, &mut r).unwrap();
    assert_eq!(corpus.labeled.len(), 30);
    for (c, v) in corpus.coherent.iter().zip(&corpus.labeled) {
        let order: Vec<usize> = v
            .sentences
            .iter()
            .map(|s| c.sentences.iter().position(|x| x == s).unwrap())
            .collect();
        let links = intact_links(&order);
        let scores = v.expert_scores.clone().unwrap();
        match v.label3.unwrap() {
            Label3::High => assert_eq!(links, 3),
            Label3::Medium => assert!((1..3).contains(&links)),
            Label3::Low => {
                assert_eq!(links, 0);
                assert_eq!(
                    derive_binary_label(&scores).unwrap(),
                    BinaryLabel::NonCoherent
                );
            }
        }
        assert_eq!(v.gold_score, Some(derive_gold_score(&scores).unwrap()));
    }
    let counts: Vec<usize> = Label3::ALL
        .iter()
        .map(|l| {
            corpus
                .labeled
                .iter()
                .filter(|d| d.label3 == Some(*l))
                .count()
        })
        .collect();
    assert_eq!(counts, vec![10, 10, 10]);
}

#[test]
fn synthetic_corpus_edges() {
    let make = |seed| synth_corpus(5, 3, 8, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    assert_eq!(make(7), make(7));
    assert_ne!(make(7), make(8));
    let empty = synth_corpus(0, 3, 8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(empty.coherent.is_empty() && empty.labeled.is_empty());
    let mut r = ChaCha8Rng::seed_from_u64(1);
    assert!(matches!(
        synth_corpus(3, 1, 8, &mut r),
        Err(Error::Config(_))
    ));
    let two = synth_corpus(4, 2, 8, &mut r).unwrap();
    assert!(two.labeled.iter().all(|d| d.label3 != Some(Label3::Medium)));
    to_jsonl(&two.labeled).unwrap();
}

#[test]
fn synthetic_entailment_pairs() {
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let ex = synth_entailment(10, 12, &mut r).unwrap();
    for e in &ex {
        let overlap = entities(&e.premise)
            .intersection(&entities(&e.hypothesis))
            .count();
        match e.label {
            EntailLabel::Entailment => assert!(e.premise.contains(&e.hypothesis)),
            EntailLabel::NotEntailment => assert_eq!(overlap, 0),
        }
    }
    to_jsonl(&ex).unwrap();
}
