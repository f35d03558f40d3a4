use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::{derive_gold_score, Document, EntailExample, EntailLabel, Label3};
use crate::error::{Error, Result};

/// Verbs used by the sentence template; doubles as a fact-extraction
/// lexicon for synthetic documents.
pub const SYNTH_VERBS: &[&str] = &["introduces", "meets", "follows", "helps", "calls", "visits"];

pub fn entity(i: usize) -> String {
    format!("e_{i}")
}

/// Coherent documents and one labeled variant per document.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub coherent: Vec<Document>,
    /// Each coherent document either kept (`high`), partly shuffled with
    /// some links intact (`medium`), or shuffled so that no adjacent pair
    /// is linked (`low`), with matching expert scores.
    pub labeled: Vec<Document>,
}

/// Number of adjacent positions whose sentences were adjacent, in the same
/// direction, in the original.
pub fn intact_links(order: &[usize]) -> usize {
    order.windows(2).filter(|w| w[1] == w[0] + 1).count()
}

fn chain<R: Rng + ?Sized>(sents: usize, n_entities: usize, rng: &mut R) -> Vec<String> {
    let start = rng.random_range(0..n_entities);
    (0..sents)
        .map(|i| {
            let verb = SYNTH_VERBS.choose(rng).expect("non-empty");
            let a = entity((start + i) % n_entities);
            let b = entity((start + i + 1) % n_entities);
            format!("{a} {verb} {b}.")
        })
        .collect()
}

fn variant_order<R: Rng + ?Sized>(n: usize, label: Label3, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if label == Label3::High {
        return order;
    }
    loop {
        order.shuffle(rng);
        let links = intact_links(&order);
        let ok = match label {
            Label3::Low => links == 0,
            _ => links > 0 && links < n - 1,
        };
        if ok {
            return order;
        }
    }
}

fn scores_for<R: Rng + ?Sized>(label: Label3, rng: &mut R) -> Vec<u8> {
    let (base, extra) = match label {
        Label3::High => (3, [2, 3]),
        Label3::Medium => (2, [2, 3]),
        Label3::Low => (1, [1, 2]),
    };
    vec![base, base, *extra.choose(rng).expect("non-empty")]
}

/// Entity-chain documents: sentence `i` reads "e_k <verb> e_{k+1}." with
/// consecutive entities from a pool of `n_entities`, so adjacent sentences
/// share exactly one entity.
pub fn synth_corpus<R: Rng + ?Sized>(
    n_docs: usize,
    sents_per_doc: usize,
    n_entities: usize,
    rng: &mut R,
) -> Result<SynthCorpus> {
    if sents_per_doc < 2 {
        return Err(Error::Config(format!(
            "sents_per_doc {sents_per_doc} < 2: ordering needs at least two sentences"
        )));
    }
    if n_entities <= sents_per_doc {
        return Err(Error::Config(format!(
            "{n_entities} entities cannot form a chain of {sents_per_doc} distinct sentences"
        )));
    }
    let mut coherent = Vec::with_capacity(n_docs);
    let mut labeled = Vec::with_capacity(n_docs);
    for i in 0..n_docs {
        let doc =
            Document::from_sentences(format!("synth-{i}"), chain(sents_per_doc, n_entities, rng));
        let label = if sents_per_doc == 2 {
            [Label3::High, Label3::Low][i % 2]
        } else {
            [Label3::High, Label3::Medium, Label3::Low][i % 3]
        };
        let order = variant_order(sents_per_doc, label, rng);
        let mut v = doc.reordered(format!("synth-{i}-v"), &order)?;
        let scores = scores_for(label, rng);
        v.gold_score = Some(derive_gold_score(&scores)?);
        v.expert_scores = Some(scores);
        v.label3 = Some(label);
        coherent.push(doc);
        labeled.push(v);
    }
    Ok(SynthCorpus { coherent, labeled })
}

/// Premise: two linked chain sentences. Hypothesis: one of them
/// (`entailment`) or a sentence about an entity absent from the premise
/// (`not_entailment`), alternating.
pub fn synth_entailment<R: Rng + ?Sized>(
    n: usize,
    n_entities: usize,
    rng: &mut R,
) -> Result<Vec<EntailExample>> {
    if n_entities < 6 {
        return Err(Error::Config(
            "synthetic entailment needs at least 6 entities".into(),
        ));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let premise = chain(2, n_entities, rng);
        let (hypothesis, label) = if i % 2 == 0 {
            (
                premise.choose(rng).expect("two sentences").clone(),
                EntailLabel::Entailment,
            )
        } else {
            let start = premise[0]
                .split(' ')
                .next()
                .and_then(|e| e.strip_prefix("e_"))
                .and_then(|k| k.parse::<usize>().ok())
                .expect("templated sentence");
            let a = entity((start + 3) % n_entities);
            let b = entity((start + 4) % n_entities);
            let verb = SYNTH_VERBS.choose(rng).expect("non-empty");
            (format!("{a} {verb} {b}."), EntailLabel::NotEntailment)
        };
        out.push(EntailExample {
            premise: premise.join(" "),
            hypothesis,
            label,
        });
    }
    Ok(out)
}
