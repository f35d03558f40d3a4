use std::collections::HashMap;

use super::{EntailData, Task, TaskData};
use crate::arch::DocInput;
use crate::error::{Error, Result};
use crate::text::{
    derive_binary_label, derive_gold_score, doc_input, pair_input, reorder_facts, Document,
    EntailExample, Fact, PermutationPair, Vocabulary,
};

fn facts_by_doc(facts: &[Fact]) -> HashMap<&str, Vec<Fact>> {
    let mut map: HashMap<&str, Vec<Fact>> = HashMap::new();
    for f in facts {
        map.entry(f.doc_id.as_str()).or_default().push(f.clone());
    }
    map
}

fn inputs(vocab: &Vocabulary, docs: &[Document], facts: &[Fact]) -> Vec<DocInput> {
    let by_doc = facts_by_doc(facts);
    docs.iter()
        .map(|d| {
            doc_input(
                vocab,
                d,
                by_doc.get(d.id.as_str()).map_or(&[], Vec::as_slice),
            )
        })
        .collect()
}

/// Two-way labels from expert scores (`non_coherent` is class 0).
pub fn two_way(vocab: &Vocabulary, docs: &[Document], facts: &[Fact]) -> Result<TaskData> {
    let labels = docs
        .iter()
        .map(|d| {
            let s = d
                .expert_scores
                .as_deref()
                .ok_or_else(|| Error::Label(format!("{} has no expert_scores", d.id)))?;
            Ok(derive_binary_label(s)?.index())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskData::Classes {
        docs: inputs(vocab, docs, facts),
        labels,
    })
}

pub fn three_way(vocab: &Vocabulary, docs: &[Document], facts: &[Fact]) -> Result<TaskData> {
    let labels = docs
        .iter()
        .map(|d| {
            d.label3
                .map(|l| l.index())
                .ok_or_else(|| Error::Label(format!("{} has no label3", d.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskData::Classes {
        docs: inputs(vocab, docs, facts),
        labels,
    })
}

/// Gold scores, derived from expert scores when not given.
pub fn scores(vocab: &Vocabulary, docs: &[Document], facts: &[Fact]) -> Result<TaskData> {
    let scores = docs
        .iter()
        .map(|d| match (d.gold_score, &d.expert_scores) {
            (Some(g), _) => Ok(g),
            (None, Some(s)) => derive_gold_score(s),
            (None, None) => Err(Error::Label(format!("{} has no gold_score", d.id))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskData::Scores {
        docs: inputs(vocab, docs, facts),
        scores,
    })
}

/// Original/permuted document pairs; facts follow their sentences.
pub fn pairs(
    vocab: &Vocabulary,
    docs: &[Document],
    perms: &[PermutationPair],
    facts: &[Fact],
) -> Result<TaskData> {
    let by_id: HashMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let by_doc = facts_by_doc(facts);
    let mut original = Vec::with_capacity(perms.len());
    let mut permuted = Vec::with_capacity(perms.len());
    for p in perms {
        let d = by_id.get(p.original_id.as_str()).ok_or_else(|| {
            Error::Contract(format!("permutation of unknown document {}", p.original_id))
        })?;
        let own = by_doc.get(d.id.as_str()).map_or(&[][..], Vec::as_slice);
        let new_id = format!("{}#{}", d.id, p.perm_index);
        let moved = d.reordered(new_id.clone(), &p.order)?;
        original.push(doc_input(vocab, d, own));
        permuted.push(doc_input(
            vocab,
            &moved,
            &reorder_facts(own, &p.order, &new_id),
        ));
    }
    Ok(TaskData::Pairs { original, permuted })
}

/// Builds the examples of any classification or regression task.
pub fn labeled(
    task: Task,
    vocab: &Vocabulary,
    docs: &[Document],
    facts: &[Fact],
) -> Result<TaskData> {
    match task {
        Task::TwoWay => two_way(vocab, docs, facts),
        Task::ThreeWay => three_way(vocab, docs, facts),
        Task::Score => scores(vocab, docs, facts),
        Task::Order => Err(Error::Contract(
            "ordering examples come from permutation pairs".into(),
        )),
    }
}

pub fn entail(vocab: &Vocabulary, examples: &[EntailExample]) -> EntailData {
    EntailData {
        pairs: examples.iter().map(|e| pair_input(vocab, e)).collect(),
        labels: examples.iter().map(|e| e.label.index()).collect(),
    }
}
