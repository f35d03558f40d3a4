use std::collections::HashMap;
use std::path::Path;

use super::{read_jsonl, Document, Fact};
use crate::error::{Error, Result};

fn bare(word: &str) -> String {
    word.trim_matches(|c: char| !c.is_alphanumeric() && c != '_')
        .to_lowercase()
}

fn strip_final_punct(s: &str) -> &str {
    s.trim_end_matches(['.', '!', '?']).trim_end()
}

/// Splits each sentence at its earliest lexicon verb (longest entry wins at
/// a tie) into subject, verb and object. Sentences without a match, or
/// where either side is empty, yield nothing.
pub fn extract_facts_naive(doc: &Document, lexicon: &[String]) -> Result<Vec<Fact>> {
    let entries: Vec<Vec<String>> = lexicon
        .iter()
        .map(|v| v.split_whitespace().map(bare).collect::<Vec<_>>())
        .filter(|v| !v.is_empty())
        .collect();
    if entries.is_empty() {
        return Err(Error::Empty("verb lexicon".into()));
    }
    let mut facts = Vec::new();
    for (sentence_index, sentence) in doc.sentences.iter().enumerate() {
        let raw: Vec<&str> = sentence.split_whitespace().collect();
        let norm: Vec<String> = raw.iter().map(|w| bare(w)).collect();
        let hit = (0..raw.len()).find_map(|start| {
            entries
                .iter()
                .filter(|e| norm.len() >= start + e.len() && norm[start..start + e.len()] == e[..])
                .map(Vec::len)
                .max()
                .map(|len| (start, len))
        });
        let Some((start, len)) = hit else { continue };
        let subject = raw[..start].join(" ");
        let verb = raw[start..start + len].join(" ");
        let object = raw[start + len..].join(" ");
        let verb = strip_final_punct(&verb).to_string();
        let object = strip_final_punct(&object).to_string();
        if subject.is_empty() || object.is_empty() {
            continue;
        }
        facts.push(Fact {
            doc_id: doc.id.clone(),
            sentence_index,
            subject,
            verb,
            object,
        });
    }
    Ok(facts)
}

/// Checks that every fact names a known document and one of its sentences.
pub fn align_facts(facts: &[Fact], docs: &[Document]) -> Result<()> {
    let sizes: HashMap<&str, usize> = docs
        .iter()
        .map(|d| (d.id.as_str(), d.sentences.len()))
        .collect();
    for f in facts {
        match sizes.get(f.doc_id.as_str()) {
            None => {
                return Err(Error::FactAlignment(format!(
                    "unknown document {:?}",
                    f.doc_id
                )));
            }
            Some(&n) if f.sentence_index >= n => {
                return Err(Error::FactAlignment(format!(
                    "sentence_index {} on {}-sentence document {:?}",
                    f.sentence_index, n, f.doc_id
                )));
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// Reads externally extracted facts and validates them against `docs`.
pub fn load_facts_sidecar(path: impl AsRef<Path>, docs: &[Document]) -> Result<Vec<Fact>> {
    let facts: Vec<Fact> = read_jsonl(path)?;
    align_facts(&facts, docs)?;
    Ok(facts)
}

/// Facts of a document after its sentences were rearranged by `order`,
/// re-pointed at the new positions and the new document id.
pub fn reorder_facts(facts: &[Fact], order: &[usize], new_id: &str) -> Vec<Fact> {
    let inv = super::inverse_order(order);
    facts
        .iter()
        .filter_map(|f| {
            inv.get(f.sentence_index).map(|&i| Fact {
                doc_id: new_id.to_string(),
                sentence_index: i,
                ..f.clone()
            })
        })
        .collect()
}
