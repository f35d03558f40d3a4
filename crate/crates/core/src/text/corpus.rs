use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::segment_sentences;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label3 {
    Low,
    Medium,
    High,
}

impl Label3 {
    pub const ALL: [Label3; 3] = [Self::Low, Self::Medium, Self::High];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryLabel {
    NonCoherent,
    Other,
}

impl BinaryLabel {
    /// Class index used by two-way heads: `non_coherent` is class 0.
    pub fn index(self) -> usize {
        match self {
            Self::NonCoherent => 0,
            Self::Other => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Self::NonCoherent),
            1 => Some(Self::Other),
            _ => None,
        }
    }
}

/// One corpus line. `sentences` may be omitted on input, in which case it
/// is filled by [`segment_sentences`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub sentences: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label3: Option<Label3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert_scores: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_score: Option<f64>,
}

fn squeeze(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

impl Document {
    /// A document whose text is its sentences joined by single spaces.
    pub fn from_sentences(id: impl Into<String>, sentences: Vec<String>) -> Self {
        Self {
            id: id.into(),
            text: sentences.join(" "),
            sentences,
            label3: None,
            expert_scores: None,
            gold_score: None,
        }
    }

    /// Same labels, sentences rearranged so that position `i` holds
    /// sentence `order[i]`.
    pub fn reordered(&self, id: impl Into<String>, order: &[usize]) -> Result<Self> {
        let sentences = super::apply_order(&self.sentences, order)?;
        Ok(Self {
            id: id.into(),
            text: sentences.join(" "),
            sentences,
            ..self.clone()
        })
    }
}

/// A JSONL record with a schema check beyond what serde enforces.
pub trait Record: Serialize + DeserializeOwned + PartialEq {
    fn check(&mut self) -> std::result::Result<(), String>;
}

impl Record for Document {
    fn check(&mut self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty document id".into());
        }
        if self.sentences.is_empty() {
            self.sentences = segment_sentences(&self.text);
        } else if squeeze(&self.sentences.concat()) != squeeze(&self.text) {
            return Err(format!(
                "sentences of {} do not concatenate to its text",
                self.id
            ));
        }
        if let Some(s) = &self.expert_scores {
            if let Some(v) = s.iter().find(|v| !(1..=3).contains(*v)) {
                return Err(format!("expert score {v} not in 1..=3"));
            }
        }
        if self.gold_score.is_some_and(|g| !g.is_finite()) {
            return Err("non-finite gold_score".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fact {
    pub doc_id: String,
    pub sentence_index: usize,
    pub subject: String,
    pub verb: String,
    pub object: String,
}

impl Record for Fact {
    fn check(&mut self) -> std::result::Result<(), String> {
        for (name, v) in [
            ("subject", &self.subject),
            ("verb", &self.verb),
            ("object", &self.object),
        ] {
            if v.trim().is_empty() {
                return Err(format!("empty {name}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntailLabel {
    Entailment,
    NotEntailment,
}

impl EntailLabel {
    pub fn index(self) -> usize {
        match self {
            Self::Entailment => 0,
            Self::NotEntailment => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntailExample {
    pub premise: String,
    pub hypothesis: String,
    pub label: EntailLabel,
}

impl Record for EntailExample {
    fn check(&mut self) -> std::result::Result<(), String> {
        if self.premise.trim().is_empty() || self.hypothesis.trim().is_empty() {
            return Err("empty premise or hypothesis".into());
        }
        Ok(())
    }
}

/// `order[i]` is the original index of the sentence placed at position `i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PermutationPair {
    pub original_id: String,
    pub perm_index: usize,
    pub order: Vec<usize>,
}

impl Record for PermutationPair {
    fn check(&mut self) -> std::result::Result<(), String> {
        let n = self.order.len();
        let mut seen = vec![false; n];
        for &i in &self.order {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(format!("order {:?} is not a permutation", self.order));
            }
        }
        if self.order.iter().enumerate().all(|(i, &o)| i == o) {
            return Err("identity order".into());
        }
        Ok(())
    }
}

/// Parses JSONL text, skipping blank lines. Line numbers in errors are
/// 1-based.
pub fn parse_jsonl<T: Record>(text: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: T = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        rec.check()
            .map_err(|msg| Error::Parse { line: i + 1, msg })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_jsonl<T: Record>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    parse_jsonl(&fs::read_to_string(path)?)
}

/// Serializes records one per line, re-parsing the output to confirm it
/// round-trips through the schema.
pub fn to_jsonl<T: Record + Clone>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    let back: Vec<T> = parse_jsonl(&out)?;
    let mut expected = records.to_vec();
    for r in &mut expected {
        r.check().map_err(|msg| Error::Parse { line: 0, msg })?;
    }
    if back != expected {
        return Err(Error::Contract(
            "JSONL writer produced records that do not round-trip".into(),
        ));
    }
    Ok(out)
}

pub fn write_jsonl<T: Record + Clone>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let text = to_jsonl(records)?;
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}
