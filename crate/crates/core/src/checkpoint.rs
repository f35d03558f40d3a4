//! Trained-model files.
//!
//! A checkpoint is one JSON object holding the architecture, the vocabulary,
//! the task and every parameter as `{name, shape, data}`, where `data` is the
//! base64 encoding of the little-endian f64 values in row-major order.
//! Parameter names follow the model's construction prefixes:
//!
//! * `encoder.token_embedding`, `encoder.position_embedding`,
//!   `encoder.layers.{i}.{ln1,ln2}.{gain,bias}`,
//!   `encoder.layers.{i}.attn.{wq,bq,wk,wv,bv,wo,bo}`,
//!   `encoder.layers.{i}.ff.{w1,b1,w2,b2}`, `encoder.final_ln.{gain,bias}`
//! * `doc_encoder.cls` plus the same layout under `doc_encoder.` (no token
//!   embedding) for the hierarchical and fact-aware models
//! * `pool_query` when a document encoder pools with attention
//! * `head.dense.{w,b}`, `head.out.w`, `head.out.b` (no bias on ranking heads)
//! * `aux_head.*` for the entailment head of the multi-task model
//!
//! Loading rebuilds the model from the stored spec and then overwrites each
//! parameter by name, so missing, extra or reshaped entries are rejected.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{ArchitectureSpec, CoherenceModel};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};
use crate::text::Vocabulary;
use crate::train::Task;

pub const FORMAT: &str = "coherence-lab-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub task: Task,
    pub arch: ArchitectureSpec,
    pub vocab: Vocabulary,
    pub params: Vec<StoredParam>,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(name: &str, text: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::Contract(format!("parameter {name}: bad base64: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Contract(format!(
            "parameter {name}: {} bytes is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

impl Checkpoint {
    pub fn new(
        task: Task,
        arch: &ArchitectureSpec,
        vocab: &Vocabulary,
        store: &ParamStore,
    ) -> Self {
        let params = store
            .iter()
            .map(|(_, name, t)| StoredParam {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: encode(t.data()),
            })
            .collect();
        Self {
            format: FORMAT.to_string(),
            task,
            arch: arch.clone(),
            vocab: vocab.clone(),
            params,
        }
    }

    /// Rebuilds the model and its weights.
    pub fn restore(&self) -> Result<(CoherenceModel, ParamStore)> {
        if self.format != FORMAT {
            return Err(Error::Contract(format!(
                "unsupported checkpoint format {:?}",
                self.format
            )));
        }
        self.arch.validate()?;
        if self.arch.encoder.vocab_size != self.vocab.len() {
            return Err(Error::Contract(format!(
                "encoder vocab_size {} but checkpoint vocabulary has {} entries",
                self.arch.encoder.vocab_size,
                self.vocab.len()
            )));
        }
        let (model, mut store) =
            CoherenceModel::new(&self.arch, &mut ChaCha8Rng::seed_from_u64(0))?;
        if store.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "architecture has {} parameters, checkpoint stores {}",
                store.len(),
                self.params.len()
            )));
        }
        let mut seen = vec![false; store.len()];
        for p in &self.params {
            let id = store
                .id(&p.name)
                .ok_or_else(|| Error::Contract(format!("unknown parameter {}", p.name)))?;
            if std::mem::replace(&mut seen[id.index()], true) {
                return Err(Error::Contract(format!(
                    "parameter {} stored twice",
                    p.name
                )));
            }
            let t = Tensor::new(p.shape.clone(), decode(&p.name, &p.data)?)?;
            if t.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameter {}", p.name)));
            }
            store.set(id, t)?;
        }
        Ok((model, store))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}
