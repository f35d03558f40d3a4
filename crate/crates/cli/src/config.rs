use std::fs;
use std::path::{Path, PathBuf};

use coherence_core::arch::{ArchKind, ArchitectureSpec, HeadSpec, SentenceMode};
use coherence_core::encoder::{EncoderConfig, PoolStrategy};
use coherence_core::train::{Task, TrainConfig};
use coherence_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Model dimensions; the architecture kind and head come from the task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub head_hidden: usize,
    pub pooling: PoolStrategy,
    pub sentence_mode: SentenceMode,
    /// Tokens seen fewer times in the training corpus map to `[UNK]`.
    pub min_freq: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            n_heads: 2,
            d_model: 32,
            d_ff: 64,
            max_seq_len: 512,
            head_hidden: 32,
            pooling: PoolStrategy::Mean,
            sentence_mode: SentenceMode::Packed,
            min_freq: 1,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, kind: ArchKind, task: Task, vocab_size: usize) -> Result<ArchitectureSpec> {
        let mut enc = EncoderConfig::new(
            self.n_layers,
            self.n_heads,
            self.d_model,
            self.d_ff,
            vocab_size,
        );
        enc.max_seq_len = self.max_seq_len;
        let mut spec = ArchitectureSpec::for_kind(
            kind,
            enc,
            HeadSpec::new(task.head_kind(), self.head_hidden),
        );
        spec.pooling = self.pooling;
        spec.sentence_mode = self.sentence_mode;
        spec.validate()?;
        Ok(spec)
    }
}

/// Input files. Relative paths resolve against the config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub corpus: Option<PathBuf>,
    pub perms: Option<PathBuf>,
    pub facts: Option<PathBuf>,
    pub entail: Option<PathBuf>,
    pub eval_corpus: Option<PathBuf>,
    pub eval_perms: Option<PathBuf>,
    /// Fraction of corpus documents (taken from the end of the file) held
    /// out for evaluation when no `eval_corpus` is given.
    #[serde(default = "default_holdout")]
    pub holdout: f64,
}

fn default_holdout() -> f64 {
    0.2
}

impl Default for DataPaths {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(default)]
    pub task: Option<Task>,
    #[serde(default)]
    pub arch: Option<ArchKind>,
    #[serde(default = "default_train")]
    pub train: TrainConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

fn default_train() -> TrainConfig {
    TrainConfig::default()
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

impl Default for CliConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| crate::io_error(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let d = &mut cfg.data;
        for p in [
            &mut d.corpus,
            &mut d.perms,
            &mut d.facts,
            &mut d.entail,
            &mut d.eval_corpus,
            &mut d.eval_perms,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(0.0..1.0).contains(&self.data.holdout) {
            return Err(Error::Config(format!(
                "holdout {} must be in [0, 1)",
                self.data.holdout
            )));
        }
        Ok(())
    }
}
