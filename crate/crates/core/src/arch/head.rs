use serde::{Deserialize, Serialize};

use crate::encoder::{linear, ParamInit};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Classify2,
    Classify3,
    Regress,
    RankScore,
    Entail,
}

impl HeadKind {
    pub fn outputs(self) -> usize {
        match self {
            Self::Classify2 | Self::Entail => 2,
            Self::Classify3 => 3,
            Self::Regress | Self::RankScore => 1,
        }
    }

    pub fn is_classifier(self) -> bool {
        self.outputs() > 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub hidden_dim: usize,
}

impl HeadSpec {
    pub fn new(kind: HeadKind, hidden_dim: usize) -> Self {
        Self { kind, hidden_dim }
    }
}

/// Dense layer with ReLU followed by a task-specific output layer.
///
/// A ranking score has no output bias: only score differences reach the
/// loss, so the bias would never receive gradient.
#[derive(Clone, Debug)]
pub struct TaskHead {
    spec: HeadSpec,
    dense_w: ParamId,
    dense_b: ParamId,
    out_w: ParamId,
    out_b: Option<ParamId>,
}

impl TaskHead {
    pub fn new(prefix: &str, spec: HeadSpec, d_model: usize, init: &mut ParamInit) -> Result<Self> {
        if spec.hidden_dim == 0 {
            return Err(Error::Config(format!(
                "{prefix}: hidden_dim must be positive"
            )));
        }
        let k = spec.kind.outputs();
        let out_b = if spec.kind == HeadKind::RankScore {
            None
        } else {
            Some(init.zeros(&format!("{prefix}.out.b"), &[k])?)
        };
        Ok(Self {
            spec,
            dense_w: init.normal(&format!("{prefix}.dense.w"), &[d_model, spec.hidden_dim])?,
            dense_b: init.zeros(&format!("{prefix}.dense.b"), &[spec.hidden_dim])?,
            out_w: init.normal(&format!("{prefix}.out.w"), &[spec.hidden_dim, k])?,
            out_b,
        })
    }

    pub fn spec(&self) -> HeadSpec {
        self.spec
    }

    /// Maps `[B x d_model]` to `[B x outputs]` (logits for classifiers).
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = linear(g, store, x, self.dense_w, self.dense_b)?;
        let h = g.relu(h)?;
        let w = g.param(store, self.out_w);
        let y = g.matmul(h, w)?;
        match self.out_b {
            Some(b) => {
                let b = g.param(store, b);
                g.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}
