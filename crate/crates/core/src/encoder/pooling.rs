use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

/// Reduction from per-token states of a segment to one vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PoolStrategy {
    Min,
    Max,
    #[default]
    Mean,
    Sum,
    /// Softmax over `w . h_t` with a learned query `w`, then a weighted sum.
    Attention,
    /// State of the segment's last position.
    None,
}

impl std::str::FromStr for PoolStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "min" => Self::Min,
            "max" => Self::Max,
            "mean" => Self::Mean,
            "sum" => Self::Sum,
            "attention" => Self::Attention,
            "none" => Self::None,
            other => return Err(Error::Config(format!("unknown pooling strategy {other}"))),
        })
    }
}

/// Pools rows `segment` of one `[L x d]` sequence into `[1 x d]`.
/// `query` (`[d x 1]`) is required for [`PoolStrategy::Attention`].
pub fn pool_sequence(
    g: &mut Graph,
    hidden: Var,
    segment: Range<usize>,
    strategy: PoolStrategy,
    query: Option<Var>,
) -> Result<Var> {
    let len = g.shape(hidden).first().copied().unwrap_or(0);
    if segment.is_empty() {
        return Err(Error::Segment(format!("empty segment {segment:?}")));
    }
    if segment.end > len {
        return Err(Error::Segment(format!(
            "segment {segment:?} outside sequence of length {len}"
        )));
    }
    let last = segment.end - 1;
    if strategy == PoolStrategy::None {
        return g.slice_rows(hidden, last..segment.end);
    }
    let seg = g.slice_rows(hidden, segment)?;
    match strategy {
        PoolStrategy::Min => g.min_rows(seg),
        PoolStrategy::Max => g.max_rows(seg),
        PoolStrategy::Mean => g.mean_rows(seg),
        PoolStrategy::Sum => g.sum_rows(seg),
        PoolStrategy::Attention => {
            let w = query
                .ok_or_else(|| Error::Contract("attention pooling needs a query vector".into()))?;
            let scores = g.matmul(seg, w)?;
            let alpha = g.softmax(scores, 0)?;
            let alpha_t = g.transpose(alpha)?;
            g.matmul(alpha_t, seg)
        }
        PoolStrategy::None => unreachable!(),
    }
}

/// Pools the same segment of every row of a `[B x L x d]` batch into
/// `[B x d]`.
pub fn pool(
    g: &mut Graph,
    hidden: Var,
    segment: Range<usize>,
    strategy: PoolStrategy,
    query: Option<Var>,
) -> Result<Var> {
    let shape = g.shape(hidden).to_vec();
    let [b, l, d] = shape[..] else {
        return Err(Error::Dimension {
            op: "pool",
            lhs: shape,
            rhs: vec![0, 0, 0],
        });
    };
    let flat = g.reshape(hidden, &[b * l, d])?;
    let mut pooled = Vec::with_capacity(b);
    for i in 0..b {
        let row = g.slice_rows(flat, i * l..(i + 1) * l)?;
        pooled.push(pool_sequence(g, row, segment.clone(), strategy, query)?);
    }
    g.concat_rows(&pooled)
}
