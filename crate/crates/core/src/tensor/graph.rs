use std::collections::HashMap;
use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ParamGrads, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Forward mode. Dropout only fires in `Train`, and draws its masks from the
/// borrowed generator.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// A user-supplied differentiable operation.
pub trait CustomOp {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    /// Returns one gradient buffer per input, each the size of that input.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &[f64]) -> Vec<Vec<f64>>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Concat0(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    MaskedSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    MeanRows(Var),
    ArgRows {
        x: Var,
        arg: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
    MarginRanking {
        pos: Var,
        neg: Var,
        active: Vec<bool>,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Operation tape. Nodes are appended in creation order, which is a valid
/// topological order, so backward is a single reverse sweep.
///
/// Calling [`Graph::backward`] twice without [`Graph::zero_grads`]
/// accumulates into leaf gradients; interior gradients are recomputed.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    stochastic: bool,
}

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Dimension {
            op,
            lhs: s.to_vec(),
            rhs: vec![0, 0],
        }),
    }
}

fn last_dim(t: &Tensor) -> usize {
    t.shape().last().copied().unwrap_or(1)
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (y, dy)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// True once any dropout mask has been sampled on this graph.
    pub fn is_stochastic(&self) -> bool {
        self.stochastic
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor> {
        self.grad(v)
            .map(|g| Tensor::new(self.shape(v).to_vec(), g.to_vec()).expect("grad shape"))
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient is tracked for it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// Leaf that receives a gradient on backward.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf bound to a stored parameter. Repeated calls with the same id
    /// return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let v = self.push_leaf(store.get(id).clone(), true);
        self.params.insert(id, v);
        v
    }

    /// Parameters referenced by this graph, sorted by id.
    pub fn params_used(&self) -> Vec<ParamId> {
        let mut ids: Vec<_> = self.params.keys().copied().collect();
        ids.sort();
        ids
    }

    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.params.get(&id).copied()
    }

    /// Collects the gradients of every parameter leaf.
    pub fn param_grads(&self, store: &ParamStore) -> ParamGrads {
        let mut out = ParamGrads::new(store);
        for (id, v) in &self.params {
            if let Some(g) = self.grad(*v) {
                out.accumulate(*id, g);
            }
        }
        out
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var], name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = dims2(av, "matmul")?;
        let (k2, n) = dims2(bv, "matmul")?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (ad, bd) = (av.data(), bv.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = ad[i * k + p];
                let brow = &bd[p * n..(p + 1) * n];
                for (o, y) in row.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        self.push(t, Op::MatMul(a, b), &[a, b], "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = dims2(av, "transpose")?;
        let d = av.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        let t = Tensor::new(vec![n, m], out)?;
        self.push(t, Op::Transpose(a), &[a], "transpose")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(t, Op::Add(a, b), &[a, b], "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(t, Op::Sub(a, b), &[a, b], "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(t, Op::Mul(a, b), &[a, b], "mul")
    }

    /// Adds a vector `b` of length `n` to every row of `x` (last axis `n`).
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = last_dim(self.value(x));
        if self.shape(b) != [n] {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let bd = self.value(b).data();
        let data = self
            .value(x)
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(bd).map(|(v, c)| v + c))
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(t, Op::AddBias(x, b), &[x, b], "add_bias")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let data = self.value(x).data().iter().map(|v| v * c).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(t, Op::Scale(x, c), &[x], "scale")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let data = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(t, Op::Relu(x), &[x], "relu")
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| gelu_parts(v).0)
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(t, Op::Gelu(x), &[x], "gelu")
    }

    /// Inverted dropout. Identity (same node) in eval mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, mode: &mut Mode) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!(
                "dropout probability {p} not in [0, 1)"
            )));
        }
        let rng = match mode {
            Mode::Train(rng) if p > 0.0 => rng,
            _ => return Ok(x),
        };
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| {
                if rng.random::<f64>() < p {
                    0.0
                } else {
                    1.0 / keep
                }
            })
            .collect();
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        self.stochastic = true;
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(t, Op::Dropout { x, mask }, &[x], "dropout")
    }

    /// Gathers rows of `table` (`[V x d]`); gradient scatter-adds back.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, d) = dims2(self.value(table), "embedding")?;
        let td = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Vocab { id, vocab });
            }
            data.extend_from_slice(&td[id * d..(id + 1) * d]);
        }
        let t = Tensor::new(vec![ids.len(), d], data)?;
        self.push(
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
            "embedding",
        )
    }

    /// Concatenates along the leading axis. Trailing dimensions must match.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Empty("concat_rows of no tensors".into()))?;
        let tail = self.shape(*first).get(1..).unwrap_or(&[]).to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: self.shape(*first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let t = Tensor::new(shape, data)?;
        self.push(t, Op::Concat0(parts.to_vec()), parts, "concat_rows")
    }

    /// Concatenates 2-D tensors along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Empty("concat_cols of no tensors".into()))?;
        let (m, _) = dims2(self.value(*first), "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = dims2(self.value(p), "concat_cols")?;
            if r != m {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: self.shape(*first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let t = Tensor::new(vec![m, n], data)?;
        self.push(t, Op::ConcatCols(parts.to_vec()), parts, "concat_cols")
    }

    /// Slices along the leading axis.
    pub fn slice_rows(&mut self, x: Var, range: Range<usize>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let rows = *shape.first().unwrap_or(&0);
        if range.start >= range.end || range.end > rows {
            return Err(Error::Index(format!(
                "row slice {range:?} of shape {shape:?}"
            )));
        }
        let inner: usize = shape[1..].iter().product();
        let data = self.value(x).data()[range.start * inner..range.end * inner].to_vec();
        let mut out_shape = shape;
        out_shape[0] = range.len();
        let t = Tensor::new(out_shape, data)?;
        self.push(
            t,
            Op::SliceRows {
                x,
                start: range.start,
            },
            &[x],
            "slice_rows",
        )
    }

    pub fn slice_cols(&mut self, x: Var, range: Range<usize>) -> Result<Var> {
        let (m, n) = dims2(self.value(x), "slice_cols")?;
        if range.start >= range.end || range.end > n {
            return Err(Error::Index(format!("column slice {range:?} of {m}x{n}")));
        }
        let d = self.value(x).data();
        let w = range.len();
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&d[i * n + range.start..i * n + range.end]);
        }
        let t = Tensor::new(vec![m, w], data)?;
        self.push(
            t,
            Op::SliceCols {
                x,
                start: range.start,
            },
            &[x],
            "slice_cols",
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        self.push(t, Op::Reshape(x), &[x], "reshape")
    }

    /// Softmax along `axis`, with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Index(format!(
                "softmax axis {axis} of shape {shape:?}"
            )));
        }
        let len = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for j in 0..inner {
                let idx = |i: usize| (o * len + i) * inner + j;
                let max = (0..len)
                    .map(|i| src[idx(i)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for i in 0..len {
                    let e = (src[idx(i)] - max).exp();
                    out[idx(i)] = e;
                    total += e;
                }
                for i in 0..len {
                    out[idx(i)] /= total;
                }
            }
        }
        let t = Tensor::new(shape, out)?;
        self.push(t, Op::Softmax { x, axis }, &[x], "softmax")
    }

    /// Row-wise softmax of a 2-D score matrix where columns with
    /// `key_mask[j] == false` receive exactly zero weight.
    pub fn masked_softmax(&mut self, x: Var, key_mask: &[bool]) -> Result<Var> {
        let (m, n) = dims2(self.value(x), "masked_softmax")?;
        if key_mask.len() != n {
            return Err(Error::Dimension {
                op: "masked_softmax",
                lhs: vec![m, n],
                rhs: vec![key_mask.len()],
            });
        }
        if !key_mask.iter().any(|&k| k) {
            return Err(Error::Contract("attention mask hides every key".into()));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let max = row
                .iter()
                .zip(key_mask)
                .filter(|(_, &k)| k)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[i * n..(i + 1) * n];
            let mut total = 0.0;
            for j in 0..n {
                if key_mask[j] {
                    dst[j] = (row[j] - max).exp();
                    total += dst[j];
                }
            }
            dst.iter_mut().for_each(|v| *v /= total);
        }
        let t = Tensor::new(vec![m, n], out)?;
        self.push(t, Op::MaskedSoftmax(x), &[x], "masked_softmax")
    }

    /// Normalizes each row (last axis) to zero mean and unit variance, then
    /// applies `gain * xhat + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let n = last_dim(self.value(x));
        for p in [gain, bias] {
            if self.shape(p) != [n] {
                return Err(Error::Dimension {
                    op: "layer_norm",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let (gd, bd) = (self.value(gain).data(), self.value(bias).data());
        let src = self.value(x).data();
        let rows = src.len() / n.max(1);
        let mut xhat = Vec::with_capacity(src.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(src.len());
        for row in src.chunks(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(gd[j] * h + bd[j]);
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
            "layer_norm",
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x], "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.numel() == 0 {
            return Err(Error::Empty("mean of empty tensor".into()));
        }
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x], "mean")
    }

    fn column_sums(&self, x: Var, op: &'static str) -> Result<(usize, Vec<f64>)> {
        let (m, n) = dims2(self.value(x), op)?;
        if m == 0 {
            return Err(Error::Empty(format!("{op} over zero rows")));
        }
        let mut acc = vec![0.0; n];
        for row in self.value(x).data().chunks(n) {
            acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
        }
        Ok((m, acc))
    }

    /// Column sums of a 2-D tensor, shape `[1 x n]`.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let (_, acc) = self.column_sums(x, "sum_rows")?;
        let t = Tensor::new(vec![1, acc.len()], acc)?;
        self.push(t, Op::SumRows(x), &[x], "sum_rows")
    }

    /// Column means of a 2-D tensor: the column sums divided by the row count.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, acc) = self.column_sums(x, "mean_rows")?;
        let data: Vec<f64> = acc.into_iter().map(|s| s / m as f64).collect();
        let t = Tensor::new(vec![1, data.len()], data)?;
        self.push(t, Op::MeanRows(x), &[x], "mean_rows")
    }

    fn arg_rows(&mut self, x: Var, take_max: bool) -> Result<Var> {
        let name = if take_max { "max_rows" } else { "min_rows" };
        let (m, n) = dims2(self.value(x), name)?;
        if m == 0 {
            return Err(Error::Empty(format!("{name} over zero rows")));
        }
        let d = self.value(x).data();
        let mut arg = vec![0usize; n];
        let mut best = d[..n].to_vec();
        for i in 1..m {
            for j in 0..n {
                let v = d[i * n + j];
                if (take_max && v > best[j]) || (!take_max && v < best[j]) {
                    best[j] = v;
                    arg[j] = i;
                }
            }
        }
        let t = Tensor::new(vec![1, n], best)?;
        self.push(t, Op::ArgRows { x, arg }, &[x], name)
    }

    /// Column maxima, shape `[1 x n]`; gradient goes to the first maximal row.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        self.arg_rows(x, true)
    }

    /// Column minima, shape `[1 x n]`.
    pub fn min_rows(&mut self, x: Var) -> Result<Var> {
        self.arg_rows(x, false)
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits` (`[B x K]`).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (b, k) = dims2(self.value(logits), "cross_entropy")?;
        if targets.len() != b {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: vec![b, k],
                rhs: vec![targets.len()],
            });
        }
        if b == 0 {
            return Err(Error::Empty("cross_entropy over empty batch".into()));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::Index(format!("target class {t} with {k} classes")));
        }
        let d = self.value(logits).data();
        let mut probs = vec![0.0; b * k];
        let mut loss = 0.0;
        for i in 0..b {
            let row = &d[i * k..(i + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + total.ln();
            for j in 0..k {
                probs[i * k + j] = (row[j] - log_z).exp();
            }
            loss += log_z - row[targets[i]];
        }
        loss /= b as f64;
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
            "cross_entropy",
        )
    }

    /// Mean squared error against a constant target of the same shape.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(Error::Dimension {
                op: "mse",
                lhs: self.shape(pred).to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let n = target.numel();
        if n == 0 {
            return Err(Error::Empty("mse over empty tensor".into()));
        }
        let loss = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n as f64;
        self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.data().to_vec(),
            },
            &[pred],
            "mse",
        )
    }

    /// Mean of `max(0, margin - (pos - neg))` over paired elements. The
    /// subgradient at the hinge point is zero.
    pub fn margin_ranking(&mut self, pos: Var, neg: Var, margin: f64) -> Result<Var> {
        if margin < 0.0 {
            return Err(Error::Config(format!("negative margin {margin}")));
        }
        self.same_shape(pos, neg, "margin_ranking")?;
        let n = self.value(pos).numel();
        if n == 0 {
            return Err(Error::Empty("margin_ranking over empty tensor".into()));
        }
        let mut active = Vec::with_capacity(n);
        let mut loss = 0.0;
        for (p, q) in self.value(pos).data().iter().zip(self.value(neg).data()) {
            let h = margin - (p - q);
            active.push(h > 0.0);
            loss += h.max(0.0);
        }
        loss /= n as f64;
        self.push(
            Tensor::scalar(loss),
            Op::MarginRanking { pos, neg, active },
            &[pos, neg],
            "margin_ranking",
        )
    }

    pub fn custom(&mut self, inputs: &[Var], op: Box<dyn CustomOp>) -> Result<Var> {
        let vals: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
        let t = op.forward(&vals)?;
        let name = op.name().to_string();
        self.push(
            t,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            inputs,
            &name,
        )
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let numel = self.value(loss).numel();
        if numel != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for n in &mut self.nodes {
            if !matches!(n.op, Op::Leaf) {
                n.grad = None;
            }
        }
        self.accumulate(loss, vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = node.grad.as_deref() else {
                continue;
            };
            let contributions = self.local_grads(i, g);
            for (v, grad) in contributions {
                if self.nodes[v.0].requires_grad {
                    self.accumulate(v, grad);
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, grad: Vec<f64>) {
        let slot = &mut self.nodes[v.0].grad;
        match slot {
            Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
            None => *slot = Some(grad),
        }
    }

    fn local_grads(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let shape = |v: Var| self.nodes[v.0].value.shape();
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (m, k) = (shape(*a)[0], shape(*a)[1]);
                let n = shape(*b)[1];
                let (ad, bd) = (val(*a), val(*b));
                let mut da = vec![0.0; m * k];
                let mut db = vec![0.0; k * n];
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let brow = &bd[p * n..(p + 1) * n];
                        da[r * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        let x = ad[r * k + p];
                        db[p * n..(p + 1) * n]
                            .iter_mut()
                            .zip(grow)
                            .for_each(|(d, gv)| *d += x * gv);
                    }
                }
                vec![(*a, da), (*b, db)]
            }
            Op::Transpose(a) => {
                let (m, n) = (shape(*a)[0], shape(*a)[1]);
                let mut da = vec![0.0; m * n];
                for r in 0..m {
                    for c in 0..n {
                        da[r * n + c] = g[c * m + r];
                    }
                }
                vec![(*a, da)]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|v| -v).collect())],
            Op::AddBias(x, b) => {
                let n = shape(*b)[0];
                let mut db = vec![0.0; n];
                for row in g.chunks(n) {
                    db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
                vec![(*x, g.to_vec()), (*b, db)]
            }
            Op::Mul(a, b) => {
                let da = g.iter().zip(val(*b)).map(|(x, y)| x * y).collect();
                let db = g.iter().zip(val(*a)).map(|(x, y)| x * y).collect();
                vec![(*a, da), (*b, db)]
            }
            Op::Scale(x, c) => vec![(*x, g.iter().map(|v| v * c).collect())],
            Op::Relu(x) => {
                let dx = g
                    .iter()
                    .zip(val(*x))
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                vec![(*x, dx)]
            }
            Op::Gelu(x) => {
                let dx = g
                    .iter()
                    .zip(val(*x))
                    .map(|(gv, &xv)| gv * gelu_parts(xv).1)
                    .collect();
                vec![(*x, dx)]
            }
            Op::Dropout { x, mask } => {
                vec![(*x, g.iter().zip(mask).map(|(a, b)| a * b).collect())]
            }
            Op::Embedding { table, ids } => {
                let d = shape(*table)[1];
                let mut dt = vec![0.0; self.nodes[table.0].value.numel()];
                for (r, &id) in ids.iter().enumerate() {
                    dt[id * d..(id + 1) * d]
                        .iter_mut()
                        .zip(&g[r * d..(r + 1) * d])
                        .for_each(|(a, b)| *a += b);
                }
                vec![(*table, dt)]
            }
            Op::Concat0(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|p| {
                        let len = self.nodes[p.0].value.numel();
                        let chunk = g[offset..offset + len].to_vec();
                        offset += len;
                        (*p, chunk)
                    })
                    .collect()
            }
            Op::ConcatCols(parts) => {
                let n = node.value.shape()[1];
                let m = node.value.shape()[0];
                let mut col = 0;
                parts
                    .iter()
                    .map(|p| {
                        let w = shape(*p)[1];
                        let mut dp = Vec::with_capacity(m * w);
                        for r in 0..m {
                            dp.extend_from_slice(&g[r * n + col..r * n + col + w]);
                        }
                        col += w;
                        (*p, dp)
                    })
                    .collect()
            }
            Op::SliceRows { x, start } => {
                let inner: usize = shape(*x)[1..].iter().product();
                let mut dx = vec![0.0; self.nodes[x.0].value.numel()];
                dx[start * inner..start * inner + g.len()].copy_from_slice(g);
                vec![(*x, dx)]
            }
            Op::SliceCols { x, start } => {
                let (m, n) = (shape(*x)[0], shape(*x)[1]);
                let w = node.value.shape()[1];
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    dx[r * n + start..r * n + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                vec![(*x, dx)]
            }
            Op::Reshape(x) => vec![(*x, g.to_vec())],
            Op::Softmax { x, axis } => {
                let s = node.value.shape();
                let len = s[*axis];
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let y = node.value.data();
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let idx = |i: usize| (o * len + i) * inner + j;
                        let dot: f64 = (0..len).map(|i| g[idx(i)] * y[idx(i)]).sum();
                        for i in 0..len {
                            dx[idx(i)] = y[idx(i)] * (g[idx(i)] - dot);
                        }
                    }
                }
                vec![(*x, dx)]
            }
            Op::MaskedSoftmax(x) => {
                let n = node.value.shape()[1];
                let y = node.value.data();
                let mut dx = vec![0.0; y.len()];
                for ((dr, yr), gr) in dx.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![(*x, dx)]
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = shape(*gain)[0];
                let gd = val(*gain);
                let mut dx = vec![0.0; xhat.len()];
                let mut dgain = vec![0.0; n];
                let mut dbias = vec![0.0; n];
                for (r, is) in inv_std.iter().enumerate() {
                    let gr = &g[r * n..(r + 1) * n];
                    let hr = &xhat[r * n..(r + 1) * n];
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for j in 0..n {
                        let dh = gr[j] * gd[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                        dgain[j] += gr[j] * hr[j];
                        dbias[j] += gr[j];
                    }
                    let nf = n as f64;
                    for j in 0..n {
                        let dh = gr[j] * gd[j];
                        dx[r * n + j] = is / nf * (nf * dh - sum_dh - hr[j] * sum_dh_h);
                    }
                }
                vec![(*x, dx), (*gain, dgain), (*bias, dbias)]
            }
            Op::Sum(x) => vec![(*x, vec![g[0]; self.nodes[x.0].value.numel()])],
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.numel();
                vec![(*x, vec![g[0] / n as f64; n])]
            }
            Op::SumRows(x) => {
                let m = shape(*x)[0];
                vec![(*x, g.repeat(m))]
            }
            Op::MeanRows(x) => {
                let m = shape(*x)[0];
                let row: Vec<f64> = g.iter().map(|v| v / m as f64).collect();
                vec![(*x, row.repeat(m))]
            }
            Op::ArgRows { x, arg } => {
                let n = shape(*x)[1];
                let mut dx = vec![0.0; self.nodes[x.0].value.numel()];
                for (j, &r) in arg.iter().enumerate() {
                    dx[r * n + j] = g[j];
                }
                vec![(*x, dx)]
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let b = targets.len();
                let k = probs.len() / b;
                let scale = g[0] / b as f64;
                let mut dl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    dl[r * k + t] -= scale;
                }
                vec![(*logits, dl)]
            }
            Op::Mse { pred, target } => {
                let n = target.len() as f64;
                let dp = val(*pred)
                    .iter()
                    .zip(target)
                    .map(|(p, t)| 2.0 * (p - t) / n * g[0])
                    .collect();
                vec![(*pred, dp)]
            }
            Op::MarginRanking { pos, neg, active } => {
                let n = active.len() as f64;
                let dpos: Vec<f64> = active
                    .iter()
                    .map(|&a| if a { -g[0] / n } else { 0.0 })
                    .collect();
                let dneg = dpos.iter().map(|v| -v).collect();
                vec![(*pos, dpos), (*neg, dneg)]
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                let grads = op.backward(&vals, &node.value, g);
                inputs.iter().copied().zip(grads).collect()
            }
        }
    }
}
