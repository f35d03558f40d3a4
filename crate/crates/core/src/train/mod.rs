//! Optimizers, per-task training loops and multi-seed aggregation.

pub mod data;
mod optim;

pub use optim::{adamw_step, clip_grad_norm, AdamConfig, AdamState, OptimizerKind};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{
    task_loss, ArchitectureSpec, CoherenceModel, DocInput, HeadKind, PairInput, Targets,
};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, f_beta_low, pairwise_ranking_accuracy, spearman, RankedPair};
use crate::tensor::{Graph, Mode, ParamId, ParamStore};
use crate::text::BinaryLabel;

/// Environment variable capping the worker threads of [`multi_seed`].
pub const THREADS_ENV: &str = "COHERENCE_LAB_THREADS";

mod defaults {
    pub fn epochs() -> usize {
        10
    }
    pub fn lr() -> f64 {
        1e-3
    }
    pub fn betas() -> (f64, f64) {
        (0.9, 0.999)
    }
    pub fn adam_eps() -> f64 {
        1e-8
    }
    pub fn weight_decay() -> f64 {
        0.01
    }
    pub fn dropout_p() -> f64 {
        0.1
    }
    pub fn margin() -> f64 {
        1.0
    }
    pub fn batch_size() -> usize {
        8
    }
    pub fn n_seeds() -> usize {
        10
    }
    pub fn grad_clip() -> Option<f64> {
        Some(1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::betas")]
    pub betas: (f64, f64),
    #[serde(default = "defaults::adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    /// Applied to every encoder of the architecture during training.
    #[serde(default = "defaults::dropout_p")]
    pub dropout_p: f64,
    #[serde(default = "defaults::margin")]
    pub margin: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::n_seeds")]
    pub n_seeds: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    /// Global gradient-norm cap; `null` disables clipping.
    #[serde(default = "defaults::grad_clip")]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub freeze_embeddings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!(
                "lr {} must be a finite non-negative number",
                self.lr
            ));
        }
        if !(0.0..1.0).contains(&self.weight_decay) {
            return bad(format!("weight_decay {} not in [0, 1)", self.weight_decay));
        }
        if self.margin.is_nan() || self.margin < 0.0 {
            return bad(format!("margin {} must be non-negative", self.margin));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} not in [0, 1)", self.dropout_p));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return bad(format!("betas {:?} not in [0, 1)", self.betas));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.n_seeds == 0 {
            return bad("epochs, batch_size and n_seeds must be positive".into());
        }
        if self.grad_clip.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return bad("grad_clip must be positive".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            kind: self.optimizer,
            lr: self.lr,
            beta1: self.betas.0,
            beta2: self.betas.1,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// The four evaluation tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "2way")]
    TwoWay,
    #[serde(rename = "3way")]
    ThreeWay,
    #[serde(rename = "order")]
    Order,
    #[serde(rename = "score")]
    Score,
}

impl Task {
    pub fn head_kind(self) -> HeadKind {
        match self {
            Self::TwoWay => HeadKind::Classify2,
            Self::ThreeWay => HeadKind::Classify3,
            Self::Order => HeadKind::RankScore,
            Self::Score => HeadKind::Regress,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::TwoWay => "2way",
            Self::ThreeWay => "3way",
            Self::Order => "order",
            Self::Score => "score",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2way" => Ok(Self::TwoWay),
            "3way" => Ok(Self::ThreeWay),
            "order" => Ok(Self::Order),
            "score" => Ok(Self::Score),
            other => Err(Error::Config(format!("unknown task {other}"))),
        }
    }
}

/// Examples for one task.
#[derive(Clone, Debug, PartialEq)]
pub enum TaskData {
    Classes {
        docs: Vec<DocInput>,
        labels: Vec<usize>,
    },
    Scores {
        docs: Vec<DocInput>,
        scores: Vec<f64>,
    },
    /// `original[i]` should outrank `permuted[i]`.
    Pairs {
        original: Vec<DocInput>,
        permuted: Vec<DocInput>,
    },
}

impl TaskData {
    pub fn len(&self) -> usize {
        match self {
            Self::Classes { docs, .. } | Self::Scores { docs, .. } => docs.len(),
            Self::Pairs { original, .. } => original.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, task: Task) -> Result<()> {
        let ok = match (self, task) {
            (Self::Classes { docs, labels }, Task::TwoWay | Task::ThreeWay) => {
                let k = task.head_kind().outputs();
                if let Some(l) = labels.iter().find(|&&l| l >= k) {
                    return Err(Error::Contract(format!("label {l} for a {k}-class task")));
                }
                docs.len() == labels.len()
            }
            (Self::Scores { docs, scores }, Task::Score) => docs.len() == scores.len(),
            (Self::Pairs { original, permuted }, Task::Order) => original.len() == permuted.len(),
            _ => {
                return Err(Error::Contract(format!(
                    "dataset does not match task {task}"
                )));
            }
        };
        if !ok {
            return Err(Error::Contract(
                "examples and targets differ in length".into(),
            ));
        }
        if self.is_empty() {
            return Err(Error::Empty(format!("{task} dataset")));
        }
        Ok(())
    }
}

/// Entailment pairs with class indices (0 = entailment).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EntailData {
    pub pairs: Vec<PairInput>,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: TaskData,
    /// Held-out split for final metrics.
    pub eval: Option<TaskData>,
    /// Auxiliary entailment data, required by the multi-task model.
    pub entail: Option<EntailData>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    /// Eval-mode training loss at the end of every epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean train-mode (dropout on) batch loss of every epoch.
    pub batch_losses: Vec<f64>,
    pub metrics: BTreeMap<String, f64>,
}

/// A finished run with its trained weights.
pub struct TrainedRun {
    pub result: RunResult,
    pub model: CoherenceModel,
    pub store: ParamStore,
}

/// Named substreams of one run's generator.
#[derive(Clone, Copy)]
enum Stream {
    Init = 0,
    Shuffle = 1,
    Dropout = 2,
    EntailShuffle = 3,
}

fn stream(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(s as u64);
    r
}

/// The architecture with training dropout applied to every encoder.
pub fn training_spec(spec: &ArchitectureSpec, cfg: &TrainConfig) -> ArchitectureSpec {
    let mut s = spec.clone();
    s.encoder.dropout_p = cfg.dropout_p;
    if let Some(d) = &mut s.doc_encoder {
        d.dropout_p = cfg.dropout_p;
    }
    s
}

fn gather<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

#[allow(clippy::too_many_arguments)]
fn batch_loss(
    model: &CoherenceModel,
    store: &ParamStore,
    g: &mut Graph,
    data: &TaskData,
    idx: &[usize],
    entail: Option<(&EntailData, &[usize])>,
    margin: f64,
    mode: &mut Mode,
) -> Result<crate::tensor::Var> {
    let kind = model.spec().head.kind;
    let (docs, targets) = match data {
        TaskData::Pairs { original, permuted } => {
            let out = model.siamese_rank(
                g,
                store,
                &gather(original, idx),
                &gather(permuted, idx),
                margin,
                mode,
            )?;
            return match entail {
                Some((e, eidx)) => {
                    let y = model.entail_forward(g, store, &gather(&e.pairs, eidx), mode)?;
                    let l = g.cross_entropy(y, &gather(&e.labels, eidx))?;
                    g.add(out.loss, l)
                }
                None => Ok(out.loss),
            };
        }
        TaskData::Classes { docs, labels } => {
            (gather(docs, idx), Targets::Classes(gather(labels, idx)))
        }
        TaskData::Scores { docs, scores } => {
            (gather(docs, idx), Targets::Scores(gather(scores, idx)))
        }
    };
    match entail {
        Some((e, eidx)) => {
            let out = model.mtl_forward(
                g,
                store,
                &docs,
                &targets,
                &gather(&e.pairs, eidx),
                &gather(&e.labels, eidx),
                mode,
            )?;
            Ok(out.joint_loss)
        }
        None => {
            let y = model.forward(g, store, &docs, mode)?;
            task_loss(g, kind, y, &targets)
        }
    }
}

fn chunks(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    (0..n.div_ceil(size))
        .map(|b| b * size..((b + 1) * size).min(n))
        .collect()
}

/// Eval-mode mean loss over a whole dataset (plus the entailment set for
/// the multi-task model).
pub fn dataset_loss(
    model: &CoherenceModel,
    store: &ParamStore,
    data: &TaskData,
    entail: Option<&EntailData>,
    batch_size: usize,
    margin: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for r in chunks(data.len(), batch_size) {
        let idx: Vec<usize> = r.clone().collect();
        let mut g = Graph::new();
        let l = batch_loss(
            model,
            store,
            &mut g,
            data,
            &idx,
            None,
            margin,
            &mut Mode::Eval,
        )?;
        total += g.value(l).item()? * idx.len() as f64;
    }
    let mut loss = total / data.len() as f64;
    if let Some(e) = entail {
        let mut et = 0.0;
        for r in chunks(e.pairs.len(), batch_size) {
            let mut g = Graph::new();
            let y = model.entail_forward(&mut g, store, &e.pairs[r.clone()], &mut Mode::Eval)?;
            let l = g.cross_entropy(y, &e.labels[r.clone()])?;
            et += g.value(l).item()? * r.len() as f64;
        }
        loss += et / e.pairs.len() as f64;
    }
    Ok(loss)
}

/// Eval-mode head outputs, one row per document.
pub fn predict(
    model: &CoherenceModel,
    store: &ParamStore,
    docs: &[DocInput],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let k = model.spec().head.kind.outputs();
    let mut out = Vec::with_capacity(docs.len());
    for r in chunks(docs.len(), batch_size.max(1)) {
        let mut g = Graph::new();
        let y = model.forward(&mut g, store, &docs[r], &mut Mode::Eval)?;
        out.extend(g.value(y).data().chunks(k).map(<[f64]>::to_vec));
    }
    Ok(out)
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
        .0
}

/// Task metrics of a model on `data`, keyed by metric name.
pub fn evaluate(
    model: &CoherenceModel,
    store: &ParamStore,
    data: &TaskData,
    batch_size: usize,
) -> Result<BTreeMap<String, f64>> {
    let mut m = BTreeMap::new();
    match data {
        TaskData::Classes { docs, labels } => {
            let pred: Vec<usize> = predict(model, store, docs, batch_size)?
                .iter()
                .map(|r| argmax(r))
                .collect();
            m.insert("accuracy".into(), accuracy(&pred, labels)?);
            if model.spec().head.kind == HeadKind::Classify2 {
                let to_bin = |v: &[usize]| -> Vec<BinaryLabel> {
                    v.iter()
                        .map(|&i| BinaryLabel::from_index(i).expect("two classes"))
                        .collect()
                };
                let f = f_beta_low(&to_bin(&pred), &to_bin(labels), 0.5)?;
                m.insert("f0.5_low".into(), f.value);
                m.insert(
                    "f0.5_low_degenerate".into(),
                    f64::from(u8::from(f.degenerate)),
                );
            }
        }
        TaskData::Scores { docs, scores } => {
            let pred: Vec<f64> = predict(model, store, docs, batch_size)?
                .into_iter()
                .map(|r| r[0])
                .collect();
            if scores.iter().any(|&s| s != scores[0]) && scores.len() >= 2 {
                m.insert("spearman".into(), spearman(&pred, scores)?);
            }
            let mse = pred
                .iter()
                .zip(scores)
                .map(|(p, s)| (p - s) * (p - s))
                .sum::<f64>()
                / scores.len() as f64;
            m.insert("mse".into(), mse);
        }
        TaskData::Pairs { original, permuted } => {
            let a = predict(model, store, original, batch_size)?;
            let b = predict(model, store, permuted, batch_size)?;
            let pairs: Vec<RankedPair> = a
                .iter()
                .zip(&b)
                .map(|(x, y)| RankedPair {
                    score_original: x[0],
                    score_permuted: y[0],
                })
                .collect();
            m.insert("pra".into(), pairwise_ranking_accuracy(&pairs)?);
        }
    }
    Ok(m)
}

/// Trains one model from `cfg.seed`. Every epoch visits the training set in
/// a freshly shuffled order; the multi-task model pairs each coherence
/// batch with one entailment batch and sums the two losses.
pub fn train_task(
    spec: &ArchitectureSpec,
    cfg: &TrainConfig,
    data: &Dataset,
    task: Task,
) -> Result<TrainedRun> {
    train_task_observed(spec, cfg, data, task, |_, _| {})
}

/// [`train_task`] with a callback after every epoch, given the epoch index
/// and the eval-mode training loss.
pub fn train_task_observed(
    spec: &ArchitectureSpec,
    cfg: &TrainConfig,
    data: &Dataset,
    task: Task,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainedRun> {
    cfg.validate()?;
    if spec.head.kind != task.head_kind() {
        return Err(Error::Config(format!(
            "task {task} needs a {:?} head, spec has {:?}",
            task.head_kind(),
            spec.head.kind
        )));
    }
    data.train.check(task)?;
    if let Some(e) = &data.eval {
        e.check(task)?;
    }
    let entail = match (&data.entail, spec.aux_head.is_some()) {
        (Some(e), true) => {
            if e.pairs.is_empty() || e.pairs.len() != e.labels.len() {
                return Err(Error::Contract(
                    "entailment data empty or mislabeled".into(),
                ));
            }
            Some(e)
        }
        (None, true) => {
            return Err(Error::Contract(
                "multi-task training needs entailment data".into(),
            ));
        }
        (_, false) => None,
    };

    let spec = training_spec(spec, cfg);
    let (model, mut store) = CoherenceModel::new(&spec, &mut stream(cfg.seed, Stream::Init))?;
    let mut shuffle_rng = stream(cfg.seed, Stream::Shuffle);
    let mut dropout_rng = stream(cfg.seed, Stream::Dropout);
    let mut entail_rng = stream(cfg.seed, Stream::EntailShuffle);
    let adam = cfg.adam();
    let mut state = AdamState::new(&store);
    let frozen: Vec<ParamId> = if cfg.freeze_embeddings {
        vec![model.encoder().token_embedding()]
    } else {
        Vec::new()
    };

    let n = data.train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut entail_order: Vec<usize> = entail.map_or(Vec::new(), |e| (0..e.pairs.len()).collect());
    let mut entail_batches = Vec::new();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut batch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        let batches = chunks(n, cfg.batch_size);
        for r in &batches {
            let eidx = match entail {
                Some(e) => {
                    if entail_batches.is_empty() {
                        entail_order.shuffle(&mut entail_rng);
                        entail_batches = chunks(e.pairs.len(), cfg.batch_size);
                        entail_batches.reverse();
                    }
                    let er = entail_batches.pop().expect("refilled above");
                    Some((e, entail_order[er].to_vec()))
                }
                None => None,
            };
            let mut g = Graph::new();
            let mut mode = Mode::Train(&mut dropout_rng);
            let loss = batch_loss(
                &model,
                &store,
                &mut g,
                &data.train,
                &order[r.clone()],
                eidx.as_ref().map(|(e, i)| (*e, i.as_slice())),
                cfg.margin,
                &mut mode,
            )?;
            sum += g.value(loss).item()?;
            g.backward(loss)?;
            let mut grads = g.param_grads(&store);
            if let Some(c) = cfg.grad_clip {
                clip_grad_norm(&mut grads, c);
            }
            adamw_step(&mut store, &grads, &mut state, &adam, &frozen)?;
        }
        batch_losses.push(sum / batches.len() as f64);
        let l = dataset_loss(
            &model,
            &store,
            &data.train,
            entail,
            cfg.batch_size,
            cfg.margin,
        )?;
        if !l.is_finite() {
            return Err(Error::Numeric(format!(
                "training loss became {l} at epoch {epoch}"
            )));
        }
        on_epoch(epoch, l);
        epoch_losses.push(l);
    }

    let mut metrics = BTreeMap::new();
    for (k, v) in evaluate(&model, &store, &data.train, cfg.batch_size)? {
        metrics.insert(format!("train.{k}"), v);
    }
    if let Some(e) = &data.eval {
        for (k, v) in evaluate(&model, &store, e, cfg.batch_size)? {
            metrics.insert(format!("eval.{k}"), v);
        }
    }
    Ok(TrainedRun {
        result: RunResult {
            seed: cfg.seed,
            epoch_losses,
            batch_losses,
            metrics,
        },
        model,
        store,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedReport {
    pub runs: Vec<RunResult>,
    pub mean: BTreeMap<String, f64>,
    /// Population standard deviation.
    pub std: BTreeMap<String, f64>,
}

/// Mean and population standard deviation of every metric present in all
/// runs.
pub fn aggregate(runs: &[RunResult]) -> (BTreeMap<String, f64>, BTreeMap<String, f64>) {
    let mut mean = BTreeMap::new();
    let mut std = BTreeMap::new();
    let Some(first) = runs.first() else {
        return (mean, std);
    };
    for key in first.metrics.keys() {
        let vals: Option<Vec<f64>> = runs.iter().map(|r| r.metrics.get(key).copied()).collect();
        let Some(vals) = vals else { continue };
        let n = vals.len() as f64;
        let mu = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        mean.insert(key.clone(), mu);
        std.insert(key.clone(), var.sqrt());
    }
    (mean, std)
}

/// Worker threads for `jobs` runs: available parallelism, capped by
/// [`THREADS_ENV`] when set.
pub fn worker_threads(jobs: usize) -> usize {
    let avail = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or(avail);
    cap.min(avail).min(jobs).max(1)
}

/// Runs seeds `cfg.seed .. cfg.seed + cfg.n_seeds` with independent state,
/// spread over worker threads, and aggregates their metrics.
pub fn multi_seed(
    spec: &ArchitectureSpec,
    cfg: &TrainConfig,
    data: &Dataset,
    task: Task,
) -> Result<MultiSeedReport> {
    let runs = multi_seed_runs(spec, cfg, data, task)?;
    Ok(MultiSeedReport::new(
        runs.into_iter().map(|r| r.result).collect(),
    ))
}

impl MultiSeedReport {
    pub fn new(runs: Vec<RunResult>) -> Self {
        let (mean, std) = aggregate(&runs);
        Self { runs, mean, std }
    }
}

/// [`multi_seed`] keeping every run's trained weights, in seed order.
pub fn multi_seed_runs(
    spec: &ArchitectureSpec,
    cfg: &TrainConfig,
    data: &Dataset,
    task: Task,
) -> Result<Vec<TrainedRun>> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.n_seeds as u64).map(|i| cfg.seed + i).collect();
    let threads = worker_threads(seeds.len());
    let mut results: Vec<Option<Result<TrainedRun>>> = (0..seeds.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                let seeds = &seeds;
                scope.spawn(move || {
                    (w..seeds.len())
                        .step_by(threads)
                        .map(|i| {
                            let run_cfg = TrainConfig {
                                seed: seeds[i],
                                ..cfg.clone()
                            };
                            (i, train_task(spec, &run_cfg, data, task))
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("training thread panicked") {
                results[i] = Some(r);
            }
        }
    });
    let runs = results
        .into_iter()
        .map(|r| r.expect("every seed ran"))
        .collect::<Result<Vec<_>>>()?;
    let mut seen = std::collections::HashSet::new();
    assert!(
        runs.iter().all(|r| seen.insert(r.result.seed)),
        "seeds must be disjoint"
    );
    Ok(runs)
}
