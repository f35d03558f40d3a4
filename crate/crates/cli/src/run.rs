use std::collections::HashSet;
use std::fs;
use std::path::Path;

use coherence_core::arch::{
    task_loss, ArchKind, ArchitectureSpec, CoherenceModel, HeadKind, Targets,
};
use coherence_core::checkpoint::Checkpoint;
use coherence_core::metrics::MetricReport;
use coherence_core::tensor::{gradcheck_params, Mode};
use coherence_core::text::{
    build_vocab, doc_input, extract_facts_naive, load_facts_sidecar, pair_input, read_jsonl,
    synth_corpus, synth_entailment, Document, EntailExample, Fact, PermutationPair, Vocabulary,
    SYNTH_VERBS,
};
use coherence_core::train::{
    data, evaluate, multi_seed_runs, Dataset, MultiSeedReport, Task, TaskData,
};
use coherence_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::CliConfig;
use crate::fault::BrokenSquare;
use crate::Failure;

fn config_error(msg: impl Into<String>) -> Failure {
    Failure::Core(Error::Config(msg.into()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n").map_err(|e| crate::io_error(path, e))?;
    Ok(())
}

fn task_data(
    task: Task,
    vocab: &Vocabulary,
    docs: &[Document],
    perms: Option<&[PermutationPair]>,
    facts: &[Fact],
) -> Result<TaskData, Failure> {
    Ok(match task {
        Task::Order => {
            let perms =
                perms.ok_or_else(|| config_error("task order needs a permutations file"))?;
            data::pairs(vocab, docs, perms, facts)?
        }
        t => data::labeled(t, vocab, docs, facts)?,
    })
}

fn perms_of(perms: &[PermutationPair], docs: &[Document]) -> Vec<PermutationPair> {
    let ids: HashSet<&str> = docs.iter().map(|d| d.id.as_str()).collect();
    perms
        .iter()
        .filter(|p| ids.contains(p.original_id.as_str()))
        .cloned()
        .collect::<Vec<_>>()
}

#[derive(Serialize)]
struct Aggregate<'a> {
    task: Task,
    arch: ArchKind,
    seeds: Vec<u64>,
    train_examples: usize,
    eval_examples: Option<usize>,
    #[serde(flatten)]
    report: &'a MultiSeedReport,
}

pub fn train(cfg: &CliConfig) -> Result<(), Failure> {
    cfg.validate()?;
    let task = cfg
        .task
        .ok_or_else(|| config_error("no task given (--task or \"task\" in the config)"))?;
    let arch = cfg.arch.unwrap_or(ArchKind::Vanilla);
    let d = &cfg.data;
    let corpus = d
        .corpus
        .as_ref()
        .ok_or_else(|| config_error("no corpus given (--corpus or data.corpus)"))?;
    if task == Task::Order && d.perms.is_none() {
        return Err(config_error(
            "task order needs a permutations file (--perms or data.perms)",
        ));
    }
    if arch == ArchKind::Mtl && d.entail.is_none() {
        return Err(config_error(
            "the mtl architecture needs entailment data (--entail or data.entail)",
        ));
    }
    if arch == ArchKind::FactAware && d.facts.is_none() {
        return Err(config_error(
            "the fact architecture needs a facts file (--facts or data.facts)",
        ));
    }

    let docs: Vec<Document> = crate::at_path(corpus, read_jsonl(corpus))?;
    let (train_docs, eval_docs) = match &d.eval_corpus {
        Some(p) => (docs, crate::at_path(p, read_jsonl::<Document>(p))?),
        None => {
            let n_eval = (docs.len() as f64 * d.holdout).floor() as usize;
            let mut docs = docs;
            let eval = docs.split_off(docs.len() - n_eval);
            (docs, eval)
        }
    };
    if train_docs.is_empty() {
        return Err(Failure::Core(Error::Empty("no training documents".into())));
    }
    let all_docs: Vec<Document> = train_docs.iter().chain(&eval_docs).cloned().collect();
    let facts = match &d.facts {
        Some(p) => crate::at_path(p, load_facts_sidecar(p, &all_docs))?,
        None => Vec::new(),
    };
    let perms: Option<Vec<PermutationPair>> = d
        .perms
        .as_ref()
        .map(|p| crate::at_path(p, read_jsonl(p)))
        .transpose()?;
    let eval_perms: Option<Vec<PermutationPair>> = match (&d.eval_perms, &perms, &d.eval_corpus) {
        (Some(p), _, _) => Some(crate::at_path(p, read_jsonl(p))?),
        (None, Some(all), None) => Some(perms_of(all, &eval_docs)),
        _ => None,
    };
    let entail: Vec<EntailExample> = match &d.entail {
        Some(p) => crate::at_path(p, read_jsonl(p))?,
        None => Vec::new(),
    };

    let mut vocab_docs = train_docs.clone();
    vocab_docs.extend(entail.iter().map(|e| {
        Document::from_sentences("entail", vec![e.premise.clone(), e.hypothesis.clone()])
    }));
    let vocab = build_vocab(&vocab_docs, cfg.model.min_freq)?;
    let train_perms = perms.as_ref().map(|p| perms_of(p, &train_docs));
    let train_data = task_data(task, &vocab, &train_docs, train_perms.as_deref(), &facts)?;
    let eval_data = if eval_docs.is_empty() {
        None
    } else if task == Task::Order && eval_perms.is_none() {
        return Err(config_error(
            "evaluating task order needs eval permutations (data.eval_perms)",
        ));
    } else {
        Some(task_data(
            task,
            &vocab,
            &eval_docs,
            eval_perms.as_deref(),
            &facts,
        )?)
    };
    let dataset = Dataset {
        train: train_data,
        eval: eval_data,
        entail: (arch == ArchKind::Mtl).then(|| data::entail(&vocab, &entail)),
    };
    let spec = cfg.model.spec(arch, task, vocab.len())?;
    eprintln!(
        "training {arch:?} on {task}: {} examples, {} held out, {} seeds, vocabulary {}",
        dataset.train.len(),
        dataset.eval.as_ref().map_or(0, TaskData::len),
        cfg.train.n_seeds,
        vocab.len()
    );

    let runs = multi_seed_runs(&spec, &cfg.train, &dataset, task)?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| crate::io_error(&cfg.out_dir, e))?;
    write_json(&cfg.out_dir.join("config.json"), cfg)?;
    for r in &runs {
        let seed = r.result.seed;
        write_json(&cfg.out_dir.join(format!("run-seed{seed}.json")), &r.result)?;
        Checkpoint::new(task, &spec, &vocab, &r.store)
            .save(cfg.out_dir.join(format!("checkpoint-seed{seed}.json")))?;
    }
    let report = MultiSeedReport::new(runs.into_iter().map(|r| r.result).collect());
    let agg = Aggregate {
        task,
        arch,
        seeds: report.runs.iter().map(|r| r.seed).collect(),
        train_examples: dataset.train.len(),
        eval_examples: dataset.eval.as_ref().map(TaskData::len),
        report: &report,
    };
    write_json(&cfg.out_dir.join("aggregate.json"), &agg)?;
    for (k, v) in &report.mean {
        println!("{k}\t{v:.6}\t± {:.6}", report.std[k]);
    }
    eprintln!("wrote reports and checkpoints to {}", cfg.out_dir.display());
    Ok(())
}

pub fn eval(
    checkpoint: &Path,
    corpus: &Path,
    task: Task,
    perms: Option<&Path>,
    facts: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let ck = crate::at_path(checkpoint, Checkpoint::load(checkpoint))?;
    if ck.task != task {
        return Err(Failure::Core(Error::Contract(format!(
            "checkpoint was trained for task {}, not {task}",
            ck.task
        ))));
    }
    let (model, store) = ck.restore()?;
    let docs: Vec<Document> = crate::at_path(corpus, read_jsonl(corpus))?;
    let facts = match facts {
        Some(p) => crate::at_path(p, load_facts_sidecar(p, &docs))?,
        None if ck.arch.kind == ArchKind::FactAware => {
            return Err(config_error("the fact architecture needs --facts"));
        }
        None => Vec::new(),
    };
    let perms: Option<Vec<PermutationPair>> = perms
        .map(|p| crate::at_path(p, read_jsonl(p)))
        .transpose()?;
    let data = task_data(task, &ck.vocab, &docs, perms.as_deref(), &facts)?;
    let n = data.len();
    let reports: Vec<MetricReport> = evaluate(&model, &store, &data, 16)?
        .into_iter()
        .map(|(metric, value)| MetricReport {
            task: task.name().to_string(),
            metric,
            value,
            n,
        })
        .collect();
    println!(
        "{}",
        serde_json::to_string_pretty(&reports).map_err(Error::from)?
    );
    if let Some(p) = out {
        write_json(p, &reports)?;
    }
    Ok(())
}

pub fn gradcheck(
    arch: ArchKind,
    tol: f64,
    eps: f64,
    seed: u64,
    inject_fault: bool,
) -> Result<(), Failure> {
    if tol.is_nan() || tol < 0.0 {
        return Err(Failure::Usage(format!("--tol {tol} must be non-negative")));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Failure::Usage(format!("--eps {eps} must be positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corpus = synth_corpus(2, 3, 10, &mut rng)?;
    let entail = synth_entailment(2, 10, &mut rng)?;
    let mut all = corpus.coherent.clone();
    all.extend(
        entail
            .iter()
            .map(|e| Document::from_sentences("e", vec![e.premise.clone(), e.hypothesis.clone()])),
    );
    let vocab = build_vocab(&all, 1)?;
    let lexicon: Vec<String> = SYNTH_VERBS.iter().map(|v| v.to_string()).collect();
    let mut docs = Vec::new();
    for d in &corpus.coherent {
        docs.push(doc_input(&vocab, d, &extract_facts_naive(d, &lexicon)?));
    }
    let pairs: Vec<_> = entail.iter().map(|e| pair_input(&vocab, e)).collect();
    let pair_labels: Vec<usize> = entail.iter().map(|e| e.label.index()).collect();
    let targets = Targets::Classes(vec![2, 0]);

    let spec = ArchitectureSpec::tiny(arch, HeadKind::Classify3, vocab.len());
    let (model, store) = CoherenceModel::with_init_std(&spec, &mut rng, 0.5)?;
    let report = gradcheck_params(
        |g, s| {
            let loss = if arch == ArchKind::Mtl {
                model
                    .mtl_forward(g, s, &docs, &targets, &pairs, &pair_labels, &mut Mode::Eval)?
                    .joint_loss
            } else {
                let y = model.forward(g, s, &docs, &mut Mode::Eval)?;
                task_loss(g, HeadKind::Classify3, y, &targets)?
            };
            if inject_fault {
                g.custom(&[loss], Box::new(BrokenSquare))
            } else {
                Ok(loss)
            }
        },
        &store,
        eps,
        tol,
    )?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(Error::from)?
    );
    if report.passed {
        eprintln!(
            "gradcheck {arch:?}: pass, max relative error {:.3e} over {} weights",
            report.max_rel_err, report.checked
        );
        Ok(())
    } else {
        Err(Failure::CheckFailed(format!(
            "gradcheck {arch:?}: max relative error {:.3e} at {:?} is not below tol {tol:e}",
            report.max_rel_err, report.worst
        )))
    }
}
