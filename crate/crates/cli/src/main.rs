//! `coherence-lab`: synthetic data, permutations, facts, training,
//! evaluation and gradient checks from one binary.

mod config;
mod fault;
mod prep;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use coherence_core::arch::ArchKind;
use coherence_core::train::Task;
use coherence_core::Error;

#[derive(Parser)]
#[command(
    name = "coherence-lab",
    version,
    about = "Transformer text-coherence models"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    #[value(name = "2way")]
    TwoWay,
    #[value(name = "3way")]
    ThreeWay,
    Order,
    Score,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::TwoWay => Task::TwoWay,
            TaskArg::ThreeWay => Task::ThreeWay,
            TaskArg::Order => Task::Order,
            TaskArg::Score => Task::Score,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ArchArg {
    Vanilla,
    #[value(alias = "hierarchical")]
    Hier,
    Mtl,
    #[value(alias = "fact_aware", alias = "fact-aware")]
    Fact,
}

impl From<ArchArg> for ArchKind {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Vanilla => ArchKind::Vanilla,
            ArchArg::Hier => ArchKind::Hierarchical,
            ArchArg::Mtl => ArchKind::Mtl,
            ArchArg::Fact => ArchKind::FactAware,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Write an entity-chain corpus (and optionally facts and entailment pairs).
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        docs: usize,
        #[arg(long, default_value_t = 5)]
        sents: usize,
        /// Entity pool size; defaults to max(20, sents + 1).
        #[arg(long)]
        entities: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the labeled (kept / partly shuffled / shuffled) variants
        /// instead of the original chains.
        #[arg(long)]
        labeled: bool,
        /// Also write lexicon facts for the written documents.
        #[arg(long)]
        facts_out: Option<PathBuf>,
        /// Also write this many entailment examples to --entail-out.
        #[arg(long, requires = "entail_out")]
        entail: Option<usize>,
        #[arg(long, requires = "entail")]
        entail_out: Option<PathBuf>,
    },
    /// Sample sentence permutations of every multi-sentence document.
    Permute {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract (subject, verb, object) facts with a verb lexicon.
    Facts {
        #[arg(long)]
        corpus: PathBuf,
        /// One verb per line; defaults to the synthetic corpus verbs.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per seed and write run reports and checkpoints.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        task: Option<TaskArg>,
        #[arg(long)]
        arch: Option<ArchArg>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        perms: Option<PathBuf>,
        #[arg(long)]
        facts: Option<PathBuf>,
        #[arg(long)]
        entail: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a corpus with a checkpoint and print metrics JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        task: TaskArg,
        #[arg(long)]
        perms: Option<PathBuf>,
        #[arg(long)]
        facts: Option<PathBuf>,
        /// Also write the metrics to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare backprop gradients with central differences on a tiny model.
    /// The check passes only if every relative error is strictly below
    /// --tol, so --tol 0 always fails.
    Gradcheck {
        #[arg(long, default_value = "vanilla")]
        arch: ArchArg,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

/// Failure of one command, carrying its exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(Error),
    CheckFailed(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Core(e) => match e {
                Error::Config(_) => 1,
                Error::Numeric(_) | Error::NonFinite(_) | Error::InvalidCheck(_) => 3,
                _ => 2,
            },
            Self::CheckFailed(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) | Self::CheckFailed(m) => f.write_str(m),
            Self::Core(e) => write!(f, "{e}"),
        }
    }
}

/// Adds the file name to an I/O error.
pub fn io_error(path: &std::path::Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

/// Names `path` in an I/O error from `r`.
pub fn at_path<T>(
    path: &std::path::Path,
    r: coherence_core::Result<T>,
) -> coherence_core::Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => io_error(path, io),
        other => other,
    })
}

fn dispatch(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::GenSynth {
            out,
            docs,
            sents,
            entities,
            seed,
            labeled,
            facts_out,
            entail,
            entail_out,
        } => prep::gen_synth(&prep::SynthArgs {
            out,
            docs,
            sents,
            entities: entities.unwrap_or(20.max(sents + 1)),
            seed,
            labeled,
            facts_out,
            entail: entail.zip(entail_out),
        }),
        Cmd::Permute {
            corpus,
            k,
            seed,
            out,
        } => prep::permute(&corpus, k, seed, &out),
        Cmd::Facts {
            corpus,
            lexicon,
            out,
        } => prep::facts(&corpus, lexicon.as_deref(), &out),
        Cmd::Train {
            config,
            task,
            arch,
            seeds,
            seed,
            epochs,
            corpus,
            perms,
            facts,
            entail,
            out,
        } => {
            let mut cfg = match &config {
                Some(p) => config::CliConfig::load(p)?,
                None => config::CliConfig::default(),
            };
            if let Some(t) = task {
                cfg.task = Some(t.into());
            }
            if let Some(a) = arch {
                cfg.arch = Some(a.into());
            }
            if let Some(n) = seeds {
                cfg.train.n_seeds = n;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let d = &mut cfg.data;
            for (slot, flag) in [
                (&mut d.corpus, corpus),
                (&mut d.perms, perms),
                (&mut d.facts, facts),
                (&mut d.entail, entail),
            ] {
                if flag.is_some() {
                    *slot = flag;
                }
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            run::train(&cfg)
        }
        Cmd::Eval {
            checkpoint,
            corpus,
            task,
            perms,
            facts,
            out,
        } => run::eval(
            &checkpoint,
            &corpus,
            task.into(),
            perms.as_deref(),
            facts.as_deref(),
            out.as_deref(),
        ),
        Cmd::Gradcheck {
            arch,
            tol,
            eps,
            seed,
            inject_fault,
        } => run::gradcheck(arch.into(), tol, eps, seed, inject_fault),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
