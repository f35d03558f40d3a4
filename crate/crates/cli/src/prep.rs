use std::fs;
use std::path::{Path, PathBuf};

use coherence_core::text::{
    extract_facts_naive, generate_permutations, read_jsonl, synth_corpus, synth_entailment,
    write_jsonl, Document, Fact, SYNTH_VERBS,
};
use coherence_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::Failure;

pub struct SynthArgs {
    pub out: PathBuf,
    pub docs: usize,
    pub sents: usize,
    pub entities: usize,
    pub seed: u64,
    pub labeled: bool,
    pub facts_out: Option<PathBuf>,
    pub entail: Option<(usize, PathBuf)>,
}

fn synth_lexicon() -> Vec<String> {
    SYNTH_VERBS.iter().map(|v| v.to_string()).collect()
}

fn extract_all(docs: &[Document], lexicon: &[String]) -> Result<Vec<Fact>, Failure> {
    let mut facts = Vec::new();
    for d in docs {
        facts.extend(extract_facts_naive(d, lexicon)?);
    }
    Ok(facts)
}

pub fn gen_synth(a: &SynthArgs) -> Result<(), Failure> {
    if a.sents < 2 {
        return Err(Failure::Usage(format!(
            "--sents {} is too small: ordering needs documents of at least 2 sentences",
            a.sents
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let corpus = synth_corpus(a.docs, a.sents, a.entities, &mut rng)?;
    let docs = if a.labeled {
        corpus.labeled
    } else {
        corpus.coherent
    };
    crate::at_path(&a.out, write_jsonl(&a.out, &docs))?;
    eprintln!("wrote {} documents to {}", docs.len(), a.out.display());
    if let Some(path) = &a.facts_out {
        let facts = extract_all(&docs, &synth_lexicon())?;
        crate::at_path(path, write_jsonl(path, &facts))?;
        eprintln!("wrote {} facts to {}", facts.len(), path.display());
    }
    if let Some((n, path)) = &a.entail {
        let ex = synth_entailment(*n, a.entities, &mut rng)?;
        crate::at_path(path, write_jsonl(path, &ex))?;
        eprintln!(
            "wrote {} entailment examples to {}",
            ex.len(),
            path.display()
        );
    }
    Ok(())
}

pub fn permute(corpus: &Path, k: usize, seed: u64, out: &Path) -> Result<(), Failure> {
    if k == 0 {
        return Err(Failure::Usage("--k must be at least 1".into()));
    }
    let docs: Vec<Document> = crate::at_path(corpus, read_jsonl(corpus))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perms = Vec::new();
    let mut skipped = 0;
    for d in &docs {
        match generate_permutations(d, k, &mut rng) {
            Ok(p) => perms.extend(p),
            Err(Error::ExcludedDocument(_)) => skipped += 1,
            Err(e) => return Err(e.into()),
        }
    }
    crate::at_path(out, write_jsonl(out, &perms))?;
    if skipped > 0 {
        eprintln!("warning: skipped {skipped} single-sentence documents");
    }
    eprintln!(
        "wrote {} permutations of {} documents to {}",
        perms.len(),
        docs.len() - skipped,
        out.display()
    );
    Ok(())
}

pub fn facts(corpus: &Path, lexicon: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let docs: Vec<Document> = crate::at_path(corpus, read_jsonl(corpus))?;
    let lexicon = match lexicon {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| crate::io_error(p, e))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect(),
        None => synth_lexicon(),
    };
    let facts = extract_all(&docs, &lexicon)?;
    crate::at_path(out, write_jsonl(out, &facts))?;
    eprintln!("wrote {} facts to {}", facts.len(), out.display());
    Ok(())
}
