//! The subcommands, callable without a process boundary.

use std::fmt;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use adnet::evaluation::{
    evaluate, export_embeddings, transfer_all, ClassifierConfig, ContentEmbeddings, EvalReport, Evaluation, ExportRow, LanguageModel,
    TransferClassifier, DEFAULT_K,
};
use adnet::model::checkpoint::{load_vocab, MANIFEST, VOCAB};
use adnet::model::{AdnetModel, EmbeddingTable, LatentPair};
use adnet::synth::{generate_corpora, oracle_scores, read_truth, OracleReport, RegisterSpec};
use adnet::text::{CorpusPair, Form, Split, Vocabulary};
use adnet::training::{epoch_seed, train, train_from, MetricsRow, RunDir, TrainState};
use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::config::{RunConfig, RESOLVED};

/// A mistake in how the command was invoked, as opposed to a failure while
/// running it.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| usage(format!("missing required {flag}")))
}

fn parse_form(tag: &str) -> Result<Form> {
    match tag {
        "a" | "A" => Ok(Form::A),
        "b" | "B" => Ok(Form::B),
        other => Err(usage(format!("target must be `a` or `b`, got `{other}`"))),
    }
}

/// Checkpoint directory of a run: `dir` itself when it holds a manifest,
/// otherwise its latest `ckpt-<step>/`.
pub fn checkpoint_of(dir: &Path) -> Result<PathBuf> {
    if dir.join(MANIFEST).exists() {
        return Ok(dir.to_path_buf());
    }
    if !dir.is_dir() {
        bail!("run directory {} does not exist", dir.display());
    }
    let run = RunDir { root: dir.to_path_buf() };
    run.latest_checkpoint()?.with_context(|| format!("no checkpoint in {}", dir.display()))
}

/// Looks for `name` in `dir`, then in its parent (a checkpoint's run).
fn find_up(dir: &Path, name: &str) -> Option<PathBuf> {
    [Some(dir), dir.parent()].into_iter().flatten().map(|d| d.join(name)).find(|p| p.exists())
}

fn load_model(run: &Path) -> Result<(AdnetModel<f32>, Vocabulary)> {
    let ckpt = checkpoint_of(run)?;
    let model = AdnetModel::<f32>::load(&ckpt).with_context(|| format!("loading model from {}", ckpt.display()))?;
    let vocab_dir = find_up(&ckpt, VOCAB).or_else(|| find_up(run, VOCAB)).with_context(|| format!("no {VOCAB} next to {}", ckpt.display()))?;
    let vocab = load_vocab(vocab_dir.parent().expect("file has a parent"))?;
    if vocab.len() != model.config.vocab_size {
        bail!("{} has {} tokens but the model expects {}", vocab_dir.display(), vocab.len(), model.config.vocab_size);
    }
    Ok((model, vocab))
}

/// Corpus prefix from the config, or from the run's own `resolved.json`.
fn corpus_prefix(cfg: &RunConfig) -> Result<PathBuf> {
    if let Some(p) = &cfg.corpus {
        return Ok(p.clone());
    }
    if let Some(run) = &cfg.run {
        if let Some(path) = find_up(run, RESOLVED) {
            if let Some(p) = RunConfig::from_file(&path)?.corpus {
                return Ok(p);
            }
        }
    }
    Err(usage("missing required --corpus"))
}

fn load_corpus(cfg: &RunConfig) -> Result<CorpusPair> {
    let prefix = corpus_prefix(cfg)?;
    CorpusPair::load(&prefix, cfg.corpus_options).with_context(|| format!("loading corpus {}", prefix.display()))
}

fn check_vocab(corpus: &CorpusPair, vocab: &Vocabulary) -> Result<()> {
    if corpus.vocab.tokens() != vocab.tokens() {
        bail!("corpus vocabulary differs from the one the model was trained with; use the training corpus and corpus_options");
    }
    Ok(())
}

/// Writes the synthetic corpora and returns their path prefix.
pub fn synth(cfg: &RunConfig) -> Result<PathBuf> {
    let out = required(&cfg.out, "--out")?;
    let spec = RegisterSpec::standard(cfg.synth.overlap)?;
    let corpus = generate_corpora(&spec, cfg.synth.n_per_register, cfg.seed)?;
    let prefix = corpus.write(out, &cfg.synth.name)?;
    cfg.write_resolved(out)?;
    Ok(prefix)
}

/// Trains into `--out`, optionally resuming from its latest checkpoint.
pub fn train_run(cfg: &RunConfig, resume: bool) -> Result<Vec<MetricsRow>> {
    let out = required(&cfg.out, "--out")?;
    let corpus = load_corpus(cfg)?;
    let mut resolved = cfg.clone();
    resolved.corpus = Some(corpus_prefix(cfg)?);
    let run = RunDir::new(out)?;
    let latest = if resume { run.latest_checkpoint()? } else { None };
    let outcome = match latest {
        Some(ckpt) => {
            let mut state = TrainState::<f32>::load(&ckpt).with_context(|| format!("resuming from {}", ckpt.display()))?;
            state.config.epochs = cfg.train.epochs;
            resolved.train = state.config.clone();
            resolved.write_resolved(out)?;
            train_from(&corpus, state, Some(&run))?
        }
        None => {
            resolved.write_resolved(out)?;
            train(&corpus, cfg.model.clone(), cfg.train.clone(), Some(&run))?
        }
    };
    Ok(outcome.metrics)
}

/// Oracle scores per transfer direction when the corpus has a ground-truth
/// file next to it.
#[derive(Clone, Debug, Serialize)]
pub struct OracleSummary {
    pub a_to_b: OracleReport,
    pub b_to_a: OracleReport,
}

fn oracle_for(cfg: &RunConfig, prefix: &Path, corpus: &CorpusPair, eval: &Evaluation) -> Result<Option<OracleSummary>> {
    let truth_path = PathBuf::from(format!("{}.truth.tsv", prefix.display()));
    if !truth_path.exists() {
        return Ok(None);
    }
    let truth = read_truth(&truth_path)?;
    let spec = RegisterSpec::standard(cfg.synth.overlap)?;
    let template = |form: Form, line: usize| truth.iter().find(|t| t.form == form && t.line == line).map(|t| t.template);
    let mut out = Vec::new();
    for form in [Form::A, Form::B] {
        let mut texts = Vec::new();
        let mut templates = Vec::new();
        for r in eval.transfers.iter().filter(|r| r.source_form == form) {
            let t = template(form, r.source_line).with_context(|| format!("{} has no row for {} line {}", truth_path.display(), form.tag(), r.source_line))?;
            texts.push(corpus.vocab.decode(&r.output)?);
            templates.push(t);
        }
        out.push(oracle_scores(&spec, &texts, &templates, form.opposite())?);
    }
    let b_to_a = out.pop().expect("two directions");
    let a_to_b = out.pop().expect("two directions");
    Ok(Some(OracleSummary { a_to_b, b_to_a }))
}

#[derive(Debug)]
pub struct EvalOutput {
    pub report: EvalReport,
    pub oracle: Option<OracleSummary>,
    pub dir: PathBuf,
}

/// Evaluates the run's latest checkpoint, training the classifier and the
/// language model into the output directory unless they are already there.
pub fn eval_run(cfg: &RunConfig) -> Result<EvalOutput> {
    let run = required(&cfg.run, "--run")?;
    let out = cfg.out.clone().unwrap_or_else(|| run.join("eval"));
    let (model, vocab) = load_model(run)?;
    let prefix = corpus_prefix(cfg)?;
    let corpus = load_corpus(cfg)?;
    check_vocab(&corpus, &vocab)?;
    cfg.write_resolved(&out)?;

    let clf_dir = out.join("classifier");
    let classifier = if clf_dir.join(MANIFEST).exists() {
        TransferClassifier::load(&clf_dir)?
    } else {
        let clf = TransferClassifier::train(&corpus, ClassifierConfig { ..cfg.classifier.clone() }).context("training the transfer classifier")?;
        clf.save(&clf_dir)?;
        clf
    };
    let lm_dir = out.join("lm");
    let lm = if lm_dir.join(MANIFEST).exists() {
        LanguageModel::load(&lm_dir)?
    } else {
        let lm = LanguageModel::train(&corpus, &[Form::A, Form::B], cfg.lm.clone()).context("training the language model")?;
        lm.save(&lm_dir)?;
        lm
    };
    let external = match &cfg.embeddings {
        Some(p) => Some(EmbeddingTable::load_text(p, &corpus.vocab)?),
        None => None,
    };
    let embeddings = external.as_ref().map_or(ContentEmbeddings::Model, ContentEmbeddings::External);
    let evaluation = evaluate(&model, &corpus, &classifier, &lm, embeddings, &cfg.eval)?;

    let report_path = out.join("report.json");
    fs::write(&report_path, evaluation.report.to_json() + "\n").with_context(|| format!("writing {}", report_path.display()))?;
    let mut tsv = String::from("source_form\tline\tsource\toutput\n");
    for r in &evaluation.transfers {
        tsv.push_str(&format!("{}\t{}\t{}\t{}\n", r.source_form.tag(), r.source_line, vocab.decode(&r.source)?, vocab.decode(&r.output)?));
    }
    let tsv_path = out.join("transfers.tsv");
    fs::write(&tsv_path, tsv).with_context(|| format!("writing {}", tsv_path.display()))?;
    let oracle = oracle_for(cfg, &prefix, &corpus, &evaluation)?;
    if let Some(o) = &oracle {
        let path = out.join("oracle.json");
        fs::write(&path, serde_json::to_string_pretty(o).expect("plain data") + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(EvalOutput { report: evaluation.report, oracle, dir: out })
}

/// Transfers every line of `input` and writes one line per input line.
pub fn transfer_stream(cfg: &RunConfig, input: impl BufRead, mut output: impl Write) -> Result<usize> {
    let run = required(&cfg.run, "--run")?;
    let t = &cfg.transfer;
    if t.form_from.is_some() && t.form_avg_k.is_some() {
        return Err(usage("--form-from and --form-avg-k are mutually exclusive"));
    }
    let target = t.target.as_deref().map(parse_form).transpose()?;
    if t.form_from.is_none() && target.is_none() {
        return Err(usage("transfer needs --form-from <sentence> or --target a|b"));
    }
    let (model, vocab) = load_model(run)?;
    let max_len = model.config.max_len;
    let lines: Vec<String> = input.lines().collect::<std::io::Result<_>>().context("reading standard input")?;
    let sources: Vec<Vec<usize>> = lines.iter().map(|l| vocab.encode(l, max_len)).collect();
    let outputs = match &t.form_from {
        Some(text) => {
            let f = model.encode(&vocab.encode(text, max_len))?.f;
            let latents: Vec<LatentPair> = model.encode_all(&sources)?.into_iter().map(|l| LatentPair { m: l.m, f: f.clone() }).collect();
            model.greedy_all(&latents)?
        }
        None => {
            let target = target.expect("checked above");
            let corpus = load_corpus(cfg)?;
            check_vocab(&corpus, &vocab)?;
            let pool: Vec<Vec<usize>> = corpus.sentences(target, Split::Train).iter().map(|s| s.ids.clone()).collect();
            transfer_all(&model, &sources, &pool, t.form_avg_k.unwrap_or(DEFAULT_K), epoch_seed(cfg.seed, target.index()))?
        }
    };
    for o in &outputs {
        writeln!(output, "{}", vocab.decode(o)?).context("writing standard output")?;
    }
    Ok(outputs.len())
}

/// Exports meaning and form vectors of the evaluation split of both corpora.
pub fn export_run(cfg: &RunConfig) -> Result<PathBuf> {
    let run = required(&cfg.run, "--run")?;
    let out = required(&cfg.out, "--out")?;
    let (model, vocab) = load_model(run)?;
    let corpus = load_corpus(cfg)?;
    check_vocab(&corpus, &vocab)?;
    let mut rows = Vec::new();
    for form in [Form::A, Form::B] {
        let sents = corpus.sentences(form, cfg.eval.split);
        let n = cfg.eval.max_sentences.unwrap_or(sents.len()).min(sents.len());
        rows.extend(sents[..n].iter().map(|s| ExportRow { form, ids: &s.ids, text: &s.text }));
    }
    export_embeddings(&model, &rows, out)?;
    cfg.write_resolved(out)?;
    Ok(out.clone())
}

/// synth → train → eval under `dir`, each stage named in its errors.
pub fn end_to_end_smoke(cfg: &RunConfig, dir: &Path) -> Result<EvalOutput> {
    let mut c = cfg.clone();
    c.out = Some(dir.join("data"));
    let prefix = synth(&c).context("synth stage")?;
    c.corpus = Some(prefix);
    c.out = Some(dir.join("run"));
    train_run(&c, false).context("train stage")?;
    c.run = c.out.take();
    c.out = Some(dir.join("eval"));
    eval_run(&c).context("eval stage")
}
