//! Transfer strength, content preservation, continuous-form transfer,
//! fluency and separation diagnostics.
//!
//! Scoring runs in parallel over fixed-size chunks of sentences. Every
//! chunk is computed the same way regardless of thread count, so results
//! are identical for any `ADNET_THREADS`.

mod classifier;
mod lm;
mod metrics;
mod transfer;

use std::sync::OnceLock;

use autodiff::Scalar;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use classifier::{transfer_strength, ClassifierConfig, TransferClassifier};
pub use lm::{fluency_perplexity, LanguageModel, LmConfig, Perplexity};
pub use metrics::{content_preservation, cosine, pool_sentence_embedding, pooled_sentence, separation_probe, ContentScore, ProbeReport};
pub use transfer::{average_form, continuous_form_transfer, export_embeddings, pool_forms, sample_pool, transfer_all, ExportRow, DEFAULT_K};

use crate::error::{AdnetError, Result};
use crate::model::{AdnetModel, EmbeddingTable};
use crate::text::{CorpusPair, Form, Split, EOS};
use crate::training::epoch_seed;

/// Pool for evaluation work, sized by `ADNET_THREADS` when set.
pub fn thread_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let n = std::env::var("ADNET_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()).unwrap_or(0);
        rayon::ThreadPoolBuilder::new().num_threads(n).build().expect("thread pool")
    })
}

/// Applies `f` to consecutive chunks of `chunk` items in parallel and
/// concatenates the results in order.
pub(crate) fn par_chunks<I: Sync, O: Send>(items: &[I], chunk: usize, f: impl Fn(&[I]) -> Result<Vec<O>> + Sync) -> Result<Vec<O>> {
    let parts: Vec<Result<Vec<O>>> = thread_pool().install(|| items.par_chunks(chunk).map(&f).collect());
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub split: Split,
    /// Opposite-form sentences averaged into each transfer's form vector.
    pub k: usize,
    pub seed: u64,
    /// Cap on source sentences per side; `None` uses the whole split.
    pub max_sentences: Option<usize>,
    /// Sentences per side fed to the separation probes.
    pub probe_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { split: Split::Test, k: DEFAULT_K, seed: 0, max_sentences: None, probe_samples: 500 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub transfer_strength: f64,
    pub content_preservation: f64,
    pub content_pairs: usize,
    pub content_pairs_skipped: usize,
    pub ppl_original: f64,
    /// `None` when no transferred output ends in `EOS`.
    pub ppl_transferred: Option<f64>,
    /// Transferred outputs that hit the length limit without `EOS`.
    pub unterminated_outputs: usize,
    /// Probe accuracy predicting the form label from `m`, and from `f`.
    pub meaning_probe_acc: f64,
    pub form_probe_acc: f64,
    pub meaning_silhouette: f64,
    pub form_silhouette: f64,
    pub degenerate_silhouette: bool,
    pub classifier_valid_accuracy: Option<f64>,
    pub sentences: usize,
    pub config: EvalConfig,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub source_form: Form,
    pub source_line: usize,
    pub source: Vec<usize>,
    pub output: Vec<usize>,
}

pub struct Evaluation {
    pub report: EvalReport,
    pub transfers: Vec<TransferRecord>,
}

/// Word vectors for content preservation.
pub enum ContentEmbeddings<'a> {
    /// The evaluated model's own embedding table.
    Model,
    External(&'a EmbeddingTable),
}

/// Transfers every source sentence of `config.split` (both directions)
/// with the continuous-form protocol and scores the results.
pub fn evaluate<T: Scalar>(
    model: &AdnetModel<T>,
    corpus: &CorpusPair,
    classifier: &TransferClassifier,
    lm: &LanguageModel,
    embeddings: ContentEmbeddings<'_>,
    config: &EvalConfig,
) -> Result<Evaluation> {
    let own_table;
    let table = match embeddings {
        ContentEmbeddings::Model => {
            own_table = model.embedding_table();
            &own_table
        }
        ContentEmbeddings::External(t) => t,
    };
    if table.len() != corpus.vocab.len() {
        return Err(AdnetError::Dimension { what: "embedding rows", expected: corpus.vocab.len(), got: table.len() });
    }
    let mut transfers = Vec::new();
    for form in [Form::A, Form::B] {
        let mut sources = corpus.sentences(form, config.split).to_vec();
        if let Some(n) = config.max_sentences {
            sources.truncate(n);
        }
        let pool: Vec<Vec<usize>> = corpus.sentences(form.opposite(), config.split).iter().map(|s| s.ids.clone()).collect();
        let ids: Vec<Vec<usize>> = sources.iter().map(|s| s.ids.clone()).collect();
        let outputs = transfer_all(model, &ids, &pool, config.k, epoch_seed(config.seed, form.index()))?;
        for (s, output) in sources.iter().zip(outputs) {
            transfers.push(TransferRecord { source_form: form, source_line: s.line, source: s.ids.clone(), output });
        }
    }
    if transfers.is_empty() {
        return Err(AdnetError::Empty("evaluation split"));
    }
    let sources: Vec<Vec<usize>> = transfers.iter().map(|t| t.source.clone()).collect();
    let outputs: Vec<Vec<usize>> = transfers.iter().map(|t| t.output.clone()).collect();
    let targets: Vec<Form> = transfers.iter().map(|t| t.source_form.opposite()).collect();
    let ts = transfer_strength(classifier, &outputs, &targets)?;
    let cp = content_preservation(&sources, &outputs, table)?;
    let ppl_o = lm.perplexity(&sources)?;
    let unterminated = outputs.iter().filter(|o| o.last() != Some(&EOS)).count();
    let ppl_t = if unterminated == outputs.len() { None } else { Some(lm.perplexity(&outputs)?.perplexity) };

    let mut probe_rows = Vec::new();
    let mut probe_labels = Vec::new();
    for form in [Form::A, Form::B] {
        for s in corpus.sentences(form, config.split).iter().take(config.probe_samples) {
            probe_rows.push(s.ids.clone());
            probe_labels.push(form.index());
        }
    }
    let latents = transfer::encode_parallel(model, &probe_rows)?;
    let m: Vec<Vec<f64>> = latents.iter().map(|l| l.m.clone()).collect();
    let f: Vec<Vec<f64>> = latents.into_iter().map(|l| l.f).collect();
    let mp = separation_probe(&m, &probe_labels)?;
    let fp = separation_probe(&f, &probe_labels)?;

    let report = EvalReport {
        transfer_strength: ts,
        content_preservation: cp.mean_cosine,
        content_pairs: cp.pairs,
        content_pairs_skipped: cp.skipped,
        ppl_original: ppl_o.perplexity,
        ppl_transferred: ppl_t,
        unterminated_outputs: unterminated,
        meaning_probe_acc: mp.accuracy,
        form_probe_acc: fp.accuracy,
        meaning_silhouette: mp.silhouette,
        form_silhouette: fp.silhouette,
        degenerate_silhouette: mp.degenerate || fp.degenerate,
        classifier_valid_accuracy: classifier.valid_accuracy,
        sentences: transfers.len(),
        config: config.clone(),
    };
    Ok(Evaluation { report, transfers })
}
