//! GRU language model for the fluency check.

use std::path::Path;

use autodiff::{Graph, OptimizerState, ParamStore, Tensor, UpdateRule};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::par_chunks;
use crate::error::{AdnetError, Result};
use crate::model::checkpoint::{load_into, read_manifest, save_store, Manifest};
use crate::model::layers::{decode_teacher_forced, teacher_targets, Embedding, Gru, Linear};
use crate::model::{log_softmax, EmbeddingTable};
use crate::text::{Batch, CorpusPair, Form, Split, EOS};
use crate::training::epoch_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub vocab_size: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig { embedding_dim: 32, hidden_dim: 64, epochs: 5, batch_size: 64, lr: 3e-3, seed: 0, vocab_size: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SavedLm {
    config: LmConfig,
    trained: bool,
}

/// The generator's decoder without latent conditioning: `h_0 = 0`, input
/// `BOS` then the sentence, predicting every token including `EOS`.
#[derive(Clone, Debug, PartialEq)]
pub struct LanguageModel {
    pub config: LmConfig,
    pub params: ParamStore<f32>,
    pub trained: bool,
    embedding: Embedding,
    gru: Gru,
    output: Linear,
}

/// Perplexity together with what went into it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perplexity {
    pub perplexity: f64,
    pub tokens: usize,
    /// Sequences left out because they do not end in `EOS`.
    pub skipped: usize,
}

const KIND: &str = "language-model";
const CHUNK: usize = 256;

impl LanguageModel {
    pub fn new(config: LmConfig) -> Result<Self> {
        if config.vocab_size == 0 || config.embedding_dim == 0 || config.hidden_dim == 0 {
            return Err(AdnetError::Config("language model dimensions must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let embedding = Embedding::new(&mut params, "lm.embedding", config.vocab_size, config.embedding_dim, &mut rng);
        let gru = Gru::new(&mut params, "lm.gru", config.embedding_dim, config.hidden_dim, &mut rng);
        let output = Linear::new(&mut params, "lm.output", config.hidden_dim, config.vocab_size, &mut rng);
        Ok(LanguageModel { config, params, trained: false, embedding, gru, output })
    }

    fn logits(&self, g: &mut Graph<f32>, batch: &Batch) -> Result<autodiff::Var> {
        let h0 = g.tape.constant(Tensor::zeros(&[batch.batch, self.config.hidden_dim]));
        decode_teacher_forced(g, &self.embedding, &self.gru, &self.output, h0, batch)
    }

    /// Trains on the training splits of the given corpora of `corpus`.
    pub fn train(corpus: &CorpusPair, forms: &[Form], mut config: LmConfig) -> Result<Self> {
        config.vocab_size = corpus.vocab.len();
        if config.epochs == 0 || config.batch_size == 0 {
            return Err(AdnetError::Config("language model epochs and batch_size must be at least 1".into()));
        }
        let mut lm = LanguageModel::new(config)?;
        let data: Vec<&[usize]> =
            forms.iter().flat_map(|&f| corpus.sentences(f, Split::Train).iter().map(|s| s.ids.as_slice())).collect();
        if data.is_empty() {
            return Err(AdnetError::Empty("training split"));
        }
        let ids: Vec<_> = lm.params.ids().collect();
        let mut opt = OptimizerState::new(UpdateRule::adam(), lm.config.lr, ids.clone(), &lm.params);
        for epoch in 0..lm.config.epochs {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(lm.config.seed, epoch)));
            for chunk in order.chunks(lm.config.batch_size) {
                let seqs: Vec<&[usize]> = chunk.iter().map(|&i| data[i]).collect();
                let batch = Batch::uniform(&seqs, Form::A)?;
                let grads = {
                    let mut g = Graph::new(&lm.params, &ids);
                    let logits = lm.logits(&mut g, &batch)?;
                    let n = batch.num_tokens() as f64;
                    let (targets, weights) = teacher_targets(&batch, |_| 1.0 / n);
                    let loss = g.tape.softmax_cross_entropy(logits, targets, weights)?;
                    g.gradients(loss)?
                };
                opt.step(&mut lm.params, &grads)?;
            }
        }
        lm.trained = true;
        Ok(lm)
    }

    /// Summed token NLL per sentence.
    fn sentence_nll(&self, sentences: &[&[usize]]) -> Result<Vec<(f64, usize)>> {
        par_chunks(sentences, CHUNK, |chunk| {
            let batch = Batch::uniform(chunk, Form::A)?;
            let mut g = Graph::inference(&self.params);
            let logits = self.logits(&mut g, &batch)?;
            let v = g.value(logits);
            Ok((0..batch.batch)
                .map(|r| {
                    let len = batch.lengths[r];
                    let nll: f64 = (0..len).map(|t| -log_softmax(v.row(t * batch.batch + r))[batch.token(r, t)]).sum();
                    (nll, len)
                })
                .collect())
        })
    }

    /// `exp(mean token NLL)` over every token of the EOS-terminated
    /// sentences.
    pub fn perplexity(&self, sentences: &[Vec<usize>]) -> Result<Perplexity> {
        if !self.trained {
            return Err(AdnetError::Untrained("language model"));
        }
        let kept: Vec<&[usize]> = sentences.iter().filter(|s| s.last() == Some(&EOS)).map(Vec::as_slice).collect();
        for s in &kept {
            if let Some(&id) = s.iter().find(|&&id| id >= self.config.vocab_size) {
                return Err(AdnetError::TokenOutOfRange { id, size: self.config.vocab_size });
            }
        }
        if kept.is_empty() {
            return Err(AdnetError::Empty("EOS-terminated sentences"));
        }
        let per = self.sentence_nll(&kept)?;
        let tokens: usize = per.iter().map(|p| p.1).sum();
        let nll: f64 = per.iter().map(|p| p.0).sum();
        Ok(Perplexity { perplexity: (nll / tokens as f64).exp(), tokens, skipped: sentences.len() - kept.len() })
    }

    /// The input embedding table, usable as shared word vectors.
    pub fn embedding_table(&self) -> EmbeddingTable {
        EmbeddingTable::new(self.params.get(self.embedding.table).cast())
    }

    pub fn output_layer(&self) -> &Linear {
        &self.output
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_store(dir, KIND, &SavedLm { config: self.config.clone(), trained: self.trained }, &self.params)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest<SavedLm> = read_manifest(dir)?;
        if manifest.kind != KIND {
            return Err(AdnetError::Checkpoint { path: dir.to_path_buf(), msg: format!("expected a {KIND} checkpoint, found {}", manifest.kind) });
        }
        let mut lm = LanguageModel::new(manifest.config.config.clone())?;
        load_into(dir, &manifest, &mut lm.params)?;
        lm.trained = manifest.config.trained;
        Ok(lm)
    }
}

/// Perplexity of `sentences` under `lm`.
pub fn fluency_perplexity(lm: &LanguageModel, sentences: &[Vec<usize>]) -> Result<Perplexity> {
    lm.perplexity(sentences)
}
