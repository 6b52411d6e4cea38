//! Form classifier used to score transfer strength.

use std::path::Path;

use autodiff::{Graph, OptimizerState, ParamStore, UpdateRule};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::par_chunks;
use crate::error::{AdnetError, Result};
use crate::model::checkpoint::{load_into, read_manifest, save_store, Manifest};
use crate::model::layers::{argmax, encode_sequences, Embedding, Gru, Mlp};
use crate::text::{Batch, CorpusPair, Form, Split};
use crate::training::epoch_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    /// Widths of the four fully connected layers before the 2-way output.
    pub fc_dims: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub vocab_size: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            embedding_dim: 32,
            hidden_dim: 64,
            fc_dims: vec![256, 128, 64, 32],
            epochs: 3,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
            vocab_size: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SavedClassifier {
    config: ClassifierConfig,
    trained: bool,
    valid_accuracy: Option<f64>,
}

/// GRU over the sentence, then fully connected layers with ELU between them
/// and a 2-way output (index 0 = form a).
#[derive(Clone, Debug, PartialEq)]
pub struct TransferClassifier {
    pub config: ClassifierConfig,
    pub params: ParamStore<f32>,
    embedding: Embedding,
    gru: Gru,
    head: Mlp,
    pub trained: bool,
    /// Accuracy on the validation split after training, if it has one.
    pub valid_accuracy: Option<f64>,
}

const KIND: &str = "transfer-classifier";
const CHUNK: usize = 256;

impl TransferClassifier {
    pub fn new(config: ClassifierConfig) -> Result<Self> {
        if config.vocab_size == 0 || config.embedding_dim == 0 || config.hidden_dim == 0 {
            return Err(AdnetError::Config("classifier dimensions must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let embedding = Embedding::new(&mut params, "classifier.embedding", config.vocab_size, config.embedding_dim, &mut rng);
        let gru = Gru::new(&mut params, "classifier.gru", config.embedding_dim, config.hidden_dim, &mut rng);
        let mut dims = vec![config.hidden_dim];
        dims.extend(&config.fc_dims);
        dims.push(2);
        let head = Mlp::new(&mut params, "classifier.head", &dims, &mut rng);
        Ok(TransferClassifier { config, params, embedding, gru, head, trained: false, valid_accuracy: None })
    }

    fn logits(&self, g: &mut Graph<f32>, batch: &Batch) -> Result<autodiff::Var> {
        let h = encode_sequences(g, &self.embedding, &self.gru, batch, None)?;
        self.head.forward(g, h)
    }

    /// Trains on the raw training splits of both corpora, then records the
    /// validation accuracy (if the split is non-empty).
    pub fn train(corpus: &CorpusPair, mut config: ClassifierConfig) -> Result<Self> {
        config.vocab_size = corpus.vocab.len();
        if config.epochs == 0 || config.batch_size == 0 {
            return Err(AdnetError::Config("classifier epochs and batch_size must be at least 1".into()));
        }
        let mut clf = TransferClassifier::new(config)?;
        let data: Vec<(&[usize], Form)> = [Form::A, Form::B]
            .into_iter()
            .flat_map(|f| corpus.sentences(f, Split::Train).iter().map(move |s| (s.ids.as_slice(), f)))
            .collect();
        if data.is_empty() {
            return Err(AdnetError::Empty("training split"));
        }
        let ids: Vec<_> = clf.params.ids().collect();
        let mut opt = OptimizerState::new(UpdateRule::adam(), clf.config.lr, ids.clone(), &clf.params);
        for epoch in 0..clf.config.epochs {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(clf.config.seed, epoch)));
            for chunk in order.chunks(clf.config.batch_size) {
                let seqs: Vec<&[usize]> = chunk.iter().map(|&i| data[i].0).collect();
                let labels: Vec<Form> = chunk.iter().map(|&i| data[i].1).collect();
                let batch = Batch::new(&seqs, labels)?;
                let grads = {
                    let mut g = Graph::new(&clf.params, &ids);
                    let logits = clf.logits(&mut g, &batch)?;
                    let targets = batch.labels.iter().map(|f| f.index()).collect();
                    let loss = g.tape.softmax_cross_entropy(logits, targets, vec![1.0 / batch.batch as f64; batch.batch])?;
                    g.gradients(loss)?
                };
                opt.step(&mut clf.params, &grads)?;
            }
        }
        let valid: Vec<(Vec<usize>, Form)> = [Form::A, Form::B]
            .into_iter()
            .flat_map(|f| corpus.sentences(f, Split::Valid).iter().map(move |s| (s.ids.clone(), f)))
            .collect();
        clf.trained = true;
        if !valid.is_empty() {
            clf.valid_accuracy = Some(clf.accuracy_unchecked(&valid)?);
        }
        Ok(clf)
    }

    fn predict_unchecked(&self, sentences: &[Vec<usize>]) -> Result<Vec<Form>> {
        par_chunks(sentences, CHUNK, |chunk| {
            let seqs: Vec<&[usize]> = chunk.iter().map(Vec::as_slice).collect();
            let batch = Batch::uniform(&seqs, Form::A)?;
            let mut g = Graph::inference(&self.params);
            let logits = self.logits(&mut g, &batch)?;
            let v = g.value(logits);
            Ok((0..chunk.len()).map(|r| Form::from_index(argmax(v.row(r)))).collect())
        })
    }

    fn accuracy_unchecked(&self, labelled: &[(Vec<usize>, Form)]) -> Result<f64> {
        let sentences: Vec<Vec<usize>> = labelled.iter().map(|(s, _)| s.clone()).collect();
        let pred = self.predict_unchecked(&sentences)?;
        Ok(pred.iter().zip(labelled).filter(|(p, (_, f))| *p == f).count() as f64 / labelled.len().max(1) as f64)
    }

    fn check_trained(&self) -> Result<()> {
        if self.trained {
            Ok(())
        } else {
            Err(AdnetError::Untrained("transfer classifier"))
        }
    }

    /// Predicted form of each sentence.
    pub fn predict(&self, sentences: &[Vec<usize>]) -> Result<Vec<Form>> {
        self.check_trained()?;
        for s in sentences {
            if s.is_empty() {
                return Err(AdnetError::Empty("sentence"));
            }
            if let Some(&id) = s.iter().find(|&&id| id >= self.config.vocab_size) {
                return Err(AdnetError::TokenOutOfRange { id, size: self.config.vocab_size });
            }
        }
        self.predict_unchecked(sentences)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let saved = SavedClassifier { config: self.config.clone(), trained: self.trained, valid_accuracy: self.valid_accuracy };
        save_store(dir, KIND, &saved, &self.params)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest<SavedClassifier> = read_manifest(dir)?;
        if manifest.kind != KIND {
            return Err(AdnetError::Checkpoint { path: dir.to_path_buf(), msg: format!("expected a {KIND} checkpoint, found {}", manifest.kind) });
        }
        let mut clf = TransferClassifier::new(manifest.config.config.clone())?;
        load_into(dir, &manifest, &mut clf.params)?;
        clf.trained = manifest.config.trained;
        clf.valid_accuracy = manifest.config.valid_accuracy;
        Ok(clf)
    }
}

/// Fraction of `generated[i]` classified as `targets[i]`.
pub fn transfer_strength(classifier: &TransferClassifier, generated: &[Vec<usize>], targets: &[Form]) -> Result<f64> {
    if generated.len() != targets.len() {
        return Err(AdnetError::Dimension { what: "transfer targets", expected: generated.len(), got: targets.len() });
    }
    if generated.is_empty() {
        return Err(AdnetError::Empty("generations"));
    }
    let pred = classifier.predict(generated)?;
    Ok(pred.iter().zip(targets).filter(|(p, t)| p == t).count() as f64 / targets.len() as f64)
}
