//! The ADNet networks: encoder with meaning and form heads, generator,
//! discriminator, motivator and the optional form discriminator.

pub mod checkpoint;
mod embeddings;
mod form;
pub mod layers;

use autodiff::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use embeddings::EmbeddingTable;
pub use form::{find_form_dimensions, form_target_u};
use layers::{argmax, decode_teacher_forced, encode_sequences, Embedding, Gru, Linear, Mlp};

use crate::error::{AdnetError, Result};
use crate::text::{Batch, Form, BOS, EOS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub gru_hidden_dim: usize,
    pub meaning_dim: usize,
    pub form_dim: usize,
    pub critic_hidden_dims: Vec<usize>,
    pub vocab_size: usize,
    pub max_len: usize,
    /// Builds the form discriminator `D_f`, which maps `f` to an
    /// embedding-sized vector.
    pub form_discriminator: bool,
}

impl Default for ModelConfig {
    /// Default dimensions; the vocabulary size is filled in from a corpus.
    fn default() -> Self {
        ModelConfig::new(0)
    }
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            embedding_dim: 32,
            gru_hidden_dim: 64,
            meaning_dim: 64,
            form_dim: 64,
            critic_hidden_dims: vec![128, 64],
            vocab_size,
            max_len: 20,
            form_discriminator: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embedding_dim", self.embedding_dim),
            ("gru_hidden_dim", self.gru_hidden_dim),
            ("meaning_dim", self.meaning_dim),
            ("form_dim", self.form_dim),
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
        ];
        for (name, d) in dims {
            if d == 0 {
                return Err(AdnetError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.critic_hidden_dims.iter().any(|&d| d == 0) {
            return Err(AdnetError::Config("critic hidden dims must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub embedding: Embedding,
    pub gru: Gru,
    pub meaning: Linear,
    pub form: Linear,
}

impl Encoder {
    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.embedding.table];
        ids.extend(self.gru.ids());
        ids.extend(self.meaning.ids());
        ids.extend(self.form.ids());
        ids
    }
}

/// The generator reads input tokens through the encoder's embedding table.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub latent: Linear,
    pub gru: Gru,
    pub output: Linear,
}

impl Generator {
    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = self.latent.ids();
        ids.extend(self.gru.ids());
        ids.extend(self.output.ids());
        ids
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CriticKind {
    Discriminator,
    Motivator,
    FormDiscriminator,
}

/// Meaning and form vectors of one sentence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentPair {
    pub m: Vec<f64>,
    pub f: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DecodeMode<'a> {
    Greedy,
    TeacherForced(&'a [usize]),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    /// Greedy: emitted tokens, ending in EOS unless `max_len` was reached.
    /// Teacher-forced: the per-step argmax under the given prefix.
    pub tokens: Vec<usize>,
    /// Per-step log-probabilities over the vocabulary.
    pub log_probs: Vec<Vec<f64>>,
}

impl Generation {
    /// Mean negative log-likelihood of `target` under the step distributions.
    pub fn mean_nll(&self, target: &[usize]) -> f64 {
        let n = target.len().min(self.log_probs.len());
        -(0..n).map(|t| self.log_probs[t][target[t]]).sum::<f64>() / n.max(1) as f64
    }
}

/// Encoded batch: meaning `[B, m]` and form `[B, f]` on the graph.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub m: Var,
    pub f: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdnetModel<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub encoder: Encoder,
    pub generator: Generator,
    pub discriminator: Mlp,
    pub motivator: Mlp,
    pub form_discriminator: Option<Mlp>,
}

const ENCODE_CHUNK: usize = 256;

impl<T: Scalar> AdnetModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let c = &config;
        let embedding = Embedding::new(&mut params, "encoder.embedding", c.vocab_size, c.embedding_dim, &mut rng);
        let gru = Gru::new(&mut params, "encoder.gru", c.embedding_dim, c.gru_hidden_dim, &mut rng);
        let meaning = Linear::new(&mut params, "encoder.meaning", c.gru_hidden_dim, c.meaning_dim, &mut rng);
        let form = Linear::new(&mut params, "encoder.form", c.gru_hidden_dim, c.form_dim, &mut rng);
        let latent = Linear::new(&mut params, "generator.latent", c.meaning_dim + c.form_dim, c.gru_hidden_dim, &mut rng);
        let dec = Gru::new(&mut params, "generator.gru", c.embedding_dim, c.gru_hidden_dim, &mut rng);
        let output = Linear::new(&mut params, "generator.output", c.gru_hidden_dim, c.vocab_size, &mut rng);
        let critic_dims = |input: usize, out: usize| {
            let mut d = vec![input];
            d.extend(&c.critic_hidden_dims);
            d.push(out);
            d
        };
        let discriminator = Mlp::new(&mut params, "discriminator", &critic_dims(c.meaning_dim, 1), &mut rng);
        let motivator = Mlp::new(&mut params, "motivator", &critic_dims(c.form_dim, 1), &mut rng);
        let form_discriminator = c
            .form_discriminator
            .then(|| Mlp::new(&mut params, "form_discriminator", &critic_dims(c.form_dim, c.embedding_dim), &mut rng));
        Ok(AdnetModel {
            config,
            params,
            encoder: Encoder { embedding, gru, meaning, form },
            generator: Generator { latent, gru: dec, output },
            discriminator,
            motivator,
            form_discriminator,
        })
    }

    /// Same architecture, values converted to another precision.
    pub fn cast<U: Scalar>(&self) -> AdnetModel<U> {
        AdnetModel {
            config: self.config.clone(),
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
            motivator: self.motivator.clone(),
            form_discriminator: self.form_discriminator.clone(),
        }
    }

    pub fn critic(&self, kind: CriticKind) -> Option<&Mlp> {
        match kind {
            CriticKind::Discriminator => Some(&self.discriminator),
            CriticKind::Motivator => Some(&self.motivator),
            CriticKind::FormDiscriminator => self.form_discriminator.as_ref(),
        }
    }

    /// `θ_E ∪ θ_G`.
    pub fn autoencoder_ids(&self) -> Vec<ParamId> {
        let mut ids = self.encoder.ids();
        ids.extend(self.generator.ids());
        ids
    }

    pub fn embedding_table(&self) -> EmbeddingTable {
        EmbeddingTable::new(self.params.get(self.encoder.embedding.table).cast())
    }

    // Graph-level pieces used by the training losses.

    pub fn encode_graph(&self, g: &mut Graph<T>, batch: &Batch) -> Result<Encoded> {
        let h = encode_sequences(g, &self.encoder.embedding, &self.encoder.gru, batch, None)?;
        let m = self.encoder.meaning.forward(g, h)?;
        let m = g.tape.tanh(m)?;
        let f = self.encoder.form.forward(g, h)?;
        let f = g.tape.tanh(f)?;
        Ok(Encoded { m, f })
    }

    /// `z = tanh(W_z [m; f] + b_z)`.
    pub fn merge_latent(&self, g: &mut Graph<T>, m: Var, f: Var) -> Result<Var> {
        let mf = g.tape.concat_cols(&[m, f])?;
        let z = self.generator.latent.forward(g, mf)?;
        Ok(g.tape.tanh(z)?)
    }

    /// Time-major teacher-forced logits `[time·batch, vocab]` for `batch`
    /// conditioned on `(m, f)`.
    pub fn teacher_forced_logits(&self, g: &mut Graph<T>, m: Var, f: Var, batch: &Batch) -> Result<Var> {
        let z = self.merge_latent(g, m, f)?;
        decode_teacher_forced(g, &self.encoder.embedding, &self.generator.gru, &self.generator.output, z, batch)
    }

    pub fn critic_graph(&self, g: &mut Graph<T>, kind: CriticKind, x: Var) -> Result<Var> {
        let critic = self.critic(kind).ok_or(AdnetError::Config("form discriminator is disabled".into()))?;
        let want = critic.input();
        let got = g.value(x).dims2().1;
        if got != want {
            return Err(AdnetError::Dimension { what: "critic input", expected: want, got });
        }
        critic.forward(g, x)
    }

    // Value-level API.

    fn check_ids(&self, seq: &[usize]) -> Result<()> {
        if seq.is_empty() {
            return Err(AdnetError::Empty("sentence"));
        }
        match seq.iter().find(|&&id| id >= self.config.vocab_size) {
            Some(&id) => Err(AdnetError::TokenOutOfRange { id, size: self.config.vocab_size }),
            None => Ok(()),
        }
    }

    pub fn encode(&self, sentence: &[usize]) -> Result<LatentPair> {
        Ok(self.encode_all(&[sentence.to_vec()])?.remove(0))
    }

    pub fn encode_all(&self, sentences: &[Vec<usize>]) -> Result<Vec<LatentPair>> {
        let mut out = Vec::with_capacity(sentences.len());
        for chunk in sentences.chunks(ENCODE_CHUNK) {
            chunk.iter().try_for_each(|s| self.check_ids(s))?;
            let seqs: Vec<&[usize]> = chunk.iter().map(Vec::as_slice).collect();
            let batch = Batch::uniform(&seqs, Form::A)?;
            let mut g = Graph::inference(&self.params);
            let enc = self.encode_graph(&mut g, &batch)?;
            let (m, f) = (g.value(enc.m), g.value(enc.f));
            for r in 0..chunk.len() {
                out.push(LatentPair {
                    m: m.row(r).iter().map(|v| v.as_f64()).collect(),
                    f: f.row(r).iter().map(|v| v.as_f64()).collect(),
                });
            }
        }
        Ok(out)
    }

    fn latent_matrices(&self, latents: &[LatentPair]) -> Result<(Tensor<T>, Tensor<T>)> {
        let (md, fd) = (self.config.meaning_dim, self.config.form_dim);
        for l in latents {
            if l.m.len() != md {
                return Err(AdnetError::Dimension { what: "meaning vector", expected: md, got: l.m.len() });
            }
            if l.f.len() != fd {
                return Err(AdnetError::Dimension { what: "form vector", expected: fd, got: l.f.len() });
            }
        }
        let m = Tensor::new(vec![latents.len(), md], latents.iter().flat_map(|l| l.m.iter().map(|&v| T::of(v))).collect())?;
        let f = Tensor::new(vec![latents.len(), fd], latents.iter().flat_map(|l| l.f.iter().map(|&v| T::of(v))).collect())?;
        Ok((m, f))
    }

    pub fn generate(&self, latent: &LatentPair, mode: DecodeMode<'_>) -> Result<Generation> {
        match mode {
            DecodeMode::Greedy => Ok(self.greedy(std::slice::from_ref(latent), true)?.remove(0)),
            DecodeMode::TeacherForced(target) => {
                self.check_ids(target)?;
                let (m, f) = self.latent_matrices(std::slice::from_ref(latent))?;
                let batch = Batch::uniform(&[target], Form::A)?;
                let mut g = Graph::inference(&self.params);
                let (m, f) = (g.tape.constant(m), g.tape.constant(f));
                let logits = self.teacher_forced_logits(&mut g, m, f, &batch)?;
                let logits = g.value(logits);
                let log_probs: Vec<Vec<f64>> = (0..target.len()).map(|t| log_softmax(logits.row(t))).collect();
                let tokens = log_probs.iter().map(|lp| argmax(lp)).collect();
                Ok(Generation { tokens, log_probs })
            }
        }
    }

    /// Greedy decoding of many latents at once.
    pub fn greedy_all(&self, latents: &[LatentPair]) -> Result<Vec<Vec<usize>>> {
        let mut out = Vec::with_capacity(latents.len());
        for chunk in latents.chunks(ENCODE_CHUNK) {
            out.extend(self.greedy(chunk, false)?.into_iter().map(|g| g.tokens));
        }
        Ok(out)
    }

    fn greedy(&self, latents: &[LatentPair], keep_log_probs: bool) -> Result<Vec<Generation>> {
        let (m, f) = self.latent_matrices(latents)?;
        let n = latents.len();
        let mut g = Graph::inference(&self.params);
        let (m, f) = (g.tape.constant(m), g.tape.constant(f));
        let mut h = self.merge_latent(&mut g, m, f)?;
        let mut prev = vec![BOS; n];
        let mut done = vec![false; n];
        let mut gens: Vec<Generation> = (0..n).map(|_| Generation { tokens: Vec::new(), log_probs: Vec::new() }).collect();
        for _ in 0..self.config.max_len {
            let x = self.encoder.embedding.lookup(&mut g, prev.clone())?;
            let gi = self.generator.gru.project_input(&mut g, x)?;
            h = self.generator.gru.cell(&mut g, gi, h)?;
            let logits = self.generator.output.forward(&mut g, h)?;
            let logits = g.value(logits);
            for r in 0..n {
                if done[r] {
                    continue;
                }
                let tok = argmax(logits.row(r));
                if keep_log_probs {
                    gens[r].log_probs.push(log_softmax(logits.row(r)));
                }
                gens[r].tokens.push(tok);
                prev[r] = tok;
                done[r] = tok == EOS;
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        Ok(gens)
    }

    /// Raw critic output for one input vector: a single score for `D` and
    /// `M`, an embedding-sized vector for `D_f`.
    pub fn critic_score(&self, kind: CriticKind, v: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::inference(&self.params);
        let x = g.tape.constant(Tensor::new(vec![1, v.len()], v.iter().map(|&x| T::of(x)).collect())?);
        let y = self.critic_graph(&mut g, kind, x)?;
        Ok(g.value(y).data().iter().map(|v| v.as_f64()).collect())
    }
}

pub(crate) fn log_softmax<T: Scalar>(row: &[T]) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
    let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v.as_f64() - lse).collect()
}
