//! Two-stage training: one critic stage (`D`, `M`, optionally `D_f`) then
//! one encoder/generator stage per batch pair.

mod losses;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use autodiff::{Graph, OptimizerState, ParamStore, Scalar, UpdateRule};
use serde::{Deserialize, Serialize};

pub use losses::{
    critic_graph, form_discriminator_graph, loss_critic, loss_form_discriminator, loss_reconstruction, objective_graph,
    reconstruction_graph, FormTargets, LossWeights, Objective, PairedBatch,
};

use crate::error::{AdnetError, Result};
use crate::model::checkpoint::{f32_bytes, f32_values, read_json, save_vocab, write_json};
use crate::model::{find_form_dimensions, AdnetModel, CriticKind, ModelConfig};
use crate::text::{make_batches, Batch, CorpusPair, Split};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl OptimizerConfig {
    fn rule(&self) -> UpdateRule {
        UpdateRule::Adam { beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub autoencoder_optimizer: OptimizerConfig,
    pub discriminator_optimizer: OptimizerConfig,
    pub motivator_optimizer: OptimizerConfig,
    pub form_discriminator_optimizer: OptimizerConfig,
    /// Critic weights are clamped to `[-clip, clip]` after each update.
    pub clip: f64,
    pub weights: LossWeights,
    /// Write `ckpt-<step>/` every this many steps; 0 keeps only the final one.
    pub checkpoint_every: u64,
    /// Embedding dimensions treated as form dimensions for `u`.
    pub form_dims: usize,
    /// Words dropped from each end of the form ranking when building `u`.
    pub k_discard: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            seed: 0,
            autoencoder_optimizer: OptimizerConfig::default(),
            discriminator_optimizer: OptimizerConfig::default(),
            motivator_optimizer: OptimizerConfig::default(),
            form_discriminator_optimizer: OptimizerConfig::default(),
            clip: 0.1,
            weights: LossWeights::default(),
            checkpoint_every: 0,
            form_dims: 1,
            k_discard: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(AdnetError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(AdnetError::Config("batch_size must be at least 1".into()));
        }
        if !(self.clip > 0.0) {
            return Err(AdnetError::Config(format!("clip must be positive, got {}", self.clip)));
        }
        if self.form_dims == 0 {
            return Err(AdnetError::Config("form_dims must be at least 1".into()));
        }
        self.weights.validate()
    }
}

/// Loss values of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub l_rec: f64,
    pub l_d: f64,
    pub l_m: f64,
    pub l_df: f64,
    pub l_total: f64,
}

/// Critic losses measured before their update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CriticLosses {
    pub l_d: f64,
    pub l_m: f64,
    pub l_df: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub epoch: usize,
    pub l_rec: f64,
    pub l_d: f64,
    pub l_m: f64,
    pub l_total: f64,
}

pub const METRICS_HEADER: &str = "step,epoch,l_rec,l_d,l_m,l_total";

impl MetricsRow {
    pub fn csv(&self) -> String {
        format!("{},{},{},{},{},{}", self.step, self.epoch, self.l_rec, self.l_d, self.l_m, self.l_total)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningMeans {
    pub count: u64,
    pub l_rec: f64,
    pub l_d: f64,
    pub l_m: f64,
    pub l_total: f64,
}

impl RunningMeans {
    fn push(&mut self, s: &StepLosses) {
        self.count += 1;
        let k = self.count as f64;
        self.l_rec += (s.l_rec - self.l_rec) / k;
        self.l_d += (s.l_d - self.l_d) / k;
        self.l_m += (s.l_m - self.l_m) / k;
        self.l_total += (s.l_total - self.l_total) / k;
    }
}

/// Everything needed to continue training exactly where it stopped. Batch
/// order is a pure function of `(seed, epoch)`, so no RNG stream is stored.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub model: AdnetModel<T>,
    pub config: TrainConfig,
    pub autoencoder_opt: OptimizerState<T>,
    pub discriminator_opt: OptimizerState<T>,
    pub motivator_opt: OptimizerState<T>,
    pub form_discriminator_opt: Option<OptimizerState<T>>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed steps over the whole run.
    pub step: u64,
    /// Batch pairs already consumed in the current epoch.
    pub batch_in_epoch: usize,
    /// Form dimensions for `u`, refreshed at the start of each epoch.
    pub form_dims: Vec<usize>,
    /// Means over the current epoch.
    pub running: RunningMeans,
}

/// Seed of epoch `epoch`'s batch order.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    let mut z = seed ^ (epoch as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl<T: Scalar> TrainState<T> {
    /// Fresh state around `model`. `D_f` gets an optimizer only when the
    /// model has one and `lambda_f > 0`.
    pub fn new(model: AdnetModel<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.weights.lambda_f > 0.0 && model.form_discriminator.is_none() {
            return Err(AdnetError::Config("lambda_f > 0 needs a model built with form_discriminator".into()));
        }
        let opt = |c: &OptimizerConfig, ids, store: &ParamStore<T>| OptimizerState::new(c.rule(), c.lr, ids, store);
        let p = &model.params;
        let autoencoder_opt = opt(&config.autoencoder_optimizer, model.autoencoder_ids(), p);
        let discriminator_opt = opt(&config.discriminator_optimizer, model.discriminator.ids(), p).with_clip(config.clip);
        let motivator_opt = opt(&config.motivator_optimizer, model.motivator.ids(), p).with_clip(config.clip);
        let form_discriminator_opt = match (&model.form_discriminator, config.weights.lambda_f > 0.0) {
            (Some(df), true) => Some(opt(&config.form_discriminator_optimizer, df.ids(), p)),
            _ => None,
        };
        Ok(TrainState {
            model,
            config,
            autoencoder_opt,
            discriminator_opt,
            motivator_opt,
            form_discriminator_opt,
            epoch: 0,
            step: 0,
            batch_in_epoch: 0,
            form_dims: Vec::new(),
            running: RunningMeans::default(),
        })
    }

    /// Builds the model from `model_config` with the run seed, enabling `D_f`
    /// when `lambda_f > 0`.
    pub fn fresh(mut model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        model_config.form_discriminator |= config.weights.lambda_f > 0.0;
        let model = AdnetModel::new(model_config, config.seed)?;
        TrainState::new(model, config)
    }

    fn form_targets(&self) -> Option<FormTargets> {
        self.form_discriminator_opt.as_ref().map(|_| FormTargets {
            embeddings: self.model.embedding_table(),
            form_dims: self.form_dims.clone(),
            k_discard: self.config.k_discard,
        })
    }

    /// Recomputes the form dimensions from the current embedding table.
    pub fn refresh_form_dims(&mut self, corpus: &CorpusPair) -> Result<()> {
        if self.form_discriminator_opt.is_some() {
            self.form_dims = find_form_dimensions(corpus, &self.model.embedding_table(), self.config.form_dims)?;
        }
        Ok(())
    }

    /// Critic stage: `D` and `M` (and `D_f` when enabled) each take one step
    /// on their own loss with the encoder held fixed.
    pub fn train_step_critics(&mut self, batch_a: &Batch, batch_b: &Batch) -> Result<CriticLosses> {
        let pair = PairedBatch::new(batch_a, batch_b)?;
        let targets = self.form_targets();
        let model = &self.model;
        let mut trainable = model.discriminator.ids();
        trainable.extend(model.motivator.ids());
        if let (Some(df), Some(_)) = (&model.form_discriminator, &targets) {
            trainable.extend(df.ids());
        }
        let (grads, losses) = {
            let mut g = Graph::new(&model.params, &trainable);
            // The encoder's parameters are not trainable here, so its forward
            // pass leaves nothing on the tape.
            let enc = model.encode_graph(&mut g, &pair.joint)?;
            let (m, f) = (enc.m, enc.f);
            let l_d = critic_graph(model, &mut g, CriticKind::Discriminator, m, &pair)?;
            let l_m = critic_graph(model, &mut g, CriticKind::Motivator, f, &pair)?;
            let l_df = match &targets {
                Some(t) => Some(form_discriminator_graph(model, &mut g, f, t.matrix(&pair.joint)?)?),
                None => None,
            };
            // Parameter groups are disjoint, so one backward pass over the sum
            // yields each critic's gradient of its own loss.
            let mut terms = vec![(1.0, l_d), (1.0, l_m)];
            terms.extend(l_df.map(|v| (1.0, v)));
            let sum = g.tape.lincomb(&terms)?.expect("non-empty");
            let value = |v| g.value(v).item().as_f64();
            let losses = CriticLosses { l_d: value(l_d), l_m: value(l_m), l_df: l_df.map(value) };
            (g.gradients(sum)?, losses)
        };
        self.discriminator_opt.step(&mut self.model.params, &grads)?;
        self.motivator_opt.step(&mut self.model.params, &grads)?;
        if let Some(opt) = &mut self.form_discriminator_opt {
            opt.step(&mut self.model.params, &grads)?;
        }
        Ok(losses)
    }

    /// Encoder/generator stage: one step on `L_total` over `θ_E ∪ θ_G`.
    pub fn train_step_encoder_generator(&mut self, batch_a: &Batch, batch_b: &Batch) -> Result<StepLosses> {
        let pair = PairedBatch::new(batch_a, batch_b)?;
        let targets = self.form_targets();
        let model = &self.model;
        let ids = model.autoencoder_ids();
        let (grads, losses) = {
            let mut g = Graph::new(&model.params, &ids);
            let obj = objective_graph(model, &mut g, &pair, &self.config.weights, targets.as_ref())?;
            let value = |v| g.value(v).item().as_f64();
            let losses = StepLosses {
                l_rec: value(obj.l_rec),
                l_d: value(obj.l_d),
                l_m: value(obj.l_m),
                l_df: obj.l_df.map(value).unwrap_or(0.0),
                l_total: value(obj.total),
            };
            (g.gradients(obj.total)?, losses)
        };
        self.autoencoder_opt.step(&mut self.model.params, &grads)?;
        Ok(losses)
    }

    /// Both stages on one batch pair.
    pub fn train_step(&mut self, batch_a: &Batch, batch_b: &Batch) -> Result<StepLosses> {
        self.train_step_critics(batch_a, batch_b)?;
        let losses = self.train_step_encoder_generator(batch_a, batch_b)?;
        self.step += 1;
        self.running.push(&losses);
        Ok(losses)
    }
}

const TRAIN_STATE: &str = "train_state.json";
const OPTIMIZER: &str = "optimizer.bin";

#[derive(Serialize, Deserialize)]
struct SavedState {
    config: TrainConfig,
    epoch: usize,
    step: u64,
    batch_in_epoch: usize,
    form_dims: Vec<usize>,
    running: RunningMeans,
    optimizer_steps: Vec<u64>,
}

impl<T: Scalar> TrainState<T> {
    fn optimizers(&self) -> Vec<&OptimizerState<T>> {
        let mut v = vec![&self.autoencoder_opt, &self.discriminator_opt, &self.motivator_opt];
        v.extend(self.form_discriminator_opt.as_ref());
        v
    }

    /// Writes the model checkpoint plus optimizer moments and counters.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.model.save(dir)?;
        let saved = SavedState {
            config: self.config.clone(),
            epoch: self.epoch,
            step: self.step,
            batch_in_epoch: self.batch_in_epoch,
            form_dims: self.form_dims.clone(),
            running: self.running,
            optimizer_steps: self.optimizers().iter().map(|o| o.step_count()).collect(),
        };
        write_json(&dir.join(TRAIN_STATE), &saved)?;
        let bytes = f32_bytes(self.optimizers().into_iter().flat_map(|o| o.moments()));
        let path = dir.join(OPTIMIZER);
        fs::write(&path, bytes).map_err(|e| AdnetError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let model = AdnetModel::load(dir)?;
        let saved: SavedState = read_json(&dir.join(TRAIN_STATE))?;
        let mut state = TrainState::new(model, saved.config)?;
        let path = dir.join(OPTIMIZER);
        let values = f32_values(&fs::read(&path).map_err(|e| AdnetError::io(&path, e))?);
        let bad = |msg: String| AdnetError::Checkpoint { path: dir.to_path_buf(), msg };
        let mut offset = 0;
        let mut opts: Vec<&mut OptimizerState<T>> = vec![&mut state.autoencoder_opt, &mut state.discriminator_opt, &mut state.motivator_opt];
        opts.extend(state.form_discriminator_opt.as_mut());
        if opts.len() != saved.optimizer_steps.len() {
            return Err(bad(format!("{} optimizer groups saved, {} expected", saved.optimizer_steps.len(), opts.len())));
        }
        for (opt, &steps) in opts.into_iter().zip(&saved.optimizer_steps) {
            let lens: Vec<usize> = opt.moments().map(<[T]>::len).collect();
            let mut moments = Vec::with_capacity(lens.len());
            for n in lens {
                let chunk = values.get(offset..offset + n).ok_or_else(|| bad(format!("{OPTIMIZER} is truncated")))?;
                moments.push(chunk.iter().map(|&v| T::of(v as f64)).collect());
                offset += n;
            }
            opt.restore(steps, moments)?;
        }
        if offset != values.len() {
            return Err(bad(format!("{OPTIMIZER} has {} extra values", values.len() - offset)));
        }
        state.epoch = saved.epoch;
        state.step = saved.step;
        state.batch_in_epoch = saved.batch_in_epoch;
        state.form_dims = saved.form_dims;
        state.running = saved.running;
        Ok(state)
    }
}

/// Where a run writes checkpoints and its metrics log.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| AdnetError::io(&root, e))?;
        Ok(RunDir { root })
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn checkpoint(&self, step: u64) -> PathBuf {
        self.root.join(format!("ckpt-{step}"))
    }

    /// Checkpoint with the highest step, if any.
    pub fn latest_checkpoint(&self) -> Result<Option<PathBuf>> {
        let entries = fs::read_dir(&self.root).map_err(|e| AdnetError::io(&self.root, e))?;
        let mut best: Option<(u64, PathBuf)> = None;
        for entry in entries {
            let entry = entry.map_err(|e| AdnetError::io(&self.root, e))?;
            let name = entry.file_name();
            let Some(step) = name.to_str().and_then(|n| n.strip_prefix("ckpt-")).and_then(|s| s.parse::<u64>().ok()) else {
                continue;
            };
            if best.as_ref().map_or(true, |(b, _)| step > *b) {
                best = Some((step, entry.path()));
            }
        }
        Ok(best.map(|(_, p)| p))
    }
}

pub struct TrainOutcome<T> {
    pub state: TrainState<T>,
    pub metrics: Vec<MetricsRow>,
}

/// Runs the remaining epochs of `state` over the training split. With a run
/// directory, metrics go to `metrics.csv` (rows past `state.step` from an
/// earlier run are dropped) and checkpoints to `ckpt-<step>/`, including one
/// after the final step.
pub fn train_from<T: Scalar>(corpus: &CorpusPair, mut state: TrainState<T>, run: Option<&RunDir>) -> Result<TrainOutcome<T>> {
    if state.model.config.vocab_size != corpus.vocab.len() {
        return Err(AdnetError::Dimension { what: "vocabulary", expected: state.model.config.vocab_size, got: corpus.vocab.len() });
    }
    let mut log = match run {
        Some(run) => Some(MetricsLog::open(&run.metrics(), state.step)?),
        None => None,
    };
    if let Some(run) = run {
        save_vocab(&run.root, &corpus.vocab)?;
    }
    let mut metrics = Vec::new();
    while state.epoch < state.config.epochs {
        let batches = make_batches(corpus, Split::Train, state.config.batch_size, epoch_seed(state.config.seed, state.epoch))?;
        if state.batch_in_epoch == 0 {
            state.refresh_form_dims(corpus)?;
            state.running = RunningMeans::default();
        }
        for pair in batches.chunks(2).skip(state.batch_in_epoch) {
            let losses = state.train_step(&pair[0], &pair[1])?;
            state.batch_in_epoch += 1;
            let row = MetricsRow {
                step: state.step,
                epoch: state.epoch + 1,
                l_rec: losses.l_rec,
                l_d: losses.l_d,
                l_m: losses.l_m,
                l_total: losses.l_total,
            };
            if let Some(log) = &mut log {
                log.push(&row)?;
            }
            metrics.push(row);
            let every = state.config.checkpoint_every;
            if let (Some(run), true) = (run, every > 0 && state.step % every == 0) {
                state.save(&run.checkpoint(state.step))?;
            }
        }
        state.epoch += 1;
        state.batch_in_epoch = 0;
    }
    if let Some(run) = run {
        let dir = run.checkpoint(state.step);
        if !dir.join(TRAIN_STATE).exists() {
            state.save(&dir)?;
        }
    }
    Ok(TrainOutcome { state, metrics })
}

/// Fresh run from `model_config` and `config`.
pub fn train(corpus: &CorpusPair, model_config: ModelConfig, config: TrainConfig, run: Option<&RunDir>) -> Result<TrainOutcome<f32>> {
    let mut model_config = model_config;
    model_config.vocab_size = corpus.vocab.len();
    model_config.max_len = corpus.max_len;
    train_from(corpus, TrainState::fresh(model_config, config)?, run)
}

struct MetricsLog {
    path: PathBuf,
    file: fs::File,
}

impl MetricsLog {
    /// Opens `path`, keeping the header and rows with `step <= keep_through`.
    fn open(path: &Path, keep_through: u64) -> Result<Self> {
        let mut kept = vec![METRICS_HEADER.to_string()];
        if keep_through > 0 && path.exists() {
            let text = fs::read_to_string(path).map_err(|e| AdnetError::io(path, e))?;
            for line in text.lines().skip(1) {
                let step = line.split(',').next().and_then(|s| s.parse::<u64>().ok());
                if step.is_some_and(|s| s <= keep_through) {
                    kept.push(line.to_string());
                }
            }
        }
        let mut file = fs::File::create(path).map_err(|e| AdnetError::io(path, e))?;
        writeln!(file, "{}", kept.join("\n")).map_err(|e| AdnetError::io(path, e))?;
        Ok(MetricsLog { path: path.to_path_buf(), file })
    }

    fn push(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.file, "{}", row.csv()).map_err(|e| AdnetError::io(&self.path, e))
    }
}

/// Fraction of real tokens whose teacher-forced argmax equals the target,
/// over `sentences`.
pub fn teacher_forced_accuracy<T: Scalar>(model: &AdnetModel<T>, sentences: &[Vec<usize>]) -> Result<f64> {
    let latents = model.encode_all(sentences)?;
    let (mut hit, mut total) = (0usize, 0usize);
    for (s, l) in sentences.iter().zip(&latents) {
        let gen = model.generate(l, crate::model::DecodeMode::TeacherForced(s))?;
        hit += gen.tokens.iter().zip(s).filter(|(a, b)| a == b).count();
        total += s.len();
    }
    Ok(hit as f64 / total.max(1) as f64)
}
