//! Run configuration: JSON file values with command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use adnet::evaluation::{ClassifierConfig, EvalConfig, LmConfig};
use adnet::model::ModelConfig;
use adnet::text::CorpusOptions;
use adnet::training::TrainConfig;
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const RESOLVED: &str = "resolved.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSettings {
    pub overlap: f64,
    pub n_per_register: usize,
    /// File stem of the written corpora.
    pub name: String,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings { overlap: 0.3, n_per_register: 2000, name: "synthetic".into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferSettings {
    /// Continuous protocol: average the form of this many target sentences.
    pub form_avg_k: Option<usize>,
    /// Single-source swap: use the form vector of this sentence.
    pub form_from: Option<String>,
    /// Target form for the continuous protocol, `a` or `b`.
    pub target: Option<String>,
}

/// Everything a run needs. The master `seed` is copied into every component
/// seed when the configuration is resolved.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Corpus path prefix: `<prefix>.a.txt` and `<prefix>.b.txt`.
    pub corpus: Option<PathBuf>,
    /// Training run directory read by `eval`, `transfer` and `export`.
    pub run: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Word vectors for content preservation (`token v1 ... vd` per line);
    /// the model's own table when unset.
    pub embeddings: Option<PathBuf>,
    pub corpus_options: CorpusOptions,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub classifier: ClassifierConfig,
    pub lm: LmConfig,
    pub synth: SynthSettings,
    pub transfer: TransferSettings,
}

/// Values given on the command line; each one replaces the file value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub corpus: Option<PathBuf>,
    pub run: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub meaning_dim: Option<usize>,
    pub form_dim: Option<usize>,
    pub lambda_adv: Option<f64>,
    pub lambda_motiv: Option<f64>,
    pub lambda_f: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub form_avg_k: Option<usize>,
    pub form_from: Option<String>,
    pub target: Option<String>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// File values (or defaults) with `overrides` applied and seeds
    /// propagated.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut c = match file {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let o = overrides.clone();
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(o.seed => c.seed);
        set!(o.meaning_dim => c.model.meaning_dim);
        set!(o.form_dim => c.model.form_dim);
        set!(o.lambda_adv => c.train.weights.lambda_adv);
        set!(o.lambda_motiv => c.train.weights.lambda_motiv);
        set!(o.lambda_f => c.train.weights.lambda_f);
        set!(o.epochs => c.train.epochs);
        set!(o.batch_size => c.train.batch_size);
        if o.corpus.is_some() {
            c.corpus = o.corpus;
        }
        if o.run.is_some() {
            c.run = o.run;
        }
        if o.out.is_some() {
            c.out = o.out;
        }
        if o.embeddings.is_some() {
            c.embeddings = o.embeddings;
        }
        if let Some(k) = o.form_avg_k {
            c.transfer.form_avg_k = Some(k);
            c.eval.k = k;
        }
        if o.form_from.is_some() {
            c.transfer.form_from = o.form_from;
        }
        if o.target.is_some() {
            c.transfer.target = o.target;
        }
        c.train.seed = c.seed;
        c.eval.seed = c.seed;
        c.classifier.seed = c.seed;
        c.lm.seed = c.seed;
        Ok(c)
    }

    /// Small budget for the end-to-end smoke run: 300 synthetic sentences
    /// per side and a few epochs per model.
    pub fn smoke() -> Self {
        let mut c = RunConfig::default();
        c.synth.n_per_register = 300;
        c.train.epochs = 3;
        c.classifier.epochs = 3;
        c.lm.epochs = 3;
        c.eval.probe_samples = 100;
        c
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(RESOLVED);
        let text = serde_json::to_string_pretty(self).expect("config is plain data");
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
