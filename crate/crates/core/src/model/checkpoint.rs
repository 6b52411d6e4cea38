//! Checkpoint directories: `manifest.json` lists `{name, shape, dtype}` for
//! every tensor plus the model configuration; `weights.bin` holds the values
//! as little-endian `f32`, concatenated in manifest order.

use std::fs;
use std::path::Path;

use autodiff::{ParamStore, Scalar, Tensor};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{AdnetModel, ModelConfig};
use crate::error::{AdnetError, Result};
use crate::text::Vocabulary;

pub const MANIFEST: &str = "manifest.json";
pub const WEIGHTS: &str = "weights.bin";
pub const VOCAB: &str = "vocab.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest<C> {
    pub kind: String,
    pub config: C,
    pub tensors: Vec<TensorEntry>,
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| AdnetError::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| AdnetError::io(path, e))
}

pub(crate) fn read_json<V: DeserializeOwned>(path: &Path) -> Result<V> {
    let text = fs::read_to_string(path).map_err(|e| AdnetError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AdnetError::json(path, e))
}

pub(crate) fn f32_bytes<'a>(values: impl Iterator<Item = &'a [impl Scalar + 'a]>) -> Vec<u8> {
    let mut bytes = Vec::new();
    for chunk in values {
        for v in chunk {
            bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    bytes
}

pub(crate) fn f32_values(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect()
}

pub fn save_store<C: Serialize, T: Scalar>(dir: &Path, kind: &str, config: &C, store: &ParamStore<T>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| AdnetError::io(dir, e))?;
    let tensors = store
        .iter()
        .map(|(_, name, t)| TensorEntry { name: name.to_string(), shape: t.shape().to_vec(), dtype: "f32".into() })
        .collect();
    write_json(&dir.join(MANIFEST), &Manifest { kind: kind.to_string(), config, tensors })?;
    let bytes = f32_bytes(store.iter().map(|(_, _, t)| t.data()));
    let path = dir.join(WEIGHTS);
    fs::write(&path, bytes).map_err(|e| AdnetError::io(&path, e))
}

pub fn read_manifest<C: DeserializeOwned>(dir: &Path) -> Result<Manifest<C>> {
    read_json(&dir.join(MANIFEST))
}

/// Overwrites `store` with the checkpoint's values after checking that
/// names, shapes and the total byte length all agree.
pub fn load_into<C, T: Scalar>(dir: &Path, manifest: &Manifest<C>, store: &mut ParamStore<T>) -> Result<()> {
    let bad = |msg: String| AdnetError::Checkpoint { path: dir.to_path_buf(), msg };
    let path = dir.join(WEIGHTS);
    let bytes = fs::read(&path).map_err(|e| AdnetError::io(&path, e))?;
    let expected: usize = manifest.tensors.iter().map(|t| t.shape.iter().product::<usize>() * 4).sum();
    if bytes.len() != expected {
        return Err(bad(format!("{WEIGHTS} has {} bytes, manifest needs {expected}", bytes.len())));
    }
    if manifest.tensors.len() != store.len() {
        return Err(bad(format!("{} tensors in manifest, model has {}", manifest.tensors.len(), store.len())));
    }
    let values = f32_values(&bytes);
    let mut offset = 0;
    let ids: Vec<_> = store.ids().collect();
    for (entry, id) in manifest.tensors.iter().zip(ids) {
        if entry.dtype != "f32" {
            return Err(bad(format!("unsupported dtype {}", entry.dtype)));
        }
        if entry.name != store.name(id) || entry.shape != store.get(id).shape() {
            return Err(bad(format!(
                "tensor {} {:?} does not match model tensor {} {:?}",
                entry.name,
                entry.shape,
                store.name(id),
                store.get(id).shape()
            )));
        }
        let n: usize = entry.shape.iter().product();
        let data = values[offset..offset + n].iter().map(|&v| T::of(v as f64)).collect();
        *store.get_mut(id) = Tensor::new(entry.shape.clone(), data)?;
        offset += n;
    }
    Ok(())
}

pub fn save_vocab(dir: &Path, vocab: &Vocabulary) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| AdnetError::io(dir, e))?;
    write_json(&dir.join(VOCAB), vocab)
}

pub fn load_vocab(dir: &Path) -> Result<Vocabulary> {
    let mut v: Vocabulary = read_json(&dir.join(VOCAB))?;
    v.reindex();
    Ok(v)
}

const MODEL_KIND: &str = "adnet";

impl<T: Scalar> AdnetModel<T> {
    pub fn save(&self, dir: &Path) -> Result<()> {
        save_store(dir, MODEL_KIND, &self.config, &self.params)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest<ModelConfig> = read_manifest(dir)?;
        if manifest.kind != MODEL_KIND {
            return Err(AdnetError::Checkpoint { path: dir.to_path_buf(), msg: format!("expected an {MODEL_KIND} checkpoint, found {}", manifest.kind) });
        }
        let mut model = AdnetModel::new(manifest.config.clone(), 0)?;
        load_into(dir, &manifest, &mut model.params)?;
        Ok(model)
    }
}
