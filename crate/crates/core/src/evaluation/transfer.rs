//! Continuous-form transfer and embedding export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use autodiff::Scalar;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::par_chunks;
use crate::error::{AdnetError, Result};
use crate::model::{AdnetModel, LatentPair};
use crate::text::Form;
use crate::training::epoch_seed;

pub const DEFAULT_K: usize = 10;
const CHUNK: usize = 256;

/// Mean of the form vectors at `picks`. The vectors come from `f32`, so a
/// sum of `k` copies of one vector is exact in `f64` and averages back to
/// that vector exactly.
pub fn average_form(pool: &[Vec<f64>], picks: &[usize]) -> Vec<f64> {
    let mut sum = vec![0.0; pool[picks[0]].len()];
    for &i in picks {
        for (s, v) in sum.iter_mut().zip(&pool[i]) {
            *s += v;
        }
    }
    sum.into_iter().map(|s| s / picks.len() as f64).collect()
}

/// `k` distinct pool indices drawn uniformly with `seed`.
pub fn sample_pool(pool_len: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(AdnetError::Config("k must be at least 1".into()));
    }
    if pool_len < k {
        return Err(AdnetError::PoolTooSmall { pool: pool_len, k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample(&mut rng, pool_len, k).into_vec())
}

/// Form vectors of every sentence in `pool`.
pub fn pool_forms<T: Scalar>(model: &AdnetModel<T>, pool: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
    Ok(encode_parallel(model, pool)?.into_iter().map(|l| l.f).collect())
}

pub(crate) fn encode_parallel<T: Scalar>(model: &AdnetModel<T>, sentences: &[Vec<usize>]) -> Result<Vec<LatentPair>> {
    par_chunks(sentences, CHUNK, |chunk| model.encode_all(chunk))
}

pub(crate) fn greedy_parallel<T: Scalar>(model: &AdnetModel<T>, latents: &[LatentPair]) -> Result<Vec<Vec<usize>>> {
    par_chunks(latents, CHUNK, |chunk| model.greedy_all(chunk))
}

/// Greedy generation from the sentence's meaning vector and the mean form
/// vector of `k` sentences sampled from `opposite_pool` with `seed`.
pub fn continuous_form_transfer<T: Scalar>(
    model: &AdnetModel<T>,
    sentence: &[usize],
    opposite_pool: &[Vec<usize>],
    k: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let picks = sample_pool(opposite_pool.len(), k, seed)?;
    let chosen: Vec<Vec<usize>> = picks.iter().map(|&i| opposite_pool[i].clone()).collect();
    let forms = pool_forms(model, &chosen)?;
    let all: Vec<usize> = (0..k).collect();
    let m = model.encode(sentence)?.m;
    Ok(greedy_parallel(model, &[LatentPair { m, f: average_form(&forms, &all) }])?.remove(0))
}

/// [`continuous_form_transfer`] for many sources against one pool, encoded
/// once. Source `i` samples with seed `mix(seed, i)`, so results do not
/// depend on how the work is split.
pub fn transfer_all<T: Scalar>(model: &AdnetModel<T>, sources: &[Vec<usize>], opposite_pool: &[Vec<usize>], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if sources.is_empty() {
        return Ok(Vec::new());
    }
    sample_pool(opposite_pool.len(), k, seed)?;
    let forms = pool_forms(model, opposite_pool)?;
    let meanings = encode_parallel(model, sources)?;
    let mut latents = Vec::with_capacity(sources.len());
    for (i, l) in meanings.into_iter().enumerate() {
        let picks = sample_pool(forms.len(), k, epoch_seed(seed, i))?;
        latents.push(LatentPair { m: l.m, f: average_form(&forms, &picks) });
    }
    greedy_parallel(model, &latents)
}

/// One sentence to export.
pub struct ExportRow<'a> {
    pub form: Form,
    pub ids: &'a [usize],
    pub text: &'a str,
}

/// Writes `meaning.tsv`, `form.tsv` (one tab-separated row of floats per
/// sentence) and `labels.tsv` (form label and raw text) into `dir`.
pub fn export_embeddings<T: Scalar>(model: &AdnetModel<T>, rows: &[ExportRow<'_>], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| AdnetError::io(dir, e))?;
    let sentences: Vec<Vec<usize>> = rows.iter().map(|r| r.ids.to_vec()).collect();
    let latents = encode_parallel(model, &sentences)?;
    let table = |pick: &dyn Fn(&LatentPair) -> &[f64]| {
        let mut out = String::new();
        for l in &latents {
            let cells: Vec<String> = pick(l).iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join("\t"));
            out.push('\n');
        }
        out
    };
    let mut labels = String::new();
    for r in rows {
        let text = r.text.replace(['\t', '\n'], " ");
        let _ = writeln!(labels, "{}\t{}", r.form.tag(), text);
    }
    for (name, body) in [("meaning.tsv", table(&|l| &l.m)), ("form.tsv", table(&|l| &l.f)), ("labels.tsv", labels)] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| AdnetError::io(&path, e))?;
    }
    Ok(())
}
