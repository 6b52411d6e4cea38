//! Embedding-based metrics: pooled sentence vectors, content preservation,
//! and the linear-probe / silhouette separation diagnostics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::thread_pool;
use crate::error::{AdnetError, Result};
use crate::model::EmbeddingTable;
use crate::text::{BOS, EOS, PAD};

/// `[max; min; mean]` over the vectors, elementwise.
pub fn pool_sentence_embedding(vectors: &[&[f64]]) -> Result<Vec<f64>> {
    let first = vectors.first().ok_or(AdnetError::Empty("word vector sequence"))?;
    let d = first.len();
    let mut max = first.to_vec();
    let mut min = first.to_vec();
    let mut sum = vec![0.0; d];
    for v in vectors {
        if v.len() != d {
            return Err(AdnetError::Dimension { what: "word vector", expected: d, got: v.len() });
        }
        for i in 0..d {
            max[i] = max[i].max(v[i]);
            min[i] = min[i].min(v[i]);
            sum[i] += v[i];
        }
    }
    let n = vectors.len() as f64;
    max.extend(min);
    max.extend(sum.into_iter().map(|s| s / n));
    Ok(max)
}

/// Pooled embedding of a token sequence; `PAD`, `BOS` and `EOS` are not
/// words and are skipped. `None` when nothing is left.
pub fn pooled_sentence(ids: &[usize], embeddings: &EmbeddingTable) -> Option<Vec<f64>> {
    let rows: Vec<&[f64]> = ids.iter().filter(|&&id| !matches!(id, PAD | BOS | EOS)).map(|&id| embeddings.row(id)).collect();
    pool_sentence_embedding(&rows).ok()
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| dot / (na * nb))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContentScore {
    pub mean_cosine: f64,
    pub pairs: usize,
    /// Pairs left out because a pooled vector had zero norm (or no words).
    pub skipped: usize,
}

/// Mean cosine between pooled embeddings of aligned source/transferred
/// pairs.
pub fn content_preservation(source: &[Vec<usize>], transferred: &[Vec<usize>], embeddings: &EmbeddingTable) -> Result<ContentScore> {
    if source.len() != transferred.len() {
        return Err(AdnetError::Dimension { what: "aligned sentence pairs", expected: source.len(), got: transferred.len() });
    }
    if source.is_empty() {
        return Err(AdnetError::Empty("sentence pairs"));
    }
    let (mut sum, mut pairs) = (0.0, 0usize);
    for (s, t) in source.iter().zip(transferred) {
        let c = pooled_sentence(s, embeddings).zip(pooled_sentence(t, embeddings)).and_then(|(a, b)| cosine(&a, &b));
        if let Some(c) = c {
            sum += c;
            pairs += 1;
        }
    }
    let mean_cosine = if pairs == 0 { 0.0 } else { sum / pairs as f64 };
    Ok(ContentScore { mean_cosine, pairs, skipped: source.len() - pairs })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// 5-fold cross-validated accuracy of a linear softmax probe.
    pub accuracy: f64,
    pub silhouette: f64,
    /// Set when every row is identical and the silhouette is undefined
    /// (reported as 0).
    pub degenerate: bool,
}

const FOLDS: usize = 5;
const PROBE_SEED: u64 = 0x5eed_0f9a;

/// Linear-probe accuracy and silhouette of `vectors` grouped by `labels`.
pub fn separation_probe(vectors: &[Vec<f64>], labels: &[usize]) -> Result<ProbeReport> {
    if vectors.len() != labels.len() {
        return Err(AdnetError::Dimension { what: "probe labels", expected: vectors.len(), got: labels.len() });
    }
    let classes: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    if classes.len() < 2 {
        return Err(AdnetError::Config("separation probe needs at least two labels".into()));
    }
    let d = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != d) {
        return Err(AdnetError::Dimension { what: "probe vector", expected: d, got: v.len() });
    }
    // Dense class indices.
    let class_list: Vec<usize> = classes.into_iter().collect();
    let y: Vec<usize> = labels.iter().map(|l| class_list.binary_search(l).expect("present")).collect();
    let accuracy = cross_validated_accuracy(vectors, &y, class_list.len());
    let (silhouette, degenerate) = silhouette(vectors, &y, class_list.len());
    Ok(ProbeReport { accuracy, silhouette, degenerate })
}

fn cross_validated_accuracy(x: &[Vec<f64>], y: &[usize], k: usize) -> f64 {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(PROBE_SEED));
    let folds = FOLDS.min(n);
    let mut correct = 0usize;
    for fold in 0..folds {
        let test: Vec<usize> = (0..n).filter(|p| p % folds == fold).map(|p| order[p]).collect();
        let train: Vec<usize> = (0..n).filter(|p| p % folds != fold).map(|p| order[p]).collect();
        if train.is_empty() {
            continue;
        }
        let probe = SoftmaxProbe::fit(x, y, &train, k);
        correct += test.iter().filter(|&&i| probe.predict(&x[i]) == y[i]).count();
    }
    correct as f64 / n as f64
}

/// Multinomial logistic regression on standardized features, fitted by
/// full-batch gradient descent with a small L2 penalty.
struct SoftmaxProbe {
    mean: Vec<f64>,
    scale: Vec<f64>,
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl SoftmaxProbe {
    const STEPS: usize = 300;
    const LR: f64 = 0.5;
    const L2: f64 = 1e-4;

    fn fit(x: &[Vec<f64>], y: &[usize], rows: &[usize], k: usize) -> Self {
        let d = x[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for &r in rows {
            for j in 0..d {
                mean[j] += x[r][j] / n;
            }
        }
        let mut var = vec![0.0; d];
        for &r in rows {
            for j in 0..d {
                var[j] += (x[r][j] - mean[j]).powi(2) / n;
            }
        }
        let scale: Vec<f64> = var.iter().map(|v| if *v > 1e-12 { 1.0 / v.sqrt() } else { 0.0 }).collect();
        let z: Vec<Vec<f64>> = rows.iter().map(|&r| (0..d).map(|j| (x[r][j] - mean[j]) * scale[j]).collect()).collect();
        let mut w = vec![vec![0.0; d]; k];
        let mut b = vec![0.0; k];
        for _ in 0..Self::STEPS {
            let mut gw = vec![vec![0.0; d]; k];
            let mut gb = vec![0.0; k];
            for (zi, &r) in z.iter().zip(rows) {
                let p = softmax(&(0..k).map(|c| dot(&w[c], zi) + b[c]).collect::<Vec<_>>());
                for c in 0..k {
                    let e = p[c] - if y[r] == c { 1.0 } else { 0.0 };
                    gb[c] += e / n;
                    for j in 0..d {
                        gw[c][j] += e * zi[j] / n;
                    }
                }
            }
            for c in 0..k {
                b[c] -= Self::LR * gb[c];
                for j in 0..d {
                    w[c][j] -= Self::LR * (gw[c][j] + Self::L2 * w[c][j]);
                }
            }
        }
        SoftmaxProbe { mean, scale, w, b }
    }

    fn predict(&self, x: &[f64]) -> usize {
        let z: Vec<f64> = x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) * s).collect();
        let scores: Vec<f64> = self.w.iter().zip(&self.b).map(|(w, b)| dot(w, &z) + b).collect();
        crate::model::layers::argmax(&scores)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(s: &[f64]) -> Vec<f64> {
    let m = s.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean silhouette with Euclidean distance. Points alone in their cluster
/// and points with `a = b = 0` score 0.
fn silhouette(x: &[Vec<f64>], y: &[usize], k: usize) -> (f64, bool) {
    let n = x.len();
    let sizes = (0..k).map(|c| y.iter().filter(|&&l| l == c).count()).collect::<Vec<_>>();
    let scores: Vec<(f64, bool)> = thread_pool().install(|| {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut sums = vec![0.0; k];
                for j in 0..n {
                    if j != i {
                        sums[y[j]] += distance(&x[i], &x[j]);
                    }
                }
                let own = y[i];
                if sizes[own] < 2 {
                    return (0.0, sums.iter().all(|&s| s == 0.0));
                }
                let a = sums[own] / (sizes[own] - 1) as f64;
                let b = (0..k).filter(|&c| c != own && sizes[c] > 0).map(|c| sums[c] / sizes[c] as f64).fold(f64::INFINITY, f64::min);
                let m = a.max(b);
                if m == 0.0 {
                    (0.0, true)
                } else {
                    ((b - a) / m, false)
                }
            })
            .collect()
    });
    let degenerate = scores.iter().all(|s| s.1);
    (scores.iter().map(|s| s.0).sum::<f64>() / n as f64, degenerate)
}
