//! Form dimensions of a word-embedding space and the form-stripped
//! meaning target `u` consumed by the form discriminator.

use super::EmbeddingTable;
use crate::error::{AdnetError, Result};
use crate::text::{CorpusPair, Form, Split, BOS, EOS, PAD};

fn is_word(id: usize) -> bool {
    !matches!(id, PAD | BOS | EOS)
}

fn mean_embedding<'a>(table: &EmbeddingTable, ids: impl Iterator<Item = &'a usize>) -> Option<Vec<f64>> {
    let mut sum = vec![0.0; table.dim()];
    let mut n = 0usize;
    for &id in ids {
        for (s, v) in sum.iter_mut().zip(table.row(id)) {
            *s += v;
        }
        n += 1;
    }
    (n > 0).then(|| sum.into_iter().map(|s| s / n as f64).collect())
}

/// Indices of the `n_dims` embedding dimensions where the mean word vector
/// of corpus a differs most from that of corpus b (training split),
/// ordered by descending absolute difference.
pub fn find_form_dimensions(corpus: &CorpusPair, embeddings: &EmbeddingTable, n_dims: usize) -> Result<Vec<usize>> {
    if n_dims == 0 || n_dims > embeddings.dim() {
        return Err(AdnetError::Config(format!("n_dims must be in 1..={}, got {n_dims}", embeddings.dim())));
    }
    let mean = |form| {
        let sentences = corpus.sentences(form, Split::Train);
        mean_embedding(embeddings, sentences.iter().flat_map(|s| s.ids.iter()).filter(|&&id| is_word(id)))
            .ok_or(AdnetError::Empty("corpus"))
    };
    let (ma, mb) = (mean(Form::A)?, mean(Form::B)?);
    let diff: Vec<f64> = ma.iter().zip(&mb).map(|(a, b)| (a - b).abs()).collect();
    let mut dims: Vec<usize> = (0..diff.len()).collect();
    dims.sort_by(|&i, &j| diff[j].total_cmp(&diff[i]).then(i.cmp(&j)));
    dims.truncate(n_dims);
    Ok(dims)
}

/// Mean embedding of the sentence after dropping the `k_discard` tokens with
/// the largest and the `k_discard` with the smallest summed value over
/// `form_dims`. Sentences with at most `2·k_discard` words keep all words.
pub fn form_target_u(sentence: &[usize], embeddings: &EmbeddingTable, form_dims: &[usize], k_discard: usize) -> Result<Vec<f64>> {
    let words: Vec<usize> = sentence.iter().copied().filter(|&id| is_word(id)).collect();
    if words.is_empty() {
        return Err(AdnetError::Empty("sentence"));
    }
    if words.len() <= 2 * k_discard {
        return Ok(mean_embedding(embeddings, words.iter()).expect("non-empty"));
    }
    let score = |id: usize| form_dims.iter().map(|&d| embeddings.row(id)[d]).sum::<f64>();
    let mut ranked: Vec<(f64, usize)> = words.iter().map(|&id| (score(id), id)).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    let kept: Vec<usize> = ranked[k_discard..ranked.len() - k_discard].iter().map(|&(_, id)| id).collect();
    Ok(mean_embedding(embeddings, kept.iter()).expect("non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::CorpusOptions;

    /// Vocabulary "<pad> <bos> <eos> <unk> p q r s" with hand-set vectors.
    fn toy() -> (CorpusPair, EmbeddingTable) {
        let a = vec!["p q".to_string(), "p r".to_string()];
        let b = vec!["s q".to_string(), "s r".to_string()];
        let c = CorpusPair::from_split_lines([&a[..], &a[..0], &a[..0]], [&b[..], &b[..0], &b[..0]], CorpusOptions { max_len: 20, min_frequency: 1 })
            .unwrap();
        let mut rows = vec![vec![0.0; 3]; c.vocab.len()];
        rows[c.vocab.id("p")] = vec![1.0, 2.0, 5.0];
        rows[c.vocab.id("s")] = vec![1.0, 2.0, -5.0];
        rows[c.vocab.id("q")] = vec![0.5, 0.0, 0.0];
        rows[c.vocab.id("r")] = vec![0.0, 0.5, 0.0];
        (c, EmbeddingTable::from_rows(&rows).unwrap())
    }

    #[test]
    fn toy_form_dimension() {
        let (c, e) = toy();
        // Brute force: mean over a = (0.75, 1.25, 2.5), over b = (0.75, 1.25, -2.5).
        assert_eq!(find_form_dimensions(&c, &e, 1).unwrap(), vec![2]);
        let all = find_form_dimensions(&c, &e, 3).unwrap();
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2]);
        assert_eq!(all[0], 2);
    }

    #[test]
    fn swapping_corpora_gives_same_dims() {
        let (c, e) = toy();
        let swapped = CorpusPair { a: c.b.clone(), b: c.a.clone(), ..c.clone() };
        assert_eq!(find_form_dimensions(&c, &e, 3).unwrap(), find_form_dimensions(&swapped, &e, 3).unwrap());
    }

    #[test]
    fn identical_corpora_still_return_dims() {
        let (c, e) = toy();
        let same = CorpusPair { b: c.a.clone(), ..c.clone() };
        assert_eq!(find_form_dimensions(&same, &e, 2).unwrap().len(), 2);
        assert!(find_form_dimensions(&same, &e, 0).is_err());
        assert!(find_form_dimensions(&same, &e, 4).is_err());
    }

    #[test]
    fn u_vector_cases() {
        let rows: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64, (10 * i) as f64]).collect();
        let e = EmbeddingTable::from_rows(&rows).unwrap();
        // k = 0: plain mean.
        let u = form_target_u(&[4, 5, 6, EOS], &e, &[0], 0).unwrap();
        assert_eq!(u, vec![5.0, 50.0]);
        // One word falls back to that word.
        assert_eq!(form_target_u(&[7, EOS], &e, &[0], 2).unwrap(), vec![7.0, 70.0]);
        // Five words, dim 0 ranking 4 < 5 < 6 < 7 < 8 given out of order;
        // dropping one from each end leaves 5, 6, 7.
        let u = form_target_u(&[8, 5, 4, 7, 6, EOS], &e, &[0], 1).unwrap();
        assert_eq!(u, vec![6.0, 60.0]);
        assert!(form_target_u(&[EOS], &e, &[0], 1).is_err());
    }
}
