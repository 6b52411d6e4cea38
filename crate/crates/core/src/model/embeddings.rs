use std::path::Path;

use autodiff::Tensor;

use crate::error::{AdnetError, Result};
use crate::text::{Vocabulary, UNK};

/// Word vectors indexed by vocabulary id, used by the evaluation metrics and
/// by the form-dimension search.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    vectors: Tensor<f64>,
}

impl EmbeddingTable {
    pub fn new(vectors: Tensor<f64>) -> Self {
        assert_eq!(vectors.shape().len(), 2, "embedding table is a matrix");
        EmbeddingTable { vectors }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Ok(EmbeddingTable::new(Tensor::from_rows(rows)?))
    }

    pub fn len(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[1]
    }

    /// Vector for `id`; ids beyond the table fall back to the UNK row.
    pub fn row(&self, id: usize) -> &[f64] {
        if id < self.len() {
            self.vectors.row(id)
        } else {
            self.vectors.row(UNK.min(self.len() - 1))
        }
    }

    /// Reads a text embedding file with lines `token v1 … vd`, aligned to
    /// `vocab`. Vocabulary tokens missing from the file take the file's
    /// `<unk>` vector, or zeros when it has none.
    pub fn load_text(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AdnetError::io(path, e))?;
        let mut dim = None;
        let mut rows: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
        let mut unk = None;
        for (n, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(tok) = parts.next() else { continue };
            let vals: Vec<f64> = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| AdnetError::Config(format!("{}:{}: {e}", path.display(), n + 1)))?;
            if *dim.get_or_insert(vals.len()) != vals.len() {
                return Err(AdnetError::Config(format!("{}:{}: inconsistent dimension", path.display(), n + 1)));
            }
            if tok == "<unk>" {
                unk = Some(vals.clone());
            }
            if vocab.contains(tok) {
                rows[vocab.id(tok)] = Some(vals);
            }
        }
        let dim = dim.ok_or(AdnetError::Empty("embedding file"))?;
        let fallback = unk.unwrap_or_else(|| vec![0.0; dim]);
        let data: Vec<f64> = rows.into_iter().flat_map(|r| r.unwrap_or_else(|| fallback.clone())).collect();
        Ok(EmbeddingTable::new(Tensor::new(vec![vocab.len(), dim], data)?))
    }
}
