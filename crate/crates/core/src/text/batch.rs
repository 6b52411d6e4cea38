use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::corpus::{CorpusPair, Split};
use super::vocab::{EOS, PAD};
use super::Form;
use crate::error::{AdnetError, Result};

/// Right-padded token matrix, `batch × time`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub tokens: Vec<usize>,
    pub batch: usize,
    pub time: usize,
    pub lengths: Vec<usize>,
    pub labels: Vec<Form>,
}

impl Batch {
    pub fn new(seqs: &[&[usize]], labels: Vec<Form>) -> Result<Self> {
        if seqs.is_empty() {
            return Err(AdnetError::Empty("batch"));
        }
        if seqs.iter().any(|s| s.is_empty()) {
            return Err(AdnetError::Empty("sentence"));
        }
        assert_eq!(seqs.len(), labels.len(), "one label per sequence");
        let time = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut tokens = vec![PAD; seqs.len() * time];
        for (r, s) in seqs.iter().enumerate() {
            tokens[r * time..r * time + s.len()].copy_from_slice(s);
        }
        Ok(Batch { tokens, batch: seqs.len(), time, lengths: seqs.iter().map(|s| s.len()).collect(), labels })
    }

    pub fn uniform(seqs: &[&[usize]], form: Form) -> Result<Self> {
        Batch::new(seqs, vec![form; seqs.len()])
    }

    pub fn token(&self, row: usize, t: usize) -> usize {
        self.tokens[row * self.time + t]
    }

    /// The unpadded sequence of a row.
    pub fn sequence(&self, row: usize) -> &[usize] {
        &self.tokens[row * self.time..row * self.time + self.lengths[row]]
    }

    /// Tokens at time step `t` for every row (PAD past a row's end).
    pub fn column(&self, t: usize) -> Vec<usize> {
        (0..self.batch).map(|r| self.token(r, t)).collect()
    }

    pub fn num_tokens(&self) -> usize {
        self.lengths.iter().sum()
    }

    /// Stacks two batches, re-padding to the longer time dimension.
    pub fn concat(&self, other: &Batch) -> Batch {
        let seqs: Vec<&[usize]> = (0..self.batch).map(|r| self.sequence(r)).chain((0..other.batch).map(|r| other.sequence(r))).collect();
        let labels = self.labels.iter().chain(&other.labels).copied().collect();
        Batch::new(&seqs, labels).expect("both inputs are valid batches")
    }

    /// Every row ends in EOS and is padded only after it.
    pub fn is_well_formed(&self) -> bool {
        (0..self.batch).all(|r| {
            let len = self.lengths[r];
            len >= 1
                && len <= self.time
                && self.token(r, len - 1) == EOS
                && self.sequence(r).iter().all(|&id| id != PAD)
                && (len..self.time).all(|t| self.token(r, t) == PAD)
        })
    }
}

/// One epoch of batches for `split`, alternating `a, b, a, b, …`.
///
/// Both corpora are cut into the same number of batches, `max(⌈n_a/bs⌉, ⌈n_b/bs⌉)`,
/// with near-equal sizes no larger than `batch_size`, so every training step
/// can pair one a-batch with one b-batch. When one corpus has fewer
/// sentences than batches its shuffled order is cycled.
pub fn make_batches(corpus: &CorpusPair, split: Split, batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(AdnetError::Config("batch_size must be at least 1".into()));
    }
    let sa = corpus.sentences(Form::A, split);
    let sb = corpus.sentences(Form::B, split);
    if sa.is_empty() || sb.is_empty() {
        return Err(AdnetError::Empty("split"));
    }
    let n_batches = sa.len().div_ceil(batch_size).max(sb.len().div_ceil(batch_size));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = |n: usize| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        idx
    };
    let (oa, ob) = (order(sa.len()), order(sb.len()));
    let chunks = |ord: &[usize]| -> Vec<Vec<usize>> {
        let n = ord.len().max(n_batches);
        (0..n_batches)
            .map(|k| (k * n / n_batches..(k + 1) * n / n_batches).map(|i| ord[i % ord.len()]).collect())
            .collect()
    };
    let (ca, cb) = (chunks(&oa), chunks(&ob));
    let mut out = Vec::with_capacity(2 * n_batches);
    for (ia, ib) in ca.iter().zip(&cb) {
        let rows = |s: &[super::corpus::Sentence], idx: &[usize]| idx.iter().map(|&i| s[i].ids.clone()).collect::<Vec<_>>();
        let (ra, rb) = (rows(sa, ia), rows(sb, ib));
        out.push(Batch::uniform(&ra.iter().map(Vec::as_slice).collect::<Vec<_>>(), Form::A)?);
        out.push(Batch::uniform(&rb.iter().map(Vec::as_slice).collect::<Vec<_>>(), Form::B)?);
    }
    Ok(out)
}
