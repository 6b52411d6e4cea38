//! Tokenization, vocabulary, two-corpus ingestion and batching.

mod batch;
mod corpus;
mod vocab;

pub use batch::{make_batches, Batch};
pub use corpus::{split_of_line, CorpusOptions, CorpusPair, Sentence, Side, Split};
pub use vocab::{tokenize, Vocabulary, BOS, EOS, PAD, RESERVED, UNK};

/// Form label of a sentence: which of the two corpora it comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Form {
    A,
    B,
}

impl Form {
    pub fn opposite(self) -> Form {
        match self {
            Form::A => Form::B,
            Form::B => Form::A,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Form::A => 0,
            Form::B => 1,
        }
    }

    pub fn from_index(i: usize) -> Form {
        if i == 0 {
            Form::A
        } else {
            Form::B
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Form::A => "a",
            Form::B => "b",
        }
    }
}
