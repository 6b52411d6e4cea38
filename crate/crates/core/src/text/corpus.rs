use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::vocab::Vocabulary;
use super::Form;
use crate::error::{AdnetError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = AdnetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(AdnetError::UnknownSplit(other.to_string())),
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// 80/10/10 assignment from a hash of the line index. Line `i` of both
/// corpora lands in the same split, which keeps parallel pairs together.
pub fn split_of_line(line: usize) -> Split {
    match splitmix64(line as u64) % 1000 {
        0..=799 => Split::Train,
        800..=899 => Split::Valid,
        _ => Split::Test,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub ids: Vec<usize>,
    pub text: String,
    /// Zero-based line in the source file.
    pub line: usize,
}

/// One corpus partitioned into splits.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Side {
    pub train: Vec<Sentence>,
    pub valid: Vec<Sentence>,
    pub test: Vec<Sentence>,
}

impl Side {
    pub fn split(&self, split: Split) -> &[Sentence] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    fn split_mut(&mut self, split: Split) -> &mut Vec<Sentence> {
        match split {
            Split::Train => &mut self.train,
            Split::Valid => &mut self.valid,
            Split::Test => &mut self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusOptions {
    pub max_len: usize,
    pub min_frequency: usize,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions { max_len: 20, min_frequency: 2 }
    }
}

/// Lines of one corpus, each tagged with its split.
type Tagged = Vec<(usize, String, Split)>;

/// Corpora `X^a` and `X^b` numericalized over one shared vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusPair {
    pub vocab: Vocabulary,
    pub max_len: usize,
    pub a: Side,
    pub b: Side,
}

impl CorpusPair {
    /// Splits each corpus by line hash.
    pub fn from_lines<S: AsRef<str>>(a: &[S], b: &[S], opts: CorpusOptions) -> Result<Self> {
        let tag = |lines: &[S]| -> Tagged {
            lines.iter().enumerate().map(|(i, l)| (i, l.as_ref().to_string(), split_of_line(i))).collect()
        };
        Self::from_tagged(tag(a), tag(b), opts)
    }

    /// Uses caller-provided splits: `[train, valid, test]` for each corpus.
    pub fn from_split_lines<S: AsRef<str>>(a: [&[S]; 3], b: [&[S]; 3], opts: CorpusOptions) -> Result<Self> {
        let tag = |parts: [&[S]; 3]| -> Tagged {
            let mut out = Vec::new();
            for (split, lines) in Split::ALL.into_iter().zip(parts) {
                out.extend(lines.iter().enumerate().map(|(i, l)| (i, l.as_ref().to_string(), split)));
            }
            out
        };
        Self::from_tagged(tag(a), tag(b), opts)
    }

    fn from_tagged(a: Tagged, b: Tagged, opts: CorpusOptions) -> Result<Self> {
        if opts.max_len < 2 {
            return Err(AdnetError::Config(format!("max_len must be at least 2, got {}", opts.max_len)));
        }
        let train_text: Vec<&str> = a
            .iter()
            .chain(&b)
            .filter(|(_, l, s)| *s == Split::Train && !l.trim().is_empty())
            .map(|(_, l, _)| l.as_str())
            .collect();
        let vocab = Vocabulary::build(&train_text, opts.min_frequency)?;
        let numericalize = |lines: Tagged| {
            let mut side = Side::default();
            for (line, text, split) in lines {
                if text.trim().is_empty() {
                    continue;
                }
                let ids = vocab.encode(&text, opts.max_len);
                side.split_mut(split).push(Sentence { ids, text, line });
            }
            side
        };
        let (a, b) = (numericalize(a), numericalize(b));
        if a.is_empty() || b.is_empty() {
            return Err(AdnetError::Empty("corpus"));
        }
        Ok(CorpusPair { vocab, max_len: opts.max_len, a, b })
    }

    /// Reads `<prefix>.a.txt` / `<prefix>.b.txt`, or the explicit split files
    /// `<prefix>.a.train.txt`, `<prefix>.a.valid.txt`, `<prefix>.a.test.txt`
    /// (and likewise for `b`) when those exist.
    pub fn load(prefix: &Path, opts: CorpusOptions) -> Result<Self> {
        let path = |side: &str, split: Option<&str>| -> PathBuf {
            let base = prefix.as_os_str().to_string_lossy();
            match split {
                Some(s) => PathBuf::from(format!("{base}.{side}.{s}.txt")),
                None => PathBuf::from(format!("{base}.{side}.txt")),
            }
        };
        let explicit = Split::ALL.iter().all(|s| path("a", Some(s.name())).exists() && path("b", Some(s.name())).exists());
        if explicit {
            let read_all = |side: &str| -> Result<[Vec<String>; 3]> {
                Ok([
                    read_lines(&path(side, Some("train")))?,
                    read_lines(&path(side, Some("valid")))?,
                    read_lines(&path(side, Some("test")))?,
                ])
            };
            let (a, b) = (read_all("a")?, read_all("b")?);
            return Self::from_split_lines([&a[0][..], &a[1][..], &a[2][..]], [&b[0][..], &b[1][..], &b[2][..]], opts);
        }
        let a = read_lines(&path("a", None))?;
        let b = read_lines(&path("b", None))?;
        Self::from_lines(&a, &b, opts)
    }

    pub fn side(&self, form: Form) -> &Side {
        match form {
            Form::A => &self.a,
            Form::B => &self.b,
        }
    }

    pub fn sentences(&self, form: Form, split: Split) -> &[Sentence] {
        self.side(form).split(split)
    }
}

pub(crate) fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| AdnetError::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}
