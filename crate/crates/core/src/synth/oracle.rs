//! Inverse map from surface text back to templates, and the oracle scores
//! for transferred sentences.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Element, RegisterSpec, SlotClass, Symbol};
use crate::error::{AdnetError, Result};
use crate::text::{tokenize, Form};

struct Inverse<'s> {
    spec: &'s RegisterSpec,
    tokens: HashMap<&'s str, Symbol>,
    templates: HashMap<&'s [Element], usize>,
}

impl<'s> Inverse<'s> {
    fn new(spec: &'s RegisterSpec) -> Self {
        let mut tokens = HashMap::new();
        for (i, l) in spec.lexemes.iter().enumerate() {
            tokens.insert(l.a.as_str(), Symbol::Lexeme(i));
            tokens.insert(l.b.as_str(), Symbol::Lexeme(i));
        }
        for (c, (a, b)) in spec.function_words.iter().enumerate() {
            tokens.insert(a.as_str(), Symbol::Func(c));
            tokens.insert(b.as_str(), Symbol::Func(c));
        }
        for (p, s) in spec.punctuation.iter().enumerate() {
            tokens.insert(s.as_str(), Symbol::Punct(p));
        }
        let templates = spec.templates.iter().enumerate().map(|(i, t)| (t.as_slice(), i)).collect();
        Inverse { spec, tokens, templates }
    }

    fn parse(&self, text: &str) -> Option<usize> {
        let mut pattern = Vec::new();
        for tok in tokenize(text) {
            let e = match *self.tokens.get(tok.as_str())? {
                Symbol::Lexeme(i) => Element::Slot(self.spec.lexemes[i].class),
                Symbol::Func(c) => Element::Func(c),
                Symbol::Punct(p) => Element::Punct(p),
            };
            pattern.push(e);
        }
        // Undo adverb fronting: templates keep the adverb before the final
        // punctuation and never start with one.
        if pattern.first() == Some(&Element::Slot(SlotClass::Adv)) {
            let adv = pattern.remove(0);
            let at = if matches!(pattern.last(), Some(Element::Punct(_))) { pattern.len() - 1 } else { pattern.len() };
            pattern.insert(at, adv);
        }
        self.templates.get(pattern.as_slice()).copied()
    }
}

/// Template id of `text` in either register, if it parses.
pub fn parse_template(spec: &RegisterSpec, text: &str) -> Option<usize> {
    Inverse::new(spec).parse(text)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub n: usize,
    pub meaning_match: f64,
    pub form_match: f64,
    /// Indices that did not parse to any template or had no aligned
    /// generation; they count as meaning mismatches.
    pub flagged: Vec<usize>,
}

/// Scores `generated[i]`, meant to carry the meaning of a source with
/// template `source_templates[i]` in register `target`.
///
/// Meaning matches when the generation parses to the source template. Form
/// matches when every token belongs to the target register's lexicon and
/// at least one of them is absent from the other register's.
pub fn oracle_scores<S: AsRef<str>>(spec: &RegisterSpec, generated: &[S], source_templates: &[usize], target: Form) -> Result<OracleReport> {
    if source_templates.is_empty() {
        return Err(AdnetError::Empty("ground truth"));
    }
    let inverse = Inverse::new(spec);
    let own = spec.lexicon(target);
    let other = spec.lexicon(target.opposite());
    let form_ok = |text: &str| {
        let toks = tokenize(text);
        !toks.is_empty() && toks.iter().all(|t| own.contains(t)) && toks.iter().any(|t| !other.contains(t))
    };
    let (mut meaning, mut form) = (0usize, 0usize);
    let mut flagged = Vec::new();
    for (i, &template) in source_templates.iter().enumerate() {
        let Some(text) = generated.get(i).map(AsRef::as_ref) else {
            flagged.push(i);
            continue;
        };
        match inverse.parse(text) {
            Some(t) if t == template => meaning += 1,
            Some(_) => {}
            None => flagged.push(i),
        }
        if form_ok(text) {
            form += 1;
        }
    }
    flagged.extend(source_templates.len()..generated.len());
    let n = source_templates.len();
    Ok(OracleReport { n, meaning_match: meaning as f64 / n as f64, form_match: form as f64 / n as f64, flagged })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub form: Form,
    pub line: usize,
    pub template: usize,
}

/// Reads a `side, line, template_id` TSV written by [`super::SyntheticCorpus::write`].
pub fn read_truth(path: &Path) -> Result<Vec<TruthRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| AdnetError::io(path, e))?;
    let bad = |n: usize, msg: &str| AdnetError::Config(format!("{}:{}: {msg}", path.display(), n + 1));
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(bad(n, "expected 3 columns"));
        }
        let form = match cols[0] {
            "a" => Form::A,
            "b" => Form::B,
            _ => return Err(bad(n, "side must be a or b")),
        };
        let line_no = cols[1].parse().map_err(|_| bad(n, "bad line index"))?;
        let template = cols[2].parse().map_err(|_| bad(n, "bad template id"))?;
        rows.push(TruthRow { form, line: line_no, template });
    }
    Ok(rows)
}
