//! Paired synthetic registers with known meaning labels.
//!
//! A register realizes abstract templates (function-word concepts, slot
//! classes and punctuation) through its own lexicon. Meaning is the template
//! id; form is the register. Both registers see every template equally often.

mod oracle;

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use oracle::{oracle_scores, parse_template, read_truth, OracleReport, TruthRow};

use crate::error::{AdnetError, Result};
use crate::text::{tokenize, CorpusOptions, CorpusPair, Form};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SlotClass {
    Noun,
    Verb,
    Adj,
    Adv,
}

impl SlotClass {
    pub const ALL: [SlotClass; 4] = [SlotClass::Noun, SlotClass::Verb, SlotClass::Adj, SlotClass::Adv];
}

/// One position of a template.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    /// Function-word concept, realized per register.
    Func(usize),
    Slot(SlotClass),
    Punct(usize),
}

/// A slot word and its two surface realizations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lexeme {
    pub class: SlotClass,
    pub a: String,
    pub b: String,
}

impl Lexeme {
    pub fn realize(&self, form: Form) -> &str {
        match form {
            Form::A => &self.a,
            Form::B => &self.b,
        }
    }

    pub fn is_shared(&self) -> bool {
        self.a == self.b
    }
}

/// Templates and per-register realization maps. Templates are written in
/// register b's word order, with any adverb slot just before the final
/// punctuation; register a fronts it when `adverb_fronting` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegisterSpec {
    pub templates: Vec<Vec<Element>>,
    pub lexemes: Vec<Lexeme>,
    /// `(a, b)` realization of each function-word concept.
    pub function_words: Vec<(String, String)>,
    pub punctuation: Vec<String>,
    pub adverb_fronting: bool,
}

const NOUNS: [&str; 24] = [
    "knight", "king", "queen", "sword", "horse", "castle", "lady", "river", "forest", "crown", "letter", "garden", "battle",
    "tower", "servant", "ship", "wine", "song", "bread", "ring", "shield", "bridge", "field", "candle",
];
const VERBS: [&str; 16] = [
    "ride", "sing", "keep", "seek", "love", "find", "hold", "bring", "take", "send", "break", "carry", "guard", "watch",
    "praise", "fear",
];
const ADJS: [&str; 12] = ["fine", "swift", "old", "bright", "noble", "dark", "cold", "brave", "gentle", "proud", "quiet", "strange"];
const ADVS: [&str; 8] = ["slowly", "gladly", "boldly", "softly", "quickly", "sadly", "loudly", "calmly"];
const FUNCTION_WORDS: [(&str, &str); 20] = [
    ("aye", "yes"),
    ("nay", "no"),
    ("thou", "you"),
    ("thy", "your"),
    ("hath", "has"),
    ("doth", "does"),
    ("art", "are"),
    ("shall", "will"),
    ("ere", "before"),
    ("wherefore", "why"),
    ("hither", "here"),
    ("oft", "often"),
    ("whilst", "while"),
    ("prithee", "please"),
    ("methinks", "apparently"),
    ("anon", "soon"),
    ("mine", "my"),
    ("sirrah", "mister"),
    ("hence", "away"),
    ("verily", "truly"),
];
const PUNCTUATION: [&str; 3] = [".", "?", "!"];

/// Register-a spelling of a slot word that is not shared.
fn archaic(class: SlotClass, word: &str) -> String {
    match class {
        SlotClass::Noun if word.ends_with('e') => format!("{word}n"),
        SlotClass::Noun => format!("{word}e"),
        SlotClass::Verb if word.ends_with('e') => format!("{word}th"),
        SlotClass::Verb => format!("{word}eth"),
        SlotClass::Adj => format!("y{word}"),
        SlotClass::Adv => format!("{}lie", word.trim_end_matches("ly")),
    }
}

const TEMPLATE_SEED: u64 = 0x7e3a_11c5;

fn make_templates(n: usize, n_concepts: usize, n_punct: usize) -> Vec<Vec<Element>> {
    let mut rng = ChaCha8Rng::seed_from_u64(TEMPLATE_SEED);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    let core_classes = [SlotClass::Noun, SlotClass::Verb, SlotClass::Adj];
    while out.len() < n {
        let len = rng.gen_range(2..=5);
        let mut t: Vec<Element> = (0..len)
            .map(|_| {
                if rng.gen_bool(0.4) {
                    Element::Func(rng.gen_range(0..n_concepts))
                } else {
                    Element::Slot(*core_classes.choose(&mut rng).expect("non-empty"))
                }
            })
            .collect();
        let has_func = t.iter().any(|e| matches!(e, Element::Func(_)));
        let has_slot = t.iter().any(|e| matches!(e, Element::Slot(_)));
        if !has_func || !has_slot {
            continue;
        }
        if rng.gen_bool(0.5) {
            t.push(Element::Slot(SlotClass::Adv));
        }
        t.push(Element::Punct(rng.gen_range(0..n_punct)));
        if seen.insert(t.clone()) {
            out.push(t);
        }
    }
    out
}

impl RegisterSpec {
    /// The standard spec: 30 templates, 60 slot words of which a fraction
    /// `overlap` (per class, rounded) is spelled the same in both registers,
    /// 20 register-specific function words per side and adverb fronting in a.
    pub fn standard(overlap: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&overlap) {
            return Err(AdnetError::Spec(format!("overlap must be in [0, 1], got {overlap}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(TEMPLATE_SEED ^ 1);
        let mut lexemes = Vec::new();
        for (class, words) in [(SlotClass::Noun, &NOUNS[..]), (SlotClass::Verb, &VERBS), (SlotClass::Adj, &ADJS), (SlotClass::Adv, &ADVS)] {
            let n_shared = (overlap * words.len() as f64).round() as usize;
            let mut order: Vec<usize> = (0..words.len()).collect();
            order.shuffle(&mut rng);
            let shared: BTreeSet<usize> = order[..n_shared].iter().copied().collect();
            for (i, w) in words.iter().enumerate() {
                let a = if shared.contains(&i) { w.to_string() } else { archaic(class, w) };
                lexemes.push(Lexeme { class, a, b: w.to_string() });
            }
        }
        let spec = RegisterSpec {
            templates: make_templates(30, FUNCTION_WORDS.len(), PUNCTUATION.len()),
            lexemes,
            function_words: FUNCTION_WORDS.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            punctuation: PUNCTUATION.iter().map(|p| p.to_string()).collect(),
            adverb_fronting: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Both registers realize everything identically.
    pub fn identity() -> Self {
        let mut spec = RegisterSpec::standard(1.0).expect("standard spec is consistent");
        for fw in &mut spec.function_words {
            fw.0 = fw.1.clone();
        }
        spec.adverb_fronting = false;
        spec
    }

    /// Fraction of slot words spelled the same in both registers.
    pub fn overlap(&self) -> f64 {
        self.lexemes.iter().filter(|l| l.is_shared()).count() as f64 / self.lexemes.len().max(1) as f64
    }

    pub fn lexemes_of(&self, class: SlotClass) -> Vec<usize> {
        (0..self.lexemes.len()).filter(|&i| self.lexemes[i].class == class).collect()
    }

    /// Checks that every template element has a realization and that no
    /// surface token stands for two different abstract symbols.
    pub fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(AdnetError::Spec("no templates".into()));
        }
        for (i, t) in self.templates.iter().enumerate() {
            for e in t {
                match *e {
                    Element::Func(c) if c >= self.function_words.len() => {
                        return Err(AdnetError::Spec(format!("template {i} uses function concept {c} without a realization")));
                    }
                    Element::Punct(p) if p >= self.punctuation.len() => {
                        return Err(AdnetError::Spec(format!("template {i} uses punctuation {p} without a realization")));
                    }
                    Element::Slot(class) if self.lexemes_of(class).is_empty() => {
                        return Err(AdnetError::Spec(format!("template {i} uses slot {class:?} without a realization")));
                    }
                    _ => {}
                }
            }
        }
        let mut all: Vec<(String, Symbol)> = Vec::new();
        for (i, l) in self.lexemes.iter().enumerate() {
            all.push((l.a.clone(), Symbol::Lexeme(i)));
            all.push((l.b.clone(), Symbol::Lexeme(i)));
        }
        for (c, (a, b)) in self.function_words.iter().enumerate() {
            all.push((a.clone(), Symbol::Func(c)));
            all.push((b.clone(), Symbol::Func(c)));
        }
        for (p, s) in self.punctuation.iter().enumerate() {
            all.push((s.clone(), Symbol::Punct(p)));
        }
        let mut owner: HashMap<String, Symbol> = HashMap::new();
        for (tok, sym) in all {
            if tokenize(&tok) != [tok.clone()] {
                return Err(AdnetError::Spec(format!("realization `{tok}` must be a single lowercase token")));
            }
            if let Some(prev) = owner.insert(tok.clone(), sym) {
                if prev != sym {
                    return Err(AdnetError::Spec(format!("token `{tok}` realizes two different symbols")));
                }
            }
        }
        Ok(())
    }

    /// Surface sentence for `template` with slot words `fills` (lexeme
    /// indices, in slot order) in register `form`.
    pub fn realize(&self, template: usize, fills: &[usize], form: Form) -> Result<String> {
        let t = self.templates.get(template).ok_or_else(|| AdnetError::Spec(format!("no template {template}")))?;
        let mut words: Vec<&str> = Vec::with_capacity(t.len());
        let mut fill = fills.iter();
        let mut fronted = None;
        for e in t {
            let w = match *e {
                Element::Func(c) => {
                    let (a, b) = &self.function_words[c];
                    if form == Form::A { a.as_str() } else { b.as_str() }
                }
                Element::Punct(p) => self.punctuation[p].as_str(),
                Element::Slot(class) => {
                    let &i = fill.next().ok_or_else(|| AdnetError::Spec(format!("template {template} needs more slot fills")))?;
                    let lex = self.lexemes.get(i).filter(|l| l.class == class).ok_or_else(|| {
                        AdnetError::Spec(format!("fill {i} is not a {class:?} lexeme"))
                    })?;
                    let w = lex.realize(form);
                    if class == SlotClass::Adv && form == Form::A && self.adverb_fronting {
                        fronted = Some(w);
                        continue;
                    }
                    w
                }
            };
            words.push(w);
        }
        if let Some(adv) = fronted {
            words.insert(0, adv);
        }
        Ok(words.join(" "))
    }

    /// Token set of a register's lexicon.
    pub fn lexicon(&self, form: Form) -> BTreeSet<String> {
        let pick = |a: &String, b: &String| if form == Form::A { a.clone() } else { b.clone() };
        let mut set: BTreeSet<String> = self.lexemes.iter().map(|l| pick(&l.a, &l.b)).collect();
        set.extend(self.function_words.iter().map(|(a, b)| pick(a, b)));
        set.extend(self.punctuation.iter().cloned());
        set
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub(crate) enum Symbol {
    Lexeme(usize),
    Func(usize),
    Punct(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSentence {
    pub text: String,
    pub template: usize,
    pub fills: Vec<usize>,
}

/// Generated corpora with hidden ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub spec: RegisterSpec,
    pub a: Vec<SyntheticSentence>,
    pub b: Vec<SyntheticSentence>,
}

/// `n_per_register` sentences per register. Each side cycles through all
/// templates equally often in shuffled order and draws slot words
/// uniformly; the two sides use independent streams, so they are not
/// parallel.
pub fn generate_corpora(spec: &RegisterSpec, n_per_register: usize, seed: u64) -> Result<SyntheticCorpus> {
    if n_per_register == 0 {
        return Err(AdnetError::Config("n_per_register must be at least 1".into()));
    }
    spec.validate()?;
    let side = |form: Form| -> Result<Vec<SyntheticSentence>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(form.index() as u64 + 1);
        let mut labels: Vec<usize> = (0..n_per_register).map(|i| i % spec.templates.len()).collect();
        labels.shuffle(&mut rng);
        labels
            .into_iter()
            .map(|template| {
                let fills: Vec<usize> = spec.templates[template]
                    .iter()
                    .filter_map(|e| match e {
                        Element::Slot(class) => Some(*spec.lexemes_of(*class).choose(&mut rng).expect("validated")),
                        _ => None,
                    })
                    .collect();
                let text = spec.realize(template, &fills, form)?;
                Ok(SyntheticSentence { text, template, fills })
            })
            .collect()
    };
    Ok(SyntheticCorpus { spec: spec.clone(), a: side(Form::A)?, b: side(Form::B)? })
}

impl SyntheticCorpus {
    pub fn side(&self, form: Form) -> &[SyntheticSentence] {
        match form {
            Form::A => &self.a,
            Form::B => &self.b,
        }
    }

    pub fn lines(&self, form: Form) -> Vec<String> {
        self.side(form).iter().map(|s| s.text.clone()).collect()
    }

    pub fn labels(&self, form: Form) -> Vec<usize> {
        self.side(form).iter().map(|s| s.template).collect()
    }

    /// Splits by line hash, like files loaded from disk.
    pub fn corpus_pair(&self, opts: CorpusOptions) -> Result<CorpusPair> {
        CorpusPair::from_lines(&self.lines(Form::A), &self.lines(Form::B), opts)
    }

    /// Writes `<name>.a.txt`, `<name>.b.txt` and `<name>.truth.tsv` into `dir`
    /// and returns the path prefix `dir/<name>`.
    pub fn write(&self, dir: &Path, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| AdnetError::io(dir, e))?;
        let prefix = dir.join(name);
        for form in [Form::A, Form::B] {
            let path = dir.join(format!("{name}.{}.txt", form.tag()));
            let mut text = self.lines(form).join("\n");
            text.push('\n');
            fs::write(&path, text).map_err(|e| AdnetError::io(&path, e))?;
        }
        let mut tsv = String::from("side\tline\ttemplate_id\n");
        for form in [Form::A, Form::B] {
            for (i, s) in self.side(form).iter().enumerate() {
                tsv.push_str(&format!("{}\t{i}\t{}\n", form.tag(), s.template));
            }
        }
        let path = dir.join(format!("{name}.truth.tsv"));
        fs::write(&path, tsv).map_err(|e| AdnetError::io(&path, e))?;
        Ok(prefix)
    }
}
