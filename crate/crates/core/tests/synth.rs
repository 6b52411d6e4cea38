use std::collections::{BTreeMap, BTreeSet, HashMap};

use adnet::synth::{generate_corpora, oracle_scores, parse_template, read_truth, Element, RegisterSpec, SlotClass};
use adnet::text::{tokenize, CorpusOptions, Form, Split};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn standard_spec_shape() {
    let spec = RegisterSpec::standard(0.3).unwrap();
    assert_eq!(spec.templates.len(), 30);
    assert_eq!(spec.lexemes.len(), 60);
    assert_eq!(spec.function_words.len(), 20);
    assert!((spec.overlap() - 0.3).abs() < 1e-12);
    let unique: BTreeSet<_> = spec.templates.iter().collect();
    assert_eq!(unique.len(), 30);
    for t in &spec.templates {
        assert!(t.iter().any(|e| matches!(e, Element::Func(_))));
        assert!(t.iter().any(|e| matches!(e, Element::Slot(_))));
        assert_ne!(t[0], Element::Slot(SlotClass::Adv));
    }
}

#[test]
fn vocabulary_size_near_150() {
    let spec = RegisterSpec::standard(0.3).unwrap();
    let corpus = generate_corpora(&spec, 2000, 1).unwrap();
    let pair = corpus.corpus_pair(CorpusOptions::default()).unwrap();
    assert!((130..=170).contains(&pair.vocab.len()), "{}", pair.vocab.len());
}

#[test]
fn same_seed_same_files() {
    let spec = RegisterSpec::standard(0.3).unwrap();
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    generate_corpora(&spec, 200, 9).unwrap().write(d1.path(), "toy").unwrap();
    generate_corpora(&spec, 200, 9).unwrap().write(d2.path(), "toy").unwrap();
    for f in ["toy.a.txt", "toy.b.txt", "toy.truth.tsv"] {
        assert_eq!(std::fs::read(d1.path().join(f)).unwrap(), std::fs::read(d2.path().join(f)).unwrap(), "{f}");
    }
    let other = generate_corpora(&spec, 200, 10).unwrap();
    assert_ne!(other, generate_corpora(&spec, 200, 9).unwrap());
}

#[test]
fn meaning_marginals_identical() {
    let spec = RegisterSpec::standard(0.3).unwrap();
    let c = generate_corpora(&spec, 917, 2).unwrap();
    let count = |form| {
        let mut m = BTreeMap::new();
        for l in c.labels(form) {
            *m.entry(l).or_insert(0) += 1;
        }
        m
    };
    assert_eq!(count(Form::A), count(Form::B));
    assert_eq!(count(Form::A).len(), 30);
    // Not a parallel corpus.
    assert_ne!(c.labels(Form::A), c.labels(Form::B));
}

#[test]
fn every_sentence_parses_to_its_template() {
    let spec = RegisterSpec::standard(0.3).unwrap();
    let c = generate_corpora(&spec, 600, 3).unwrap();
    for form in [Form::A, Form::B] {
        for s in c.side(form) {
            assert_eq!(parse_template(&spec, &s.text), Some(s.template), "{}", s.text);
        }
    }
}

#[test]
fn identity_spec_realizes_both_registers_alike() {
    let spec = RegisterSpec::identity();
    assert_eq!(spec.overlap(), 1.0);
    let c = generate_corpora(&spec, 300, 4).unwrap();
    for s in c.a.iter().chain(&c.b) {
        assert_eq!(spec.realize(s.template, &s.fills, Form::A).unwrap(), spec.realize(s.template, &s.fills, Form::B).unwrap());
    }
    assert_eq!(spec.lexicon(Form::A), spec.lexicon(Form::B));
}

#[test]
fn zero_overlap_shares_no_content_word() {
    let spec = RegisterSpec::standard(0.0).unwrap();
    let c = generate_corpora(&spec, 1000, 5).unwrap();
    let words = |form| -> BTreeSet<String> {
        c.lines(form).iter().flat_map(|l| tokenize(l)).filter(|t| t.chars().all(char::is_alphanumeric)).collect()
    };
    assert!(words(Form::A).is_disjoint(&words(Form::B)));

    // Token-frequency classifier: log-ratio of add-one smoothed counts on
    // the training split, evaluated on the test split.
    let pair = c.corpus_pair(CorpusOptions::default()).unwrap();
    let mut counts: [HashMap<usize, f64>; 2] = [HashMap::new(), HashMap::new()];
    for form in [Form::A, Form::B] {
        for s in pair.sentences(form, Split::Train) {
            for &id in &s.ids {
                *counts[form.index()].entry(id).or_default() += 1.0;
            }
        }
    }
    let (mut hit, mut n) = (0, 0);
    for form in [Form::A, Form::B] {
        for s in pair.sentences(form, Split::Test) {
            let score: f64 = s
                .ids
                .iter()
                .map(|id| ((counts[0].get(id).unwrap_or(&0.0) + 1.0) / (counts[1].get(id).unwrap_or(&0.0) + 1.0)).ln())
                .sum();
            let guess = if score > 0.0 { Form::A } else { Form::B };
            hit += (guess == form) as usize;
            n += 1;
        }
    }
    assert!(n > 100);
    assert_eq!(hit, n);
}

#[test]
fn oracle_on_target_realizations_is_perfect() {
    let spec = RegisterSpec::standard(0.3).unwrap();
    let c = generate_corpora(&spec, 300, 6).unwrap();
    let gens: Vec<String> = c.a.iter().map(|s| spec.realize(s.template, &s.fills, Form::B).unwrap()).collect();
    let r = oracle_scores(&spec, &gens, &c.labels(Form::A), Form::B).unwrap();
    assert_eq!((r.meaning_match, r.form_match), (1.0, 1.0));
    assert!(r.flagged.is_empty());
}

#[test]
fn oracle_on_verbatim_sources() {
    let spec = RegisterSpec::standard(0.0).unwrap();
    let c = generate_corpora(&spec, 300, 7).unwrap();
    let r = oracle_scores(&spec, &c.lines(Form::A), &c.labels(Form::A), Form::B).unwrap();
    assert_eq!((r.meaning_match, r.form_match), (1.0, 0.0));
}

#[test]
fn oracle_on_random_templates_matches_chance() {
    let spec = RegisterSpec::standard(0.3).unwrap();
    let c = generate_corpora(&spec, 6000, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let other = generate_corpora(&spec, 6000, 1234).unwrap();
    let mut pool = other.b.clone();
    pool.shuffle(&mut rng);
    let gens: Vec<String> = pool.iter().map(|s| s.text.clone()).collect();
    let r = oracle_scores(&spec, &gens, &c.labels(Form::A), Form::B).unwrap();
    let p = 1.0 / 30.0;
    let sd = (p * (1.0 - p) / 6000.0f64).sqrt();
    assert!((r.meaning_match - p).abs() < 4.0 * sd, "{}", r.meaning_match);
    assert_eq!(r.form_match, 1.0);
}

#[test]
fn unparseable_and_missing_generations_are_flagged() {
    let spec = RegisterSpec::standard(0.3).unwrap();
    let gens = ["zzz qqq .", "yes"];
    let r = oracle_scores(&spec, &gens, &[0, 1, 2], Form::B).unwrap();
    assert_eq!(r.meaning_match, 0.0);
    assert_eq!(r.flagged, vec![0, 1, 2]);
}

#[test]
fn inconsistent_specs_rejected() {
    let mut spec = RegisterSpec::standard(0.3).unwrap();
    spec.lexemes.retain(|l| l.class != SlotClass::Noun);
    let uses_noun = spec.templates.iter().any(|t| t.contains(&Element::Slot(SlotClass::Noun)));
    assert!(uses_noun);
    assert!(spec.validate().is_err());
    assert!(generate_corpora(&spec, 10, 0).is_err());

    let mut clash = RegisterSpec::standard(0.3).unwrap();
    clash.function_words[0].0 = clash.lexemes[0].b.clone();
    assert!(clash.validate().is_err());

    let mut missing = RegisterSpec::standard(0.3).unwrap();
    missing.templates.push(vec![Element::Func(99), Element::Slot(SlotClass::Noun)]);
    assert!(missing.validate().is_err());
    assert!(RegisterSpec::standard(1.5).is_err());
}

#[test]
fn truth_file_round_trip() {
    let spec = RegisterSpec::standard(0.3).unwrap();
    let c = generate_corpora(&spec, 50, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let prefix = c.write(dir.path(), "syn").unwrap();
    let rows = read_truth(&prefix.with_extension("truth.tsv")).unwrap();
    assert_eq!(rows.len(), 100);
    for r in &rows {
        assert_eq!(c.side(r.form)[r.line].template, r.template);
    }
    let a = std::fs::read_to_string(dir.path().join("syn.a.txt")).unwrap();
    assert_eq!(a.lines().count(), 50);
}

#[test]
fn zero_sentences_rejected() {
    assert!(generate_corpora(&RegisterSpec::standard(0.3).unwrap(), 0, 0).is_err());
}
