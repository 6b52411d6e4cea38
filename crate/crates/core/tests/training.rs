use adnet::model::{AdnetModel, CriticKind, EmbeddingTable, ModelConfig};
use adnet::text::{make_batches, Batch, CorpusOptions, CorpusPair, Form, Split, EOS};
use adnet::training::{
    loss_critic, loss_form_discriminator, loss_reconstruction, objective_graph, train, train_from, FormTargets, LossWeights,
    PairedBatch, RunDir, TrainConfig, TrainState, METRICS_HEADER,
};
use autodiff::{Graph, Gradients, ParamId, Tensor};

const A: [&str; 6] = [
    "thou art a fine knight .",
    "aye , the king doth ride .",
    "wherefore dost thou weep ?",
    "the knight hath a sword .",
    "thy horse is swift .",
    "verily the queen doth sing .",
];
const B: [&str; 6] = [
    "you are a fine knight .",
    "yes , the king does ride .",
    "why do you weep ?",
    "the knight has a sword .",
    "your horse is swift .",
    "truly the queen does sing .",
];

fn corpus() -> CorpusPair {
    let none: [&str; 0] = [];
    CorpusPair::from_split_lines([&A, &none, &none], [&B, &none, &none], CorpusOptions { max_len: 12, min_frequency: 1 }).unwrap()
}

fn tiny_config(vocab: usize) -> ModelConfig {
    ModelConfig {
        embedding_dim: 4,
        gru_hidden_dim: 8,
        meaning_dim: 4,
        form_dim: 4,
        critic_hidden_dims: vec![6, 5],
        vocab_size: vocab,
        max_len: 12,
        form_discriminator: true,
    }
}

fn batches(c: &CorpusPair, bs: usize) -> (Batch, Batch) {
    let b = make_batches(c, Split::Train, bs, 3).unwrap();
    (b[0].clone(), b[1].clone())
}

fn set(model: &mut AdnetModel<f64>, id: ParamId, f: impl Fn(usize) -> f64) {
    let t = model.params.get_mut(id);
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        *v = f(i);
    }
}

fn targets(model: &AdnetModel<f64>) -> FormTargets {
    FormTargets { embeddings: model.embedding_table(), form_dims: vec![0], k_discard: 1 }
}

#[test]
fn uniform_output_gives_log_vocab_per_token() {
    let c = corpus();
    let mut model = AdnetModel::<f64>::new(tiny_config(c.vocab.len()), 1).unwrap();
    let out = model.generator.output.clone();
    set(&mut model, out.weight, |_| 0.0);
    set(&mut model, out.bias, |_| 0.0);
    let (a, b) = batches(&c, 3);
    let l = loss_reconstruction(&model, &a, &b).unwrap();
    let v = c.vocab.len() as f64;
    assert!((l - 2.0 * v.ln()).abs() < 1e-12, "{l}");
}

#[test]
fn certain_output_gives_zero_reconstruction_loss() {
    let c = corpus();
    let mut model = AdnetModel::<f64>::new(tiny_config(c.vocab.len()), 1).unwrap();
    let out = model.generator.output.clone();
    set(&mut model, out.weight, |_| 0.0);
    set(&mut model, out.bias, |i| if i == EOS { 200.0 } else { 0.0 });
    let only_eos: &[usize] = &[EOS];
    let a = Batch::uniform(&[only_eos, only_eos], Form::A).unwrap();
    let b = Batch::uniform(&[only_eos], Form::B).unwrap();
    assert!(loss_reconstruction(&model, &a, &b).unwrap().abs() < 1e-12);
}

#[test]
fn empty_batch_rejected() {
    let c = corpus();
    let model = AdnetModel::<f64>::new(tiny_config(c.vocab.len()), 1).unwrap();
    let (a, _) = batches(&c, 3);
    let empty = Batch { tokens: vec![], batch: 0, time: 0, lengths: vec![], labels: vec![] };
    assert!(loss_reconstruction(&model, &a, &empty).is_err());
    assert!(loss_critic(&model, &empty, &a, CriticKind::Motivator).is_err());
}

#[test]
fn constant_critic_loss_is_zero() {
    let c = corpus();
    let mut model = AdnetModel::<f64>::new(tiny_config(c.vocab.len()), 2).unwrap();
    let last = model.discriminator.layers.last().unwrap().clone();
    set(&mut model, last.weight, |_| 0.0);
    set(&mut model, last.bias, |_| 3.7);
    let (a, b) = batches(&c, 3);
    assert_eq!(loss_critic(&model, &a, &b, CriticKind::Discriminator).unwrap(), 0.0);
}

/// Discriminator hand-set to `2·x_0 - 1`, fed `x_0 = 0` on a-rows and
/// `x_0 = 1` on b-rows.
#[test]
fn separating_critic_gives_minus_two() {
    let c = corpus();
    let mut model = AdnetModel::<f64>::new(tiny_config(c.vocab.len()), 2).unwrap();
    let (a, b) = batches(&c, 3);
    let pair = PairedBatch::new(&a, &b).unwrap();
    let layers = model.discriminator.layers.clone();
    for l in &layers {
        set(&mut model, l.weight, |i| if i == 0 { 1.0 } else { 0.0 });
        set(&mut model, l.bias, |_| 0.0);
    }
    let last = layers.last().unwrap();
    set(&mut model, last.weight, |i| if i == 0 { 2.0 } else { 0.0 });
    set(&mut model, last.bias, |_| -1.0);
    let dim = layers[0].input;
    let n = pair.n_a + pair.n_b;
    let mut g = Graph::inference(&model.params);
    let x = g.tape.constant(Tensor::from_fn(&[n, dim], |i| if i % dim == 0 && i / dim >= pair.n_a { 1.0 } else { 0.0 }));
    let l = adnet::training::critic_graph(&model, &mut g, CriticKind::Discriminator, x, &pair).unwrap();
    assert!((g.value(l).item() + 2.0).abs() < 1e-12);
}

#[test]
fn swapping_sides_negates_critic_loss() {
    let c = corpus();
    let model = AdnetModel::<f64>::new(tiny_config(c.vocab.len()), 4).unwrap();
    let (a, b) = batches(&c, 3);
    for kind in [CriticKind::Discriminator, CriticKind::Motivator] {
        let ab = loss_critic(&model, &a, &b, kind).unwrap();
        let ba = loss_critic(&model, &b, &a, kind).unwrap();
        assert!((ab + ba).abs() < 1e-14, "{ab} {ba}");
        assert_ne!(ab, 0.0);
    }
}

#[test]
fn zero_form_discriminator_loss_is_mean_squared_target() {
    let c = corpus();
    let mut model = AdnetModel::<f64>::new(tiny_config(c.vocab.len()), 5).unwrap();
    for id in model.form_discriminator.clone().unwrap().ids() {
        set(&mut model, id, |_| 0.0);
    }
    let (a, _) = batches(&c, 3);
    let t = targets(&model);
    let u = t.matrix::<f64>(&a).unwrap();
    let want = u.data().iter().map(|v| v * v).sum::<f64>() / a.batch as f64;
    let got = loss_form_discriminator(&model, &a, &t).unwrap();
    assert!((got - want).abs() < 1e-12, "{got} {want}");
}

#[test]
fn form_discriminator_loss_ignores_row_order() {
    let c = corpus();
    let model = AdnetModel::<f64>::new(tiny_config(c.vocab.len()), 6).unwrap();
    let (a, _) = batches(&c, 3);
    let rows: Vec<&[usize]> = (0..a.batch).map(|r| a.sequence(r)).collect();
    let rev: Vec<&[usize]> = rows.iter().rev().copied().collect();
    let ar = Batch::uniform(&rev, Form::A).unwrap();
    let t = targets(&model);
    let x = loss_form_discriminator(&model, &a, &t).unwrap();
    let y = loss_form_discriminator(&model, &ar, &t).unwrap();
    assert!((x - y).abs() < 1e-12);
}

#[test]
fn form_discriminator_disabled_is_an_error() {
    let c = corpus();
    let mut cfg = tiny_config(c.vocab.len());
    cfg.form_discriminator = false;
    let model = AdnetModel::<f64>::new(cfg, 6).unwrap();
    let (a, _) = batches(&c, 3);
    let t = targets(&model);
    assert!(loss_form_discriminator(&model, &a, &t).is_err());
}

fn state(c: &CorpusPair, weights: LossWeights, seed: u64) -> TrainState<f64> {
    let cfg = TrainConfig { seed, batch_size: 3, weights, ..TrainConfig::default() };
    let mut s = TrainState::<f64>::fresh(tiny_config(c.vocab.len()), cfg).unwrap();
    s.refresh_form_dims(c).unwrap();
    s
}

fn values(model: &AdnetModel<f64>, ids: &[ParamId]) -> Vec<Tensor<f64>> {
    model.params.snapshot(ids)
}

#[test]
fn critic_stage_touches_only_critics_and_clips() {
    let c = corpus();
    let mut s = state(&c, LossWeights { lambda_f: 0.5, ..LossWeights::default() }, 7);
    let ae = s.model.autoencoder_ids();
    let before = values(&s.model, &ae);
    let df_before = values(&s.model, &s.model.form_discriminator.as_ref().unwrap().ids());
    let (a, b) = batches(&c, 3);
    s.train_step_critics(&a, &b).unwrap();
    assert_eq!(values(&s.model, &ae), before);
    assert_ne!(values(&s.model, &s.model.form_discriminator.as_ref().unwrap().ids()), df_before);
    let mut critic = s.model.discriminator.ids();
    critic.extend(s.model.motivator.ids());
    for t in values(&s.model, &critic) {
        assert!(t.max_abs() <= 0.1);
    }
}

#[test]
fn encoder_stage_touches_only_encoder_and_generator() {
    let c = corpus();
    let mut s = state(&c, LossWeights { lambda_f: 0.5, ..LossWeights::default() }, 8);
    let mut critics = s.model.discriminator.ids();
    critics.extend(s.model.motivator.ids());
    critics.extend(s.model.form_discriminator.as_ref().unwrap().ids());
    let before = values(&s.model, &critics);
    let ae_before = values(&s.model, &s.model.autoencoder_ids());
    let (a, b) = batches(&c, 3);
    s.train_step_encoder_generator(&a, &b).unwrap();
    assert_eq!(values(&s.model, &critics), before);
    assert_ne!(values(&s.model, &s.model.autoencoder_ids()), ae_before);
}

fn grads_of(model: &AdnetModel<f64>, pair: &PairedBatch, w: &LossWeights, pick: impl Fn(&adnet::training::Objective) -> autodiff::Var) -> Gradients<f64> {
    let ids = model.autoencoder_ids();
    let t = targets(model);
    let mut g = Graph::new(&model.params, &ids);
    let obj = objective_graph(model, &mut g, pair, w, Some(&t)).unwrap();
    g.gradients(pick(&obj)).unwrap()
}

fn max_diff(x: &Gradients<f64>, y: &Gradients<f64>, f: impl Fn(f64, f64) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for id in x.ids() {
        for (a, b) in x.get(id).unwrap().data().iter().zip(y.get(id).unwrap().data()) {
            worst = worst.max(f(*a, *b).abs());
        }
    }
    worst
}

#[test]
fn zero_weights_reduce_to_autoencoder_gradients() {
    let c = corpus();
    let model = AdnetModel::<f64>::new(tiny_config(c.vocab.len()), 9).unwrap();
    let (a, b) = batches(&c, 3);
    let pair = PairedBatch::new(&a, &b).unwrap();
    let total = grads_of(&model, &pair, &LossWeights::zero(), |o| o.total);
    let rec = grads_of(&model, &pair, &LossWeights::zero(), |o| o.l_rec);
    assert_eq!(total.len(), rec.len());
    assert!(max_diff(&total, &rec, |x, y| x - y) <= 1e-9);
}

#[test]
fn adversarial_term_enters_with_negative_sign() {
    let c = corpus();
    let model = AdnetModel::<f64>::new(tiny_config(c.vocab.len()), 10).unwrap();
    let (a, b) = batches(&c, 3);
    let pair = PairedBatch::new(&a, &b).unwrap();
    let w = LossWeights { lambda_adv: 2.5, lambda_motiv: 0.0, lambda_f: 0.0 };
    let total = grads_of(&model, &pair, &w, |o| o.total);
    let rec = grads_of(&model, &pair, &w, |o| o.l_rec);
    let d = grads_of(&model, &pair, &w, |o| o.l_d);
    let mut worst = 0.0f64;
    for id in total.ids() {
        let (t, r, dd) = (total.get(id).unwrap().data(), rec.get(id).unwrap().data(), d.get(id).unwrap().data());
        for i in 0..t.len() {
            worst = worst.max((t[i] - r[i] + 2.5 * dd[i]).abs());
        }
    }
    assert!(worst < 1e-9, "{worst}");
    let w = LossWeights { lambda_adv: 0.0, lambda_motiv: 1.5, lambda_f: 0.0 };
    let total = grads_of(&model, &pair, &w, |o| o.total);
    let rec = grads_of(&model, &pair, &w, |o| o.l_rec);
    let m = grads_of(&model, &pair, &w, |o| o.l_m);
    let mut worst = 0.0f64;
    for id in total.ids() {
        let (t, r, mm) = (total.get(id).unwrap().data(), rec.get(id).unwrap().data(), m.get(id).unwrap().data());
        for i in 0..t.len() {
            worst = worst.max((t[i] - r[i] - 1.5 * mm[i]).abs());
        }
    }
    assert!(worst < 1e-9, "{worst}");
}

#[test]
fn total_loss_matches_finite_differences() {
    let c = corpus();
    let mut model = AdnetModel::<f64>::new(tiny_config(c.vocab.len()), 11).unwrap();
    let (a, b) = batches(&c, 3);
    let pair = PairedBatch::new(&a, &b).unwrap();
    let w = LossWeights { lambda_adv: 1.0, lambda_motiv: 0.7, lambda_f: 0.3 };
    let t = targets(&model);
    let value = |m: &AdnetModel<f64>| {
        let mut g = Graph::inference(&m.params);
        let o = objective_graph(m, &mut g, &pair, &w, Some(&t)).unwrap();
        g.value(o.total).item()
    };
    let grads = grads_of(&model, &pair, &w, |o| o.total);
    let eps = 1e-6;
    for (k, id) in model.encoder.ids().into_iter().enumerate() {
        let n = model.params.get(id).numel();
        for i in [0, n / 2, n - 1] {
            let orig = model.params.get(id).data()[i];
            model.params.get_mut(id).data_mut()[i] = orig + eps;
            let up = value(&model);
            model.params.get_mut(id).data_mut()[i] = orig - eps;
            let down = value(&model);
            model.params.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.get(id).unwrap().data()[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
            assert!(rel < 1e-4, "param {k} entry {i}: analytic {analytic} numeric {numeric}");
        }
    }
}

fn disjoint_corpus() -> CorpusPair {
    let a: Vec<String> = (0..12).map(|i| format!("alpha beta gamma w{} .", i % 3)).collect();
    let b: Vec<String> = (0..12).map(|i| format!("delta epsilon zeta v{} !", i % 3)).collect();
    let none: [String; 0] = [];
    CorpusPair::from_split_lines([&a, &none, &none], [&b, &none, &none], CorpusOptions { max_len: 12, min_frequency: 1 }).unwrap()
}

#[test]
fn critics_separate_frozen_latents() {
    let c = disjoint_corpus();
    let mut s = state(&c, LossWeights::default(), 12);
    let (a, b) = batches(&c, 12);
    let start = loss_critic(&s.model, &a, &b, CriticKind::Discriminator).unwrap();
    for _ in 0..200 {
        s.train_step_critics(&a, &b).unwrap();
    }
    let end = loss_critic(&s.model, &a, &b, CriticKind::Discriminator).unwrap();
    assert!(end < 0.0 && end < start, "{start} -> {end}");
    assert!(loss_critic(&s.model, &a, &b, CriticKind::Motivator).unwrap() < 0.0);
}

#[test]
fn overfitting_reduces_reconstruction_loss() {
    let c = corpus();
    let cfg = ModelConfig { embedding_dim: 16, gru_hidden_dim: 32, meaning_dim: 16, form_dim: 16, ..ModelConfig::new(c.vocab.len()) };
    let tc = TrainConfig { epochs: 50, batch_size: 6, seed: 1, weights: LossWeights::zero(), ..TrainConfig::default() };
    let out = train(&c, cfg, tc, None).unwrap();
    let l: Vec<f64> = out.metrics.iter().map(|r| r.l_rec).collect();
    assert_eq!(l.len(), 50);
    let head = l[..10].iter().sum::<f64>() / 10.0;
    let tail = l[40..].iter().sum::<f64>() / 10.0;
    assert!(tail < 0.9 * head, "{head} -> {tail}");
    let rises = l.windows(2).filter(|w| w[1] > w[0] + 1e-3).count();
    assert!(rises <= 5, "{rises} increases in {l:?}");
}

#[test]
fn runs_are_deterministic_and_log_every_step() {
    let c = corpus();
    let cfg = tiny_config(c.vocab.len());
    let tc = TrainConfig { epochs: 3, batch_size: 2, seed: 5, ..TrainConfig::default() };
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let r1 = train(&c, cfg.clone(), tc.clone(), Some(&RunDir::new(d1.path()).unwrap())).unwrap();
    let r2 = train(&c, cfg, tc, Some(&RunDir::new(d2.path()).unwrap())).unwrap();
    assert_eq!(r1.metrics, r2.metrics);
    let steps_per_epoch = make_batches(&c, Split::Train, 2, 0).unwrap().len() / 2;
    assert_eq!(r1.metrics.len(), 3 * steps_per_epoch);
    let log1 = std::fs::read_to_string(d1.path().join("metrics.csv")).unwrap();
    let log2 = std::fs::read_to_string(d2.path().join("metrics.csv")).unwrap();
    assert_eq!(log1, log2);
    assert_eq!(log1.lines().next().unwrap(), METRICS_HEADER);
    assert_eq!(log1.lines().count(), 1 + 3 * steps_per_epoch);
    assert!(d1.path().join(format!("ckpt-{}", 3 * steps_per_epoch)).join("manifest.json").exists());
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let c = corpus();
    let cfg = tiny_config(c.vocab.len());
    let tc = TrainConfig {
        epochs: 3,
        batch_size: 2,
        seed: 21,
        checkpoint_every: 4,
        weights: LossWeights { lambda_f: 0.2, ..LossWeights::default() },
        ..TrainConfig::default()
    };
    let full_dir = tempfile::tempdir().unwrap();
    let full_run = RunDir::new(full_dir.path()).unwrap();
    let full = train(&c, cfg, tc, Some(&full_run)).unwrap();
    // Step 4 falls inside the second epoch (3 steps per epoch).
    let resumed_dir = tempfile::tempdir().unwrap();
    let resumed_run = RunDir::new(resumed_dir.path()).unwrap();
    let ckpt = full_run.checkpoint(4);
    let state = TrainState::<f32>::load(&ckpt).unwrap();
    assert_eq!((state.step, state.epoch, state.batch_in_epoch), (4, 1, 1));
    let resumed = train_from(&c, state, Some(&resumed_run)).unwrap();
    assert_eq!(resumed.state, full.state);
    assert_eq!(resumed.metrics[..], full.metrics[4..]);
}

#[test]
fn embedding_table_of_model_has_vocab_rows() {
    let c = corpus();
    let model = AdnetModel::<f32>::new(tiny_config(c.vocab.len()), 1).unwrap();
    let t: EmbeddingTable = model.embedding_table();
    assert_eq!((t.len(), t.dim()), (c.vocab.len(), 4));
}
