//! Parameterized building blocks shared by the ADNet networks and the
//! evaluation models. Each block only holds [`ParamId`]s; values live in a
//! [`ParamStore`] and forward passes run on a [`Graph`].

use autodiff::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use rand::Rng;

use crate::error::Result;
use crate::text::{Batch, BOS};

/// Uniform in `[-1/√fan_in, 1/√fan_in]` for matrices, zeros for biases.
pub(crate) fn init_matrix<T: Scalar>(rng: &mut impl Rng, rows: usize, fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(&[rows, fan_in], |_| T::of(rng.gen_range(-bound..=bound)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let weight = store.add(format!("{name}.weight"), init_matrix(rng, output, input));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[output]));
        Linear { weight, bias, input, output }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }

    /// `x Wᵀ + b` for `x: [rows, input]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.tape.matmul_nt(x, w)?;
        Ok(g.tape.add_row(y, b)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, vocab: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let table = store.add(format!("{name}.table"), init_matrix(rng, vocab, dim));
        Embedding { table, vocab, dim }
    }

    pub fn lookup<T: Scalar>(&self, g: &mut Graph<T>, ids: Vec<usize>) -> Result<Var> {
        let t = g.param(self.table);
        Ok(g.tape.gather(t, ids)?)
    }
}

/// Gated recurrent unit with the gate order `[reset, update, new]`:
///
/// ```text
/// r  = σ(W_ir x + b_ir + W_hr h + b_hr)
/// z  = σ(W_iz x + b_iz + W_hz h + b_hz)
/// n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct Gru {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let w_ih = store.add(format!("{name}.w_ih"), init_matrix(rng, 3 * hidden, input));
        let w_hh = store.add(format!("{name}.w_hh"), init_matrix(rng, 3 * hidden, hidden));
        let b_ih = store.add(format!("{name}.b_ih"), Tensor::zeros(&[3 * hidden]));
        let b_hh = store.add(format!("{name}.b_hh"), Tensor::zeros(&[3 * hidden]));
        Gru { w_ih, w_hh, b_ih, b_hh, input, hidden }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![self.w_ih, self.w_hh, self.b_ih, self.b_hh]
    }

    /// Input half of the gate pre-activations, `x W_ihᵀ + b_ih`.
    pub fn project_input<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.param(self.w_ih);
        let b = g.param(self.b_ih);
        let y = g.tape.matmul_nt(x, w)?;
        Ok(g.tape.add_row(y, b)?)
    }

    /// One step from projected input `gi: [B, 3H]` and state `h: [B, H]`.
    pub fn cell<T: Scalar>(&self, g: &mut Graph<T>, gi: Var, h: Var) -> Result<Var> {
        let hd = self.hidden;
        let w = g.param(self.w_hh);
        let b = g.param(self.b_hh);
        let gh = g.tape.matmul_nt(h, w)?;
        let gh = g.tape.add_row(gh, b)?;
        let t = &mut g.tape;
        let rz_i = t.slice_cols(gi, 0, 2 * hd)?;
        let rz_h = t.slice_cols(gh, 0, 2 * hd)?;
        let rz = t.add(rz_i, rz_h)?;
        let rz = t.sigmoid(rz)?;
        let r = t.slice_cols(rz, 0, hd)?;
        let z = t.slice_cols(rz, hd, hd)?;
        let n_i = t.slice_cols(gi, 2 * hd, hd)?;
        let n_h = t.slice_cols(gh, 2 * hd, hd)?;
        let n_h = t.mul(r, n_h)?;
        let n = t.add(n_i, n_h)?;
        let n = t.tanh(n)?;
        let d = t.sub(h, n)?;
        let d = t.mul(z, d)?;
        Ok(t.add(n, d)?)
    }
}

/// Fully connected stack with ELU between layers and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dims: &[usize], rng: &mut impl Rng) -> Self {
        let layers = dims.windows(2).enumerate().map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng)).collect();
        Mlp { layers }
    }

    pub fn input(&self) -> usize {
        self.layers[0].input
    }

    pub fn output(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(Linear::ids).collect()
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            if i + 1 < self.layers.len() {
                h = g.tape.elu(h, 1.0)?;
            }
        }
        Ok(h)
    }
}

/// Runs `gru` over the embedded batch and returns each row's state after
/// its last token.
pub fn encode_sequences<T: Scalar>(
    g: &mut Graph<T>,
    embedding: &Embedding,
    gru: &Gru,
    batch: &Batch,
    h0: Option<Var>,
) -> Result<Var> {
    // Time-major ids so one matmul projects every step's input.
    let ids: Vec<usize> = (0..batch.time).flat_map(|t| batch.column(t)).collect();
    let x = embedding.lookup(g, ids)?;
    let gi_all = gru.project_input(g, x)?;
    let mut h = match h0 {
        Some(h) => h,
        None => g.tape.constant(Tensor::zeros(&[batch.batch, gru.hidden])),
    };
    for t in 0..batch.time {
        let gi = g.tape.slice_rows(gi_all, t * batch.batch, batch.batch)?;
        let next = gru.cell(g, gi, h)?;
        let active: Vec<bool> = batch.lengths.iter().map(|&len| t < len).collect();
        h = if active.iter().all(|&a| a) { next } else { g.tape.select_rows(active, next, h)? };
    }
    Ok(h)
}

/// Teacher-forced decoding from initial state `h0`. Inputs are `BOS` then the
/// target shifted right; returns time-major logits `[time·batch, vocab]`.
pub fn decode_teacher_forced<T: Scalar>(
    g: &mut Graph<T>,
    embedding: &Embedding,
    gru: &Gru,
    output: &Linear,
    h0: Var,
    batch: &Batch,
) -> Result<Var> {
    let ids: Vec<usize> = (0..batch.time)
        .flat_map(|t| (0..batch.batch).map(move |r| if t == 0 { BOS } else { batch.token(r, t - 1) }))
        .collect();
    let x = embedding.lookup(g, ids)?;
    let gi_all = gru.project_input(g, x)?;
    let mut h = h0;
    let mut states = Vec::with_capacity(batch.time);
    for t in 0..batch.time {
        let gi = g.tape.slice_rows(gi_all, t * batch.batch, batch.batch)?;
        h = gru.cell(g, gi, h)?;
        states.push(h);
    }
    let all = if states.len() == 1 { states[0] } else { g.tape.concat_rows(&states)? };
    output.forward(g, all)
}

/// Time-major targets and per-row CE weights for [`decode_teacher_forced`]
/// logits; `row_weight(r)` is applied to every real token of row `r`.
pub fn teacher_targets(batch: &Batch, row_weight: impl Fn(usize) -> f64) -> (Vec<usize>, Vec<f64>) {
    let mut targets = Vec::with_capacity(batch.time * batch.batch);
    let mut weights = Vec::with_capacity(batch.time * batch.batch);
    for t in 0..batch.time {
        for r in 0..batch.batch {
            targets.push(batch.token(r, t));
            weights.push(if t < batch.lengths[r] { row_weight(r) } else { 0.0 });
        }
    }
    (targets, weights)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::Form;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn init_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w: Tensor<f64> = init_matrix(&mut rng, 10, 16);
        assert!(w.max_abs() <= 0.25);
        let mut store = ParamStore::<f64>::new();
        let l = Linear::new(&mut store, "l", 4, 3, &mut rng);
        assert!(store.get(l.bias).data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn final_state_ignores_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let emb = Embedding::new(&mut store, "e", 10, 3, &mut rng);
        let gru = Gru::new(&mut store, "g", 3, 5, &mut rng);
        let short: &[usize] = &[4, 5, 2];
        let long: &[usize] = &[6, 7, 8, 9, 2];
        let alone = Batch::uniform(&[short], Form::A).unwrap();
        let mixed = Batch::uniform(&[long, short], Form::A).unwrap();
        let mut g1 = Graph::inference(&store);
        let h1 = encode_sequences(&mut g1, &emb, &gru, &alone, None).unwrap();
        let mut g2 = Graph::inference(&store);
        let h2 = encode_sequences(&mut g2, &emb, &gru, &mixed, None).unwrap();
        assert_eq!(g1.value(h1).row(0), g2.value(h2).row(1));
    }
}
