//! Reconstruction, critic and form-discriminator losses, both as graph
//! pieces for the training stages and as plain values.

use autodiff::{Graph, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{AdnetError, Result};
use crate::model::layers::teacher_targets;
use crate::model::{form_target_u, AdnetModel, CriticKind, Encoded, EmbeddingTable};
use crate::text::Batch;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_motiv: f64,
    /// Weight of the form-discriminator term; 0 disables `D_f`.
    pub lambda_f: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_adv: 1.0, lambda_motiv: 1.0, lambda_f: 0.0 }
    }
}

impl LossWeights {
    /// Pure autoencoder objective.
    pub fn zero() -> Self {
        LossWeights { lambda_adv: 0.0, lambda_motiv: 0.0, lambda_f: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_adv", self.lambda_adv), ("lambda_motiv", self.lambda_motiv), ("lambda_f", self.lambda_f)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(AdnetError::Config(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// Inputs for the form-stripped targets `u`.
#[derive(Clone, Debug, PartialEq)]
pub struct FormTargets {
    pub embeddings: EmbeddingTable,
    pub form_dims: Vec<usize>,
    pub k_discard: usize,
}

impl FormTargets {
    /// `[batch, embedding_dim]` matrix of `u` for every row.
    pub fn matrix<T: Scalar>(&self, batch: &Batch) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(batch.batch * self.embeddings.dim());
        for r in 0..batch.batch {
            let u = form_target_u(batch.sequence(r), &self.embeddings, &self.form_dims, self.k_discard)?;
            data.extend(u.into_iter().map(T::of));
        }
        Ok(Tensor::new(vec![batch.batch, self.embeddings.dim()], data)?)
    }
}

fn check_nonempty(batch: &Batch) -> Result<()> {
    if batch.batch == 0 || batch.num_tokens() == 0 {
        return Err(AdnetError::Empty("batch"));
    }
    Ok(())
}

/// The two sides stacked into one batch, a-rows first.
#[derive(Clone, Debug)]
pub struct PairedBatch {
    pub joint: Batch,
    pub n_a: usize,
    pub n_b: usize,
}

impl PairedBatch {
    pub fn new(batch_a: &Batch, batch_b: &Batch) -> Result<Self> {
        check_nonempty(batch_a)?;
        check_nonempty(batch_b)?;
        Ok(PairedBatch { joint: batch_a.concat(batch_b), n_a: batch_a.batch, n_b: batch_b.batch })
    }

    /// `+1/n_a` on a-rows and `-1/n_b` on b-rows: the weights that turn a
    /// column of scores into `mean(a) - mean(b)`.
    pub fn contrast_weights(&self) -> Vec<f64> {
        let (wa, wb) = (1.0 / self.n_a as f64, -1.0 / self.n_b as f64);
        (0..self.n_a).map(|_| wa).chain((0..self.n_b).map(|_| wb)).collect()
    }
}

/// `NLL_a + NLL_b`, each the mean over the real (non-PAD) tokens of its side.
pub fn reconstruction_graph<T: Scalar>(model: &AdnetModel<T>, g: &mut Graph<T>, enc: Encoded, pair: &PairedBatch) -> Result<Var> {
    let batch = &pair.joint;
    let tokens = |rows: std::ops::Range<usize>| rows.map(|r| batch.lengths[r]).sum::<usize>() as f64;
    let (ta, tb) = (tokens(0..pair.n_a), tokens(pair.n_a..batch.batch));
    let logits = model.teacher_forced_logits(g, enc.m, enc.f, batch)?;
    let (targets, weights) = teacher_targets(batch, |r| if r < pair.n_a { 1.0 / ta } else { 1.0 / tb });
    Ok(g.tape.softmax_cross_entropy(logits, targets, weights)?)
}

/// `mean critic(x_a) - mean critic(x_b)` where `x` holds a-rows then b-rows.
pub fn critic_graph<T: Scalar>(model: &AdnetModel<T>, g: &mut Graph<T>, kind: CriticKind, x: Var, pair: &PairedBatch) -> Result<Var> {
    let scores = model.critic_graph(g, kind, x)?;
    Ok(g.tape.weighted_sum(scores, pair.contrast_weights())?)
}

/// `(1/B) Σ ‖D_f(f_i) - u_i‖²`.
pub fn form_discriminator_graph<T: Scalar>(model: &AdnetModel<T>, g: &mut Graph<T>, f: Var, u: Tensor<T>) -> Result<Var> {
    let rows = u.shape()[0];
    let pred = model.critic_graph(g, CriticKind::FormDiscriminator, f)?;
    let u = g.tape.constant(u);
    let diff = g.tape.sub(pred, u)?;
    let sq = g.tape.mul(diff, diff)?;
    let total = g.tape.sum(sq)?;
    Ok(g.tape.scale(total, 1.0 / rows as f64)?)
}

/// All terms of the encoder/generator objective on one graph.
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub l_rec: Var,
    pub l_d: Var,
    pub l_m: Var,
    pub l_df: Option<Var>,
    /// `L_rec - λ_adv L_D + λ_motiv L_M - λ_f L_Df`.
    pub total: Var,
}

/// Builds the full objective. Terms with zero weight are still evaluated
/// for logging but do not enter `total`.
pub fn objective_graph<T: Scalar>(
    model: &AdnetModel<T>,
    g: &mut Graph<T>,
    pair: &PairedBatch,
    weights: &LossWeights,
    form_targets: Option<&FormTargets>,
) -> Result<Objective> {
    let enc = model.encode_graph(g, &pair.joint)?;
    let l_rec = reconstruction_graph(model, g, enc, pair)?;
    let l_d = critic_graph(model, g, CriticKind::Discriminator, enc.m, pair)?;
    let l_m = critic_graph(model, g, CriticKind::Motivator, enc.f, pair)?;
    let l_df = match (weights.lambda_f > 0.0, form_targets) {
        (true, Some(t)) => Some(form_discriminator_graph(model, g, enc.f, t.matrix(&pair.joint)?)?),
        (true, None) => return Err(AdnetError::Config("lambda_f > 0 needs form targets".into())),
        (false, _) => None,
    };
    let mut terms = vec![(1.0, l_rec), (-weights.lambda_adv, l_d), (weights.lambda_motiv, l_m)];
    if let Some(v) = l_df {
        terms.push((-weights.lambda_f, v));
    }
    let total = g.tape.lincomb(&terms)?.expect("reconstruction weight is 1");
    Ok(Objective { l_rec, l_d, l_m, l_df, total })
}

fn scalar<T: Scalar>(g: &Graph<T>, v: Var) -> f64 {
    g.value(v).item().as_f64()
}

pub fn loss_reconstruction<T: Scalar>(model: &AdnetModel<T>, batch_a: &Batch, batch_b: &Batch) -> Result<f64> {
    let pair = PairedBatch::new(batch_a, batch_b)?;
    let mut g = Graph::inference(&model.params);
    let enc = model.encode_graph(&mut g, &pair.joint)?;
    let l = reconstruction_graph(model, &mut g, enc, &pair)?;
    Ok(scalar(&g, l))
}

/// `L_D` for [`CriticKind::Discriminator`] (on meaning vectors) or `L_M` for
/// [`CriticKind::Motivator`] (on form vectors).
pub fn loss_critic<T: Scalar>(model: &AdnetModel<T>, batch_a: &Batch, batch_b: &Batch, which: CriticKind) -> Result<f64> {
    let pair = PairedBatch::new(batch_a, batch_b)?;
    let mut g = Graph::inference(&model.params);
    let enc = model.encode_graph(&mut g, &pair.joint)?;
    let x = match which {
        CriticKind::Discriminator => enc.m,
        CriticKind::Motivator => enc.f,
        CriticKind::FormDiscriminator => {
            return Err(AdnetError::Config("the form discriminator has its own loss".into()));
        }
    };
    let l = critic_graph(model, &mut g, which, x, &pair)?;
    Ok(scalar(&g, l))
}

pub fn loss_form_discriminator<T: Scalar>(model: &AdnetModel<T>, batch: &Batch, targets: &FormTargets) -> Result<f64> {
    check_nonempty(batch)?;
    if model.form_discriminator.is_none() {
        return Err(AdnetError::Config("form discriminator is disabled".into()));
    }
    let mut g = Graph::inference(&model.params);
    let enc = model.encode_graph(&mut g, batch)?;
    let l = form_discriminator_graph(model, &mut g, enc.f, targets.matrix(batch)?)?;
    Ok(scalar(&g, l))
}
