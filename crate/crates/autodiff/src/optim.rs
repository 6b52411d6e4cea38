use crate::error::{Result, TensorError};
use crate::params::{check_grad_shape, Gradients, ParamId, ParamStore};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UpdateRule {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl UpdateRule {
    pub fn adam() -> Self {
        UpdateRule::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Update rule plus moment buffers for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub rule: UpdateRule,
    pub lr: f64,
    /// Weights are clamped to `[-c, c]` after every step when set.
    pub clip: Option<f64>,
    params: Vec<ParamId>,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(rule: UpdateRule, lr: f64, params: Vec<ParamId>, store: &ParamStore<T>) -> Self {
        let moments = |on: bool| -> Vec<Vec<T>> {
            params
                .iter()
                .map(|&id| if on { vec![T::zero(); store.get(id).numel()] } else { Vec::new() })
                .collect()
        };
        let adam = matches!(rule, UpdateRule::Adam { .. });
        OptimizerState { rule, lr, clip: None, first: moments(adam), second: moments(adam), params, step: 0 }
    }

    pub fn with_clip(mut self, c: f64) -> Self {
        self.clip = Some(c);
        self
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Moment buffers, flattened in parameter order (first then second).
    pub fn moments(&self) -> impl Iterator<Item = &[T]> {
        self.first.iter().chain(&self.second).map(|v| v.as_slice())
    }

    /// Replaces step counter and moments, e.g. when resuming from disk.
    pub fn restore(&mut self, step: u64, moments: Vec<Vec<T>>) -> Result<()> {
        let n = self.params.len();
        if moments.len() != self.first.len() + self.second.len()
            || moments.iter().zip(self.first.iter().chain(&self.second)).any(|(a, b)| a.len() != b.len())
        {
            return Err(TensorError::InvalidArgument { op: "optimizer_restore", msg: format!("moment layout mismatch for {n} params") });
        }
        let mut it = moments.into_iter();
        for slot in self.first.iter_mut().chain(self.second.iter_mut()) {
            *slot = it.next().unwrap_or_default();
        }
        self.step = step;
        Ok(())
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<()> {
        for &id in &self.params {
            let g = grads.get(id).ok_or_else(|| TensorError::MissingGradient(store.name(id).to_string()))?;
            check_grad_shape(store.name(id), store.get(id), g)?;
        }
        self.step += 1;
        let lr = T::of(self.lr);
        match self.rule {
            UpdateRule::Sgd => {
                for &id in &self.params {
                    let g = grads.get(id).expect("checked above");
                    for (p, gv) in store.get_mut(id).data_mut().iter_mut().zip(g.data()) {
                        *p -= lr * *gv;
                    }
                }
            }
            UpdateRule::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let (b1, b2) = (T::of(beta1), T::of(beta2));
                let c1 = T::one() / (T::one() - b1.powi(t));
                let c2 = T::one() / (T::one() - b2.powi(t));
                let eps = T::of(eps);
                for (k, &id) in self.params.iter().enumerate() {
                    let g = grads.get(id).expect("checked above");
                    let (m, v) = (&mut self.first[k], &mut self.second[k]);
                    let p = store.get_mut(id).data_mut();
                    for i in 0..p.len() {
                        let gi = g.data()[i];
                        m[i] = b1 * m[i] + (T::one() - b1) * gi;
                        v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                        let mhat = m[i] * c1;
                        let vhat = v[i] * c2;
                        p[i] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        if let Some(c) = self.clip {
            clip_weights(store, &self.params, c)?;
        }
        Ok(())
    }
}

/// Clamps every listed parameter into `[-c, c]`.
pub fn clip_weights<T: Scalar>(store: &mut ParamStore<T>, ids: &[ParamId], c: f64) -> Result<()> {
    if !(c > 0.0) {
        return Err(TensorError::InvalidArgument { op: "clip_weights", msg: format!("bound must be positive, got {c}") });
    }
    let (lo, hi) = (T::of(-c), T::of(c));
    for &id in ids {
        for p in store.get_mut(id).data_mut() {
            *p = p.max(lo).min(hi);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Graph;
    use crate::tensor::Tensor;

    fn square_grad(store: &ParamStore<f64>, id: ParamId) -> Gradients<f64> {
        let mut g = Graph::new(store, &[id]);
        let w = g.param(id);
        let sq = g.tape.mul(w, w).unwrap();
        let loss = g.tape.sum(sq).unwrap();
        g.gradients(loss).unwrap()
    }

    #[test]
    fn sgd_on_square() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(1.0f64));
        let mut opt = OptimizerState::new(UpdateRule::Sgd, 0.1, vec![w], &store);
        let g = square_grad(&store, w);
        opt.step(&mut store, &g).unwrap();
        assert!((store.get(w).item() - 0.8).abs() < 1e-15);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new(vec![3], vec![1.0f64, -2.0, 0.5]).unwrap());
        let before = store.clone();
        for rule in [UpdateRule::Sgd, UpdateRule::adam()] {
            let mut opt = OptimizerState::new(rule, 0.0, vec![w], &store);
            let g = square_grad(&store, w);
            opt.step(&mut store, &g).unwrap();
            assert_eq!(store, before);
        }
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut store = ParamStore::new();
            let w = store.add("w", Tensor::new(vec![2], vec![0.3f64, -0.7]).unwrap());
            let mut opt = OptimizerState::new(UpdateRule::adam(), 0.01, vec![w], &store);
            for _ in 0..5 {
                let g = square_grad(&store, w);
                opt.step(&mut store, &g).unwrap();
            }
            store.get(w).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(1.0f64));
        let mut opt = OptimizerState::new(UpdateRule::Sgd, 0.1, vec![w], &store);
        let err = opt.step(&mut store, &Gradients::new()).unwrap_err();
        assert_eq!(err, TensorError::MissingGradient("w".into()));
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn clip_clamps_and_is_idempotent() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new(vec![3], vec![-5.0f64, 0.05, 5.0]).unwrap());
        clip_weights(&mut store, &[w], 0.1).unwrap();
        assert_eq!(store.get(w).data(), &[-0.1, 0.05, 0.1]);
        let once = store.clone();
        clip_weights(&mut store, &[w], 0.1).unwrap();
        assert_eq!(store, once);
        assert!(clip_weights(&mut store, &[w], 0.0).is_err());
        assert!(clip_weights(&mut store, &[w], -1.0).is_err());
    }

    #[test]
    fn clip_inside_bound_is_noop() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new(vec![2, 2], vec![0.01f64, -0.02, 0.03, 0.0]).unwrap());
        let before = store.clone();
        clip_weights(&mut store, &[w], 0.1).unwrap();
        assert_eq!(store, before);
    }
}
