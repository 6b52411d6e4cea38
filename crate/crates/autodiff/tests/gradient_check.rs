//! Every primitive's analytic gradient against central finite differences
//! at 64-bit precision.

use autodiff::{Primitive, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-2.0..2.0))
}

/// Reduces any output to a scalar with a fixed random projection.
fn project(tape: &mut Tape<f64>, out: autodiff::Var, rng_seed: u64) -> autodiff::Var {
    let n = tape.value(out).numel();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    tape.weighted_sum(out, w).unwrap()
}

fn eval(prim: &Primitive, inputs: &[Tensor<f64>], seed: u64) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = tape.apply(prim.clone(), &vars).unwrap();
    let s = project(&mut tape, out, seed);
    tape.value(s).item()
}

fn check(prim: Primitive, inputs: Vec<Tensor<f64>>, seed: u64) -> Result<(), TestCaseError> {
    let mut tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = tape.apply(prim.clone(), &vars).unwrap();
    let s = project(&mut tape, out, seed);
    let grads = tape.backward(s).unwrap();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).expect("gradient for every input").to_vec();
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += EPS;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= EPS;
            let numeric = (eval(&prim, &plus, seed) - eval(&prim, &minus, seed)) / (2.0 * EPS);
            let rel = (analytic[i] - numeric).abs() / 1f64.max(analytic[i].abs()).max(numeric.abs());
            prop_assert!(rel < TOL, "{} input {} elem {}: analytic {} numeric {}", prim.name(), k, i, analytic[i], numeric);
        }
    }
    Ok(())
}

/// Keeps values away from the ELU kink and from ties in extrema.
fn spread(mut t: Tensor<f64>) -> Tensor<f64> {
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        if v.abs() < 1e-2 {
            *v = 0.05;
        }
        *v += i as f64 * 1e-3;
    }
    t
}

fn dims() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (1usize..=8, 1usize..=8, 1usize..=8, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn binary_ops((m, k, n, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        check(Primitive::MatMul, vec![random(&mut rng, &[m, k]), random(&mut rng, &[k, n])], seed)?;
        check(Primitive::MatMulNT, vec![random(&mut rng, &[m, k]), random(&mut rng, &[n, k])], seed)?;
        for p in [Primitive::Add, Primitive::Sub, Primitive::Mul] {
            check(p, vec![random(&mut rng, &[m, n]), random(&mut rng, &[m, n])], seed)?;
        }
        check(Primitive::AddRow, vec![random(&mut rng, &[m, n]), random(&mut rng, &[n])], seed)?;
        check(Primitive::MulCol, vec![random(&mut rng, &[m, n]), random(&mut rng, &[m, 1])], seed)?;
        check(Primitive::ConcatRows, vec![random(&mut rng, &[m, n]), random(&mut rng, &[k, n])], seed)?;
        let mask: Vec<bool> = (0..m).map(|_| rng.gen_bool(0.5)).collect();
        check(Primitive::SelectRows { mask }, vec![random(&mut rng, &[m, n]), random(&mut rng, &[m, n])], seed)?;
        check(Primitive::ConcatCols, vec![random(&mut rng, &[m, k]), random(&mut rng, &[m, n]), random(&mut rng, &[m, 1])], seed)?;
    }

    #[test]
    fn unary_ops((m, n, k, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = spread(random(&mut rng, &[m, n]));
        for p in [
            Primitive::Tanh,
            Primitive::Sigmoid,
            Primitive::Elu { alpha: 1.0 },
            Primitive::Scale(-1.7),
            Primitive::Sum,
            Primitive::Mean,
            Primitive::MaxRows,
            Primitive::MinRows,
            Primitive::MeanRows,
        ] {
            check(p, vec![x.clone()], seed)?;
        }
        let start = k.min(n) - 1;
        check(Primitive::SliceCols { start, len: n - start }, vec![x.clone()], seed)?;
        let start = k.min(m) - 1;
        check(Primitive::SliceRows { start, len: m - start }, vec![x.clone()], seed)?;
        let w: Vec<f64> = (0..m * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        check(Primitive::WeightedSum { weights: w }, vec![x], seed)?;
    }

    #[test]
    fn indexed_ops((v, e, n, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = random(&mut rng, &[v, e]);
        let ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..v)).collect();
        check(Primitive::Gather { ids }, vec![table], seed)?;
        let logits = random(&mut rng, &[n, v]);
        let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..v)).collect();
        let weights: Vec<f64> = (0..n).map(|i| if i % 3 == 2 { 0.0 } else { rng.gen_range(0.1..1.0) }).collect();
        check(Primitive::SoftmaxCrossEntropy { targets, weights }, vec![logits], seed)?;
    }

    #[test]
    fn inputs_are_never_mutated((m, n, _k, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[m, n]);
        let b = random(&mut rng, &[m, n]);
        let mut tape = Tape::new();
        let va = tape.leaf(a.clone(), true);
        let vb = tape.leaf(b.clone(), true);
        let y = tape.mul(va, vb).unwrap();
        let y = tape.tanh(y).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        prop_assert_eq!(tape.value(va), &a);
        prop_assert_eq!(tape.value(vb), &b);
    }

    #[test]
    fn rebuilt_tape_gives_identical_gradients((m, n, _k, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[m, n]);
        let w = random(&mut rng, &[n, n]);
        let run = || {
            let mut tape = Tape::new();
            let va = tape.leaf(a.clone(), true);
            let vw = tape.leaf(w.clone(), true);
            let h = tape.matmul(va, vw).unwrap();
            let h = tape.sigmoid(h).unwrap();
            let s = tape.mean(h).unwrap();
            let g = tape.backward(s).unwrap();
            (g.tensor(va).unwrap(), g.tensor(vw).unwrap())
        };
        prop_assert_eq!(run(), run());
    }
}
