//! Central finite differences against the tape's analytic gradients, for
//! every differentiable primitive on randomized shapes and seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textpose::diffcore::{AttentionWeights, Mode, ParamId, ParamStore, Tape, Tensor, Var};

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 20;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// Builds `sum(r ⊙ f(params))`, compares every parameter entry's analytic
/// gradient with a central difference and returns the worst relative error.
fn check<F>(store: &ParamStore<f64>, seed: u64, f: F) -> f64
where
    F: Fn(&mut Tape<f64>) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let (weights, grads) = {
        let mut tape = Tape::new(store);
        let out = f(&mut tape);
        let shape = tape.value(out).shape().to_vec();
        let w = rand_tensor(&mut rng, shape, 1.0);
        let g = tape.backward(vec![(out, w.clone())]).unwrap();
        (w, g)
    };
    let objective = |s: &ParamStore<f64>| -> f64 {
        let mut tape = Tape::new(s);
        let out = f(&mut tape);
        tape.value(out)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum()
    };
    let mut worst: f64 = 0.0;
    for pid in 0..store.len() {
        let id = ParamId(pid);
        let n = store.get(id).value.len();
        for i in 0..n {
            let mut plus = store.clone();
            plus.get_mut(id).value.data_mut()[i] += STEP;
            let mut minus = store.clone();
            minus.get_mut(id).value.data_mut()[i] -= STEP;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * STEP);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[i]);
            worst = worst.max(rel_err(analytic, numeric));
        }
    }
    worst
}

#[test]
fn affine_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, i, o) = (rng.gen_range(1..4), rng.gen_range(1..6), rng.gen_range(1..6));
        let mut s = ParamStore::new();
        let x = s.add("x", rand_tensor(&mut rng, vec![n, i], 1.0)).unwrap();
        let w = s.add("w", rand_tensor(&mut rng, vec![i, o], 1.0)).unwrap();
        let b = s.add("b", rand_tensor(&mut rng, vec![o], 1.0)).unwrap();
        let err = check(&s, seed, |t| {
            let xv = t.param(x);
            t.affine(xv, w, b).unwrap()
        });
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn gelu_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let rows = rng.gen_range(1..4);
        let x = s.add("x", rand_tensor(&mut rng, vec![rows, 5], 3.0)).unwrap();
        let err = check(&s, seed, |t| {
            let xv = t.param(x);
            t.gelu(xv).unwrap()
        });
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn layer_norm_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.gen_range(2..7);
        let mut s = ParamStore::new();
        let rows = rng.gen_range(1..4);
        let x = s.add("x", rand_tensor(&mut rng, vec![rows, d], 2.0)).unwrap();
        let g = s.add("g", rand_tensor(&mut rng, vec![d], 1.5)).unwrap();
        let b = s.add("b", rand_tensor(&mut rng, vec![d], 1.0)).unwrap();
        let err = check(&s, seed, |t| {
            let xv = t.param(x);
            t.layer_norm(xv, g, b).unwrap()
        });
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn softmax_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let shape = vec![rng.gen_range(1..4), rng.gen_range(1..7)];
        let x = s.add("x", rand_tensor(&mut rng, shape, 3.0)).unwrap();
        let err = check(&s, seed, |t| {
            let xv = t.param(x);
            t.softmax(xv).unwrap()
        });
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

fn attention_store(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> (ParamStore<f64>, ParamId, AttentionWeights) {
    let mut s = ParamStore::new();
    let x = s.add("x", rand_tensor(rng, vec![rows, d], 1.0)).unwrap();
    let mut mk = |name: &str, shape| s.add(name, rand_tensor(rng, shape, 0.6)).unwrap();
    let w = AttentionWeights {
        wq: mk("wq", vec![d, d]),
        bq: mk("bq", vec![d]),
        wk: mk("wk", vec![d, d]),
        bk: mk("bk", vec![d]),
        wv: mk("wv", vec![d, d]),
        bv: mk("bv", vec![d]),
        wo: mk("wo", vec![d, d]),
        bo: mk("bo", vec![d]),
    };
    (s, x, w)
}

#[test]
fn multi_head_attention_gradients_2x16_h4() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (s, x, w) = attention_store(&mut rng, 2, 16);
    let err = check(&s, 99, |t| {
        let xv = t.param(x);
        t.multi_head_attention(xv, &w, 4, 2).unwrap()
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn multi_head_attention_gradients_random_shapes() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let heads = rng.gen_range(1..3);
        let d = heads * rng.gen_range(1..4);
        let seq = rng.gen_range(1..4);
        let batch = rng.gen_range(1..3);
        let (s, x, w) = attention_store(&mut rng, batch * seq, d);
        let err = check(&s, seed, |t| {
            let xv = t.param(x);
            t.multi_head_attention(xv, &w, heads, seq).unwrap()
        });
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn dropout_gradients_with_fixed_mask() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let x = s.add("x", rand_tensor(&mut rng, vec![3, 4], 1.0)).unwrap();
        let err = check(&s, seed, |t| {
            let mut mask_rng = ChaCha8Rng::seed_from_u64(seed);
            let xv = t.param(x);
            t.dropout(xv, 0.3, Mode::Train, &mut mask_rng).unwrap()
        });
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn auxiliary_op_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.gen_range(2..5);
        let k = rng.gen_range(1..3);
        let mut s = ParamStore::new();
        let x = s.add("x", rand_tensor(&mut rng, vec![2, d], 1.0)).unwrap();
        let row = s.add("row", rand_tensor(&mut rng, vec![d], 1.0)).unwrap();
        let tokens = s.add("tokens", rand_tensor(&mut rng, vec![k, d], 1.0)).unwrap();
        let err = check(&s, seed, |t| {
            let (xv, rv, tv) = (t.param(x), t.param(row), t.param(tokens));
            let a = t.add_row(xv, rv).unwrap();
            let seqs = t.prepend_tokens(a, tv).unwrap();
            let pooled = t.mean_pool(seqs, k + 1).unwrap();
            let sum = t.add(pooled, xv).unwrap();
            let n = t.l2_normalize(sum).unwrap();
            t.clamp(n, -0.8, 0.8).unwrap()
        });
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (s, x, w) = attention_store(&mut rng, 6, 8);
    let run = || {
        let mut tape = Tape::new(&s);
        let xv = tape.param(x);
        let y = tape.multi_head_attention(xv, &w, 2, 3).unwrap();
        let mut drop_rng = ChaCha8Rng::seed_from_u64(8);
        let y = tape.dropout(y, 0.2, Mode::Train, &mut drop_rng).unwrap();
        tape.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
