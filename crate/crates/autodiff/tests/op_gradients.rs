use longembed_autodiff::{finite_diff_check, Graph, Result, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-2.0..2.0))
}

/// `sum(y * w)` for a fixed random `w`, so every output element carries a
/// distinct upstream gradient.
fn contract(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = random(&mut rng, g.value(y).shape());
    let w = g.constant(w)?;
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn check(inputs: Vec<Tensor>, seed: u64, f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) {
    let report = finite_diff_check(
        |g, v| {
            let y = f(g, v)?;
            contract(g, y, seed)
        },
        &inputs,
        EPS,
        TOL,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

fn dim() -> impl Strategy<Value = usize> {
    1usize..=8
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn matmul_2d(m in dim(), k in dim(), n in dim(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![random(&mut rng, &[m, k]), random(&mut rng, &[k, n])];
        check(inputs, seed, |g, v| g.matmul(v[0], v[1]));
    }

    #[test]
    fn matmul_batched(b in 1usize..=3, m in dim(), k in dim(), n in dim(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![random(&mut rng, &[b, m, k]), random(&mut rng, &[b, k, n])];
        check(inputs, seed, |g, v| g.matmul(v[0], v[1]));
    }

    #[test]
    fn matmul_shared_rhs(b in 1usize..=3, m in dim(), k in dim(), n in dim(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![random(&mut rng, &[b, m, k]), random(&mut rng, &[k, n])];
        check(inputs, seed, |g, v| g.matmul(v[0], v[1]));
    }

    #[test]
    fn add_and_mul_broadcast(r in dim(), c in dim(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![random(&mut rng, &[r, c]), random(&mut rng, &[c]), random(&mut rng, &[r, 1])];
        check(inputs, seed, |g, v| {
            let s = g.add(v[0], v[1])?;
            g.mul(s, v[2])
        });
    }

    #[test]
    fn transpose_reshape(a in dim(), b in dim(), c in dim(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![random(&mut rng, &[a, b, c])];
        check(inputs, seed, |g, v| {
            let p = g.permute(v[0], &[1, 2, 0])?;
            let t = g.transpose(p)?;
            g.reshape(t, &[a * b * c])
        });
    }

    #[test]
    fn slice_concat(r in dim(), c in 2usize..=8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![random(&mut rng, &[r, c]), random(&mut rng, &[r, 3])];
        check(inputs, seed, |g, v| {
            let s = g.slice(v[0], 1, 1, c)?;
            g.concat(&[v[1], s, v[0]], 1)
        });
    }

    #[test]
    fn softmax_exp_silu(r in dim(), c in dim(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![random(&mut rng, &[r, c])];
        check(inputs, seed, |g, v| {
            let s = g.softmax(v[0])?;
            let e = g.exp(v[0])?;
            let a = g.silu(v[0])?;
            let t = g.add(s, e)?;
            g.add(t, a)
        });
    }

    #[test]
    fn log_of_positive(r in dim(), c in dim(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(&[r, c], |_| rng.gen_range(0.5..2.0));
        check(vec![x], seed, |g, v| g.log(v[0]));
    }

    #[test]
    fn layer_norm(r in dim(), c in 2usize..=8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![random(&mut rng, &[r, c]), random(&mut rng, &[c]), random(&mut rng, &[c])];
        check(inputs, seed, |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5));
    }

    #[test]
    fn embedding_lookup(rows in dim(), d in dim(), picks in proptest::collection::vec(0usize..64, 1..8), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let indices: Vec<usize> = picks.iter().map(|p| p % rows).collect();
        check(vec![random(&mut rng, &[rows, d])], seed, move |g, v| g.embedding(v[0], &indices));
    }

    #[test]
    fn cross_entropy(r in dim(), c in dim(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = random(&mut rng, &[r, c]);
        let mut targets: Vec<Option<usize>> = (0..r).map(|_| {
            if rng.gen_bool(0.7) { Some(rng.gen_range(0..c)) } else { None }
        }).collect();
        targets[0] = Some(0);
        check(vec![logits], seed, move |g, v| g.cross_entropy(v[0], &targets));
    }

    #[test]
    fn l2_normalize(r in dim(), c in dim(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(&[r, c], |_| {
            let v: f64 = rng.gen_range(0.2..2.0);
            if rng.gen_bool(0.5) { v } else { -v }
        });
        check(vec![x], seed, |g, v| g.l2_normalize(v[0]));
    }

    #[test]
    fn rotate_pairs(b in 1usize..=3, s in dim(), half in 1usize..=4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[b, s, 2 * half]);
        let angles: Vec<f64> = (0..s * half).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let cos: Vec<f64> = angles.iter().map(|a| a.cos()).collect();
        let sin: Vec<f64> = angles.iter().map(|a| a.sin()).collect();
        check(vec![x], seed, move |g, v| g.rotate_pairs(v[0], &cos, &sin));
    }

    #[test]
    fn softmax_rows_sum_to_one(r in dim(), c in dim(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let x = g.constant(random(&mut rng, &[r, c])).unwrap();
        let y = g.softmax(x).unwrap();
        for row in g.value(y).data().chunks(c) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn detached_leaf_receives_nothing() {
    let mut g = Graph::new();
    let w = g.variable(Tensor::from_fn(&[2, 2], |i| i as f64)).unwrap();
    let x = g
        .constant(Tensor::from_fn(&[2, 2], |i| 1.0 - i as f64))
        .unwrap();
    let y = g.matmul(x, w).unwrap();
    let s = g.softmax(y).unwrap();
    let l = g.sum(s).unwrap();
    g.backward(l).unwrap();
    assert!(g.grad(x).unwrap().is_none());
    assert!(g.grad(w).unwrap().is_some());
}
