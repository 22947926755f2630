#![allow(dead_code)]

use icadenoise_core::gradcheck::finite_diff_check;
use icadenoise_core::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Scalar probe `sum(out * R)` with a fixed random `R`, so every output element
/// contributes a distinct weight to the loss.
pub fn probe(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    let n = g.value(out).len();
    let flat = g.reshape(out, vec![1, n]).unwrap();
    let r = random_tensor(&mut rng(seed), vec![1, n]);
    let r = g.input(r);
    let y = g.dense(flat, r, None).unwrap();
    g.sum(y)
}

/// Max relative error between tape gradients and central differences for
/// every element of every leaf.
pub fn check_graph<F>(leaves: &[Tensor<f64>], step: f64, build: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &vars);
    g.backward(loss).unwrap();
    let mut worst = 0.0f64;
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = g
            .grad(vars[k])
            .map(|s| s.to_vec())
            .unwrap_or_else(|| vec![0.0; leaf.len()]);
        let f = |p: &[f64]| {
            let mut h = Graph::no_grad();
            let vs: Vec<Var> = leaves
                .iter()
                .enumerate()
                .map(|(j, t)| {
                    if j == k {
                        h.input(Tensor::new(t.shape().to_vec(), p.to_vec()).unwrap())
                    } else {
                        h.input(t.clone())
                    }
                })
                .collect();
            let l = build(&mut h, &vs);
            h.value(l).data()[0]
        };
        worst = worst.max(finite_diff_check(f, leaf.data(), &analytic, step));
    }
    worst
}
