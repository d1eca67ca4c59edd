#![allow(dead_code)]

pub mod reference;

use ccnet_core::gradcheck::GradCheck;
use ccnet_core::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// `Σ w ⊙ y` with weights fixed by `seed`, so every re-evaluation sees the same projection.
pub fn probe(g: &mut Graph<f64>, y: Var, seed: u64) -> Var {
    let shape = g.shape(y).to_vec();
    let w = g.input(uniform(&mut rng(seed), &shape));
    let p = g.mul(y, w).unwrap();
    g.sum(p)
}

pub fn assert_close(results: &[(String, GradCheck)], tol: f64) {
    for (name, r) in results {
        assert!(r.checked > 0, "{name}: nothing checked");
        assert!(
            r.max_rel_error <= tol,
            "{name}: rel error {:.3e} at {} (analytic {:.6e}, numeric {:.6e})",
            r.max_rel_error,
            r.worst_index,
            r.analytic,
            r.numeric
        );
    }
}
