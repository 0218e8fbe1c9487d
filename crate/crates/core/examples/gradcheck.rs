//! Reverse-mode gradients of a small attention block, checked against
//! central differences.
//!
//! cargo run --example gradcheck

use glitchloc::autodiff::{grad_check, Array, Graph, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array {
    Array::from_fn2(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// `sum(softmax(x xᵀ) x · w)` followed by a sigmoid cross-entropy.
fn block(g: &mut Graph, v: &[Var]) -> glitchloc::Result<Var> {
    let (x, w) = (v[0], v[1]);
    let xt = g.transpose(x)?;
    let scores = g.matmul(x, xt)?;
    let attn = g.softmax(scores, 1)?;
    let mixed = g.matmul(attn, x)?;
    let proj = g.matmul(mixed, w)?;
    let p = g.sigmoid(proj);
    let target = Array::from_fn2(4, 1, |r, _| (r % 2) as f64);
    let bce = g.bce(p, &target)?;
    Ok(g.mean(bce))
}

fn main() -> glitchloc::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let point = [random(&mut rng, 4, 3), random(&mut rng, 3, 1)];

    let mut g = Graph::new();
    let vars: Vec<Var> = point.iter().map(|a| g.var(a.clone())).collect();
    let loss = block(&mut g, &vars)?;
    g.backward(loss)?;
    println!("loss {:.6}", g.scalar(loss));
    println!("d loss / d w = {:?}", g.grad(vars[1]).unwrap());

    let report = grad_check(block, &point, 1e-6)?;
    println!("per-input relative error {:?}", report.per_parameter);
    println!("max relative error {:.2e}", report.max_relative_error);
    Ok(())
}
