//! Tour of the autodiff core: record ops on a tape, run the backward
//! sweep, and compare a gradient against central finite differences.

use pvtadpnet::check::check_grad;
use pvtadpnet::{ops, Tape, Tensor};

fn main() {
    // Forward: loss = mean(sigmoid(x * x + x)).
    let x0 = [0.3, -0.8, 1.2, 0.05];
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::from_f64(&[4], &x0), true);
    let sq = ops::mul(&mut tape, x, x);
    let s = ops::add(&mut tape, sq, x);
    let y = ops::sigmoid(&mut tape, s);
    let loss = ops::mean_all(&mut tape, y);
    println!("loss = {:.6}", tape.value(loss).item());

    // Reverse sweep: gradients accumulate on the tape.
    tape.backward(loss);
    let grad = tape.grad(x).unwrap().to_f64_vec();
    println!("dloss/dx = {grad:?}");

    // Independent oracle: central finite differences.
    let mut f = |xs: &[f64]| {
        let mut t = Tape::<f64>::new();
        let xi = t.leaf(Tensor::from_f64(&[4], xs), false);
        let sq = ops::mul(&mut t, xi, xi);
        let s = ops::add(&mut t, sq, xi);
        let y = ops::sigmoid(&mut t, s);
        let l = ops::mean_all(&mut t, y);
        t.value(l).item()
    };
    let err = check_grad(&mut f, &x0, &grad, 1e-6);
    println!("max relative error vs finite differences: {err:.2e}");
    assert!(err < 1e-8);

    // The tape also counts multiply-accumulate FLOPs as a side effect.
    println!("tape recorded {} nodes, {} flops", tape.len(), tape.flops());
}
