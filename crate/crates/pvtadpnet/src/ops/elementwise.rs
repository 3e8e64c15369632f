//! Elementwise ops, activations, and whole-tensor reductions.

use crate::scalar::{el, Elem};
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

/// Records a unary elementwise op. `df(x, y)` is dy/dx given input and output.
fn unary<E: Elem>(
    tape: &mut Tape<E>,
    x: TensorId,
    f: impl Fn(E) -> E,
    df: impl Fn(E, E) -> E + 'static,
) -> TensorId {
    let value = tape.value(x).map(&f);
    tape.count_flops(value.numel() as u64);
    tape.push_op(
        value,
        vec![x],
        Box::new(move |gout, parents, out| {
            let xv = parents[0];
            let data = gout
                .data
                .iter()
                .zip(&xv.data)
                .zip(&out.data)
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect();
            vec![Tensor::new(xv.shape.clone(), data)]
        }),
    )
}

enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

/// Binary elementwise op. Shapes must match, or `b` may be a single-element
/// scalar broadcast over `a`. Output shape is always `a`'s shape.
fn binary<E: Elem>(tape: &mut Tape<E>, a: TensorId, b: TensorId, kind: BinKind) -> TensorId {
    let (av, bv) = (tape.value(a), tape.value(b));
    let scalar_b = bv.numel() == 1 && av.numel() != 1;
    assert!(
        scalar_b || av.shape == bv.shape,
        "shape mismatch not resolvable by broadcast: {:?} vs {:?}",
        av.shape,
        bv.shape
    );
    let get_b = move |bd: &[E], i: usize| if scalar_b { bd[0] } else { bd[i] };
    let data: Vec<E> = av
        .data
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let y = get_b(&bv.data, i);
            match kind {
                BinKind::Add => x + y,
                BinKind::Sub => x - y,
                BinKind::Mul => x * y,
                BinKind::Div => x / y,
            }
        })
        .collect();
    let value = Tensor::new(av.shape.clone(), data);
    tape.count_flops(value.numel() as u64);
    tape.push_op(
        value,
        vec![a, b],
        Box::new(move |gout, parents, _| {
            let (av, bv) = (parents[0], parents[1]);
            let n = av.numel();
            let mut da = vec![E::zero(); n];
            let mut db = vec![E::zero(); bv.numel()];
            for i in 0..n {
                let g = gout.data[i];
                let (x, y) = (av.data[i], get_b(&bv.data, i));
                let (ga, gb) = match kind {
                    BinKind::Add => (g, g),
                    BinKind::Sub => (g, -g),
                    BinKind::Mul => (g * y, g * x),
                    BinKind::Div => (g / y, -g * x / (y * y)),
                };
                da[i] = ga;
                if scalar_b {
                    db[0] = db[0] + gb;
                } else {
                    db[i] = gb;
                }
            }
            vec![
                Tensor::new(av.shape.clone(), da),
                Tensor::new(bv.shape.clone(), db),
            ]
        }),
    )
}

pub fn add<E: Elem>(tape: &mut Tape<E>, a: TensorId, b: TensorId) -> TensorId {
    binary(tape, a, b, BinKind::Add)
}

pub fn sub<E: Elem>(tape: &mut Tape<E>, a: TensorId, b: TensorId) -> TensorId {
    binary(tape, a, b, BinKind::Sub)
}

pub fn mul<E: Elem>(tape: &mut Tape<E>, a: TensorId, b: TensorId) -> TensorId {
    binary(tape, a, b, BinKind::Mul)
}

pub fn div<E: Elem>(tape: &mut Tape<E>, a: TensorId, b: TensorId) -> TensorId {
    binary(tape, a, b, BinKind::Div)
}

pub fn add_const<E: Elem>(tape: &mut Tape<E>, x: TensorId, c: f64) -> TensorId {
    let k = el::<E>(c);
    unary(tape, x, |v| v + k, move |_, _| E::one())
}

pub fn scale<E: Elem>(tape: &mut Tape<E>, x: TensorId, c: f64) -> TensorId {
    let k = el::<E>(c);
    unary(tape, x, |v| v * k, move |_, _| k)
}

pub fn neg<E: Elem>(tape: &mut Tape<E>, x: TensorId) -> TensorId {
    scale(tape, x, -1.0)
}

pub fn relu<E: Elem>(tape: &mut Tape<E>, x: TensorId) -> TensorId {
    unary(
        tape,
        x,
        |v| if v > E::zero() { v } else { E::zero() },
        |x, _| if x > E::zero() { E::one() } else { E::zero() },
    )
}

pub fn leaky_relu<E: Elem>(tape: &mut Tape<E>, x: TensorId, slope: f64) -> TensorId {
    let s = el::<E>(slope);
    unary(
        tape,
        x,
        move |v| if v > E::zero() { v } else { v * s },
        move |x, _| if x > E::zero() { E::one() } else { s },
    )
}

pub fn sigmoid<E: Elem>(tape: &mut Tape<E>, x: TensorId) -> TensorId {
    unary(
        tape,
        x,
        |v| E::one() / (E::one() + (-v).exp()),
        |_, y| y * (E::one() - y),
    )
}

/// GELU via the tanh approximation.
pub fn gelu<E: Elem>(tape: &mut Tape<E>, x: TensorId) -> TensorId {
    let c = el::<E>((2.0 / std::f64::consts::PI).sqrt());
    let k = el::<E>(0.044715);
    let half = el::<E>(0.5);
    let three = el::<E>(3.0);
    unary(
        tape,
        x,
        move |v| {
            let u = c * (v + k * v * v * v);
            half * v * (E::one() + u.tanh())
        },
        move |x, _| {
            let u = c * (x + k * x * x * x);
            let t = u.tanh();
            let du = c * (E::one() + three * k * x * x);
            half * (E::one() + t) + half * x * (E::one() - t * t) * du
        },
    )
}

pub fn ln<E: Elem>(tape: &mut Tape<E>, x: TensorId) -> TensorId {
    unary(tape, x, |v| v.ln(), |x, _| E::one() / x)
}

/// Clamp to [lo, hi]; gradient is passed through inside the interval and
/// zeroed where the clamp is active.
pub fn clamp<E: Elem>(tape: &mut Tape<E>, x: TensorId, lo: f64, hi: f64) -> TensorId {
    let (lo, hi) = (el::<E>(lo), el::<E>(hi));
    unary(
        tape,
        x,
        move |v| v.max(lo).min(hi),
        move |x, _| {
            if x > lo && x < hi {
                E::one()
            } else {
                E::zero()
            }
        },
    )
}

pub fn sum_all<E: Elem>(tape: &mut Tape<E>, x: TensorId) -> TensorId {
    let s: E = tape.value(x).data.iter().copied().sum();
    tape.count_flops(tape.value(x).numel() as u64);
    tape.push_op(
        Tensor::scalar(s),
        vec![x],
        Box::new(|gout, parents, _| {
            let g = gout.data[0];
            vec![Tensor::full(&parents[0].shape, g)]
        }),
    )
}

pub fn mean_all<E: Elem>(tape: &mut Tape<E>, x: TensorId) -> TensorId {
    let n = tape.value(x).numel();
    let s = sum_all(tape, x);
    scale(tape, s, 1.0 / n as f64)
}
