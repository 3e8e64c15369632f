//! Walks through the building blocks and their algebraic identities:
//! squeeze-and-excitation gating, the SE-gated residual block, adapter
//! skip transforms, and spatial-reduction attention.

use pvtadpnet::blocks::{Activation, AdapterBlock, ResidualSEBlock, SEBlock};
use pvtadpnet::encoder::SraAttention;
use pvtadpnet::params::ParamStore;
use pvtadpnet::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // --- Squeeze-and-excitation: zero weights gate every channel by
    // sigmoid(0) = 0.5 exactly.
    let mut ps = ParamStore::<f64>::new();
    let se = SEBlock::new(&mut ps, &mut rng, "se", 4, 2);
    for e in ps.iter_mut() {
        e.value.fill(0.0);
    }
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::from_f64(&[1, 4, 2, 2], &vec![2.0; 16]), false);
    let y = se.forward(&mut tape, &ps, x);
    println!("zero-weight SE on constant 2.0 input -> {:?}", &tape.value(y).data[..4]);

    // --- Residual SE block: zeroing the branch leaves ReLU(x), bit-exact.
    let mut ps = ParamStore::<f64>::new();
    let res = ResidualSEBlock::new(&mut ps, &mut rng, "res", 4, 4, 2);
    for e in ps.iter_mut() {
        if e.name.contains("conv") || e.name.contains("reduce.") || e.name.contains(".se.") {
            e.value.fill(0.0);
        }
    }
    let mut tape = Tape::<f64>::new();
    let xs: Vec<f64> = (0..16).map(|i| i as f64 - 8.0).collect();
    let x = tape.leaf(Tensor::from_f64(&[1, 4, 2, 2], &xs), false);
    let y = res.forward(&mut tape, &mut ps, x, false);
    let relu_exact = tape.value(y).data.iter().zip(&xs).all(|(&o, &i)| o == i.max(0.0));
    println!("zero-branch residual block == ReLU(x) bit-exact: {relu_exact}");

    // --- Adapter: two bottleneck pathways summed; sharing the weights
    // doubles the single-pathway output.
    let mut ps = ParamStore::<f64>::new();
    let shared = AdapterBlock::new(&mut ps, &mut rng, "adp", 8, 8, 4, Activation::Relu, true);
    let mut tape = Tape::<f64>::new();
    let xs: Vec<f64> = (0..32).map(|i| (i as f64) / 16.0 - 1.0).collect();
    let x = tape.leaf(Tensor::from_f64(&[1, 8, 2, 2], &xs), false);
    let y = shared.forward(&mut tape, &ps, x);
    println!(
        "shared-weight adapter output head: {:?}",
        &tape.value(y).data[..4]
    );
    println!("adapter trainable parameters: {}", ps.param_count());

    // --- Spatial-reduction attention: attention rows are probability
    // distributions, and sr halves the key/value token count per axis.
    let mut ps = ParamStore::<f64>::new();
    let attn = SraAttention::new(&mut ps, &mut rng, "attn", 8, 2, 2);
    let mut tape = Tape::<f64>::new();
    let n = 16; // 4x4 token grid
    let xs: Vec<f64> = (0..n * 8).map(|i| ((i * 13 % 23) as f64) / 23.0 - 0.5).collect();
    let x = tape.leaf(Tensor::from_f64(&[1, n, 8], &xs), false);
    let (_, probs) = attn.forward_with_probs(&mut tape, &ps, x, 4, 4);
    let p = tape.value(probs);
    println!(
        "attention prob tensor {:?} (queries x reduced keys); first row sums to {:.6}",
        p.shape,
        p.data[..p.shape[2]].iter().sum::<f64>()
    );
}
