//! Built-in verification suites: finite-difference gradient checks over all
//! differentiable ops and composite blocks, plus the library's algebraic
//! invariants. Both suites produce printable pass/fail tables and back the
//! `gradcheck` and `selftest` commands.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{Activation, AdapterBlock, ResidualSEBlock, SEBlock};
use crate::check::check_op;
use crate::checkpoint::Checkpoint;
use crate::config::{ModelConfig, ModelVariant};
use crate::encoder::TransformerBlock;
use crate::loss::{dice_loss, jaccard_loss, total_loss, LossConfig};
use crate::metrics::{confusion_counts, dice_coef, iou};
use crate::model::build_model;
use crate::ops;
use crate::params::ParamStore;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::trainer::EarlyStopper;

/// Outcome of one named check.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn from_err(name: &str, err: f64, tol: f64) -> Self {
        CheckResult {
            name: name.to_string(),
            passed: err < tol,
            detail: format!("max rel err {err:.2e} (tol {tol:.0e})"),
        }
    }

    fn from_bool(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Prints one line per result; returns true iff everything passed.
pub fn print_table(results: &[CheckResult]) -> bool {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut all = true;
    for r in results {
        all &= r.passed;
        println!(
            "{} {:<width$}  {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail,
        );
    }
    println!(
        "{}/{} checks passed",
        results.iter().filter(|r| r.passed).count(),
        results.len()
    );
    all
}

const TOL_OP: f64 = 1e-5;
const TOL_BLOCK: f64 = 1e-3;
const H: f64 = 1e-5;

/// Finite-difference suite over primitive ops (tolerance 1e-5) and
/// composite blocks up to the full tiny model (tolerance 1e-3), all at
/// 64-bit precision.
pub fn gradcheck_suite() -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut op = |name: &str, shape: &[usize], build: &dyn Fn(&mut Tape<f64>, crate::TensorId) -> crate::TensorId| {
        let err = check_op(shape, 21, H, build);
        out.push(CheckResult::from_err(name, err, TOL_OP));
    };

    op("op.add_mul", &[2, 3], &|t, x| {
        let y = ops::mul(t, x, x);
        ops::add(t, y, x)
    });
    op("op.div_shifted", &[2, 3], &|t, x| {
        let num = ops::add_const(t, x, 0.3);
        let den = ops::mul(t, x, x);
        let den = ops::add_const(t, den, 2.0);
        ops::div(t, num, den)
    });
    op("op.relu", &[3, 4], &|t, x| ops::relu(t, x));
    op("op.leaky_relu", &[3, 4], &|t, x| ops::leaky_relu(t, x, 0.01));
    op("op.sigmoid", &[3, 4], &|t, x| ops::sigmoid(t, x));
    op("op.gelu", &[3, 4], &|t, x| ops::gelu(t, x));
    op("op.ln_positive", &[3, 4], &|t, x| {
        let sq = ops::mul(t, x, x);
        let pos = ops::add_const(t, sq, 0.5);
        ops::ln(t, pos)
    });
    op("op.mean_sum", &[4, 4], &|t, x| {
        let m = ops::mean_all(t, x);
        let s = ops::sum_all(t, x);
        ops::add(t, m, s)
    });
    op("op.softmax_last", &[2, 5], &|t, x| ops::softmax_last(t, x));
    op("op.layer_norm", &[2, 6], &|t, x| {
        let gamma = t.constant(Tensor::from_f64(&[6], &[1.1, 0.9, 1.2, 0.8, 1.0, 1.3]));
        let beta = t.constant(Tensor::from_f64(&[6], &[0.1, -0.2, 0.0, 0.3, -0.1, 0.2]));
        ops::layer_norm(t, x, gamma, beta, 1e-6)
    });
    op("op.batch_norm_train", &[2, 2, 3, 3], &|t, x| {
        let gamma = t.constant(Tensor::from_f64(&[2], &[1.2, 0.7]));
        let beta = t.constant(Tensor::from_f64(&[2], &[0.1, -0.3]));
        let mut rm = Tensor::zeros(&[2]);
        let mut rv = Tensor::ones(&[2]);
        ops::batch_norm2d(t, x, gamma, beta, &mut rm, &mut rv, 1e-5, 0.1, true)
    });
    op("op.matmul_self", &[4, 4], &|t, x| ops::matmul(t, x, x));
    op("op.matmul_nt", &[3, 4], &|t, x| ops::matmul_nt(t, x, x));
    op("op.conv3x3_xgrad", &[1, 2, 5, 5], &|t, x| {
        let w = t.constant(Tensor::from_f64(
            &[1, 2, 3, 3],
            &(0..18).map(|i| (i as f64 - 9.0) / 10.0).collect::<Vec<_>>(),
        ));
        conv_same(t, x, w, 1)
    });
    op("op.conv3x3_wgrad", &[1, 2, 3, 3], &|t, w| {
        let x = t.constant(Tensor::from_f64(
            &[1, 2, 5, 5],
            &(0..50).map(|i| ((i * 7 % 11) as f64 - 5.0) / 6.0).collect::<Vec<_>>(),
        ));
        conv_same(t, x, w, 1)
    });
    op("op.conv_strided", &[1, 1, 6, 6], &|t, x| {
        let w = t.constant(Tensor::from_f64(&[2, 1, 2, 2], &[0.5, -0.3, 0.2, 0.8, -0.1, 0.4, 0.6, -0.7]));
        ops::conv2d(
            t,
            x,
            w,
            None,
            ops::Conv2dSpec { stride: 2, padding: 0, groups: 1 },
        )
    });
    op("op.conv_depthwise", &[1, 2, 4, 4], &|t, x| {
        let w = t.constant(Tensor::from_f64(
            &[2, 1, 3, 3],
            &(0..18).map(|i| ((i % 5) as f64 - 2.0) / 4.0).collect::<Vec<_>>(),
        ));
        ops::conv2d(
            t,
            x,
            w,
            None,
            ops::Conv2dSpec { stride: 1, padding: 1, groups: 2 },
        )
    });
    op("op.avg_pool_down", &[1, 2, 4, 4], &|t, x| ops::avg_pool_down(t, x, 2));
    op("op.upsample_2x", &[1, 2, 3, 3], &|t, x| ops::upsample_bilinear_2x(t, x));
    op("op.pad2d", &[1, 1, 3, 3], &|t, x| ops::pad2d(t, x, 1, 0, 1, 0));
    op("op.concat_channels", &[1, 2, 2, 2], &|t, x| {
        let y = ops::scale(t, x, 0.5);
        ops::concat_channels(t, &[x, y])
    });
    op("op.global_avg_pool", &[2, 3, 2, 2], &|t, x| ops::global_avg_pool(t, x));
    op("op.scale_channels", &[1, 3, 2, 2], &|t, x| {
        let s = ops::global_avg_pool(t, x);
        let s = ops::sigmoid(t, s);
        ops::scale_channels(t, x, s)
    });
    op("op.head_merge", &[1, 4, 6], &|t, x| {
        let h = ops::split_heads(t, x, 2);
        ops::merge_heads(t, h, 2)
    });

    // Composite blocks: parameters are fixed, the input is perturbed. Batch
    // norms run in eval mode so repeated forwards are pure functions.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    {
        let mut ps = ParamStore::<f64>::new();
        let se = SEBlock::new(&mut ps, &mut rng, "se", 4, 2);
        let err = check_op(&[1, 4, 3, 3], 31, H, |t, x| se.forward(t, &ps, x));
        out.push(CheckResult::from_err("block.se", err, TOL_BLOCK));
    }
    {
        let mut ps = ParamStore::<f64>::new();
        let block = ResidualSEBlock::new(&mut ps, &mut rng, "res", 4, 3, 2);
        let ps = RefCell::new(ps);
        let err = check_op(&[1, 4, 4, 4], 32, H, |t, x| {
            block.forward(t, &mut ps.borrow_mut(), x, false)
        });
        out.push(CheckResult::from_err("block.residual_se", err, TOL_BLOCK));
    }
    {
        let mut ps = ParamStore::<f64>::new();
        let adapter = AdapterBlock::new(&mut ps, &mut rng, "adp", 4, 4, 2, Activation::Relu, false);
        let err = check_op(&[1, 4, 3, 3], 33, H, |t, x| adapter.forward(t, &ps, x));
        out.push(CheckResult::from_err("block.adapter", err, TOL_BLOCK));
    }
    {
        let mut ps = ParamStore::<f64>::new();
        let blk = TransformerBlock::new(&mut ps, &mut rng, "tb", 8, 2, 2, 2);
        let err = check_op(&[1, 16, 8], 34, H, |t, x| blk.forward(t, &ps, x, 4, 4));
        out.push(CheckResult::from_err("block.transformer", err, TOL_BLOCK));
    }
    {
        // End to end: tiny full-variant model + compound loss, gradient of
        // the loss with respect to the input image.
        let model = RefCell::new(build_model::<f64>(&ModelConfig::tiny(ModelVariant::Full), 7));
        let mut mask_rng = ChaCha8Rng::seed_from_u64(40);
        let mask: Vec<f64> = (0..32 * 32).map(|_| f64::from(mask_rng.gen_range(0..2))).collect();
        let mut xrng = ChaCha8Rng::seed_from_u64(41);
        let x0: Vec<f64> = (0..3 * 32 * 32).map(|_| xrng.gen_range(0.0..1.0)).collect();
        let eval = |xs: &[f64], want_grad: bool| -> (f64, Option<Vec<f64>>) {
            let mut tape = Tape::<f64>::new();
            let x = tape.leaf(Tensor::from_f64(&[1, 3, 32, 32], xs), true);
            let y = tape.constant(Tensor::from_f64(&[1, 1, 32, 32], &mask));
            let pred = model.borrow_mut().forward(&mut tape, x, false);
            let loss = total_loss(&mut tape, pred, y, &LossConfig::default());
            let lv = tape.value(loss).item();
            if want_grad {
                tape.backward(loss);
                (lv, Some(tape.grad(x).unwrap().to_f64_vec()))
            } else {
                (lv, None)
            }
        };
        let analytic = eval(&x0, true).1.unwrap();
        // Checking every input coordinate would dominate the runtime; probe
        // a deterministic subset.
        let probe: Vec<usize> = (0..x0.len()).step_by(97).collect();
        let mut f = |xs: &[f64]| eval(xs, false).0;
        let mut worst = 0.0f64;
        let mut xv = x0.clone();
        for &i in &probe {
            let num = crate::check::central_diff(&mut f, &mut xv, i, H);
            worst = worst.max(crate::check::rel_err(analytic[i], num));
        }
        out.push(CheckResult::from_err("model.tiny_full_end_to_end", worst, TOL_BLOCK));
    }
    out
}

fn conv_same(
    t: &mut Tape<f64>,
    x: crate::TensorId,
    w: crate::TensorId,
    pad: usize,
) -> crate::TensorId {
    ops::conv2d(t, x, w, None, ops::Conv2dSpec { stride: 1, padding: pad, groups: 1 })
}

/// Full invariant suite: the gradient checks plus loss identities, metric
/// oracle equivalence, shape/range contracts, block degeneracies, and the
/// checkpoint / early-stopping contracts.
pub fn selftest_suite() -> Vec<CheckResult> {
    let mut out = gradcheck_suite();
    out.push(loss_identities());
    out.push(metric_oracle());
    out.push(shape_and_range());
    out.push(block_degeneracies());
    out.push(checkpoint_roundtrip());
    out.push(early_stopping_contract());
    out
}

fn loss_identities() -> CheckResult {
    let run = |p: &[f64], y: &[f64], f: &dyn Fn(&mut Tape<f64>, crate::TensorId, crate::TensorId) -> crate::TensorId| {
        let mut t = Tape::<f64>::new();
        let pred = t.leaf(Tensor::from_f64(&[p.len()], p), false);
        let target = t.constant(Tensor::from_f64(&[y.len()], y));
        let l = f(&mut t, pred, target);
        t.value(l).item()
    };
    let perfect = [1.0, 0.0, 1.0];
    let dice_perfect = run(&perfect, &perfect, &|t, p, y| dice_loss(t, p, y, 1.0));
    let jac_perfect = run(&perfect, &perfect, &|t, p, y| jaccard_loss(t, p, y, 1.0));
    let jac_hand = run(&[0.5, 0.5], &[1.0, 0.0], &|t, p, y| jaccard_loss(t, p, y, 1.0));
    let dice_hand = run(
        &[1.0, 0.0, 0.0, 0.0],
        &[1.0, 1.0, 0.0, 0.0],
        &|t, p, y| dice_loss(t, p, y, 1.0),
    );
    let cfg = LossConfig::default();
    let p: Vec<f64> = (0..16).map(|i| 0.1 + 0.05 * i as f64).collect();
    let y: Vec<f64> = (0..16).map(|i| f64::from(i % 2)).collect();
    let total = run(&p, &y, &|t, pp, yy| total_loss(t, pp, yy, &cfg));
    let parts = run(&p, &y, &|t, pp, yy| crate::loss::bce_loss(t, pp, yy))
        + run(&p, &y, &|t, pp, yy| dice_loss(t, pp, yy, cfg.epsilon))
        + run(&p, &y, &|t, pp, yy| jaccard_loss(t, pp, yy, cfg.alpha));
    let ok = dice_perfect == 0.0
        && jac_perfect == 0.0
        && (jac_hand - 0.4).abs() < 1e-9
        && (dice_hand - 0.25).abs() < 1e-9
        && (total - parts).abs() < 1e-7;
    CheckResult::from_bool(
        "loss.identities",
        ok,
        format!(
            "perfect dice {dice_perfect:.1e}, jaccard hand {jac_hand:.6}, dice hand {dice_hand:.6}, |total-sum| {:.1e}",
            (total - parts).abs()
        ),
    )
}

fn metric_oracle() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_identity = 0.0f64;
    for _ in 0..1000 {
        let n = 16 * 16;
        let pv: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..2))).collect();
        let yv: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..2))).collect();
        let p = Tensor::<f64>::from_f64(&[n], &pv);
        let y = Tensor::<f64>::from_f64(&[n], &yv);
        // Brute-force pixel loop oracle.
        let (mut tp, mut fp, mut fnn, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for i in 0..n {
            match (pv[i] == 1.0, yv[i] == 1.0) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fnn += 1,
                (false, false) => tn += 1,
            }
        }
        if confusion_counts(&p, &y) != (tp, fp, fnn, tn) {
            return CheckResult::from_bool("metrics.oracle", false, "confusion count mismatch");
        }
        let d = dice_coef(&p, &y);
        let i = iou(&p, &y);
        worst_identity = worst_identity.max((d - 2.0 * i / (1.0 + i)).abs());
    }
    CheckResult::from_bool(
        "metrics.oracle",
        worst_identity < 1e-9,
        format!("1000 pairs; worst dice/iou identity gap {worst_identity:.1e}"),
    )
}

fn shape_and_range() -> CheckResult {
    for variant in ModelVariant::ALL {
        let mut model = build_model::<f32>(&ModelConfig::tiny(variant), 11);
        for size in [64usize, 96] {
            let mut tape = Tape::no_grad();
            let mut rng = ChaCha8Rng::seed_from_u64(size as u64);
            let n = 3 * size * size;
            let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let x = tape.leaf(Tensor::from_f64(&[1, 3, size, size], &xs), false);
            let y = model.forward(&mut tape, x, false);
            let out = tape.value(y);
            if out.shape != vec![1, 1, size, size] {
                return CheckResult::from_bool(
                    "model.shape_range",
                    false,
                    format!("{} at {size}: shape {:?}", variant.name(), out.shape),
                );
            }
            if !out.data.iter().all(|&v| v > 0.0 && v < 1.0) {
                return CheckResult::from_bool(
                    "model.shape_range",
                    false,
                    format!("{} at {size}: output left (0,1)", variant.name()),
                );
            }
        }
    }
    CheckResult::from_bool(
        "model.shape_range",
        true,
        "4 variants x {64,96}: [B,1,H,W] in (0,1)",
    )
}

fn block_degeneracies() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    // Zero-weight SE scales by exactly sigmoid(0) = 0.5.
    let mut ps = ParamStore::<f64>::new();
    let se = SEBlock::new(&mut ps, &mut rng, "se", 4, 2);
    for e in ps.iter_mut() {
        e.value.fill(0.0);
    }
    let mut tape = Tape::<f64>::new();
    let xs: Vec<f64> = (0..16).map(|i| i as f64 / 4.0).collect();
    let x = tape.leaf(Tensor::from_f64(&[1, 4, 2, 2], &xs), false);
    let y = se.forward(&mut tape, &ps, x);
    let se_ok = tape
        .value(y)
        .data
        .iter()
        .zip(&xs)
        .all(|(&o, &i)| o == 0.5 * i);

    // Zero-branch residual block equals ReLU(x) bit-exactly (cin == cout,
    // identity shortcut, zeroed convolution weights).
    let mut ps2 = ParamStore::<f64>::new();
    let res = ResidualSEBlock::new(&mut ps2, &mut rng, "res", 4, 4, 2);
    for e in ps2.iter_mut() {
        if e.name.contains("conv") || e.name.contains("reduce.") || e.name.contains(".se.") {
            e.value.fill(0.0);
        }
    }
    let mut tape2 = Tape::<f64>::new();
    let xs2: Vec<f64> = (0..16).map(|i| i as f64 - 8.0).collect();
    let x2 = tape2.leaf(Tensor::from_f64(&[1, 4, 2, 2], &xs2), false);
    let y2 = res.forward(&mut tape2, &mut ps2, x2, false);
    let res_ok = tape2
        .value(y2)
        .data
        .iter()
        .zip(&xs2)
        .all(|(&o, &i)| o == i.max(0.0));

    // Zero-weight adapter outputs exactly zero.
    let mut ps3 = ParamStore::<f64>::new();
    let adp = AdapterBlock::new(&mut ps3, &mut rng, "adp", 4, 4, 2, Activation::Relu, false);
    for e in ps3.iter_mut() {
        e.value.fill(0.0);
    }
    let mut tape3 = Tape::<f64>::new();
    let x3 = tape3.leaf(Tensor::from_f64(&[1, 4, 2, 2], &xs), false);
    let y3 = adp.forward(&mut tape3, &ps3, x3);
    let adp_ok = tape3.value(y3).data.iter().all(|&v| v == 0.0);

    CheckResult::from_bool(
        "block.degeneracies",
        se_ok && res_ok && adp_ok,
        format!("zero-SE half {se_ok}, zero-branch relu {res_ok}, zero-adapter {adp_ok}"),
    )
}

fn checkpoint_roundtrip() -> CheckResult {
    let model = build_model::<f32>(&ModelConfig::tiny(ModelVariant::Full), 13);
    let ckpt = Checkpoint::from_model(&model, 4, 0.9, 100);
    let ok = match ckpt.to_bytes() {
        Ok(b1) => match Checkpoint::<f32>::from_bytes(&b1) {
            Ok(c2) => c2.to_bytes().map(|b2| b1 == b2).unwrap_or(false),
            Err(_) => false,
        },
        Err(_) => false,
    };
    CheckResult::from_bool("checkpoint.roundtrip", ok, "save -> load -> save byte-identical")
}

fn early_stopping_contract() -> CheckResult {
    let mut s = EarlyStopper::new(5, 1e-4);
    let seq = [0.5, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6];
    let mut stop_epoch = None;
    for (i, &m) in seq.iter().enumerate() {
        if s.update(m).1 {
            stop_epoch = Some(i + 1);
            break;
        }
    }
    CheckResult::from_bool(
        "trainer.early_stopping",
        stop_epoch == Some(7),
        format!("patience 5 fired at epoch {stop_epoch:?} (expected 7)"),
    )
}
