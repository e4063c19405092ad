//! Self-verification suites: finite-difference gradient checks for every
//! tape operation and for the full training objective.
//!
//! The same suites back the `grad-check` command and the repository's
//! acceptance tests, so there is exactly one definition of "the gradients
//! are right". Checks rebuild the computation in `f64`; tolerances are
//! `1e-5` per op and `1e-4` for the composite loss (which chains dozens of
//! ops, so rounding accumulates).

use rand::Rng;

use crate::model::{self, Bound, ModelConfig, ModelParams};
use crate::rng::{self, Stream};
use crate::tensor::gradcheck::{fill_test_tensor, grad_check, GradCheckReport, STEP};
use crate::tensor::{Tape, Tensor, TensorId};

/// Per-op relative-error tolerance.
pub const OP_TOL: f64 = 1e-5;
/// Composite-loss relative-error tolerance.
pub const COMPOSITE_TOL: f64 = 1e-4;

/// One named check outcome.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub tolerance: f64,
    pub pass: bool,
}

impl SuiteReport {
    fn from_report(name: &str, report: &GradCheckReport, tolerance: f64) -> SuiteReport {
        SuiteReport {
            name: name.to_string(),
            max_rel_err: report.max_rel_err,
            checked: report.checked,
            tolerance,
            pass: report.passes(tolerance),
        }
    }
}

/// Project a matrix to a scalar as `Σ x ⊙ w` with distinct per-element
/// weights so that errors in symmetric positions cannot cancel.
fn weighted(tape: &mut Tape<f64>, x: TensorId) -> TensorId {
    let (rows, cols) = tape.shape(x);
    let weights: Vec<f64> = (0..rows * cols).map(|i| 0.3 + 0.17 * i as f64).collect();
    let w = tape.constant(rows, cols, weights);
    let xw = tape.mul(x, w);
    let pooled = tape.mean_rows(xw, &vec![true; rows]);
    let scaled = tape.scale(pooled, rows as f64);
    let mut acc = tape.slice_cols(scaled, 0, 1);
    for j in 1..cols {
        let next = tape.slice_cols(scaled, j, 1);
        acc = tape.add(acc, next);
    }
    acc
}

/// Check every tape operation on one random instance per op. The seed
/// varies both the tensor contents and (slightly) the shapes.
pub fn op_suite(seed: u64) -> Vec<SuiteReport> {
    let salt = |k: u64| seed.wrapping_mul(1_000_003).wrapping_add(k);
    let r = 2 + (seed % 3) as usize; // 2..=4 rows
    let c = 3 + (seed % 2) as usize; // 3..=4 cols
    let mut out = Vec::new();
    let mut push = |name: &str, report: GradCheckReport| {
        out.push(SuiteReport::from_report(name, &report, OP_TOL));
    };

    push(
        "add",
        grad_check(
            &[fill_test_tensor(vec![r, c], salt(1)), fill_test_tensor(vec![r, c], salt(2))],
            |tape, ids| {
                let s = tape.add(ids[0], ids[1]);
                weighted(tape, s)
            },
        ),
    );
    push(
        "add_bias",
        grad_check(
            &[fill_test_tensor(vec![r, c], salt(3)), fill_test_tensor(vec![1, c], salt(4))],
            |tape, ids| {
                let s = tape.add_bias(ids[0], ids[1]);
                weighted(tape, s)
            },
        ),
    );
    push(
        "mul",
        grad_check(
            &[fill_test_tensor(vec![r, c], salt(5)), fill_test_tensor(vec![r, c], salt(6))],
            |tape, ids| {
                let s = tape.mul(ids[0], ids[1]);
                weighted(tape, s)
            },
        ),
    );
    push(
        "scale",
        grad_check(&[fill_test_tensor(vec![r, c], salt(7))], |tape, ids| {
            let s = tape.scale(ids[0], -0.437);
            weighted(tape, s)
        }),
    );
    push(
        "matmul",
        grad_check(
            &[fill_test_tensor(vec![r, 3], salt(8)), fill_test_tensor(vec![3, c], salt(9))],
            |tape, ids| {
                let s = tape.matmul(ids[0], ids[1]);
                weighted(tape, s)
            },
        ),
    );
    push(
        "matmul_bt",
        grad_check(
            &[fill_test_tensor(vec![r, 3], salt(10)), fill_test_tensor(vec![c, 3], salt(11))],
            |tape, ids| {
                let s = tape.matmul_bt(ids[0], ids[1]);
                weighted(tape, s)
            },
        ),
    );
    for axis in [0usize, 1] {
        push(
            &format!("softmax(axis={axis})"),
            grad_check(&[fill_test_tensor(vec![r, c], salt(12 + axis as u64))], |tape, ids| {
                let s = tape.softmax(ids[0], axis);
                weighted(tape, s)
            }),
        );
    }
    push(
        "layer_norm",
        grad_check(
            &[
                fill_test_tensor(vec![r, c], salt(14)),
                fill_test_tensor(vec![1, c], salt(15)),
                fill_test_tensor(vec![1, c], salt(16)),
            ],
            |tape, ids| {
                let s = tape.layer_norm(ids[0], ids[1], ids[2]);
                weighted(tape, s)
            },
        ),
    );
    push(
        "gelu",
        grad_check(&[fill_test_tensor(vec![r, c], salt(17))], |tape, ids| {
            let s = tape.gelu(ids[0]);
            weighted(tape, s)
        }),
    );
    // ReLU has a kink at zero; finite differences straddling it are
    // meaningless, so nudge any element that close away.
    let mut relu_in = fill_test_tensor(vec![r, c], salt(18));
    for v in &mut relu_in.data {
        if v.abs() < 10.0 * STEP {
            *v += 0.01;
        }
    }
    push(
        "relu",
        grad_check(&[relu_in], |tape, ids| {
            let s = tape.relu(ids[0]);
            weighted(tape, s)
        }),
    );
    let ids_picked: Vec<u32> = vec![4, 0, 4, (seed % 5) as u32];
    push(
        "embed",
        grad_check(&[fill_test_tensor(vec![6, c], salt(19))], |tape, tids| {
            let s = tape.embed(tids[0], &ids_picked);
            weighted(tape, s)
        }),
    );
    push(
        "concat_rows",
        grad_check(
            &[fill_test_tensor(vec![r, c], salt(20)), fill_test_tensor(vec![2, c], salt(21))],
            |tape, ids| {
                let s = tape.concat_rows(&[ids[0], ids[1]]);
                weighted(tape, s)
            },
        ),
    );
    push(
        "concat_cols",
        grad_check(
            &[fill_test_tensor(vec![r, c], salt(22)), fill_test_tensor(vec![r, 2], salt(23))],
            |tape, ids| {
                let s = tape.concat_cols(&[ids[0], ids[1]]);
                weighted(tape, s)
            },
        ),
    );
    push(
        "slice_cols",
        grad_check(&[fill_test_tensor(vec![r, c + 2], salt(24))], |tape, ids| {
            let s = tape.slice_cols(ids[0], 1, c);
            weighted(tape, s)
        }),
    );
    let mut mask = vec![true; r];
    if r > 1 {
        mask[(seed % r as u64) as usize] = false;
        if mask.iter().all(|&m| !m) {
            mask[0] = true;
        }
    }
    push(
        "mean_rows",
        grad_check(&[fill_test_tensor(vec![r, c], salt(25))], |tape, ids| {
            let s = tape.mean_rows(ids[0], &mask);
            weighted(tape, s)
        }),
    );
    let targets: Vec<u32> = (0..r).map(|i| ((seed as usize + i) % c) as u32).collect();
    let mut keep = vec![true; r];
    if r > 2 {
        keep[1] = false;
    }
    push(
        "cross_entropy",
        grad_check(&[fill_test_tensor(vec![r, c], salt(26))], |tape, ids| {
            tape.cross_entropy(ids[0], &targets, &keep)
        }),
    );
    let mut h: Vec<f64> = (0..c).map(|i| 0.5 + ((seed as usize + i * 3) % 7) as f64).collect();
    let total: f64 = h.iter().sum();
    for v in &mut h {
        *v /= total;
    }
    push(
        "dist_cross_entropy",
        grad_check(&[fill_test_tensor(vec![1, c], salt(27))], |tape, ids| {
            tape.dist_cross_entropy(ids[0], &h)
        }),
    );
    out
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_enc_layers_sem: 1,
        n_enc_layers_syn: 1,
        n_dec_layers: 1,
        d_ff: 16,
        vocab_size: 20,
        tagset_size: 6,
        max_sent_len: 12,
        max_parse_len: 24,
        dropout: 0.0,
        lambda_adv: 0.1,
    }
}

/// Finite-difference the full objective `L_para − λ·L_adv` with respect to
/// every trainable parameter coordinate of a tiny randomly initialized
/// model on a random input pair.
pub fn composite_check(seed: u64) -> SuiteReport {
    let cfg = tiny_config();
    let lambda = cfg.lambda_adv as f64;
    let params = ModelParams::init(cfg.clone(), seed).expect("tiny config is valid");
    let names = params.trainable_names();
    let inputs: Vec<Tensor<f64>> = names
        .iter()
        .map(|n| {
            let t = &params.tensors[n];
            Tensor::new(t.shape.clone(), t.data.iter().map(|&v| v as f64).collect())
        })
        .collect();

    let mut r = rng::stream(seed, Stream::EvalSample, 900);
    let draw_ids = |r: &mut rand_chacha::ChaCha8Rng, len: usize, hi: u32| -> Vec<u32> {
        (0..len).map(|_| r.gen_range(0..hi)).collect()
    };
    let src = draw_ids(&mut r, 5, cfg.vocab_size as u32);
    let tgt = draw_ids(&mut r, 5, cfg.vocab_size as u32);
    let parse = draw_ids(&mut r, 7, (cfg.tagset_size + 7) as u32);
    let mut h: Vec<f64> = (0..cfg.tagset_size).map(|_| r.gen_range(0.05..1.0)).collect();
    let total: f64 = h.iter().sum();
    for v in &mut h {
        *v /= total;
    }

    let src_mask = vec![true; src.len()];
    let parse_mask = vec![true; parse.len()];
    let prefix = &tgt[..tgt.len() - 1];
    let targets = &tgt[1..];
    let keep = vec![true; targets.len()];

    let report = grad_check(&inputs, |tape, ids| {
        let bound = Bound::from_map(names.iter().cloned().zip(ids.iter().copied()).collect());
        let u = model::encode_semantic(tape, &params, &bound, &src, &src_mask).unwrap();
        let u_bar = model::mean_pool(tape, u, &src_mask).unwrap();
        let v = model::encode_syntactic(tape, &params, &bound, &parse, &parse_mask).unwrap();
        let logits =
            model::decode_logits(tape, &params, &bound, u_bar, Some((v, &parse_mask)), prefix)
                .unwrap();
        let para = model::paraphrase_loss(tape, logits, targets, &keep);
        let dis = model::discriminate_logits(tape, &bound, u_bar);
        let adv = model::adversarial_loss(tape, dis, &h);
        let penalty = tape.scale(adv, -lambda);
        tape.add(para, penalty)
    });
    SuiteReport::from_report("composite objective", &report, COMPOSITE_TOL)
}

/// Everything: each op plus the composite objective, for one seed.
pub fn full_suite(seed: u64) -> Vec<SuiteReport> {
    let mut out = op_suite(seed);
    out.push(composite_check(seed));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_suite_passes_on_a_couple_of_seeds() {
        for seed in [0, 1] {
            for report in op_suite(seed) {
                assert!(
                    report.pass,
                    "{} (seed {seed}): max rel err {:.3e} over {} elements",
                    report.name, report.max_rel_err, report.checked
                );
            }
        }
    }

    #[test]
    fn composite_objective_passes_a_gradient_check() {
        let report = composite_check(0);
        assert!(
            report.pass,
            "composite: max rel err {:.3e} over {} elements",
            report.max_rel_err, report.checked
        );
        assert!(report.checked > 1000, "expected to sweep every parameter");
    }
}
