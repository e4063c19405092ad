//! Finite-difference gradient checking.
//!
//! Rebuilds the computation in `f64` (training itself runs in `f32`) and
//! compares every analytic input gradient against central differences with
//! step `h = 1e-5`. The relative error of element `e` is
//!
//! ```text
//! |analytic − numeric| / max(|analytic|, |numeric|, 1e-3)
//! ```
//!
//! The `1e-3` floor keeps elements whose true gradient is essentially zero
//! (absolute disagreement < 1e-8 in practice) from dominating the report.

use super::{Tape, Tensor, TensorId};

pub const STEP: f64 = 1e-5;
const REL_FLOOR: f64 = 1e-3;

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error over all checked elements.
    pub max_rel_err: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: Option<(usize, usize)>,
    /// Total number of elements compared.
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < tolerance
    }
}

/// Check the gradients of a scalar-valued graph builder.
///
/// `build` receives a fresh tape plus one gradient-tracked leaf per input
/// tensor and must return the loss node. It is called `1 + 2·numel` times,
/// so keep check problems small.
///
/// Panics if the builder produces a non-finite loss (that is a failure of
/// the op under check, not of the harness).
pub fn grad_check<F>(inputs: &[Tensor<f64>], build: F) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, &[TensorId]) -> TensorId,
{
    let run = |tensors: &[Tensor<f64>]| -> (f64, Vec<Vec<f64>>) {
        let mut tape: Tape<f64> = Tape::new();
        let ids: Vec<TensorId> = tensors.iter().map(|t| tape.leaf_tensor(t, true)).collect();
        let loss = build(&mut tape, &ids);
        let value = tape.scalar(loss);
        assert!(value.is_finite(), "grad_check: non-finite loss {value}");
        tape.backward(loss);
        let grads = ids
            .iter()
            .map(|&id| tape.grad(id).expect("tracked leaf has gradient").to_vec())
            .collect();
        (value, grads)
    };

    let (_, analytic) = run(inputs);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for ti in 0..inputs.len() {
        for e in 0..inputs[ti].data.len() {
            let orig = work[ti].data[e];
            work[ti].data[e] = orig + STEP;
            let f_plus = run_forward_only(&work, &build);
            work[ti].data[e] = orig - STEP;
            let f_minus = run_forward_only(&work, &build);
            work[ti].data[e] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * STEP);
            let a = analytic[ti][e];
            let rel = if a.is_finite() && numeric.is_finite() {
                (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR)
            } else {
                f64::INFINITY
            };
            report.checked += 1;
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = rel;
                report.worst = Some((ti, e));
            }
        }
    }
    report
}

/// Forward-only evaluation: no gradient tracking, no backward.
fn run_forward_only<F>(tensors: &[Tensor<f64>], build: &F) -> f64
where
    F: Fn(&mut Tape<f64>, &[TensorId]) -> TensorId,
{
    let mut tape: Tape<f64> = Tape::new();
    let ids: Vec<TensorId> = tensors.iter().map(|t| tape.leaf_tensor(t, false)).collect();
    let loss = build(&mut tape, &ids);
    tape.scalar(loss)
}

/// Deterministically fill a tensor with values in roughly `[-1, 1]` for
/// check problems, spread so no two elements coincide.
pub fn fill_test_tensor(shape: Vec<usize>, salt: u64) -> Tensor<f64> {
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    let mut state = salt.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x243F_6A88);
    for _ in 0..numel {
        state = state
            .wrapping_mul(6_364_136_223_846_793_005)
            .wrapping_add(1_442_695_040_888_963_407);
        let unit = ((state >> 11) as f64) / ((1u64 << 53) as f64);
        data.push(unit * 2.0 - 1.0);
    }
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-5;

    fn assert_passes(report: &GradCheckReport, what: &str) {
        assert!(
            report.passes(TOL),
            "{what}: max rel err {:.3e} at {:?} over {} elements",
            report.max_rel_err,
            report.worst,
            report.checked
        );
    }

    #[test]
    fn matmul_gradients() {
        let a = fill_test_tensor(vec![3, 4], 1);
        let b = fill_test_tensor(vec![4, 2], 2);
        let report = grad_check(&[a, b], |tape, ids| {
            let c = tape.matmul(ids[0], ids[1]);
            weighted_sum(tape, c)
        });
        assert_passes(&report, "matmul");
    }

    #[test]
    fn matmul_bt_gradients() {
        let a = fill_test_tensor(vec![3, 4], 3);
        let b = fill_test_tensor(vec![5, 4], 4);
        let report = grad_check(&[a, b], |tape, ids| {
            let c = tape.matmul_bt(ids[0], ids[1]);
            weighted_sum(tape, c)
        });
        assert_passes(&report, "matmul_bt");
    }

    #[test]
    fn mul_and_add_gradients() {
        let a = fill_test_tensor(vec![2, 5], 20);
        let b = fill_test_tensor(vec![2, 5], 21);
        let report = grad_check(&[a, b], |tape, ids| {
            let p = tape.mul(ids[0], ids[1]);
            let s = tape.add(p, ids[0]);
            weighted_sum(tape, s)
        });
        assert_passes(&report, "mul + add");
    }

    #[test]
    fn softmax_gradients_both_axes() {
        for axis in [0, 1] {
            let x = fill_test_tensor(vec![3, 4], 5 + axis as u64);
            let report = grad_check(&[x], |tape, ids| {
                let s = tape.softmax(ids[0], axis);
                // Weighted sum keeps the loss sensitive to every element
                // (a plain sum of a softmax lane is constant 1).
                weighted_sum(tape, s)
            });
            assert_passes(&report, &format!("softmax axis {axis}"));
        }
    }

    #[test]
    fn layer_norm_gradients() {
        let x = fill_test_tensor(vec![3, 6], 7);
        let gain = fill_test_tensor(vec![1, 6], 8);
        let bias = fill_test_tensor(vec![1, 6], 9);
        let report = grad_check(&[x, gain, bias], |tape, ids| {
            let y = tape.layer_norm(ids[0], ids[1], ids[2]);
            weighted_sum(tape, y)
        });
        assert_passes(&report, "layer_norm");
    }

    #[test]
    fn gelu_and_relu_gradients() {
        let x = fill_test_tensor(vec![2, 8], 10);
        let report = grad_check(&[x.clone()], |tape, ids| {
            let y = tape.gelu(ids[0]);
            weighted_sum(tape, y)
        });
        assert_passes(&report, "gelu");

        // ReLU is non-differentiable at 0; fill_test_tensor avoids exact
        // zeros, and values within STEP of zero are excluded by shifting.
        let mut xr = x;
        for v in &mut xr.data {
            if v.abs() < 10.0 * STEP {
                *v += 0.01;
            }
        }
        let report = grad_check(&[xr], |tape, ids| {
            let y = tape.relu(ids[0]);
            weighted_sum(tape, y)
        });
        assert_passes(&report, "relu");
    }

    #[test]
    fn add_bias_scale_gradients() {
        let x = fill_test_tensor(vec![3, 4], 11);
        let b = fill_test_tensor(vec![1, 4], 12);
        let report = grad_check(&[x, b], |tape, ids| {
            let y = tape.add_bias(ids[0], ids[1]);
            let z = tape.scale(y, 0.7);
            weighted_sum(tape, z)
        });
        assert_passes(&report, "add_bias + scale");
    }

    #[test]
    fn embed_gradients() {
        let table = fill_test_tensor(vec![6, 3], 13);
        let report = grad_check(&[table], |tape, ids| {
            // Repeated id 4 checks scatter-add accumulation.
            let rows = tape.embed(ids[0], &[4, 0, 4, 2]);
            weighted_sum(tape, rows)
        });
        assert_passes(&report, "embed");
    }

    #[test]
    fn concat_slice_mean_gradients() {
        let a = fill_test_tensor(vec![2, 3], 14);
        let b = fill_test_tensor(vec![2, 2], 15);
        let c = fill_test_tensor(vec![1, 5], 16);
        let report = grad_check(&[a, b, c], |tape, ids| {
            let wide = tape.concat_cols(&[ids[0], ids[1]]);
            let tall = tape.concat_rows(&[wide, ids[2]]);
            let mid = tape.slice_cols(tall, 1, 3);
            let pooled = tape.mean_rows(mid, &[true, false, true]);
            weighted_sum(tape, pooled)
        });
        assert_passes(&report, "concat/slice/mean_rows");
    }

    #[test]
    fn cross_entropy_gradients() {
        let z = fill_test_tensor(vec![4, 5], 17);
        let report = grad_check(&[z], |tape, ids| {
            tape.cross_entropy(ids[0], &[1, 0, 4, 2], &[true, true, false, true])
        });
        assert_passes(&report, "cross_entropy");
    }

    #[test]
    fn dist_cross_entropy_gradients() {
        let z = fill_test_tensor(vec![1, 6], 18);
        let h = vec![0.1, 0.3, 0.05, 0.25, 0.2, 0.1];
        let report = grad_check(&[z], |tape, ids| tape.dist_cross_entropy(ids[0], &h));
        assert_passes(&report, "dist_cross_entropy");
    }

    #[test]
    fn composed_graph_with_shared_input_gradients() {
        // The same leaf feeds two branches; finite differences see the total
        // derivative, so this validates gradient accumulation end to end.
        let x = fill_test_tensor(vec![3, 3], 19);
        let report = grad_check(&[x], |tape, ids| {
            let s = tape.softmax(ids[0], 1);
            let p = tape.matmul(ids[0], s);
            let q = tape.gelu(p);
            let r = tape.add(q, s);
            weighted_sum(tape, r)
        });
        assert_passes(&report, "composed graph");
    }

    /// Project to a scalar as `Σ x ⊙ w` with distinct per-element weights,
    /// so errors in symmetric positions cannot cancel.
    fn weighted_sum(tape: &mut Tape<f64>, x: TensorId) -> TensorId {
        let (rows, cols) = tape.shape(x);
        let weights: Vec<f64> = (0..rows * cols).map(|i| 0.3 + 0.17 * i as f64).collect();
        let w = tape.constant(rows, cols, weights);
        let xw = tape.mul(x, w);
        let pooled = tape.mean_rows(xw, &vec![true; rows]); // column means
        let scaled = tape.scale(pooled, rows as f64); // column sums
        let mut acc = tape.slice_cols(scaled, 0, 1);
        for j in 1..cols {
            let next = tape.slice_cols(scaled, j, 1);
            acc = tape.add(acc, next);
        }
        acc
    }
}
