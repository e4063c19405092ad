//! AdamW with decoupled weight decay, plus global-norm gradient clipping.
//!
//! One [`AdamW`] instance owns the first/second-moment state for one
//! parameter group (the training loop keeps a group per learning rate).
//! Weight decay multiplies the parameter directly before the moment update —
//! it is never folded into the gradient, so the moments of a decayed and an
//! undecayed run are identical.

use std::collections::BTreeMap;

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl AdamWConfig {
    pub fn new(lr: f32) -> Self {
        AdamWConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn weight_decay(mut self, wd: f32) -> Self {
        self.weight_decay = wd;
        self
    }
}

#[derive(Debug, Clone)]
struct Slot {
    m: Vec<f32>,
    v: Vec<f32>,
}

/// Optimizer state for one parameter group.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    /// Number of completed steps; bias correction uses `step_count` after
    /// the increment, so the first step corrects by `1 − β`.
    pub step_count: u64,
    slots: BTreeMap<String, Slot>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        AdamW {
            cfg,
            step_count: 0,
            slots: BTreeMap::new(),
        }
    }

    /// Apply one update to every `(name, gradient)` pair, in sorted name
    /// order. Parameters missing from `grads` are left untouched (their
    /// moments do not advance either; AdamW state is per-parameter lazy).
    pub fn step(&mut self, params: &mut BTreeMap<String, Tensor<f32>>, grads: &BTreeMap<String, Vec<f32>>) {
        self.step_count += 1;
        let t = self.step_count as f64;
        let c = self.cfg;
        let bc1 = 1.0 - (c.beta1 as f64).powi(t as i32) as f32;
        let bc2 = 1.0 - (c.beta2 as f64).powi(t as i32) as f32;
        for (name, grad) in grads {
            let p = params
                .get_mut(name)
                .unwrap_or_else(|| panic!("adamw: gradient for unknown parameter {name:?}"));
            assert_eq!(
                p.data.len(),
                grad.len(),
                "adamw: gradient size mismatch for {name:?}"
            );
            let slot = self.slots.entry(name.clone()).or_insert_with(|| Slot {
                m: vec![0.0; grad.len()],
                v: vec![0.0; grad.len()],
            });
            for i in 0..grad.len() {
                let g = grad[i];
                // Decoupled decay: shrink the parameter, leave g as-is.
                p.data[i] *= 1.0 - c.lr * c.weight_decay;
                slot.m[i] = c.beta1 * slot.m[i] + (1.0 - c.beta1) * g;
                slot.v[i] = c.beta2 * slot.v[i] + (1.0 - c.beta2) * g * g;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                p.data[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
    }

    /// Moment buffers for persistence, flattened as `(name, m, v)` triples.
    pub fn export_state(&self) -> Vec<(String, Vec<f32>, Vec<f32>)> {
        self.slots
            .iter()
            .map(|(n, s)| (n.clone(), s.m.clone(), s.v.clone()))
            .collect()
    }

    pub fn import_state(&mut self, step_count: u64, slots: Vec<(String, Vec<f32>, Vec<f32>)>) {
        self.step_count = step_count;
        self.slots = slots
            .into_iter()
            .map(|(n, m, v)| (n, Slot { m, v }))
            .collect();
    }
}

/// Scale all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the pre-clip norm. Never scales up.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Vec<f32>>, max_norm: f32) -> f32 {
    let mut sq = 0.0f64;
    for g in grads.values() {
        for &v in g {
            sq += (v as f64) * (v as f64);
        }
    }
    let norm = sq.sqrt() as f32;
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(value: f32) -> BTreeMap<String, Tensor<f32>> {
        let mut m = BTreeMap::new();
        m.insert("w".to_string(), Tensor::new(vec![1], vec![value]));
        m
    }

    fn grad_of(value: f32) -> BTreeMap<String, Vec<f32>> {
        let mut g = BTreeMap::new();
        g.insert("w".to_string(), vec![value]);
        g
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        // m̂ = v̂ = 1 after one unit-gradient step, so Δθ = −lr/(1+eps).
        let mut opt = AdamW::new(AdamWConfig::new(0.1));
        let mut params = single_param(0.0);
        opt.step(&mut params, &grad_of(1.0));
        let theta = params["w"].data[0];
        assert!(
            (theta + 0.1).abs() < 1e-6,
            "expected ≈ −0.1 after one step, got {theta}"
        );
        assert_eq!(opt.step_count, 1);
    }

    #[test]
    fn quadratic_bowl_converges_within_100_steps() {
        // Minimize θ² from θ = 1 at lr 0.1; gradient is 2θ.
        let mut opt = AdamW::new(AdamWConfig::new(0.1));
        let mut params = single_param(1.0);
        for _ in 0..100 {
            let theta = params["w"].data[0];
            opt.step(&mut params, &grad_of(2.0 * theta));
        }
        let theta = params["w"].data[0];
        assert!(theta.abs() < 0.1, "|θ| = {} after 100 steps", theta.abs());
        assert_eq!(opt.step_count, 100);
    }

    #[test]
    fn weight_decay_shrinks_parameter_without_touching_moments() {
        // Zero gradient isolates the decay term: θ ← θ·(1 − lr·wd).
        let mut opt = AdamW::new(AdamWConfig::new(0.1).weight_decay(0.5));
        let mut params = single_param(1.0);
        opt.step(&mut params, &grad_of(0.0));
        assert_eq!(params["w"].data[0], 0.95);

        // With equal gradients, decayed and undecayed runs must share the
        // exact same moments — decay never leaks into m or v.
        let mut a = AdamW::new(AdamWConfig::new(0.01).weight_decay(0.1));
        let mut b = AdamW::new(AdamWConfig::new(0.01));
        let mut pa = single_param(1.0);
        let mut pb = single_param(1.0);
        for i in 0..5 {
            let g = grad_of(0.3 * (i as f32 + 1.0));
            a.step(&mut pa, &g);
            b.step(&mut pb, &g);
        }
        assert_eq!(a.export_state(), b.export_state());
        assert!(pa["w"].data[0] < pb["w"].data[0]);
    }

    #[test]
    fn clip_rescales_to_max_norm_and_never_grows() {
        let mut grads = BTreeMap::new();
        grads.insert("a".to_string(), vec![3.0f32]);
        grads.insert("b".to_string(), vec![4.0f32]);
        let before = clip_global_norm(&mut grads, 1.0);
        assert!((before - 5.0).abs() < 1e-6);
        let after: f32 = grads
            .values()
            .flat_map(|g| g.iter().map(|v| v * v))
            .sum::<f32>()
            .sqrt();
        assert!((after - 1.0).abs() < 1e-6);

        // Already within bounds: untouched.
        let mut small = BTreeMap::new();
        small.insert("a".to_string(), vec![0.3f32, 0.4]);
        let before = clip_global_norm(&mut small, 1.0);
        assert!((before - 0.5).abs() < 1e-6);
        assert_eq!(small["a"], vec![0.3, 0.4]);
    }
}
