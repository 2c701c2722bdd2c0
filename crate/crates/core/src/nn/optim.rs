//! Adam with decoupled weight decay and a linear learning-rate schedule.

use ndarray::Array2;

use super::params::{ParamId, ParamSet};
use super::tape::Gradients;

/// AdamW over a subset of a parameter set.
///
/// The learning rate decays linearly from `lr0` at step 0 to 0 after
/// `total_steps`, with no warmup. Decoupled weight decay applies only to
/// parameters registered with the decay flag (weights, not biases or
/// normalization parameters). With `lr0 = 0` a step leaves parameters
/// bitwise unchanged.
pub struct AdamW {
    param_ids: Vec<ParamId>,
    lr0: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    total_steps: usize,
    step: usize,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl AdamW {
    pub const DEFAULT_WEIGHT_DECAY: f64 = 0.01;

    pub fn new(params: &ParamSet, param_ids: Vec<ParamId>, lr0: f64, total_steps: usize) -> Self {
        let m = param_ids.iter().map(|&id| Array2::zeros(params.value(id).dim())).collect();
        let v = param_ids.iter().map(|&id| Array2::zeros(params.value(id).dim())).collect();
        Self {
            param_ids,
            lr0,
            weight_decay: Self::DEFAULT_WEIGHT_DECAY,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            total_steps: total_steps.max(1),
            step: 0,
            m,
            v,
        }
    }

    /// Learning rate for the upcoming step.
    pub fn current_lr(&self) -> f64 {
        let remaining = 1.0 - self.step as f64 / self.total_steps as f64;
        self.lr0 * remaining.max(0.0)
    }

    /// Applies one update. Parameters without a gradient entry are left
    /// untouched (their moments do not tick either).
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) {
        let lr = self.current_lr();
        let t = (self.step + 1) as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (slot, &id) in self.param_ids.iter().enumerate() {
            let Some(g) = grads.get(id) else { continue };
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            m.zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            v.zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let decay = if params.decays(id) { self.weight_decay } else { 0.0 };
            let p = params.value_mut(id);
            for ((p, m), v) in p.iter_mut().zip(m.iter()).zip(v.iter()) {
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                let update = lr * (m_hat / (v_hat.sqrt() + self.eps) + decay * *p);
                if update != 0.0 {
                    *p -= update;
                }
            }
        }
        self.step += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tape;
    use ndarray::array;

    fn quadratic_grads(params: &ParamSet) -> Gradients {
        // loss = Σ p²  →  grad = 2p, built through the tape for coverage.
        let mut tape = Tape::new();
        let leaves = params.insert_leaves(&mut tape);
        let id = params.id_of("w").unwrap();
        let w = leaves.node(id);
        let wsq = tape.matmul_transb(w, w);
        let loss = tape.mean_pool_rows(wsq, &[true]);
        let loss = {
            let one = tape.constant(array![[1.0]]);
            tape.matmul(loss, one)
        };
        let loss = tape.scale(loss, 1.0);
        tape.backward(loss)
    }

    #[test]
    fn descends_a_quadratic() {
        let mut params = ParamSet::new();
        params.register("w", array![[3.0, -2.0]], true);
        let id = params.id_of("w").unwrap();
        let mut opt = AdamW::new(&params, vec![id], 0.1, 200);
        for _ in 0..200 {
            let grads = quadratic_grads(&params);
            opt.step(&mut params, &grads);
        }
        let w = params.value(id);
        assert!(w.iter().all(|x| x.abs() < 0.5), "w = {w:?}");
    }

    #[test]
    fn zero_learning_rate_leaves_params_bitwise_unchanged() {
        let mut params = ParamSet::new();
        params.register("w", array![[3.0, -2.0, 0.0, -0.0]], true);
        let id = params.id_of("w").unwrap();
        let before = params.clone();
        let mut opt = AdamW::new(&params, vec![id], 0.0, 10);
        for _ in 0..10 {
            let grads = quadratic_grads(&params);
            opt.step(&mut params, &grads);
        }
        assert!(params.bitwise_eq(&before));
    }

    #[test]
    fn linear_schedule_reaches_zero() {
        let mut params = ParamSet::new();
        params.register("w", array![[1.0]], true);
        let id = params.id_of("w").unwrap();
        let mut opt = AdamW::new(&params, vec![id], 0.5, 4);
        let lrs: Vec<f64> = (0..5)
            .map(|_| {
                let lr = opt.current_lr();
                let grads = quadratic_grads(&params);
                opt.step(&mut params, &grads);
                lr
            })
            .collect();
        assert_eq!(lrs, vec![0.5, 0.375, 0.25, 0.125, 0.0]);
    }

    #[test]
    fn decay_flag_controls_weight_decay() {
        // With zero gradients only the decay term moves parameters, and it
        // skips the ones registered without decay.
        let mut params = ParamSet::new();
        let wid = params.register("w", array![[1.0]], true);
        let bid = params.register("b", array![[1.0]], false);
        let mut opt = AdamW::new(&params, vec![wid, bid], 0.1, 10);
        let mut tape = Tape::new();
        let leaves = params.insert_leaves(&mut tape);
        let sum = tape.add(leaves.node(wid), leaves.node(bid));
        let pooled = tape.mean_pool_rows(sum, &[true]);
        let loss = tape.scale(pooled, 0.0);
        let loss = tape.mean_pool_rows(loss, &[true]);
        let computed = tape.backward(loss);
        opt.step(&mut params, &computed);
        assert!(params.value(wid)[(0, 0)] < 1.0);
        assert_eq!(params.value(bid)[(0, 0)], 1.0);
    }
}
