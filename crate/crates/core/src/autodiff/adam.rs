//! Adam over the flat parameter buffer with an exponential learning-rate
//! schedule: rate(t) = base · decay^(t/T).

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub base_lr: f64,
    /// Final/initial learning-rate ratio reached at `total_steps`.
    pub decay: f64,
    pub total_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub skipped: u64,
}

impl AdamState {
    pub fn new(param_len: usize, base_lr: f64, decay: f64, total_steps: u64) -> Self {
        AdamState {
            m: vec![0.0; param_len],
            v: vec![0.0; param_len],
            step: 0,
            base_lr,
            decay,
            total_steps,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            skipped: 0,
        }
    }

    /// Learning rate at step `t` (0-based).
    pub fn lr_at(&self, t: u64) -> f64 {
        self.base_lr
            * self
                .decay
                .powf(t as f64 / self.total_steps.max(1) as f64)
    }

    /// One Adam update in place. Returns false (and counts a warning)
    /// when any gradient entry is non-finite; parameters and moments are
    /// untouched in that case, but the step counter still advances.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<bool> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "adam state len {} vs params {} / grads {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        let lr = self.lr_at(self.step);
        self.step += 1;
        if grads.iter().any(|g| !g.is_finite()) {
            self.skipped += 1;
            return Ok(false);
        }
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_advances_step() {
        let mut st = AdamState::new(3, 5e-4, 0.05, 100);
        let mut p = vec![1.0, -2.0, 0.5];
        let before = p.clone();
        assert!(st.step(&mut p, &[0.0, 0.0, 0.0]).unwrap());
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn single_step_matches_closed_form() {
        // With constant grad g over one step: m̂ = g, v̂ = g², so the update
        // is lr·g/(|g| + eps).
        let mut st = AdamState::new(1, 5e-4, 0.05, 1_000_000);
        let mut p = vec![0.7];
        let g = 1.0;
        st.step(&mut p, &[g]).unwrap();
        let lr = 5e-4 * 0.05f64.powf(0.0);
        let expected = 0.7 - lr * g / (g.abs() + 1e-8);
        assert!((p[0] - expected).abs() < 1e-12, "{} vs {expected}", p[0]);
    }

    #[test]
    fn identical_params_stay_identical() {
        let mut st = AdamState::new(2, 1e-3, 0.05, 10);
        let mut p = vec![0.3, 0.3];
        for _ in 0..5 {
            st.step(&mut p, &[0.11, 0.11]).unwrap();
        }
        assert_eq!(p[0], p[1]);
    }

    #[test]
    fn non_finite_gradient_skips() {
        let mut st = AdamState::new(1, 1e-3, 0.05, 10);
        let mut p = vec![1.0];
        assert!(!st.step(&mut p, &[f64::NAN]).unwrap());
        assert_eq!(p, vec![1.0]);
        assert_eq!(st.skipped, 1);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn schedule_is_exponential_decay() {
        let st = AdamState::new(1, 5e-4, 0.05, 200);
        assert!((st.lr_at(0) - 5e-4).abs() < 1e-18);
        assert!((st.lr_at(200) - 5e-4 * 0.05).abs() < 1e-12);
        assert!((st.lr_at(100) - 5e-4 * 0.05f64.sqrt()).abs() < 1e-12);
        assert!(st.lr_at(50) > st.lr_at(51));
    }
}
