use serde::{Deserialize, Serialize};

use super::SegnetError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moment estimates for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len] }
    }
}

/// One bias-corrected Adam update of `params` in place; `t` is the
/// 1-based step count.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamMoments,
    cfg: &AdamConfig,
    t: u64,
) -> Result<(), SegnetError> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(SegnetError::ShapeMismatch(format!(
            "adam: {} params, {} grads, {}/{} moments",
            params.len(),
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    if t == 0 {
        return Err(SegnetError::InvalidConfig("adam step count starts at 1".into()));
    }
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_from_rest_leaves_params() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamMoments::zeros(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, &AdamConfig::default(), 1).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn moments_decay() {
        let mut p = vec![1.0];
        let mut s = AdamMoments { m: vec![0.5], v: vec![0.25] };
        adam_step(&mut p, &[0.0], &mut s, &AdamConfig::default(), 3).unwrap();
        assert_eq!(s.m, vec![0.45]);
        assert!((s.v[0] - 0.25 * 0.999).abs() < 1e-16);
        assert!(p[0] < 1.0);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
        let mut p = vec![0.0];
        let mut s = AdamMoments::zeros(1);
        adam_step(&mut p, &[1.0], &mut s, &cfg, 1).unwrap();
        assert!((p[0] + 0.01 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        let mut s = AdamMoments::zeros(2);
        let cfg = AdamConfig::default();
        assert!(adam_step(&mut [0.0], &[0.0, 0.0], &mut s, &cfg, 1).is_err());
        assert!(adam_step(&mut [0.0, 0.0], &[0.0, 0.0], &mut s, &cfg, 0).is_err());
    }
}
