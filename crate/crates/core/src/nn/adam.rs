use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Non-finite gradients reject the whole step
/// and leave both parameters and state untouched.
pub fn adam_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::shape("adam parameters", &[params.len()], &[grads.len(), state.m.len()]));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradients"));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::of(1.0 - cfg.beta1.powi(t));
    let c2 = T::of(1.0 - cfg.beta2.powi(t));
    let (lr, eps) = (T::of(lr), T::of(cfg.eps));
    let one = T::one();
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = vec![1.0f64, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 1e-3, &AdamConfig::default()).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0f64, -0.02, 1e3] {
            let mut p = vec![0.5];
            let mut s = AdamState::new(1);
            adam_step(&mut p, &[g], &mut s, 1e-3, &AdamConfig::default()).unwrap();
            let step = 0.5 - p[0];
            assert!((step.abs() - 1e-3).abs() < 1e-3 * 1e-5, "g={g}: {step}");
            assert_eq!(step.signum(), g.signum());
        }
    }

    #[test]
    fn two_steps_match_hand_recursion() {
        let cfg = AdamConfig::default();
        let (g1, g2, lr) = (0.5f64, -1.5f64, 0.01);
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[g1], &mut s, lr, &cfg).unwrap();
        adam_step(&mut p, &[g2], &mut s, lr, &cfg).unwrap();

        // m1 = 0.05, v1 = 0.00025 → step1 = lr·0.05/0.1 / (sqrt(0.00025/0.001) + eps)
        let m1 = 0.1 * g1;
        let v1 = 0.001 * g1 * g1;
        let p1 = 1.0 - lr * (m1 / 0.1) / ((v1 / 0.001f64).sqrt() + 1e-8);
        let m2 = 0.9 * m1 + 0.1 * g2;
        let v2 = 0.999 * v1 + 0.001 * g2 * g2;
        let p2 = p1 - lr * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64 * 0.999)).sqrt() + 1e-8);
        assert!((p[0] - p2).abs() < 1e-14, "{} vs {}", p[0], p2);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = vec![1.0f32];
        let mut s = AdamState::new(1);
        let err = adam_step(&mut p, &[f32::NAN], &mut s, 1e-3, &AdamConfig::default());
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(p[0], 1.0);
        assert_eq!(s.step, 0);
    }
}
