use serde::{Deserialize, Serialize};

use crate::autodiff::Array;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Array]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [Array],
    grads: &[Vec<f64>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Invalid(format!(
            "adam: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.len() != g.len() {
            return Err(Error::shape("adam", &[p.shape(), &[g.len()]]));
        }
        let m = &mut state.m[k];
        let v = &mut state.v[k];
        for (i, x) in p.data_mut().iter_mut().enumerate() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *x -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut params = vec![Array::full(&[3], 0.7)];
        let mut state = AdamState::new(&params);
        state.m[0] = vec![0.5; 3];
        state.v[0] = vec![0.25; 3];
        state.step = 4;
        let cfg = AdamConfig::default();
        let before = state.clone();
        adam_step(&mut params, &[vec![0.0; 3]], &mut state, &cfg).unwrap();
        assert_eq!(state.m[0][0], 0.9 * before.m[0][0]);
        assert_eq!(state.v[0][0], 0.999 * before.v[0][0]);

        let mut fresh = vec![Array::full(&[3], 0.7)];
        let mut s = AdamState::new(&fresh);
        adam_step(&mut fresh, &[vec![0.0; 3]], &mut s, &cfg).unwrap();
        assert_eq!(fresh[0].data(), &[0.7; 3]);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let cfg = AdamConfig::default();
        let mut params = vec![Array::scalar(0.0)];
        let mut state = AdamState::new(&params);
        let mut last = 0.0;
        for _ in 0..2000 {
            let before = params[0].data()[0];
            adam_step(&mut params, &[vec![0.3]], &mut state, &cfg).unwrap();
            last = before - params[0].data()[0];
        }
        assert!((last - cfg.lr).abs() < 1e-9, "{last}");
    }

    #[test]
    fn first_step_matches_scalar_reference() {
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let g = [0.5, -2.0, 1e-9];
        let mut params = vec![Array::new(vec![3], vec![1.0, 1.0, 1.0]).unwrap()];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &[g.to_vec()], &mut state, &cfg).unwrap();
        for (i, &gi) in g.iter().enumerate() {
            // m_hat = g, v_hat = g^2 after one step from zero
            let m_hat = (1.0 - cfg.beta1) * gi / (1.0 - cfg.beta1);
            let v_hat = (1.0 - cfg.beta2) * gi * gi / (1.0 - cfg.beta2);
            let expected = 1.0 - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            assert!((params[0].data()[i] - expected).abs() < 1e-15);
        }
        // sign-like for large |g|, damped near eps
        assert!((params[0].data()[0] - 0.99).abs() < 1e-9);
        assert!((params[0].data()[1] - 1.01).abs() < 1e-9);
        assert!((1.0 - params[0].data()[2]) < 0.01 * 0.1);
    }
}
