use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Parameterized;

/// Linear warmup to `base_lr` at `warmup`, then inverse square-root decay.
pub fn noam_lr(step: u64, base_lr: f64, warmup: u64) -> Result<f64> {
    if step == 0 {
        return Err(Error::Domain("noam schedule starts at step 1".into()));
    }
    if warmup == 0 {
        return Err(Error::Domain("noam warmup must be positive".into()));
    }
    let (s, w) = (step as f64, warmup as f64);
    Ok(base_lr * w.sqrt() * s.powf(-0.5).min(s * w.powf(-1.5)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one model plus the number of updates applied.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One bias-corrected Adam step. A non-finite gradient aborts the step and
/// leaves `params` and `state` untouched.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimizerState,
    lr: f64,
    hp: &AdamParams,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::Shape(format!(
            "adam: {} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.len()
        )));
    }
    if !(lr > 0.0) {
        return Err(Error::Domain(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        let bad = grads.iter().filter(|g| !g.is_finite()).count();
        return Err(Error::NonFinite(format!(
            "{bad} of {} gradient entries non-finite (first at index {i}: {}) at optimizer step {}",
            grads.len(),
            grads[i],
            state.step + 1
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
        *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + hp.eps);
    }
    Ok(())
}

/// Applies [`adam_update`] to a whole model given a gradient model of the
/// same structure.
pub fn adam_step_model<M: Parameterized>(
    model: &mut M,
    grad: &M,
    state: &mut OptimizerState,
    lr: f64,
    hp: &AdamParams,
) -> Result<()> {
    let mut params = model.flatten();
    adam_update(&mut params, &grad.flatten(), state, lr, hp)?;
    model.load_flat(&params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noam_spot_values() {
        let base = 0.005;
        assert!((noam_lr(4000, base, 4000).unwrap() - base).abs() < 1e-15);
        assert!((noam_lr(1000, base, 4000).unwrap() - base / 4.0).abs() < 1e-15);
        assert!((noam_lr(16000, base, 4000).unwrap() - base / 2.0).abs() < 1e-15);
        assert!(noam_lr(0, base, 4000).is_err());
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = [1.0];
        let mut s = OptimizerState::new(1);
        adam_update(&mut p, &[0.37], &mut s, 0.01, &AdamParams::default()).unwrap();
        assert!((1.0 - p[0] - 0.01).abs() < 1e-9);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut p = [0.5, -2.0];
        let mut s = OptimizerState {
            m: vec![0.2, -0.1],
            v: vec![0.04, 0.01],
            step: 3,
        };
        adam_update(&mut p, &[0.0, 0.0], &mut s, 0.1, &AdamParams::default()).unwrap();
        assert_eq!(s.m, vec![0.9 * 0.2, 0.9 * -0.1]);
        let mut p = [0.5, -2.0];
        let mut s = OptimizerState {
            m: vec![0.0, 0.0],
            v: vec![0.04, 0.01],
            step: 3,
        };
        adam_update(&mut p, &[0.0, 0.0], &mut s, 0.1, &AdamParams::default()).unwrap();
        assert_eq!(p, [0.5, -2.0]);
        assert_eq!(s.v, vec![0.999 * 0.04, 0.999 * 0.01]);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = [1.0, 2.0];
        let mut s = OptimizerState::new(2);
        let err = adam_update(
            &mut p,
            &[0.1, f64::NAN],
            &mut s,
            0.1,
            &AdamParams::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert!(err.to_string().contains("index 1"));
        assert_eq!(p, [1.0, 2.0]);
        assert_eq!(s, OptimizerState::new(2));
    }
}
