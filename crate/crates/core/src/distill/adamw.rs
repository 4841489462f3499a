use serde::{Deserialize, Serialize};

use super::tape::{lit, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    /// Backbone rate; the toy run keeps the backbone frozen, so it is unused there.
    pub lr_backbone: f64,
    pub lr_head: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr_backbone: 2e-4, lr_head: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F> {
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub step: u64,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(params: &[Vec<F>]) -> Self {
        let zeros: Vec<Vec<F>> = params.iter().map(|p| vec![F::zero(); p.len()]).collect();
        OptimizerState { m: zeros.clone(), v: zeros, step: 0 }
    }
}

/// One decoupled-weight-decay Adam update at rate `lr`. Non-finite gradients
/// leave parameters and state untouched.
pub fn adamw_step<F: Real>(
    params: &mut [Vec<F>],
    grads: &[Vec<F>],
    state: &mut OptimizerState<F>,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    let shapes_ok = params.len() == grads.len()
        && params.len() == state.m.len()
        && params.iter().zip(grads).zip(&state.m).all(|((p, g), m)| p.len() == g.len() && p.len() == m.len());
    if !shapes_ok {
        return Err(Error::shape("adamw_step", "parameter, gradient and moment sizes disagree"));
    }
    if let Some((i, _)) = grads.iter().enumerate().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite(format!("gradient of parameter tensor {i}; step {} refused", state.step + 1)));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2): (F, F) = (lit(cfg.beta1), lit(cfg.beta2));
    let bc1: F = lit(1.0 - cfg.beta1.powi(t));
    let bc2: F = lit(1.0 - cfg.beta2.powi(t));
    let (lr_f, eps): (F, F) = (lit(lr), lit(cfg.eps));
    let decay: F = lit(1.0 - lr * cfg.weight_decay);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (F::one() - b1) * g[k];
            v[k] = b2 * v[k] + (F::one() - b2) * g[k] * g[k];
            let mhat = m[k] / bc1;
            let vhat = v[k] / bc2;
            p[k] = p[k] * decay - lr_f * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut p = vec![vec![1.5f64, -2.0]];
        let mut s = OptimizerState::new(&p);
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        adamw_step(&mut p, &[vec![0.0, 0.0]], &mut s, 1e-3, &cfg).unwrap();
        assert_eq!(p, vec![vec![1.5, -2.0]]);
    }

    #[test]
    fn zero_rate_is_identity() {
        let mut p = vec![vec![0.25f32, 3.0]];
        let mut s = OptimizerState::new(&p);
        adamw_step(&mut p, &[vec![0.7, -0.2]], &mut s, 0.0, &AdamWConfig::default()).unwrap();
        assert_eq!(p, vec![vec![0.25, 3.0]]);
    }

    #[test]
    fn scalar_recurrence_three_steps() {
        let cfg = AdamWConfig { weight_decay: 0.1, ..Default::default() };
        let (lr, g) = (0.01, 0.3);
        let mut p = vec![vec![1.0f64]];
        let mut s = OptimizerState::new(&p);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            adamw_step(&mut p, &[vec![g]], &mut s, lr, &cfg).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mhat = m / (1.0 - 0.9f64.powi(t));
            let vhat = v / (1.0 - 0.999f64.powi(t));
            x = x * (1.0 - lr * 0.1) - lr * mhat / (vhat.sqrt() + 1e-8);
            assert!((p[0][0] - x).abs() < 1e-15, "step {t}: {} vs {x}", p[0][0]);
        }
    }

    #[test]
    fn decay_only_shrinks_geometrically() {
        let cfg = AdamWConfig { weight_decay: 0.5, ..Default::default() };
        let mut p = vec![vec![2.0f64]];
        let mut s = OptimizerState::new(&p);
        for step in 1..=4 {
            adamw_step(&mut p, &[vec![0.0]], &mut s, 0.1, &cfg).unwrap();
            assert!((p[0][0] - 2.0 * 0.95f64.powi(step)).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_refused() {
        let mut p = vec![vec![1.0f32]];
        let mut s = OptimizerState::new(&p);
        let before = (p.clone(), s.clone());
        assert!(matches!(adamw_step(&mut p, &[vec![f32::NAN]], &mut s, 1e-3, &AdamWConfig::default()), Err(Error::NonFinite(_))));
        assert_eq!((p, s), before);
    }
}
