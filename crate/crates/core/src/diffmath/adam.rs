use ndarray::{Array2, Zip};

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one pair per parameter array.
#[derive(Clone, Debug, Default)]
pub struct AdamState<T> {
    pub step: u64,
    m: Vec<Array2<T>>,
    v: Vec<Array2<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        Self { step: 0, m: Vec::new(), v: Vec::new() }
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step<T: Scalar>(
    params: Vec<&mut Array2<T>>,
    grads: &[Array2<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(shape_err(format!("adam: {} params but {} grads", params.len(), grads.len())));
    }
    if state.m.is_empty() {
        state.m = grads.iter().map(|g| Array2::zeros(g.dim())).collect();
        state.v = grads.iter().map(|g| Array2::zeros(g.dim())).collect();
    }
    if state.m.len() != params.len() {
        return Err(shape_err("adam: state was created for a different parameter list"));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.dim() != g.dim() || state.m[i].dim() != g.dim() {
            return Err(shape_err(format!("adam: parameter {i} is {:?}, gradient {:?}", p.dim(), g.dim())));
        }
    }
    state.step += 1;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let bc1 = T::one() - b1.powi(state.step as i32);
    let bc2 = T::one() - b2.powi(state.step as i32);
    let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
    for ((p, g), (m, v)) in params.into_iter().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = array![[1.0, -2.0]];
        let mut st = AdamState::new();
        adam_step(vec![&mut p], &[Array2::zeros((1, 2))], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p, array![[1.0, -2.0]]);
    }

    #[test]
    fn first_step_moves_by_learning_rate_times_sign() {
        // m_hat = g, v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps).
        let mut p: Array2<f64> = array![[0.0, 0.0, 0.0]];
        let mut st = AdamState::new();
        let cfg = AdamConfig::with_lr(0.01);
        adam_step(vec![&mut p], &[array![[3.0, -0.5, 1e-3]]], &mut st, &cfg).unwrap();
        assert!((p[[0, 0]] + 0.01).abs() < 1e-9);
        assert!((p[[0, 1]] - 0.01).abs() < 1e-9);
        assert!((p[[0, 2]] + 0.01 * 1e-3 / (1e-3 + 1e-8)).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = array![[0.0, 0.0]];
        let mut st = AdamState::new();
        let err = adam_step(vec![&mut p], &[array![[1.0]]], &mut st, &AdamConfig::default());
        assert!(err.is_err());
    }

    /// Independent scalar Adam used as a reference trace.
    fn scalar_adam(mut x: f64, grads: &[f64], lr: f64) -> f64 {
        let (mut m, mut v) = (0.0, 0.0);
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= lr * mh / (vh.sqrt() + 1e-8);
        }
        x
    }

    #[test]
    fn two_steps_match_scalar_reference() {
        let grads = [0.7, 0.7];
        let mut p = array![[0.25]];
        let mut st = AdamState::new();
        let cfg = AdamConfig::with_lr(0.05);
        for g in grads {
            adam_step(vec![&mut p], &[array![[g]]], &mut st, &cfg).unwrap();
        }
        assert!((p[[0, 0]] - scalar_adam(0.25, &grads, 0.05)).abs() < 1e-15);
    }
}
