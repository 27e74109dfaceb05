//! Adaptive-moment optimizer with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        AdamWHyper {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamWState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamWState {
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }
}

/// One bias-corrected update:
///
/// ```text
/// p ← p·(1 − lr·λ)                  (only where `decay[i]`)
/// m ← β1·m + (1 − β1)·g
/// v ← β2·v + (1 − β2)·g²
/// p ← p − lr · m̂ / (√v̂ + ε)
/// ```
///
/// Parameters with `update[i] == false` are left untouched (their moments too).
pub fn optimizer_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamWState,
    hyper: &AdamWHyper,
    decay: &[bool],
    update: &[bool],
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::shape(
            "optimizer_step",
            &[params.len(), state.first.len()],
            &[grads.len()],
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape("optimizer_step", p.shape(), g.shape()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    let lr = hyper.learning_rate;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if !update.get(i).copied().unwrap_or(true) {
            continue;
        }
        let wd = if decay.get(i).copied().unwrap_or(false) {
            hyper.weight_decay
        } else {
            0.0
        };
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        for (j, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            *pv *= 1.0 - lr * wd;
            m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * gv;
            v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * gv * gv;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *pv -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(p: f64, g: f64, hyper: &AdamWHyper) -> f64 {
        let mut params = vec![Tensor::vector(vec![p])];
        let mut state = AdamWState::new(&params);
        optimizer_step(&mut params, &[Tensor::vector(vec![g])], &mut state, hyper, &[true], &[true]).unwrap();
        params[0].data()[0]
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let hyper = AdamWHyper {
            weight_decay: 0.0,
            ..AdamWHyper::default()
        };
        assert_eq!(step(1.25, 0.0, &hyper), 1.25);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = 1, v̂ = 1 after one step with g = 1, so Δ = -lr / (1 + ε)
        let hyper = AdamWHyper {
            learning_rate: 0.1,
            weight_decay: 0.0,
            ..AdamWHyper::default()
        };
        let delta = step(0.0, 1.0, &hyper);
        assert!((delta - (-0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn decay_in_isolation() {
        let hyper = AdamWHyper {
            learning_rate: 0.1,
            weight_decay: 0.5,
            ..AdamWHyper::default()
        };
        assert!((step(2.0, 0.0, &hyper) - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn frozen_parameters_stay() {
        let mut params = vec![Tensor::vector(vec![1.0]), Tensor::vector(vec![1.0])];
        let mut state = AdamWState::new(&params);
        let grads = vec![Tensor::vector(vec![1.0]), Tensor::vector(vec![1.0])];
        optimizer_step(&mut params, &grads, &mut state, &AdamWHyper::default(), &[true, true], &[false, true]).unwrap();
        assert_eq!(params[0].data()[0], 1.0);
        assert!(params[1].data()[0] < 1.0);
    }

    #[test]
    fn shape_mismatch() {
        let mut params = vec![Tensor::vector(vec![1.0, 2.0])];
        let mut state = AdamWState::new(&params);
        let grads = vec![Tensor::vector(vec![1.0])];
        assert!(optimizer_step(&mut params, &grads, &mut state, &AdamWHyper::default(), &[], &[]).is_err());
    }
}
