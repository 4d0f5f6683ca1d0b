//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::model::{ModelGrads, ModelParams};
use crate::tensor::Scalar;

/// First/second-moment buffers mirroring the model's learnable tensors,
/// plus the step counter and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub(crate) m: Vec<Vec<T>>,
    pub(crate) v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>, lr: T, beta1: T, beta2: T, eps: T) -> Self {
        let shapes: Vec<Vec<T>> = params
            .learnable_tensors()
            .iter()
            .map(|t| vec![T::zero(); t.len()])
            .collect();
        AdamState {
            step: 0,
            lr,
            beta1,
            beta2,
            eps,
            m: shapes.clone(),
            v: shapes,
        }
    }
}

/// One Adam update: `p -= lr * m_hat / (sqrt(v_hat) + eps)` with
/// `m_hat = m/(1-beta1^t)`, `v_hat = v/(1-beta2^t)`. Deterministic.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &ModelGrads<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    let grad_tensors = grads.tensors();
    let mut param_tensors = params.learnable_tensors_mut();
    if grad_tensors.len() != state.m.len() || param_tensors.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "tensor group counts differ: params {}, grads {}, state {}",
                param_tensors.len(),
                grad_tensors.len(),
                state.m.len()
            ),
        ));
    }
    for (i, g) in grad_tensors.iter().enumerate() {
        if g.len() != param_tensors[i].len() || g.len() != state.m[i].len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "group {i}: param len {}, grad len {}, state len {}",
                    param_tensors[i].len(),
                    g.len(),
                    state.m[i].len()
                ),
            ));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = T::one() - state.beta1.powi(t);
    let bc2 = T::one() - state.beta2.powi(t);
    let one = T::one();
    for (i, g) in grad_tensors.iter().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let p = &mut param_tensors[i];
        for j in 0..g.len() {
            let gj = g[j];
            m[j] = state.beta1 * m[j] + (one - state.beta1) * gj;
            v[j] = state.beta2 * v[j] + (one - state.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] = p[j] - state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}
