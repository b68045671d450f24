use serde::{Deserialize, Serialize};

use super::TensorError;

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = sizes
            .into_iter()
            .map(|n| (vec![0.0; n], vec![0.0; n]))
            .unzip();
        Self { step: 0, m, v }
    }
}

impl Adam {
    /// One bias-corrected Adam update of every parameter buffer in place.
    pub fn step(
        &self,
        params: &mut [&mut [f64]],
        grads: &[&[f64]],
        state: &mut AdamState,
    ) -> Result<(), TensorError> {
        if params.len() != grads.len() || params.len() != state.m.len() {
            return Err(TensorError::StateMismatch {
                index: params.len().min(grads.len()),
                expected: state.m.len(),
                got: params.len(),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            for got in [g.len(), state.m[i].len(), state.v[i].len()] {
                if got != p.len() {
                    return Err(TensorError::StateMismatch {
                        index: i,
                        expected: p.len(),
                        got,
                    });
                }
            }
        }
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(state.m.iter_mut().zip(state.v.iter_mut()))
        {
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
