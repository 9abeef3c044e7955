use serde::{Deserialize, Serialize};

use super::DenseMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

/// Moment accumulators for one parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    first: DenseMatrix,
    second: DenseMatrix,
    step: u64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            first: DenseMatrix::zeros(rows, cols),
            second: DenseMatrix::zeros(rows, cols),
            step: 0,
        }
    }

    pub fn for_params(params: &DenseMatrix, config: AdamConfig) -> Self {
        Self::new(params.rows(), params.cols(), config)
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut DenseMatrix, grads: &DenseMatrix, state: &mut AdamState) -> Result<()> {
    params.ensure_same_shape(grads, "adam_step grads")?;
    if state.first.shape() != params.shape() {
        return Err(Error::Shape {
            op: "adam_step state",
            left: params.shape(),
            right: state.first.shape(),
        });
    }
    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);

    let p = params.as_mut_slice();
    let g = grads.as_slice();
    let m = state.first.as_mut_slice();
    let v = state.second.as_mut_slice();
    for idx in 0..p.len() {
        let gi = g[idx];
        m[idx] = beta1 * m[idx] + (1.0 - beta1) * gi;
        v[idx] = beta2 * v[idx] + (1.0 - beta2) * gi * gi;
        let m_hat = m[idx] / c1;
        let v_hat = v[idx] / c2;
        p[idx] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}
