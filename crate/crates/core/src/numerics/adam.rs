//! Adaptive-moment optimizer with bias correction.

use serde::{Deserialize, Serialize};

use super::params::{ParamStore, ParamTensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let step_size = self.lr / bc1;
        for ((tensor, m), v) in store.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            for (((w, g), m), v) in tensor
                .values
                .iter_mut()
                .zip(&mut tensor.grads)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * *g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * *g * *g;
                *w -= step_size * *m / ((*v / bc2).sqrt() + self.eps);
                *g = 0.0;
            }
        }
    }

    /// Moment buffers as named tensors (`adam.m.<name>`, `adam.v.<name>`), for resumable checkpoints.
    pub fn moments_as_store(&self, params: &ParamStore) -> Result<ParamStore> {
        let mut out = ParamStore::new();
        for (prefix, bufs) in [("adam.m.", &self.first), ("adam.v.", &self.second)] {
            for (t, buf) in params.iter().zip(bufs) {
                let mut m = ParamTensor::zeros(format!("{prefix}{}", t.name), &t.shape);
                m.values.copy_from_slice(buf);
                out.insert(m)?;
            }
        }
        Ok(out)
    }

    pub fn restore_moments(&mut self, params: &ParamStore, moments: &ParamStore) -> Result<()> {
        for (prefix, bufs) in [("adam.m.", &mut self.first), ("adam.v.", &mut self.second)] {
            for (t, buf) in params.iter().zip(bufs.iter_mut()) {
                let name = format!("{prefix}{}", t.name);
                let id = moments
                    .id(&name)
                    .ok_or_else(|| Error::Config(format!("optimizer state lacks {name}")))?;
                let src = &moments.get(id).values;
                if src.len() != buf.len() {
                    return Err(Error::Config(format!("optimizer state {name} has wrong size")));
                }
                buf.copy_from_slice(src);
            }
        }
        Ok(())
    }
}
