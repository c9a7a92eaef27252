//! Adam with a stepwise exponential learning-rate decay.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::array::DenseArray;
use crate::params::ParameterStore;

/// `lr(step) = base_lr * factor^(step / every)` (integer division).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub base_lr: f64,
    pub factor: f64,
    pub every: usize,
}

impl StepDecay {
    pub fn lr(&self, step: usize) -> f64 {
        let epochs = if self.every == 0 { 0 } else { step / self.every };
        self.base_lr * self.factor.powi(epochs as i32)
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale gradients whose global norm exceeds this value.
    pub clip_norm: Option<f64>,
    t: u64,
    moments: BTreeMap<String, (DenseArray, DenseArray)>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
            t: 0,
            moments: BTreeMap::new(),
        }
    }
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_clip(mut self, clip: f64) -> Self {
        self.clip_norm = Some(clip);
        self
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the gradients held in `store`, then zeroes them.
    pub fn step(&mut self, store: &mut ParameterStore, lr: f64) {
        if let Some(clip) = self.clip_norm {
            let norm = store.grad_norm();
            if norm > clip {
                store.scale_grads(clip / norm);
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, p) in store.iter_mut() {
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (DenseArray::zeros(p.value.shape()), DenseArray::zeros(p.value.shape())));
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            for (((w, g), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                let mh = *mi / bc1;
                let vh = *vi / bc2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
        store.zero_grads();
    }
}
