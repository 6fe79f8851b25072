//! Adam with L2 weight decay, and a reduce-on-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::Scalar;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64, sizes: &[usize]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update; the decay term is added to the gradient before the moment estimates.
    pub fn step<T: Scalar>(&mut self, params: &mut [Tensor<T>], grads: &[Vec<f64>]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (i, w) in p.data.iter_mut().enumerate() {
                let wf = w.to_f64_lossy();
                let gi = g[i] + self.weight_decay * wf;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let update = self.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                *w = T::lit(wf - update);
            }
        }
    }
}

/// Divides the learning rate by `factor` once the monitored loss has not improved
/// (relative threshold) for more than `patience` consecutive epochs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReduceOnPlateau {
    pub patience: usize,
    pub factor: f64,
    pub threshold: f64,
    best: f64,
    bad_epochs: usize,
}

impl ReduceOnPlateau {
    pub fn new(patience: usize, factor: f64) -> Self {
        ReduceOnPlateau {
            patience,
            factor,
            threshold: 1e-4,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Records one epoch's loss and returns the (possibly reduced) learning rate.
    pub fn step(&mut self, loss: f64, lr: f64) -> f64 {
        if loss < self.best * (1.0 - self.threshold) {
            self.best = loss;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.patience {
            self.bad_epochs = 0;
            lr / self.factor
        } else {
            lr
        }
    }
}
