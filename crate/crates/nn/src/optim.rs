//! Gradient-descent update rules: SGD (optional momentum), RMSProp, Adam.

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Algorithm {
    Sgd { momentum: f64 },
    RmsProp { alpha: f64, eps: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Algorithm {
    pub fn sgd() -> Self {
        Algorithm::Sgd { momentum: 0.0 }
    }

    pub fn rmsprop() -> Self {
        Algorithm::RmsProp {
            alpha: 0.95,
            eps: 1e-8,
        }
    }

    pub fn adam() -> Self {
        Algorithm::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Slot<S: Scalar> {
    shape: Vec<usize>,
    m: Vec<S>,
    v: Vec<S>,
}

/// Optimizer state: the algorithm, learning rate, per-parameter moment
/// accumulators, and a step counter.
#[derive(Debug, Clone)]
pub struct Optimizer<S: Scalar> {
    algorithm: Algorithm,
    lr: f64,
    step_count: u64,
    slots: Vec<Slot<S>>,
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(algorithm: Algorithm, lr: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(NnError::Config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Self {
            algorithm,
            lr,
            step_count: 0,
            slots: Vec::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Applies one update to `(parameter, gradient)` pairs. The pair list must
    /// be the same length and shapes on every call; moment slots are created
    /// on first use.
    pub fn step(&mut self, pairs: Vec<(&mut Tensor<S>, &Tensor<S>)>) -> Result<()> {
        if self.slots.is_empty() {
            self.slots = pairs
                .iter()
                .map(|(p, _)| Slot {
                    shape: p.shape().to_vec(),
                    m: vec![S::zero(); p.len()],
                    v: vec![S::zero(); p.len()],
                })
                .collect();
        } else if self.slots.len() != pairs.len() {
            return Err(NnError::Usage(format!(
                "optimizer tracks {} parameters, step got {}",
                self.slots.len(),
                pairs.len()
            )));
        }
        self.step_count += 1;
        let lr = S::cast(self.lr);
        for (slot, (param, grad)) in self.slots.iter_mut().zip(pairs) {
            if param.shape() != slot.shape.as_slice() {
                return Err(NnError::Usage(format!(
                    "parameter shape {:?} does not match optimizer slot {:?}",
                    param.shape(),
                    slot.shape
                )));
            }
            if grad.shape() != param.shape() {
                return Err(NnError::Usage(format!(
                    "gradient shape {:?} does not match parameter {:?}",
                    grad.shape(),
                    param.shape()
                )));
            }
            match self.algorithm {
                Algorithm::Sgd { momentum } => {
                    if momentum == 0.0 {
                        for (p, &g) in param.data_mut().iter_mut().zip(grad.data()) {
                            *p = *p - lr * g;
                        }
                    } else {
                        let mu = S::cast(momentum);
                        for ((p, &g), m) in
                            param.data_mut().iter_mut().zip(grad.data()).zip(&mut slot.m)
                        {
                            *m = mu * *m + g;
                            *p = *p - lr * *m;
                        }
                    }
                }
                Algorithm::RmsProp { alpha, eps } => {
                    let a = S::cast(alpha);
                    let one_minus = S::cast(1.0 - alpha);
                    let eps = S::cast(eps);
                    for ((p, &g), v) in
                        param.data_mut().iter_mut().zip(grad.data()).zip(&mut slot.v)
                    {
                        *v = a * *v + one_minus * g * g;
                        *p = *p - lr * g / (v.sqrt() + eps);
                    }
                }
                Algorithm::Adam { beta1, beta2, eps } => {
                    let b1 = S::cast(beta1);
                    let b2 = S::cast(beta2);
                    let eps = S::cast(eps);
                    let c1 = S::cast(1.0 - beta1.powi(self.step_count as i32));
                    let c2 = S::cast(1.0 - beta2.powi(self.step_count as i32));
                    let one_b1 = S::cast(1.0 - beta1);
                    let one_b2 = S::cast(1.0 - beta2);
                    for (((p, &g), m), v) in param
                        .data_mut()
                        .iter_mut()
                        .zip(grad.data())
                        .zip(&mut slot.m)
                        .zip(&mut slot.v)
                    {
                        *m = b1 * *m + one_b1 * g;
                        *v = b2 * *v + one_b2 * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
