//! Learnable parameters and the Adam update rule.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use super::value::Tensor;
use super::{Result, TensorError};

/// A named learnable tensor. The gradient slot sits behind a `RefCell` so a
/// borrowed tape can deposit gradients during backward; a parameter is
/// confined to one training thread at a time.
#[derive(Debug)]
pub struct Param {
    name: String,
    pub value: Tensor,
    grad: RefCell<Option<Tensor>>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Param {
            name: name.into(),
            value,
            grad: RefCell::new(None),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.grad.borrow_mut() = None;
    }

    /// Add `delta` into the gradient slot (used by `Tape::backward`).
    pub(crate) fn accumulate_grad(&self, shape: &[usize], delta: &[f64]) {
        debug_assert_eq!(shape, self.value.shape());
        let mut slot = self.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (g, d) in g.data_mut().iter_mut().zip(delta) {
                    *g += d;
                }
            }
            None => {
                *slot = Some(
                    Tensor::new(shape.to_vec(), delta.to_vec()).expect("gradient shape"),
                );
            }
        }
    }
}

impl Clone for Param {
    fn clone(&self) -> Self {
        Param {
            name: self.name.clone(),
            value: self.value.clone(),
            grad: RefCell::new(self.grad.borrow().clone()),
        }
    }
}

/// Adam hyper-parameters other than the (scheduled) learning rate.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First/second moment estimates, aligned with a fixed parameter order.
#[derive(Clone, Debug)]
pub struct AdamState {
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[&Param]) -> Self {
        AdamState {
            t: 0,
            m: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update. Every parameter must hold a gradient;
    /// gradients are zeroed afterwards.
    pub fn step(
        &mut self,
        params: &mut [&mut Param],
        lr: f64,
        cfg: &AdamConfig,
    ) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(TensorError::InvalidArgument {
                op: "adam_step",
                message: format!(
                    "state tracks {} parameters, got {}",
                    self.m.len(),
                    params.len()
                ),
            });
        }
        for p in params.iter() {
            if p.grad.borrow().is_none() {
                return Err(TensorError::MissingGradient {
                    name: p.name.clone(),
                });
            }
        }
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let grad = p.grad.borrow_mut().take().expect("checked above");
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let theta = p.value.data_mut();
            for (((t, g), m), v) in theta
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let g = g + cfg.weight_decay * *t;
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *t -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> Param {
        Param::new("x", Tensor::scalar(value))
    }

    #[test]
    fn zero_grad_leaves_param_unchanged() {
        let mut p = single(3.0);
        p.accumulate_grad(&[1], &[0.0]);
        let mut state = AdamState::new(&[&p]);
        state.step(&mut [&mut p], 0.01, &AdamConfig::default()).unwrap();
        assert_eq!(p.value.item(), 3.0);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // With bias correction the first update is -lr * g / (|g| + eps).
        let mut p = single(1.0);
        p.accumulate_grad(&[1], &[0.37]);
        let mut state = AdamState::new(&[&p]);
        state.step(&mut [&mut p], 0.01, &AdamConfig::default()).unwrap();
        assert!((p.value.item() - (1.0 - 0.01)).abs() < 1e-6);

        let mut q = single(-2.0);
        q.accumulate_grad(&[1], &[-5.0]);
        let mut state = AdamState::new(&[&q]);
        state.step(&mut [&mut q], 0.01, &AdamConfig::default()).unwrap();
        assert!((q.value.item() - (-2.0 + 0.01)).abs() < 1e-6);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut p = single(1.0);
        let mut state = AdamState::new(&[&p]);
        let err = state
            .step(&mut [&mut p], 0.01, &AdamConfig::default())
            .unwrap_err();
        assert!(matches!(err, TensorError::MissingGradient { .. }));
    }

    #[test]
    fn grads_are_zeroed_after_step() {
        let mut p = single(1.0);
        p.accumulate_grad(&[1], &[1.0]);
        let mut state = AdamState::new(&[&p]);
        state.step(&mut [&mut p], 0.01, &AdamConfig::default()).unwrap();
        assert!(p.grad().is_none());
    }

    #[test]
    fn adam_descends_quadratic_in_windowed_means() {
        // f(x) = x^2, grad 2x; |x| should trend to zero.
        let mut p = single(1.5);
        let mut state = AdamState::new(&[&p]);
        let cfg = AdamConfig::default();
        let mut trace = Vec::new();
        for _ in 0..100 {
            let x = p.value.item();
            p.accumulate_grad(&[1], &[2.0 * x]);
            state.step(&mut [&mut p], 0.01, &cfg).unwrap();
            trace.push(p.value.item().abs());
        }
        let window = 10;
        let means: Vec<f64> = trace
            .chunks(window)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        for pair in means.windows(2) {
            assert!(
                pair[1] < pair[0],
                "windowed |x| means must strictly decrease: {means:?}"
            );
        }
    }
}
