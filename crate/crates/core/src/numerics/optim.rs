use serde::{Deserialize, Serialize};

use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// AdamW hyperparameters for one parameter group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerSpec {
    pub fn adamw(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.learning_rate >= 0.0
            && self.weight_decay >= 0.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid optimizer spec {self:?}")))
        }
    }
}

/// First and second moment buffers for one group of tensors.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    spec: OptimizerSpec,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    steps: u64,
}

impl<T: Real> AdamW<T> {
    pub fn new(spec: OptimizerSpec, params: &[Tensor<T>]) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            steps: 0,
        })
    }

    pub fn spec(&self) -> &OptimizerSpec {
        &self.spec
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One AdamW update at learning rate `lr_now`.
    ///
    /// Decoupled decay: `p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`.
    /// A zero learning rate leaves the parameters untouched bit-for-bit.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr_now: f64) -> Result<()> {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(params.len(), grads.len());
        for g in grads {
            if !g.all_finite() {
                return Err(Error::NonFinite("gradient".into()));
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        let s = &self.spec;
        let (b1, b2) = (T::of(s.beta1), T::of(s.beta2));
        let bc1 = T::one() - T::of(s.beta1.powi(t));
        let bc2 = T::one() - T::of(s.beta2.powi(t));
        let eps = T::of(s.epsilon);
        let lr = T::of(lr_now);
        let decay = T::of(lr_now * s.weight_decay);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.shape(), g.shape(), "gradient shape mismatch");
            for i in 0..m.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
            }
            if lr_now == 0.0 {
                continue;
            }
            for (i, pv) in p.data_mut().iter_mut().enumerate() {
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let adaptive = lr * mhat / (vhat.sqrt() + eps);
                *pv = *pv - adaptive - decay * *pv;
            }
        }
        Ok(())
    }
}
