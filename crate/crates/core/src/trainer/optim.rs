//! First-order optimizers. State and arithmetic are kept in `f64`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::network::{is_trainable, Gradients, ParameterStore};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    /// `v ← μ·v + g`, `θ ← θ − lr·v`.
    SgdMomentum { momentum: f64 },
    /// Bias-corrected Adam.
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerKind {
    pub fn sgd(momentum: f64) -> Self {
        OptimizerKind::SgdMomentum { momentum }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::SgdMomentum { .. } => "sgd",
            OptimizerKind::Adam { .. } => "adam",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerKind::SgdMomentum { momentum } => (0.0..1.0).contains(&momentum),
            OptimizerKind::Adam { beta1, beta2, epsilon } => {
                (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    step: u64,
    state: BTreeMap<String, Slot>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            step: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Advances the step counter. Call once per mini-batch before
    /// [`Optimizer::update`].
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates one named parameter in place.
    pub fn update<T: Real>(&mut self, key: &str, theta: &mut [T], grad: &[T], lr: f64) -> Result<()> {
        if theta.len() != grad.len() {
            return Err(Error::Shape(format!(
                "`{key}`: {} values but {} gradients",
                theta.len(),
                grad.len()
            )));
        }
        if self.step == 0 {
            return Err(Error::Config("begin_step must precede update".into()));
        }
        let slot = self.state.entry(key.to_string()).or_insert_with(|| Slot {
            m: vec![0.0; theta.len()],
            v: vec![0.0; theta.len()],
        });
        match self.kind {
            OptimizerKind::SgdMomentum { momentum } => {
                for ((t, g), v) in theta.iter_mut().zip(grad).zip(&mut slot.v) {
                    *v = momentum * *v + g.to_f64();
                    *t = T::from_f64(t.to_f64() - lr * *v);
                }
            }
            OptimizerKind::Adam { beta1, beta2, epsilon } => {
                let c1 = 1.0 - beta1.powi(self.step as i32);
                let c2 = 1.0 - beta2.powi(self.step as i32);
                for (((t, g), m), v) in theta.iter_mut().zip(grad).zip(&mut slot.m).zip(&mut slot.v) {
                    let g = g.to_f64();
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *t = T::from_f64(t.to_f64() - lr * m_hat / (v_hat.sqrt() + epsilon));
                }
            }
        }
        Ok(())
    }

    /// One step over every trainable entry of `params`.
    pub fn step<T: Real>(&mut self, params: &mut ParameterStore<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        self.begin_step();
        for (k, t) in params.tensors.iter_mut() {
            if !is_trainable(k) {
                continue;
            }
            let g = grads
                .get(k)
                .ok_or_else(|| Error::Config(format!("no gradient for `{k}`")))?;
            self.update(k, t.data_mut(), g.data(), lr)?;
        }
        Ok(())
    }
}
