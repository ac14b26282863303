use serde::{Deserialize, Serialize};

use super::{ParameterSet, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// `p <- p - lr * grad`
    Sgd,
    /// Bias-corrected first/second moment update.
    Adam,
}

/// Gradient-step state for a fixed list of registered parameters.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    names: Vec<String>,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    /// Registers `names` (all must exist in `params`).
    pub fn new<'a>(
        kind: OptimizerKind,
        lr: f64,
        params: &ParameterSet<T>,
        names: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::invalid(format!("learning rate must be > 0, got {lr}")));
        }
        let names: Vec<String> = names.into_iter().map(str::to_string).collect();
        let mut first = Vec::new();
        let mut second = Vec::new();
        if kind == OptimizerKind::Adam {
            for n in &names {
                let shape = params.value(n)?.shape().to_vec();
                first.push(Tensor::zeros(shape.clone()));
                second.push(Tensor::zeros(shape));
            }
        } else {
            for n in &names {
                params.value(n)?;
            }
        }
        Ok(Self {
            kind,
            lr,
            beta1: Self::BETA1,
            beta2: Self::BETA2,
            eps: Self::EPS,
            step: 0,
            names,
            first,
            second,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn registered(&self) -> &[String] {
        &self.names
    }

    /// Applies one update to every registered parameter, then clears all
    /// gradients in `params`.
    pub fn step(&mut self, params: &mut ParameterSet<T>) -> Result<()> {
        for n in &self.names {
            if params.get(n)?.grad.is_none() {
                return Err(Error::MissingGradient(n.clone()));
            }
        }
        self.step += 1;
        let lr = T::from_f64(self.lr);
        match self.kind {
            OptimizerKind::Sgd => {
                for n in &self.names {
                    let p = params.get_mut(n)?;
                    let grad = p.grad.take().expect("checked above");
                    for (w, g) in p.value.data_mut().iter_mut().zip(grad.data()) {
                        *w = *w - lr * *g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let b1 = T::from_f64(self.beta1);
                let b2 = T::from_f64(self.beta2);
                let c1 = T::from_f64(1.0 - self.beta1.powi(t));
                let c2 = T::from_f64(1.0 - self.beta2.powi(t));
                let eps = T::from_f64(self.eps);
                let one = T::one();
                for (i, n) in self.names.iter().enumerate() {
                    let p = params.get_mut(n)?;
                    let grad = p.grad.take().expect("checked above");
                    let m = self.first[i].data_mut();
                    let v = self.second[i].data_mut();
                    for (((w, &g), m), v) in p
                        .value
                        .data_mut()
                        .iter_mut()
                        .zip(grad.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *m = b1 * *m + (one - b1) * g;
                        *v = b2 * *v + (one - b2) * g * g;
                        let mhat = *m / c1;
                        let vhat = *v / c2;
                        *w = *w - lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        params.zero_grad();
        Ok(())
    }
}
