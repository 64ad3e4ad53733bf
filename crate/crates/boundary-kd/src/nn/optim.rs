//! Flat-parameter optimizers.

use serde::{Deserialize, Serialize};

use super::Element;
use crate::error::{Error, Result};

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerSpec {
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
    },
}

impl OptimizerSpec {
    pub fn adam(lr: f64) -> Self {
        OptimizerSpec::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = match self {
            OptimizerSpec::Adam { lr, .. } | OptimizerSpec::Sgd { lr, .. } => *lr,
        };
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidConfig(
                "learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

pub struct Optimizer<F> {
    spec: OptimizerSpec,
    step: u64,
    m: Vec<F>,
    v: Vec<F>,
}

impl<F: Element> Optimizer<F> {
    pub fn new(spec: OptimizerSpec, param_count: usize) -> Result<Self> {
        spec.validate()?;
        Ok(Optimizer {
            spec,
            step: 0,
            m: vec![F::zero(); param_count],
            v: vec![F::zero(); param_count],
        })
    }

    pub fn step(&mut self, params: &mut [F], grads: &[F]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        match self.spec {
            OptimizerSpec::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let b1 = F::from_f64(beta1);
                let b2 = F::from_f64(beta2);
                let one = F::one();
                let corr1 = F::from_f64(1.0 - beta1.powi(self.step as i32));
                let corr2 = F::from_f64(1.0 - beta2.powi(self.step as i32));
                let lr = F::from_f64(lr);
                let eps = F::from_f64(eps);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = b1 * self.m[i] + (one - b1) * g;
                    self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
                    let m_hat = self.m[i] / corr1;
                    let v_hat = self.v[i] / corr2;
                    params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
            OptimizerSpec::Sgd { lr, momentum } => {
                let lr = F::from_f64(lr);
                let mu = F::from_f64(momentum);
                for i in 0..params.len() {
                    self.m[i] = mu * self.m[i] + grads[i];
                    params[i] = params[i] - lr * self.m[i];
                }
            }
        }
    }
}
