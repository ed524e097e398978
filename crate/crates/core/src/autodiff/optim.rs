//! First-order optimizers over a [`ParamStore`].

use std::collections::BTreeMap;

use crate::error::{Result, TuvfError};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    /// Plain gradient descent.
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Updates a fixed set of named parameters.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    pub lr: f64,
    names: Vec<String>,
    moments: BTreeMap<String, Moments>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, names: Vec<String>) -> Self {
        Optimizer {
            kind,
            lr,
            names,
            moments: BTreeMap::new(),
            steps: 0,
        }
    }

    /// Manages every parameter whose name starts with one of `prefixes`.
    pub fn for_prefixes(kind: OptimizerKind, lr: f64, store: &ParamStore, prefixes: &[&str]) -> Self {
        let names = store
            .iter()
            .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(k, _)| k.to_string())
            .collect();
        Optimizer::new(kind, lr, names)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update and clears the gradients it consumed.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for name in &self.names {
            if store.get(name)?.grad.is_none() {
                return Err(TuvfError::MissingGrad(name.clone()));
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        for name in &self.names {
            let p = store.get_mut(name)?;
            let g = p.grad.take().expect("checked above");
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, gi) in p.data_mut().iter_mut().zip(&g) {
                        *w -= self.lr * gi;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let st = self.moments.entry(name.clone()).or_default();
                    if st.m.len() != g.len() {
                        st.m = vec![0.0; g.len()];
                        st.v = vec![0.0; g.len()];
                    }
                    let bc1 = 1.0 - beta1.powi(t);
                    let bc2 = 1.0 - beta2.powi(t);
                    for (((w, gi), m), v) in p.data_mut().iter_mut().zip(&g).zip(&mut st.m).zip(&mut st.v) {
                        *m = beta1 * *m + (1.0 - beta1) * gi;
                        *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                        let mh = *m / bc1;
                        let vh = *v / bc2;
                        *w -= self.lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
            if let Some(index) = p.data().iter().position(|v| !v.is_finite()) {
                return Err(TuvfError::NonFinite { op: "optimizer", index });
            }
        }
        Ok(())
    }
}
