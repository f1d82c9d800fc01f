//! Adam optimizer with bias correction, plus the named parameter store it
//! updates.

use std::collections::HashMap;

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Named parameter collection with stable (insertion) order. Non-trainable
/// entries hold state like batch-norm running statistics: saved and loaded
/// with the model but never touched by the optimizer.
#[derive(Default, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    values: HashMap<String, (Tensor, bool)>,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "ParamStore({} entries, {} scalars)",
            self.names.len(),
            self.num_scalars()
        )
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor, trainable: bool) {
        assert!(
            !self.values.contains_key(name),
            "duplicate parameter {name}"
        );
        self.names.push(name.to_string());
        self.values.insert(name.to_string(), (value, trainable));
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.values.get(name).unwrap_or_else(|| panic!("no parameter {name}")).0
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self.values.get_mut(name).unwrap_or_else(|| panic!("no parameter {name}")).0
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.values[name].1
    }

    pub fn contains(&self, name: &str) -> bool {
        self.values.contains_key(name)
    }

    /// Names in insertion order.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.names
            .iter()
            .filter(|n| self.values[*n].1)
            .cloned()
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.names.iter().map(|n| self.values[n].0.len()).sum()
    }
}

/// Adam with the standard bias-corrected first/second moment estimates.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: HashMap<String, Tensor>,
    v: HashMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// Apply one update from named gradients. Parameters without a
    /// gradient entry are left unchanged; non-finite gradients abort with
    /// the offending parameter name.
    pub fn step(&mut self, params: &mut ParamStore, grads: &HashMap<String, Tensor>) -> Result<()> {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for name in params.trainable_names() {
            let Some(g) = grads.get(&name) else { continue };
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
            let p = params.get_mut(&name);
            assert!(p.same_shape(g), "gradient shape mismatch for {name}");
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.rows, g.cols));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.rows, g.cols));
            for i in 0..g.len() {
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * g.data[i];
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * g.data[i] * g.data[i];
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                p.data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
