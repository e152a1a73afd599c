use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::Real;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// A trainable tensor with its Adam moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: Tensor,
    #[serde(skip)]
    pub grad: Option<Tensor>,
    m: Vec<Real>,
    v: Vec<Real>,
}

impl Param {
    fn new(value: Tensor) -> Self {
        let n = value.numel();
        Self {
            value,
            grad: None,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Named parameters plus optimizer state.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: IndexMap<String, Param>,
    step: u64,
    adam: AdamConfig,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        self.params.insert(name.to_string(), Param::new(value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.get(name)?.value)
    }

    /// Overwrites a parameter value, keeping its shape.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if p.value.shape() != value.shape() {
            return Err(Error::shape("set_value", p.value.shape(), value.shape()));
        }
        p.value = value;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Places a parameter on the tape as a trainable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape, name: &str) -> Result<Var<'t>> {
        Ok(tape.param(name, self.value(name)?.clone()))
    }

    /// Places a parameter on the tape as a constant.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape, name: &str) -> Result<Var<'t>> {
        Ok(tape.constant(self.value(name)?.clone()))
    }

    /// Adds the gradients held by this store's leaves on `tape` into the
    /// parameter grads.
    pub fn collect_grads(&mut self, tape: &Tape) {
        for (name, g) in tape.labelled_grads() {
            let Some(p) = self.params.get_mut(&name) else {
                continue;
            };
            match &mut p.grad {
                Some(acc) => acc
                    .data_mut()
                    .iter_mut()
                    .zip(&g)
                    .for_each(|(a, v)| *a += v),
                slot @ None => {
                    *slot = Some(Tensor::new(p.value.shape(), g).expect("grad matches value"))
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// One bias-corrected Adam update of every parameter, then clears grads.
    pub fn adam_step(&mut self, lr: Real) -> Result<()> {
        if let Some((name, _)) = self.params.iter().find(|(_, p)| p.grad.is_none()) {
            return Err(Error::MissingGrad(name.clone()));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.adam;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for p in self.params.values_mut() {
            let g = p.grad.take().expect("checked above");
            let values = p.value.data_mut();
            for (i, &gi) in g.data().iter().enumerate() {
                p.m[i] = beta1 * p.m[i] + (1.0 - beta1) * gi;
                p.v[i] = beta2 * p.v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = p.m[i] / bc1;
                let v_hat = p.v[i] / bc2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Clears moments and the step counter.
    pub fn reset_optimizer(&mut self) {
        self.step = 0;
        for p in self.params.values_mut() {
            p.m.iter_mut().for_each(|v| *v = 0.0);
            p.v.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(|p| p.value.is_finite())
    }
}
