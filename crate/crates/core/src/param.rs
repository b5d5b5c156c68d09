//! Learned parameters, SGD with momentum and the poly learning-rate schedule.

use std::path::Path;

use crate::error::{contract_err, shape_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A learned tensor with its gradient and momentum buffer (all the same shape).
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub momentum: Tensor,
}

impl Parameter {
    fn new(name: String, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        let momentum = Tensor::zeros(value.shape());
        Self {
            name,
            value,
            grad,
            momentum,
        }
    }
}

/// Registry of every parameter a model owns, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Parameter::new(name.into(), value));
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return shape_err(format!(
                "parameter {} has shape {:?}, cannot assign {:?}",
                p.name,
                p.value.shape(),
                value.shape()
            ));
        }
        p.value = value;
        Ok(())
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    /// Total number of scalar weights.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn numel_of(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|&id| self.params[id.0].value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Tensor) {
        let p = &mut self.params[id.0];
        debug_assert_eq!(p.grad.shape(), g.shape());
        for (a, b) in p.grad.data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
    }

    /// SGD with heavy-ball momentum and L2 weight decay folded into the
    /// velocity: `v ← μ·v + g + λ·w`, `w ← w − lr·v`. Gradients are zeroed.
    pub fn sgd_update(&mut self, lr: f64, momentum: f64, weight_decay: f64) {
        for p in &mut self.params {
            let value = p.value.data_mut();
            let v = p.momentum.data_mut();
            let g = p.grad.data_mut();
            for i in 0..value.len() {
                v[i] = momentum * v[i] + g[i] + weight_decay * value[i];
                value[i] -= lr * v[i];
                g[i] = 0.0;
            }
        }
    }

    /// Writes every value as `<dir>/<name>.m2mt`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for p in &self.params {
            p.value.save(dir.join(format!("{}.m2mt", p.name)))?;
        }
        Ok(())
    }

    /// Overwrites every registered value from `<dir>/<name>.m2mt`; shapes must agree.
    pub fn load_dir(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mut loaded = Vec::with_capacity(self.params.len());
        for p in &self.params {
            loaded.push(Tensor::load(dir.join(format!("{}.m2mt", p.name)))?);
        }
        for (i, t) in loaded.into_iter().enumerate() {
            self.set_value(ParamId(i), t)?;
        }
        Ok(())
    }
}

/// Poly schedule `base · (1 − iter/max_iter)^power`.
pub fn poly_lr(base: f64, iter: usize, max_iter: usize, power: f64) -> Result<f64> {
    if iter > max_iter {
        return contract_err(format!("poly_lr: iteration {iter} exceeds max {max_iter}"));
    }
    if max_iter == 0 {
        return Ok(base);
    }
    Ok(base * (1.0 - iter as f64 / max_iter as f64).powf(power))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(value: &[f64], grad: &[f64]) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::new(&[value.len()], value.to_vec()).unwrap());
        s.get_mut(id).grad = Tensor::new(&[grad.len()], grad.to_vec()).unwrap();
        (s, id)
    }

    #[test]
    fn vanilla_step() {
        let (mut s, id) = store_with(&[1.0, -2.0], &[0.5, 1.0]);
        s.sgd_update(0.1, 0.0, 0.0);
        assert_eq!(s.value(id).data(), &[1.0 - 0.05, -2.0 - 0.1]);
        assert!(s.get(id).grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn momentum_carries_with_zero_grad() {
        let (mut s, id) = store_with(&[0.0], &[1.0]);
        s.sgd_update(0.1, 0.9, 0.0);
        assert!((s.value(id).data()[0] + 0.1).abs() < 1e-15);
        s.sgd_update(0.1, 0.9, 0.0);
        // v = 0.9, moves by 0.1 * 0.9
        assert!((s.value(id).data()[0] + 0.1 + 0.09).abs() < 1e-15);
    }

    #[test]
    fn two_steps_match_unrolled_recurrence() {
        let (lr, mu, wd) = (0.01, 0.9, 0.0005);
        let (w0, g1, g2) = (0.3, -0.2, 0.7);
        let (mut s, id) = store_with(&[w0], &[g1]);
        s.sgd_update(lr, mu, wd);
        s.get_mut(id).grad = Tensor::new(&[1], vec![g2]).unwrap();
        s.sgd_update(lr, mu, wd);

        let v1 = g1 + wd * w0;
        let w1 = w0 - lr * v1;
        let v2 = mu * v1 + g2 + wd * w1;
        let w2 = w1 - lr * v2;
        assert!((s.value(id).data()[0] - w2).abs() < 1e-15);
        assert!((s.get(id).momentum.data()[0] - v2).abs() < 1e-15);
    }

    #[test]
    fn poly_schedule() {
        assert_eq!(poly_lr(0.01, 0, 100, 0.9).unwrap(), 0.01);
        assert_eq!(poly_lr(0.01, 100, 100, 0.9).unwrap(), 0.0);
        let mid = poly_lr(0.01, 50, 100, 0.9).unwrap();
        assert!((mid - 0.01 * 0.5f64.powf(0.9)).abs() < 1e-15);
        assert!((mid - 0.005359).abs() < 1e-6);
        assert!(poly_lr(0.01, 101, 100, 0.9).is_err());
    }
}
