//! Dense tensors and the named parameter store.
//!
//! Every trainable model in this crate keeps its parameters in a
//! [`ParamStore`]: named f64 tensors with a same-shape gradient accumulator.
//! The training loop, the optimizer, gradient clipping, and the model
//! container all operate on the store, so the CRF and the neural taggers
//! share that machinery.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use std::collections::HashMap;

use crate::error::{Error, Result};

/// Row-major f64 tensor with a gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
            grad: vec![0.0; len],
        }
    }

    pub fn from_data(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::InvalidInput(format!(
                "tensor shape {shape:?} wants {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            grad: vec![0.0; len],
            data,
        })
    }

    /// Uniform init in [-a, a].
    pub fn uniform(shape: &[usize], a: f64, rng: &mut ChaCha20Rng) -> Self {
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| rng.random_range(-a..a)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
            grad: vec![0.0; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a 2-D tensor (or 1 for vectors).
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Columns of a 2-D tensor (or the length for vectors).
    pub fn cols(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[1]
        } else {
            self.data.len()
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    /// Split borrow used during backward: read values, write gradients.
    pub fn data_and_grad_mut(&mut self) -> (&[f64], &mut [f64]) {
        (&self.data, &mut self.grad)
    }

    /// Split borrow used by optimizers: write values, read gradients.
    pub fn data_mut_and_grad(&mut self) -> (&mut [f64], &[f64]) {
        (&mut self.data, &self.grad)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Handle to one tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Named tensors in insertion order. Order is part of a model's identity:
/// serialization and optimizer state both follow it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    index: HashMap<String, usize>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidInput(format!("duplicate parameter {name:?}")));
        }
        let id = self.tensors.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        self.tensors.push(tensor);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter {name:?}")))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor> {
        Ok(self.get(self.id(name)?))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar parameter count.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.tensors.iter_mut())
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }

    /// Multiply every gradient entry by `s`.
    pub fn scale_grads(&mut self, s: f64) {
        for t in &mut self.tensors {
            for g in t.grad_mut() {
                *g *= s;
            }
        }
    }

    /// Global L2 norm over all gradients. Errors on non-finite entries.
    pub fn grad_norm(&self) -> Result<f64> {
        let mut sq = 0.0;
        for (name, t) in self.iter() {
            for &g in t.grad() {
                if !g.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient in parameter {name:?}"
                    )));
                }
                sq += g * g;
            }
        }
        Ok(sq.sqrt())
    }

    /// Handles to every parameter, in store order.
    pub fn ids(&self) -> Vec<ParamId> {
        (0..self.tensors.len()).map(ParamId).collect()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    /// Copy of all parameter values, in store order.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| t.data().to_vec()).collect()
    }

    /// Copy of all gradients, in store order.
    pub fn grad_snapshot(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| t.grad().to_vec()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<f64>]) -> Result<()> {
        if snapshot.len() != self.tensors.len() {
            return Err(Error::InvalidInput("snapshot size mismatch".into()));
        }
        for (t, s) in self.tensors.iter_mut().zip(snapshot) {
            if t.len() != s.len() {
                return Err(Error::InvalidInput("snapshot tensor size mismatch".into()));
            }
            t.data_mut().copy_from_slice(s);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn add_and_lookup() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::zeros(&[2, 3])).unwrap();
        assert_eq!(store.get(id).len(), 6);
        assert_eq!(store.id("w").unwrap(), id);
        assert!(store.add("w", Tensor::zeros(&[1])).is_err());
        assert!(store.id("missing").is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        store.add("a", Tensor::uniform(&[4], 0.5, &mut rng)).unwrap();
        store.add("b", Tensor::uniform(&[2, 2], 0.5, &mut rng)).unwrap();
        let snap = store.snapshot();
        let before = store.get(ParamId(0)).data().to_vec();
        store.get_mut(ParamId(0)).data_mut()[0] = 99.0;
        store.restore(&snap).unwrap();
        assert_eq!(store.get(ParamId(0)).data(), &before[..]);
    }

    #[test]
    fn grad_norm_detects_non_finite() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::zeros(&[2])).unwrap();
        store.get_mut(ParamId(0)).grad_mut()[0] = 3.0;
        store.get_mut(ParamId(0)).grad_mut()[1] = 4.0;
        assert!((store.grad_norm().unwrap() - 5.0).abs() < 1e-12);
        store.get_mut(ParamId(0)).grad_mut()[1] = f64::NAN;
        assert!(store.grad_norm().is_err());
    }
}
