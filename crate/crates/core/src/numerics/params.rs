use sha2::{Digest, Sha256};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A learnable tensor and its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Vec<T>,
    /// Whether decoupled weight decay applies.
    pub decay: bool,
}

/// Ordered collection of parameters. Order is registration order and is part
/// of the checkpoint layout.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, decay: bool) -> ParamId {
        let grad = vec![T::zero(); value.numel()];
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
            decay,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, grad: &[T]) {
        for (g, &d) in self.params[id.0].grad.iter_mut().zip(grad) {
            *g = *g + d;
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g.as_f64() * g.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    /// Same parameters, different precision. Gradients are reset.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.add(p.name.clone(), p.value.cast(), p.decay);
        }
        out
    }

    /// Replace all values from another store with identical layout.
    pub fn load_values(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::contract(format!(
                "parameter count {} does not match {}",
                other.len(),
                self.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(Error::Shape {
                    op: "load_values",
                    lhs: dst.value.shape().to_vec(),
                    rhs: src.value.shape().to_vec(),
                });
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and the exact bit patterns of all values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for &s in p.value.shape() {
                h.update((s as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.as_f64().to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
