//! Named parameter storage: trainable tensors, their gradient buffers,
//! and Adam moment state. Serialized as the checkpoint payload.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::{el, Elem};
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamStore`].
pub type ParamId = usize;

pub struct ParamEntry<E: Elem> {
    pub name: String,
    pub value: Tensor<E>,
    pub grad: Tensor<E>,
    /// Adam first/second moment; present only for trainable entries.
    pub moment: Option<(Tensor<E>, Tensor<E>)>,
    pub trainable: bool,
}

pub struct ParamStore<E: Elem> {
    entries: Vec<ParamEntry<E>>,
    index: HashMap<String, ParamId>,
}

impl<E: Elem> Default for ParamStore<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Elem> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<E>, trainable: bool) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        let id = self.entries.len();
        let grad = Tensor::zeros(&value.shape);
        let moment =
            trainable.then(|| (Tensor::zeros(&value.shape), Tensor::zeros(&value.shape)));
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            grad,
            moment,
            trainable,
        });
        self.index.insert(name.to_string(), id);
        id
    }

    /// He-uniform init: U(-sqrt(6/fan_in), sqrt(6/fan_in)). The draw happens
    /// in f64 so layouts are identical across precisions.
    pub fn add_he_uniform(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let limit = (6.0 / fan_in as f64).sqrt();
        let data: Vec<E> = (0..shape.iter().product::<usize>())
            .map(|_| el::<E>(rng.gen_range(-limit..limit)))
            .collect();
        self.add(name, Tensor::new(shape.to_vec(), data), true)
    }

    /// Uniform init in (-limit, limit) with the draw in f64.
    pub fn add_uniform(
        &mut self,
        name: &str,
        shape: &[usize],
        limit: f64,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let data: Vec<E> = (0..shape.iter().product::<usize>())
            .map(|_| el::<E>(rng.gen_range(-limit..limit)))
            .collect();
        self.add(name, Tensor::new(shape.to_vec(), data), true)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape), true)
    }

    pub fn add_ones(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::ones(shape), true)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<E> {
        &self.entries[id]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<E> {
        &self.entries[id].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<E> {
        &mut self.entries[id].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<E> {
        &self.entries[id].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<E> {
        &mut self.entries[id].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<E>)> {
        self.entries.iter().enumerate()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry<E>> {
        self.entries.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(E::zero());
        }
    }

    /// Total element count of trainable parameters.
    pub fn param_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.numel())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn names_are_unique_and_addressable() {
        let mut s = ParamStore::<f32>::new();
        let a = s.add_zeros("w", &[2, 2]);
        assert_eq!(s.id_of("w"), Some(a));
        assert_eq!(s.param_count(), 4);
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn duplicate_name_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.add_zeros("w", &[1]);
        s.add_zeros("w", &[1]);
    }

    #[test]
    fn he_uniform_is_seed_deterministic() {
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let mut s1 = ParamStore::<f64>::new();
        let mut s2 = ParamStore::<f64>::new();
        s1.add_he_uniform("w", &[4, 4], 4, &mut r1);
        s2.add_he_uniform("w", &[4, 4], 4, &mut r2);
        assert_eq!(s1.value(0).data, s2.value(0).data);
    }
}
