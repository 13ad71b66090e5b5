use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A named, trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T = f32> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Owns every parameter of a model. Layers keep only [`ParamId`]s, so the
/// same layer definition can run against an `f32` store for training and an
/// `f64` copy for gradient checking.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T = f32> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.clone(),
            tensor: tensor.with_grad(),
        });
        self.index.insert(name, id);
        Ok(id)
    }

    /// Registers a tensor drawn from U(-bound, bound).
    pub fn register_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n = super::tensor::numel(shape);
        let data = (0..n)
            .map(|_| T::lit(rng.gen_range(-bound..=bound)))
            .collect();
        self.register(name, Tensor::from_vec(shape, data))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    /// Ids of every parameter whose name starts with `prefix`.
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.name.starts_with(prefix))
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Copies values (not gradients) of `src` params into `dst` params.
    pub fn copy_values(&mut self, src: &[ParamId], dst: &[ParamId]) {
        assert_eq!(src.len(), dst.len());
        for (&s, &d) in src.iter().zip(dst) {
            let values = self.params[s.0].tensor.data().to_vec();
            self.params[d.0].tensor.data_mut().copy_from_slice(&values);
        }
    }

    /// `dst ← tau·src + (1 − tau)·dst`, elementwise.
    pub fn polyak(&mut self, src: &[ParamId], dst: &[ParamId], tau: T) {
        assert_eq!(src.len(), dst.len());
        let keep = T::one() - tau;
        for (&s, &d) in src.iter().zip(dst) {
            assert_ne!(s, d);
            let values = self.params[s.0].tensor.data().to_vec();
            let target = self.params[d.0].tensor.data_mut();
            assert_eq!(values.len(), target.len(), "polyak shape mismatch");
            for (t, v) in target.iter_mut().zip(values) {
                *t = tau * v + keep * *t;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.tensor.is_finite())
    }
}
