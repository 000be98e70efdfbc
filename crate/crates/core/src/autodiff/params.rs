//! Named trainable tensors.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Role of a parameter. Only [`ParamKind::Weight`] receives variational
/// noise and weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Norm,
}

#[derive(Debug, Clone)]
pub struct Parameter<S> {
    pub name: String,
    pub tensor: Tensor<S>,
    pub kind: ParamKind,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamSet<S> {
    params: Vec<Parameter<S>>,
    by_name: HashMap<String, usize>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        tensor: Tensor<S>,
        kind: ParamKind,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Parameter {
            name,
            tensor,
            kind,
            trainable: true,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    /// Glorot-uniform weight matrix `[fan_in, fan_out]`.
    pub fn add_glorot(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        let t = Tensor::from_fn(&[fan_in, fan_out], |_| S::of(dist.sample(rng)));
        self.add(name, t, ParamKind::Weight)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<S> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<S> {
        &mut self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<S>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<S>> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Order-sensitive FNV-1a digest of names and values, used to assert
    /// that a set has not been mutated.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |b: u8| {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for p in &self.params {
            p.name.bytes().for_each(&mut feed);
            for v in p.tensor.data() {
                v.to_f64_lossy()
                    .to_bits()
                    .to_le_bytes()
                    .into_iter()
                    .for_each(&mut feed);
            }
        }
        h
    }

    /// Converts every tensor to another scalar type, preserving ids.
    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                    kind: p.kind,
                    trainable: p.trainable,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}
