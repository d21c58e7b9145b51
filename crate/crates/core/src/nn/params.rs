use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
    /// `false` for buffers such as batch-norm running statistics.
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

/// Named flat parameter arrays, each paired with a gradient slot.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>, trainable: bool) -> Result<ParamId> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!("parameter {name}: shape {shape:?} vs {} values", data.len())));
        }
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        let id = self.params.len();
        self.index.insert(name.to_string(), id);
        self.params.push(Param {
            name: name.to_string(),
            shape,
            grad: vec![0.0; len],
            data,
            trainable,
        });
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn data(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].data
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.data.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn infos(&self) -> Vec<ParamInfo> {
        self.params
            .iter()
            .map(|p| ParamInfo {
                name: p.name.clone(),
                shape: p.shape.clone(),
                trainable: p.trainable,
            })
            .collect()
    }

    /// Uniform `[-bound, bound]` fill of one parameter.
    pub fn fill_uniform(&mut self, id: ParamId, bound: f64, rng: &mut impl Rng) {
        for v in &mut self.params[id.0].data {
            *v = rng.gen_range(-bound..=bound);
        }
    }

    /// SHA-256 over the little-endian bytes of every parameter (or only the
    /// trainable ones), in insertion order.
    pub fn checksum(&self, trainable_only: bool) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| p.trainable || !trainable_only) {
            h.update(p.name.as_bytes());
            for v in &p.data {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Copies values from `other` for every parameter of the same name and shape.
    pub fn load_from(&mut self, other: &ParameterStore) -> Result<()> {
        for p in &mut self.params {
            let q = other
                .id(&p.name)
                .map(|id| other.get(id))
                .ok_or_else(|| Error::Format(format!("missing parameter {}", p.name)))?;
            if q.shape != p.shape {
                return Err(Error::Format(format!("parameter {} has shape {:?}, expected {:?}", p.name, q.shape, p.shape)));
            }
            p.data.copy_from_slice(&q.data);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameters_have_gradient_slots_and_counts() {
        let mut s = ParameterStore::new();
        let a = s.add("a", vec![2, 3], vec![1.0; 6], true).unwrap();
        s.add("buf", vec![4], vec![0.0; 4], false).unwrap();
        assert_eq!(s.get(a).grad.len(), 6);
        assert_eq!(s.parameter_count(), 6);
        assert!(s.add("a", vec![1], vec![0.0], true).is_err());
        assert!(s.add("b", vec![2], vec![0.0], true).is_err());
    }

    #[test]
    fn trainable_checksum_ignores_buffers() {
        let mut s = ParameterStore::new();
        s.add("w", vec![1], vec![1.0], true).unwrap();
        let b = s.add("rm", vec![1], vec![0.0], false).unwrap();
        let (t0, f0) = (s.checksum(true), s.checksum(false));
        s.get_mut(b).data[0] = 3.0;
        assert_eq!(s.checksum(true), t0);
        assert_ne!(s.checksum(false), f0);
    }
}
