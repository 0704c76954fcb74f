// SPDX-License-Identifier: MIT OR Apache-2.0

//! Named trainable tensors.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use crate::error::{GradError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// An ordered set of named parameter tensors belonging to one model.
///
/// The `namespace` distinguishes stores that share parameter names (a
/// classifier head and its replica) when both appear on the same tape.
#[derive(Debug, Clone)]
pub struct ParamStore<S> {
    namespace: String,
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
    index: HashMap<String, usize>,
    frozen: bool,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new(namespace: impl Into<String>) -> Self {
        Self {
            namespace: namespace.into(),
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
            frozen: false,
        }
    }

    pub fn namespace(&self) -> &str {
        &self.namespace
    }

    /// Copy of this store under another namespace, unfrozen.
    pub fn renamed(&self, namespace: impl Into<String>) -> Self {
        Self {
            namespace: namespace.into(),
            frozen: false,
            ..self.clone()
        }
    }

    /// Inserts or replaces a tensor.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<S>) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.tensors[i] = t,
            None => {
                self.index.insert(name.clone(), self.names.len());
                self.names.push(name);
                self.tensors.push(t);
            }
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i])
            .ok_or_else(|| GradError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.tensors[i]),
            None => Err(GradError::UnknownParam(name.to_string())),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Marks the store immutable: tapes treat its tensors as constants.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Checks that both stores expose identical names and shapes.
    pub fn check_same_layout(&self, other: &Self) -> Result<()> {
        if self.names != other.names {
            return Err(GradError::ParamMismatch(format!(
                "names differ: {:?} vs {:?}",
                self.names, other.names
            )));
        }
        for ((name, a), b) in self.names.iter().zip(&self.tensors).zip(&other.tensors) {
            if a.shape() != b.shape() {
                return Err(GradError::ParamMismatch(format!(
                    "`{name}` has shape {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    /// Hash over names, shapes and the exact bit patterns of every value.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (name, t) in self.iter() {
            name.hash(&mut h);
            t.shape().hash(&mut h);
            for v in t.data() {
                v.as_f64().to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_replaces_in_place() {
        let mut p = ParamStore::<f64>::new("m");
        p.insert("w", Tensor::vector(vec![1.0]));
        p.insert("b", Tensor::vector(vec![2.0]));
        p.insert("w", Tensor::vector(vec![3.0]));
        assert_eq!(p.names(), ["w", "b"]);
        assert_eq!(p.get("w").unwrap().item(), 3.0);
        assert!(matches!(p.get("x"), Err(GradError::UnknownParam(_))));
    }

    #[test]
    fn layout_check_catches_shape_drift() {
        let mut a = ParamStore::<f64>::new("a");
        a.insert("w", Tensor::zeros(&[2, 2]));
        let mut b = a.renamed("b");
        assert!(a.check_same_layout(&b).is_ok());
        b.insert("w", Tensor::zeros(&[2, 3]));
        assert!(a.check_same_layout(&b).is_err());
    }

    #[test]
    fn fingerprint_tracks_bits() {
        let mut a = ParamStore::<f64>::new("a");
        a.insert("w", Tensor::vector(vec![0.0]));
        let f0 = a.fingerprint();
        a.insert("w", Tensor::vector(vec![-0.0]));
        assert_ne!(f0, a.fingerprint());
    }
}
