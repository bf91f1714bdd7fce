use std::collections::HashMap;
use std::fmt;

use super::Architecture;
use crate::error::{Error, Result};
use crate::numerics::{Float, Tensor};

/// Which part of the encoder/transform/decoder stack a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Submodule {
    Encoder,
    Transform,
    Decoder,
}

impl Submodule {
    pub const ALL: [Submodule; 3] = [Submodule::Encoder, Submodule::Transform, Submodule::Decoder];

    pub fn tag(self) -> u8 {
        match self {
            Submodule::Encoder => 0,
            Submodule::Transform => 1,
            Submodule::Decoder => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }
}

impl fmt::Display for Submodule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Submodule::Encoder => "encoder",
            Submodule::Transform => "transform",
            Submodule::Decoder => "decoder",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T: Float = f32> {
    pub name: String,
    pub submodule: Submodule,
    /// Convolution weights are prunable; biases are not.
    pub prunable: bool,
    pub tensor: Tensor<T>,
}

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterRegistry<T: Float = f32> {
    arch: Architecture,
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Float> ParameterRegistry<T> {
    pub fn new(arch: Architecture) -> Self {
        ParameterRegistry { arch, entries: Vec::new(), index: HashMap::new() }
    }

    pub fn push(
        &mut self,
        name: impl Into<String>,
        submodule: Submodule,
        prunable: bool,
        tensor: Tensor<T>,
    ) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, submodule, prunable, tensor });
        Ok(())
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry<T>> {
        self.entries.iter()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.position(name).map(|i| &self.entries[i])
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name).map(|e| &e.tensor).ok_or_else(|| Error::Architecture(format!("missing parameter {name}")))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let i = self.position(name)?;
        Some(&mut self.entries[i].tensor)
    }

    pub fn count(&self, submodule: Submodule) -> usize {
        self.entries.iter().filter(|e| e.submodule == submodule).count()
    }

    /// Total number of prunable scalars.
    pub fn prunable_len(&self) -> usize {
        self.entries.iter().filter(|e| e.prunable).map(|e| e.tensor.len()).sum()
    }

    /// Registry restricted to one submodule.
    pub fn subset(&self, submodule: Submodule) -> Self {
        let mut out = ParameterRegistry::new(self.arch.clone());
        for e in self.entries.iter().filter(|e| e.submodule == submodule) {
            out.push(e.name.clone(), e.submodule, e.prunable, e.tensor.clone()).expect("names already unique");
        }
        out
    }

    /// Overwrites every entry of `self` that `other` also contains.
    pub fn overwrite_from(&mut self, other: &ParameterRegistry<T>) -> Result<usize> {
        let mut n = 0;
        for e in other.iter() {
            if let Some(t) = self.tensor_mut(&e.name) {
                if t.shape() != e.tensor.shape() {
                    return Err(Error::Architecture(format!(
                        "{}: shape {:?} vs {:?}",
                        e.name,
                        t.shape(),
                        e.tensor.shape()
                    )));
                }
                *t = e.tensor.clone();
                n += 1;
            }
        }
        Ok(n)
    }

    /// Checks that `other` has the same names, order and shapes.
    pub fn check_same_layout<U: Float>(&self, other: &ParameterRegistry<U>) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Architecture(format!("{} parameters vs {}", self.entries.len(), other.entries.len())));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::Architecture(format!(
                    "{} {:?} vs {} {:?}",
                    a.name,
                    a.tensor.shape(),
                    b.name,
                    b.tensor.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Float>(&self) -> ParameterRegistry<U> {
        let mut out = ParameterRegistry::new(self.arch.clone());
        for e in &self.entries {
            out.push(e.name.clone(), e.submodule, e.prunable, e.tensor.cast()).expect("names already unique");
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.is_finite())
    }
}
