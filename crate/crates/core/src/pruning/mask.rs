use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::models::{ParameterRegistry, Submodule};
use crate::numerics::{Float, Tensor};

/// Set of submodules a pruning step may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Scope {
    pub encoder: bool,
    pub transform: bool,
    pub decoder: bool,
}

impl Scope {
    /// Everything prunable, transform included.
    pub const PT: Scope = Scope { encoder: true, transform: true, decoder: true };
    /// Autoencoder only; the transform keeps all its weights.
    pub const NOPT: Scope = Scope { encoder: true, transform: false, decoder: true };

    pub fn only(submodule: Submodule) -> Scope {
        Scope {
            encoder: submodule == Submodule::Encoder,
            transform: submodule == Submodule::Transform,
            decoder: submodule == Submodule::Decoder,
        }
    }

    pub fn contains(&self, submodule: Submodule) -> bool {
        match submodule {
            Submodule::Encoder => self.encoder,
            Submodule::Transform => self.transform,
            Submodule::Decoder => self.decoder,
        }
    }

    pub fn label(&self) -> &'static str {
        match (self.encoder, self.transform, self.decoder) {
            (true, true, true) => "pt",
            (true, false, true) => "nopt",
            _ => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskEntry {
    pub name: String,
    pub submodule: Submodule,
    pub shape: Vec<usize>,
    /// `true` keeps the weight.
    pub keep: Vec<bool>,
}

impl MaskEntry {
    pub fn survivors(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }
}

/// Binary keep/prune field over every prunable tensor of a registry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruningMask {
    entries: Vec<MaskEntry>,
    index: HashMap<String, usize>,
    pub round: u32,
    pub strategy: String,
    pub seed: u64,
}

impl PruningMask {
    pub fn from_entries(entries: Vec<MaskEntry>, round: u32, strategy: impl Into<String>, seed: u64) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            if e.keep.len() != e.shape.iter().product::<usize>() {
                return Err(Error::shape("mask", format!("{}: {} bits for shape {:?}", e.name, e.keep.len(), e.shape)));
            }
            if index.insert(e.name.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate mask entry {}", e.name)));
            }
        }
        Ok(PruningMask { entries, index, round, strategy: strategy.into(), seed })
    }

    /// Dense mask keeping everything.
    pub fn ones<T: Float>(params: &ParameterRegistry<T>) -> Self {
        let entries = params
            .iter()
            .filter(|e| e.prunable)
            .map(|e| MaskEntry {
                name: e.name.clone(),
                submodule: e.submodule,
                shape: e.tensor.shape().to_vec(),
                keep: vec![true; e.tensor.len()],
            })
            .collect();
        PruningMask::from_entries(entries, 0, "dense", 0).expect("registry names are unique")
    }

    pub fn entries(&self) -> &[MaskEntry] {
        &self.entries
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [MaskEntry] {
        &mut self.entries
    }

    pub fn get(&self, name: &str) -> Option<&MaskEntry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn total(&self) -> usize {
        self.entries.iter().map(|e| e.keep.len()).sum()
    }

    pub fn survivors(&self) -> usize {
        self.entries.iter().map(MaskEntry::survivors).sum()
    }

    pub fn scope_total(&self, scope: Scope) -> usize {
        self.entries.iter().filter(|e| scope.contains(e.submodule)).map(|e| e.keep.len()).sum()
    }

    pub fn scope_survivors(&self, scope: Scope) -> usize {
        self.entries.iter().filter(|e| scope.contains(e.submodule)).map(MaskEntry::survivors).sum()
    }

    /// Fraction of prunable weights removed, in `[0, 1]`.
    pub fn sparsity(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        1.0 - self.survivors() as f64 / total as f64
    }

    /// True when every weight kept here is also kept by `outer`.
    pub fn is_nested_in(&self, outer: &PruningMask) -> bool {
        self.entries.iter().all(|e| {
            outer
                .get(&e.name)
                .is_some_and(|o| o.keep.len() == e.keep.len() && e.keep.iter().zip(&o.keep).all(|(&a, &b)| !a || b))
        })
    }

    /// Errors unless the mask covers exactly the registry's prunable tensors.
    pub fn check_compatible<T: Float>(&self, params: &ParameterRegistry<T>) -> Result<()> {
        let prunable: Vec<_> = params.iter().filter(|e| e.prunable).collect();
        if prunable.len() != self.entries.len() {
            return Err(Error::Architecture(format!(
                "mask has {} tensors, registry has {} prunable",
                self.entries.len(),
                prunable.len()
            )));
        }
        for p in prunable {
            match self.get(&p.name) {
                Some(m) if m.shape == p.tensor.shape() => {}
                Some(m) => {
                    return Err(Error::Architecture(format!(
                        "mask {} has shape {:?}, parameter has {:?}",
                        p.name,
                        m.shape,
                        p.tensor.shape()
                    )))
                }
                None => return Err(Error::Architecture(format!("mask is missing {}", p.name))),
            }
        }
        Ok(())
    }

    /// 0/1 tensor for one entry, for multiplying on the tape.
    pub fn tensor<T: Float>(&self, name: &str) -> Option<Tensor<T>> {
        let e = self.get(name)?;
        let data = e.keep.iter().map(|&k| if k { T::one() } else { T::zero() }).collect();
        Some(Tensor::new(e.shape.clone(), data).expect("bits match shape"))
    }

    pub fn is_all_ones(&self) -> bool {
        self.entries.iter().all(|e| e.keep.iter().all(|&k| k))
    }

    pub fn with_meta(mut self, round: u32, strategy: impl Into<String>, seed: u64) -> Self {
        self.round = round;
        self.strategy = strategy.into();
        self.seed = seed;
        self
    }
}

impl fmt::Display for PruningMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} round {} ({:.1}% sparse, {}/{} kept)",
            self.strategy,
            self.round,
            100.0 * self.sparsity(),
            self.survivors(),
            self.total()
        )
    }
}
