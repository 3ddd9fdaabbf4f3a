use std::ops::Range;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl ParamEntry {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Flat parameter storage with named, contiguous slots.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    values: Vec<f64>,
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Allocates `len` values drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn alloc_uniform(&mut self, name: &str, len: usize, fan_in: usize, rng: &mut Rng) -> usize {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let offset = self.values.len();
        self.values
            .extend((0..len).map(|_| rng.gen_range(-bound..=bound)));
        self.entries.push(ParamEntry {
            name: name.to_string(),
            offset,
            len,
        });
        offset
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.entry(name).map(|e| &self.values[e.range()])
    }

    /// Ranges of every slot whose name starts with `prefix`.
    pub fn ranges_with_prefix(&self, prefix: &str) -> Vec<Range<usize>> {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(ParamEntry::range)
            .collect()
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }

    /// Replaces the values with `other`'s, requiring an identical slot layout.
    pub fn load_from(&mut self, other: &ParamSet) -> Result<(), String> {
        if self.entries != other.entries {
            return Err("parameter layout differs".into());
        }
        self.values.copy_from_slice(&other.values);
        Ok(())
    }
}
