//! Flat parameter storage with a named-tensor directory.

use std::collections::HashMap;
use std::ops::Range;

/// One named tensor inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

impl ParamEntry {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor and returns its range. Panics on duplicate names.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> Range<usize> {
        let name = name.into();
        let len = shape.iter().product();
        let prev = self.index.insert(name.clone(), self.entries.len());
        assert!(prev.is_none(), "duplicate parameter name {name}");
        self.entries.push(ParamEntry {
            name,
            shape: shape.to_vec(),
            offset: self.total,
            len,
        });
        let r = self.total..self.total + len;
        self.total += len;
        r
    }

    /// Appends a group of tensors and returns the range spanning all of them.
    pub fn push_group(&mut self, tensors: Vec<(String, Vec<usize>)>) -> Range<usize> {
        let start = self.total;
        for (name, shape) in tensors {
            self.push(name, &shape);
        }
        start..self.total
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    /// Per-element flag: true where the owning tensor satisfies `pred`.
    pub fn element_mask(&self, pred: impl Fn(&str) -> bool) -> Vec<bool> {
        let mut mask = vec![false; self.total];
        for e in &self.entries {
            if pred(&e.name) {
                mask[e.range()].iter_mut().for_each(|m| *m = true);
            }
        }
        mask
    }
}
