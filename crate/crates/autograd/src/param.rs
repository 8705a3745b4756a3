use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{AutogradError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Trainable weights receive gradients; buffers (batch-norm running statistics)
/// are state that is only ever overwritten.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Buffer,
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    value: Rc<Tensor>,
}

impl ParamEntry {
    pub fn value(&self) -> &Tensor {
        &self.value
    }
}

/// Named parameter storage shared by every component of a model.
///
/// Values are reference counted so a forward pass can bind them into a tape
/// without copying; once the tape is dropped the optimizer mutates them in place.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name `{name}`"
        );
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            kind,
            value: Rc::new(value),
        });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub(crate) fn shared(&self, id: ParamId) -> Rc<Tensor> {
        Rc::clone(&self.entries[id.0].value)
    }

    /// Mutable access; clones the tensor only if a tape still holds it.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Rc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(AutogradError::Shape(format!(
                "parameter `{}` has shape {:?}, got {:?}",
                entry.name,
                entry.value.shape(),
                value.shape()
            )));
        }
        entry.value = Rc::new(value);
        Ok(())
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name)
            .ok_or_else(|| AutogradError::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    /// Ids of all entries whose name starts with `prefix`.
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, e)| e.name.starts_with(prefix))
            .map(|(id, _)| id)
            .collect()
    }

    /// Number of trainable scalars under `prefix`.
    pub fn count_weights(&self, prefix: &str) -> usize {
        self.iter()
            .filter(|(_, e)| e.kind == ParamKind::Weight && e.name.starts_with(prefix))
            .map(|(_, e)| e.value.len())
            .sum()
    }

    /// FNV-1a over names and the exact bit patterns of every value under `prefix`.
    pub fn checksum(&self, prefix: &str) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (_, e) in self.iter().filter(|(_, e)| e.name.starts_with(prefix)) {
            eat(e.name.as_bytes());
            for v in e.value.data() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_only_weights_under_prefix() {
        let mut s = ParamStore::new();
        s.add("a.w", ParamKind::Weight, Tensor::zeros(&[3, 4]));
        s.add("a.rm", ParamKind::Buffer, Tensor::zeros(&[4]));
        s.add("b.w", ParamKind::Weight, Tensor::zeros(&[5]));
        assert_eq!(s.count_weights("a."), 12);
        assert_eq!(s.count_weights(""), 17);
    }

    #[test]
    fn checksum_tracks_values() {
        let mut s = ParamStore::new();
        let id = s.add("w", ParamKind::Weight, Tensor::zeros(&[2]));
        let before = s.checksum("");
        s.get_mut(id).data_mut()[1] = 1.0;
        assert_ne!(before, s.checksum(""));
    }
}
