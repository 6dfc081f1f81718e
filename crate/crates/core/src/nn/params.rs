use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A named, shaped region of a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlice {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamSlice {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter storage with per-layer bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub data: Vec<f64>,
    pub layout: Vec<ParamSlice>,
}

impl ParamVector {
    pub fn zeros(layout: Vec<ParamSlice>) -> Self {
        let n = layout.iter().map(|s| s.offset + s.len()).max().unwrap_or(0);
        Self {
            data: vec![0.0; n],
            layout,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn find(&self, name: &str) -> Result<&ParamSlice> {
        self.layout
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Mismatch(format!("no parameter slice named `{name}`")))
    }

    pub fn slice(&self, name: &str) -> Result<&[f64]> {
        let r = self.find(name)?.range();
        Ok(&self.data[r])
    }

    pub fn slice_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let r = self.find(name)?.range();
        Ok(&mut self.data[r])
    }

    pub fn unpack(&self) -> BTreeMap<String, Vec<f64>> {
        self.layout
            .iter()
            .map(|s| (s.name.clone(), self.data[s.range()].to_vec()))
            .collect()
    }

    pub fn pack(layout: Vec<ParamSlice>, named: &BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let mut out = Self::zeros(layout);
        for s in out.layout.clone() {
            let values = named
                .get(&s.name)
                .ok_or_else(|| Error::Mismatch(format!("missing parameter slice `{}`", s.name)))?;
            if values.len() != s.len() {
                return Err(Error::ShapeMismatch {
                    what: "parameter slice",
                    expected: s.len(),
                    got: values.len(),
                });
            }
            out.data[s.range()].copy_from_slice(values);
        }
        Ok(out)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// SHA-256 over the little-endian bytes of every parameter.
    pub fn digest(&self) -> String {
        digest_f64(&self.data)
    }
}

pub fn digest_f64(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for x in values {
        h.update(x.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Appends slices one after another.
#[derive(Debug, Default)]
pub struct LayoutBuilder {
    slices: Vec<ParamSlice>,
    next: usize,
}

impl LayoutBuilder {
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let offset = self.next;
        let s = ParamSlice {
            name: name.into(),
            offset,
            shape: shape.to_vec(),
        };
        self.next += s.len();
        self.slices.push(s);
        offset
    }

    pub fn finish(self) -> Vec<ParamSlice> {
        self.slices
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout() -> Vec<ParamSlice> {
        let mut b = LayoutBuilder::default();
        b.add("w", &[3, 2]);
        b.add("b", &[3]);
        b.add("head", &[1, 3]);
        b.finish()
    }

    proptest! {
        #[test]
        fn pack_unpack_roundtrip(values in proptest::collection::vec(-1e3f64..1e3, 12)) {
            let mut p = ParamVector::zeros(layout());
            p.data.copy_from_slice(&values);
            let back = ParamVector::pack(layout(), &p.unpack()).unwrap();
            prop_assert_eq!(back, p);
        }
    }

    #[test]
    fn pack_rejects_wrong_shapes() {
        let mut named = ParamVector::zeros(layout()).unpack();
        named.insert("b".into(), vec![0.0; 4]);
        assert!(ParamVector::pack(layout(), &named).is_err());
        named.remove("b");
        assert!(ParamVector::pack(layout(), &named).is_err());
    }
}
