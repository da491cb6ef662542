//! Binary checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "TMCK" | version u32 | meta_len u32 | meta (JSON object, UTF-8)
//! tensor_count u32
//! per tensor: name_len u32 | name | ndim u32 | dims u64 * ndim | data f64 * prod(dims)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{layout, Parameters};
use crate::error::{Error, Result};
use crate::tetgrid::ByteCursor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"TMCK";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        self.tensors.push(Tensor { name: name.into(), shape, data });
    }

    pub fn push_params<P: Parameters + ?Sized>(&mut self, prefix: &str, params: &P) {
        let segs = layout(params);
        let flat = super::flatten(params);
        for s in segs {
            let name = if prefix.is_empty() { s.name.clone() } else { format!("{prefix}.{}", s.name) };
            self.push(name, s.shape, flat[s.offset..s.offset + s.len].to_vec());
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::format(format!("checkpoint lacks tensor '{name}'")))
    }

    /// Fills `params` from tensors named `prefix.<param>`.
    pub fn load_params<P: Parameters + ?Sized>(&self, prefix: &str, params: &mut P) -> Result<()> {
        let mut missing = None;
        params.visit_mut("", &mut |name, data| {
            let name = name.trim_start_matches('.');
            let full = if prefix.is_empty() { name.to_string() } else { format!("{prefix}.{name}") };
            match self.get(&full) {
                Some(t) if t.data.len() == data.len() => data.copy_from_slice(&t.data),
                _ => {
                    missing.get_or_insert(full);
                }
            }
        });
        match missing {
            Some(name) => Err(Error::format(format!("checkpoint tensor '{name}' missing or mis-sized"))),
            None => Ok(()),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta)?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            let expected: usize = t.shape.iter().product();
            if expected != t.data.len() {
                return Err(Error::invalid(format!("tensor '{}' shape does not match data", t.name)));
            }
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor::new(bytes);
        if cur.take(4)? != MAGIC {
            return Err(Error::format("not a checkpoint (bad magic)"));
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = cur.u32()? as usize;
        let meta: BTreeMap<String, String> = serde_json::from_slice(cur.take(meta_len)?)?;
        let count = cur.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| Error::format("tensor name is not UTF-8"))?;
            let ndim = cur.u32()? as usize;
            let shape = (0..ndim).map(|_| cur.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push(Tensor { name, shape, data });
        }
        if !cur.is_empty() {
            return Err(Error::format("trailing bytes after checkpoint"));
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(data in proptest::collection::vec(proptest::num::f64::ANY, 0..40), key in "[a-z]{1,8}") {
            let mut ck = Checkpoint::default();
            ck.meta.insert(key.clone(), "v".into());
            ck.push(format!("{key}.w"), vec![data.len()], data.clone());
            ck.push("scalar", vec![], vec![1.5]);
            let bytes = ck.to_bytes().unwrap();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
            let got = &back.get(&format!("{key}.w")).unwrap().data;
            prop_assert!(got.iter().zip(&data).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let mut ck = Checkpoint::default();
        ck.push("a", vec![2], vec![1.0, 2.0]);
        let mut bytes = ck.to_bytes().unwrap();
        bytes.pop();
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
        assert!(Checkpoint::from_bytes(b"nope").is_err());
    }
}
