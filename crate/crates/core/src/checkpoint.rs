//! Flat binary parameter container.
//!
//! Layout: an 8-byte little-endian header length, a JSON header naming every
//! tensor with its shape, byte offset (from the end of the header), byte count
//! and precision, then the raw little-endian element data.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Element, ParamStore, Precision, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub nbytes: usize,
    pub precision: Precision,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    /// Free-form description of how to rebuild the module that owns the tensors.
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub fn save<T: Element>(path: &Path, store: &ParamStore<T>, meta: serde_json::Value) -> Result<()> {
    let mut data = Vec::new();
    let mut tensors = Vec::with_capacity(store.len());
    for (_, p) in store.iter() {
        let offset = data.len();
        for &v in p.value.data() {
            v.write_le(&mut data);
        }
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset,
            nbytes: data.len() - offset,
            precision: T::PRECISION,
            trainable: p.trainable,
        });
    }
    let header = serde_json::to_vec(&Header { meta, tensors })?;
    let mut out = Vec::with_capacity(8 + header.len() + data.len());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&data);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// A loaded container: header plus raw tensor bytes.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: Header,
    data: Vec<u8>,
}

impl Checkpoint {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 8 {
            return Err(Error::format(path, "missing header length"));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        if bytes.len() < 8 + hlen {
            return Err(Error::format(path, "truncated header"));
        }
        let header: Header = serde_json::from_slice(&bytes[8..8 + hlen])?;
        let data = bytes[8 + hlen..].to_vec();
        for t in &header.tensors {
            let want = t.shape.iter().product::<usize>() * t.precision.byte_width();
            if t.nbytes != want || t.offset + t.nbytes > data.len() {
                return Err(Error::format(path, format!("bad extent for tensor {}", t.name)));
            }
        }
        Ok(Self { header, data })
    }

    pub fn tensor<T: Element>(&self, name: &str) -> Option<Tensor<T>> {
        let e = self.header.tensors.iter().find(|t| t.name == name)?;
        let raw = &self.data[e.offset..e.offset + e.nbytes];
        let w = e.precision.byte_width();
        let values: Vec<T> = match e.precision {
            Precision::F32 => raw
                .chunks_exact(w)
                .map(|c| T::from_f64(f32::read_le(c) as f64))
                .collect(),
            Precision::F64 => raw.chunks_exact(w).map(|c| T::from_f64(f64::read_le(c))).collect(),
        };
        Tensor::new(e.shape.clone(), values).ok()
    }

    /// Overwrites every record of `store` by name; every record must be present
    /// with a matching shape. Trainable flags are restored too.
    pub fn load_into<T: Element>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.get(id).name.clone();
            let entry = self
                .header
                .tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks tensor {name}")))?;
            let t = self.tensor::<T>(&name).expect("validated on read");
            if t.shape() != store.value(id).shape() {
                return Err(Error::shape(
                    "checkpoint",
                    format!("{name}: stored {:?}, model {:?}", t.shape(), store.value(id).shape()),
                ));
            }
            *store.value_mut(id) = t;
            store.set_trainable(id, entry.trainable);
        }
        Ok(())
    }
}
