//! Named trainable parameters and their on-disk checkpoint format.
//!
//! Checkpoints are a flat binary stream: the magic string `AFGEO1`, then for
//! every parameter (in registration order) a little-endian u64 name length,
//! the UTF-8 name, a u64 rank, one u64 per extent, and the elements as
//! little-endian f32 values.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const MAGIC: &[u8; 6] = b"AFGEO1";

/// Ordered registry of uniquely named parameter tensors.
#[derive(Default)]
pub struct ParamSet<T: Scalar> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    /// Register a gradient-tracking tensor under `name` and get back a handle.
    pub fn register(&mut self, name: &str, tensor: Tensor<T>) -> Result<Tensor<T>> {
        if self.entries.iter().any(|(n, _)| n == name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        if !tensor.requires_grad() {
            return Err(Error::Config(format!(
                "parameter {name:?} must track gradients"
            )));
        }
        self.entries.push((name.to_string(), tensor.clone()));
        Ok(tensor)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Element count per parameter name.
    pub fn census(&self) -> BTreeMap<String, usize> {
        self.entries
            .iter()
            .map(|(n, t)| (n.clone(), t.numel()))
            .collect()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for (_, t) in &self.entries {
            t.zero_grad();
        }
    }

    /// FNV-1a hash over names, shapes, and element bit patterns. Two sets
    /// fingerprint equal iff they hold the same values under the same names.
    pub fn fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                hash ^= u64::from(b);
                hash = hash.wrapping_mul(0x100000001b3);
            }
        };
        for (name, tensor) in &self.entries {
            eat(name.as_bytes());
            for &extent in tensor.shape() {
                eat(&(extent as u64).to_le_bytes());
            }
            for &v in tensor.data().iter() {
                eat(&v.to_f64().to_bits().to_le_bytes());
            }
        }
        hash
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| Error::io(path, e));
        write(MAGIC)?;
        for (name, tensor) in &self.entries {
            write(&(name.len() as u64).to_le_bytes())?;
            write(name.as_bytes())?;
            write(&(tensor.rank() as u64).to_le_bytes())?;
            for &extent in tensor.shape() {
                write(&(extent as u64).to_le_bytes())?;
            }
            for &v in tensor.data().iter() {
                write(&(v.to_f64() as f32).to_le_bytes())?;
            }
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Load a checkpoint written by [`ParamSet::save`] into the registered
    /// tensors. The file must describe exactly this set, in order.
    pub fn load(&self, path: &Path) -> Result<()> {
        let bad = |reason: String| Error::Checkpoint {
            path: path.display().to_string(),
            reason,
        };
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut input = BufReader::new(file);

        let mut magic = [0u8; 6];
        input
            .read_exact(&mut magic)
            .map_err(|_| bad("file too short for magic".into()))?;
        if &magic != MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }

        let read_u64 = |input: &mut BufReader<File>, what: &str| -> Result<u64> {
            let mut buf = [0u8; 8];
            input
                .read_exact(&mut buf)
                .map_err(|_| bad(format!("truncated while reading {what}")))?;
            Ok(u64::from_le_bytes(buf))
        };

        for (name, tensor) in &self.entries {
            let name_len = read_u64(&mut input, "name length")? as usize;
            let mut name_buf = vec![0u8; name_len];
            input
                .read_exact(&mut name_buf)
                .map_err(|_| bad(format!("truncated name for {name:?}")))?;
            let found = String::from_utf8(name_buf)
                .map_err(|_| bad(format!("non-UTF-8 name where {name:?} expected")))?;
            if &found != name {
                return Err(bad(format!(
                    "parameter name mismatch: expected {name:?}, found {found:?}"
                )));
            }
            let rank = read_u64(&mut input, "rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut input, "extent")? as usize);
            }
            if shape != tensor.shape() {
                return Err(bad(format!(
                    "shape mismatch for {name:?}: expected {:?}, found {shape:?}",
                    tensor.shape()
                )));
            }
            let mut data = Vec::with_capacity(tensor.numel());
            for _ in 0..tensor.numel() {
                let mut buf = [0u8; 4];
                input
                    .read_exact(&mut buf)
                    .map_err(|_| bad(format!("truncated data for {name:?}")))?;
                data.push(T::from_f64(f64::from(f32::from_le_bytes(buf))));
            }
            tensor.set_data(&data)?;
        }

        let mut rest = [0u8; 1];
        match input.read(&mut rest) {
            Ok(0) => Ok(()),
            Ok(_) => Err(bad("trailing data after last parameter".into())),
            Err(e) => Err(Error::io(path, e)),
        }
    }
}
