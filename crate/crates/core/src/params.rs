//! Named parameter storage and its binary blob format.
//!
//! Blob layout (all integers and floats little-endian):
//!
//! ```text
//! magic    8 bytes  "GPNNPARM"
//! version  u32      PARAMS_VERSION
//! count    u32      number of entries
//! entry*   name: u32 length + utf-8 bytes
//!          rank: u32, dims: rank x u64
//!          data: prod(dims) x f64
//! ```

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PARAMS_MAGIC: &[u8; 8] = b"GPNNPARM";
pub const PARAMS_VERSION: u32 = 1;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Registers a `shape` tensor drawn uniformly from `±1/sqrt(fan_in)`.
    pub fn register_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.register(name, Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.values.iter().map(|v| tape.param(v.clone())).collect(),
        }
    }

    /// Copies values from `other`, requiring identical names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let j = other
                .id(name)
                .ok_or_else(|| Error::Malformed(format!("checkpoint lacks parameter {name}")))?;
            let src = other.get(j);
            if src.shape() != self.values[i].shape() {
                return Err(Error::shape(
                    "checkpoint",
                    self.values[i].shape(),
                    src.shape(),
                ));
            }
            self.values[i] = src.clone();
        }
        if other.len() != self.len() {
            return Err(Error::Malformed(format!(
                "checkpoint has {} parameters, model has {}",
                other.len(),
                self.len()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(PARAMS_MAGIC);
        w.u32(PARAMS_VERSION);
        w.u32(self.values.len() as u32);
        for (name, value) in self.iter() {
            w.str(name);
            w.u32(value.rank() as u32);
            for &d in value.shape() {
                w.u64(d as u64);
            }
            w.f64s(value.data());
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(PARAMS_MAGIC)?;
        let version = r.u32()?;
        if version != PARAMS_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: PARAMS_VERSION,
            });
        }
        let count = r.u32()?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name = r.str()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().product();
            let data = r.f64s(numel)?;
            store.register(name, Tensor::new(shape, data)?);
        }
        if !r.finished() {
            return Err(Error::Malformed("trailing bytes after checkpoint".into()));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ParamStore::from_bytes(&fs::read(path)?)
    }
}

/// Tape variables for every parameter of a store, in registration order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients after `tape.backward`, aligned with the store.
    pub fn grads(&self, tape: &Tape) -> Result<Vec<Tensor>> {
        self.vars.iter().map(|&v| tape.grad(v).cloned()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ParamStore {
        let mut s = ParamStore::new();
        s.register(
            "link.0.weight",
            Tensor::new(
                vec![2, 3],
                vec![1.5, -0.0, f64::MIN_POSITIVE, 3.0, 4.0, 1e300],
            )
            .unwrap(),
        );
        s.register("gru.bz", Tensor::vector(vec![0.25]));
        s
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = sample().to_bytes();
        bytes[9] = 7;
        match ParamStore::from_bytes(&bytes) {
            Err(Error::VersionMismatch { found, expected }) => {
                assert_eq!(expected, PARAMS_VERSION);
                assert_ne!(found, expected);
            }
            other => panic!("unexpected {other:?}"),
        }
        bytes[0] = b'X';
        assert!(matches!(
            ParamStore::from_bytes(&bytes),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn truncation_is_reported() {
        let bytes = sample().to_bytes();
        for cut in [3, 12, bytes.len() - 1] {
            assert!(matches!(
                ParamStore::from_bytes(&bytes[..cut]),
                Err(Error::Truncated { .. })
            ));
        }
    }

    #[test]
    fn load_from_checks_shapes() {
        let mut a = sample();
        let mut b = ParamStore::new();
        b.register("link.0.weight", Tensor::zeros(&[3, 2]));
        b.register("gru.bz", Tensor::zeros(&[1]));
        assert!(a.load_from(&b).is_err());
    }

    proptest! {
        #[test]
        fn checkpoint_round_trip_is_bit_exact(bits in proptest::collection::vec(any::<u64>(), 1..40)) {
            let data: Vec<f64> = bits.iter().map(|&b| f64::from_bits(b)).collect();
            let mut s = ParamStore::new();
            s.register("w", Tensor::vector(data.clone()));
            let back = ParamStore::from_bytes(&s.to_bytes()).unwrap();
            let got: Vec<u64> = back.get(back.id("w").unwrap()).data().iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(got, bits);
        }
    }
}
