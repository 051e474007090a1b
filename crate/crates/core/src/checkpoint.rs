//! Training checkpoints: model configuration, parameters, optimizer state
//! and the epoch counter in one file.
//!
//! ```text
//! magic      8 bytes  "GPNNCKPT"
//! version    u32      CHECKPOINT_VERSION
//! config     u32 length + utf-8 JSON of the model configuration
//! epoch      u64      completed epochs
//! step       u64      optimizer steps taken
//! moments    u8       1 when Adam moment blobs follow, else 0
//! params     u64 length + parameter blob
//! m, v       u64 length + parameter blob each, if moments = 1
//! ```

use std::fs;
use std::path::Path;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::model::{GpnnModel, ModelConfig};
use crate::params::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GPNNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// First and second moment estimates, one tensor per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: ParamStore,
    pub v: ParamStore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub epoch: usize,
    pub step: u64,
    pub moments: Option<Moments>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        let json =
            serde_json::to_string(&self.config).map_err(|e| Error::Malformed(e.to_string()))?;
        w.str(&json);
        w.u64(self.epoch as u64);
        w.u64(self.step);
        w.u8(u8::from(self.moments.is_some()));
        let mut blob = |store: &ParamStore| {
            let b = store.to_bytes();
            w.u64(b.len() as u64);
            w.bytes(&b);
        };
        blob(&self.params);
        if let Some(m) = &self.moments {
            blob(&m.m);
            blob(&m.v);
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(CHECKPOINT_MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let config: ModelConfig = serde_json::from_str(&r.str()?)
            .map_err(|e| Error::Malformed(format!("checkpoint config: {e}")))?;
        config.validate()?;
        let epoch = r.usize()?;
        let step = r.u64()?;
        let has_moments = match r.u8()? {
            0 => false,
            1 => true,
            x => return Err(Error::Malformed(format!("bad moments flag {x}"))),
        };
        let blob = |r: &mut Reader<'_>| -> Result<ParamStore> {
            let n = r.usize()?;
            ParamStore::from_bytes(r.take(n)?)
        };
        let params = blob(&mut r)?;
        let moments = if has_moments {
            Some(Moments {
                m: blob(&mut r)?,
                v: blob(&mut r)?,
            })
        } else {
            None
        };
        if !r.finished() {
            return Err(Error::Malformed("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint {
            config,
            params,
            epoch,
            step,
            moments,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }

    /// Rebuilds the model; parameter names and shapes must match the config.
    pub fn model(&self) -> Result<GpnnModel> {
        GpnnModel::from_params(self.config.clone(), &self.params)
    }
}
