//! Little-endian binary checkpoints.
//!
//! Layout: `BFAN`, version `u32`, model-config hash `u64`, run config text
//! (`u32` length + UTF-8), completed epochs `u64`, shuffle RNG (32-byte seed,
//! stream `u64`, word position `u128`), then a `u32`-counted list of
//! parameter records and a `u32`-counted list of velocity records. A record
//! is a `u32`-length name, `u32` rank, `u32` dims and the `f64` payload.

use std::path::Path;

use bfanet_core::training::RngState;
use bfanet_core::{Bfanet, ModelConfig, Tensor, Trainer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::runconfig::RunConfig;

pub const MAGIC: &[u8; 4] = b"BFAN";
pub const VERSION: u32 = 1;

/// First eight bytes of the SHA-256 of the canonical model config.
pub fn config_hash(cfg: &ModelConfig) -> u64 {
    let digest = Sha256::digest(cfg.canonical().as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub epoch: u64,
    pub rng: RngState,
    pub params: Vec<(String, Tensor)>,
    pub velocity: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer, config: &RunConfig) -> Self {
        let store = trainer.model.params();
        let names = store.names();
        Checkpoint {
            config: config.clone(),
            epoch: trainer.epochs_done() as u64,
            rng: trainer.rng_state(),
            params: names.iter().cloned().zip(store.tensors().iter().cloned()).collect(),
            velocity: names
                .iter()
                .cloned()
                .zip(trainer.optim.velocity().iter().cloned())
                .collect(),
        }
    }

    pub fn model(&self) -> Result<Bfanet> {
        let mut model = Bfanet::new(self.config.model.clone())?;
        model.params_mut().load(&self.params)?;
        Ok(model)
    }

    /// Trainer positioned where this checkpoint was written.
    pub fn trainer(&self) -> Result<Trainer> {
        let mut t = Trainer::new(self.model()?, self.config.train)?;
        let velocity = self.velocity.iter().map(|(_, v)| v.clone()).collect();
        t.restore(self.epoch as usize, self.rng, velocity)?;
        Ok(t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&config_hash(&self.config.model).to_le_bytes());
        let text = self.config.to_text();
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        for list in [&self.params, &self.velocity] {
            out.extend_from_slice(&(list.len() as u32).to_le_bytes());
            for (name, t) in list {
                out.extend_from_slice(&(name.len() as u32).to_le_bytes());
                out.extend_from_slice(name.as_bytes());
                out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u32).to_le_bytes());
                }
                for &v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Decode {
                offset: 0,
                msg: "bad checkpoint magic".into(),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.err(4, format!("unsupported checkpoint version {version}")));
        }
        let hash = r.u64()?;
        let text_at = r.pos;
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| r.err(text_at, "config text is not UTF-8"))?;
        let config = RunConfig::parse(text).map_err(|e| r.err(text_at, format!("embedded config: {e}")))?;
        if config_hash(&config.model) != hash {
            return Err(Error::contract(
                "trainer",
                format!("checkpoint hash {hash:016x} does not match its embedded config"),
            ));
        }
        let epoch = r.u64()?;
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let params = r.records()?;
        let velocity = r.records()?;
        if r.pos != bytes.len() {
            return Err(r.err(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            config,
            epoch,
            rng: RngState { seed, stream, word_pos },
            params,
            velocity,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| e.in_file(path))
    }

    /// Refuses a checkpoint whose model config differs from `expected`.
    pub fn check_matches(&self, expected: &ModelConfig) -> Result<()> {
        let (have, want) = (config_hash(&self.config.model), config_hash(expected));
        if have != want {
            return Err(Error::contract(
                "trainer",
                format!(
                    "checkpoint config hash {have:016x} ({}) does not match requested {want:016x} ({})",
                    self.config.model.canonical(),
                    expected.canonical()
                ),
            ));
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::Decode {
            offset,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(e) => {
                let s = &self.bytes[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(self.err(self.bytes.len(), format!("truncated: needed {n} bytes at {}", self.pos))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn records(&mut self) -> Result<Vec<(String, Tensor)>> {
        let count = self.u32()? as usize;
        let mut out = Vec::new();
        for _ in 0..count {
            let at = self.pos;
            let len = self.u32()? as usize;
            let name = std::str::from_utf8(self.take(len)?)
                .map_err(|_| self.err(at, "record name is not UTF-8"))?
                .to_string();
            let rank = self.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(self.u32()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| self.err(at, "shape overflow"))?;
            let raw = self.take(n.checked_mul(8).ok_or_else(|| self.err(at, "shape overflow"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| self.err(at, format!("record {name}: {e}")))?;
            out.push((name, t));
        }
        Ok(out)
    }
}
