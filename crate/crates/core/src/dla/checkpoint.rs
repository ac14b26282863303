//! Binary checkpoint container. All integers little-endian.
//!
//! ```text
//! magic      8 bytes  "DLACKPT1"
//! version    u32      1
//! config     u32 length + UTF-8 TOML of the run config
//! khat       f64
//! count      u32      number of parameter blobs
//! blob       u32 name length, name bytes, u32 rank, u64 per dim,
//!            f32 per element (row-major)
//! end        4 bytes  "END!"
//! checksum   u32      CRC-32 of every preceding byte
//! ```

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::KHAT;
use crate::error::{Error, Result};
use crate::tensor::{ParameterSet, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DLACKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;
const END: &[u8; 4] = b"END!";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config_toml: String,
    pub khat: f64,
    pub params: ParameterSet<f32>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        String::from_utf8(self.take(len, what)?.to_vec()).map_err(|_| corrupt(format!("{what} is not UTF-8")))
    }
}

impl Checkpoint {
    /// Stores `config` as TOML next to the parameters.
    pub fn new<S: Serialize>(config: &S, params: ParameterSet<f32>) -> Result<Self> {
        let config_toml =
            toml::to_string(config).map_err(|e| Error::invalid(format!("cannot serialize config: {e}")))?;
        let khat = params.value(KHAT)?.item() as f64;
        Ok(Checkpoint {
            config_toml,
            khat,
            params,
        })
    }

    pub fn config<D: DeserializeOwned>(&self) -> Result<D> {
        toml::from_str(&self.config_toml).map_err(|e| corrupt(format!("embedded config does not parse: {e}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config_toml.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_toml.as_bytes());
        out.extend_from_slice(&self.khat.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, p) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(p.value.ndim() as u32).to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(END);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        if bytes.len() < 8 + 4 + END.len() + 4 {
            return Err(corrupt("file too short"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { bytes: body, pos: 8 };
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let config_toml = r.string("config")?;
        let khat = f64::from_le_bytes(r.take(8, "khat")?.try_into().unwrap());
        let count = r.u32("parameter count")?;
        let mut params = ParameterSet::new();
        for _ in 0..count {
            let name = r.string("parameter name")?;
            let rank = r.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64("dimension")? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| corrupt(format!("`{name}` shape overflows")))?;
            let raw = r.take(numel.checked_mul(4).ok_or_else(|| corrupt("blob too large"))?, &name)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params
                .insert(name.clone(), Tensor::new(shape, data)?)
                .map_err(|_| corrupt(format!("duplicate parameter `{name}`")))?;
        }
        if r.take(4, "end marker")? != END || r.pos != body.len() {
            return Err(corrupt("missing end marker"));
        }
        Ok(Checkpoint {
            config_toml,
            khat,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dla::{build_model, ModelSpec, TrainConfig};

    #[derive(Debug, PartialEq, serde::Serialize, serde::Deserialize)]
    struct Echo {
        train: TrainConfig,
        model: ModelSpec,
    }

    fn sample() -> Checkpoint {
        let echo = Echo {
            train: TrainConfig::default(),
            model: ModelSpec::toy(8, 6),
        };
        let params = build_model(&echo.model, 5).unwrap();
        Checkpoint::new(&echo, params).unwrap()
    }

    #[test]
    fn round_trip() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.config_toml, ck.config_toml);
        assert_eq!(back.khat, ck.khat);
        for ((a, x), (b, y)) in ck.params.iter().zip(back.params.iter()) {
            assert_eq!(a, b);
            assert_eq!(x.value, y.value);
        }
        assert_eq!(back.config::<Echo>().unwrap().model, ModelSpec::toy(8, 6));
    }

    #[test]
    fn corruption_detected() {
        let bytes = sample().to_bytes();
        for cut in [0, 5, 20, bytes.len() / 2, bytes.len() - 1] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(err.to_string().contains("corrupt checkpoint"), "{err}");
        }
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(Checkpoint::from_bytes(&flipped).is_err());
    }
}
