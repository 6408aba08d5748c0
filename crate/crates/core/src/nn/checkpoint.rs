//! Binary checkpoint container for the initializer and velocity models.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "AMODALLS"
//! version      u32
//! header_len   u32
//! header       header_len bytes of UTF-8 JSON (architectures, configs, metadata)
//! section*     2 sections, "INIT" then "VELO"
//!   tag        4 bytes
//!   count      u32      number of tensors
//!   tensor*    name_len u32, name bytes, ndim u32, dims u64 * ndim,
//!              values f64 * prod(dims)
//! digest       32 bytes SHA-256 of everything above
//! ```
//!
//! Tensors appear in registration order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evolution::EvolutionConfig;
use crate::nn::params::Params;
use crate::nn::tensor::Tensor;
use crate::nn::unet::ConvNetSpec;
use crate::nn::velocity::VelocityModel;
use crate::prompt::{InitConfig, InitializerModel};

pub const MAGIC: &[u8; 8] = b"AMODALLS";
pub const VERSION: u32 = 1;
const INIT_TAG: &[u8; 4] = b"INIT";
const VELO_TAG: &[u8; 4] = b"VELO";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    initializer: ConvNetSpec,
    velocity: ConvNetSpec,
    phi_scale: f64,
    init: InitConfig,
    evolution: EvolutionConfig,
    #[serde(default)]
    metadata: serde_json::Value,
}

/// Everything needed to run the pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub initializer: InitializerModel,
    pub velocity: VelocityModel,
    pub init: InitConfig,
    pub evolution: EvolutionConfig,
    /// Free-form provenance (training config, loss history summary).
    pub metadata: serde_json::Value,
}

fn write_section(out: &mut Vec<u8>, tag: &[u8; 4], params: &Params) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn section(&mut self, tag: &[u8; 4]) -> Result<Params> {
        let got = self.take(4)?;
        if got != tag {
            return Err(Error::Checkpoint(format!(
                "expected section {:?}, found {:?}",
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(got)
            )));
        }
        let count = self.u32()?;
        let mut params = Params::default();
        for _ in 0..count {
            let len = self.u32()? as usize;
            let name = std::str::from_utf8(self.take(len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let ndim = self.u32()? as usize;
            if ndim > 8 {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has {ndim} dimensions"
                )));
            }
            let shape = (0..ndim)
                .map(|_| self.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n <= self.bytes.len() / 8)
                .ok_or_else(|| {
                    Error::Checkpoint(format!("tensor {name} has an implausible shape {shape:?}"))
                })?;
            let data = self
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect::<Vec<_>>();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} holds non-finite values"
                )));
            }
            params.push(name, Tensor::new(shape, data));
        }
        Ok(params)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            initializer: self.initializer.spec(),
            velocity: self.velocity.spec(),
            phi_scale: self.velocity.phi_scale(),
            init: self.init,
            evolution: self.evolution,
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        write_section(&mut out, INIT_TAG, self.initializer.params());
        write_section(&mut out, VELO_TAG, self.velocity.params());
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 8 + 32 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        let mut r = Reader {
            bytes: body,
            pos: 8,
        };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {version} is not supported (expected {VERSION})"
            )));
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(len)?)
            .map_err(|e| Error::Checkpoint(format!("invalid header: {e}")))?;
        let init_params = r.section(INIT_TAG)?;
        let velo_params = r.section(VELO_TAG)?;
        if r.pos != body.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                body.len() - r.pos
            )));
        }
        if !(header.phi_scale.is_finite() && header.phi_scale > 0.0) {
            return Err(Error::Checkpoint(format!(
                "invalid phi scale {}",
                header.phi_scale
            )));
        }
        Ok(Self {
            initializer: InitializerModel::from_params(header.initializer, init_params)?,
            velocity: VelocityModel::from_params(header.velocity, header.phi_scale, velo_params)?,
            init: header.init,
            evolution: header.evolution,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(reason) => Error::Load {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}
