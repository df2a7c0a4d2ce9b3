//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "SPGRUCKP"
//! version      u32      1
//! hidden       u32
//! frame_dim    u32
//! family       u8       0 = Gaussian, 1 = Gamma, 2 = Poisson
//! config_hash  u64      first 8 bytes of SHA-256 over the network config
//! n_arrays     u32
//! per array:
//!   name_len   u16
//!   name       UTF-8 bytes
//!   rows       u32
//!   cols       u32
//!   data       rows*cols f64
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::expfam::Family;
use crate::tensor::Tensor;

use super::config::NetworkConfig;
use super::params::{init_network, NetworkParams, DEFAULT_INIT_VARIANCE};

pub const MAGIC: &[u8; 8] = b"SPGRUCKP";
pub const VERSION: u32 = 1;

/// Stable fingerprint of a network configuration and frame size.
pub fn config_hash(cfg: &NetworkConfig, frame_dim: usize) -> u64 {
    let digest = Sha256::digest(format!("{cfg:?}/{frame_dim}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointFile {
    pub hidden: usize,
    pub frame_dim: usize,
    pub family: Family,
    pub config_hash: u64,
    pub arrays: Vec<(String, Tensor)>,
}

impl CheckpointFile {
    pub fn new(cfg: &NetworkConfig, net: &NetworkParams, extra: Vec<(String, Tensor)>) -> Self {
        let mut arrays: Vec<(String, Tensor)> =
            net.named().into_iter().map(|(n, t)| (n, t.clone())).collect();
        arrays.extend(extra);
        Self {
            hidden: net.hidden(),
            frame_dim: net.frame_dim(),
            family: Family::Gaussian,
            config_hash: config_hash(cfg, net.frame_dim()),
            arrays,
        }
    }

    pub fn array(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Rebuilds the network, refusing a checkpoint written for another config.
    pub fn network(&self, cfg: &NetworkConfig) -> Result<NetworkParams> {
        if cfg.hidden != self.hidden {
            return Err(Error::Config(format!(
                "checkpoint has hidden size {}, config asks for {}",
                self.hidden, cfg.hidden
            )));
        }
        if config_hash(cfg, self.frame_dim) != self.config_hash {
            return Err(Error::Config(
                "checkpoint was written with a different network configuration".into(),
            ));
        }
        let mut net = init_network(0, cfg, self.frame_dim, DEFAULT_INIT_VARIANCE)?;
        net.load_named(&self.arrays)?;
        Ok(net)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&dim_u32(self.hidden)?.to_le_bytes());
        out.extend_from_slice(&dim_u32(self.frame_dim)?.to_le_bytes());
        out.push(self.family.code());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out.extend_from_slice(&dim_u32(self.arrays.len())?.to_le_bytes());
        for (name, t) in &self.arrays {
            let len = u16::try_from(name.len())
                .map_err(|_| Error::Config(format!("array name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&dim_u32(t.rows())?.to_le_bytes());
            out.extend_from_slice(&dim_u32(t.cols())?.to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                detail: "not a checkpoint (bad magic)".into(),
            });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 8,
                detail: format!("unsupported checkpoint version {version}"),
            });
        }
        let hidden = r.u32("hidden")? as usize;
        let frame_dim = r.u32("frame_dim")? as usize;
        let code_at = r.pos as u64;
        let code = r.take(1, "family")?[0];
        let family = Family::from_code(code).ok_or(Error::Format {
            offset: code_at,
            detail: format!("unknown family code {code}"),
        })?;
        let config_hash = u64::from_le_bytes(r.take(8, "config hash")?.try_into().expect("8"));
        let n = r.u32("array count")? as usize;
        let mut arrays = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().expect("2")) as usize;
            let at = r.pos as u64;
            let name = String::from_utf8(r.take(len, "name")?.to_vec()).map_err(|_| Error::Format {
                offset: at,
                detail: "array name is not UTF-8".into(),
            })?;
            let rows = r.u32("rows")? as usize;
            let cols = r.u32("cols")? as usize;
            let count = rows.checked_mul(cols).and_then(|c| c.checked_mul(8));
            let Some(count) = count else {
                return Err(Error::Format {
                    offset: r.pos as u64,
                    detail: format!("array `{name}` dimensions overflow"),
                });
            };
            let data = r
                .take(count, "array data")?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8")))
                .collect();
            arrays.push((name, Tensor::from_vec(rows, cols, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos as u64,
                detail: "trailing bytes after last array".into(),
            });
        }
        Ok(Self {
            hidden,
            frame_dim,
            family,
            config_hash,
            arrays,
        })
    }

    /// Writes via a sibling temporary file and a rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes()?)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn dim_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Config(format!("dimension {v} does not fit in u32")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                detail: format!("truncated while reading {what}"),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4")))
    }
}
