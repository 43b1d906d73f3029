//! Binary model files.
//!
//! ```text
//! magic     b"CDPO"
//! version   u32
//! length    u64          payload byte count
//! checksum  [u8; 32]     SHA-256 of the payload
//! payload:
//!   vocab, embed, layers, heads, context, ff   u32 each
//!   seed                                       u64
//!   token count u32, then per token: byte length u32 + UTF-8 bytes
//!   parameter count u64, then f64 values in layout order
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ModelDims, PolicyModel, Tokenizer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CDPO";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 32;

impl PolicyModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::with_capacity(64 + self.params.len() * 8);
        let d = &self.dims;
        for v in [d.vocab, d.embed, d.layers, d.heads, d.context, d.ff] {
            payload.extend((v as u32).to_le_bytes());
        }
        payload.extend(self.seed.to_le_bytes());
        payload.extend((self.tokenizer.len() as u32).to_le_bytes());
        for w in self.tokenizer.vocab() {
            payload.extend((w.len() as u32).to_le_bytes());
            payload.extend(w.as_bytes());
        }
        payload.extend((self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            payload.extend(p.to_le_bytes());
        }

        let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
        out.extend(MAGIC);
        out.extend(FORMAT_VERSION.to_le_bytes());
        out.extend((payload.len() as u64).to_le_bytes());
        out.extend(Sha256::digest(&payload));
        out.extend(payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::validation("not a model file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Checksum);
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != len || Sha256::digest(payload).as_slice() != &bytes[16..48] {
            return Err(Error::Checksum);
        }

        let mut r = Reader { buf: payload };
        let mut dim = || r.u32().map(|v| v as usize);
        let dims = ModelDims {
            vocab: dim()?,
            embed: dim()?,
            layers: dim()?,
            heads: dim()?,
            context: dim()?,
            ff: dim()?,
        };
        let seed = r.u64()?;
        let count = r.u32()? as usize;
        let mut vocab = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u32()? as usize;
            let bytes = r.take(n)?;
            vocab.push(String::from_utf8(bytes.to_vec()).map_err(|_| Error::validation("token is not valid UTF-8"))?);
        }
        let tokenizer = Tokenizer::from_vocab(vocab)?;
        let n = r.u64()? as usize;
        let raw = r.take(n.checked_mul(8).ok_or(Error::Checksum)?)?;
        let params = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if !r.buf.is_empty() {
            return Err(Error::validation("trailing bytes after parameters"));
        }
        PolicyModel::from_parts(tokenizer, dims, seed, params)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::validation("model payload ends early"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn save_model(model: &PolicyModel, path: &Path) -> Result<()> {
    fs::write(path, model.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Loads a model; never returns a partially read model.
pub fn load_model(path: &Path) -> Result<PolicyModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    PolicyModel::from_bytes(&bytes)
}
