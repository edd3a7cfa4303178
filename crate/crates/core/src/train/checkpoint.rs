//! Versioned binary checkpoint container.
//!
//! ```text
//! magic    8 bytes "HIERCKPT"
//! version  u32
//! config   u32 length + UTF-8 canonical JSON
//! tensors  u32 count, then per tensor:
//!          u32 name length + name, u32 rank, rank × u32 dims, f64 data
//! rng      u32 count, then per stream:
//!          u32 name length + name, 32-byte seed, u64 stream, u128 word position
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HIERCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Exact position of a ChaCha8 stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_json: String,
    pub tensors: Vec<(String, Tensor)>,
    pub rngs: Vec<(String, RngState)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Validation(format!("checkpoint has no tensor `{name}`")))
    }

    pub fn rng(&self, name: &str) -> Result<RngState> {
        self.rngs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| *r)
            .ok_or_else(|| Error::Validation(format!("checkpoint has no rng stream `{name}`")))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_bytes(&mut out, self.config_json.as_bytes())?;
        put_u32(&mut out, len_u32(self.tensors.len())?);
        for (name, t) in &self.tensors {
            put_bytes(&mut out, name.as_bytes())?;
            put_u32(&mut out, len_u32(t.shape().len())?);
            for &d in t.shape() {
                put_u32(&mut out, len_u32(d)?);
            }
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        put_u32(&mut out, len_u32(self.rngs.len())?);
        for (name, r) in &self.rngs {
            put_bytes(&mut out, name.as_bytes())?;
            out.extend_from_slice(&r.seed);
            out.extend_from_slice(&r.stream.to_le_bytes());
            out.extend_from_slice(&r.word_pos.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "checkpoint magic")? != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                what: "checkpoint",
                expected: "HIERCKPT".into(),
            });
        }
        let version = r.u32("checkpoint version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "checkpoint",
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let config_json = r.string("config block")?;
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = r.string("tensor name")?;
            let rank = r.u32("tensor rank")? as usize;
            if rank > 2 {
                return Err(Error::Validation(format!(
                    "tensor `{name}` has rank {rank}"
                )));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("tensor dims")? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(
                n.checked_mul(8)
                    .ok_or_else(|| Error::Validation("tensor too large".into()))?,
                "tensor data",
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        let count = r.u32("rng count")?;
        let mut rngs = Vec::new();
        for _ in 0..count {
            let name = r.string("rng name")?;
            let seed: [u8; 32] = r.take(32, "rng seed")?.try_into().expect("32 bytes");
            let stream = u64::from_le_bytes(r.take(8, "rng stream")?.try_into().expect("8 bytes"));
            let word_pos =
                u128::from_le_bytes(r.take(16, "rng position")?.try_into().expect("16 bytes"));
            rngs.push((
                name,
                RngState {
                    seed,
                    stream,
                    word_pos,
                },
            ));
        }
        if r.pos != bytes.len() {
            return Err(Error::Validation(format!(
                "{} trailing bytes after checkpoint",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            config_json,
            tensors,
            rngs,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::invalid(format!("length {n} does not fit in u32")))
}

fn put_u32(out: &mut Vec<u8>, x: u32) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) -> Result<()> {
    put_u32(out, len_u32(b.len())?);
    out.extend_from_slice(b);
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated {
                what,
                needed: (self.pos as u64).saturating_add(n as u64),
                found: self.bytes.len() as u64,
            }),
        }
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn string(&mut self, what: &'static str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Parse(format!("{what} is not UTF-8")))
    }
}
