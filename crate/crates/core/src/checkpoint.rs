//! Flat binary model checkpoints.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "RATLAB1" | version | meta_len | meta JSON | blocks | (rows, cols, rows*cols f64)*
//! ```
//!
//! The metadata carries the model configuration, the training mode and the
//! vocabulary, so a checkpoint alone is enough to rebuild the network and
//! encode new text. Parameter blocks follow the network's declaration order.

use std::collections::HashSet;
use std::path::Path;

use ratlab_grad::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{RatError, Result};
use crate::model::{ModelConfig, RationaleNet};
use crate::train::Mode;
use crate::vocab::Vocab;

pub const MAGIC: &[u8; 7] = b"RATLAB1";
pub const VERSION: u32 = 1;

// Guards against absurd allocations on corrupt input.
const MAX_META_BYTES: usize = 64 << 20;
const MAX_BLOCK_SCALARS: usize = 1 << 28;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub mode: Mode,
    /// Non-reserved tokens in id order.
    pub vocab: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub blocks: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_net(net: &RationaleNet, vocab: &Vocab, mode: Mode) -> Self {
        Self {
            meta: CheckpointMeta {
                model: net.config().clone(),
                mode,
                vocab: vocab.tokens().to_vec(),
            },
            blocks: net.store().iter().map(|(_, _, t)| t.clone()).collect(),
        }
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::from_tokens(&self.meta.vocab)
    }

    /// Rebuild the network. Fails if the blocks do not fit the architecture
    /// described by the metadata.
    pub fn into_net(self) -> Result<(RationaleNet, Vocab)> {
        let vocab = self.vocab();
        let mut net = RationaleNet::new(self.meta.model.clone(), vocab.len(), 0)?;
        if self.blocks.len() != net.store().len() {
            return Err(RatError::Checkpoint(format!(
                "expected {} parameter blocks, found {}",
                net.store().len(),
                self.blocks.len()
            )));
        }
        let mut store = ParamStore::new();
        for ((_, name, want), got) in net.store().iter().zip(self.blocks) {
            if want.shape() != got.shape() {
                return Err(RatError::Checkpoint(format!(
                    "block {name}: expected shape {:?}, found {:?}",
                    want.shape(),
                    got.shape()
                )));
            }
            store.add(name.to_string(), got);
        }
        net.set_store(store)?;
        Ok((net, vocab))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let scalars: usize = self.blocks.iter().map(Tensor::len).sum();
        let mut out =
            Vec::with_capacity(MAGIC.len() + 16 + meta.len() + 8 * (scalars + self.blocks.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&u32_len(meta.len())?.to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&u32_len(self.blocks.len())?.to_le_bytes());
        for b in &self.blocks {
            let (rows, cols) = b.dims2();
            out.extend_from_slice(&u32_len(rows)?.to_le_bytes());
            out.extend_from_slice(&u32_len(cols)?.to_le_bytes());
            for v in b.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(bad("missing RATLAB1 magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let meta_len = r.u32()? as usize;
        if meta_len > MAX_META_BYTES {
            return Err(bad("metadata too large"));
        }
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| bad(&format!("metadata: {e}")))?;
        meta.model.validate()?;
        let mut seen = HashSet::new();
        if let Some(dup) = meta.vocab.iter().find(|t| !seen.insert(t.as_str())) {
            return Err(bad(&format!("duplicate vocabulary entry {dup:?}")));
        }

        let count = r.u32()? as usize;
        let mut blocks = Vec::new();
        for _ in 0..count {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let n = rows
                .checked_mul(cols)
                .filter(|&n| n <= MAX_BLOCK_SCALARS && n * 8 <= r.remaining())
                .ok_or_else(|| bad("parameter block exceeds the file"))?;
            let data: Vec<f64> = r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(bad("non-finite parameter value"));
            }
            blocks.push(Tensor::matrix(rows, cols, data).map_err(|e| bad(&e.to_string()))?);
        }
        if r.remaining() != 0 {
            return Err(bad("trailing bytes after the last block"));
        }
        Ok(Self { meta, blocks })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?).map_err(|e| RatError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| RatError::io(path, e))?;
        Self::decode(&bytes)
    }
}

fn bad(msg: &str) -> RatError {
    RatError::Checkpoint(msg.to_string())
}

fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| bad("length does not fit in u32"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(bad("truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}
