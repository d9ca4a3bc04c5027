//! Fixed-length chunk packing and the on-disk dataset format.
//!
//! Documents are tokenized, concatenated with a single eos separator between
//! adjacent documents, and split into exact `chunk_len` pieces; the final
//! partial chunk is dropped.
//!
//! File layout (all little-endian):
//! `b"PKDS"` | u32 version | u32 vocab_size | u32 chunk_len | u64 chunk_count
//! followed by `chunk_count * chunk_len` u32 token ids.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tokenizer::Tokenize;

const MAGIC: &[u8; 4] = b"PKDS";
const VERSION: u32 = 1;

/// Tokenized corpus segmented into fixed-length training chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedDataset {
    pub vocab_size: u32,
    pub chunk_len: u32,
    /// Flat ids, `chunk_count * chunk_len` long.
    pub ids: Vec<u32>,
}

/// Accounting from a packing run.
#[derive(Debug, Clone)]
pub struct PackStats {
    pub total_tokens: u64,
    pub chunk_count: u64,
    pub dropped_tokens: u64,
}

impl PackedDataset {
    pub fn chunk_count(&self) -> usize {
        if self.chunk_len == 0 {
            0
        } else {
            self.ids.len() / self.chunk_len as usize
        }
    }

    pub fn chunk(&self, index: usize) -> &[u32] {
        let l = self.chunk_len as usize;
        &self.ids[index * l..(index + 1) * l]
    }

    pub fn from_ids(ids: Vec<u32>, vocab_size: u32, chunk_len: u32) -> Result<(Self, PackStats)> {
        if chunk_len < 2 {
            return Err(Error::Config(format!("chunk_len must be >= 2, got {chunk_len}")));
        }
        if ids.is_empty() {
            return Err(Error::Plan("empty corpus: no tokens to pack".into()));
        }
        for &id in &ids {
            if id >= vocab_size {
                return Err(Error::Data(format!("token id {id} >= vocab_size {vocab_size}")));
            }
        }
        let total = ids.len() as u64;
        let l = chunk_len as u64;
        let chunks = total / l;
        if chunks == 0 {
            return Err(Error::Plan(format!(
                "corpus has {total} tokens, fewer than one chunk of {chunk_len}"
            )));
        }
        let kept = (chunks * l) as usize;
        let stats = PackStats {
            total_tokens: total,
            chunk_count: chunks,
            dropped_tokens: total - chunks * l,
        };
        let mut ids = ids;
        ids.truncate(kept);
        Ok((PackedDataset { vocab_size, chunk_len, ids }, stats))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(24 + self.ids.len() * 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&self.vocab_size.to_le_bytes());
        buf.extend_from_slice(&self.chunk_len.to_le_bytes());
        buf.extend_from_slice(&(self.chunk_count() as u64).to_le_bytes());
        for &id in &self.ids {
            buf.extend_from_slice(&id.to_le_bytes());
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut raw = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::Ingestion(format!("cannot open dataset {path:?}: {e}")))?
            .read_to_end(&mut raw)?;
        if raw.len() < 24 || &raw[0..4] != MAGIC {
            return Err(Error::Data(format!("{path:?} is not a packed dataset")));
        }
        let u32_at = |off: usize| u32::from_le_bytes(raw[off..off + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(Error::Data(format!("unsupported dataset version {version}")));
        }
        let vocab_size = u32_at(8);
        let chunk_len = u32_at(12);
        let chunk_count = u64::from_le_bytes(raw[16..24].try_into().unwrap());
        let expected = 24 + (chunk_count as usize) * (chunk_len as usize) * 4;
        if raw.len() != expected {
            return Err(Error::Data(format!(
                "dataset {path:?} truncated: {} bytes, expected {expected}",
                raw.len()
            )));
        }
        let mut ids = Vec::with_capacity(chunk_count as usize * chunk_len as usize);
        for off in (24..raw.len()).step_by(4) {
            let id = u32_at(off);
            if id >= vocab_size {
                return Err(Error::Data(format!("token id {id} >= vocab_size {vocab_size}")));
            }
            ids.push(id);
        }
        Ok(PackedDataset { vocab_size, chunk_len, ids })
    }
}

/// Tokenizes documents, joins them with eos separators, and chunks.
pub fn pack<T: Tokenize>(
    texts: &[String],
    vocab: &T,
    chunk_len: u32,
) -> Result<(PackedDataset, PackStats)> {
    if texts.is_empty() {
        return Err(Error::Plan("empty corpus: no documents to pack".into()));
    }
    let mut ids: Vec<u32> = Vec::new();
    for (i, text) in texts.iter().enumerate() {
        if i > 0 {
            ids.push(vocab.eos_id());
        }
        ids.extend(vocab.encode(text));
    }
    PackedDataset::from_ids(ids, vocab.vocab_size() as u32, chunk_len)
}
