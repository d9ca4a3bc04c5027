//! Self-describing checkpoint container.
//!
//! Layout (little-endian): 8-byte magic `b"LMCKPT\0\0"`, u32 version,
//! u32 entry count, then per entry a length-prefixed UTF-8 name, u32 rank,
//! u32 extents, and the f32 payload. A length-prefixed JSON serialization of
//! the [`ModelConfig`] trails the entries.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{LanguageModel, ModelConfig};

const MAGIC: &[u8; 8] = b"LMCKPT\0\0";
const VERSION: u32 = 1;

pub fn save(model: &LanguageModel, path: &Path) -> Result<()> {
    let params = model.visit_params();
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in &params {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.extend_from_slice(&(tensor.shape.len() as u32).to_le_bytes());
        for &d in &tensor.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &tensor.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let config_json = serde_json::to_vec(&model.config)?;
    buf.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&config_json);
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    raw: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.raw.len() {
            return Err(Error::Data("checkpoint truncated".into()));
        }
        let s = &self.raw[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load(path: &Path) -> Result<LanguageModel> {
    let mut raw = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::Ingestion(format!("cannot open checkpoint {path:?}: {e}")))?
        .read_to_end(&mut raw)?;
    let mut cur = Cursor { raw: &raw, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::Data(format!("{path:?} is not a checkpoint")));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    let entries = cur.u32()? as usize;
    let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::with_capacity(entries);
    for _ in 0..entries {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::Data("checkpoint entry name is not UTF-8".into()))?;
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let payload = cur.take(numel * 4)?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push((name, shape, data));
    }
    let json_len = cur.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(cur.take(json_len)?)?;

    // Rebuild the structure from the config, then fill every tensor by name.
    let mut model = LanguageModel::new(config, 0)?;
    for (name, slot) in model.visit_params_mut() {
        let found = tensors
            .iter()
            .find(|(n, _, _)| *n == name)
            .ok_or_else(|| Error::Data(format!("checkpoint missing tensor {name:?}")))?;
        if found.1 != slot.shape {
            return Err(Error::Data(format!(
                "checkpoint tensor {name:?} has shape {:?}, expected {:?}",
                found.1, slot.shape
            )));
        }
        slot.data.clone_from(&found.2);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ExecMode, ModelConfig};

    #[test]
    fn roundtrip_preserves_logits_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        for cfg in [ModelConfig::desk_hgrn2(30), ModelConfig::desk_lstm(30)] {
            let model = LanguageModel::new(cfg, 11).unwrap();
            save(&model, &path).unwrap();
            let loaded = load(&path).unwrap();
            let tokens = vec![1u32, 5, 9, 2];
            let mut s1 = model.fresh_state();
            let mut s2 = loaded.fresh_state();
            let a = model.logits_host(&tokens, &mut s1, ExecMode::Sequential).unwrap();
            let b = loaded.logits_host(&tokens, &mut s2, ExecMode::Sequential).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn save_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let model = LanguageModel::new(ModelConfig::desk_hgrn2(30), 4).unwrap();
        save(&model, &p1).unwrap();
        save(&model, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn garbage_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(load(&path), Err(Error::Data(_))));
    }
}
