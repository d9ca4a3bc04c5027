//! Byte-level BPE trained from scratch, plus the `Tokenize` trait the
//! evaluation harness scores through.
//!
//! The base alphabet is all 256 byte values, so `decode(encode(s)) == s` for
//! arbitrary input text. Ids are dense: the four specials first, then the 256
//! byte tokens, then one id per merge in rank order.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Anything a model can score text through.
pub trait Tokenize {
    fn encode(&self, text: &str) -> Vec<u32>;
    fn decode(&self, ids: &[u32]) -> String;
    fn vocab_size(&self) -> usize;
    fn pad_id(&self) -> u32;
    fn bos_id(&self) -> u32;
    fn eos_id(&self) -> u32;
    fn unk_id(&self) -> u32;
}

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
const NUM_SPECIALS: u32 = 4;
const BYTE_BASE: u32 = NUM_SPECIALS; // byte b has id BYTE_BASE + b

/// Minimum meaningful vocabulary: specials + full byte alphabet.
pub const MIN_BPE_VOCAB: usize = (NUM_SPECIALS as usize) + 256;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpecialIds {
    pub pad: u32,
    pub bos: u32,
    pub eos: u32,
    pub unk: u32,
}

/// Ordered merge rules plus token maps.
#[derive(Debug, Clone)]
pub struct BpeVocab {
    /// Merge rules in rank order, as (left id, right id) -> new id.
    merges: Vec<(u32, u32)>,
    /// Bytes of every token, indexed by id. Specials decode to nothing.
    token_bytes: Vec<Vec<u8>>,
    /// (left, right) -> rank for the encode loop.
    ranks: HashMap<(u32, u32), usize>,
}

/// On-disk form: merges in rank order plus special-token ids.
#[derive(Debug, Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    specials: SpecialIds,
    merges: Vec<(u32, u32)>,
}

impl BpeVocab {
    fn from_merges(merges: Vec<(u32, u32)>) -> Self {
        let mut token_bytes: Vec<Vec<u8>> = Vec::with_capacity(MIN_BPE_VOCAB + merges.len());
        for _ in 0..NUM_SPECIALS {
            token_bytes.push(Vec::new());
        }
        for b in 0..=255u8 {
            token_bytes.push(vec![b]);
        }
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, &(l, r)) in merges.iter().enumerate() {
            let mut bytes = token_bytes[l as usize].clone();
            bytes.extend_from_slice(&token_bytes[r as usize]);
            token_bytes.push(bytes);
            ranks.insert((l, r), rank);
        }
        BpeVocab { merges, token_bytes, ranks }
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn token(&self, id: u32) -> Option<&[u8]> {
        self.token_bytes.get(id as usize).map(|v| v.as_slice())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = VocabFile {
            version: 1,
            specials: SpecialIds { pad: PAD_ID, bos: BOS_ID, eos: EOS_ID, unk: UNK_ID },
            merges: self.merges.clone(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::Ingestion(format!("cannot read vocabulary {path:?}: {e}")))?;
        let file: VocabFile = serde_json::from_str(&raw)?;
        let vocab = BpeVocab::from_merges(file.merges);
        for (rank, &(l, r)) in vocab.merges.iter().enumerate() {
            let limit = (MIN_BPE_VOCAB + rank) as u32;
            if l >= limit || r >= limit {
                return Err(Error::Data(format!(
                    "vocabulary merge {rank} references id out of range"
                )));
            }
        }
        Ok(vocab)
    }

    fn encode_segment(&self, seg: &[u8], out: &mut Vec<u32>) {
        let mut ids: Vec<u32> = seg.iter().map(|&b| BYTE_BASE + u32::from(b)).collect();
        // Repeatedly apply the lowest-rank merge present; ranks are total, so
        // the result is deterministic.
        loop {
            let mut best: Option<(usize, usize)> = None; // (rank, position)
            for i in 0..ids.len().saturating_sub(1) {
                if let Some(&rank) = self.ranks.get(&(ids[i], ids[i + 1])) {
                    if best.map_or(true, |(r, _)| rank < r) {
                        best = Some((rank, i));
                    }
                }
            }
            let Some((rank, _)) = best else { break };
            let pair = self.merges[rank];
            let new_id = (MIN_BPE_VOCAB + rank) as u32;
            let mut merged = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && ids[i] == pair.0 && ids[i + 1] == pair.1 {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(ids[i]);
                    i += 1;
                }
            }
            ids = merged;
        }
        out.extend_from_slice(&ids);
    }
}

impl Tokenize for BpeVocab {
    fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for seg in pretokenize(text.as_bytes()) {
            self.encode_segment(seg, &mut out);
        }
        out
    }

    fn decode(&self, ids: &[u32]) -> String {
        let mut bytes = Vec::new();
        for &id in ids {
            if id < NUM_SPECIALS {
                continue;
            }
            if let Some(tok) = self.token(id) {
                bytes.extend_from_slice(tok);
            }
        }
        String::from_utf8_lossy(&bytes).into_owned()
    }

    fn vocab_size(&self) -> usize {
        self.token_bytes.len()
    }

    fn pad_id(&self) -> u32 {
        PAD_ID
    }
    fn bos_id(&self) -> u32 {
        BOS_ID
    }
    fn eos_id(&self) -> u32 {
        EOS_ID
    }
    fn unk_id(&self) -> u32 {
        UNK_ID
    }
}

/// Splits bytes into segments, each a whitespace run glued to the following
/// word. Merges never cross segment boundaries, but space+word units (" the")
/// can form. The segments partition the input, so decoding is lossless.
fn pretokenize(bytes: &[u8]) -> Vec<&[u8]> {
    let mut segs = Vec::new();
    let mut start = 0usize;
    let mut prev_ws = false;
    for (i, &b) in bytes.iter().enumerate() {
        let ws = b.is_ascii_whitespace();
        if ws && !prev_ws && i > start {
            segs.push(&bytes[start..i]);
            start = i;
        }
        prev_ws = ws;
    }
    if start < bytes.len() {
        segs.push(&bytes[start..]);
    }
    segs
}

/// Outcome of BPE training; `achieved_vocab` < requested when the corpus ran
/// out of pairs first.
pub struct BpeTrainOutcome {
    pub vocab: BpeVocab,
    pub achieved_vocab: usize,
    pub requested_vocab: usize,
}

/// Learns merges by most-frequent-pair counting over pretokenized segments.
/// Deterministic: ties break toward the lexicographically smaller id pair.
pub fn train_bpe<'a, I>(texts: I, vocab_size: usize) -> Result<BpeTrainOutcome>
where
    I: IntoIterator<Item = &'a str>,
{
    if vocab_size <= MIN_BPE_VOCAB {
        return Err(Error::Config(format!(
            "vocab_size must exceed the {MIN_BPE_VOCAB} base symbols (specials + bytes), got {vocab_size}"
        )));
    }

    // Unique segment -> count. Merging happens within segments only.
    let mut seg_counts: HashMap<Vec<u8>, u64> = HashMap::new();
    for text in texts {
        for seg in pretokenize(text.as_bytes()) {
            *seg_counts.entry(seg.to_vec()).or_insert(0) += 1;
        }
    }
    // Sort for a deterministic iteration order independent of hash state.
    let mut words: Vec<(Vec<u32>, u64)> = seg_counts
        .into_iter()
        .map(|(seg, n)| (seg.iter().map(|&b| BYTE_BASE + u32::from(b)).collect(), n))
        .collect();
    words.sort();

    let mut merges: Vec<(u32, u32)> = Vec::new();
    let target_merges = vocab_size - MIN_BPE_VOCAB;

    while merges.len() < target_merges {
        let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
        for (ids, n) in &words {
            for w in ids.windows(2) {
                *pair_counts.entry((w[0], w[1])).or_insert(0) += n;
            }
        }
        let best = pair_counts
            .into_iter()
            .filter(|&(_, n)| n >= 2)
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)));
        let Some((pair, _)) = best else { break };

        let new_id = (MIN_BPE_VOCAB + merges.len()) as u32;
        for (ids, _) in words.iter_mut() {
            if ids.len() < 2 {
                continue;
            }
            let mut merged = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && ids[i] == pair.0 && ids[i + 1] == pair.1 {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(ids[i]);
                    i += 1;
                }
            }
            *ids = merged;
        }
        merges.push(pair);
    }

    let achieved = MIN_BPE_VOCAB + merges.len();
    Ok(BpeTrainOutcome {
        vocab: BpeVocab::from_merges(merges),
        achieved_vocab: achieved,
        requested_vocab: vocab_size,
    })
}
