//! Domain-stratified corpus subsampling.
//!
//! Sources are line-delimited JSON records `{"text": ..., "domain": ...}`.
//! Each plan entry names a domain, its target fraction of the total word
//! budget, and the file to draw from. Whole documents are drawn uniformly
//! without replacement until the domain's word budget is met; the last
//! document may overshoot and is counted as-is. Word counts are
//! whitespace-split counts.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One stratum of the sampling plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainSpec {
    pub domain: String,
    /// Target fraction of the total word budget, in (0, 1].
    pub ratio: f64,
    pub source: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    pub text: String,
    pub domain: String,
}

/// Per-domain accounting of what was actually sampled.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainManifest {
    pub domain: String,
    pub requested_ratio: f64,
    pub sampled_words: u64,
    pub sampled_documents: u64,
    pub achieved_ratio: f64,
    /// True when the domain ran out of documents before its budget was met.
    pub exhausted: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub total_words: u64,
    pub requested_words: u64,
    pub seed: u64,
    pub domains: Vec<DomainManifest>,
}

pub fn word_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Validates a plan: non-empty, ratios in (0, 1], summing to 1 within 1e-6.
pub fn validate_plan(plan: &[DomainSpec]) -> Result<()> {
    if plan.is_empty() {
        return Err(Error::Usage("sampling plan is empty".into()));
    }
    let mut total = 0.0f64;
    for spec in plan {
        if !(spec.ratio > 0.0 && spec.ratio <= 1.0) {
            return Err(Error::Plan(format!(
                "domain {:?} has ratio {} outside (0, 1]",
                spec.domain, spec.ratio
            )));
        }
        total += spec.ratio;
    }
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Plan(format!("plan ratios sum to {total}, expected 1")));
    }
    Ok(())
}

fn read_domain_documents(spec: &DomainSpec) -> Result<Vec<Document>> {
    let file = std::fs::File::open(&spec.source).map_err(|e| {
        Error::Ingestion(format!("cannot open source {:?}: {e}", spec.source))
    })?;
    let reader = BufReader::new(file);
    let mut docs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| {
            Error::Ingestion(format!("read failure in {:?} line {}: {e}", spec.source, lineno + 1))
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| {
            Error::Ingestion(format!("bad record in {:?} line {}: {e}", spec.source, lineno + 1))
        })?;
        if doc.domain == spec.domain {
            docs.push(doc);
        }
    }
    Ok(docs)
}

/// Draws documents per domain until each word budget is met. Reproducible
/// from `seed`; domains are processed in plan order.
pub fn sample_corpus(
    plan: &[DomainSpec],
    total_words: u64,
    seed: u64,
) -> Result<(Vec<Document>, Manifest)> {
    validate_plan(plan)?;
    if total_words == 0 {
        return Err(Error::Usage("total_words must be positive".into()));
    }

    let mut sampled = Vec::new();
    let mut manifests = Vec::new();
    let mut grand_total = 0u64;

    for (index, spec) in plan.iter().enumerate() {
        let mut docs = read_domain_documents(spec)?;
        if docs.is_empty() {
            return Err(Error::Plan(format!(
                "domain {:?} has no documents in {:?}",
                spec.domain, spec.source
            )));
        }
        let budget = (spec.ratio * total_words as f64).round() as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64));
        docs.shuffle(&mut rng);

        let mut words = 0u64;
        let mut taken = 0u64;
        for doc in docs {
            if words >= budget {
                break;
            }
            words += word_count(&doc.text);
            taken += 1;
            sampled.push(doc);
        }
        let exhausted = words < budget;
        grand_total += words;
        manifests.push(DomainManifest {
            domain: spec.domain.clone(),
            requested_ratio: spec.ratio,
            sampled_words: words,
            sampled_documents: taken,
            achieved_ratio: 0.0, // filled below once the grand total is known
            exhausted,
        });
    }

    for m in &mut manifests {
        m.achieved_ratio = if grand_total > 0 {
            m.sampled_words as f64 / grand_total as f64
        } else {
            0.0
        };
    }

    let manifest = Manifest {
        total_words: grand_total,
        requested_words: total_words,
        seed,
        domains: manifests,
    };
    Ok((sampled, manifest))
}

pub fn write_documents(docs: &[Document], path: &Path) -> Result<()> {
    let mut out = String::new();
    for doc in docs {
        out.push_str(&serde_json::to_string(doc)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_documents(path: &Path) -> Result<Vec<Document>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Ingestion(format!("cannot open corpus {path:?}: {e}")))?;
    let reader = BufReader::new(file);
    let mut docs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| {
            Error::Ingestion(format!("bad record in {path:?} line {}: {e}", lineno + 1))
        })?;
        docs.push(doc);
    }
    Ok(docs)
}
