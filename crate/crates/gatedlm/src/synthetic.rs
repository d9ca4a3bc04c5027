//! Synthetic data for desk-scale checks: a deterministic agreement grammar
//! with known bigram entropy, balanced chance-level task generators, and
//! synthetic domain sources for exercising the sampling pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Document;
use crate::dataset::{PackedDataset, PackStats};
use crate::error::Result;
use crate::eval::{ChoiceInstance, MinimalPair};
use crate::tokenizer::Tokenize;

/// Closed-vocabulary whitespace tokenizer for synthetic corpora.
#[derive(Debug, Clone)]
pub struct WordVocab {
    words: Vec<String>,
    pub pad: u32,
    pub bos: u32,
    pub eos: u32,
    pub unk: u32,
}

impl WordVocab {
    pub fn new(words: &[&str]) -> Self {
        let mut all = vec!["<pad>".to_string(), "<bos>".to_string(), "<eos>".to_string(), "<unk>".to_string()];
        all.extend(words.iter().map(|w| w.to_string()));
        WordVocab { words: all, pad: 0, bos: 1, eos: 2, unk: 3 }
    }

    pub fn id_of(&self, word: &str) -> Option<u32> {
        self.words.iter().position(|w| w == word).map(|i| i as u32)
    }
}

impl Tokenize for WordVocab {
    fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace()
            .map(|w| self.id_of(w).unwrap_or(self.unk))
            .collect()
    }

    fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| id >= 4)
            .map(|&id| self.words[id as usize].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn vocab_size(&self) -> usize {
        self.words.len()
    }

    fn pad_id(&self) -> u32 {
        self.pad
    }
    fn bos_id(&self) -> u32 {
        self.bos
    }
    fn eos_id(&self) -> u32 {
        self.eos
    }
    fn unk_id(&self) -> u32 {
        self.unk
    }
}

const SINGULAR_SUBJECTS: [&str; 12] = [
    "alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi", "ivan", "judy", "karl",
    "lena",
];
const PLURAL_SUBJECTS: [&str; 12] = [
    "cats", "dogs", "birds", "wolves", "bears", "foxes", "mice", "goats", "ducks", "crows",
    "hens", "frogs",
];
const SINGULAR_VERBS: [&str; 12] = [
    "runs", "jumps", "sleeps", "sings", "walks", "swims", "eats", "reads", "writes", "plays",
    "hides", "waits",
];
const PLURAL_VERBS: [&str; 12] = [
    "run", "jump", "sleep", "sing", "walk", "swim", "eat", "read", "write", "play", "hide",
    "wait",
];

/// Subject-verb agreement language: every sentence is `subject verb` with the
/// verb number matching the subject number, followed by an eos separator.
///
/// The token stream is first-order Markov, so its bigram entropy is the
/// optimum any causal model can reach:
/// given eos the next token is one of 24 subjects (ln 24 nats), given a
/// subject one of 12 number-matched verbs (ln 12), given a verb always eos
/// (0). Each sentence contributes one token of each kind.
#[derive(Debug, Clone)]
pub struct AgreementGrammar {
    pub vocab: WordVocab,
}

impl Default for AgreementGrammar {
    fn default() -> Self {
        Self::new()
    }
}

impl AgreementGrammar {
    pub fn new() -> Self {
        let mut words: Vec<&str> = Vec::new();
        words.extend_from_slice(&SINGULAR_SUBJECTS);
        words.extend_from_slice(&PLURAL_SUBJECTS);
        words.extend_from_slice(&SINGULAR_VERBS);
        words.extend_from_slice(&PLURAL_VERBS);
        AgreementGrammar { vocab: WordVocab::new(&words) }
    }

    /// Exact per-token entropy of the stationary bigram process, in nats.
    pub fn bigram_entropy(&self) -> f64 {
        ((12.0f64).ln() + (24.0f64).ln()) / 3.0
    }

    fn sentence(&self, rng: &mut ChaCha8Rng) -> (String, String) {
        let idx = rng.gen_range(0..12usize);
        if rng.gen_bool(0.5) {
            (SINGULAR_SUBJECTS[idx].to_string(), SINGULAR_VERBS[rng.gen_range(0..12)].to_string())
        } else {
            (PLURAL_SUBJECTS[idx].to_string(), PLURAL_VERBS[rng.gen_range(0..12)].to_string())
        }
    }

    /// Token stream of complete sentences, at least `min_tokens` long.
    pub fn token_stream(&self, min_tokens: usize, seed: u64) -> Vec<u32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ids = Vec::with_capacity(min_tokens + 3);
        while ids.len() < min_tokens {
            let (s, v) = self.sentence(&mut rng);
            ids.push(self.vocab.id_of(&s).unwrap());
            ids.push(self.vocab.id_of(&v).unwrap());
            ids.push(self.vocab.eos);
        }
        ids
    }

    /// Packed training corpus sampled from the grammar.
    pub fn packed_corpus(
        &self,
        min_tokens: usize,
        chunk_len: u32,
        seed: u64,
    ) -> Result<(PackedDataset, PackStats)> {
        let ids = self.token_stream(min_tokens, seed);
        PackedDataset::from_ids(ids, self.vocab.vocab_size() as u32, chunk_len)
    }

    /// Grammatical sentence plus its agreement-violating corruption (the verb
    /// swapped to the wrong number).
    pub fn agreement_pairs(&self, n: usize, seed: u64) -> Vec<MinimalPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let subj_idx = rng.gen_range(0..12usize);
                let verb_idx = rng.gen_range(0..12usize);
                let singular = rng.gen_bool(0.5);
                let (subj, good_verb, bad_verb) = if singular {
                    (SINGULAR_SUBJECTS[subj_idx], SINGULAR_VERBS[verb_idx], PLURAL_VERBS[verb_idx])
                } else {
                    (PLURAL_SUBJECTS[subj_idx], PLURAL_VERBS[verb_idx], SINGULAR_VERBS[verb_idx])
                };
                MinimalPair {
                    good: format!("{subj} {good_verb}"),
                    bad: format!("{subj} {bad_verb}"),
                    tag: "subject_verb_agreement".to_string(),
                }
            })
            .collect()
    }

    /// Choice instances whose gold candidate is grammatical and whose foils
    /// violate agreement or word order.
    pub fn grammar_choices(&self, n: usize, seed: u64) -> Vec<ChoiceInstance> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let subj_idx = rng.gen_range(0..12usize);
                let verb_idx = rng.gen_range(0..12usize);
                let singular = rng.gen_bool(0.5);
                let (subj, good_verb, bad_verb) = if singular {
                    (SINGULAR_SUBJECTS[subj_idx], SINGULAR_VERBS[verb_idx], PLURAL_VERBS[verb_idx])
                } else {
                    (PLURAL_SUBJECTS[subj_idx], PLURAL_VERBS[verb_idx], SINGULAR_VERBS[verb_idx])
                };
                let mut candidates = vec![
                    format!("{subj} {good_verb}"),
                    format!("{subj} {bad_verb}"),
                    format!("{good_verb} {subj}"),
                    format!("{bad_verb} {subj}"),
                ];
                let gold = i % candidates.len();
                candidates.swap(0, gold);
                ChoiceInstance {
                    context: String::new(),
                    candidates,
                    gold,
                    tag: "grammar_choice".to_string(),
                }
            })
            .collect()
    }
}

/// Random-word minimal pairs balanced by construction: each unordered pair
/// appears once in each orientation, so any deterministic scorer lands at
/// 50% up to ties.
pub fn balanced_random_pairs(vocab: &WordVocab, n: usize, seed: u64) -> Vec<MinimalPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let word = |rng: &mut ChaCha8Rng| -> String {
        let id = rng.gen_range(4..vocab.vocab_size() as u32);
        vocab.decode(&[id])
    };
    let mut pairs = Vec::with_capacity(n);
    while pairs.len() + 1 < n {
        let len = rng.gen_range(2..5usize);
        let a: Vec<String> = (0..len).map(|_| word(&mut rng)).collect();
        let b: Vec<String> = (0..len).map(|_| word(&mut rng)).collect();
        let (a, b) = (a.join(" "), b.join(" "));
        if a == b {
            continue;
        }
        pairs.push(MinimalPair { good: a.clone(), bad: b.clone(), tag: "balanced".into() });
        pairs.push(MinimalPair { good: b, bad: a, tag: "balanced".into() });
    }
    pairs
}

/// k-way choice instances over exchangeable random candidates with a
/// uniformly rotated gold slot.
pub fn random_choices(vocab: &WordVocab, n: usize, k: usize, seed: u64) -> Vec<ChoiceInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let candidates: Vec<String> = (0..k)
                .map(|_| {
                    let len = rng.gen_range(2..5usize);
                    (0..len)
                        .map(|_| {
                            let id = rng.gen_range(4..vocab.vocab_size() as u32);
                            vocab.decode(&[id])
                        })
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect();
            ChoiceInstance { context: String::new(), candidates, gold: i % k, tag: "chance".into() }
        })
        .collect()
}

/// Synthetic per-domain document sets for exercising the sampling pipeline.
/// Documents are short (5-12 words) so budget overshoot stays well under the
/// ratio tolerance.
pub fn synthetic_domain_documents(domain: &str, n_docs: usize, seed: u64) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|i| {
            let words = rng.gen_range(5..=12usize);
            let text = (0..words)
                .map(|w| format!("{domain}w{}", (i * 31 + w * 7) % 97))
                .collect::<Vec<_>>()
                .join(" ");
            Document { text, domain: domain.to_string() }
        })
        .collect()
}
