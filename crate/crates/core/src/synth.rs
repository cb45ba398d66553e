//! Two-domain synthetic review corpus with a controlled vocabulary.
//!
//! Every review mixes four kinds of token:
//!
//! * shared sentiment words (`good0..4`, `bad0..4`) whose polarity moves the
//!   rating the same way in both domains,
//! * private sentiment words (`spos*`/`sneg*` in the source, `tpos*`/`tneg*`
//!   in the target) that also move the rating but exist in one domain only,
//! * private filler words that only mark the domain,
//! * shared neutral words.
//!
//! A review's sentiment comes from a latent score `z = user bias + item
//! quality + noise`; each sentiment slot is positive with probability
//! `sigmoid(1.5 z)`. The rating is
//! `3 + 1.4 * shared + 0.6 * private + N(0, 0.15)` clamped to `[1, 5]`,
//! where `shared` and `private` are the mean slot polarities in `[-1, 1]`.
//!
//! Word vectors (dimension 8): dim 0 shared polarity, dim 1 private
//! polarity, dims 2/3 source/target marker, dims 4..8 fixed noise on shared
//! words only.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;

use crate::corpus::{Domain, EmbeddingTable, ReviewRecord};
use crate::error::{Error, Result};

pub const SYNTH_DIM: usize = 8;
pub const SHARED_SLOTS: usize = 4;
pub const PRIVATE_SLOTS: usize = 2;
const FILLER_SLOTS: usize = 3;
const NEUTRAL_SLOTS: usize = 3;
const NEUTRAL: [&str; 8] = ["the", "this", "it", "was", "and", "item", "very", "really"];

/// Tokens a review of `domain` may contain, by role.
pub fn private_words(domain: Domain) -> (Vec<String>, Vec<String>, Vec<String>) {
    let p = match domain {
        Domain::Source => 's',
        Domain::Target => 't',
    };
    (
        (0..3).map(|k| format!("{p}pos{k}")).collect(),
        (0..3).map(|k| format!("{p}neg{k}")).collect(),
        (0..10).map(|k| format!("{p}fill{k}")).collect(),
    )
}

pub fn shared_words() -> (Vec<String>, Vec<String>) {
    (
        (0..5).map(|k| format!("good{k}")).collect(),
        (0..5).map(|k| format!("bad{k}")).collect(),
    )
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub source: Vec<ReviewRecord>,
    pub target: Vec<ReviewRecord>,
    pub table: EmbeddingTable,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn vocabulary(rng: &mut ChaCha8Rng) -> Result<EmbeddingTable> {
    let noise = Normal::new(0.0, 0.3).expect("valid normal");
    let mut entries = Vec::new();
    let shared = |word: String, polarity: f64, rng: &mut ChaCha8Rng| {
        let mut v = vec![0.0; SYNTH_DIM];
        v[0] = polarity;
        for x in &mut v[4..] {
            *x = noise.sample(rng);
        }
        (word, v)
    };
    let (good, bad) = shared_words();
    for w in good {
        entries.push(shared(w, 1.0, rng));
    }
    for w in bad {
        entries.push(shared(w, -1.0, rng));
    }
    for w in NEUTRAL {
        entries.push(shared(w.to_string(), 0.0, rng));
    }
    for d in [Domain::Source, Domain::Target] {
        let marker = 2 + d.index();
        let (pos, neg, fill) = private_words(d);
        for (words, pol) in [(pos, 1.0), (neg, -1.0), (fill, 0.0)] {
            for w in words {
                let mut v = vec![0.0; SYNTH_DIM];
                v[1] = pol;
                v[marker] = 1.0;
                entries.push((w, v));
            }
        }
    }
    EmbeddingTable::from_entries(entries)
}

fn domain_records(domain: Domain, size: usize, rng: &mut ChaCha8Rng) -> Vec<ReviewRecord> {
    let n_users = (size / 5).max(2);
    let n_items = (size * 3 / 20).max(2);
    let spread = Normal::new(0.0, 0.8).expect("valid normal");
    let jitter = Normal::new(0.0, 0.5).expect("valid normal");
    let rating_noise = Normal::new(0.0, 0.15).expect("valid normal");
    let user_bias: Vec<f64> = (0..n_users).map(|_| spread.sample(rng)).collect();
    let item_quality: Vec<f64> = (0..n_items).map(|_| spread.sample(rng)).collect();
    let (good, bad) = shared_words();
    let (ppos, pneg, fill) = private_words(domain);
    let tag = domain.tag();

    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let u = rng.gen_range(0..n_users);
        let i = rng.gen_range(0..n_items);
        if !seen.insert((u, i)) {
            continue;
        }
        let z = user_bias[u] + item_quality[i] + jitter.sample(rng);
        let p = sigmoid(1.5 * z);
        let polarity = |slots: usize, pos: &[String], neg: &[String], rng: &mut ChaCha8Rng, toks: &mut Vec<String>| {
            let mut score = 0.0;
            for _ in 0..slots {
                if rng.gen_bool(p) {
                    score += 1.0;
                    toks.push(pos.choose(rng).unwrap().clone());
                } else {
                    score -= 1.0;
                    toks.push(neg.choose(rng).unwrap().clone());
                }
            }
            score / slots as f64
        };
        let mut tokens = Vec::new();
        let shared = polarity(SHARED_SLOTS, &good, &bad, rng, &mut tokens);
        let private = polarity(PRIVATE_SLOTS, &ppos, &pneg, rng, &mut tokens);
        for _ in 0..FILLER_SLOTS {
            tokens.push(fill.choose(rng).unwrap().clone());
        }
        for _ in 0..NEUTRAL_SLOTS {
            tokens.push(NEUTRAL.choose(rng).unwrap().to_string());
        }
        tokens.shuffle(rng);
        let rating = (3.0 + 1.4 * shared + 0.6 * private + rating_noise.sample(rng)).clamp(1.0, 5.0);
        out.push(ReviewRecord {
            user: format!("{tag}u{u}"),
            item: format!("{tag}i{i}"),
            rating,
            text: tokens.join(" "),
        });
    }
    out
}

/// Generate `size` records per domain.
pub fn generate(size: usize, seed: u64) -> Result<SynthCorpus> {
    if size < 100 {
        return Err(Error::InvalidArgument(format!(
            "synthetic corpus size must be at least 100, got {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table = vocabulary(&mut rng)?;
    let source = domain_records(Domain::Source, size, &mut rng);
    let target = domain_records(Domain::Target, size, &mut rng);
    Ok(SynthCorpus {
        source,
        target,
        table,
    })
}

pub fn to_jsonl(records: &[ReviewRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let line = json!({"user": r.user, "item": r.item, "rating": r.rating, "text": r.text});
        let _ = writeln!(s, "{line}");
    }
    s
}

/// Paths written by [`write_corpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPaths {
    pub source: PathBuf,
    pub target: PathBuf,
    pub embeddings: PathBuf,
}

/// Write `source.jsonl`, `target.jsonl` and `embeddings.txt` into `dir`.
pub fn write_corpus(corpus: &SynthCorpus, dir: &Path) -> Result<SynthPaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = SynthPaths {
        source: dir.join("source.jsonl"),
        target: dir.join("target.jsonl"),
        embeddings: dir.join("embeddings.txt"),
    };
    for (p, body) in [
        (&paths.source, to_jsonl(&corpus.source)),
        (&paths.target, to_jsonl(&corpus.target)),
        (&paths.embeddings, corpus.table.to_text()),
    ] {
        std::fs::write(p, body).map_err(|e| Error::io(p, e))?;
    }
    Ok(paths)
}
