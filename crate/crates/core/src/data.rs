//! Byte-level corpora: loading, the train/validation split and batch
//! sampling.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vocabulary size of a byte-level corpus.
pub const BYTE_VOCAB: usize = 256;

/// Random state for batch sampling. Cloning it replays the same batches.
pub type SamplerRng = ChaCha8Rng;

pub fn sampler_rng(seed: u64) -> SamplerRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Token windows for one optimization step. `targets` are `inputs` shifted
/// left by one position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub batch_size: usize,
    pub seq_len: usize,
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
}

impl Batch {
    /// Cuts one `seq_len + 1` window per start offset out of `tokens`.
    pub fn from_windows(tokens: &[u8], starts: &[usize], seq_len: usize) -> Self {
        let mut inputs = Vec::with_capacity(starts.len() * seq_len);
        let mut targets = Vec::with_capacity(starts.len() * seq_len);
        for &s in starts {
            let w = &tokens[s..s + seq_len + 1];
            inputs.extend(w[..seq_len].iter().map(|&b| b as u32));
            targets.extend(w[1..].iter().map(|&b| b as u32));
        }
        Batch { batch_size: starts.len(), seq_len, inputs, targets }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub sources: Vec<PathBuf>,
    pub split_seed: u64,
    pub val_fraction: f64,
    pub train_tokens: usize,
    pub val_tokens: usize,
}

/// A byte stream split into a training head and a contiguous validation
/// tail.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub train: Vec<u8>,
    pub val: Vec<u8>,
    pub meta: CorpusMeta,
}

/// Splits `raw` so the last `round(len · val_fraction)` bytes become the
/// validation set. `seq_len` sets the minimum size: ten windows.
pub fn build_corpus(raw: &[u8], val_fraction: f64, seed: u64, seq_len: usize) -> Result<Corpus> {
    if !(val_fraction > 0.0 && val_fraction < 0.5) {
        return Err(Error::invalid(format!(
            "val_fraction must lie in (0, 0.5), got {val_fraction}"
        )));
    }
    if seq_len == 0 {
        return Err(Error::invalid("seq_len must be positive"));
    }
    if raw.len() < 10 * seq_len {
        return Err(Error::InsufficientData(format!(
            "corpus has {} bytes, need at least {} for sequence length {seq_len}",
            raw.len(),
            10 * seq_len
        )));
    }
    let val_len = ((raw.len() as f64 * val_fraction).round() as usize).max(1);
    let cut = raw.len() - val_len;
    Ok(Corpus {
        train: raw[..cut].to_vec(),
        val: raw[cut..].to_vec(),
        meta: CorpusMeta {
            sources: Vec::new(),
            split_seed: seed,
            val_fraction,
            train_tokens: cut,
            val_tokens: val_len,
        },
    })
}

/// Concatenates `paths` in order and splits the result.
pub fn load_corpus(paths: &[PathBuf], val_fraction: f64, seed: u64, seq_len: usize) -> Result<Corpus> {
    if paths.is_empty() {
        return Err(Error::invalid("no corpus files given"));
    }
    let mut raw = Vec::new();
    for p in paths {
        let bytes = fs::read(p).map_err(|e| Error::InvalidInput(format!("{}: {e}", p.display())))?;
        raw.extend_from_slice(&bytes);
    }
    let mut corpus = build_corpus(&raw, val_fraction, seed, seq_len)?;
    corpus.meta.sources = paths.to_vec();
    Ok(corpus)
}

const CACHE_TOKENS: &str = "tokens.bin";
const CACHE_META: &str = "corpus.json";

#[derive(Serialize, Deserialize)]
struct CacheSidecar {
    meta: CorpusMeta,
    /// Byte offset where the validation region begins in `tokens.bin`.
    split_offset: usize,
}

impl Corpus {
    pub fn bytes(&self) -> impl Iterator<Item = &u8> {
        self.train.iter().chain(&self.val)
    }

    /// Writes the raw token file and a JSON sidecar with the split offsets.
    pub fn save_cache(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut all = self.train.clone();
        all.extend_from_slice(&self.val);
        fs::write(dir.join(CACHE_TOKENS), all)?;
        let sidecar = CacheSidecar { meta: self.meta.clone(), split_offset: self.train.len() };
        fs::write(dir.join(CACHE_META), serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load_cache(dir: &Path) -> Result<Corpus> {
        let sidecar: CacheSidecar = serde_json::from_slice(&fs::read(dir.join(CACHE_META))?)?;
        let mut all = fs::read(dir.join(CACHE_TOKENS))?;
        if sidecar.split_offset > all.len() {
            return Err(Error::InvalidInput("corpus cache split offset beyond token file".into()));
        }
        let val = all.split_off(sidecar.split_offset);
        Ok(Corpus { train: all, val, meta: sidecar.meta })
    }
}

/// Samples `batch_size` uniformly placed training windows.
pub fn next_batch(corpus: &Corpus, batch_size: usize, seq_len: usize, rng: &mut SamplerRng) -> Result<Batch> {
    if batch_size == 0 || seq_len == 0 {
        return Err(Error::invalid("batch_size and seq_len must be positive"));
    }
    if corpus.train.len() <= seq_len + 1 {
        return Err(Error::InsufficientData(format!(
            "training split has {} tokens, windows need {}",
            corpus.train.len(),
            seq_len + 1
        )));
    }
    let last_start = corpus.train.len() - (seq_len + 1);
    let starts: Vec<usize> = (0..batch_size).map(|_| rng.gen_range(0..=last_start)).collect();
    Ok(Batch::from_windows(&corpus.train, &starts, seq_len))
}

/// Runs `consume` while a producer thread keeps at most `depth` sampled
/// batches queued ahead of it. The batch sequence is identical to calling
/// [`next_batch`] in a loop with the same `rng`.
pub fn with_prefetch<R>(
    corpus: &Corpus,
    batch_size: usize,
    seq_len: usize,
    mut rng: SamplerRng,
    depth: usize,
    consume: impl FnOnce(&mut dyn Iterator<Item = Result<Batch>>) -> R,
) -> R {
    let (tx, rx) = mpsc::sync_channel::<Result<Batch>>(depth.max(1));
    std::thread::scope(|scope| {
        scope.spawn(move || loop {
            let batch = next_batch(corpus, batch_size, seq_len, &mut rng);
            let stop = batch.is_err();
            if tx.send(batch).is_err() || stop {
                break;
            }
        });
        // the receiver is moved in so it drops before the scope joins,
        // which unblocks a producer waiting on a full queue
        let mut batches = rx.into_iter();
        consume(&mut batches)
    })
}

/// Perplexity of a byte unigram model fitted on the training split (add-one
/// smoothed) and scored on the validation split.
pub fn unigram_perplexity(corpus: &Corpus) -> f64 {
    let mut counts = [1.0f64; BYTE_VOCAB];
    for &b in &corpus.train {
        counts[b as usize] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    let nll: f64 = corpus
        .val
        .iter()
        .map(|&b| -(counts[b as usize] / total).ln())
        .sum::<f64>()
        / corpus.val.len() as f64;
    nll.exp()
}

/// Deterministic English-like filler text: a Zipf-weighted lexicon of
/// invented words, sticky word-to-word transitions and sentence punctuation.
/// Useful when no real corpus is at hand.
pub fn synthetic_corpus(n_bytes: usize, seed: u64) -> Vec<u8> {
    const ONSETS: [&str; 18] = [
        "b", "c", "d", "f", "g", "h", "l", "m", "n", "p", "r", "s", "t", "v", "w", "st", "tr", "ch",
    ];
    const VOWELS: [&str; 8] = ["a", "e", "i", "o", "u", "ea", "ou", "ai"];
    const CODAS: [&str; 9] = ["", "", "n", "r", "s", "t", "l", "nd", "ck"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let n_words = 4000;
    let lexicon: Vec<String> = (0..n_words)
        .map(|_| {
            let syllables = rng.gen_range(1..=3);
            (0..syllables)
                .map(|_| {
                    format!(
                        "{}{}{}",
                        ONSETS[rng.gen_range(0..ONSETS.len())],
                        VOWELS[rng.gen_range(0..VOWELS.len())],
                        CODAS[rng.gen_range(0..CODAS.len())]
                    )
                })
                .collect()
        })
        .collect();
    // Zipf weights, cumulative for inverse-CDF sampling
    let mut cdf: Vec<f64> = (1..=n_words).map(|r| 1.0 / r as f64).collect();
    for i in 1..n_words {
        cdf[i] += cdf[i - 1];
    }
    let total = cdf[n_words - 1];
    let draw = |rng: &mut ChaCha8Rng| {
        let u = rng.gen::<f64>() * total;
        cdf.partition_point(|c| *c < u).min(n_words - 1)
    };
    // each word has a few favoured successors
    let successors: Vec<[usize; 4]> = (0..n_words)
        .map(|_| [draw(&mut rng), draw(&mut rng), draw(&mut rng), draw(&mut rng)])
        .collect();

    let mut out = Vec::with_capacity(n_bytes + 64);
    let mut prev = draw(&mut rng);
    let mut sentence_len = 0usize;
    while out.len() < n_bytes {
        let word = if rng.gen_bool(0.6) {
            successors[prev][rng.gen_range(0..4)]
        } else {
            draw(&mut rng)
        };
        let text = &lexicon[word];
        if sentence_len == 0 {
            let mut chars = text.chars();
            if let Some(c) = chars.next() {
                out.extend(c.to_uppercase().to_string().bytes());
                out.extend(chars.as_str().bytes());
            }
        } else {
            out.extend(text.bytes());
        }
        sentence_len += 1;
        prev = word;
        if sentence_len >= 4 && rng.gen_bool(0.18) {
            out.push(if rng.gen_bool(0.85) { b'.' } else { b'?' });
            sentence_len = 0;
            out.push(if rng.gen_bool(0.1) { b'\n' } else { b' ' });
        } else if sentence_len > 1 && rng.gen_bool(0.06) {
            out.extend(b", ");
        } else {
            out.push(b' ');
        }
    }
    out.truncate(n_bytes);
    out
}
