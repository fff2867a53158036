//! Training data: seeded linear-regression streams and byte-level text.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::DataConfig;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::Batch;
use crate::rng::{Domain, SeedStream};

/// Fraction of a text corpus used for training; the tail is validation.
pub const TRAIN_FRACTION: f64 = 0.95;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticRegression {
    truth: Matrix<f32>,
    noise: f64,
    val_inputs: Matrix<f32>,
    val_targets: Matrix<f32>,
}

impl SyntheticRegression {
    /// Ground truth `W ~ N(0, 1/n_features)`, inputs `x ~ N(0, I)`.
    pub fn new(n_features: usize, n_outputs: usize, noise: f64, val_size: usize, streams: &SeedStream) -> Self {
        let mut rng = streams.substream(Domain::GroundTruth, 0, 0);
        let truth = Matrix::randn(n_outputs, n_features, 1.0 / (n_features as f64).sqrt(), &mut rng);
        let mut vrng = streams.substream(Domain::Validation, 0, 0);
        let (val_inputs, val_targets) = sample(&truth, noise, val_size, &mut vrng);
        Self {
            truth,
            noise,
            val_inputs,
            val_targets,
        }
    }

    pub fn truth(&self) -> &Matrix<f32> {
        &self.truth
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn batch(&self, size: usize, rng: &mut impl Rng) -> Batch<f32> {
        let (inputs, targets) = sample(&self.truth, self.noise, size, rng);
        Batch::Regression { inputs, targets }
    }

    pub fn validation(&self) -> Batch<f32> {
        Batch::Regression {
            inputs: self.val_inputs.clone(),
            targets: self.val_targets.clone(),
        }
    }
}

fn sample(truth: &Matrix<f32>, noise: f64, n: usize, rng: &mut impl Rng) -> (Matrix<f32>, Matrix<f32>) {
    let x = Matrix::<f32>::randn(n, truth.cols(), 1.0, rng);
    let mut y = x.matmul_t(truth).expect("shapes agree");
    if noise > 0.0 {
        for v in y.as_mut_slice() {
            let e: f64 = StandardNormal.sample(rng);
            *v += (e * noise) as f32;
        }
    }
    (x, y)
}

/// Byte-level corpus mapped onto a dense vocabulary of the bytes present.
#[derive(Clone, Debug, PartialEq)]
pub struct TextCorpus {
    symbols: Vec<u8>,
    train: Vec<u8>,
    val: Vec<u8>,
}

impl TextCorpus {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.is_empty() {
            return Err(Error::Data("text corpus is empty".into()));
        }
        let mut present = [false; 256];
        for &b in bytes {
            present[b as usize] = true;
        }
        let symbols: Vec<u8> = (0..=255u8).filter(|&b| present[b as usize]).collect();
        let mut index = [0u8; 256];
        for (i, &s) in symbols.iter().enumerate() {
            index[s as usize] = i as u8;
        }
        let ids: Vec<u8> = bytes.iter().map(|&b| index[b as usize]).collect();
        let split = ((ids.len() as f64) * TRAIN_FRACTION).round() as usize;
        let (train, val) = ids.split_at(split.min(ids.len()));
        Ok(Self {
            symbols,
            train: train.to_vec(),
            val: val.to_vec(),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbols(&self) -> &[u8] {
        &self.symbols
    }

    pub fn train(&self) -> &[u8] {
        &self.train
    }

    pub fn val(&self) -> &[u8] {
        &self.val
    }

    fn check_context(&self, context: usize) -> Result<()> {
        if self.train.len() <= context || self.val.len() <= context {
            return Err(Error::Data(format!(
                "corpus too short for context {context} (train {}, validation {} symbols)",
                self.train.len(),
                self.val.len()
            )));
        }
        Ok(())
    }

    /// Random windows from the training split.
    pub fn batch(&self, size: usize, context: usize, rng: &mut impl Rng) -> Result<Batch<f32>> {
        self.check_context(context)?;
        let starts: Vec<usize> = (0..size).map(|_| rng.random_range(0..self.train.len() - context)).collect();
        Ok(windows(&self.train, &starts, context))
    }

    /// Up to `max_examples` evenly spaced validation windows.
    pub fn validation(&self, context: usize, max_examples: usize) -> Result<Batch<f32>> {
        self.check_context(context)?;
        let available = self.val.len() - context;
        let n = available.min(max_examples);
        let starts: Vec<usize> = (0..n).map(|i| i * available / n).collect();
        Ok(windows(&self.val, &starts, context))
    }
}

fn windows(ids: &[u8], starts: &[usize], context: usize) -> Batch<f32> {
    let mut contexts = Vec::with_capacity(starts.len() * context);
    let mut targets = Vec::with_capacity(starts.len());
    for &s in starts {
        contexts.extend_from_slice(&ids[s..s + context]);
        targets.push(ids[s + context]);
    }
    Batch::Tokens { contexts, targets }
}

pub fn ingest_text(path: &Path) -> Result<TextCorpus> {
    let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    TextCorpus::from_bytes(&bytes)
}

pub fn ingest_synthetic(n_features: usize, n_outputs: usize, noise: f64, val_size: usize, seed: u64) -> SyntheticRegression {
    SyntheticRegression::new(n_features, n_outputs, noise, val_size, &SeedStream::new(seed))
}

/// Seeded English-like text: a Zipf-weighted lexicon of syllable words,
/// with word-to-word preferences, punctuation and line breaks.
pub fn generate_text(bytes: usize, seed: u64) -> Vec<u8> {
    const ONSETS: [&str; 18] = ["b", "c", "d", "f", "g", "h", "l", "m", "n", "p", "r", "s", "t", "v", "w", "th", "st", "ch"];
    const VOWELS: [&str; 7] = ["a", "e", "i", "o", "u", "ea", "ou"];
    const CODAS: [&str; 8] = ["", "", "n", "r", "s", "t", "l", "nd"];
    const LEXICON: usize = 400;
    const FOLLOWERS: usize = 6;

    let mut rng = SeedStream::new(seed).substream(Domain::Init, u64::MAX, 0);
    let mut words: Vec<String> = Vec::with_capacity(LEXICON);
    while words.len() < LEXICON {
        let syllables = 1 + (rng.random::<f64>() * rng.random::<f64>() * 3.0) as usize;
        let w: String = (0..syllables)
            .map(|_| {
                format!(
                    "{}{}{}",
                    ONSETS[rng.random_range(0..ONSETS.len())],
                    VOWELS[rng.random_range(0..VOWELS.len())],
                    CODAS[rng.random_range(0..CODAS.len())]
                )
            })
            .collect();
        if !words.contains(&w) {
            words.push(w);
        }
    }
    // Zipf(1) cumulative weights
    let mut cumulative = Vec::with_capacity(LEXICON);
    let mut acc = 0.0;
    for r in 0..LEXICON {
        acc += 1.0 / (r as f64 + 1.0);
        cumulative.push(acc);
    }
    let zipf = |rng: &mut crate::rng::Rng| {
        let u = rng.random::<f64>() * acc;
        cumulative.partition_point(|&c| c < u).min(LEXICON - 1)
    };
    let followers: Vec<Vec<usize>> = (0..LEXICON)
        .map(|_| (0..FOLLOWERS).map(|_| zipf(&mut rng)).collect())
        .collect();

    let mut out = Vec::with_capacity(bytes + 64);
    let mut sentences_on_line = 0;
    while out.len() < bytes {
        let len = rng.random_range(4..13);
        let mut word = zipf(&mut rng);
        for i in 0..len {
            let w = &words[word];
            if i == 0 {
                let mut chars = w.chars();
                let first = chars.next().unwrap().to_ascii_uppercase();
                out.push(first as u8);
                out.extend(chars.as_str().bytes());
            } else {
                out.extend(w.bytes());
            }
            if i + 1 < len {
                if rng.random::<f64>() < 0.08 {
                    out.push(b',');
                }
                out.push(b' ');
            }
            word = if rng.random::<f64>() < 0.75 {
                followers[word][rng.random_range(0..FOLLOWERS)]
            } else {
                zipf(&mut rng)
            };
        }
        out.push(if rng.random::<f64>() < 0.1 { b'?' } else { b'.' });
        sentences_on_line += 1;
        if sentences_on_line >= rng.random_range(2..6) {
            out.push(b'\n');
            sentences_on_line = 0;
        } else {
            out.push(b' ');
        }
    }
    out.truncate(bytes);
    out
}

/// A dataset resolved from a [`DataConfig`].
#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Regression(SyntheticRegression),
    Text(TextCorpus),
}

impl Dataset {
    pub fn load(cfg: &DataConfig, streams: &SeedStream) -> Result<Self> {
        match cfg {
            DataConfig::Synthetic {
                n_features,
                n_outputs,
                noise,
                val_size,
            } => Ok(Dataset::Regression(SyntheticRegression::new(
                *n_features,
                n_outputs.unwrap_or(*n_features),
                *noise,
                *val_size,
                streams,
            ))),
            DataConfig::TextFile { path } => Ok(Dataset::Text(ingest_text(path)?)),
            DataConfig::GeneratedText { bytes } => {
                Ok(Dataset::Text(TextCorpus::from_bytes(&generate_text(*bytes, streams.seed()))?))
            }
        }
    }

    pub fn vocab_size(&self) -> Option<usize> {
        match self {
            Dataset::Text(t) => Some(t.vocab_size()),
            Dataset::Regression(_) => None,
        }
    }

    pub fn train_batch(&self, size: usize, context: usize, step: u64, streams: &SeedStream) -> Result<Batch<f32>> {
        let mut rng = streams.substream(Domain::Batch, 0, step);
        match self {
            Dataset::Regression(r) => Ok(r.batch(size, &mut rng)),
            Dataset::Text(t) => t.batch(size, context, &mut rng),
        }
    }

    pub fn validation(&self, context: usize, max_examples: usize) -> Result<Batch<f32>> {
        match self {
            Dataset::Regression(r) => Ok(r.validation()),
            Dataset::Text(t) => t.validation(context, max_examples),
        }
    }
}
