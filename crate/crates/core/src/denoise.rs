//! Seeded target-side noising for denoising fine-tuning.
//!
//! A fixed share of pairs is chosen once per corpus; in a chosen pair every
//! target payload token is independently replaced, with probability
//! `token_replace_prob`, by a uniformly drawn token of the original payload.
//! Sources, speaker tags and appended context are never touched.
//!
//! Randomness is ChaCha8 (`rand_chacha`) seeded with `seed_from_u64(seed)`.
//! Stream 0 picks the pairs; record `i` draws from stream `i + 1`, so each
//! record's noise depends only on `(seed, i)` and not on thread scheduling.
//! Outputs for fixed seeds are frozen by golden tests.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chatprep::target_payload_span;
use crate::corpus::{BitextRecord, TokenSpan};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiseConfig {
    pub pair_fraction: f64,
    pub token_replace_prob: f64,
    pub seed: u64,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            pair_fraction: 0.30,
            token_replace_prob: 0.15,
            seed: 0,
        }
    }
}

impl DenoiseConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DenoiseError> {
        for (name, p) in [
            ("pair_fraction", self.pair_fraction),
            ("token_replace_prob", self.token_replace_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(DenoiseError::Probability { name, value: p });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DenoiseError {
    #[error("{name} = {value} is not a probability in [0, 1]")]
    Probability { name: &'static str, value: f64 },
    #[error("line {line}: cannot locate the target payload: {message}")]
    Structure { line: usize, message: String },
}

/// Generator for record `index`.
pub fn record_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// `floor(fraction * n)`, tolerant of binary rounding in decimal fractions
/// such as 0.3.
fn chosen_count(n: usize, fraction: f64) -> usize {
    let exact = fraction * n as f64;
    let k = (exact + exact.abs() * 1e-12).floor() as usize;
    k.min(n)
}

/// Sorted indices of the pairs to noise, sampled without replacement.
pub fn choose_pairs(n: usize, cfg: &DenoiseConfig) -> BTreeSet<usize> {
    let k = chosen_count(n, cfg.pair_fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    index::sample(&mut rng, n, k).into_iter().collect()
}

/// Per-position replacement decisions: `Some(j)` means "take token `j` of the
/// original list".
pub fn replacement_plan<R: Rng + ?Sized>(len: usize, prob: f64, rng: &mut R) -> Vec<Option<usize>> {
    (0..len)
        .map(|_| rng.gen_bool(prob).then(|| rng.gen_range(0..len)))
        .collect()
}

pub fn denoise_target<T: Clone, R: Rng + ?Sized>(
    tokens: &[T],
    cfg: &DenoiseConfig,
    rng: &mut R,
) -> Vec<T> {
    replacement_plan(tokens.len(), cfg.token_replace_prob, rng)
        .into_iter()
        .zip(tokens)
        .map(|(pick, tok)| pick.map_or_else(|| tok.clone(), |j| tokens[j].clone()))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiseStats {
    pub input_count: usize,
    pub chosen_count: usize,
    /// Payload tokens across chosen pairs.
    pub payload_tokens: usize,
    /// Replacement draws, including draws of the same token.
    pub replaced_tokens: usize,
    /// Positions whose token actually changed.
    pub changed_tokens: usize,
}

impl DenoiseStats {
    pub fn replacement_rate(&self) -> f64 {
        if self.payload_tokens == 0 {
            0.0
        } else {
            self.replaced_tokens as f64 / self.payload_tokens as f64
        }
    }
}

/// Byte ranges of the whitespace tokens of `text`.
fn token_ranges(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, b) in text.bytes().enumerate() {
        match (b.is_ascii_whitespace(), start) {
            (true, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, text.len()));
    }
    out
}

fn payload_span(record: &BitextRecord, n_tokens: usize) -> Result<TokenSpan, DenoiseError> {
    let structure = |message: String| DenoiseError::Structure {
        line: record.line,
        message,
    };
    let span = match record.payload_span {
        Some(span) => span,
        None => target_payload_span(&record.pair.target).map_err(|e| structure(e.to_string()))?,
    };
    if span.start > span.end || span.end > n_tokens {
        return Err(structure(format!(
            "span [{}, {}) does not fit a target of {n_tokens} tokens",
            span.start, span.end
        )));
    }
    Ok(span)
}

struct Noised {
    target: Option<String>,
    payload_tokens: usize,
    replaced: usize,
    changed: usize,
}

fn noise_record(
    index: usize,
    record: &BitextRecord,
    cfg: &DenoiseConfig,
) -> Result<Noised, DenoiseError> {
    let target = &record.pair.target;
    let ranges = token_ranges(target);
    let span = payload_span(record, ranges.len())?;
    let payload = &ranges[span.start..span.end];
    let tokens: Vec<&str> = payload.iter().map(|&(s, e)| &target[s..e]).collect();

    let mut rng = record_rng(cfg.seed, index);
    let plan = replacement_plan(tokens.len(), cfg.token_replace_prob, &mut rng);

    let mut out = String::with_capacity(target.len());
    let mut cursor = 0;
    let (mut replaced, mut changed) = (0, 0);
    for ((&(s, e), pick), &original) in payload.iter().zip(&plan).zip(&tokens) {
        let Some(j) = *pick else { continue };
        replaced += 1;
        if tokens[j] != original {
            changed += 1;
        }
        out.push_str(&target[cursor..s]);
        out.push_str(tokens[j]);
        cursor = e;
    }
    out.push_str(&target[cursor..]);
    Ok(Noised {
        target: Some(out),
        payload_tokens: tokens.len(),
        replaced,
        changed,
    })
}

/// Noises the chosen share of `records`; output order equals input order.
pub fn denoise_corpus(
    records: &[BitextRecord],
    cfg: &DenoiseConfig,
) -> Result<(Vec<BitextRecord>, DenoiseStats), DenoiseError> {
    cfg.validate()?;
    let chosen = choose_pairs(records.len(), cfg);
    let results = par::map_ordered(records, |i, record| {
        if chosen.contains(&i) {
            noise_record(i, record, cfg)
        } else {
            Ok(Noised {
                target: None,
                payload_tokens: 0,
                replaced: 0,
                changed: 0,
            })
        }
    });

    let mut stats = DenoiseStats {
        input_count: records.len(),
        chosen_count: chosen.len(),
        ..DenoiseStats::default()
    };
    let mut out = Vec::with_capacity(records.len());
    for (record, result) in records.iter().zip(results) {
        let noised = result?;
        stats.payload_tokens += noised.payload_tokens;
        stats.replaced_tokens += noised.replaced;
        stats.changed_tokens += noised.changed;
        let mut record = record.clone();
        if let Some(target) = noised.target {
            record.pair.target = target;
        }
        out.push(record);
    }
    Ok((out, stats))
}
