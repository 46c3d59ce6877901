//! Rule-based bitext filtering with per-rule drop accounting.
//!
//! Rules run in a fixed order: punctuation normalization, length, exact
//! pair dedup, then word ratio. A dropped pair is attributed to the first
//! rule that rejects it, so `input = kept + sum(dropped_by_rule)` always holds.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{words, BitextPair};
use crate::par;

/// Maps typographic punctuation to ASCII, collapses space runs and trims.
pub fn normalize_punctuation(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{00AB}' | '\u{00BB}' => out.push('"'),
            '\u{2018}' | '\u{2019}' | '\u{201A}' => out.push('\''),
            '\u{2013}' | '\u{2014}' => out.push('-'),
            '\u{2026}' => out.push_str("..."),
            ' ' | '\u{00A0}' | '\u{2009}' | '\u{202F}' => {
                if !out.ends_with(' ') {
                    out.push(' ');
                }
            }
            c => out.push(c),
        }
    }
    out.trim().to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Normalize,
    Length,
    Dedup,
    Ratio,
}

impl Rule {
    pub const ALL: [Rule; 4] = [Rule::Normalize, Rule::Length, Rule::Dedup, Rule::Ratio];

    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Normalize => "normalize",
            Rule::Length => "length",
            Rule::Dedup => "dedup",
            Rule::Ratio => "ratio",
        }
    }
}

impl FromStr for Rule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Rule::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown rule `{s}`"))
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    SentenceTooLong,
    WordTooLong,
    Duplicate,
    Ratio,
    EmptySide,
}

impl DropReason {
    pub fn rule(self) -> Rule {
        match self {
            DropReason::SentenceTooLong | DropReason::WordTooLong => Rule::Length,
            DropReason::Duplicate => Rule::Dedup,
            DropReason::Ratio | DropReason::EmptySide => Rule::Ratio,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Keep,
    Drop(DropReason),
}

/// Upper bound on `max(src/tgt, tgt/src)`, kept as an exact fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MaxRatio {
    num: u32,
    den: u32,
}

impl MaxRatio {
    pub fn new(num: u32, den: u32) -> Result<Self, ConfigError> {
        if num == 0 || den == 0 {
            return Err(ConfigError::NonPositive("max_ratio"));
        }
        if num < den {
            return Err(ConfigError::RatioBelowOne { num, den });
        }
        Ok(Self { num, den })
    }

    /// True iff `a / b > num / den`.
    fn exceeded_by(self, a: usize, b: usize) -> bool {
        (a as u128) * (self.den as u128) > (b as u128) * (self.num as u128)
    }
}

impl Default for MaxRatio {
    fn default() -> Self {
        Self { num: 4, den: 1 }
    }
}

impl FromStr for MaxRatio {
    type Err = String;

    /// Accepts `4`, `4:1` or `4/1`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (num, den) = match s.split_once([':', '/']) {
            Some((n, d)) => (n.trim(), d.trim()),
            None => (s.trim(), "1"),
        };
        let parse = |v: &str| {
            v.parse::<u32>()
                .map_err(|e| format!("bad ratio `{s}`: {e}"))
        };
        MaxRatio::new(parse(num)?, parse(den)?).map_err(|e| e.to_string())
    }
}

impl TryFrom<String> for MaxRatio {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<MaxRatio> for String {
    fn from(r: MaxRatio) -> Self {
        r.to_string()
    }
}

impl fmt::Display for MaxRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.num, self.den)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("{0} must be strictly positive")]
    NonPositive(&'static str),
    #[error("max_ratio {num}:{den} is below 1")]
    RatioBelowOne { num: u32, den: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub max_sentence_words: usize,
    pub max_word_chars: usize,
    pub max_ratio: MaxRatio,
    pub rules_enabled: BTreeSet<Rule>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            max_sentence_words: 100,
            max_word_chars: 40,
            max_ratio: MaxRatio::default(),
            rules_enabled: Rule::ALL.into_iter().collect(),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_sentence_words == 0 {
            return Err(ConfigError::NonPositive("max_sentence_words"));
        }
        if self.max_word_chars == 0 {
            return Err(ConfigError::NonPositive("max_word_chars"));
        }
        MaxRatio::new(self.max_ratio.num, self.max_ratio.den)?;
        Ok(())
    }

    pub fn enabled(&self, rule: Rule) -> bool {
        self.rules_enabled.contains(&rule)
    }
}

pub fn check_length(pair: &BitextPair, cfg: &FilterConfig) -> Verdict {
    for side in [&pair.source, &pair.target] {
        let mut count = 0;
        for word in words(side) {
            count += 1;
            if word.chars().count() > cfg.max_word_chars {
                return Verdict::Drop(DropReason::WordTooLong);
            }
        }
        if count > cfg.max_sentence_words {
            return Verdict::Drop(DropReason::SentenceTooLong);
        }
    }
    Verdict::Keep
}

pub fn check_ratio(pair: &BitextPair, cfg: &FilterConfig) -> Verdict {
    let src = words(&pair.source).count();
    let tgt = words(&pair.target).count();
    if src == 0 || tgt == 0 {
        return Verdict::Drop(DropReason::EmptySide);
    }
    let ratio = cfg.max_ratio;
    if ratio.exceeded_by(src, tgt) || ratio.exceeded_by(tgt, src) {
        Verdict::Drop(DropReason::Ratio)
    } else {
        Verdict::Keep
    }
}

/// Seen-set of exact (source, target) pairs, stored as SHA-256 digests.
#[derive(Debug, Default)]
pub struct DedupSet {
    seen: HashSet<[u8; 32]>,
}

impl DedupSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns true the first time a pair is seen.
    pub fn insert(&mut self, pair: &BitextPair) -> bool {
        self.seen.insert(pair_digest(pair))
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

fn pair_digest(pair: &BitextPair) -> [u8; 32] {
    let mut h = Sha256::new();
    // Length prefix keeps ("ab","c") and ("a","bc") apart.
    h.update((pair.source.len() as u64).to_le_bytes());
    h.update(pair.source.as_bytes());
    h.update(pair.target.as_bytes());
    h.finalize().into()
}

/// Keeps the first occurrence of each exact pair, preserving order.
pub fn dedup<I>(pairs: I) -> impl Iterator<Item = BitextPair>
where
    I: IntoIterator<Item = BitextPair>,
{
    let mut seen = DedupSet::new();
    pairs.into_iter().filter(move |p| seen.insert(p))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input_count: usize,
    pub kept_count: usize,
    pub dropped_by_rule: BTreeMap<Rule, usize>,
    pub dropped_by_reason: BTreeMap<DropReason, usize>,
}

impl FilterReport {
    fn for_config(cfg: &FilterConfig) -> Self {
        let dropped_by_rule = cfg
            .rules_enabled
            .iter()
            .filter(|r| **r != Rule::Normalize)
            .map(|r| (*r, 0))
            .collect();
        Self {
            dropped_by_rule,
            ..Self::default()
        }
    }

    fn record_drop(&mut self, reason: DropReason) {
        *self.dropped_by_rule.entry(reason.rule()).or_default() += 1;
        *self.dropped_by_reason.entry(reason).or_default() += 1;
    }

    pub fn total_dropped(&self) -> usize {
        self.dropped_by_rule.values().sum()
    }

    pub fn dropped(&self, rule: Rule) -> usize {
        self.dropped_by_rule.get(&rule).copied().unwrap_or(0)
    }

    /// `input_count == kept_count + sum(dropped_by_rule)`.
    pub fn is_balanced(&self) -> bool {
        self.input_count == self.kept_count + self.total_dropped()
    }
}

struct Screened {
    pair: BitextPair,
    length: Verdict,
    ratio: Verdict,
}

/// Runs the full rule chain; survivors keep their input order.
///
/// Per-pair checks run in parallel; dedup is a single ordered pass.
pub fn filter_corpus(
    pairs: Vec<BitextPair>,
    cfg: &FilterConfig,
) -> (Vec<BitextPair>, FilterReport) {
    let mut report = FilterReport::for_config(cfg);
    report.input_count = pairs.len();

    let screened = par::map_ordered(&pairs, |_, pair| {
        let pair = if cfg.enabled(Rule::Normalize) {
            BitextPair {
                source: normalize_punctuation(&pair.source),
                target: normalize_punctuation(&pair.target),
                origin: pair.origin,
            }
        } else {
            pair.clone()
        };
        let length = if cfg.enabled(Rule::Length) {
            check_length(&pair, cfg)
        } else {
            Verdict::Keep
        };
        let ratio = if cfg.enabled(Rule::Ratio) {
            check_ratio(&pair, cfg)
        } else {
            Verdict::Keep
        };
        Screened {
            pair,
            length,
            ratio,
        }
    });
    drop(pairs);

    let mut seen = DedupSet::new();
    let mut kept = Vec::with_capacity(screened.len());
    for s in screened {
        if let Verdict::Drop(reason) = s.length {
            report.record_drop(reason);
            continue;
        }
        if cfg.enabled(Rule::Dedup) && !seen.insert(&s.pair) {
            report.record_drop(DropReason::Duplicate);
            continue;
        }
        if let Verdict::Drop(reason) = s.ratio {
            report.record_drop(reason);
            continue;
        }
        kept.push(s.pair);
    }
    report.kept_count = kept.len();
    (kept, report)
}
