//! Bitext and chat-dialogue data model with streaming TSV/JSONL I/O.
//!
//! Everything here is UTF-8; invalid UTF-8 is always a hard error, even when
//! the caller asked to skip malformed rows. "Words" are ASCII-whitespace
//! separated substrings (see [`words`]), which is the unit every downstream
//! length, ratio and noising rule counts in.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Whitespace tokenization shared by every stage.
pub fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split_ascii_whitespace()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    #[default]
    Genuine,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitextPair {
    pub source: String,
    pub target: String,
    #[serde(default)]
    pub origin: Origin,
}

impl BitextPair {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            target: target.into(),
            origin: Origin::Genuine,
        }
    }

    pub fn synthetic(source: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            origin: Origin::Synthetic,
            ..Self::new(source, target)
        }
    }

    fn has_empty_side(&self) -> bool {
        self.source.trim().is_empty() || self.target.trim().is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Tsv,
    Jsonl,
}

impl Format {
    /// `.jsonl` / `.json` paths are JSONL, anything else is TSV.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Format::Jsonl,
            _ => Format::Tsv,
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsv" => Ok(Format::Tsv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(format!("unknown format `{other}` (expected tsv or jsonl)")),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Tsv => "tsv",
            Format::Jsonl => "jsonl",
        })
    }
}

/// Half-open range `[start, end)` of whitespace-token positions.
///
/// Serialized as a two-element array, matching the `target_payload_span`
/// field of the JSONL schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl From<[usize; 2]> for TokenSpan {
    fn from([start, end]: [usize; 2]) -> Self {
        Self { start, end }
    }
}

impl From<TokenSpan> for [usize; 2] {
    fn from(span: TokenSpan) -> Self {
        [span.start, span.end]
    }
}

/// A parsed pair together with its 1-based input line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitextRecord {
    pub line: usize,
    pub pair: BitextPair,
    pub payload_span: Option<TokenSpan>,
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: invalid UTF-8")]
    InvalidUtf8 { line: usize },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("read failed: {0}")]
    Io(#[from] io::Error),
}

impl ParseError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ParseError::InvalidUtf8 { line } | ParseError::Malformed { line, .. } => Some(*line),
            ParseError::Io(_) => None,
        }
    }

    /// Only malformed rows may be skipped; encoding and I/O failures never are.
    pub fn is_skippable(&self) -> bool {
        matches!(self, ParseError::Malformed { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailMode {
    #[default]
    FailFast,
    SkipAndCount,
}

impl FromStr for FailMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fail_fast" | "fail-fast" => Ok(FailMode::FailFast),
            "skip_and_count" | "skip-and-count" | "skip" => Ok(FailMode::SkipAndCount),
            other => Err(format!("unknown fail mode `{other}`")),
        }
    }
}

#[derive(Deserialize)]
struct JsonlPairIn {
    source: String,
    target: String,
    #[serde(default)]
    origin: Origin,
    #[serde(default)]
    target_payload_span: Option<TokenSpan>,
}

#[derive(Serialize)]
struct JsonlPairOut<'a> {
    source: &'a str,
    target: &'a str,
    origin: Origin,
    #[serde(skip_serializing_if = "Option::is_none")]
    target_payload_span: Option<TokenSpan>,
}

/// Reads one `\n`-terminated line as UTF-8; `Ok(None)` at end of input.
fn next_line<R: BufRead>(
    reader: &mut R,
    buf: &mut Vec<u8>,
    line: usize,
) -> Result<Option<String>, ParseError> {
    buf.clear();
    if reader.read_until(b'\n', buf)? == 0 {
        return Ok(None);
    }
    if buf.last() == Some(&b'\n') {
        buf.pop();
    }
    String::from_utf8(std::mem::take(buf))
        .map(Some)
        .map_err(|_| ParseError::InvalidUtf8 { line })
}

/// Lazy bitext parser returned by [`parse_bitext`].
pub struct BitextReader<R> {
    reader: R,
    format: Format,
    line: usize,
    buf: Vec<u8>,
    done: bool,
}

impl<R: BufRead> BitextReader<R> {
    fn parse_line(&self, text: &str) -> Result<Option<BitextRecord>, ParseError> {
        let line = self.line;
        let malformed = |message: String| ParseError::Malformed { line, message };
        let (pair, payload_span) = match self.format {
            Format::Tsv => {
                let mut fields = text.split('\t');
                let (Some(source), Some(target), None) =
                    (fields.next(), fields.next(), fields.next())
                else {
                    let tabs = text.matches('\t').count();
                    return Err(malformed(format!("expected exactly one tab, found {tabs}")));
                };
                (BitextPair::new(source, target), None)
            }
            Format::Jsonl => {
                if text.trim().is_empty() {
                    return Ok(None);
                }
                let raw: JsonlPairIn =
                    serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
                let pair = BitextPair {
                    source: raw.source,
                    target: raw.target,
                    origin: raw.origin,
                };
                (pair, raw.target_payload_span)
            }
        };
        if pair.has_empty_side() {
            return Err(malformed("empty source or target".into()));
        }
        Ok(Some(BitextRecord {
            line,
            pair,
            payload_span,
        }))
    }
}

impl<R: BufRead> Iterator for BitextReader<R> {
    type Item = Result<BitextRecord, ParseError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            self.line += 1;
            let text = match next_line(&mut self.reader, &mut self.buf, self.line) {
                Ok(Some(text)) => text,
                Ok(None) => {
                    self.done = true;
                    return None;
                }
                Err(e) => {
                    // Encoding and I/O errors end the stream.
                    self.done = true;
                    return Some(Err(e));
                }
            };
            match self.parse_line(&text) {
                Ok(Some(record)) => return Some(Ok(record)),
                Ok(None) => continue,
                Err(e) => return Some(Err(e)),
            }
        }
        None
    }
}

/// Streams pairs from `reader` in input order.
pub fn parse_bitext<R: BufRead>(reader: R, format: Format) -> BitextReader<R> {
    BitextReader {
        reader,
        format,
        line: 0,
        buf: Vec::new(),
        done: false,
    }
}

#[derive(Debug, Default)]
pub struct ReadOutcome {
    pub records: Vec<BitextRecord>,
    pub skipped: usize,
}

impl ReadOutcome {
    pub fn pairs(&self) -> Vec<BitextPair> {
        self.records.iter().map(|r| r.pair.clone()).collect()
    }
}

/// Collects a whole bitext stream, applying `mode` to malformed rows.
pub fn read_bitext<R: BufRead>(
    reader: R,
    format: Format,
    mode: FailMode,
) -> Result<ReadOutcome, ParseError> {
    let mut out = ReadOutcome::default();
    for item in parse_bitext(reader, format) {
        match item {
            Ok(record) => out.records.push(record),
            Err(e) if mode == FailMode::SkipAndCount && e.is_skippable() => out.skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[derive(Debug, Error)]
pub enum WriteError {
    #[error("pair {index}: {field} contains a {what}, which TSV cannot encode")]
    Unencodable {
        index: usize,
        field: &'static str,
        what: &'static str,
    },
    #[error("pair {index}: empty source or target")]
    EmptySide { index: usize },
    #[error("write failed: {0}")]
    Io(#[from] io::Error),
}

/// Incremental writer for either bitext format.
///
/// TSV has no column for `origin` or span metadata; both are dropped there.
pub struct BitextWriter<W> {
    inner: W,
    format: Format,
    written: usize,
}

impl<W: Write> BitextWriter<W> {
    pub fn new(inner: W, format: Format) -> Self {
        Self {
            inner,
            format,
            written: 0,
        }
    }

    pub fn write_pair(&mut self, pair: &BitextPair) -> Result<(), WriteError> {
        self.write_record(pair, None)
    }

    pub fn write_record(
        &mut self,
        pair: &BitextPair,
        payload_span: Option<TokenSpan>,
    ) -> Result<(), WriteError> {
        let index = self.written;
        if pair.has_empty_side() {
            return Err(WriteError::EmptySide { index });
        }
        match self.format {
            Format::Tsv => {
                for (field, text) in [("source", &pair.source), ("target", &pair.target)] {
                    let what = if text.contains('\t') {
                        "tab"
                    } else if text.contains('\n') {
                        "newline"
                    } else {
                        continue;
                    };
                    return Err(WriteError::Unencodable { index, field, what });
                }
                writeln!(self.inner, "{}\t{}", pair.source, pair.target)?;
            }
            Format::Jsonl => {
                let out = JsonlPairOut {
                    source: &pair.source,
                    target: &pair.target,
                    origin: pair.origin,
                    target_payload_span: payload_span,
                };
                serde_json::to_writer(&mut self.inner, &out).map_err(io::Error::from)?;
                self.inner.write_all(b"\n")?;
            }
        }
        self.written += 1;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

pub fn write_bitext<'a, W: Write>(
    writer: W,
    pairs: impl IntoIterator<Item = &'a BitextPair>,
    format: Format,
) -> Result<W, WriteError> {
    let mut w = BitextWriter::new(writer, format);
    for pair in pairs {
        w.write_pair(pair)?;
    }
    Ok(w.into_inner())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Agent,
    Customer,
}

impl FromStr for Speaker {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "agent" => Ok(Speaker::Agent),
            "customer" => Ok(Speaker::Customer),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRecord {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub speaker: Speaker,
    pub src_text: String,
    pub tgt_text: String,
    pub src_lang: String,
    pub tgt_lang: String,
}

impl ChatRecord {
    /// Text of this utterance in `lang`, if either side is in that language.
    pub fn text_in(&self, lang: &str) -> Option<&str> {
        if self.src_lang == lang {
            Some(&self.src_text)
        } else if self.tgt_lang == lang {
            Some(&self.tgt_text)
        } else {
            None
        }
    }

    /// Text of the side that is *not* in `lang`.
    pub fn text_not_in(&self, lang: &str) -> Option<&str> {
        if self.src_lang == lang && self.tgt_lang != lang {
            Some(&self.tgt_text)
        } else if self.tgt_lang == lang && self.src_lang != lang {
            Some(&self.src_text)
        } else {
            None
        }
    }
}

/// One dialogue; turns are strictly ascending and contiguous from 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    dialogue_id: String,
    turns: Vec<ChatRecord>,
}

impl Dialogue {
    /// Sorts `turns` by index and validates the contiguity invariant.
    pub fn new(
        dialogue_id: impl Into<String>,
        mut turns: Vec<ChatRecord>,
    ) -> Result<Self, ChatError> {
        let dialogue_id = dialogue_id.into();
        turns.sort_by_key(|t| t.turn_index);
        for (expected, turn) in turns.iter().enumerate() {
            if turn.dialogue_id != dialogue_id {
                return Err(ChatError::ForeignTurn {
                    dialogue_id,
                    found: turn.dialogue_id.clone(),
                });
            }
            if expected > 0 && turns[expected - 1].turn_index == turn.turn_index {
                return Err(ChatError::DuplicateTurn {
                    dialogue_id,
                    turn_index: turn.turn_index,
                });
            }
            if turn.turn_index != expected {
                return Err(ChatError::TurnGap {
                    dialogue_id,
                    expected,
                    found: turn.turn_index,
                });
            }
        }
        Ok(Self { dialogue_id, turns })
    }

    pub fn id(&self) -> &str {
        &self.dialogue_id
    }

    pub fn turns(&self) -> &[ChatRecord] {
        &self.turns
    }

    pub fn turn(&self, turn_index: usize) -> Option<&ChatRecord> {
        self.turns.get(turn_index)
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("line {line}: invalid UTF-8")]
    InvalidUtf8 { line: usize },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unknown speaker `{value}` (expected agent or customer)")]
    UnknownSpeaker { line: usize, value: String },
    #[error("dialogue {dialogue_id}: duplicate turn_index {turn_index}")]
    DuplicateTurn {
        dialogue_id: String,
        turn_index: usize,
    },
    #[error("dialogue {dialogue_id}: turn_index gap, expected {expected} but found {found}")]
    TurnGap {
        dialogue_id: String,
        expected: usize,
        found: usize,
    },
    #[error("dialogue {dialogue_id}: contains a turn of dialogue {found}")]
    ForeignTurn { dialogue_id: String, found: String },
    #[error("read failed: {0}")]
    Io(#[from] io::Error),
}

#[derive(Deserialize)]
struct ChatRecordIn {
    dialogue_id: String,
    turn_index: usize,
    speaker: String,
    src_text: String,
    tgt_text: String,
    src_lang: String,
    tgt_lang: String,
}

/// Parses chat JSONL into dialogues ordered by `dialogue_id`, turns by index.
pub fn parse_chat<R: BufRead>(mut reader: R) -> Result<Vec<Dialogue>, ChatError> {
    let mut groups: BTreeMap<String, Vec<ChatRecord>> = BTreeMap::new();
    let mut buf = Vec::new();
    let mut line = 0;
    loop {
        line += 1;
        let text = match next_line(&mut reader, &mut buf, line) {
            Ok(Some(text)) => text,
            Ok(None) => break,
            Err(ParseError::InvalidUtf8 { line }) => return Err(ChatError::InvalidUtf8 { line }),
            Err(ParseError::Io(e)) => return Err(ChatError::Io(e)),
            Err(ParseError::Malformed { line, message }) => {
                return Err(ChatError::Malformed { line, message })
            }
        };
        if text.trim().is_empty() {
            continue;
        }
        let raw: ChatRecordIn = serde_json::from_str(&text).map_err(|e| ChatError::Malformed {
            line,
            message: e.to_string(),
        })?;
        let speaker = raw
            .speaker
            .parse()
            .map_err(|value| ChatError::UnknownSpeaker { line, value })?;
        groups
            .entry(raw.dialogue_id.clone())
            .or_default()
            .push(ChatRecord {
                dialogue_id: raw.dialogue_id,
                turn_index: raw.turn_index,
                speaker,
                src_text: raw.src_text,
                tgt_text: raw.tgt_text,
                src_lang: raw.src_lang,
                tgt_lang: raw.tgt_lang,
            });
    }
    groups
        .into_iter()
        .map(|(id, turns)| Dialogue::new(id, turns))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chat_line(id: &str, turn: usize, speaker: &str) -> String {
        format!(
            r#"{{"dialogue_id":"{id}","turn_index":{turn},"speaker":"{speaker}","src_text":"s{turn}","tgt_text":"t{turn}","src_lang":"de","tgt_lang":"en"}}"#
        )
    }

    #[test]
    fn parses_single_tsv_row() {
        let out =
            read_bitext("Hello\tHallo\n".as_bytes(), Format::Tsv, FailMode::FailFast).unwrap();
        assert_eq!(out.pairs(), vec![BitextPair::new("Hello", "Hallo")]);
        assert_eq!(out.skipped, 0);
    }

    #[test]
    fn two_tabs_fail_fast_at_line_one() {
        let err = read_bitext("a\tb\tc\n".as_bytes(), Format::Tsv, FailMode::FailFast).unwrap_err();
        assert_eq!(err.line(), Some(1));
    }

    #[test]
    fn skip_mode_counts_malformed_rows() {
        let input = "a\tb\nbroken\nc\td\n";
        let out = read_bitext(input.as_bytes(), Format::Tsv, FailMode::SkipAndCount).unwrap();
        assert_eq!(
            out.pairs(),
            vec![BitextPair::new("a", "b"), BitextPair::new("c", "d")]
        );
        assert_eq!(out.skipped, 1);
        assert_eq!(out.records[1].line, 3);
    }

    #[test]
    fn invalid_utf8_is_never_skipped() {
        let input: &[u8] = b"a\tb\n\xff\xfe\tx\n";
        let err = read_bitext(input, Format::Tsv, FailMode::SkipAndCount).unwrap_err();
        assert!(matches!(err, ParseError::InvalidUtf8 { line: 2 }));
    }

    #[test]
    fn empty_side_rejected_at_parse() {
        let err = read_bitext("  \tb\n".as_bytes(), Format::Tsv, FailMode::FailFast).unwrap_err();
        assert!(err.is_skippable());
    }

    #[test]
    fn jsonl_origin_defaults_to_genuine_and_keeps_span() {
        let input =
            "{\"source\":\"a\",\"target\":\"<agent> b c\",\"target_payload_span\":[1,3]}\n\n\
                     {\"source\":\"x\",\"target\":\"y\",\"origin\":\"synthetic\"}\n";
        let out = read_bitext(input.as_bytes(), Format::Jsonl, FailMode::FailFast).unwrap();
        assert_eq!(out.records[0].pair.origin, Origin::Genuine);
        assert_eq!(out.records[0].payload_span, Some(TokenSpan::new(1, 3)));
        assert_eq!(out.records[1].pair.origin, Origin::Synthetic);
        assert_eq!(out.records[1].line, 3);
    }

    #[test]
    fn tsv_write_format() {
        let bytes = write_bitext(Vec::new(), &[BitextPair::new("a", "b")], Format::Tsv).unwrap();
        assert_eq!(bytes, b"a\tb\n");
    }

    #[test]
    fn tsv_write_rejects_embedded_tab() {
        let err =
            write_bitext(Vec::new(), &[BitextPair::new("a\tx", "b")], Format::Tsv).unwrap_err();
        assert!(matches!(
            err,
            WriteError::Unencodable {
                field: "source",
                ..
            }
        ));
    }

    #[test]
    fn chat_groups_and_sorts() {
        let input = [chat_line("d1", 1, "agent"), chat_line("d1", 0, "customer")].join("\n");
        let dialogues = parse_chat(input.as_bytes()).unwrap();
        assert_eq!(dialogues.len(), 1);
        assert_eq!(dialogues[0].len(), 2);
        assert_eq!(dialogues[0].turns()[0].speaker, Speaker::Customer);
    }

    #[test]
    fn chat_two_dialogues() {
        let input = [chat_line("d2", 0, "agent"), chat_line("d1", 0, "agent")].join("\n");
        let dialogues = parse_chat(input.as_bytes()).unwrap();
        let ids: Vec<_> = dialogues.iter().map(Dialogue::id).collect();
        assert_eq!(ids, ["d1", "d2"]);
    }

    #[test]
    fn chat_gap_names_dialogue() {
        let input = [chat_line("d1", 0, "agent"), chat_line("d1", 2, "agent")].join("\n");
        let err = parse_chat(input.as_bytes()).unwrap_err();
        assert!(
            matches!(err, ChatError::TurnGap { ref dialogue_id, expected: 1, found: 2 } if dialogue_id == "d1")
        );
        assert!(err.to_string().contains("d1"));
    }

    #[test]
    fn chat_duplicate_turn() {
        let input = [chat_line("d1", 0, "agent"), chat_line("d1", 0, "customer")].join("\n");
        let err = parse_chat(input.as_bytes()).unwrap_err();
        assert!(matches!(
            err,
            ChatError::DuplicateTurn { turn_index: 0, .. }
        ));
    }

    #[test]
    fn chat_unknown_speaker() {
        let input = chat_line("d1", 0, "bot");
        let err = parse_chat(input.as_bytes()).unwrap_err();
        assert!(matches!(err, ChatError::UnknownSpeaker { line: 1, ref value } if value == "bot"));
    }

    fn field() -> impl Strategy<Value = String> {
        // Any text without tab/newline that is not blank.
        "[^\t\n]{0,12}".prop_filter("non-blank", |s| !s.trim().is_empty())
    }

    fn pair() -> impl Strategy<Value = BitextPair> {
        (field(), field(), any::<bool>()).prop_map(|(s, t, synthetic)| BitextPair {
            source: s,
            target: t,
            origin: if synthetic {
                Origin::Synthetic
            } else {
                Origin::Genuine
            },
        })
    }

    proptest! {
        #[test]
        fn jsonl_round_trip(pairs in prop::collection::vec(pair(), 0..20)) {
            let bytes = write_bitext(Vec::new(), &pairs, Format::Jsonl).unwrap();
            let back = read_bitext(bytes.as_slice(), Format::Jsonl, FailMode::FailFast).unwrap();
            prop_assert_eq!(back.pairs(), pairs);
        }

        #[test]
        fn tsv_round_trip(pairs in prop::collection::vec(pair(), 0..20)) {
            // TSV carries no origin column, so only genuine pairs round-trip.
            let pairs: Vec<_> = pairs
                .into_iter()
                .map(|p| BitextPair { origin: Origin::Genuine, ..p })
                .collect();
            let bytes = write_bitext(Vec::new(), &pairs, Format::Tsv).unwrap();
            let back = read_bitext(bytes.as_slice(), Format::Tsv, FailMode::FailFast).unwrap();
            prop_assert_eq!(back.pairs(), pairs);
        }
    }
}
