//! Fine-tuning corpus construction for chat translation: synthetic-data
//! tagging, speaker tags and prompt-style context concatenation.
//!
//! A prepared side has the shape
//!
//! ```text
//! <speaker> payload <context begins> ctx1 <SEP> ctx2 <SEP> ctx3
//! ```
//!
//! where the speaker tag is optional and the indicator is omitted when
//! there is no context. Context utterances are ordered nearest first, so
//! the output for `n_prev = m` is a prefix of the output for `m + 1`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{words, BitextPair, ChatRecord, Dialogue, Origin, Speaker, TokenSpan};

pub const BT_TAG: &str = "<BT>";
pub const AGENT_TAG: &str = "<agent>";
pub const CUSTOMER_TAG: &str = "<customer>";
pub const CONTEXT_TAG: &str = "<context begins>";
pub const SEP_TAG: &str = "<SEP>";

/// Every reserved literal. Input text containing one is rejected.
pub const RESERVED_TAGS: [&str; 5] = [BT_TAG, AGENT_TAG, CUSTOMER_TAG, CONTEXT_TAG, SEP_TAG];

/// Largest supported number of context utterances.
pub const MAX_PREV: usize = 3;

const CONTEXT_JOIN: &str = " <context begins> ";
const SEP_JOIN: &str = " <SEP> ";

pub fn speaker_tag(speaker: Speaker) -> &'static str {
    match speaker {
        Speaker::Agent => AGENT_TAG,
        Speaker::Customer => CUSTOMER_TAG,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    /// Every context utterance is taken in the current side's language.
    #[default]
    SameLanguage,
    /// Every context utterance is taken in its speaker's own language on the
    /// source side, and in the other language on the target side.
    MixedLanguage,
}

impl FromStr for ContextMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "same" | "same_language" => Ok(ContextMode::SameLanguage),
            "mixed" | "mixed_language" => Ok(ContextMode::MixedLanguage),
            other => Err(format!(
                "unknown context mode `{other}` (expected same or mixed)"
            )),
        }
    }
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContextMode::SameLanguage => "same",
            ContextMode::MixedLanguage => "mixed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextOrder {
    #[default]
    NearestFirst,
    OldestFirst,
}

impl FromStr for ContextOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nearest-first" | "nearest_first" => Ok(ContextOrder::NearestFirst),
            "oldest-first" | "oldest_first" => Ok(ContextOrder::OldestFirst),
            other => Err(format!("unknown context order `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextConfig {
    n_prev: usize,
    pub mode: ContextMode,
    pub order: ContextOrder,
    pub speaker_tags: bool,
    /// Language the agent speaks; used by mixed mode.
    pub agent_lang: String,
    /// Language the customer speaks; used by mixed mode.
    pub customer_lang: String,
}

impl ContextConfig {
    pub fn new(n_prev: usize, mode: ContextMode) -> Result<Self, PrepError> {
        if n_prev > MAX_PREV {
            return Err(PrepError::TooManyPrevious(n_prev));
        }
        Ok(Self {
            n_prev,
            mode,
            order: ContextOrder::default(),
            speaker_tags: true,
            agent_lang: "en".into(),
            customer_lang: "de".into(),
        })
    }

    pub fn n_prev(&self) -> usize {
        self.n_prev
    }

    pub fn with_order(mut self, order: ContextOrder) -> Self {
        self.order = order;
        self
    }

    pub fn with_speaker_tags(mut self, on: bool) -> Self {
        self.speaker_tags = on;
        self
    }

    pub fn with_languages(mut self, agent: impl Into<String>, customer: impl Into<String>) -> Self {
        self.agent_lang = agent.into();
        self.customer_lang = customer.into();
        self
    }

    fn speaker_lang(&self, speaker: Speaker) -> &str {
        match speaker {
            Speaker::Agent => &self.agent_lang,
            Speaker::Customer => &self.customer_lang,
        }
    }
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self::new(0, ContextMode::SameLanguage).expect("0 is in range")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PrepError {
    #[error("only synthetic pairs can be tagged with {BT_TAG}")]
    NotSynthetic,
    #[error("source is already tagged with {BT_TAG}")]
    AlreadyTagged,
    #[error("text contains the reserved tag `{tag}`: {text:?}")]
    ReservedTag { tag: &'static str, text: String },
    #[error("n_prev {0} is out of range 0..={MAX_PREV}")]
    TooManyPrevious(usize),
    #[error("dialogue {dialogue_id} has no turn {turn_index}")]
    UnknownTurn {
        dialogue_id: String,
        turn_index: usize,
    },
    #[error("dialogue {dialogue_id} turn {turn_index} has no side in language `{lang}`")]
    MissingLanguage {
        dialogue_id: String,
        turn_index: usize,
        lang: String,
    },
}

/// Rejects text that already contains a reserved tag, including an
/// indicator split across irregular whitespace.
pub fn check_reserved(text: &str) -> Result<(), PrepError> {
    let found = RESERVED_TAGS
        .into_iter()
        .find(|tag| text.contains(tag))
        .or_else(|| {
            let toks: Vec<_> = words(text).collect();
            toks.windows(2)
                .any(|w| w == ["<context", "begins>"])
                .then_some(CONTEXT_TAG)
        });
    match found {
        Some(tag) => Err(PrepError::ReservedTag {
            tag,
            text: text.to_string(),
        }),
        None => Ok(()),
    }
}

fn first_token(text: &str) -> Option<&str> {
    words(text).next()
}

/// Prefixes `<BT> ` to the source of a synthetic pair.
pub fn tag_synthetic(pair: &BitextPair) -> Result<BitextPair, PrepError> {
    if pair.origin != Origin::Synthetic {
        return Err(PrepError::NotSynthetic);
    }
    if first_token(&pair.source) == Some(BT_TAG) {
        return Err(PrepError::AlreadyTagged);
    }
    check_reserved(&pair.source)?;
    Ok(BitextPair {
        source: format!("{BT_TAG} {}", pair.source),
        target: pair.target.clone(),
        origin: pair.origin,
    })
}

/// Prepends the speaker tag to both sides.
pub fn tag_speaker(rec: &ChatRecord) -> BitextPair {
    let tag = speaker_tag(rec.speaker);
    BitextPair::new(
        format!("{tag} {}", rec.src_text),
        format!("{tag} {}", rec.tgt_text),
    )
}

/// Removes a leading speaker or `<BT>` tag and any appended context.
pub fn strip_tags(text: &str) -> &str {
    let mut rest = text;
    for tag in [AGENT_TAG, CUSTOMER_TAG, BT_TAG] {
        if rest == tag {
            return "";
        }
        if let Some(r) = rest.strip_prefix(tag).and_then(|r| r.strip_prefix(' ')) {
            rest = r;
            break;
        }
    }
    match rest.find(CONTEXT_JOIN) {
        Some(i) => &rest[..i],
        None => rest,
    }
}

/// A context-augmented pair plus the token range of the target payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedPair {
    pub pair: BitextPair,
    pub target_payload_span: TokenSpan,
}

fn side(
    rec: &ChatRecord,
    lang: &str,
    pick: impl for<'a> Fn(&'a ChatRecord, &str) -> Option<&'a str>,
) -> Result<String, PrepError> {
    pick(rec, lang)
        .map(str::to_string)
        .ok_or_else(|| PrepError::MissingLanguage {
            dialogue_id: rec.dialogue_id.clone(),
            turn_index: rec.turn_index,
            lang: lang.to_string(),
        })
}

fn assemble(head: String, context: &[String]) -> String {
    if context.is_empty() {
        head
    } else {
        format!("{head}{CONTEXT_JOIN}{}", context.join(SEP_JOIN))
    }
}

/// Builds the training pair for one turn with up to `n_prev` context turns.
pub fn build_context(
    d: &Dialogue,
    turn_index: usize,
    cfg: &ContextConfig,
) -> Result<BitextPair, PrepError> {
    prepare_turn(d, turn_index, cfg).map(|p| p.pair)
}

/// Same as [`build_context`], also reporting the target payload span.
pub fn prepare_turn(
    d: &Dialogue,
    turn_index: usize,
    cfg: &ContextConfig,
) -> Result<PreparedPair, PrepError> {
    let current = d.turn(turn_index).ok_or_else(|| PrepError::UnknownTurn {
        dialogue_id: d.id().to_string(),
        turn_index,
    })?;
    check_reserved(&current.src_text)?;
    check_reserved(&current.tgt_text)?;

    let k = cfg.n_prev.min(turn_index);
    let mut prev: Vec<&ChatRecord> = d.turns()[turn_index - k..turn_index].iter().rev().collect();
    if cfg.order == ContextOrder::OldestFirst {
        prev.reverse();
    }

    let mut src_ctx = Vec::with_capacity(k);
    let mut tgt_ctx = Vec::with_capacity(k);
    for rec in prev {
        let (s, t) = match cfg.mode {
            ContextMode::SameLanguage => (
                side(rec, &current.src_lang, ChatRecord::text_in)?,
                side(rec, &current.tgt_lang, ChatRecord::text_in)?,
            ),
            ContextMode::MixedLanguage => {
                let own = cfg.speaker_lang(rec.speaker);
                (
                    side(rec, own, ChatRecord::text_in)?,
                    side(rec, own, ChatRecord::text_not_in)?,
                )
            }
        };
        check_reserved(&s)?;
        check_reserved(&t)?;
        src_ctx.push(s);
        tgt_ctx.push(t);
    }

    let (src_head, tgt_head, offset) = if cfg.speaker_tags {
        let tagged = tag_speaker(current);
        (tagged.source, tagged.target, 1)
    } else {
        (current.src_text.clone(), current.tgt_text.clone(), 0)
    };
    let payload_len = words(&current.tgt_text).count();
    Ok(PreparedPair {
        pair: BitextPair::new(assemble(src_head, &src_ctx), assemble(tgt_head, &tgt_ctx)),
        target_payload_span: TokenSpan::new(offset, offset + payload_len),
    })
}

/// Prepares every turn of every dialogue in (dialogue, turn) order.
pub fn prepare_corpus(
    dialogues: &[Dialogue],
    cfg: &ContextConfig,
) -> Result<Vec<PreparedPair>, PrepError> {
    dialogues
        .iter()
        .flat_map(|d| (0..d.len()).map(move |i| prepare_turn(d, i, cfg)))
        .collect()
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("token {position}: {message}")]
pub struct SpanError {
    pub position: usize,
    pub message: String,
}

/// Recovers the payload token span of a prepared side.
///
/// The payload starts after an optional leading speaker/`<BT>` tag and ends
/// before the `<context begins>` indicator. Tag tokens anywhere else in the
/// payload make the structure ambiguous and are reported as errors.
pub fn target_payload_span(text: &str) -> Result<TokenSpan, SpanError> {
    let toks: Vec<&str> = words(text).collect();
    let start = match toks.first() {
        Some(&t) if t == AGENT_TAG || t == CUSTOMER_TAG || t == BT_TAG => 1,
        _ => 0,
    };
    let mut end = toks.len();
    for (i, &tok) in toks.iter().enumerate().skip(start) {
        if tok == "<context" && toks.get(i + 1) == Some(&"begins>") {
            end = i;
            break;
        }
        if tok == AGENT_TAG || tok == CUSTOMER_TAG || tok == BT_TAG || tok == SEP_TAG {
            return Err(SpanError {
                position: i,
                message: format!("unexpected `{tok}` inside the payload"),
            });
        }
    }
    Ok(TokenSpan::new(start, end))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(turn: usize, speaker: Speaker, src: &str, tgt: &str) -> ChatRecord {
        ChatRecord {
            dialogue_id: "d1".into(),
            turn_index: turn,
            speaker,
            src_text: src.into(),
            tgt_text: tgt.into(),
            src_lang: "de".into(),
            tgt_lang: "en".into(),
        }
    }

    fn hello_dialogue() -> Dialogue {
        Dialogue::new(
            "d1",
            vec![
                rec(0, Speaker::Customer, "Hallo", "Hello"),
                rec(1, Speaker::Agent, "Wie kann ich helfen?", "How can I help?"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn tag_synthetic_examples() {
        let tagged = tag_synthetic(&BitextPair::synthetic("guten tag", "good day")).unwrap();
        assert_eq!(tagged, BitextPair::synthetic("<BT> guten tag", "good day"));
        assert_eq!(
            tag_synthetic(&BitextPair::new("a", "b")),
            Err(PrepError::NotSynthetic)
        );
        assert_eq!(tag_synthetic(&tagged), Err(PrepError::AlreadyTagged));
    }

    #[test]
    fn tag_synthetic_rejects_embedded_tag() {
        let err = tag_synthetic(&BitextPair::synthetic("a <SEP> b", "c")).unwrap_err();
        assert!(matches!(err, PrepError::ReservedTag { tag: SEP_TAG, .. }));
    }

    #[test]
    fn tag_speaker_examples() {
        let pair = tag_speaker(&rec(0, Speaker::Customer, "Hallo", "Hello"));
        assert_eq!(
            pair,
            BitextPair::new("<customer> Hallo", "<customer> Hello")
        );
        let r = rec(1, Speaker::Agent, "Wie bitte?", "Pardon?");
        let pair = tag_speaker(&r);
        assert_eq!(
            pair,
            BitextPair::new("<agent> Wie bitte?", "<agent> Pardon?")
        );
        assert_eq!(strip_tags(&pair.source), r.src_text);
    }

    #[test]
    fn strip_tags_examples() {
        assert_eq!(
            strip_tags("<customer> Hallo <context begins> x <SEP> y"),
            "Hallo"
        );
        assert_eq!(strip_tags("<BT> guten tag"), "guten tag");
        assert_eq!(strip_tags("plain text"), "plain text");
        assert_eq!(strip_tags("<agent>"), "");
        assert_eq!(strip_tags("<agentx> a"), "<agentx> a");
    }

    #[test]
    fn context_one_previous_same_language() {
        let cfg = ContextConfig::new(1, ContextMode::SameLanguage).unwrap();
        let pair = build_context(&hello_dialogue(), 1, &cfg).unwrap();
        assert_eq!(
            pair.source,
            "<agent> Wie kann ich helfen? <context begins> Hallo"
        );
        assert_eq!(
            pair.target,
            "<agent> How can I help? <context begins> Hello"
        );
    }

    #[test]
    fn first_turn_has_no_indicator() {
        for mode in [ContextMode::SameLanguage, ContextMode::MixedLanguage] {
            let cfg = ContextConfig::new(3, mode).unwrap();
            let pair = build_context(&hello_dialogue(), 0, &cfg).unwrap();
            assert_eq!(
                pair,
                BitextPair::new("<customer> Hallo", "<customer> Hello")
            );
        }
    }

    #[test]
    fn unknown_turn_is_an_error() {
        let cfg = ContextConfig::default();
        assert!(matches!(
            build_context(&hello_dialogue(), 5, &cfg),
            Err(PrepError::UnknownTurn { turn_index: 5, .. })
        ));
    }

    #[test]
    fn n_prev_above_three_rejected() {
        assert_eq!(
            ContextConfig::new(4, ContextMode::SameLanguage),
            Err(PrepError::TooManyPrevious(4))
        );
    }

    #[test]
    fn mixed_mode_uses_speaker_language() {
        // En->De direction for the agent, De->En for the customer.
        let mut customer = rec(0, Speaker::Customer, "Hallo", "Hello");
        let mut agent = rec(1, Speaker::Agent, "How can I help?", "Wie kann ich helfen?");
        agent.src_lang = "en".into();
        agent.tgt_lang = "de".into();
        customer.dialogue_id = "d1".into();
        let mut next = rec(2, Speaker::Customer, "Mein Auto", "My car");
        next.dialogue_id = "d1".into();
        let d = Dialogue::new("d1", vec![customer, agent, next]).unwrap();

        let same = build_context(
            &d,
            2,
            &ContextConfig::new(2, ContextMode::SameLanguage).unwrap(),
        )
        .unwrap();
        assert_eq!(
            same.source,
            "<customer> Mein Auto <context begins> Wie kann ich helfen? <SEP> Hallo"
        );
        assert_eq!(
            same.target,
            "<customer> My car <context begins> How can I help? <SEP> Hello"
        );

        let mixed = build_context(
            &d,
            2,
            &ContextConfig::new(2, ContextMode::MixedLanguage).unwrap(),
        )
        .unwrap();
        assert_eq!(
            mixed.source,
            "<customer> Mein Auto <context begins> How can I help? <SEP> Hallo"
        );
        assert_eq!(
            mixed.target,
            "<customer> My car <context begins> Wie kann ich helfen? <SEP> Hello"
        );
    }

    #[test]
    fn oldest_first_order() {
        let d = Dialogue::new(
            "d1",
            vec![
                rec(0, Speaker::Customer, "a", "A"),
                rec(1, Speaker::Agent, "b", "B"),
                rec(2, Speaker::Customer, "c", "C"),
            ],
        )
        .unwrap();
        let cfg = ContextConfig::new(2, ContextMode::SameLanguage)
            .unwrap()
            .with_order(ContextOrder::OldestFirst)
            .with_speaker_tags(false);
        let pair = build_context(&d, 2, &cfg).unwrap();
        assert_eq!(pair.source, "c <context begins> a <SEP> b");
    }

    #[test]
    fn payload_span_matches_structure() {
        let cfg = ContextConfig::new(1, ContextMode::SameLanguage).unwrap();
        let prepared = prepare_turn(&hello_dialogue(), 1, &cfg).unwrap();
        assert_eq!(prepared.target_payload_span, TokenSpan::new(1, 5));
        assert_eq!(
            target_payload_span(&prepared.pair.target).unwrap(),
            prepared.target_payload_span
        );
        assert_eq!(
            target_payload_span("plain text").unwrap(),
            TokenSpan::new(0, 2)
        );
        assert!(target_payload_span("<agent> a <SEP> b").is_err());
    }

    #[test]
    fn reserved_tags_in_context_rejected() {
        let d = Dialogue::new(
            "d1",
            vec![
                rec(0, Speaker::Customer, "x <SEP> y", "z"),
                rec(1, Speaker::Agent, "a", "b"),
            ],
        )
        .unwrap();
        let cfg = ContextConfig::new(1, ContextMode::SameLanguage).unwrap();
        assert!(matches!(
            build_context(&d, 1, &cfg),
            Err(PrepError::ReservedTag { .. })
        ));
        assert!(check_reserved("a <context   begins> b").is_err());
    }

    fn utterance() -> impl Strategy<Value = String> {
        // Alphabet chosen to brush against the tag syntax.
        "[a-z<> SEPcontxbgi]{0,16}".prop_filter("no reserved tag", |s| check_reserved(s).is_ok())
    }

    fn dialogue() -> impl Strategy<Value = Dialogue> {
        prop::collection::vec((any::<bool>(), utterance(), utterance()), 1..6).prop_map(|turns| {
            let recs = turns
                .into_iter()
                .enumerate()
                .map(|(i, (agent, s, t))| {
                    let speaker = if agent {
                        Speaker::Agent
                    } else {
                        Speaker::Customer
                    };
                    rec(i, speaker, &s, &t)
                })
                .collect();
            Dialogue::new("d1", recs).unwrap()
        })
    }

    proptest! {
        #[test]
        fn strip_recovers_payload(d in dialogue(), n_prev in 0usize..=3, mixed in any::<bool>(), tags in any::<bool>()) {
            let mode = if mixed { ContextMode::MixedLanguage } else { ContextMode::SameLanguage };
            let cfg = ContextConfig::new(n_prev, mode).unwrap().with_speaker_tags(tags);
            for (i, r) in d.turns().iter().enumerate() {
                let prepared = prepare_turn(&d, i, &cfg).unwrap();
                prop_assert_eq!(strip_tags(&prepared.pair.source), r.src_text.as_str());
                prop_assert_eq!(strip_tags(&prepared.pair.target), r.tgt_text.as_str());
                prop_assert_eq!(target_payload_span(&prepared.pair.target).unwrap(), prepared.target_payload_span);
            }
        }
    }
}
