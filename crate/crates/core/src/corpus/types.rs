use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Slot name → list of values, each value a word sequence.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SlotCatalog {
    entries: BTreeMap<String, Vec<Vec<String>>>,
}

impl SlotCatalog {
    pub fn new() -> Self {
        SlotCatalog::default()
    }

    /// Adds a slot with its values; duplicate values are dropped, order kept.
    pub fn insert(&mut self, slot: &str, values: Vec<Vec<String>>) -> Result<()> {
        if values.is_empty() {
            return Err(Error::MalformedInput(format!("slot `{slot}` has no values")));
        }
        let list = self.entries.entry(slot.to_string()).or_default();
        for v in values {
            if v.is_empty() || v.iter().any(String::is_empty) {
                return Err(Error::MalformedInput(format!(
                    "slot `{slot}` has an empty value"
                )));
            }
            if !list.contains(&v) {
                list.push(v);
            }
        }
        Ok(())
    }

    /// Records one observed value, creating the slot if needed.
    pub fn observe(&mut self, slot: &str, value: &[String]) {
        let list = self.entries.entry(slot.to_string()).or_default();
        if !value.is_empty() && !list.iter().any(|v| v == value) {
            list.push(value.to_vec());
        }
    }

    pub fn values(&self, slot: &str) -> Option<&[Vec<String>]> {
        self.entries.get(slot).map(Vec::as_slice)
    }

    pub fn contains(&self, slot: &str) -> bool {
        self.entries.contains_key(slot)
    }

    pub fn slots(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Vec<String>])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn merge(&mut self, other: &SlotCatalog) {
        for (slot, values) in other.iter() {
            for v in values {
                self.observe(slot, v);
            }
        }
    }
}

/// One element of a delexicalized utterance.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DelexToken {
    Word(String),
    Slot(String),
}

impl DelexToken {
    pub fn slot_name(&self) -> Option<&str> {
        match self {
            DelexToken::Slot(s) => Some(s),
            DelexToken::Word(_) => None,
        }
    }
}

impl fmt::Display for DelexToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DelexToken::Word(w) => f.write_str(w),
            DelexToken::Slot(s) => write!(f, "{{{s}}}"),
        }
    }
}

/// Utterance whose slot values are replaced by slot names.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DelexUtterance(pub Vec<DelexToken>);

impl DelexUtterance {
    /// Parses `{Slot}` syntax; a brace group glued to a word (`{Artist}'s`)
    /// is split off into its own token.
    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for raw in text.split_whitespace() {
            let mut rest = raw;
            while !rest.is_empty() {
                match rest.find('{') {
                    None => {
                        if rest.contains('}') {
                            return Err(Error::MalformedInput(format!(
                                "unbalanced brace in `{raw}`"
                            )));
                        }
                        tokens.push(DelexToken::Word(rest.to_lowercase()));
                        rest = "";
                    }
                    Some(open) => {
                        if open > 0 {
                            tokens.push(DelexToken::Word(rest[..open].to_lowercase()));
                        }
                        let close = rest[open..].find('}').ok_or_else(|| {
                            Error::MalformedInput(format!("unbalanced brace in `{raw}`"))
                        })? + open;
                        let name = &rest[open + 1..close];
                        if name.is_empty() || name.contains('{') {
                            return Err(Error::MalformedInput(format!(
                                "bad slot reference in `{raw}`"
                            )));
                        }
                        tokens.push(DelexToken::Slot(name.to_string()));
                        rest = &rest[close + 1..];
                    }
                }
            }
        }
        Ok(DelexUtterance(tokens))
    }

    pub fn tokens(&self) -> &[DelexToken] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn slot_names(&self) -> impl Iterator<Item = &str> {
        self.0.iter().filter_map(DelexToken::slot_name)
    }

    pub fn slot_set(&self) -> BTreeSet<String> {
        self.slot_names().map(str::to_string).collect()
    }

    pub fn slot_count(&self) -> usize {
        self.slot_names().count()
    }

    /// Surface strings of each token (`{Slot}` for slots).
    pub fn words(&self) -> Vec<String> {
        self.0.iter().map(ToString::to_string).collect()
    }
}

impl fmt::Display for DelexUtterance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl Serialize for DelexUtterance {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DelexUtterance {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        DelexUtterance::parse(&text).map_err(serde::de::Error::custom)
    }
}

/// Half-open token span annotated with a slot name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpan {
    pub start: usize,
    pub end: usize,
    pub slot: String,
}

/// Tokenized utterance with intent and slot annotations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedUtterance {
    pub tokens: Vec<String>,
    pub domain_or_skill: String,
    pub intent: String,
    #[serde(default)]
    pub slot_spans: Vec<SlotSpan>,
}

impl AnnotatedUtterance {
    /// Spans sorted by start, checked for bounds and overlap.
    pub fn validated_spans(&self) -> Result<Vec<&SlotSpan>> {
        let mut spans: Vec<&SlotSpan> = self.slot_spans.iter().collect();
        spans.sort_by_key(|s| (s.start, s.end));
        let mut last_end = 0;
        for (i, s) in spans.iter().enumerate() {
            if s.start >= s.end || s.end > self.tokens.len() {
                return Err(Error::MalformedAnnotation(format!(
                    "span ({}, {}, {}) outside utterance of length {}",
                    s.start,
                    s.end,
                    s.slot,
                    self.tokens.len()
                )));
            }
            if i > 0 && s.start < last_end {
                return Err(Error::MalformedAnnotation(format!(
                    "span ({}, {}, {}) overlaps its predecessor",
                    s.start, s.end, s.slot
                )));
            }
            last_end = s.end;
        }
        Ok(spans)
    }

    /// Gold BIO tags, one per token.
    pub fn bio_tags(&self) -> Result<Vec<String>> {
        let mut tags = vec!["O".to_string(); self.tokens.len()];
        for s in self.validated_spans()? {
            tags[s.start] = format!("B-{}", s.slot);
            for t in &mut tags[s.start + 1..s.end] {
                *t = format!("I-{}", s.slot);
            }
        }
        Ok(tags)
    }
}

/// Paraphrase equivalence key: (domain or skill, intent, set of slot names).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub domain_or_skill: String,
    pub intent: String,
    pub slot_names: BTreeSet<String>,
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, {}", self.domain_or_skill, self.intent)?;
        for s in &self.slot_names {
            write!(f, ", {{{s}}}")?;
        }
        Ok(())
    }
}

pub fn delexicalize(u: &AnnotatedUtterance) -> Result<DelexUtterance> {
    let spans = u.validated_spans()?;
    let mut out = Vec::with_capacity(u.tokens.len());
    let mut pos = 0;
    for s in spans {
        out.extend(u.tokens[pos..s.start].iter().cloned().map(DelexToken::Word));
        out.push(DelexToken::Slot(s.slot.clone()));
        pos = s.end;
    }
    out.extend(u.tokens[pos..].iter().cloned().map(DelexToken::Word));
    Ok(DelexUtterance(out))
}

pub fn signature_of(u: &AnnotatedUtterance) -> Signature {
    Signature {
        domain_or_skill: u.domain_or_skill.clone(),
        intent: u.intent.clone(),
        slot_names: u.slot_spans.iter().map(|s| s.slot.clone()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn span(start: usize, end: usize, slot: &str) -> SlotSpan {
        SlotSpan {
            start,
            end,
            slot: slot.into(),
        }
    }

    fn utt(text: &str, domain: &str, intent: &str, spans: Vec<SlotSpan>) -> AnnotatedUtterance {
        AnnotatedUtterance {
            tokens: words(text),
            domain_or_skill: domain.into(),
            intent: intent.into(),
            slot_spans: spans,
        }
    }

    #[test]
    fn delexicalize_replaces_spans() {
        let u = utt(
            "play shake it off by taylor swift",
            "Music",
            "Play",
            vec![span(1, 4, "Music"), span(5, 7, "Artist")],
        );
        assert_eq!(delexicalize(&u).unwrap().to_string(), "play {Music} by {Artist}");

        let u = utt(
            "find movies in boston on saturday",
            "Cinema",
            "FindMovie",
            vec![span(3, 4, "location"), span(5, 6, "date")],
        );
        assert_eq!(
            delexicalize(&u).unwrap().to_string(),
            "find movies in {location} on {date}"
        );
    }

    #[test]
    fn delexicalize_without_spans_is_identity() {
        let u = utt("stop playing", "Music", "Pause", vec![]);
        assert_eq!(delexicalize(&u).unwrap().words(), words("stop playing"));
    }

    #[test]
    fn overlapping_spans_are_malformed() {
        let u = utt("a b c d", "D", "I", vec![span(0, 2, "x"), span(1, 3, "y")]);
        assert!(matches!(delexicalize(&u), Err(Error::MalformedAnnotation(_))));
        let u = utt("a b", "D", "I", vec![span(1, 3, "x")]);
        assert!(matches!(delexicalize(&u), Err(Error::MalformedAnnotation(_))));
    }

    #[test]
    fn signature_is_order_insensitive() {
        let a = utt(
            "can you read me a book by shakespear about romance",
            "Books",
            "ReadBook",
            vec![span(7, 8, "author"), span(9, 10, "topic")],
        );
        let mut b = a.clone();
        b.slot_spans.reverse();
        let sig = signature_of(&a);
        assert_eq!(sig, signature_of(&b));
        assert_eq!(sig.to_string(), "Books, ReadBook, {author}, {topic}");
    }

    #[test]
    fn different_slot_sets_give_different_signatures() {
        let a = utt(
            "what are the movies on show near seattle",
            "Cinema",
            "FindMovie",
            vec![span(7, 8, "location")],
        );
        let b = utt(
            "find movies in chicago area on saturday",
            "Cinema",
            "FindMovie",
            vec![span(3, 4, "location"), span(6, 7, "date")],
        );
        assert_ne!(signature_of(&a), signature_of(&b));
    }

    #[test]
    fn parse_splits_glued_slots() {
        let u = DelexUtterance::parse("I want to listen to {Artist}'s {Music}").unwrap();
        assert_eq!(u.to_string(), "i want to listen to {Artist} 's {Music}");
        assert!(DelexUtterance::parse("play {Music").is_err());
    }

    #[test]
    fn bio_tags_follow_spans() {
        let u = utt("play b c now", "M", "P", vec![span(1, 3, "song")]);
        assert_eq!(u.bio_tags().unwrap(), ["O", "B-song", "I-song", "O"]);
    }
}
