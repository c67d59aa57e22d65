use super::reformat::{FormattedPair, SourceToken, TargetToken};
use crate::error::{Error, Result};
use crate::seed::sha256_hex;
use std::collections::{BTreeMap, HashMap};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Dense token ids. Pointer tokens are positional classes and never appear.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    counts: Vec<usize>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn from_parts(tokens: Vec<String>, counts: Vec<usize>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab {
            tokens,
            counts,
            index,
        }
    }

    /// Specials first, then tokens by descending count, ties by token.
    pub fn from_counts(counts: &BTreeMap<String, usize>, min_count: usize) -> Self {
        let mut kept: Vec<(&String, usize)> = counts
            .iter()
            .filter(|(t, &c)| c >= min_count.max(1) && !SPECIALS.contains(&t.as_str()))
            .map(|(t, &c)| (t, c))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut cs = vec![0; SPECIALS.len()];
        for (t, c) in kept {
            tokens.push(t.clone());
            cs.push(c);
        }
        Vocab::from_parts(tokens, cs)
    }

    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts = BTreeMap::new();
        for w in words {
            *counts.entry(w.to_string()).or_insert(0) += 1;
        }
        Vocab::from_counts(&counts, min_count)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, or [`UNK`].
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn count(&self, id: usize) -> usize {
        self.counts[id]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// `token<TAB>count` per line.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            s.push_str(t);
            s.push('\t');
            s.push_str(&c.to_string());
            s.push('\n');
        }
        s
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (t, c) = line.rsplit_once('\t').ok_or_else(|| Error::Parse {
                path: "<vocab>".into(),
                line: i + 1,
                message: "expected `token<TAB>count`".into(),
            })?;
            tokens.push(t.to_string());
            counts.push(c.parse().map_err(|_| Error::Parse {
                path: "<vocab>".into(),
                line: i + 1,
                message: format!("bad count `{c}`"),
            })?);
        }
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(Error::MalformedInput(
                "vocabulary must start with the special tokens".into(),
            ));
        }
        Ok(Vocab::from_parts(tokens, counts))
    }

    /// SHA-256 of the serialized vocabulary.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_file_string().as_bytes())
    }
}

/// Token census over formatted pairs: words, slot references and `SLOTk`
/// markers on both sides, plus every word inside value bundles.
pub fn token_counts(pairs: &[FormattedPair]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    let mut bump = |t: String| *counts.entry(t).or_insert(0) += 1;
    for p in pairs {
        for t in &p.source {
            match t {
                SourceToken::Bundle(b) => b.values.iter().flatten().cloned().for_each(&mut bump),
                other => bump(other.text()),
            }
        }
        for t in &p.target {
            if !matches!(t, TargetToken::Pointer(_)) {
                bump(t.text());
            }
        }
    }
    counts
}

pub fn build_vocab(pairs: &[FormattedPair], min_count: usize) -> Vocab {
    Vocab::from_counts(&token_counts(pairs), min_count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::reformat::{reformat_delex, DataFormat, ReformatConfig};
    use crate::corpus::types::{DelexUtterance, SlotCatalog};

    fn pair(s: &str, t: &str, f: DataFormat) -> FormattedPair {
        let mut c = SlotCatalog::new();
        c.insert("A", vec![vec!["x".into()]]).unwrap();
        c.insert("B", vec![vec!["y".into()]]).unwrap();
        reformat_delex(
            &DelexUtterance::parse(s).unwrap(),
            &DelexUtterance::parse(t).unwrap(),
            f,
            &c,
            &ReformatConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn min_count_maps_rare_words_to_unk() {
        let corpus = [pair("a b", "a", DataFormat::O)];
        let v1 = build_vocab(&corpus, 1);
        assert!(v1.contains("a") && v1.contains("b"));
        assert_eq!(v1.len(), 6);
        let v2 = build_vocab(&corpus, 2);
        assert!(v2.contains("a"));
        assert_eq!(v2.id("b"), UNK);
    }

    #[test]
    fn anonymized_markers_are_vocabulary_and_pointers_are_not() {
        // Census of the AS/ASP source rows: play, SLOT1, by, SLOT2, please.
        let p = pair("play {A} by {B} please", "{B} 's {A}", DataFormat::ASP);
        let v = build_vocab(&[p], 1);
        assert!(v.contains("SLOT1") && v.contains("SLOT2"));
        assert!(!v.contains("@ptr1") && !v.contains("@ptr3"));
        assert!(v.contains("'s"));
    }

    #[test]
    fn file_round_trip_and_hash() {
        let v = build_vocab(&[pair("a b {A}", "b {A}", DataFormat::O)], 1);
        let back = Vocab::from_file_string(&v.to_file_string()).unwrap();
        assert_eq!(v, back);
        assert_eq!(v.hash(), back.hash());
        assert!(Vocab::from_file_string("a\t1\n").is_err());
    }
}
