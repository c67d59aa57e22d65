//! n-best decoding, pointer resolution and lexicalization.

mod beam;

pub use beam::{beam_search, greedy_decode, BeamConfig, Hypothesis, ModelScorer, StepScorer};

use crate::corpus::{
    parse_anon, DataFormat, DelexToken, DelexUtterance, FormattedPair, SlotCatalog, SlotSpan,
    SourceToken, Vocab,
};
use crate::error::{Error, Result};
use crate::model::{Seq2Seq, SourceInput};
use crate::tensor::ParamStore;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedUtterance {
    /// Decoded tokens with pointers replaced by what they point at
    /// (`SLOTk` markers stay as markers).
    pub surface: Vec<String>,
    /// Delexicalized form with every slot named.
    pub delex: DelexUtterance,
    pub source_id: String,
    pub score: f64,
}

/// Turns class ids into tokens: copy class `i` becomes source token `i`
/// (a value bundle becomes its slot reference), vocabulary classes become
/// their words, and `SLOTk` markers are named through the pair's slot map.
pub fn resolve_pointers(h: &Hypothesis, pair: &FormattedPair, vocab: &Vocab) -> Result<GeneratedUtterance> {
    let n = if pair.format.uses_pointers() {
        pair.source.len()
    } else {
        0
    };
    let mut surface = Vec::with_capacity(h.classes.len());
    let mut delex = Vec::with_capacity(h.classes.len());
    for &c in &h.classes {
        if c < n {
            let (text, tok) = match &pair.source[c] {
                SourceToken::Word(w) => (w.clone(), DelexToken::Word(w.clone())),
                SourceToken::Slot(s) => (format!("{{{s}}}"), DelexToken::Slot(s.clone())),
                SourceToken::Bundle(b) => {
                    (format!("{{{}}}", b.slot_name), DelexToken::Slot(b.slot_name.clone()))
                }
                t @ SourceToken::Anon(_) => {
                    let slot = pair.slot_at(c).ok_or_else(|| {
                        Error::Internal(format!("no slot map entry at source position {c}"))
                    })?;
                    (t.text(), DelexToken::Slot(slot.to_string()))
                }
            };
            surface.push(text);
            delex.push(tok);
        } else if c - n < vocab.len() {
            let word = vocab.token(c - n);
            delex.push(word_token(word, pair)?);
            surface.push(word.to_string());
        } else {
            return Err(Error::Internal(format!(
                "class {c} outside {} copy and {} vocabulary classes",
                n,
                vocab.len()
            )));
        }
    }
    Ok(GeneratedUtterance {
        surface,
        delex: DelexUtterance(delex),
        source_id: pair.id.clone(),
        score: h.score,
    })
}

fn word_token(word: &str, pair: &FormattedPair) -> Result<DelexToken> {
    if let Some(name) = word.strip_prefix('{').and_then(|w| w.strip_suffix('}')) {
        return Ok(DelexToken::Slot(name.to_string()));
    }
    if pair.format.anonymizes() {
        if let Some(k) = parse_anon(word) {
            return pair
                .slot_map
                .get(k.wrapping_sub(1))
                .map(|e| DelexToken::Slot(e.slot.clone()))
                .ok_or_else(|| Error::UnknownSlot(word.to_string()));
        }
    }
    Ok(DelexToken::Word(word.to_string()))
}

/// A lexicalized utterance with the spans its slot fillers occupy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicalized {
    pub words: Vec<String>,
    pub spans: Vec<SlotSpan>,
}

impl Lexicalized {
    pub fn bio_tags(&self) -> Vec<String> {
        let mut tags = vec!["O".to_string(); self.words.len()];
        for s in &self.spans {
            tags[s.start] = format!("B-{}", s.slot);
            for t in &mut tags[s.start + 1..s.end] {
                *t = format!("I-{}", s.slot);
            }
        }
        tags
    }
}

/// Fills every slot with a value drawn uniformly from its catalog entry.
pub fn lexicalize<R: Rng>(utt: &DelexUtterance, catalog: &SlotCatalog, rng: &mut R) -> Result<Lexicalized> {
    let mut words = Vec::new();
    let mut spans = Vec::new();
    for t in utt.tokens() {
        match t {
            DelexToken::Word(w) => words.push(w.clone()),
            DelexToken::Slot(s) => {
                let values = catalog
                    .values(s)
                    .filter(|v| !v.is_empty())
                    .ok_or_else(|| Error::UnknownSlot(s.clone()))?;
                let value = &values[rng.gen_range(0..values.len())];
                let start = words.len();
                words.extend(value.iter().cloned());
                spans.push(SlotSpan {
                    start,
                    end: words.len(),
                    slot: s.clone(),
                });
            }
        }
    }
    Ok(Lexicalized { words, spans })
}

/// Decodes n-best paraphrases for the source of `pair` and resolves them,
/// dropping hypotheses that cannot be resolved and duplicate delexicalized
/// forms (the better-ranked copy is kept).
pub fn paraphrase(
    model: &Seq2Seq,
    store: &ParamStore<f32>,
    pair: &FormattedPair,
    vocab: &Vocab,
    cfg: &BeamConfig,
) -> Result<Vec<GeneratedUtterance>> {
    let src = SourceInput::from_pair(pair, vocab);
    let scorer = ModelScorer::new(model, store, &src)?;
    let hyps = beam_search(&scorer, cfg)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for h in &hyps {
        match resolve_pointers(h, pair, vocab) {
            Ok(g) => {
                if !g.delex.is_empty() && seen.insert(g.delex.clone()) {
                    out.push(g);
                }
            }
            Err(Error::UnknownSlot(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Source-only pair for generation: the target is a copy of the source.
pub fn generation_input(
    id: &str,
    source: &DelexUtterance,
    format: DataFormat,
    catalog: &SlotCatalog,
    cfg: &crate::corpus::ReformatConfig,
) -> Result<FormattedPair> {
    let mut pair = crate::corpus::reformat_delex(source, source, format, catalog, cfg)?;
    pair.id = id.to_string();
    pair.target.clear();
    Ok(pair)
}
