//! Exact-match acceptor over delexicalized rules.
//!
//! Rules share a trie over word and slot labels. A slot arc is matched
//! against a per-slot trie of catalog values, longest value first. When
//! several rules accept an utterance, the one with fewer slot tokens wins,
//! then the lexicographically smaller rule.

use crate::corpus::{DelexToken, DelexUtterance, SlotCatalog, SlotSpan};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RuleSet {
    pub rules: BTreeSet<DelexUtterance>,
    pub catalog: SlotCatalog,
}

impl RuleSet {
    pub fn new(catalog: SlotCatalog) -> Self {
        RuleSet {
            rules: BTreeSet::new(),
            catalog,
        }
    }

    pub fn with_rules(catalog: SlotCatalog, rules: impl IntoIterator<Item = DelexUtterance>) -> Self {
        RuleSet {
            rules: rules.into_iter().collect(),
            catalog,
        }
    }

    /// Returns whether the rule was new.
    pub fn insert(&mut self, rule: DelexUtterance) -> bool {
        self.rules.insert(rule)
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// Lowercase, whitespace-split tokens.
pub fn normalize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// One delexicalized rule per non-blank line.
pub fn read_rules(text: &str, path: &str) -> Result<Vec<DelexUtterance>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            DelexUtterance::parse(l).map_err(|e| Error::Parse {
                path: path.to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, Default)]
struct RuleNode {
    words: BTreeMap<String, usize>,
    slots: BTreeMap<String, usize>,
    accept: Option<usize>,
}

#[derive(Clone, Debug, Default)]
struct ValueNode {
    next: BTreeMap<String, usize>,
    terminal: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Match {
    pub rule: DelexUtterance,
    pub spans: Vec<SlotSpan>,
}

#[derive(Clone, Debug)]
pub struct Matcher {
    nodes: Vec<RuleNode>,
    values: BTreeMap<String, Vec<ValueNode>>,
    rules: Vec<DelexUtterance>,
}

impl Matcher {
    pub fn build(set: &RuleSet) -> Result<Self> {
        let mut m = Matcher {
            nodes: vec![RuleNode::default()],
            values: BTreeMap::new(),
            rules: Vec::with_capacity(set.rules.len()),
        };
        for rule in &set.rules {
            let mut at = 0;
            for t in rule.tokens() {
                at = match t {
                    DelexToken::Word(w) => m.child(at, w, false),
                    DelexToken::Slot(s) => {
                        if !m.values.contains_key(s) {
                            let values = set
                                .catalog
                                .values(s)
                                .ok_or_else(|| Error::UnknownSlot(s.clone()))?;
                            m.values.insert(s.clone(), value_trie(values));
                        }
                        m.child(at, s, true)
                    }
                };
            }
            m.nodes[at].accept = Some(m.rules.len());
            m.rules.push(rule.clone());
        }
        Ok(m)
    }

    fn child(&mut self, at: usize, label: &str, slot: bool) -> usize {
        let fresh = self.nodes.len();
        let edges = if slot {
            &mut self.nodes[at].slots
        } else {
            &mut self.nodes[at].words
        };
        let id = *edges.entry(label.to_string()).or_insert(fresh);
        if id == fresh {
            self.nodes.push(RuleNode::default());
        }
        id
    }

    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }

    pub fn accepts(&self, words: &[String]) -> bool {
        self.find(words).is_some()
    }

    /// Full-sequence match with the winning rule and its slot spans.
    pub fn find(&self, words: &[String]) -> Option<Match> {
        let mut found: BTreeMap<usize, Vec<SlotSpan>> = BTreeMap::new();
        let mut spans = Vec::new();
        self.search(0, 0, words, &mut spans, &mut found);
        let (rule, spans) = found.into_iter().min_by(|(a, _), (b, _)| {
            let (ra, rb) = (&self.rules[*a], &self.rules[*b]);
            ra.slot_count().cmp(&rb.slot_count()).then_with(|| ra.cmp(rb))
        })?;
        Some(Match {
            rule: self.rules[rule].clone(),
            spans,
        })
    }

    fn search(
        &self,
        node: usize,
        pos: usize,
        words: &[String],
        spans: &mut Vec<SlotSpan>,
        found: &mut BTreeMap<usize, Vec<SlotSpan>>,
    ) {
        let n = &self.nodes[node];
        if pos == words.len() {
            if let Some(r) = n.accept {
                found.entry(r).or_insert_with(|| spans.clone());
            }
        }
        if pos < words.len() {
            if let Some(&next) = n.words.get(&words[pos]) {
                self.search(next, pos + 1, words, spans, found);
            }
        }
        for (slot, &next) in &n.slots {
            let ends = value_ends(&self.values[slot], words, pos);
            for &end in ends.iter().rev() {
                spans.push(SlotSpan {
                    start: pos,
                    end,
                    slot: slot.clone(),
                });
                self.search(next, end, words, spans, found);
                spans.pop();
            }
        }
    }
}

fn value_trie(values: &[Vec<String>]) -> Vec<ValueNode> {
    let mut nodes = vec![ValueNode::default()];
    for v in values {
        let mut at = 0;
        for w in v {
            let fresh = nodes.len();
            let id = *nodes[at].next.entry(w.clone()).or_insert(fresh);
            if id == fresh {
                nodes.push(ValueNode::default());
            }
            at = id;
        }
        if !v.is_empty() {
            nodes[at].terminal = true;
        }
    }
    nodes
}

/// End positions (ascending) of catalog values starting at `start`.
fn value_ends(trie: &[ValueNode], words: &[String], start: usize) -> Vec<usize> {
    let mut ends = Vec::new();
    let mut at = 0;
    for (i, w) in words.iter().enumerate().skip(start) {
        match trie[at].next.get(w) {
            Some(&next) => {
                at = next;
                if trie[at].terminal {
                    ends.push(i + 1);
                }
            }
            None => break,
        }
    }
    ends
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewMatchReport {
    /// Test utterances rejected by the baseline and accepted after augmentation.
    pub new_matches: usize,
    /// Rules in the augmented set that the baseline lacks.
    pub new_rules: usize,
    /// Test utterances the baseline rejects.
    pub unmatched_pool: usize,
    pub test_size: usize,
    /// `new_matches / unmatched_pool`, absent when the pool is empty.
    pub percentage: Option<f64>,
}

pub fn new_match_count(baseline: &RuleSet, augmented: &RuleSet, test: &[Vec<String>]) -> Result<NewMatchReport> {
    let before = Matcher::build(baseline)?;
    let after = Matcher::build(augmented)?;
    let mut new_matches = 0;
    let mut pool = 0;
    for u in test {
        if !before.accepts(u) {
            pool += 1;
            if after.accepts(u) {
                new_matches += 1;
            }
        }
    }
    Ok(NewMatchReport {
        new_matches,
        new_rules: augmented.rules.difference(&baseline.rules).count(),
        unmatched_pool: pool,
        test_size: test.len(),
        percentage: (pool > 0).then(|| 100.0 * new_matches as f64 / pool as f64),
    })
}
