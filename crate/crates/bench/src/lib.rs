//! Shared fixtures for the criterion benches.

use delexpara::corpus::{DelexUtterance, SlotCatalog};
use delexpara::fst::RuleSet;

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// A music-style rule set with `n` carrier phrases over two slots.
pub fn rule_set(n: usize) -> RuleSet {
    let mut catalog = SlotCatalog::new();
    catalog
        .insert("Song", ["yellow", "shape of you", "hey jude", "bad guy"].iter().map(|v| words(v)).collect())
        .unwrap();
    catalog
        .insert("Artist", ["coldplay", "ed sheeran", "the beatles"].iter().map(|v| words(v)).collect())
        .unwrap();
    let rules = (0..n).map(|i| DelexUtterance::parse(&format!("play {{Song}} by {{Artist}} variant{i} please")).unwrap());
    RuleSet::with_rules(catalog, rules)
}

pub fn probe(i: usize) -> Vec<String> {
    words(&format!("play shape of you by the beatles variant{i} please"))
}
