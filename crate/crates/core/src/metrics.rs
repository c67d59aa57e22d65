//! Intrinsic generation metrics, slot and semantic error rates, and rank
//! correlation. Undefined values come back as `None`.

use crate::error::{Error, Result};
use crate::seed::rng_for;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Training utterances `D` and generated utterances `G`, both deduplicated.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MetricsCorpus {
    pub d: BTreeSet<Vec<String>>,
    pub g: BTreeSet<Vec<String>>,
}

impl MetricsCorpus {
    pub fn new<I, J>(d: I, g: J) -> Self
    where
        I: IntoIterator<Item = Vec<String>>,
        J: IntoIterator<Item = Vec<String>>,
    {
        MetricsCorpus {
            d: d.into_iter().collect(),
            g: g.into_iter().collect(),
        }
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Share of pairs whose generated slot set equals the source slot set;
/// slotless sources are left out.
pub fn slot_copy_rate(pairs: &[(BTreeSet<String>, BTreeSet<String>)]) -> Option<f64> {
    let slotted: Vec<_> = pairs.iter().filter(|(s, _)| !s.is_empty()).collect();
    ratio(slotted.iter().filter(|(s, g)| s == g).count(), slotted.len())
}

/// Per-source variant: a source counts as copied when every one of its
/// outputs carries exactly its slot set.
pub fn slot_copy_rate_per_source(groups: &[(BTreeSet<String>, Vec<BTreeSet<String>>)]) -> Option<f64> {
    let slotted: Vec<_> = groups
        .iter()
        .filter(|(s, outs)| !s.is_empty() && !outs.is_empty())
        .collect();
    ratio(
        slotted.iter().filter(|(s, outs)| outs.iter().all(|g| g == s)).count(),
        slotted.len(),
    )
}

/// `|G \ D| / |G|`.
pub fn novelty(c: &MetricsCorpus) -> Option<f64> {
    ratio(c.g.difference(&c.d).count(), c.g.len())
}

/// `|G|`.
pub fn diversity(c: &MetricsCorpus) -> usize {
    c.g.len()
}

fn trigrams<'a>(utts: impl Iterator<Item = &'a Vec<String>>) -> BTreeSet<&'a [String]> {
    utts.flat_map(|u| u.windows(3)).collect()
}

/// Unique token trigrams across `G`.
pub fn trigram_diversity(c: &MetricsCorpus) -> Option<usize> {
    let t = trigrams(c.g.iter());
    (!t.is_empty()).then_some(t.len())
}

/// Share of unique trigrams of `G` that never occur in `D`.
pub fn trigram_novelty(c: &MetricsCorpus) -> Option<f64> {
    let tg = trigrams(c.g.iter());
    let td = trigrams(c.d.iter());
    ratio(tg.difference(&td).count(), tg.len())
}

/// Rewrites `I-s` tags that do not continue an `s` entity as `B-s`.
/// Returns the repaired tags and whether anything changed.
pub fn repair_bio(tags: &[String]) -> (Vec<String>, bool) {
    let mut out = Vec::with_capacity(tags.len());
    let mut changed = false;
    let mut current: Option<&str> = None;
    for t in tags {
        if let Some(label) = t.strip_prefix("B-") {
            current = Some(label);
            out.push(t.clone());
        } else if let Some(label) = t.strip_prefix("I-") {
            if current != Some(label) {
                changed = true;
                out.push(format!("B-{label}"));
            } else {
                out.push(t.clone());
            }
            current = Some(label);
        } else {
            current = None;
            out.push(t.clone());
        }
    }
    (out, changed)
}

/// `(start, end, label)` entities of a well-formed BIO sequence.
pub fn entities(tags: &[String]) -> Vec<(usize, usize, String)> {
    let mut out: Vec<(usize, usize, String)> = Vec::new();
    for (i, t) in tags.iter().enumerate() {
        if let Some(label) = t.strip_prefix("B-") {
            out.push((i, i + 1, label.to_string()));
        } else if let Some(label) = t.strip_prefix("I-") {
            match out.last_mut() {
                Some(last) if last.1 == i && last.2 == label => last.1 = i + 1,
                _ => out.push((i, i + 1, label.to_string())),
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub intent_error: usize,
    pub total_ref_slots: usize,
    /// Either tag sequence needed BIO repair.
    pub repaired: bool,
}

impl AlignmentCounts {
    pub fn add(&mut self, o: &AlignmentCounts) {
        self.substitutions += o.substitutions;
        self.insertions += o.insertions;
        self.deletions += o.deletions;
        self.intent_error += o.intent_error;
        self.total_ref_slots += o.total_ref_slots;
        self.repaired |= o.repaired;
    }
}

/// Exact-span entity alignment of hypothesis tags against reference tags.
pub fn entity_alignment(
    reference: &[String],
    hypothesis: &[String],
    gold_intent: &str,
    predicted_intent: &str,
) -> Result<AlignmentCounts> {
    if reference.len() != hypothesis.len() {
        return Err(Error::MalformedInput(format!(
            "reference has {} tags, hypothesis {}",
            reference.len(),
            hypothesis.len()
        )));
    }
    let (r, fix_r) = repair_bio(reference);
    let (h, fix_h) = repair_bio(hypothesis);
    let re = entities(&r);
    let he = entities(&h);
    let mut counts = AlignmentCounts {
        intent_error: usize::from(gold_intent != predicted_intent),
        total_ref_slots: re.len(),
        repaired: fix_r || fix_h,
        ..Default::default()
    };
    for (s, e, label) in &re {
        match he.iter().find(|(hs, hend, _)| hs == s && hend == e) {
            Some((_, _, l)) if l == label => {}
            Some(_) => counts.substitutions += 1,
            None => counts.deletions += 1,
        }
    }
    counts.insertions = he
        .iter()
        .filter(|(hs, hend, _)| !re.iter().any(|(s, e, _)| s == hs && e == hend))
        .count();
    Ok(counts)
}

/// `(S + I + D) / reference slots`.
pub fn ser(c: &AlignmentCounts) -> Option<f64> {
    (c.total_ref_slots > 0)
        .then(|| (c.substitutions + c.insertions + c.deletions) as f64 / c.total_ref_slots as f64)
}

/// `(S + I + D + IE) / (reference slots + 1)`.
pub fn semer(c: &AlignmentCounts) -> f64 {
    (c.substitutions + c.insertions + c.deletions + c.intent_error) as f64
        / (c.total_ref_slots + 1) as f64
}

/// Corpus SER over summed counts.
pub fn corpus_ser(all: &[AlignmentCounts]) -> Option<f64> {
    let mut total = AlignmentCounts::default();
    all.iter().for_each(|c| total.add(c));
    ser(&total)
}

/// Corpus SEMER: summed numerators over summed denominators.
pub fn corpus_semer(all: &[AlignmentCounts]) -> Option<f64> {
    if all.is_empty() {
        return None;
    }
    let num: usize = all
        .iter()
        .map(|c| c.substitutions + c.insertions + c.deletions + c.intent_error)
        .sum();
    let den: usize = all.iter().map(|c| c.total_ref_slots + 1).sum();
    Some(num as f64 / den as f64)
}

pub fn intent_error_rate<S: AsRef<str>>(predictions: &[S], golds: &[S]) -> Result<Option<f64>> {
    if predictions.len() != golds.len() {
        return Err(Error::MalformedInput(format!(
            "{} predictions for {} gold intents",
            predictions.len(),
            golds.len()
        )));
    }
    let wrong = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| p.as_ref() != g.as_ref())
        .count();
    Ok(ratio(wrong, golds.len()))
}

/// Fractional ranks, 1-based, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation; `None` when either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::MalformedInput(format!(
            "spearman needs two equal-length lists of at least 2 values, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(pearson(&average_ranks(x), &average_ranks(y)))
}

/// Two-sided permutation p-value for Spearman's coefficient.
pub fn spearman_permutation_p(x: &[f64], y: &[f64], permutations: usize, seed: u64) -> Result<Option<f64>> {
    let observed = match spearman(x, y)? {
        Some(r) => r,
        None => return Ok(None),
    };
    let rx = average_ranks(x);
    let mut ry = average_ranks(y);
    let mut rng = rng_for(seed, &["spearman-permutation"]);
    let mut extreme = 0usize;
    for _ in 0..permutations {
        ry.shuffle(&mut rng);
        if let Some(r) = pearson(&rx, &ry) {
            if r.abs() >= observed.abs() - 1e-12 {
                extreme += 1;
            }
        }
    }
    Ok(Some((extreme + 1) as f64 / (permutations + 1) as f64))
}
