use super::skill::SkillDefinition;
use super::types::{delexicalize, signature_of, AnnotatedUtterance, DelexUtterance, Signature};
use crate::error::Result;
use crate::seed::rng_for;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Signature → unique delexicalized utterances sharing it.
pub type ParaphraseSets = BTreeMap<Signature, BTreeSet<DelexUtterance>>;

pub fn build_paraphrase_sets(corpus: &[AnnotatedUtterance]) -> Result<ParaphraseSets> {
    let mut sets = ParaphraseSets::new();
    for u in corpus {
        let delex = delexicalize(u)?;
        sets.entry(signature_of(u)).or_default().insert(delex);
    }
    Ok(sets)
}

/// Paraphrase sets keyed by (skill, intent, slot set) from skill samples.
pub fn paraphrase_sets_from_skills(skills: &[SkillDefinition]) -> ParaphraseSets {
    let mut sets = ParaphraseSets::new();
    for skill in skills {
        for s in &skill.sample_utterances {
            sets.entry(skill.signature(s))
                .or_default()
                .insert(s.text.clone());
        }
    }
    sets
}

pub fn merge_sets(into: &mut ParaphraseSets, other: ParaphraseSets) {
    for (sig, members) in other {
        into.entry(sig).or_default().extend(members);
    }
}

/// Length bounds applied to utterances before pairing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanupConfig {
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for CleanupConfig {
    fn default() -> Self {
        CleanupConfig {
            min_len: 1,
            max_len: 32,
        }
    }
}

/// Drops utterances with token count outside the bounds; returns how many.
pub fn clean_sets(sets: &mut ParaphraseSets, cfg: CleanupConfig) -> usize {
    let mut dropped = 0;
    for members in sets.values_mut() {
        let before = members.len();
        members.retain(|u| (cfg.min_len..=cfg.max_len).contains(&u.len()));
        dropped += before - members.len();
    }
    sets.retain(|_, m| !m.is_empty());
    dropped
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingPair {
    pub signature: Signature,
    pub source: DelexUtterance,
    pub target: DelexUtterance,
}

/// Number of pairs emitted per utterance whose set has another member.
pub const PAIRS_PER_UTTERANCE: usize = 2;

/// Two pairs per utterance with targets drawn uniformly (with replacement)
/// from the rest of its set. Each utterance's draws depend only on
/// `(seed, signature, utterance)`.
pub fn sample_training_pairs(sets: &ParaphraseSets, seed: u64) -> Vec<TrainingPair> {
    let mut pairs = Vec::new();
    for (sig, members) in sets {
        if members.len() < 2 {
            continue;
        }
        let members: Vec<&DelexUtterance> = members.iter().collect();
        let sig_key = sig.to_string();
        for (i, source) in members.iter().enumerate() {
            let mut rng = rng_for(seed, &[&sig_key, &source.to_string()]);
            for _ in 0..PAIRS_PER_UTTERANCE {
                let mut j = rng.gen_range(0..members.len() - 1);
                if j >= i {
                    j += 1;
                }
                pairs.push(TrainingPair {
                    signature: sig.clone(),
                    source: (*source).clone(),
                    target: members[j].clone(),
                });
            }
        }
    }
    pairs
}
