//! Synthetic skills built from shared carrier-phrase families.
//!
//! Every skill instantiates the same three families (a one-slot request, a
//! one-slot save and a three-slot share) with its own entity slot, and keeps
//! a seeded subset of each family's templates as its samples. Held-out test
//! utterances use templates the skill lacks but some other skill has, so a
//! paraphraser trained on all skills can reach them and the skill alone cannot.

use crate::corpus::{
    AnnotatedUtterance, DelexToken, DelexUtterance, SampleUtterance, SkillDefinition, SlotCatalog,
};
use crate::error::{Error, Result};
use crate::generator::lexicalize;
use crate::seed::rng_for;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

const REQUEST: [&str; 8] = [
    "play {X}",
    "put on {X}",
    "start {X}",
    "i want to hear {X}",
    "can you play {X}",
    "queue up {X}",
    "begin {X} now",
    "let me hear {X}",
];

const SAVE: [&str; 8] = [
    "save {X}",
    "add {X} to my list",
    "put {X} on my list",
    "remember {X} for me",
    "bookmark {X}",
    "keep {X} for later",
    "store {X} please",
    "add {X} to favorites",
];

const SHARE: [&str; 8] = [
    "send {X} to {Contact} at {Time}",
    "share {X} with {Contact} at {Time}",
    "at {Time} send {Contact} {X}",
    "tell {Contact} about {X} at {Time}",
    "forward {X} to {Contact} at {Time}",
    "at {Time} share {X} with {Contact}",
    "remind {Contact} of {X} at {Time}",
    "pass {X} to {Contact} at {Time}",
];

struct Theme {
    skill: &'static str,
    prefix: &'static str,
    slot: &'static str,
    values: [&'static str; 5],
}

const THEMES: [Theme; 5] = [
    Theme {
        skill: "music",
        prefix: "Music",
        slot: "SongName",
        values: ["yellow", "shape of you", "hey jude", "bad guy", "clocks"],
    },
    Theme {
        skill: "movies",
        prefix: "Movie",
        slot: "MovieTitle",
        values: ["frozen", "the matrix", "up", "star wars", "jaws"],
    },
    Theme {
        skill: "recipes",
        prefix: "Recipe",
        slot: "DishName",
        values: ["lasagna", "pad thai", "apple pie", "ramen", "fish tacos"],
    },
    Theme {
        skill: "books",
        prefix: "Book",
        slot: "BookTitle",
        values: ["dune", "emma", "war and peace", "ulysses", "the hobbit"],
    },
    Theme {
        skill: "podcasts",
        prefix: "Podcast",
        slot: "ShowName",
        values: ["serial", "radiolab", "the daily", "freakonomics", "reply all"],
    },
];

const CONTACTS: [&str; 4] = ["mom", "alex", "sam lee", "my brother"];
const TIMES: [&str; 4] = ["noon", "six pm", "nine in the morning", "midnight"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Number of skills, at most 5.
    pub skills: usize,
    /// Templates per intent kept as samples, out of 8.
    pub samples_per_intent: usize,
    /// Lexicalizations per held-out template.
    pub test_fillings: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            skills: 5,
            samples_per_intent: 5,
            test_fillings: 2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthCorpus {
    pub skills: Vec<SkillDefinition>,
    /// Held-out utterances, `domain_or_skill` naming their skill.
    pub test: Vec<AnnotatedUtterance>,
}

fn instantiate(template: &str, slot: &str) -> Result<DelexUtterance> {
    DelexUtterance::parse(&template.replace("{X}", &format!("{{{slot}}}")))
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

pub fn synth_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.skills == 0 || cfg.skills > THEMES.len() {
        return Err(Error::Config(format!("skills must be in 1..={}", THEMES.len())));
    }
    if cfg.samples_per_intent == 0 || cfg.samples_per_intent > REQUEST.len() {
        return Err(Error::Config(format!(
            "samples_per_intent must be in 1..={}",
            REQUEST.len()
        )));
    }
    let families: [(&str, &[&str; 8]); 3] = [("Play", &REQUEST), ("Save", &SAVE), ("Share", &SHARE)];
    let themes = &THEMES[..cfg.skills];

    // chosen[skill][family] = template indices kept as samples.
    let chosen: Vec<Vec<BTreeSet<usize>>> = themes
        .iter()
        .map(|t| {
            families
                .iter()
                .map(|(name, _)| {
                    let mut idx: Vec<usize> = (0..REQUEST.len()).collect();
                    idx.shuffle(&mut rng_for(cfg.seed, &["synth-templates", t.skill, name]));
                    idx.into_iter().take(cfg.samples_per_intent).collect()
                })
                .collect()
        })
        .collect();

    let mut skills = Vec::with_capacity(themes.len());
    let mut test = Vec::new();
    for (si, theme) in themes.iter().enumerate() {
        let mut catalog = SlotCatalog::new();
        catalog.insert(theme.slot, theme.values.iter().map(|v| words(v)).collect())?;
        catalog.insert("Contact", CONTACTS.iter().map(|v| words(v)).collect())?;
        catalog.insert("Time", TIMES.iter().map(|v| words(v)).collect())?;
        let mut samples = Vec::new();
        for (fi, (name, templates)) in families.iter().enumerate() {
            let intent = format!("{}{}Intent", theme.prefix, name);
            for &ti in &chosen[si][fi] {
                samples.push(SampleUtterance {
                    id: samples.len() as u64 + 1,
                    intent: intent.clone(),
                    text: instantiate(templates[ti], theme.slot)?,
                });
            }
            for ti in 0..templates.len() {
                let reachable = (0..themes.len()).any(|o| o != si && chosen[o][fi].contains(&ti));
                if chosen[si][fi].contains(&ti) || !reachable {
                    continue;
                }
                let delex = instantiate(templates[ti], theme.slot)?;
                for f in 0..cfg.test_fillings {
                    let mut rng = rng_for(cfg.seed, &["synth-test", theme.skill, name, &ti.to_string(), &f.to_string()]);
                    let lex = lexicalize(&delex, &catalog, &mut rng)?;
                    test.push(AnnotatedUtterance {
                        tokens: lex.words,
                        domain_or_skill: theme.skill.to_string(),
                        intent: intent.clone(),
                        slot_spans: lex.spans,
                    });
                }
            }
        }
        skills.push(SkillDefinition {
            skill_name: theme.skill.to_string(),
            sample_utterances: samples,
            slots: catalog,
        });
    }
    Ok(SynthCorpus { skills, test })
}

/// Distinct random delexicalized sources, each with one paraphrase target
/// that reuses its slots, over a small closed vocabulary.
pub fn random_pairs(count: usize, seed: u64) -> Result<(Vec<(DelexUtterance, DelexUtterance)>, SlotCatalog)> {
    const WORDS: [&str; 24] = [
        "play", "find", "the", "a", "song", "by", "please", "now", "me", "some", "show", "for",
        "my", "list", "add", "to", "start", "new", "good", "put", "on", "want", "i", "hear",
    ];
    const SLOTS: [&str; 3] = ["A", "B", "C"];
    let mut catalog = SlotCatalog::new();
    for s in SLOTS {
        catalog.insert(s, vec![vec![s.to_lowercase()]])?;
    }
    let mut rng = rng_for(seed, &["random-pairs"]);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > 1000 * count.max(1) {
            return Err(Error::Internal("could not draw enough distinct sources".into()));
        }
        let slots: Vec<&str> = SLOTS[..rng.gen_range(1..=2)].to_vec();
        let draw = |len: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            let mut toks: Vec<DelexToken> = (0..len)
                .map(|_| DelexToken::Word(WORDS[rng.gen_range(0..WORDS.len())].to_string()))
                .collect();
            for s in &slots {
                let at = rng.gen_range(0..=toks.len());
                toks.insert(at, DelexToken::Slot(s.to_string()));
            }
            DelexUtterance(toks)
        };
        let source = draw(rng.gen_range(2..=5), &mut rng);
        let target = draw(rng.gen_range(2..=5), &mut rng);
        if seen.insert(source.clone()) {
            out.push((source, target));
        }
    }
    Ok((out, catalog))
}
