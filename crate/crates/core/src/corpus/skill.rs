use super::types::{DelexUtterance, Signature, SlotCatalog};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleUtterance {
    pub id: u64,
    pub intent: String,
    pub text: DelexUtterance,
}

/// A developer-defined skill: delexicalized samples plus a slot catalog.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkillDefinition {
    pub skill_name: String,
    pub sample_utterances: Vec<SampleUtterance>,
    pub slots: SlotCatalog,
}

#[derive(Serialize, Deserialize)]
struct RawSample {
    id: u64,
    intent: String,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct RawSlot {
    name: String,
    values: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct RawSkill {
    skill_name: String,
    sample_utterances: Vec<RawSample>,
    #[serde(default)]
    slots: Vec<RawSlot>,
}

/// Slot values in skill files join words with underscores or spaces.
pub fn split_value(value: &str) -> Vec<String> {
    value
        .split(|c: char| c == '_' || c.is_whitespace())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Quotes bare identifiers used as object values (`"name": MusicName`).
fn quote_bare_values(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 16);
    let mut chars = text.chars().peekable();
    let mut in_string = false;
    let mut escaped = false;
    let mut after_colon = false;
    while let Some(c) = chars.next() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => {
                in_string = true;
                after_colon = false;
                out.push(c);
            }
            ':' => {
                after_colon = true;
                out.push(c);
            }
            c if after_colon && (c.is_alphabetic() || c == '_') => {
                let mut word = String::from(c);
                while let Some(&n) = chars.peek() {
                    if n.is_alphanumeric() || n == '_' || n == '.' || n == '-' {
                        word.push(n);
                        chars.next();
                    } else {
                        break;
                    }
                }
                if matches!(word.as_str(), "true" | "false" | "null") {
                    out.push_str(&word);
                } else {
                    out.push('"');
                    out.push_str(&word);
                    out.push('"');
                }
                after_colon = false;
            }
            c if c.is_whitespace() => out.push(c),
            _ => {
                after_colon = false;
                out.push(c);
            }
        }
    }
    out
}

impl SkillDefinition {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawSkill = match serde_json::from_str(text) {
            Ok(r) => r,
            Err(first) => serde_json::from_str(&quote_bare_values(text)).map_err(|_| first)?,
        };
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawSkill) -> Result<Self> {
        let mut slots = SlotCatalog::new();
        for s in raw.slots {
            let values = s.values.iter().map(|v| split_value(v)).collect();
            slots.insert(&s.name, values)?;
        }
        let mut ids = BTreeSet::new();
        let mut samples = Vec::with_capacity(raw.sample_utterances.len());
        for s in raw.sample_utterances {
            if !ids.insert(s.id) {
                return Err(Error::MalformedInput(format!(
                    "skill `{}`: duplicate utterance id {}",
                    raw.skill_name, s.id
                )));
            }
            let text = DelexUtterance::parse(&s.text)?;
            if let Some(missing) = text.slot_names().find(|n| !slots.contains(n)) {
                return Err(Error::MalformedInput(format!(
                    "skill `{}`: utterance {} references slot `{missing}` absent from the catalog",
                    raw.skill_name, s.id
                )));
            }
            samples.push(SampleUtterance {
                id: s.id,
                intent: s.intent,
                text,
            });
        }
        Ok(SkillDefinition {
            skill_name: raw.skill_name,
            sample_utterances: samples,
            slots,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let raw = RawSkill {
            skill_name: self.skill_name.clone(),
            sample_utterances: self
                .sample_utterances
                .iter()
                .map(|s| RawSample {
                    id: s.id,
                    intent: s.intent.clone(),
                    text: s.text.to_string(),
                })
                .collect(),
            slots: self
                .slots
                .iter()
                .map(|(name, values)| RawSlot {
                    name: name.to_string(),
                    values: values.iter().map(|v| v.join("_")).collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&raw)?)
    }

    pub fn signature(&self, sample: &SampleUtterance) -> Signature {
        Signature {
            domain_or_skill: self.skill_name.clone(),
            intent: sample.intent.clone(),
            slot_names: sample.text.slot_set(),
        }
    }

    pub fn intents(&self) -> BTreeSet<&str> {
        self.sample_utterances
            .iter()
            .map(|s| s.intent.as_str())
            .collect()
    }
}

/// Reads a JSON array of skills, or one skill per line.
pub fn read_skills(text: &str) -> Result<Vec<SkillDefinition>> {
    let trimmed = text.trim_start();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    if trimmed.starts_with('[') {
        let raws: Vec<RawSkill> = serde_json::from_str(trimmed)?;
        return raws.into_iter().map(SkillDefinition::from_raw).collect();
    }
    if let Ok(skill) = SkillDefinition::from_json(trimmed) {
        return Ok(vec![skill]);
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(SkillDefinition::from_json(line).map_err(|e| Error::Parse {
            path: "<skills>".into(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
