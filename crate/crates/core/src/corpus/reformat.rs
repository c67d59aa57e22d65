//! Source/target pair formats.
//!
//! | format  | source slot token      | target slot token |
//! |---------|------------------------|-------------------|
//! | O       | `{Name}`               | `{Name}`          |
//! | AS      | `SLOTk`                | `SLOTk`           |
//! | ASP     | `SLOTk`                | `@ptr i`          |
//! | S2P/S3P | value bundle `a,b_c`   | `@ptr i`          |
//!
//! `SLOTk` numbers source slot occurrences from 1 in order of appearance;
//! `@ptr i` is the 0-based source position. A target slot that occurs
//! several times is matched to same-named source occurrences in order.

use super::sets::TrainingPair;
use super::types::{DelexToken, DelexUtterance, SlotCatalog};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DataFormat {
    O,
    AS,
    ASP,
    S2P,
    S3P,
}

impl DataFormat {
    pub const ALL: [DataFormat; 5] = [
        DataFormat::O,
        DataFormat::AS,
        DataFormat::ASP,
        DataFormat::S2P,
        DataFormat::S3P,
    ];

    pub fn uses_pointers(self) -> bool {
        matches!(self, DataFormat::ASP | DataFormat::S2P | DataFormat::S3P)
    }

    pub fn anonymizes(self) -> bool {
        matches!(self, DataFormat::AS | DataFormat::ASP)
    }

    pub fn uses_bundles(self) -> bool {
        matches!(self, DataFormat::S2P | DataFormat::S3P)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DataFormat::O => "O",
            DataFormat::AS => "AS",
            DataFormat::ASP => "ASP",
            DataFormat::S2P => "S2P",
            DataFormat::S3P => "S3P",
        }
    }
}

impl fmt::Display for DataFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DataFormat::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown data format `{s}`")))
    }
}

/// All (or a capped sample of) catalog values for one slot occurrence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlotValueBundle {
    pub slot_name: String,
    pub values: Vec<Vec<String>>,
}

impl SlotValueBundle {
    pub fn new(slot_name: impl Into<String>, values: Vec<Vec<String>>) -> Result<Self> {
        let slot_name = slot_name.into();
        if values.is_empty() || values.iter().any(Vec::is_empty) {
            return Err(Error::MalformedInput(format!(
                "empty value bundle for slot `{slot_name}`"
            )));
        }
        Ok(SlotValueBundle { slot_name, values })
    }

    /// `frozen,shape_of_you`
    pub fn text(&self) -> String {
        self.values
            .iter()
            .map(|v| v.join("_"))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn parse_text(slot_name: &str, text: &str) -> Result<Self> {
        let values = text
            .split(',')
            .map(|v| {
                v.split('_')
                    .filter(|w| !w.is_empty())
                    .map(str::to_string)
                    .collect::<Vec<_>>()
            })
            .collect();
        SlotValueBundle::new(slot_name, values)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SourceToken {
    Word(String),
    Slot(String),
    Anon(usize),
    Bundle(SlotValueBundle),
}

impl SourceToken {
    pub fn text(&self) -> String {
        match self {
            SourceToken::Word(w) => w.clone(),
            SourceToken::Slot(s) => format!("{{{s}}}"),
            SourceToken::Anon(k) => anon_marker(*k),
            SourceToken::Bundle(b) => b.text(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum TargetToken {
    Word(String),
    Slot(String),
    Anon(usize),
    Pointer(usize),
}

impl TargetToken {
    pub fn text(&self) -> String {
        match self {
            TargetToken::Word(w) => w.clone(),
            TargetToken::Slot(s) => format!("{{{s}}}"),
            TargetToken::Anon(k) => anon_marker(*k),
            TargetToken::Pointer(i) => format!("@ptr{i}"),
        }
    }

    pub fn parse(text: &str, format: DataFormat) -> TargetToken {
        if let Some(i) = text.strip_prefix("@ptr").and_then(|d| d.parse().ok()) {
            return TargetToken::Pointer(i);
        }
        if let Some(name) = text.strip_prefix('{').and_then(|t| t.strip_suffix('}')) {
            return TargetToken::Slot(name.to_string());
        }
        if format.anonymizes() {
            if let Some(k) = parse_anon(text) {
                return TargetToken::Anon(k);
            }
        }
        TargetToken::Word(text.to_string())
    }
}

pub fn anon_marker(k: usize) -> String {
    format!("SLOT{k}")
}

pub fn parse_anon(text: &str) -> Option<usize> {
    text.strip_prefix("SLOT")
        .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
        .and_then(|d| d.parse().ok())
        .filter(|&k| k >= 1)
}

/// Links one source slot occurrence to its name and position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotMapEntry {
    pub position: usize,
    pub slot: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marker: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FormattedPair {
    pub id: String,
    pub format: DataFormat,
    pub source: Vec<SourceToken>,
    pub target: Vec<TargetToken>,
    pub slot_map: Vec<SlotMapEntry>,
}

#[derive(Serialize, Deserialize)]
struct RawPair {
    #[serde(default)]
    id: String,
    format: DataFormat,
    source: Vec<String>,
    target: Vec<String>,
    #[serde(default)]
    slot_map: Vec<SlotMapEntry>,
}

impl FormattedPair {
    pub fn source_text(&self) -> String {
        join(self.source.iter().map(SourceToken::text))
    }

    pub fn target_text(&self) -> String {
        join(self.target.iter().map(TargetToken::text))
    }

    /// Slot name of the source token at `position`, if it is a slot.
    pub fn slot_at(&self, position: usize) -> Option<&str> {
        self.slot_map
            .iter()
            .find(|e| e.position == position)
            .map(|e| e.slot.as_str())
    }

    pub fn source_slot_count(&self) -> usize {
        self.slot_map.len()
    }

    pub fn to_json_line(&self) -> Result<String> {
        let raw = RawPair {
            id: self.id.clone(),
            format: self.format,
            source: self.source.iter().map(SourceToken::text).collect(),
            target: self.target.iter().map(TargetToken::text).collect(),
            slot_map: self.slot_map.clone(),
        };
        Ok(serde_json::to_string(&raw)?)
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let raw: RawPair = serde_json::from_str(line)?;
        Self::from_text_tokens(raw.id, raw.format, &raw.source, &raw.target, raw.slot_map)
    }

    /// Builds a pair from its text tokens (Table-style strings); slot
    /// positions come from `slot_map`, or from token shape when it is empty.
    pub fn from_text_tokens(
        id: String,
        format: DataFormat,
        source: &[String],
        target: &[String],
        mut slot_map: Vec<SlotMapEntry>,
    ) -> Result<Self> {
        if slot_map.is_empty() {
            slot_map = infer_slot_map(format, source);
        }
        let by_pos: BTreeMap<usize, &SlotMapEntry> =
            slot_map.iter().map(|e| (e.position, e)).collect();
        let mut src = Vec::with_capacity(source.len());
        for (i, t) in source.iter().enumerate() {
            let tok = match by_pos.get(&i) {
                None => SourceToken::Word(t.clone()),
                Some(e) => match format {
                    DataFormat::O => SourceToken::Slot(e.slot.clone()),
                    DataFormat::AS | DataFormat::ASP => SourceToken::Anon(
                        parse_anon(t).ok_or_else(|| Error::Data {
                            pair: id.clone(),
                            message: format!("expected SLOTk at position {i}, found `{t}`"),
                        })?,
                    ),
                    DataFormat::S2P | DataFormat::S3P => {
                        SourceToken::Bundle(SlotValueBundle::parse_text(&e.slot, t)?)
                    }
                },
            };
            src.push(tok);
        }
        let tgt = target
            .iter()
            .map(|t| TargetToken::parse(t, format))
            .collect::<Vec<_>>();
        let pair = FormattedPair {
            id,
            format,
            source: src,
            target: tgt,
            slot_map,
        };
        pair.check_pointers()?;
        Ok(pair)
    }

    pub fn check_pointers(&self) -> Result<()> {
        for t in &self.target {
            if let TargetToken::Pointer(i) = t {
                if *i >= self.source.len() {
                    return Err(Error::Data {
                        pair: self.id.clone(),
                        message: format!(
                            "pointer @ptr{i} outside source of length {}",
                            self.source.len()
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    /// Recovers the original delexicalized source and target.
    pub fn to_original(&self) -> Result<(DelexUtterance, DelexUtterance)> {
        let marker_names: BTreeMap<usize, &str> = self
            .slot_map
            .iter()
            .enumerate()
            .map(|(k, e)| (k + 1, e.slot.as_str()))
            .collect();
        let source = self
            .source
            .iter()
            .enumerate()
            .map(|(i, t)| match t {
                SourceToken::Word(w) => Ok(DelexToken::Word(w.clone())),
                SourceToken::Slot(s) => Ok(DelexToken::Slot(s.clone())),
                SourceToken::Bundle(b) => Ok(DelexToken::Slot(b.slot_name.clone())),
                SourceToken::Anon(_) => self
                    .slot_at(i)
                    .map(|s| DelexToken::Slot(s.to_string()))
                    .ok_or_else(|| self.data_error(format!("no slot map entry at {i}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let target = self
            .target
            .iter()
            .map(|t| match t {
                TargetToken::Word(w) => Ok(DelexToken::Word(w.clone())),
                TargetToken::Slot(s) => Ok(DelexToken::Slot(s.clone())),
                TargetToken::Anon(k) => marker_names
                    .get(k)
                    .map(|s| DelexToken::Slot(s.to_string()))
                    .ok_or_else(|| self.data_error(format!("unmapped marker SLOT{k}"))),
                TargetToken::Pointer(i) => self
                    .slot_at(*i)
                    .map(|s| DelexToken::Slot(s.to_string()))
                    .or_else(|| match self.source.get(*i) {
                        Some(SourceToken::Word(w)) => Some(DelexToken::Word(w.clone())),
                        _ => None,
                    })
                    .ok_or_else(|| self.data_error(format!("dangling pointer @ptr{i}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((DelexUtterance(source), DelexUtterance(target)))
    }

    fn data_error(&self, message: String) -> Error {
        Error::Data {
            pair: self.id.clone(),
            message,
        }
    }
}

fn infer_slot_map(format: DataFormat, source: &[String]) -> Vec<SlotMapEntry> {
    let mut out = Vec::new();
    for (i, t) in source.iter().enumerate() {
        let slot = match format {
            DataFormat::O => t
                .strip_prefix('{')
                .and_then(|x| x.strip_suffix('}'))
                .map(str::to_string),
            DataFormat::AS | DataFormat::ASP => parse_anon(t).map(anon_marker),
            DataFormat::S2P | DataFormat::S3P => {
                (t.contains(',') || t.contains('_')).then(|| format!("slot{}", out.len() + 1))
            }
        };
        if let Some(slot) = slot {
            let marker = format.anonymizes().then(|| t.clone());
            out.push(SlotMapEntry {
                position: i,
                slot,
                marker,
            });
        }
    }
    out
}

fn join(it: impl Iterator<Item = String>) -> String {
    it.collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReformatConfig {
    /// Largest number of catalog values carried by a value bundle.
    pub bundle_cap: usize,
    pub seed: u64,
}

impl Default for ReformatConfig {
    fn default() -> Self {
        ReformatConfig {
            bundle_cap: 8,
            seed: 0,
        }
    }
}

/// Catalog values for a bundle: all of them when within the cap, else a
/// seeded sample kept in catalog order.
pub fn bundle_values(
    catalog: &SlotCatalog,
    slot: &str,
    cfg: &ReformatConfig,
) -> Result<Vec<Vec<String>>> {
    let values = catalog
        .values(slot)
        .ok_or_else(|| Error::UnknownSlot(slot.to_string()))?;
    if values.len() <= cfg.bundle_cap {
        return Ok(values.to_vec());
    }
    let mut rng = rng_for(cfg.seed, &["bundle", slot]);
    let mut idx = sample(&mut rng, values.len(), cfg.bundle_cap.max(1)).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| values[i].clone()).collect())
}

pub fn reformat(
    pair: &TrainingPair,
    format: DataFormat,
    catalog: &SlotCatalog,
    cfg: &ReformatConfig,
) -> Result<FormattedPair> {
    reformat_delex(&pair.source, &pair.target, format, catalog, cfg)
}

pub fn reformat_delex(
    source: &DelexUtterance,
    target: &DelexUtterance,
    format: DataFormat,
    catalog: &SlotCatalog,
    cfg: &ReformatConfig,
) -> Result<FormattedPair> {
    // Source slot occurrences, in order.
    let occurrences: Vec<(usize, &str)> = source
        .tokens()
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.slot_name().map(|s| (i, s)))
        .collect();
    let mut by_name: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (k, &(_, name)) in occurrences.iter().enumerate() {
        by_name.entry(name).or_default().push(k);
    }

    let slot_map: Vec<SlotMapEntry> = occurrences
        .iter()
        .enumerate()
        .map(|(k, &(position, name))| SlotMapEntry {
            position,
            slot: name.to_string(),
            marker: format.anonymizes().then(|| anon_marker(k + 1)),
        })
        .collect();

    let mut src = Vec::with_capacity(source.len());
    let mut occurrence = 0;
    for t in source.tokens() {
        src.push(match t {
            DelexToken::Word(w) => SourceToken::Word(w.clone()),
            DelexToken::Slot(name) => {
                occurrence += 1;
                match format {
                    DataFormat::O => SourceToken::Slot(name.clone()),
                    DataFormat::AS | DataFormat::ASP => SourceToken::Anon(occurrence),
                    DataFormat::S2P | DataFormat::S3P => SourceToken::Bundle(
                        SlotValueBundle::new(name.clone(), bundle_values(catalog, name, cfg)?)?,
                    ),
                }
            }
        });
    }

    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    let mut tgt = Vec::with_capacity(target.len());
    for t in target.tokens() {
        tgt.push(match t {
            DelexToken::Word(w) => TargetToken::Word(w.clone()),
            DelexToken::Slot(name) => {
                let slots = by_name.get(name.as_str()).ok_or_else(|| {
                    Error::PairRejected(format!(
                        "target slot `{name}` is absent from source `{source}`"
                    ))
                })?;
                let nth = seen.entry(name).or_default();
                let k = slots[(*nth).min(slots.len() - 1)];
                *nth += 1;
                match format {
                    DataFormat::O => TargetToken::Slot(name.clone()),
                    DataFormat::AS => TargetToken::Anon(k + 1),
                    _ => TargetToken::Pointer(occurrences[k].0),
                }
            }
        });
    }

    Ok(FormattedPair {
        id: String::new(),
        format,
        source: src,
        target: tgt,
        slot_map,
    })
}

/// Parses a JSONL training file; errors carry 1-based line numbers.
pub fn read_pairs_jsonl(text: &str, path: &str) -> Result<Vec<FormattedPair>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            FormattedPair::from_json_line(l).map_err(|e| Error::Parse {
                path: path.to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
