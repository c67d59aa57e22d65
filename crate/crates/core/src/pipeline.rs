//! File-based pipeline stages: prepare, train, generate and the two
//! evaluation suites. Every stage reads and writes inside one work
//! directory and produces byte-identical output for identical inputs.

use crate::corpus::{
    build_vocab, clean_sets, paraphrase_sets_from_skills, read_pairs_jsonl, read_skills, reformat,
    sample_training_pairs, AnnotatedUtterance, CleanupConfig, DataFormat, DelexUtterance, FormattedPair,
    ReformatConfig, SkillDefinition, Vocab,
};
use crate::embedder::EmbeddingVariant;
use crate::error::{Error, Result};
use crate::fst::{new_match_count, NewMatchReport, RuleSet};
use crate::generator::{generation_input, paraphrase, BeamConfig};
use crate::metrics::{
    diversity, novelty, slot_copy_rate, slot_copy_rate_per_source, spearman, trigram_diversity,
    trigram_novelty, MetricsCorpus,
};
use crate::model::{load_model, prepare_examples, save_model, train, ModelConfig, ModelMetadata, Seq2Seq, TrainConfig};
use crate::nlu::{
    augment_and_retrain, evaluate, intent_filter, train_nlu, FilterCandidate, NluConfig, NluData, NluEvaluation,
    NluExample,
};
use crate::seed::derive_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const MODEL_DIR: &str = "model";
pub const PARAPHRASES_FILE: &str = "paraphrases.jsonl";
pub const PREPARE_REPORT: &str = "prepare_summary.json";
pub const TRAIN_REPORT: &str = "train_report.json";
pub const INTRINSIC_REPORT: &str = "intrinsic_report.json";
pub const EXTRINSIC_REPORT: &str = "extrinsic_report.json";

/// One JSON document describing a run. The top-level `seed` is applied to
/// every seeded stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub skills: PathBuf,
    /// Annotated held-out utterances (JSONL) for the extrinsic suite.
    pub test: Option<PathBuf>,
    pub work_dir: PathBuf,
    pub format: DataFormat,
    /// Defaults to the desk-scale model for `format`.
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
    pub beam: BeamConfig,
    pub reformat: ReformatConfig,
    pub cleanup: CleanupConfig,
    pub nlu: NluConfig,
    pub min_count: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            skills: PathBuf::from("skills.json"),
            test: None,
            work_dir: PathBuf::from("work"),
            format: DataFormat::ASP,
            model: None,
            train: TrainConfig::default(),
            beam: BeamConfig::default(),
            reformat: ReformatConfig::default(),
            cleanup: CleanupConfig::default(),
            nlu: NluConfig::default(),
            min_count: 1,
            seed: 0,
        }
    }
}

/// Embedding variant matching a data format.
pub fn variant_for(format: DataFormat) -> EmbeddingVariant {
    match format {
        DataFormat::O => EmbeddingVariant::S1,
        DataFormat::AS | DataFormat::ASP => EmbeddingVariant::AS,
        DataFormat::S2P => EmbeddingVariant::S2,
        DataFormat::S3P => EmbeddingVariant::S3,
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let m = self.model.unwrap_or_else(|| ModelConfig::desk(variant_for(self.format)));
        m.validate()?;
        if m.embedding.variant.takes_bundles() != self.format.uses_bundles() {
            return Err(Error::Config(format!(
                "embedding {:?} does not fit format {}",
                m.embedding.variant,
                self.format.as_str()
            )));
        }
        Ok(m)
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    fn reformat_config(&self) -> ReformatConfig {
        ReformatConfig {
            seed: self.seed,
            ..self.reformat
        }
    }

    fn nlu_config(&self, skill: &str) -> NluConfig {
        NluConfig {
            seed: derive_seed(self.seed, &["nlu", skill]),
            ..self.nlu.clone()
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.work_dir.join(name)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Usage(format!("cannot read {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn load_skills(cfg: &RunConfig) -> Result<Vec<SkillDefinition>> {
    read_skills(&read(&cfg.skills)?)
}

fn skill_map(skills: &[SkillDefinition]) -> Result<BTreeMap<&str, &SkillDefinition>> {
    let mut map = BTreeMap::new();
    for s in skills {
        if map.insert(s.skill_name.as_str(), s).is_some() {
            return Err(Error::MalformedInput(format!("duplicate skill `{}`", s.skill_name)));
        }
    }
    Ok(map)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub format: DataFormat,
    pub skills: usize,
    pub utterances: usize,
    pub dropped_by_length: usize,
    pub paraphrase_sets: usize,
    pub sampled_pairs: usize,
    pub rejected_pairs: usize,
    pub written_pairs: usize,
    pub vocab_size: usize,
}

/// Formatted pairs for every skill, plus how many sampled pairs were rejected.
pub fn format_pairs(skills: &[SkillDefinition], cfg: &RunConfig) -> Result<(Vec<FormattedPair>, PrepareSummary)> {
    let by_name = skill_map(skills)?;
    let mut sets = paraphrase_sets_from_skills(skills);
    let utterances = sets.values().map(BTreeSet::len).sum();
    let dropped = clean_sets(&mut sets, cfg.cleanup);
    let sampled = sample_training_pairs(&sets, cfg.seed);
    let rcfg = cfg.reformat_config();
    let mut pairs = Vec::with_capacity(sampled.len());
    let mut rejected = 0;
    for (i, p) in sampled.iter().enumerate() {
        let skill = by_name[p.signature.domain_or_skill.as_str()];
        match reformat(p, cfg.format, &skill.slots, &rcfg) {
            Ok(mut f) => {
                f.id = format!("{}/{}", skill.skill_name, i);
                pairs.push(f);
            }
            Err(Error::PairRejected(_) | Error::UnknownSlot(_)) => rejected += 1,
            Err(e) => return Err(e),
        }
    }
    let summary = PrepareSummary {
        format: cfg.format,
        skills: skills.len(),
        utterances,
        dropped_by_length: dropped,
        paraphrase_sets: sets.len(),
        sampled_pairs: sampled.len(),
        rejected_pairs: rejected,
        written_pairs: pairs.len(),
        vocab_size: 0,
    };
    Ok((pairs, summary))
}

/// Writes the pair file, vocabulary and a summary.
pub fn prepare(cfg: &RunConfig) -> Result<PrepareSummary> {
    let skills = load_skills(cfg)?;
    let (pairs, mut summary) = format_pairs(&skills, cfg)?;
    let vocab = build_vocab(&pairs, cfg.min_count);
    summary.vocab_size = vocab.len();
    fs::create_dir_all(&cfg.work_dir)?;
    let mut text = String::new();
    for p in &pairs {
        text.push_str(&p.to_json_line()?);
        text.push('\n');
    }
    fs::write(cfg.path(PAIRS_FILE), text)?;
    fs::write(cfg.path(VOCAB_FILE), vocab.to_file_string())?;
    write_json(&cfg.path(PREPARE_REPORT), &summary)?;
    Ok(summary)
}

fn load_vocab(cfg: &RunConfig) -> Result<Vocab> {
    Vocab::from_file_string(&read(&cfg.path(VOCAB_FILE))?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub pairs: usize,
    pub vocab_size: usize,
    pub parameters: usize,
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
    pub updates: u64,
}

/// Trains on the prepared pairs and writes the checkpoint.
pub fn train_stage(cfg: &RunConfig, mut on_epoch: impl FnMut(usize, f64)) -> Result<TrainSummary> {
    let pairs = read_pairs_jsonl(&read(&cfg.path(PAIRS_FILE))?, PAIRS_FILE)?;
    let vocab = load_vocab(cfg)?;
    let model_cfg = cfg.model_config()?;
    if let Some(p) = pairs.iter().find(|p| p.format != cfg.format) {
        return Err(Error::Usage(format!(
            "pair {} is {} but the run is configured for {}",
            p.id,
            p.format.as_str(),
            cfg.format.as_str()
        )));
    }
    let examples = prepare_examples(&pairs, &vocab, model_cfg.max_len)?;
    let tcfg = cfg.train_config();
    let (model, mut store) = Seq2Seq::new::<f32>(model_cfg, vocab.len(), cfg.seed)?;
    let report = train(&model, &mut store, &examples, &tcfg, &mut on_epoch)?;
    let meta = ModelMetadata {
        model: model_cfg,
        format: cfg.format,
        vocab_size: vocab.len(),
        vocab_hash: vocab.hash(),
        seed: cfg.seed,
        epochs: tcfg.epochs,
        epoch_losses: report.epoch_losses.clone(),
    };
    save_model(&cfg.path(MODEL_DIR), &store, &meta)?;
    let summary = TrainSummary {
        pairs: pairs.len(),
        vocab_size: vocab.len(),
        parameters: store.total_size(),
        initial_loss: report.initial_loss,
        epoch_losses: report.epoch_losses,
        updates: report.updates,
    };
    write_json(&cfg.path(TRAIN_REPORT), &summary)?;
    Ok(summary)
}

/// One generated paraphrase of one sample utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParaphraseRecord {
    pub skill: String,
    pub intent: String,
    pub source_id: String,
    pub source: DelexUtterance,
    pub rank: usize,
    pub paraphrase: DelexUtterance,
    pub surface: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub sources: usize,
    pub skipped_sources: usize,
    pub paraphrases: usize,
}

/// Decodes n-best paraphrases of every sample utterance of every skill.
pub fn generate(cfg: &RunConfig) -> Result<(Vec<ParaphraseRecord>, GenerateSummary)> {
    let (model, store, meta) = load_model(&cfg.path(MODEL_DIR))?;
    let vocab = load_vocab(cfg)?;
    meta.check_vocab(&vocab)?;
    if meta.format != cfg.format {
        return Err(Error::Usage(format!(
            "checkpoint was trained on {} but the run is configured for {}",
            meta.format.as_str(),
            cfg.format.as_str()
        )));
    }
    let skills = load_skills(cfg)?;
    let rcfg = cfg.reformat_config();
    let mut jobs = Vec::new();
    let mut skipped = 0;
    for skill in &skills {
        for s in &skill.sample_utterances {
            if s.text.is_empty() || s.text.len() > model.config.max_len {
                skipped += 1;
                continue;
            }
            jobs.push((skill, s));
        }
    }
    let results: Vec<Vec<ParaphraseRecord>> = jobs
        .par_iter()
        .map(|(skill, s)| {
            let id = format!("{}/{}", skill.skill_name, s.id);
            let pair = generation_input(&id, &s.text, cfg.format, &skill.slots, &rcfg)?;
            let outs = paraphrase(&model, &store, &pair, &vocab, &cfg.beam)?;
            Ok(outs
                .into_iter()
                .enumerate()
                .map(|(rank, g)| ParaphraseRecord {
                    skill: skill.skill_name.clone(),
                    intent: s.intent.clone(),
                    source_id: id.clone(),
                    source: s.text.clone(),
                    rank,
                    surface: g.surface.join(" "),
                    paraphrase: g.delex,
                    score: g.score,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let records: Vec<ParaphraseRecord> = results.into_iter().flatten().collect();
    let summary = GenerateSummary {
        sources: jobs.len(),
        skipped_sources: skipped,
        paraphrases: records.len(),
    };
    Ok((records, summary))
}

pub fn write_paraphrases(path: &Path, records: &[ParaphraseRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_paraphrases(path: &Path) -> Result<Vec<ParaphraseRecord>> {
    let name = path.display().to_string();
    read(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: name.clone(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn generate_stage(cfg: &RunConfig) -> Result<GenerateSummary> {
    let (records, summary) = generate(cfg)?;
    write_paraphrases(&cfg.path(PARAPHRASES_FILE), &records)?;
    Ok(summary)
}

/// A metric value with its denominator; `null` marks not-available.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub value: Option<f64>,
    pub denominator: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopyBucket {
    pub pairs: usize,
    pub copied: usize,
    pub rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicReport {
    pub training_utterances: usize,
    pub generated: usize,
    pub slot_copy_rate: Rate,
    pub slot_copy_rate_per_source: Rate,
    pub novelty: Rate,
    pub diversity: usize,
    pub trigram_diversity: Option<usize>,
    pub trigram_novelty: Rate,
    /// Slot copy by number of slot occurrences in the source.
    pub slot_copy_by_slot_count: BTreeMap<usize, CopyBucket>,
}

pub fn intrinsic_report(skills: &[SkillDefinition], records: &[ParaphraseRecord]) -> IntrinsicReport {
    let corpus = MetricsCorpus::new(
        skills.iter().flat_map(|s| s.sample_utterances.iter().map(|u| u.text.words())),
        records.iter().map(|r| r.paraphrase.words()),
    );
    let pairs: Vec<_> = records
        .iter()
        .map(|r| (r.source.slot_set(), r.paraphrase.slot_set()))
        .collect();
    let mut groups: BTreeMap<&str, (BTreeSet<String>, Vec<BTreeSet<String>>)> = BTreeMap::new();
    for r in records {
        groups
            .entry(&r.source_id)
            .or_insert_with(|| (r.source.slot_set(), Vec::new()))
            .1
            .push(r.paraphrase.slot_set());
    }
    let groups: Vec<_> = groups.into_values().collect();
    let mut buckets: BTreeMap<usize, CopyBucket> = BTreeMap::new();
    for r in records {
        let k = r.source.slot_count();
        if k == 0 {
            continue;
        }
        let b = buckets.entry(k).or_insert(CopyBucket {
            pairs: 0,
            copied: 0,
            rate: None,
        });
        b.pairs += 1;
        if r.source.slot_set() == r.paraphrase.slot_set() {
            b.copied += 1;
        }
    }
    for b in buckets.values_mut() {
        b.rate = Some(b.copied as f64 / b.pairs as f64);
    }
    let g_trigrams = corpus.g.iter().flat_map(|u| u.windows(3)).collect::<BTreeSet<_>>().len();
    IntrinsicReport {
        training_utterances: corpus.d.len(),
        generated: records.len(),
        slot_copy_rate: Rate {
            value: slot_copy_rate(&pairs),
            denominator: pairs.iter().filter(|(s, _)| !s.is_empty()).count(),
        },
        slot_copy_rate_per_source: Rate {
            value: slot_copy_rate_per_source(&groups),
            denominator: groups.iter().filter(|(s, _)| !s.is_empty()).count(),
        },
        novelty: Rate {
            value: novelty(&corpus),
            denominator: corpus.g.len(),
        },
        diversity: diversity(&corpus),
        trigram_diversity: trigram_diversity(&corpus),
        trigram_novelty: Rate {
            value: trigram_novelty(&corpus),
            denominator: g_trigrams,
        },
        slot_copy_by_slot_count: buckets,
    }
}

pub fn eval_intrinsic(cfg: &RunConfig) -> Result<IntrinsicReport> {
    let skills = load_skills(cfg)?;
    let records = read_paraphrases(&cfg.path(PARAPHRASES_FILE))?;
    let report = intrinsic_report(&skills, &records);
    write_json(&cfg.path(INTRINSIC_REPORT), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillExtrinsic {
    pub skill: String,
    pub intents: usize,
    pub slots: usize,
    pub unique_delex_utterances: usize,
    pub test_utterances: usize,
    pub candidates: usize,
    pub retained: usize,
    pub intent_filter_rate: Option<f64>,
    pub fst: NewMatchReport,
    pub baseline: NluEvaluation,
    pub augmented: NluEvaluation,
    /// `(baseline - augmented) / baseline` SEMER.
    pub semer_relative_improvement: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicTotals {
    pub skills: usize,
    pub test_utterances: usize,
    pub fst_new_matches: usize,
    pub fst_new_rules: usize,
    pub fst_unmatched_pool: usize,
    pub candidates: usize,
    pub retained: usize,
    pub intent_filter_rate: Option<f64>,
    pub baseline_intent_error: Option<f64>,
    pub augmented_intent_error: Option<f64>,
    pub baseline_ser: Option<f64>,
    pub augmented_ser: Option<f64>,
    pub baseline_semer: Option<f64>,
    pub augmented_semer: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicReport {
    pub skills: Vec<SkillExtrinsic>,
    pub totals: ExtrinsicTotals,
    /// Spearman coefficient between each skill feature and SEMER relative
    /// improvement; `null` when undefined (fewer than two skills or a
    /// constant column). p-values are not computed.
    pub semer_improvement_correlation: BTreeMap<String, Option<f64>>,
}

pub fn read_annotated_jsonl(text: &str, path: &str) -> Result<Vec<AnnotatedUtterance>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn skill_extrinsic(
    skill: &SkillDefinition,
    records: &[&ParaphraseRecord],
    test: &[&AnnotatedUtterance],
    cfg: &RunConfig,
) -> Result<SkillExtrinsic> {
    let ncfg = cfg.nlu_config(&skill.skill_name);
    let data = NluData::from_skill(skill);
    let baseline = train_nlu(&data, &ncfg)?;
    let candidates: Vec<FilterCandidate> = records
        .iter()
        .map(|r| FilterCandidate {
            text: r.paraphrase.clone(),
            intent: r.intent.clone(),
        })
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let filtered = intent_filter(&candidates, &baseline, &skill.slots, ncfg.seed)?;
    let base_rules = RuleSet::with_rules(skill.slots.clone(), skill.sample_utterances.iter().map(|s| s.text.clone()));
    let mut aug_rules = base_rules.clone();
    for c in &filtered.retained {
        aug_rules.insert(c.text.clone());
    }
    let test_words: Vec<Vec<String>> = test.iter().map(|u| u.tokens.clone()).collect();
    let fst = new_match_count(&base_rules, &aug_rules, &test_words)?;
    let augmented = augment_and_retrain(&data, &filtered.retained, &ncfg)?;
    let examples: Vec<NluExample> = test.iter().map(|u| NluExample::from_annotated(u)).collect::<Result<_>>()?;
    let base_eval = evaluate(&baseline, &examples)?;
    let aug_eval = evaluate(&augmented, &examples)?;
    let improvement = match (base_eval.semer, aug_eval.semer) {
        (Some(b), Some(a)) if b > 0.0 => Some((b - a) / b),
        _ => None,
    };
    Ok(SkillExtrinsic {
        skill: skill.skill_name.clone(),
        intents: skill.intents().len(),
        slots: skill.slots.len(),
        unique_delex_utterances: skill.sample_utterances.iter().map(|s| &s.text).collect::<BTreeSet<_>>().len(),
        test_utterances: test.len(),
        candidates: candidates.len(),
        retained: filtered.retained.len(),
        intent_filter_rate: filtered.rate,
        fst,
        baseline: base_eval,
        augmented: aug_eval,
        semer_relative_improvement: improvement,
    })
}

/// Extrinsic suite over all skills; skills are evaluated in parallel.
pub fn extrinsic_report(
    skills: &[SkillDefinition],
    records: &[ParaphraseRecord],
    test: &[AnnotatedUtterance],
    cfg: &RunConfig,
) -> Result<ExtrinsicReport> {
    let by_name = skill_map(skills)?;
    if let Some(u) = test.iter().find(|u| !by_name.contains_key(u.domain_or_skill.as_str())) {
        return Err(Error::MalformedInput(format!(
            "test utterance `{}` names unknown skill `{}`",
            u.tokens.join(" "),
            u.domain_or_skill
        )));
    }
    let rows: Vec<SkillExtrinsic> = skills
        .par_iter()
        .map(|skill| {
            let recs: Vec<&ParaphraseRecord> = records.iter().filter(|r| r.skill == skill.skill_name).collect();
            let tests: Vec<&AnnotatedUtterance> = test.iter().filter(|u| u.domain_or_skill == skill.skill_name).collect();
            skill_extrinsic(skill, &recs, &tests, cfg)
        })
        .collect::<Result<_>>()?;

    let mut base_counts = Vec::new();
    let mut aug_counts = Vec::new();
    let mut base_wrong = 0;
    let mut aug_wrong = 0;
    let mut utterances = 0;
    for r in &rows {
        base_counts.push(r.baseline.counts);
        aug_counts.push(r.augmented.counts);
        base_wrong += r.baseline.counts.intent_error;
        aug_wrong += r.augmented.counts.intent_error;
        utterances += r.test_utterances;
    }
    let pooled = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let semer = |counts: &[crate::metrics::AlignmentCounts], n: usize| {
        let num: usize = counts
            .iter()
            .map(|c| c.substitutions + c.insertions + c.deletions + c.intent_error)
            .sum();
        let slots: usize = counts.iter().map(|c| c.total_ref_slots).sum();
        pooled(num, slots + n)
    };
    let ser = |counts: &[crate::metrics::AlignmentCounts]| {
        let num: usize = counts.iter().map(|c| c.substitutions + c.insertions + c.deletions).sum();
        pooled(num, counts.iter().map(|c| c.total_ref_slots).sum())
    };
    let candidates: usize = rows.iter().map(|r| r.candidates).sum();
    let retained: usize = rows.iter().map(|r| r.retained).sum();
    let totals = ExtrinsicTotals {
        skills: rows.len(),
        test_utterances: utterances,
        fst_new_matches: rows.iter().map(|r| r.fst.new_matches).sum(),
        fst_new_rules: rows.iter().map(|r| r.fst.new_rules).sum(),
        fst_unmatched_pool: rows.iter().map(|r| r.fst.unmatched_pool).sum(),
        candidates,
        retained,
        intent_filter_rate: pooled(retained, candidates),
        baseline_intent_error: pooled(base_wrong, utterances),
        augmented_intent_error: pooled(aug_wrong, utterances),
        baseline_ser: ser(&base_counts),
        augmented_ser: ser(&aug_counts),
        baseline_semer: semer(&base_counts, utterances),
        augmented_semer: semer(&aug_counts, utterances),
    };

    let scored: Vec<&SkillExtrinsic> = rows.iter().filter(|r| r.semer_relative_improvement.is_some()).collect();
    let target: Vec<f64> = scored.iter().filter_map(|r| r.semer_relative_improvement).collect();
    let features: [(&str, fn(&SkillExtrinsic) -> f64); 3] = [
        ("intents", |r| r.intents as f64),
        ("slots", |r| r.slots as f64),
        ("unique_delex_utterances", |r| r.unique_delex_utterances as f64),
    ];
    let mut correlation = BTreeMap::new();
    for (name, f) in features {
        let x: Vec<f64> = scored.iter().map(|r| f(r)).collect();
        let rho = if x.len() >= 2 { spearman(&x, &target)? } else { None };
        correlation.insert(name.to_string(), rho);
    }
    Ok(ExtrinsicReport {
        skills: rows,
        totals,
        semer_improvement_correlation: correlation,
    })
}

pub fn eval_extrinsic(cfg: &RunConfig) -> Result<ExtrinsicReport> {
    let skills = load_skills(cfg)?;
    let records = read_paraphrases(&cfg.path(PARAPHRASES_FILE))?;
    let test_path = cfg
        .test
        .as_ref()
        .ok_or_else(|| Error::Usage("the extrinsic suite needs a test set (`test`)".into()))?;
    let test = read_annotated_jsonl(&read(test_path)?, &test_path.display().to_string())?;
    let report = extrinsic_report(&skills, &records, &test, cfg)?;
    write_json(&cfg.path(EXTRINSIC_REPORT), &report)?;
    Ok(report)
}

/// Writes a synthetic corpus as `skills.json` and `test.jsonl` under `dir`.
pub fn write_synth(dir: &Path, corpus: &crate::synth::SynthCorpus) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let skills_path = dir.join("skills.json");
    let test_path = dir.join("test.jsonl");
    let mut text = String::from("[\n");
    for (i, s) in corpus.skills.iter().enumerate() {
        text.push_str(&s.to_json()?);
        text.push_str(if i + 1 < corpus.skills.len() { ",\n" } else { "\n" });
    }
    text.push_str("]\n");
    fs::write(&skills_path, text)?;
    let mut lines = String::new();
    for u in &corpus.test {
        lines.push_str(&serde_json::to_string(u)?);
        lines.push('\n');
    }
    fs::write(&test_path, lines)?;
    Ok((skills_path, test_path))
}
