//! Joint intent classifier and BIO slot tagger, plus the augmentation
//! pipeline built on it.
//!
//! Tokens are embedded and passed through a shared feed-forward layer. The
//! intent head reads the mean of those states; the tag head reads each
//! token's three-token window plus the same mean.

use crate::corpus::{AnnotatedUtterance, DelexUtterance, SkillDefinition, SlotCatalog, Vocab, UNK};
use crate::error::{Error, Result};
use crate::generator::lexicalize;
use crate::metrics::{corpus_semer, corpus_ser, entity_alignment, repair_bio, AlignmentCounts};
use crate::seed::rng_for;
use crate::tensor::{Adam, AdamConfig, Graph, OptimizerState, ParamGrads, ParamId, ParamStore, Tensor};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NluConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Slot fillings per paraphrase in the intent filter (majority vote).
    pub filter_fillings: usize,
}

impl Default for NluConfig {
    fn default() -> Self {
        NluConfig {
            embed_dim: 32,
            hidden: 64,
            epochs: 30,
            batch_size: 8,
            learning_rate: 0.005,
            adam: AdamConfig {
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
            },
            seed: 0,
            filter_fillings: 1,
        }
    }
}

impl NluConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden == 0 || self.batch_size == 0 || self.filter_fillings == 0 {
            return Err(Error::Config(
                "embed_dim, hidden, batch_size and filter_fillings must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// A delexicalized training sample and its intent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NluSample {
    pub text: DelexUtterance,
    pub intent: String,
}

/// Everything a skill contributes to NLU training.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NluData {
    pub intents: BTreeSet<String>,
    pub samples: Vec<NluSample>,
    pub catalog: SlotCatalog,
}

impl NluData {
    pub fn from_skill(skill: &SkillDefinition) -> Self {
        NluData {
            intents: skill.intents().into_iter().map(String::from).collect(),
            samples: skill
                .sample_utterances
                .iter()
                .map(|s| NluSample {
                    text: s.text.clone(),
                    intent: s.intent.clone(),
                })
                .collect(),
            catalog: skill.slots.clone(),
        }
    }
}

/// A lexicalized utterance with gold labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NluExample {
    pub words: Vec<String>,
    pub intent: String,
    pub tags: Vec<String>,
}

impl NluExample {
    pub fn new(words: Vec<String>, intent: String, tags: Vec<String>) -> Result<Self> {
        if words.len() != tags.len() {
            return Err(Error::MalformedAnnotation(format!(
                "{} words but {} tags",
                words.len(),
                tags.len()
            )));
        }
        if repair_bio(&tags).1 {
            return Err(Error::MalformedAnnotation(format!(
                "ill-formed BIO sequence: {}",
                tags.join(" ")
            )));
        }
        Ok(NluExample { words, intent, tags })
    }

    pub fn from_annotated(u: &AnnotatedUtterance) -> Result<Self> {
        NluExample::new(u.tokens.clone(), u.intent.clone(), u.bio_tags()?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub intent: String,
    /// Well-formed BIO, one tag per input word.
    pub tags: Vec<String>,
}

#[derive(Clone, Copy, Debug)]
struct Params {
    embed: ParamId,
    enc_w: ParamId,
    enc_b: ParamId,
    intent_w: ParamId,
    intent_b: ParamId,
    tag_w: ParamId,
    tag_b: ParamId,
    ctx_w: ParamId,
}

#[derive(Clone, Debug)]
pub struct NluModel {
    pub config: NluConfig,
    pub vocab: Vocab,
    pub intents: Vec<String>,
    pub tags: Vec<String>,
    store: ParamStore<f32>,
    params: Params,
}

fn tag_inventory(catalog: &SlotCatalog) -> Vec<String> {
    let mut tags = vec!["O".to_string()];
    for s in catalog.slots() {
        tags.push(format!("B-{s}"));
        tags.push(format!("I-{s}"));
    }
    tags
}

impl NluModel {
    fn init(cfg: &NluConfig, vocab: Vocab, intents: Vec<String>, tags: Vec<String>) -> Result<Self> {
        let mut rng = rng_for(cfg.seed, &["nlu-init"]);
        let mut s = ParamStore::new();
        let (d, h) = (cfg.embed_dim, cfg.hidden);
        let params = Params {
            embed: s.embedding("embed", vocab.len(), d, &mut rng)?,
            enc_w: s.xavier("enc.w", d, h, &mut rng)?,
            enc_b: s.constant("enc.b", h, 0.0)?,
            intent_w: s.xavier("intent.w", h, intents.len(), &mut rng)?,
            intent_b: s.constant("intent.b", intents.len(), 0.0)?,
            tag_w: s.xavier("tag.w", 3 * h, tags.len(), &mut rng)?,
            tag_b: s.constant("tag.b", tags.len(), 0.0)?,
            ctx_w: s.xavier("tag.ctx", h, tags.len(), &mut rng)?,
        };
        Ok(NluModel {
            config: cfg.clone(),
            vocab,
            intents,
            tags,
            store: s,
            params,
        })
    }

    fn ids(&self, words: &[String]) -> Vec<usize> {
        words.iter().map(|w| self.vocab.get(w).unwrap_or(UNK)).collect()
    }

    /// Intent logits `[1×I]` and tag logits `[L×T]`.
    fn forward(&self, g: &mut Graph<'_, f32>, ids: &[usize]) -> Result<(crate::tensor::Var, crate::tensor::Var)> {
        let p = self.params;
        let table = g.param(p.embed);
        let x = g.embedding_lookup(table, ids)?;
        let w = g.param(p.enc_w);
        let b = g.param(p.enc_b);
        let h = g.matmul(x, w)?;
        let h = g.add_row(h, b)?;
        let h = g.relu(h);
        let pooled = g.mean_pool(h, 0)?;
        let iw = g.param(p.intent_w);
        let ib = g.param(p.intent_b);
        let intent = g.matmul(pooled, iw)?;
        let intent = g.add_row(intent, ib)?;
        let tw = g.param(p.tag_w);
        let tb = g.param(p.tag_b);
        let local = g.conv1d(h, tw, tb)?;
        let cw = g.param(p.ctx_w);
        let ctx = g.matmul(pooled, cw)?;
        let ctx = g.gather_rows(ctx, &vec![0; ids.len()])?;
        let tags = g.add(local, ctx)?;
        Ok((intent, tags))
    }

    pub fn predict(&self, words: &[String]) -> Result<Prediction> {
        if words.is_empty() {
            return Err(Error::MalformedInput("cannot classify an empty utterance".into()));
        }
        let mut g = Graph::new(&self.store);
        let (intent, tags) = self.forward(&mut g, &self.ids(words))?;
        let best = argmax(g.value(intent));
        let t = self.tags.len();
        let raw: Vec<String> = g
            .value(tags)
            .chunks(t)
            .map(|row| self.tags[argmax(row)].clone())
            .collect();
        Ok(Prediction {
            intent: self.intents[best].clone(),
            tags: repair_bio(&raw).0,
        })
    }

    /// Predictions for many utterances, computed in parallel.
    pub fn predict_batch(&self, utterances: &[Vec<String>]) -> Result<Vec<Prediction>> {
        utterances.par_iter().map(|u| self.predict(u)).collect()
    }

    pub fn param_count(&self) -> usize {
        self.store.total_size()
    }
}

fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Trains on per-epoch lexicalizations of the delexicalized samples.
pub fn train_nlu(data: &NluData, cfg: &NluConfig) -> Result<NluModel> {
    cfg.validate()?;
    let mut per_intent: BTreeMap<&str, usize> = data.intents.iter().map(|i| (i.as_str(), 0)).collect();
    for s in &data.samples {
        match per_intent.get_mut(s.intent.as_str()) {
            Some(c) => *c += 1,
            None => {
                return Err(Error::Training(format!(
                    "sample `{}` has undeclared intent `{}`",
                    s.text, s.intent
                )))
            }
        }
    }
    if let Some((intent, _)) = per_intent.iter().find(|(_, &c)| c == 0) {
        return Err(Error::Training(format!("intent `{intent}` has no training examples")));
    }
    if data.samples.is_empty() {
        return Err(Error::Training("no training samples".into()));
    }
    for s in &data.samples {
        if let Some(missing) = s.text.slot_names().find(|n| !data.catalog.contains(n)) {
            return Err(Error::UnknownSlot(missing.to_string()));
        }
    }
    let mut words: Vec<String> = data.samples.iter().flat_map(|s| s.text.words()).collect();
    for (_, values) in data.catalog.iter() {
        words.extend(values.iter().flatten().cloned());
    }
    let vocab = Vocab::from_words(words.iter().map(String::as_str), 1);
    let intents: Vec<String> = data.intents.iter().cloned().collect();
    let tags = tag_inventory(&data.catalog);
    let mut model = NluModel::init(cfg, vocab, intents, tags)?;
    let intent_id: BTreeMap<&str, usize> = model.intents.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let tag_id: BTreeMap<&str, usize> = model.tags.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let mut store = std::mem::take(&mut model.store);
    let mut state = OptimizerState::new(&store, cfg.adam);
    let mut grads = ParamGrads::zeros_like(&store);
    for epoch in 0..cfg.epochs {
        let e = epoch.to_string();
        let examples = data
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let lex = lexicalize(&s.text, &data.catalog, &mut rng_for(cfg.seed, &["nlu-lexicalize", &e, &i.to_string()]))?;
                let tags: Vec<usize> = lex.bio_tags().iter().map(|t| tag_id[t.as_str()]).collect();
                Ok((model.ids(&lex.words), intent_id[s.intent.as_str()], tags))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &["nlu-shuffle", &e]));
        for chunk in order.chunks(cfg.batch_size) {
            grads.zero();
            for &i in chunk {
                let (ids, intent, tags) = &examples[i];
                if ids.is_empty() {
                    continue;
                }
                let mut g = Graph::new(&store);
                let (il, tl) = model.forward(&mut g, ids)?;
                let li = g.cross_entropy(il, &[*intent])?;
                let lt = g.cross_entropy(tl, tags)?;
                let loss = g.add(li, lt)?;
                if !g.scalar(loss).is_finite() {
                    return Err(Error::Training(format!("non-finite NLU loss in epoch {}", epoch + 1)));
                }
                let loss = g.scale(loss, 1.0 / chunk.len() as f32);
                g.backward(loss)?.accumulate(&mut grads);
            }
            Adam::step(&mut store, &grads, &mut state, cfg.learning_rate);
        }
    }
    model.store = store;
    Ok(model)
}

/// A paraphrase proposed for augmentation, labelled with its source intent.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FilterCandidate {
    pub text: DelexUtterance,
    pub intent: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub retained: Vec<FilterCandidate>,
    pub total: usize,
    /// `retained / total`, absent for an empty input.
    pub rate: Option<f64>,
}

/// Keeps candidates whose lexicalized forms the model assigns to their
/// source intent in a strict majority of `model.config.filter_fillings` draws.
pub fn intent_filter(
    candidates: &[FilterCandidate],
    model: &NluModel,
    catalog: &SlotCatalog,
    seed: u64,
) -> Result<FilterOutcome> {
    let k = model.config.filter_fillings.max(1);
    let mut retained = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        let mut votes = 0;
        for f in 0..k {
            let mut rng = rng_for(seed, &["intent-filter", &c.text.to_string(), &i.to_string(), &f.to_string()]);
            let lex = lexicalize(&c.text, catalog, &mut rng)?;
            if lex.words.is_empty() {
                continue;
            }
            if model.predict(&lex.words)?.intent == c.intent {
                votes += 1;
            }
        }
        if 2 * votes > k {
            retained.push(c.clone());
        }
    }
    Ok(FilterOutcome {
        total: candidates.len(),
        rate: (!candidates.is_empty()).then(|| retained.len() as f64 / candidates.len() as f64),
        retained,
    })
}

/// Retrains from scratch on the original samples plus retained paraphrases.
pub fn augment_and_retrain(data: &NluData, retained: &[FilterCandidate], cfg: &NluConfig) -> Result<NluModel> {
    let mut augmented = data.clone();
    augmented.samples.extend(retained.iter().map(|c| NluSample {
        text: c.text.clone(),
        intent: c.intent.clone(),
    }));
    train_nlu(&augmented, cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NluEvaluation {
    pub utterances: usize,
    pub intent_error_rate: Option<f64>,
    pub ser: Option<f64>,
    pub semer: Option<f64>,
    pub counts: AlignmentCounts,
}

pub fn evaluate(model: &NluModel, test: &[NluExample]) -> Result<NluEvaluation> {
    let inputs: Vec<Vec<String>> = test.iter().map(|e| e.words.clone()).collect();
    let preds = model.predict_batch(&inputs)?;
    let mut all = Vec::with_capacity(test.len());
    let mut total = AlignmentCounts::default();
    for (e, p) in test.iter().zip(&preds) {
        let c = entity_alignment(&e.tags, &p.tags, &e.intent, &p.intent)?;
        total.add(&c);
        all.push(c);
    }
    Ok(NluEvaluation {
        utterances: test.len(),
        intent_error_rate: (!test.is_empty()).then(|| total.intent_error as f64 / test.len() as f64),
        ser: corpus_ser(&all),
        semer: corpus_semer(&all),
        counts: total,
    })
}

impl NluModel {
    /// Parameter tensors, for comparing two trained models.
    pub fn parameters(&self) -> Vec<(String, Tensor<f32>)> {
        self.store
            .iter()
            .map(|(_, name, t)| (name.to_string(), t.clone()))
            .collect()
    }
}
