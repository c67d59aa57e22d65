use super::{target_classes, Seq2Seq, SourceInput};
use crate::corpus::{FormattedPair, Vocab};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_for};
use crate::tensor::{noam_rate, Adam, AdamConfig, Graph, OptimizerState, ParamGrads, ParamStore, Real};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Batches summed into one update.
    pub accumulation: usize,
    pub warmup: u64,
    /// Noam base factor.
    pub lr_base: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 32,
            accumulation: 1,
            warmup: 100,
            lr_base: 0.35,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.accumulation == 0 {
            return Err(Error::Config("batch size and accumulation must be positive".into()));
        }
        if self.warmup == 0 {
            return Err(Error::Config("warmup must be positive".into()));
        }
        if !(self.lr_base > 0.0) {
            return Err(Error::Config("learning-rate base must be positive".into()));
        }
        Ok(())
    }
}

/// A pair converted to model inputs: target classes end with EOS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainExample {
    pub id: String,
    pub source: SourceInput,
    pub targets: Vec<usize>,
}

pub fn prepare_examples(pairs: &[FormattedPair], vocab: &Vocab, max_len: usize) -> Result<Vec<TrainExample>> {
    if let Some(first) = pairs.first() {
        if let Some(p) = pairs.iter().find(|p| p.format != first.format) {
            return Err(Error::Usage(format!(
                "pair {} is {} but the batch is {}",
                p.id,
                p.format.as_str(),
                first.format.as_str()
            )));
        }
    }
    pairs
        .iter()
        .map(|p| {
            let targets = target_classes(p, vocab)?;
            if p.source.is_empty() || p.source.len() > max_len {
                return Err(Error::Length {
                    len: p.source.len(),
                    max: max_len,
                });
            }
            if targets.len() > max_len + 1 {
                return Err(Error::Length {
                    len: targets.len() - 1,
                    max: max_len,
                });
            }
            Ok(TrainExample {
                id: p.id.clone(),
                source: SourceInput::from_pair(p, vocab),
                targets,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Evaluation-mode loss before the first update.
    pub initial_loss: f64,
    /// Token-weighted training loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub updates: u64,
}

/// Token-weighted mean cross-entropy in evaluation mode.
pub fn eval_loss<T: Real>(model: &Seq2Seq, store: &ParamStore<T>, examples: &[TrainExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Usage("no examples to score".into()));
    }
    let mut total = 0.0;
    let mut tokens = 0usize;
    for ex in examples {
        let mut g = Graph::new(store);
        let loss = model.pair_loss(&mut g, &ex.source, &ex.targets)?;
        total += g.scalar(loss).as_f64() * ex.targets.len() as f64;
        tokens += ex.targets.len();
    }
    Ok(total / tokens as f64)
}

/// Mean token cross-entropy of a batch of pairs sharing one format.
pub fn training_loss<T: Real>(
    model: &Seq2Seq,
    store: &ParamStore<T>,
    pairs: &[FormattedPair],
    vocab: &Vocab,
) -> Result<f64> {
    let examples = prepare_examples(pairs, vocab, model.config.max_len)?;
    eval_loss(model, store, &examples)
}

/// Adam + Noam training; `on_epoch(epoch, loss)` runs after every epoch.
pub fn train<T: Real>(
    model: &Seq2Seq,
    store: &mut ParamStore<T>,
    examples: &[TrainExample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Usage("empty training set".into()));
    }
    let initial_loss = eval_loss(model, store, examples)?;
    let mut state = OptimizerState::new(store, cfg.adam);
    let mut grads = ParamGrads::zeros_like(store);
    let group = cfg.batch_size * cfg.accumulation;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &["shuffle", &epoch.to_string()]));
        let mut loss_sum = 0.0;
        let mut token_sum = 0usize;
        for chunk in order.chunks(group) {
            let tokens: usize = chunk.iter().map(|&i| examples[i].targets.len()).sum();
            grads.zero();
            for &i in chunk {
                let ex = &examples[i];
                let seed = derive_seed(cfg.seed, &["dropout", &epoch.to_string(), &ex.id, &i.to_string()]);
                let mut g = Graph::training(store, seed);
                let loss = model.pair_loss(&mut g, &ex.source, &ex.targets)?;
                let value = g.scalar(loss).as_f64();
                if !value.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite loss on pair {} in epoch {}",
                        ex.id,
                        epoch + 1
                    )));
                }
                loss_sum += value * ex.targets.len() as f64;
                let weighted = g.scale(loss, T::of(ex.targets.len() as f64 / tokens as f64));
                g.backward(weighted)?.accumulate(&mut grads);
            }
            let lr = noam_rate(state.step + 1, cfg.warmup, cfg.lr_base, model.config.hidden)?;
            Adam::step(store, &grads, &mut state, lr);
            token_sum += tokens;
        }
        let mean = loss_sum / token_sum as f64;
        on_epoch(epoch + 1, mean);
        epoch_losses.push(mean);
    }
    Ok(TrainReport {
        initial_loss,
        epoch_losses,
        updates: state.step,
    })
}
