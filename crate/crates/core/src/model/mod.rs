//! Transformer encoder-decoder whose output layer spans `n` copy classes
//! (one per source position) followed by `|V|` vocabulary classes.
//!
//! Copy scores are cross-attention logits of the last decoder layer, taken
//! before the softmax so they are on the same footing as the unnormalized
//! vocabulary scores `d_t · E_out`. Formats without pointers use `n = 0`.

mod layers;
mod store;
mod train;

pub use store::{load_model, save_model, ModelMetadata};
pub use train::{
    eval_loss, prepare_examples, train, training_loss, TrainConfig, TrainExample, TrainReport,
};

use crate::corpus::{DataFormat, FormattedPair, SourceToken, TargetToken, Vocab, BOS, EOS};
use crate::embedder::{positional_encoding, EmbedToken, Embedder, EmbeddingConfig, EmbeddingVariant};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::tensor::{softmax_in_place, Graph, ParamId, ParamStore, Real, Tensor, Var};
use layers::{DecoderLayer, EncoderLayer};
use serde::{Deserialize, Serialize};

/// How per-head cross-attention logits collapse into one copy score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointerScores {
    MeanOverHeads,
    MaxOverHeads,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub heads: usize,
    pub layers: usize,
    pub hidden: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub embedding: EmbeddingConfig,
    pub max_len: usize,
    pub pointer_scores: PointerScores,
}

impl ModelConfig {
    /// 2 layers, 4 heads, hidden 128, max length 32.
    pub fn desk(variant: EmbeddingVariant) -> Self {
        ModelConfig {
            heads: 4,
            layers: 2,
            hidden: 128,
            ffn_dim: 512,
            dropout: 0.1,
            embedding: EmbeddingConfig::new(variant, 128),
            max_len: 32,
            pointer_scores: PointerScores::MeanOverHeads,
        }
    }

    /// 6 layers, 8 heads, hidden 512, 512 phrase channels.
    pub fn full(variant: EmbeddingVariant) -> Self {
        let mut embedding = EmbeddingConfig::new(variant, 512);
        embedding.conv_channels = 512;
        ModelConfig {
            heads: 8,
            layers: 6,
            hidden: 512,
            ffn_dim: 2048,
            dropout: 0.1,
            embedding,
            max_len: 32,
            pointer_scores: PointerScores::MeanOverHeads,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.layers == 0 || self.hidden == 0 || self.ffn_dim == 0 {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be positive".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.hidden % 2 != 0 {
            return Err(Error::Config(format!(
                "hidden size {} must be even for positional encoding",
                self.hidden
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.embedding.embed_dim != self.hidden {
            return Err(Error::Config(format!(
                "embedding dimension {} differs from hidden size {}",
                self.embedding.embed_dim, self.hidden
            )));
        }
        self.embedding.validate()
    }
}

/// Encoder input: embeddable tokens and whether copy classes are in play.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceInput {
    pub tokens: Vec<EmbedToken>,
    pub copy: bool,
}

impl SourceInput {
    pub fn from_pair(pair: &FormattedPair, vocab: &Vocab) -> Self {
        Self::from_tokens(&pair.source, pair.format, vocab)
    }

    pub fn from_tokens(source: &[SourceToken], format: DataFormat, vocab: &Vocab) -> Self {
        let tokens = source
            .iter()
            .map(|t| match t {
                SourceToken::Bundle(b) => EmbedToken::Bundle(
                    b.values
                        .iter()
                        .map(|v| v.iter().map(|w| vocab.id(w)).collect())
                        .collect(),
                ),
                other => EmbedToken::Id(vocab.id(&other.text())),
            })
            .collect();
        SourceInput {
            tokens,
            copy: format.uses_pointers(),
        }
    }

    /// Number of copy classes.
    pub fn n(&self) -> usize {
        if self.copy {
            self.tokens.len()
        } else {
            0
        }
    }
}

/// Output classes for a target sequence, with EOS appended: pointer `@ptr i`
/// is class `i`, anything else is `n + vocab id`.
pub fn target_classes(pair: &FormattedPair, vocab: &Vocab) -> Result<Vec<usize>> {
    let n = if pair.format.uses_pointers() {
        pair.source.len()
    } else {
        0
    };
    let mut out = Vec::with_capacity(pair.target.len() + 1);
    for t in &pair.target {
        match t {
            TargetToken::Pointer(i) if *i < n => out.push(*i),
            TargetToken::Pointer(i) => {
                return Err(Error::Data {
                    pair: pair.id.clone(),
                    message: format!("pointer @ptr{i} has no source position (n = {n})"),
                })
            }
            other => out.push(n + vocab.id(&other.text())),
        }
    }
    out.push(n + EOS);
    Ok(out)
}

/// Scores of one decoding step.
#[derive(Clone, Debug, PartialEq)]
pub struct PointerLogits<T = f32> {
    pub copy_scores: Vec<T>,
    pub vocab_scores: Vec<T>,
    pub combined: Vec<T>,
}

impl<T: Real> PointerLogits<T> {
    pub fn new(copy_scores: Vec<T>, vocab_scores: Vec<T>) -> Self {
        let combined = copy_scores.iter().chain(&vocab_scores).copied().collect();
        PointerLogits {
            copy_scores,
            vocab_scores,
            combined,
        }
    }

    pub fn n(&self) -> usize {
        self.copy_scores.len()
    }
}

/// Softmax over the combined `n + |V|` scores.
pub fn output_distribution<T: Real>(logits: &PointerLogits<T>) -> Vec<T> {
    let mut p = logits.combined.clone();
    softmax_in_place(&mut p);
    p
}

/// Encoder output for one source.
#[derive(Clone, Debug)]
pub struct EncoderMemory<T = f32> {
    pub states: Tensor<T>,
    /// Unscaled source embeddings; copied tokens re-enter the decoder as these rows.
    pub source_embeddings: Tensor<T>,
    pub source: SourceInput,
    pub n: usize,
    cross: Vec<(Tensor<T>, Tensor<T>)>,
}

/// Incremental decoding state: per-layer self-attention keys and values.
#[derive(Clone, Debug)]
pub struct DecoderState<T = f32> {
    cache: Vec<(Tensor<T>, Tensor<T>)>,
    len: usize,
    pub hidden: Option<Vec<T>>,
}

impl<T: Real> DecoderState<T> {
    /// Number of decoded positions held in the cache.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cache_len(&self, layer: usize) -> usize {
        self.cache.get(layer).map_or(0, |(k, _)| k.shape()[0])
    }
}

#[derive(Clone, Debug)]
pub struct Seq2Seq {
    pub config: ModelConfig,
    pub vocab_size: usize,
    embedder: Embedder,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    output: ParamId,
    positions: Tensor<f64>,
}

pub(crate) struct Forward {
    pub logits: Var,
}

impl Seq2Seq {
    /// Builds the model and its freshly initialized parameters.
    pub fn new<T: Real>(config: ModelConfig, vocab_size: usize, seed: u64) -> Result<(Self, ParamStore<T>)> {
        config.validate()?;
        if vocab_size <= EOS {
            return Err(Error::Config(format!("vocabulary of {vocab_size} tokens is too small")));
        }
        let mut rng = rng_for(seed, &["model-init"]);
        let mut store = ParamStore::new();
        let d = config.hidden;
        let embedder = Embedder::new(&mut store, "embed", config.embedding, vocab_size, &mut rng)?;
        let encoder = (0..config.layers)
            .map(|i| {
                EncoderLayer::new(&mut store, &format!("enc.{i}"), d, config.heads, config.ffn_dim, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let decoder = (0..config.layers)
            .map(|i| {
                DecoderLayer::new(&mut store, &format!("dec.{i}"), d, config.heads, config.ffn_dim, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let output = store.embedding("output.table", vocab_size, d, &mut rng)?;
        let positions = positional_encoding(config.max_len + 1, d)?;
        Ok((
            Seq2Seq {
                config,
                vocab_size,
                embedder,
                encoder,
                decoder,
                output,
                positions,
            },
            store,
        ))
    }

    fn position_rows<T: Real>(&self, start: usize, len: usize) -> Result<Tensor<T>> {
        let d = self.config.hidden;
        if start + len > self.config.max_len + 1 {
            return Err(Error::Length {
                len: start + len,
                max: self.config.max_len + 1,
            });
        }
        let data = self.positions.data()[start * d..(start + len) * d]
            .iter()
            .map(|&x| T::of(x))
            .collect();
        Tensor::new(vec![len, d], data)
    }

    /// `embeddings · √d + positions`, then dropout.
    fn prepare_input<T: Real>(&self, g: &mut Graph<'_, T>, emb: Var, offset: usize) -> Result<Var> {
        let (rows, _) = g.dims(emb);
        let scaled = g.scale(emb, T::of((self.config.hidden as f64).sqrt()));
        let pe = self.position_rows(offset, rows)?;
        let pe = g.constant(pe);
        let x = g.add(scaled, pe)?;
        Ok(g.dropout(x, self.config.dropout))
    }

    fn check_source(&self, src: &SourceInput) -> Result<()> {
        if src.tokens.is_empty() {
            return Err(Error::MalformedInput("empty source sequence".into()));
        }
        if src.tokens.len() > self.config.max_len {
            return Err(Error::Length {
                len: src.tokens.len(),
                max: self.config.max_len,
            });
        }
        Ok(())
    }

    /// Returns (raw source embeddings, encoder states).
    pub(crate) fn encode_graph<T: Real>(&self, g: &mut Graph<'_, T>, src: &SourceInput) -> Result<(Var, Var)> {
        self.check_source(src)?;
        let emb = self.embedder.embed_sequence(g, &src.tokens)?;
        let mut x = self.prepare_input(g, emb, 0)?;
        for layer in &self.encoder {
            x = layer.forward(g, x, self.config.dropout)?;
        }
        Ok((emb, x))
    }

    fn decoder_table<T: Real>(&self, g: &mut Graph<'_, T>, src_emb: Option<Var>) -> Result<Var> {
        let table = g.param(self.embedder.table);
        match src_emb {
            Some(e) => g.concat(&[e, table], 0),
            None => Ok(table),
        }
    }

    fn collapse_heads<T: Real>(&self, g: &mut Graph<'_, T>, scores: &[Var]) -> Result<Var> {
        let mut acc = scores[0];
        for &s in &scores[1..] {
            acc = match self.config.pointer_scores {
                PointerScores::MeanOverHeads => g.add(acc, s)?,
                PointerScores::MaxOverHeads => g.maximum(acc, s)?,
            };
        }
        if self.config.pointer_scores == PointerScores::MeanOverHeads && scores.len() > 1 {
            acc = g.scale(acc, T::of(1.0 / scores.len() as f64));
        }
        Ok(acc)
    }

    /// Decoder over embedded inputs at positions `offset..`, returning
    /// combined logits and the updated per-layer caches.
    #[allow(clippy::type_complexity)]
    fn decode_graph<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        inputs: Var,
        offset: usize,
        past: &[Option<(Var, Var)>],
        memory: &[(Var, Var)],
        copy: bool,
    ) -> Result<(Var, Var, Option<Var>, Vec<(Var, Var)>)> {
        let mut x = self.prepare_input(g, inputs, offset)?;
        let mut caches = Vec::with_capacity(self.decoder.len());
        let mut last_scores = Vec::new();
        for (i, layer) in self.decoder.iter().enumerate() {
            let out = layer.forward(g, x, offset, past[i], memory[i], self.config.dropout)?;
            x = out.out;
            caches.push((out.keys, out.values));
            last_scores = out.cross_scores;
        }
        let table = g.param(self.output);
        let table_t = g.transpose(table);
        let vocab = g.matmul(x, table_t)?;
        let (logits, copy_scores) = if copy {
            let c = self.collapse_heads(g, &last_scores)?;
            (g.concat(&[c, vocab], 1)?, Some(c))
        } else {
            (vocab, None)
        };
        Ok((logits, vocab, copy_scores, caches))
    }

    /// Teacher-forced logits `[T × (n+|V|)]` for decoder input classes
    /// (the first of which is normally `n + BOS`).
    pub(crate) fn forward_graph<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        src: &SourceInput,
        input_classes: &[usize],
    ) -> Result<Forward> {
        if input_classes.is_empty() {
            return Err(Error::MalformedInput("empty decoder prefix".into()));
        }
        let (emb, states) = self.encode_graph(g, src)?;
        let memory = self
            .decoder
            .iter()
            .map(|l| l.cross.keys_values(g, states))
            .collect::<Result<Vec<_>>>()?;
        let table = self.decoder_table(g, if src.copy { Some(emb) } else { None })?;
        let inputs = g.gather_rows(table, input_classes)?;
        let past = vec![None; self.decoder.len()];
        let (logits, _, _, _) = self.decode_graph(g, inputs, 0, &past, &memory, src.copy)?;
        Ok(Forward { logits })
    }

    /// Mean cross-entropy of one pair under teacher forcing; `targets`
    /// ends with EOS.
    pub fn pair_loss<T: Real>(&self, g: &mut Graph<'_, T>, src: &SourceInput, targets: &[usize]) -> Result<Var> {
        let n = src.n();
        let mut inputs = Vec::with_capacity(targets.len());
        inputs.push(n + BOS);
        inputs.extend_from_slice(&targets[..targets.len().saturating_sub(1)]);
        let f = self.forward_graph(g, src, &inputs)?;
        g.cross_entropy(f.logits, targets)
    }

    /// Teacher-forced logits as a tensor, in evaluation mode.
    pub fn teacher_forced_logits<T: Real>(
        &self,
        store: &ParamStore<T>,
        src: &SourceInput,
        input_classes: &[usize],
    ) -> Result<Tensor<T>> {
        let mut g = Graph::new(store);
        let f = self.forward_graph(&mut g, src, input_classes)?;
        Ok(g.tensor(f.logits))
    }

    pub fn encode<T: Real>(&self, store: &ParamStore<T>, src: &SourceInput) -> Result<EncoderMemory<T>> {
        let mut g = Graph::new(store);
        let (emb, states) = self.encode_graph(&mut g, src)?;
        let mut cross = Vec::with_capacity(self.decoder.len());
        for l in &self.decoder {
            let (k, v) = l.cross.keys_values(&mut g, states)?;
            cross.push((g.tensor(k), g.tensor(v)));
        }
        Ok(EncoderMemory {
            states: g.tensor(states),
            source_embeddings: g.tensor(emb),
            n: src.n(),
            source: src.clone(),
            cross,
        })
    }

    pub fn start<T: Real>(&self) -> DecoderState<T> {
        DecoderState {
            cache: Vec::new(),
            len: 0,
            hidden: None,
        }
    }

    /// Feeds one input class and returns the scores for the next position.
    pub fn decode_step<T: Real>(
        &self,
        store: &ParamStore<T>,
        memory: &EncoderMemory<T>,
        state: &mut DecoderState<T>,
        class: usize,
    ) -> Result<PointerLogits<T>> {
        let n = memory.n;
        if class >= n + self.vocab_size {
            return Err(Error::Internal(format!(
                "decoder input class {class} outside {} classes",
                n + self.vocab_size
            )));
        }
        let mut g = Graph::new(store);
        let input = if class < n {
            let d = self.config.hidden;
            let row = memory.source_embeddings.row(class).to_vec();
            g.constant(Tensor::new(vec![1, d], row)?)
        } else {
            let table = g.param(self.embedder.table);
            g.gather_rows(table, &[class - n])?
        };
        let past: Vec<Option<(Var, Var)>> = (0..self.decoder.len())
            .map(|i| {
                state
                    .cache
                    .get(i)
                    .map(|(k, v)| (g.constant(k.clone()), g.constant(v.clone())))
            })
            .collect();
        let mem: Vec<(Var, Var)> = memory
            .cross
            .iter()
            .map(|(k, v)| (g.constant(k.clone()), g.constant(v.clone())))
            .collect();
        let (_, vocab, copy, caches) = self.decode_graph(&mut g, input, state.len, &past, &mem, n > 0)?;
        state.cache = caches.iter().map(|&(k, v)| (g.tensor(k), g.tensor(v))).collect();
        state.len += 1;
        let copy_scores = copy.map(|c| g.value(c).to_vec()).unwrap_or_default();
        Ok(PointerLogits::new(copy_scores, g.value(vocab).to_vec()))
    }

    /// Scores for the position after `prefix` (which starts with `n + BOS`).
    pub fn decode_prefix<T: Real>(
        &self,
        store: &ParamStore<T>,
        memory: &EncoderMemory<T>,
        prefix: &[usize],
    ) -> Result<PointerLogits<T>> {
        if prefix.is_empty() {
            return Err(Error::MalformedInput("empty decoder prefix".into()));
        }
        let mut state = self.start();
        let mut last = None;
        for &c in prefix {
            last = Some(self.decode_step(store, memory, &mut state, c)?);
        }
        Ok(last.expect("prefix is non-empty"))
    }

    /// Parameter names in creation order; checkpoints must list the same.
    pub fn param_layout<T: Real>(&self, store: &ParamStore<T>) -> Vec<(String, Vec<usize>)> {
        store
            .iter()
            .map(|(_, name, t)| (name.to_string(), t.shape().to_vec()))
            .collect()
    }
}

#[cfg(test)]
mod tests;
