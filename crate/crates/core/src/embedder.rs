//! Input token embeddings.
//!
//! * `S1`, `AS`: one table row per token.
//! * `S2`: a slot-value bundle embeds as the mean word embedding over every
//!   word of every value (flattened, so longer values weigh more).
//! * `S3`: each value runs through a kernel-3 convolution and ReLU, is
//!   mean-pooled over positions and projected by a dense layer; the bundle is
//!   the uniform mean of those phrase embeddings.

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Real, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbeddingVariant {
    S1,
    AS,
    S2,
    S3,
}

impl EmbeddingVariant {
    pub fn takes_bundles(self) -> bool {
        matches!(self, EmbeddingVariant::S2 | EmbeddingVariant::S3)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub variant: EmbeddingVariant,
    pub embed_dim: usize,
    pub conv_channels: usize,
    pub kernel: usize,
}

impl EmbeddingConfig {
    pub fn new(variant: EmbeddingVariant, embed_dim: usize) -> Self {
        EmbeddingConfig {
            variant,
            embed_dim,
            conv_channels: embed_dim,
            kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.conv_channels == 0 {
            return Err(Error::Config("embedding sizes must be positive".into()));
        }
        if self.kernel != 3 {
            return Err(Error::Config(format!(
                "phrase convolution kernel must be 3, got {}",
                self.kernel
            )));
        }
        Ok(())
    }
}

/// One input position: a vocabulary id, or a bundle of values given as
/// vocabulary ids per value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EmbedToken {
    Id(usize),
    Bundle(Vec<Vec<usize>>),
}

#[derive(Clone, Debug)]
pub struct Embedder {
    pub config: EmbeddingConfig,
    pub table: ParamId,
    phrase: Option<PhraseEncoder>,
}

#[derive(Clone, Debug)]
struct PhraseEncoder {
    conv_w: ParamId,
    conv_b: ParamId,
    dense_w: ParamId,
    dense_b: ParamId,
}

impl Embedder {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: EmbeddingConfig,
        vocab_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let table = store.embedding(&format!("{prefix}.table"), vocab_size, d, rng)?;
        let phrase = if config.variant == EmbeddingVariant::S3 {
            let c = config.conv_channels;
            Some(PhraseEncoder {
                conv_w: store.xavier(&format!("{prefix}.conv.w"), 3 * d, c, rng)?,
                conv_b: store.constant(&format!("{prefix}.conv.b"), c, 0.0)?,
                dense_w: store.xavier(&format!("{prefix}.dense.w"), c, d, rng)?,
                dense_b: store.constant(&format!("{prefix}.dense.b"), d, 0.0)?,
            })
        } else {
            None
        };
        Ok(Embedder {
            config,
            table,
            phrase,
        })
    }

    /// `[len × embed_dim]` embeddings, before positional encoding.
    pub fn embed_sequence<T: Real>(&self, g: &mut Graph<'_, T>, tokens: &[EmbedToken]) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::MalformedInput("cannot embed an empty sequence".into()));
        }
        let table = g.param(self.table);
        let mut pieces = Vec::new();
        let mut run = Vec::new();
        for t in tokens {
            match t {
                EmbedToken::Id(id) => run.push(*id),
                EmbedToken::Bundle(values) => {
                    if !run.is_empty() {
                        pieces.push(g.embedding_lookup(table, &run)?);
                        run.clear();
                    }
                    pieces.push(self.embed_bundle(g, table, values)?);
                }
            }
        }
        if !run.is_empty() {
            pieces.push(g.embedding_lookup(table, &run)?);
        }
        if pieces.len() == 1 {
            Ok(pieces[0])
        } else {
            g.concat(&pieces, 0)
        }
    }

    fn embed_bundle<T: Real>(&self, g: &mut Graph<'_, T>, table: Var, values: &[Vec<usize>]) -> Result<Var> {
        if values.is_empty() || values.iter().any(Vec::is_empty) {
            return Err(Error::MalformedInput("empty slot-value bundle".into()));
        }
        match (self.config.variant, &self.phrase) {
            (EmbeddingVariant::S2, _) => {
                let flat: Vec<usize> = values.iter().flatten().copied().collect();
                let rows = g.embedding_lookup(table, &flat)?;
                g.mean_pool(rows, 0)
            }
            (EmbeddingVariant::S3, Some(p)) => {
                let w = g.param(p.conv_w);
                let b = g.param(p.conv_b);
                let mut pooled = Vec::with_capacity(values.len());
                for v in values {
                    let rows = g.embedding_lookup(table, v)?;
                    let c = g.conv1d(rows, w, b)?;
                    let c = g.relu(c);
                    pooled.push(g.mean_pool(c, 0)?);
                }
                let stacked = if pooled.len() == 1 {
                    pooled[0]
                } else {
                    g.concat(&pooled, 0)?
                };
                let dw = g.param(p.dense_w);
                let db = g.param(p.dense_b);
                let proj = g.matmul(stacked, dw)?;
                let phrases = g.add_row(proj, db)?;
                g.mean_pool(phrases, 0)
            }
            (variant, _) => Err(Error::MalformedInput(format!(
                "{variant:?} embeddings take no slot-value bundles"
            ))),
        }
    }
}

/// Sinusoidal position encodings, `[length × dim]`.
pub fn positional_encoding<T: Real>(length: usize, dim: usize) -> Result<Tensor<T>> {
    if length == 0 {
        return Err(Error::MalformedInput("positional encoding of length 0".into()));
    }
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::Config(format!(
            "positional encoding needs an even dimension, got {dim}"
        )));
    }
    let mut data = vec![T::zero(); length * dim];
    for pos in 0..length {
        for i in 0..dim / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            data[pos * dim + 2 * i] = T::of(angle.sin());
            data[pos * dim + 2 * i + 1] = T::of(angle.cos());
        }
    }
    Tensor::new(vec![length, dim], data)
}
