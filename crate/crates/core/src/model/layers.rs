use crate::error::Result;
use crate::tensor::{Graph, ParamId, ParamStore, Real, Var};
use rand::Rng;

#[derive(Clone, Debug)]
pub(crate) struct Dense {
    w: ParamId,
    b: ParamId,
}

impl Dense {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Dense {
            w: store.xavier(&format!("{name}.w"), fan_in, fan_out, rng)?,
            b: store.constant(&format!("{name}.b"), fan_out, 0.0)?,
        })
    }

    pub fn apply<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

impl Norm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Norm {
            gamma: store.constant(&format!("{name}.gamma"), dim, 1.0)?,
            beta: store.constant(&format!("{name}.beta"), dim, 0.0)?,
        })
    }

    pub fn apply<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

pub(crate) struct Attended {
    pub out: Var,
    /// Scaled pre-softmax scores, one `[queries × keys]` matrix per head.
    pub scores: Vec<Var>,
}

#[derive(Clone, Debug)]
pub(crate) struct Attention {
    q: Dense,
    k: Dense,
    v: Dense,
    o: Dense,
    heads: usize,
}

impl Attention {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Attention {
            q: Dense::new(store, &format!("{name}.q"), dim, dim, rng)?,
            k: Dense::new(store, &format!("{name}.k"), dim, dim, rng)?,
            v: Dense::new(store, &format!("{name}.v"), dim, dim, rng)?,
            o: Dense::new(store, &format!("{name}.o"), dim, dim, rng)?,
            heads,
        })
    }

    pub fn keys_values<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<(Var, Var)> {
        Ok((self.k.apply(g, x)?, self.v.apply(g, x)?))
    }

    /// `mask`, when given, is row-major `[queries × keys]` with `true` = visible.
    pub fn attend<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        keys: Var,
        values: Var,
        mask: Option<&[bool]>,
    ) -> Result<Attended> {
        let q = self.q.apply(g, x)?;
        let (_, dim) = g.dims(q);
        let dk = dim / self.heads;
        let inv = T::of(1.0 / (dk as f64).sqrt());
        let mut outs = Vec::with_capacity(self.heads);
        let mut scores = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (a, b) = (h * dk, (h + 1) * dk);
            let qh = if self.heads == 1 { q } else { g.slice_cols(q, a, b)? };
            let kh = if self.heads == 1 { keys } else { g.slice_cols(keys, a, b)? };
            let vh = if self.heads == 1 { values } else { g.slice_cols(values, a, b)? };
            let kt = g.transpose(kh);
            let s = g.matmul(qh, kt)?;
            let s = g.scale(s, inv);
            let p = match mask {
                Some(m) => g.masked_softmax(s, m)?,
                None => g.softmax(s),
            };
            outs.push(g.matmul(p, vh)?);
            scores.push(s);
        }
        let joined = if outs.len() == 1 { outs[0] } else { g.concat(&outs, 1)? };
        Ok(Attended {
            out: self.o.apply(g, joined)?,
            scores,
        })
    }
}

#[derive(Clone, Debug)]
pub(crate) struct FeedForward {
    up: Dense,
    down: Dense,
}

impl FeedForward {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        inner: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(FeedForward {
            up: Dense::new(store, &format!("{name}.up"), dim, inner, rng)?,
            down: Dense::new(store, &format!("{name}.down"), inner, dim, rng)?,
        })
    }

    pub fn apply<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.up.apply(g, x)?;
        let h = g.relu(h);
        self.down.apply(g, h)
    }
}

/// `x + dropout(sub)`, then layer norm.
fn residual<T: Real>(g: &mut Graph<'_, T>, norm: &Norm, x: Var, sub: Var, rate: f64) -> Result<Var> {
    let sub = g.dropout(sub, rate);
    let sum = g.add(x, sub)?;
    norm.apply(g, sum)
}

#[derive(Clone, Debug)]
pub(crate) struct EncoderLayer {
    attn: Attention,
    norm1: Norm,
    ffn: FeedForward,
    norm2: Norm,
}

impl EncoderLayer {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        inner: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(EncoderLayer {
            attn: Attention::new(store, &format!("{name}.attn"), dim, heads, rng)?,
            norm1: Norm::new(store, &format!("{name}.norm1"), dim)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), dim, inner, rng)?,
            norm2: Norm::new(store, &format!("{name}.norm2"), dim)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, rate: f64) -> Result<Var> {
        let (k, v) = self.attn.keys_values(g, x)?;
        let a = self.attn.attend(g, x, k, v, None)?;
        let x = residual(g, &self.norm1, x, a.out, rate)?;
        let f = self.ffn.apply(g, x)?;
        residual(g, &self.norm2, x, f, rate)
    }
}

pub(crate) struct DecoderOut {
    pub out: Var,
    /// Self-attention keys and values over the whole prefix seen so far.
    pub keys: Var,
    pub values: Var,
    pub cross_scores: Vec<Var>,
}

#[derive(Clone, Debug)]
pub(crate) struct DecoderLayer {
    self_attn: Attention,
    norm1: Norm,
    pub cross: Attention,
    norm2: Norm,
    ffn: FeedForward,
    norm3: Norm,
}

/// Causal visibility for queries at positions `offset..offset+rows` over
/// keys at positions `0..offset+rows`.
pub(crate) fn causal_mask(rows: usize, offset: usize) -> Vec<bool> {
    let cols = offset + rows;
    let mut mask = vec![false; rows * cols];
    for i in 0..rows {
        for j in 0..=offset + i {
            mask[i * cols + j] = true;
        }
    }
    mask
}

impl DecoderLayer {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        inner: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(DecoderLayer {
            self_attn: Attention::new(store, &format!("{name}.self"), dim, heads, rng)?,
            norm1: Norm::new(store, &format!("{name}.norm1"), dim)?,
            cross: Attention::new(store, &format!("{name}.cross"), dim, heads, rng)?,
            norm2: Norm::new(store, &format!("{name}.norm2"), dim)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), dim, inner, rng)?,
            norm3: Norm::new(store, &format!("{name}.norm3"), dim)?,
        })
    }

    /// Runs rows of `x` sitting at positions `offset..`; `past` holds the
    /// self-attention keys and values of positions `0..offset`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        offset: usize,
        past: Option<(Var, Var)>,
        memory: (Var, Var),
        rate: f64,
    ) -> Result<DecoderOut> {
        let (rows, _) = g.dims(x);
        let (k, v) = self.self_attn.keys_values(g, x)?;
        let (keys, values) = match past {
            Some((pk, pv)) => (g.concat(&[pk, k], 0)?, g.concat(&[pv, v], 0)?),
            None => (k, v),
        };
        let mask = causal_mask(rows, offset);
        let a = self.self_attn.attend(g, x, keys, values, Some(&mask))?;
        let x = residual(g, &self.norm1, x, a.out, rate)?;
        let c = self.cross.attend(g, x, memory.0, memory.1, None)?;
        let x = residual(g, &self.norm2, x, c.out, rate)?;
        let f = self.ffn.apply(g, x)?;
        let out = residual(g, &self.norm3, x, f, rate)?;
        Ok(DecoderOut {
            out,
            keys,
            values,
            cross_scores: c.scores,
        })
    }
}
