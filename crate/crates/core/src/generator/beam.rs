use crate::corpus::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::model::{DecoderState, EncoderMemory, PointerLogits, Seq2Seq, SourceInput};
use crate::tensor::{log_sum_exp, ParamStore};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

/// Log-probabilities over the class space, one step at a time.
pub trait StepScorer {
    type State: Clone;

    /// State after the start symbol, with log-probabilities of the first class.
    fn start(&self) -> Result<(Self::State, Vec<f64>)>;

    /// Feeds `class` and returns log-probabilities of the next class.
    fn advance(&self, state: &Self::State, class: usize) -> Result<(Self::State, Vec<f64>)>;

    /// The end-of-sequence class.
    fn eos(&self) -> usize;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamConfig {
    pub beam: usize,
    pub nbest: usize,
    pub max_len: usize,
    /// Rank by log-probability per emitted token (EOS included).
    pub length_norm: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam: 5,
            nbest: 3,
            max_len: 32,
            length_norm: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Emitted classes, EOS excluded.
    pub classes: Vec<usize>,
    /// Sum of per-step log-softmax values, EOS step included.
    pub log_prob: f64,
    /// Ranking score (normalized when length normalization is on).
    pub score: f64,
    /// Ended with EOS; false when cut off at `max_len`.
    pub finished: bool,
}

fn rank_score(log_prob: f64, steps: usize, norm: bool) -> f64 {
    if norm {
        log_prob / steps.max(1) as f64
    } else {
        log_prob
    }
}

/// Higher score first, then lexicographically smaller class sequence.
fn by_rank(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(b.1))
}

struct Live<S> {
    classes: Vec<usize>,
    log_prob: f64,
    state: S,
    next: Vec<f64>,
}

/// Beam search that retires a slot of the beam for every finished
/// hypothesis; `beam = 1` is greedy decoding.
pub fn beam_search<S: StepScorer>(scorer: &S, cfg: &BeamConfig) -> Result<Vec<Hypothesis>> {
    if cfg.beam == 0 || cfg.nbest == 0 || cfg.nbest > cfg.beam {
        return Err(Error::Config(format!(
            "need 1 <= nbest ({}) <= beam ({})",
            cfg.nbest, cfg.beam
        )));
    }
    if cfg.max_len == 0 {
        return Err(Error::Config("max_len must be positive".into()));
    }
    let eos = scorer.eos();
    let (state, next) = scorer.start()?;
    let mut live = vec![Live {
        classes: Vec::new(),
        log_prob: 0.0,
        state,
        next,
    }];
    let mut done: Vec<Hypothesis> = Vec::new();
    for step in 0..cfg.max_len {
        let width = cfg.beam - done.len();
        let mut cands: Vec<(f64, Vec<usize>, usize)> = Vec::new();
        for (bi, h) in live.iter().enumerate() {
            for (c, &lp) in h.next.iter().enumerate() {
                if lp.is_finite() {
                    let mut seq = h.classes.clone();
                    seq.push(c);
                    cands.push((h.log_prob + lp, seq, bi));
                }
            }
        }
        cands.sort_by(|a, b| by_rank((a.0, &a.1), (b.0, &b.1)));
        cands.truncate(width);
        let mut next_live = Vec::with_capacity(width);
        for (lp, mut seq, bi) in cands {
            let c = *seq.last().expect("candidates extend a prefix");
            if c == eos {
                seq.pop();
                done.push(Hypothesis {
                    score: rank_score(lp, step + 1, cfg.length_norm),
                    classes: seq,
                    log_prob: lp,
                    finished: true,
                });
            } else if step + 1 == cfg.max_len {
                done.push(Hypothesis {
                    score: rank_score(lp, step + 1, cfg.length_norm),
                    classes: seq,
                    log_prob: lp,
                    finished: false,
                });
            } else {
                let (state, next) = scorer.advance(&live[bi].state, c)?;
                next_live.push(Live {
                    classes: seq,
                    log_prob: lp,
                    state,
                    next,
                });
            }
        }
        live = next_live;
        if live.is_empty() {
            break;
        }
    }
    done.sort_by(|a, b| by_rank((a.score, &a.classes), (b.score, &b.classes)));
    done.truncate(cfg.nbest);
    Ok(done)
}

/// Greedy argmax decoding (lowest class wins ties).
pub fn greedy_decode<S: StepScorer>(scorer: &S, max_len: usize) -> Result<Hypothesis> {
    let eos = scorer.eos();
    let (mut state, mut next) = scorer.start()?;
    let mut classes = Vec::new();
    let mut log_prob = 0.0;
    for _ in 0..max_len {
        let (c, lp) = next
            .iter()
            .copied()
            .enumerate()
            .fold((usize::MAX, f64::NEG_INFINITY), |best, (c, lp)| {
                if lp > best.1 {
                    (c, lp)
                } else {
                    best
                }
            });
        if c == usize::MAX {
            return Err(Error::Internal("no class with finite score".into()));
        }
        log_prob += lp;
        if c == eos {
            return Ok(Hypothesis {
                score: log_prob,
                classes,
                log_prob,
                finished: true,
            });
        }
        classes.push(c);
        (state, next) = scorer.advance(&state, c)?;
    }
    Ok(Hypothesis {
        score: log_prob,
        classes,
        log_prob,
        finished: false,
    })
}

/// Scores classes with a trained model; PAD and BOS are never emitted.
pub struct ModelScorer<'a> {
    model: &'a Seq2Seq,
    store: &'a ParamStore<f32>,
    memory: EncoderMemory<f32>,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a Seq2Seq, store: &'a ParamStore<f32>, source: &SourceInput) -> Result<Self> {
        Ok(ModelScorer {
            model,
            store,
            memory: model.encode(store, source)?,
        })
    }

    pub fn n(&self) -> usize {
        self.memory.n
    }

    fn log_probs(&self, logits: &PointerLogits<f32>) -> Vec<f64> {
        let n = self.memory.n;
        let mut scores: Vec<f64> = logits.combined.iter().map(|&x| x as f64).collect();
        for special in [PAD, BOS] {
            scores[n + special] = f64::NEG_INFINITY;
        }
        let lse = log_sum_exp(&scores);
        scores.into_iter().map(|x| x - lse).collect()
    }
}

impl StepScorer for ModelScorer<'_> {
    type State = DecoderState<f32>;

    fn start(&self) -> Result<(Self::State, Vec<f64>)> {
        let mut state = self.model.start();
        let logits = self
            .model
            .decode_step(self.store, &self.memory, &mut state, self.memory.n + BOS)?;
        Ok((state, self.log_probs(&logits)))
    }

    fn advance(&self, state: &Self::State, class: usize) -> Result<(Self::State, Vec<f64>)> {
        let mut state = state.clone();
        let logits = self.model.decode_step(self.store, &self.memory, &mut state, class)?;
        Ok((state, self.log_probs(&logits)))
    }

    fn eos(&self) -> usize {
        self.memory.n + EOS
    }
}
