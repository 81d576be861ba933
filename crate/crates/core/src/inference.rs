//! Greedy and beam-search decoding with length normalization.
//!
//! Stopping rule: a hypothesis is finished once it has emitted EOS twice in
//! total, or once it holds `max_len` tokens (EOS included). Tokens after the
//! first EOS are legal. Finished hypotheses are ranked by
//! `log_prob / lp(n)`, where `n` counts non-EOS tokens (clamped to 1).
//! Every tie is broken towards the lexicographically smaller token sequence.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{BOS_ID, EOS_ID, PAD_ID};
use crate::corpus::{RefexInstance, Template};
use crate::error::{Error, Result};
use crate::evaluation::Predictor;
use crate::model::{DecoderState, EncodedInstance, RefexModel, StepTrace};
use crate::numerics::{log_softmax, Graph};

/// `((5 + len)^alpha) / (6^alpha)`.
pub fn length_penalty(len: usize, alpha: f64) -> f64 {
    (5.0 + len as f64).powf(alpha) / 6f64.powf(alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub max_len: usize,
    pub alpha: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_size: 1,
            max_len: 30,
            alpha: 0.6,
        }
    }
}

impl DecodeConfig {
    pub fn with_beam(beam_size: usize) -> Self {
        Self {
            beam_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.max_len == 0 {
            return Err(Error::InvalidArgument(
                "beam_size and max_len must be at least 1".into(),
            ));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "alpha {} must be finite and >= 0",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// An autoregressive scorer: next-token log-probabilities given a state.
pub trait StepModel {
    type State: Clone;

    fn initial(&mut self) -> Result<Self::State>;

    /// Consumes `prev` and returns the new state with log-probabilities over
    /// the whole vocabulary.
    fn step(&mut self, state: &Self::State, prev: usize) -> Result<(Self::State, Vec<f64>)>;

    fn bos(&self) -> usize {
        BOS_ID
    }

    fn eos(&self) -> usize {
        EOS_ID
    }

    /// Tokens the search may emit.
    fn is_emittable(&self, token: usize) -> bool {
        token != PAD_ID && token != BOS_ID
    }
}

#[derive(Debug, Clone)]
pub struct Hypothesis<S> {
    /// Generated tokens, EOS included, BOS excluded.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub state: S,
    pub eos_count: usize,
}

impl<S> Hypothesis<S> {
    pub fn content_len(&self, eos: usize) -> usize {
        self.tokens.iter().filter(|&&t| t != eos).count()
    }

    pub fn normalized_score(&self, eos: usize, alpha: f64) -> f64 {
        self.log_prob / length_penalty(self.content_len(eos).max(1), alpha)
    }

    /// Tokens with EOS removed.
    pub fn output(&self, eos: usize) -> Vec<usize> {
        self.tokens.iter().copied().filter(|&t| t != eos).collect()
    }

    fn is_finished(&self, max_len: usize) -> bool {
        self.eos_count >= 2 || self.tokens.len() >= max_len
    }
}

/// Descending by score, then ascending by tokens.
fn rank(a_score: f64, a: &[usize], b_score: f64, b: &[usize]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a.cmp(b))
}

/// Runs beam search and returns every finished hypothesis, best first.
pub fn beam_search_all<M: StepModel>(model: &mut M, cfg: &DecodeConfig) -> Result<Vec<Hypothesis<M::State>>> {
    cfg.validate()?;
    let eos = model.eos();
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: model.initial()?,
        eos_count: 0,
    }];
    let mut finished: Vec<Hypothesis<M::State>> = Vec::new();
    while !live.is_empty() {
        // (parent, token, log_prob)
        let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
        let mut states = Vec::with_capacity(live.len());
        for (i, h) in live.iter().enumerate() {
            let prev = h.tokens.last().copied().unwrap_or_else(|| model.bos());
            let (state, log_probs) = model.step(&h.state, prev)?;
            for (tok, &lp) in log_probs.iter().enumerate() {
                if model.is_emittable(tok) {
                    candidates.push((i, tok, h.log_prob + lp));
                }
            }
            states.push(state);
        }
        if candidates.is_empty() {
            return Err(Error::Empty("no emittable tokens"));
        }
        // Live hypotheses share one length, so prefix-then-token order is
        // lexicographic order on the extended sequences.
        candidates.sort_by(|a, b| {
            b.2.total_cmp(&a.2)
                .then_with(|| live[a.0].tokens.cmp(&live[b.0].tokens))
                .then(a.1.cmp(&b.1))
        });
        candidates.truncate(cfg.beam_size);
        let mut next = Vec::with_capacity(candidates.len());
        for (parent, tok, log_prob) in candidates {
            let h = &live[parent];
            let mut tokens = h.tokens.clone();
            tokens.push(tok);
            let hyp = Hypothesis {
                tokens,
                log_prob,
                state: states[parent].clone(),
                eos_count: h.eos_count + usize::from(tok == eos),
            };
            if hyp.is_finished(cfg.max_len) {
                finished.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        live = next;
    }
    let alpha = cfg.alpha;
    finished.sort_by(|a, b| {
        rank(
            a.normalized_score(eos, alpha),
            &a.tokens,
            b.normalized_score(eos, alpha),
            &b.tokens,
        )
    });
    Ok(finished)
}

/// Best finished hypothesis with EOS stripped.
pub fn beam_search<M: StepModel>(model: &mut M, cfg: &DecodeConfig) -> Result<Vec<usize>> {
    let eos = model.eos();
    let all = beam_search_all(model, cfg)?;
    Ok(all[0].output(eos))
}

/// Argmax token each step, lowest index on ties, same stopping rule.
pub fn greedy_decode<M: StepModel>(model: &mut M, max_len: usize) -> Result<Vec<usize>> {
    let eos = model.eos();
    Ok(greedy_decode_raw(model, max_len)?
        .into_iter()
        .filter(|&t| t != eos)
        .collect())
}

/// [`greedy_decode`] without EOS stripping: one token per step taken.
pub fn greedy_decode_raw<M: StepModel>(model: &mut M, max_len: usize) -> Result<Vec<usize>> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let eos = model.eos();
    let mut state = model.initial()?;
    let mut tokens: Vec<usize> = Vec::new();
    let mut eos_count = 0;
    let mut total = 0.0;
    while eos_count < 2 && tokens.len() < max_len {
        let prev = tokens.last().copied().unwrap_or_else(|| model.bos());
        let (next, log_probs) = model.step(&state, prev)?;
        // Compared on running totals so rounding ties match width-1 beam search.
        let mut best: Option<(usize, f64)> = None;
        for (tok, &lp) in log_probs.iter().enumerate() {
            let cand = total + lp;
            if model.is_emittable(tok) && best.is_none_or(|(_, b)| cand.total_cmp(&b).is_gt()) {
                best = Some((tok, cand));
            }
        }
        let (tok, cand) = best.ok_or(Error::Empty("no emittable tokens"))?;
        total = cand;
        eos_count += usize::from(tok == eos);
        tokens.push(tok);
        state = next;
    }
    Ok(tokens)
}

/// A frozen network bound to one instance. All decoder steps share a single
/// graph; nothing is back-propagated.
pub struct ModelSession<'m> {
    model: &'m RefexModel,
    graph: Graph<'m>,
    encoded: EncodedInstance,
    record: bool,
    traces: Vec<StepTrace>,
}

impl<'m> ModelSession<'m> {
    pub fn new(model: &'m RefexModel, inst: &RefexInstance) -> Result<Self> {
        let indexed = model.index_instance(inst);
        let mut graph = Graph::new(model.store());
        let encoded = model.encode_instance(&mut graph, &indexed, &mut None)?;
        Ok(Self {
            model,
            graph,
            encoded,
            record: false,
            traces: Vec::new(),
        })
    }

    /// Keeps the attention weights of every step taken from now on.
    pub fn recording(mut self) -> Self {
        self.record = true;
        self
    }

    pub fn traces(&self) -> &[StepTrace] {
        &self.traces
    }
}

impl StepModel for ModelSession<'_> {
    type State = DecoderState;

    fn initial(&mut self) -> Result<DecoderState> {
        self.model.initial_state(&mut self.graph)
    }

    fn step(&mut self, state: &DecoderState, prev: usize) -> Result<(DecoderState, Vec<f64>)> {
        let (next, logits, trace) = self
            .model
            .decoder_step(&mut self.graph, state, &self.encoded, prev, &mut None)?;
        if self.record {
            self.traces.push(trace);
        }
        Ok((next, log_softmax(self.graph.value(logits).data())))
    }
}

/// Decodes one instance into tokens.
pub fn decode_instance(model: &RefexModel, inst: &RefexInstance, cfg: &DecodeConfig) -> Result<Vec<String>> {
    let mut session = ModelSession::new(model, inst)?;
    let ids = if cfg.beam_size == 1 {
        cfg.validate()?;
        greedy_decode(&mut session, cfg.max_len)?
    } else {
        beam_search(&mut session, cfg)?
    };
    Ok(model.vocab().decode(&ids))
}

/// A greedy decode with the attention weights behind each emitted token.
/// EOS tokens are kept so that tokens and traces pair up one-to-one.
pub fn decode_with_trace(model: &RefexModel, inst: &RefexInstance, max_len: usize) -> Result<Vec<(String, StepTrace)>> {
    let mut session = ModelSession::new(model, inst)?.recording();
    let ids = greedy_decode_raw(&mut session, max_len)?;
    let tokens = model.vocab().decode(&ids);
    Ok(tokens.into_iter().zip(session.traces).collect())
}

/// Adapts a trained network to the evaluation [`Predictor`] interface.
pub struct ModelPredictor<'m> {
    pub model: &'m RefexModel,
    pub decode: DecodeConfig,
}

impl Predictor for ModelPredictor<'_> {
    fn predict(&mut self, inst: &RefexInstance, _: &Template) -> Result<Vec<String>> {
        decode_instance(self.model, inst, &self.decode)
    }
}
