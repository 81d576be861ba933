//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refgen::inference::{length_penalty, StepModel};
use refgen::numerics::log_softmax;
use refgen::Result;

/// A toy autoregressive model over `n` emittable tokens (`0` is EOS) plus a
/// BOS token `n`. The next-token distribution is a seeded random function of
/// the whole prefix.
#[derive(Debug, Clone)]
pub struct RandomToy {
    pub n: usize,
    pub seed: u64,
    /// Logit scale; larger values give peakier distributions.
    pub sharpness: f64,
}

impl StepModel for RandomToy {
    type State = Vec<usize>;

    fn initial(&mut self) -> Result<Vec<usize>> {
        Ok(Vec::new())
    }

    fn step(&mut self, prefix: &Vec<usize>, prev: usize) -> Result<(Vec<usize>, Vec<f64>)> {
        let mut next = prefix.clone();
        next.push(prev);
        let code = next.iter().fold(1u64, |acc, &t| acc * (self.n as u64 + 2) + t as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(code);
        let mut logits: Vec<f64> = (0..self.n).map(|_| self.sharpness * rng.gen_range(-1.0..1.0)).collect();
        logits.push(f64::NEG_INFINITY);
        Ok((next, log_softmax(&logits)))
    }

    fn bos(&self) -> usize {
        self.n
    }

    fn eos(&self) -> usize {
        0
    }

    fn is_emittable(&self, token: usize) -> bool {
        token < self.n
    }
}

/// Every sequence the stopping rule can finish, with its log-probability.
pub fn enumerate<M: StepModel>(m: &mut M, max_len: usize) -> Vec<(Vec<usize>, f64)> {
    fn go<M: StepModel>(
        m: &mut M,
        state: &M::State,
        tokens: &mut Vec<usize>,
        lp: f64,
        max_len: usize,
        out: &mut Vec<(Vec<usize>, f64)>,
    ) {
        let eos = m.eos();
        if tokens.iter().filter(|&&t| t == eos).count() >= 2 || tokens.len() >= max_len {
            out.push((tokens.clone(), lp));
            return;
        }
        let prev = tokens.last().copied().unwrap_or_else(|| m.bos());
        let (next, log_probs) = m.step(state, prev).unwrap();
        for (tok, &l) in log_probs.iter().enumerate() {
            if m.is_emittable(tok) {
                tokens.push(tok);
                go(m, &next, tokens, lp + l, max_len, out);
                tokens.pop();
            }
        }
    }
    let init = m.initial().unwrap();
    let mut out = Vec::new();
    go(m, &init, &mut Vec::new(), 0.0, max_len, &mut out);
    out
}

pub fn normalized(tokens: &[usize], log_prob: f64, eos: usize, alpha: f64) -> f64 {
    let content = tokens.iter().filter(|&&t| t != eos).count().max(1);
    log_prob / length_penalty(content, alpha)
}

/// The enumerated optimum of the normalized score, ties to the smaller
/// token sequence, with EOS stripped.
pub fn brute_force_best<M: StepModel>(m: &mut M, max_len: usize, alpha: f64) -> (Vec<usize>, f64) {
    let eos = m.eos();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for (tokens, lp) in enumerate(m, max_len) {
        let s = normalized(&tokens, lp, eos, alpha);
        let better = match &best {
            None => true,
            Some((bt, bs)) => s > *bs || (s == *bs && tokens < *bt),
        };
        if better {
            best = Some((tokens, s));
        }
    }
    let (tokens, score) = best.expect("at least one sequence");
    (tokens.into_iter().filter(|&t| t != eos).collect(), score)
}
