use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PRONOUNS: [&str; 16] = [
    "he",
    "him",
    "his",
    "himself",
    "she",
    "her",
    "hers",
    "herself",
    "it",
    "its",
    "itself",
    "they",
    "them",
    "their",
    "theirs",
    "themselves",
];

/// Tokens that make a single-token referring expression pronominal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PronounLexicon {
    pronouns: BTreeSet<String>,
}

impl Default for PronounLexicon {
    fn default() -> Self {
        Self {
            pronouns: DEFAULT_PRONOUNS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl PronounLexicon {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(words: I) -> Result<Self> {
        let pronouns: BTreeSet<String> = words.into_iter().map(Into::into).collect();
        if pronouns.is_empty() {
            return Err(Error::Empty("pronoun lexicon"));
        }
        if let Some(p) = pronouns
            .iter()
            .find(|p| p.to_lowercase() != **p || p.contains(char::is_whitespace))
        {
            return Err(Error::InvalidArgument(format!(
                "pronoun `{p}` must be a lowercase single token"
            )));
        }
        Ok(Self { pronouns })
    }

    /// One pronoun per line; blank lines and `#` comments are skipped.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string),
        )
    }

    pub fn contains(&self, token: &str) -> bool {
        self.pronouns.contains(token)
    }

    pub fn is_pronominal<S: AsRef<str>>(&self, refex: &[S]) -> bool {
        refex.len() == 1 && self.contains(refex[0].as_ref())
    }
}

fn check_lengths<A, B>(pred: &[A], gold: &[B]) -> Result<()> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch(pred.len(), gold.len()));
    }
    if gold.is_empty() {
        return Err(Error::Empty("no instances to score"));
    }
    Ok(())
}

/// Fraction of exact token-sequence matches.
pub fn refex_accuracy<S: AsRef<str>, T: AsRef<str>>(pred: &[Vec<S>], gold: &[Vec<T>]) -> Result<f64> {
    check_lengths(pred, gold)?;
    let hits = pred.iter().zip(gold).filter(|(p, g)| tokens_equal(p, g)).count();
    Ok(hits as f64 / gold.len() as f64)
}

fn tokens_equal<S: AsRef<str>, T: AsRef<str>>(a: &[S], b: &[T]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.as_ref() == y.as_ref())
}

/// Character-level Levenshtein distance with unit costs.
pub fn string_edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Mean edit distance between space-joined predicted and gold refexes.
pub fn mean_edit_distance<S: AsRef<str>, T: AsRef<str>>(pred: &[Vec<S>], gold: &[Vec<T>]) -> Result<f64> {
    check_lengths(pred, gold)?;
    let total: usize = pred
        .iter()
        .zip(gold)
        .map(|(p, g)| string_edit_distance(&join(p), &join(g)))
        .sum();
    Ok(total as f64 / gold.len() as f64)
}

fn join<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PronounScores {
    /// Exact-match accuracy over gold-pronominal instances; `None` when there are none.
    pub accuracy: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub gold_pronouns: usize,
}

/// Pronoun accuracy plus precision/recall/F1 of pronominal form over all instances.
pub fn pronoun_metrics<S: AsRef<str>, T: AsRef<str>>(
    pred: &[Vec<S>],
    gold: &[Vec<T>],
    lexicon: &PronounLexicon,
) -> Result<PronounScores> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch(pred.len(), gold.len()));
    }
    let (mut tp, mut fp, mut fneg, mut gold_n, mut exact) = (0, 0, 0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        let (pp, gp) = (lexicon.is_pronominal(p), lexicon.is_pronominal(g));
        match (pp, gp) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
        if gp {
            gold_n += 1;
            if tokens_equal(p, g) {
                exact += 1;
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(PronounScores {
        accuracy: (gold_n > 0).then(|| ratio(exact, gold_n)),
        precision,
        recall,
        f1,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fneg,
        gold_pronouns: gold_n,
    })
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_default() += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and the hypothesis n-gram total for one segment.
pub fn modified_precision<S: AsRef<str>, T: AsRef<str>>(
    hypothesis: &[S],
    references: &[&[T]],
    n: usize,
) -> (usize, usize) {
    let hyp = ngram_counts(hypothesis, n);
    let mut max_ref: HashMap<Vec<&str>, usize> = HashMap::new();
    for r in references {
        for (g, c) in ngram_counts(r, n) {
            let e = max_ref.entry(g).or_default();
            *e = (*e).max(c);
        }
    }
    let clipped = hyp
        .iter()
        .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
        .sum();
    let total = hyp.values().sum();
    (clipped, total)
}

pub const BLEU_MAX_ORDER: usize = 4;

/// Corpus BLEU-4 with uniform weights and brevity penalty, scaled to [0, 100].
///
/// Orders for which the hypotheses contain no n-grams at all (every segment is
/// shorter than n) are left out of the geometric mean. Any order with n-grams
/// but zero clipped matches makes the score 0.
pub fn corpus_bleu<S: AsRef<str>, T: AsRef<str>>(hypotheses: &[Vec<S>], references: &[Vec<T>]) -> Result<f64> {
    check_lengths(hypotheses, references)?;
    let mut clipped = [0usize; BLEU_MAX_ORDER];
    let mut totals = [0usize; BLEU_MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=BLEU_MAX_ORDER {
            let (c, t) = modified_precision(h, &[r.as_slice()], n);
            clipped[n - 1] += c;
            totals[n - 1] += t;
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 0..BLEU_MAX_ORDER {
        if totals[n] == 0 {
            continue;
        }
        if clipped[n] == 0 {
            log::warn!("BLEU: no matching {}-grams in the corpus; score is 0", n + 1);
            return Ok(0.0);
        }
        log_sum += (clipped[n] as f64 / totals[n] as f64).ln();
        orders += 1;
    }
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * bp * (log_sum / orders as f64).exp())
}
