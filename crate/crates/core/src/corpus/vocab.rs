use std::collections::{BTreeMap, HashMap};

use sha2::{Digest, Sha256};

use super::types::Corpus;
use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const BOS_ID: usize = 2;
pub const EOS_ID: usize = 3;

pub const SPECIALS: [&str; 4] = [PAD, UNK, BOS, EOS];

pub fn is_special(token: &str) -> bool {
    SPECIALS.contains(&token)
}

/// Token/index map shared by contexts, entities and referring expressions.
///
/// The four special tokens occupy indices 0..4; the remaining tokens follow in
/// lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    index_to_token: Vec<String>,
    token_to_index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Every train-split token (contexts, entities, gold refexes) occurring at
    /// least `min_count` times.
    pub fn build(corpus: &Corpus, min_count: usize) -> Result<Self> {
        if min_count == 0 {
            return Err(Error::InvalidArgument("min_count must be at least 1".into()));
        }
        if corpus.train.is_empty() {
            return Err(Error::EmptyTrainSplit);
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for inst in &corpus.train {
            let tokens = inst
                .pre_context
                .iter()
                .chain(&inst.pos_context)
                .chain(&inst.gold_refex)
                .map(String::as_str)
                .chain(std::iter::once(inst.entity.as_str()));
            for t in tokens {
                *counts.entry(t).or_default() += 1;
            }
        }
        let tokens = counts
            .into_iter()
            .filter(|&(t, n)| n >= min_count && !is_special(t))
            .map(|(t, _)| t.to_string());
        Self::from_tokens(SPECIALS.iter().map(|s| s.to_string()).chain(tokens).collect())
    }

    /// Rebuilds a vocabulary from its index-ordered token list.
    pub fn from_tokens(index_to_token: Vec<String>) -> Result<Self> {
        if index_to_token.len() < SPECIALS.len()
            || index_to_token[..SPECIALS.len()]
                .iter()
                .zip(SPECIALS)
                .any(|(a, b)| a != b)
        {
            return Err(Error::InvalidArgument(
                "vocabulary must start with the special tokens".into(),
            ));
        }
        let mut token_to_index = HashMap::with_capacity(index_to_token.len());
        for (i, t) in index_to_token.iter().enumerate() {
            if token_to_index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self {
            index_to_token,
            token_to_index,
        })
    }

    pub fn len(&self) -> usize {
        self.index_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_to_token.is_empty()
    }

    /// Index of `token`, or of UNK when absent.
    pub fn lookup(&self, token: &str) -> usize {
        self.token_to_index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.token_to_index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.index_to_token[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.index_to_token
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.lookup(t.as_ref())).collect()
    }

    pub fn decode(&self, indices: &[usize]) -> Vec<String> {
        indices.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// SHA-256 over the newline-joined token list, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.index_to_token {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}
