//! WebAssembly bindings for a single-page demo of the generator.
//!
//! Three interactive operations are exposed:
//!
//! * [`length_penalty_curve`]: the beam-search length penalty for a chosen
//!   `alpha`, plotted against hypothesis length.
//! * [`compare_refexes`]: the per-instance metrics (exact match, edit
//!   distance, BLEU, pronoun class) for a typed prediction and gold refex.
//! * [`AttentionDemo`]: trains a tiny attention model on a synthetic corpus
//!   in the page and shows the attention weights behind each decoded token.
//!
//! Each export is a thin wrapper over a plain Rust function so the logic can
//! be tested natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use refgen::baselines::only_names;
use refgen::corpus::{generate_synthetic_corpus, Corpus, RefexInstance, Vocabulary};
use refgen::evaluation::{corpus_bleu, string_edit_distance, PronounLexicon};
use refgen::inference::DecodeConfig;
use refgen::inference::{decode_with_trace, length_penalty};
use refgen::model::{DecoderVariant, ModelConfig, RefexModel, StepTrace};
use refgen::training::{split_accuracy, train_model, TrainConfig};

const MAX_DECODE_LEN: usize = 12;

/// `lp(1..=max_len, alpha)`.
#[wasm_bindgen]
pub fn length_penalty_curve(alpha: f64, max_len: usize) -> Vec<f64> {
    (1..=max_len).map(|n| length_penalty(n, alpha)).collect()
}

#[wasm_bindgen(js_name = onlyNames)]
pub fn only_names_js(entity: &str) -> String {
    only_names(entity).join(" ")
}

#[derive(Debug, Serialize, PartialEq)]
pub struct Comparison {
    pub exact_match: bool,
    pub edit_distance: usize,
    pub bleu: f64,
    pub predicted_is_pronoun: bool,
    pub gold_is_pronoun: bool,
}

pub fn compare(predicted: &str, gold: &str) -> Comparison {
    let p: Vec<String> = predicted.split_whitespace().map(str::to_lowercase).collect();
    let g: Vec<String> = gold.split_whitespace().map(str::to_lowercase).collect();
    let lexicon = PronounLexicon::default();
    let bleu = if p.is_empty() || g.is_empty() {
        0.0
    } else {
        corpus_bleu(std::slice::from_ref(&p), std::slice::from_ref(&g)).unwrap_or(0.0)
    };
    Comparison {
        exact_match: p == g,
        edit_distance: string_edit_distance(&p.join(" "), &g.join(" ")),
        bleu,
        predicted_is_pronoun: lexicon.is_pronominal(&p),
        gold_is_pronoun: lexicon.is_pronominal(&g),
    }
}

/// JSON-encoded [`Comparison`].
#[wasm_bindgen(js_name = compareRefexes)]
pub fn compare_refexes(predicted: &str, gold: &str) -> String {
    serde_json::to_string(&compare(predicted, gold)).expect("plain struct")
}

#[derive(Debug, Serialize)]
pub struct DecodedStep {
    pub token: String,
    #[serde(flatten)]
    pub trace: StepTrace,
}

#[derive(Debug, Serialize)]
pub struct DecodedInstance {
    pub entity: String,
    pub pre_context: Vec<String>,
    pub pos_context: Vec<String>,
    pub gold: Vec<String>,
    pub steps: Vec<DecodedStep>,
}

/// A small model trained in the page, epoch by epoch.
#[wasm_bindgen]
pub struct AttentionDemo {
    corpus: Corpus,
    model: RefexModel,
    seed: u64,
    epochs: usize,
}

impl AttentionDemo {
    pub fn create(seed: u64, variant: &str) -> Result<Self, String> {
        let variant: DecoderVariant = variant.parse().map_err(|e| format!("{e}"))?;
        let corpus = generate_synthetic_corpus(seed, 40, 6).map_err(|e| e.to_string())?;
        let vocab = Vocabulary::build(&corpus, 1).map_err(|e| e.to_string())?;
        let mut cfg = ModelConfig::with_dims(variant, vocab.len(), 16, 16);
        cfg.dropout_p = 0.0;
        let model = RefexModel::new(cfg, vocab, seed).map_err(|e| e.to_string())?;
        Ok(Self {
            corpus,
            model,
            seed,
            epochs: 0,
        })
    }

    /// Runs `epochs` more epochs and returns the dev accuracy of the kept
    /// parameters.
    pub fn run_epochs(&mut self, epochs: usize) -> Result<f64, String> {
        let cfg = TrainConfig {
            batch_size: 5,
            max_epochs: epochs.max(1),
            patience: epochs.max(1),
            seed: self.seed.wrapping_add(self.epochs as u64),
            max_len: MAX_DECODE_LEN,
            ..TrainConfig::default()
        };
        let outcome = train_model(self.model.clone(), &cfg, &self.corpus).map_err(|e| e.to_string())?;
        self.model = outcome.model;
        self.epochs += cfg.max_epochs;
        Ok(outcome.log.best_dev_accuracy)
    }

    pub fn dev_accuracy(&self) -> Result<f64, String> {
        let decode = DecodeConfig {
            beam_size: 1,
            max_len: MAX_DECODE_LEN,
            alpha: 0.6,
        };
        split_accuracy(&self.model, &self.corpus.dev, &decode).map_err(|e| e.to_string())
    }

    pub fn instance(&self, index: usize) -> Option<&RefexInstance> {
        self.corpus.dev.get(index)
    }

    pub fn decode_index(&self, index: usize) -> Result<DecodedInstance, String> {
        let inst = self.instance(index).ok_or_else(|| format!("no dev instance {index}"))?;
        let steps = decode_with_trace(&self.model, inst, MAX_DECODE_LEN).map_err(|e| e.to_string())?;
        Ok(DecodedInstance {
            entity: inst.entity.clone(),
            pre_context: inst.pre_context.clone(),
            pos_context: inst.pos_context.clone(),
            gold: inst.gold_refex.clone(),
            steps: steps
                .into_iter()
                .map(|(token, trace)| DecodedStep { token, trace })
                .collect(),
        })
    }
}

#[wasm_bindgen]
impl AttentionDemo {
    /// `variant` is `seq2seq`, `catt` or `hieratt`.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, variant: &str) -> Result<AttentionDemo, JsError> {
        Self::create(u64::from(seed), variant).map_err(|e| JsError::new(&e))
    }

    pub fn train(&mut self, epochs: usize) -> Result<f64, JsError> {
        self.run_epochs(epochs).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(getter)]
    pub fn epochs(&self) -> usize {
        self.epochs
    }

    #[wasm_bindgen(js_name = devSize)]
    pub fn dev_size(&self) -> usize {
        self.corpus.dev.len()
    }

    /// JSON-encoded [`DecodedInstance`] for dev instance `index`.
    pub fn decode(&self, index: usize) -> Result<String, JsError> {
        let d = self.decode_index(index).map_err(|e| JsError::new(&e))?;
        Ok(serde_json::to_string(&d).expect("plain struct"))
    }
}
