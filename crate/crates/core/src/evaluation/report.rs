use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{corpus_bleu, mean_edit_distance, pronoun_metrics, refex_accuracy, PronounLexicon};
use crate::baselines::{frequency_baseline, only_names, FormStatistics};
use crate::corpus::{normalize_text, Corpus, RefexInstance, Split, Template};
use crate::error::{Error, Result};

/// One line of a predictions dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    #[serde(with = "crate::corpus::tokens_as_string")]
    pub pred_tokens: Vec<String>,
    #[serde(with = "crate::corpus::tokens_as_string")]
    pub gold_tokens: Vec<String>,
}

/// Anything that produces a referring expression for an instance.
pub trait Predictor {
    fn predict(&mut self, inst: &RefexInstance, template: &Template) -> Result<Vec<String>>;
}

/// Returns the gold refex.
pub struct GoldPredictor;

impl Predictor for GoldPredictor {
    fn predict(&mut self, inst: &RefexInstance, _: &Template) -> Result<Vec<String>> {
        Ok(inst.gold_refex.clone())
    }
}

pub struct OnlyNamesPredictor;

impl Predictor for OnlyNamesPredictor {
    fn predict(&mut self, inst: &RefexInstance, _: &Template) -> Result<Vec<String>> {
        Ok(only_names(&inst.entity))
    }
}

pub struct FrequencyPredictor {
    pub stats: FormStatistics,
}

impl FrequencyPredictor {
    pub fn fit(corpus: &Corpus, lexicon: &PronounLexicon) -> Self {
        Self {
            stats: FormStatistics::from_train(corpus, lexicon),
        }
    }
}

impl Predictor for FrequencyPredictor {
    fn predict(&mut self, inst: &RefexInstance, template: &Template) -> Result<Vec<String>> {
        Ok(frequency_baseline(inst, template, &self.stats))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub refex_accuracy: f64,
    pub mean_sed: f64,
    /// `None` when the split has no gold pronouns.
    pub pronoun_accuracy: Option<f64>,
    pub pronoun_precision: f64,
    pub pronoun_recall: f64,
    pub pronoun_f1: f64,
    pub text_accuracy: f64,
    pub bleu: f64,
    pub instances: usize,
    pub texts: usize,
}

impl EvaluationReport {
    pub fn to_table(&self, label: &str) -> String {
        let mut s = String::new();
        let pa = self
            .pronoun_accuracy
            .map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        writeln!(s, "{:<22} {:>10}", "system", label).unwrap();
        writeln!(s, "{:<22} {:>10}", "instances", self.instances).unwrap();
        writeln!(s, "{:<22} {:>10}", "texts", self.texts).unwrap();
        writeln!(s, "{:<22} {:>10.4}", "refex accuracy", self.refex_accuracy).unwrap();
        writeln!(s, "{:<22} {:>10.4}", "mean SED", self.mean_sed).unwrap();
        writeln!(s, "{:<22} {:>10}", "pronoun accuracy", pa).unwrap();
        writeln!(s, "{:<22} {:>10.4}", "pronoun precision", self.pronoun_precision).unwrap();
        writeln!(s, "{:<22} {:>10.4}", "pronoun recall", self.pronoun_recall).unwrap();
        writeln!(s, "{:<22} {:>10.4}", "pronoun F1", self.pronoun_f1).unwrap();
        writeln!(s, "{:<22} {:>10.4}", "text accuracy", self.text_accuracy).unwrap();
        writeln!(s, "{:<22} {:>10.2}", "BLEU", self.bleu).unwrap();
        s
    }
}

/// Relexicalizes every template with the given slot refexes and compares the
/// result with the original text: exact normalized match rate and corpus BLEU.
pub fn text_metrics<'a>(
    templates: impl IntoIterator<Item = &'a Template>,
    refexes_by_template: &HashMap<String, HashMap<String, Vec<String>>>,
) -> Result<(f64, f64, usize)> {
    let empty = HashMap::new();
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    let mut hits = 0;
    for t in templates {
        let slots = refexes_by_template.get(&t.template_id).unwrap_or(&empty);
        let hyp = normalize_text(&t.relexicalize(slots)?);
        let reference = normalize_text(&t.original_text);
        if hyp == reference {
            hits += 1;
        }
        hyps.push(
            hyp.split(' ')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect::<Vec<_>>(),
        );
        refs.push(
            reference
                .split(' ')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect::<Vec<_>>(),
        );
    }
    if hyps.is_empty() {
        return Err(Error::Empty("no texts to score"));
    }
    let bleu = corpus_bleu(&hyps, &refs)?;
    Ok((hits as f64 / hyps.len() as f64, bleu, hyps.len()))
}

/// Scores a full set of predictions for one split.
pub fn report_from_predictions(
    corpus: &Corpus,
    split: Split,
    predictions: &[Prediction],
    lexicon: &PronounLexicon,
) -> Result<EvaluationReport> {
    let instances = corpus.split(split);
    let by_id: HashMap<&str, &Prediction> = predictions.iter().map(|p| (p.instance_id.as_str(), p)).collect();
    let mut pred = Vec::with_capacity(instances.len());
    let mut gold = Vec::with_capacity(instances.len());
    let mut slots: HashMap<String, HashMap<String, Vec<String>>> = HashMap::new();
    for inst in instances {
        let p = by_id
            .get(inst.instance_id.as_str())
            .ok_or_else(|| Error::InvalidArgument(format!("predictions missing instance `{}`", inst.instance_id)))?;
        pred.push(p.pred_tokens.clone());
        gold.push(inst.gold_refex.clone());
        slots
            .entry(inst.template_id.clone())
            .or_default()
            .insert(inst.slot_tag.clone(), p.pred_tokens.clone());
    }
    if by_id.len() != instances.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} instances in split {split}",
            by_id.len(),
            instances.len()
        )));
    }
    let template_ids: BTreeMap<&str, ()> = instances.iter().map(|i| (i.template_id.as_str(), ())).collect();
    let templates = template_ids.keys().map(|id| &corpus.templates[*id]);
    let (text_accuracy, bleu, texts) = text_metrics(templates, &slots)?;
    let pron = pronoun_metrics(&pred, &gold, lexicon)?;
    Ok(EvaluationReport {
        refex_accuracy: refex_accuracy(&pred, &gold)?,
        mean_sed: mean_edit_distance(&pred, &gold)?,
        pronoun_accuracy: pron.accuracy,
        pronoun_precision: pron.precision,
        pronoun_recall: pron.recall,
        pronoun_f1: pron.f1,
        text_accuracy,
        bleu,
        instances: instances.len(),
        texts,
    })
}

/// Runs `predictor` over every instance of `split`, in corpus order.
pub fn predict_split<P: Predictor + ?Sized>(
    predictor: &mut P,
    corpus: &Corpus,
    split: Split,
) -> Result<Vec<Prediction>> {
    corpus
        .split(split)
        .iter()
        .map(|inst| {
            let template = corpus
                .templates
                .get(&inst.template_id)
                .ok_or_else(|| Error::DanglingTemplate {
                    instance: inst.instance_id.clone(),
                    template: inst.template_id.clone(),
                })?;
            Ok(Prediction {
                instance_id: inst.instance_id.clone(),
                pred_tokens: predictor.predict(inst, template)?,
                gold_tokens: inst.gold_refex.clone(),
            })
        })
        .collect()
}

/// Decodes every instance of `split` and assembles all metrics.
pub fn evaluate<P: Predictor + ?Sized>(
    predictor: &mut P,
    corpus: &Corpus,
    split: Split,
    lexicon: &PronounLexicon,
) -> Result<(EvaluationReport, Vec<Prediction>)> {
    let predictions = predict_split(predictor, corpus, split)?;
    let report = report_from_predictions(corpus, split, &predictions, lexicon)?;
    Ok((report, predictions))
}
