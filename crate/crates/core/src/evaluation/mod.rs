//! Automatic metrics: refex accuracy, string edit distance, pronoun scores,
//! text accuracy after relexicalization, and corpus BLEU.

mod metrics;
mod report;

pub use metrics::{
    corpus_bleu, mean_edit_distance, modified_precision, pronoun_metrics, refex_accuracy, string_edit_distance,
    PronounLexicon, PronounScores, BLEU_MAX_ORDER, DEFAULT_PRONOUNS,
};
pub use report::{
    evaluate, predict_split, report_from_predictions, text_metrics, EvaluationReport, FrequencyPredictor,
    GoldPredictor, OnlyNamesPredictor, Prediction, Predictor,
};
