//! Comparison systems: OnlyNames and a frequency-based form/realization
//! baseline. The latter approximates a form-selection system from
//! train-split counts and makes no claim to match one.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, RefexInstance, Template};
use crate::evaluation::PronounLexicon;

/// Surface name derived from a wiki-id, keeping parenthesized disambiguators.
///
/// `Alan_Shepard` becomes `[alan, shepard]`.
pub fn only_names(entity: &str) -> Vec<String> {
    only_names_with(entity, false)
}

/// As [`only_names`], optionally dropping `( ... )` disambiguators.
pub fn only_names_with(entity: &str, drop_parenthetical: bool) -> Vec<String> {
    let local = entity.rsplit('/').next().unwrap_or(entity);
    let local = match local.split_once(':') {
        Some((prefix, rest)) if !prefix.is_empty() && !rest.is_empty() && !prefix.contains('_') => rest,
        _ => local,
    };
    let mut text = local.replace('_', " ").to_lowercase();
    if drop_parenthetical {
        let mut out = String::with_capacity(text.len());
        let mut depth = 0usize;
        for c in text.chars() {
            match c {
                '(' => depth += 1,
                ')' if depth > 0 => depth -= 1,
                _ if depth == 0 => out.push(c),
                _ => {}
            }
        }
        text = out;
    }
    text.split_whitespace().map(str::to_string).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormClass {
    Description,
    Name,
    Pronoun,
}

impl FormClass {
    pub fn classify(refex: &[String], entity: &str, lexicon: &PronounLexicon) -> FormClass {
        if lexicon.is_pronominal(refex) {
            FormClass::Pronoun
        } else if refex == only_names(entity).as_slice() {
            FormClass::Name
        } else {
            FormClass::Description
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MentionPosition {
    First,
    Subsequent,
}

/// First mention iff no earlier slot of the template refers to the same entity.
pub fn mention_position(template: &Template, slot_tag: &str, entity: &str) -> MentionPosition {
    for tok in &template.tokens {
        if tok == slot_tag {
            return MentionPosition::First;
        }
        if template.entity_map.get(tok).is_some_and(|e| e == entity) {
            return MentionPosition::Subsequent;
        }
    }
    MentionPosition::First
}

/// Train-split counts of form classes and their realizations.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FormStatistics {
    /// entity -> (position, class) -> count
    pub entity_forms: BTreeMap<String, BTreeMap<(MentionPosition, FormClass), usize>>,
    /// entity -> class -> realization -> count
    pub realizations: BTreeMap<String, BTreeMap<FormClass, BTreeMap<Vec<String>, usize>>>,
    /// (position, class) -> count over all entities
    pub global_forms: BTreeMap<(MentionPosition, FormClass), usize>,
}

impl FormStatistics {
    pub fn from_train(corpus: &Corpus, lexicon: &PronounLexicon) -> Self {
        let mut stats = FormStatistics::default();
        for inst in &corpus.train {
            let Some(template) = corpus.templates.get(&inst.template_id) else {
                continue;
            };
            stats.observe(inst, template, lexicon);
        }
        stats
    }

    pub fn observe(&mut self, inst: &RefexInstance, template: &Template, lexicon: &PronounLexicon) {
        let position = mention_position(template, &inst.slot_tag, &inst.entity);
        let class = FormClass::classify(&inst.gold_refex, &inst.entity, lexicon);
        *self
            .entity_forms
            .entry(inst.entity.clone())
            .or_default()
            .entry((position, class))
            .or_default() += 1;
        *self.global_forms.entry((position, class)).or_default() += 1;
        *self
            .realizations
            .entry(inst.entity.clone())
            .or_default()
            .entry(class)
            .or_default()
            .entry(inst.gold_refex.clone())
            .or_default() += 1;
    }
}

/// The key with the highest count; ties go to the smallest key.
fn argmax<K: Ord + Clone>(counts: impl IntoIterator<Item = (K, usize)>) -> Option<K> {
    let mut best: Option<(K, usize)> = None;
    for (k, n) in counts {
        if n == 0 {
            continue;
        }
        best = match best {
            Some((bk, bn)) if bn > n || (bn == n && bk <= k) => Some((bk, bn)),
            _ => Some((k, n)),
        };
    }
    best.map(|(k, _)| k)
}

/// Chooses the form class most frequent for (entity, mention position), backing
/// off to the global position statistics, then realizes it with the entity's
/// most frequent realization of that class, backing off to [`only_names`].
pub fn frequency_baseline(inst: &RefexInstance, template: &Template, stats: &FormStatistics) -> Vec<String> {
    let position = mention_position(template, &inst.slot_tag, &inst.entity);
    let per_entity = stats.entity_forms.get(&inst.entity).and_then(|forms| {
        argmax(
            forms
                .iter()
                .filter(|((p, _), _)| *p == position)
                .map(|((_, c), n)| (*c, *n)),
        )
    });
    let class = per_entity
        .or_else(|| {
            argmax(
                stats
                    .global_forms
                    .iter()
                    .filter(|((p, _), _)| *p == position)
                    .map(|((_, c), n)| (*c, *n)),
            )
        })
        .unwrap_or(FormClass::Name);
    stats
        .realizations
        .get(&inst.entity)
        .and_then(|by_class| by_class.get(&class))
        .and_then(|r| argmax(r.iter().map(|(k, n)| (k.clone(), *n))))
        .unwrap_or_else(|| only_names(&inst.entity))
}

/// Per-entity statistics keyed for inspection dumps.
pub fn statistics_table(stats: &FormStatistics) -> Vec<serde_json::Value> {
    let mut rows = Vec::new();
    for (entity, forms) in &stats.entity_forms {
        let counts: HashMap<String, usize> = forms
            .iter()
            .map(|((p, c), n)| (format!("{p:?}/{c:?}").to_lowercase(), *n))
            .collect();
        rows.push(serde_json::json!({ "entity": entity, "forms": counts }));
    }
    rows
}
