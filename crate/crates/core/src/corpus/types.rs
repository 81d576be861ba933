use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token sequences are stored on disk as single space-joined strings.
pub mod tokens_as_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(tokens: &[String], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&tokens.join(" "))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.split_whitespace().map(str::to_string).collect())
    }
}

/// One referring expression to generate: the target entity in its context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefexInstance {
    pub instance_id: String,
    #[serde(with = "tokens_as_string")]
    pub pre_context: Vec<String>,
    pub entity: String,
    #[serde(with = "tokens_as_string")]
    pub pos_context: Vec<String>,
    #[serde(with = "tokens_as_string")]
    pub gold_refex: Vec<String>,
    pub template_id: String,
    pub slot_tag: String,
}

impl RefexInstance {
    pub(crate) fn validate(&self) -> Result<()> {
        let bad = |message: String| Error::InvalidInstance {
            instance: self.instance_id.clone(),
            message,
        };
        if self.gold_refex.is_empty() {
            return Err(bad("gold_refex is empty".into()));
        }
        if let Some(t) = self.gold_refex.iter().find(|t| super::vocab::is_special(t)) {
            return Err(bad(format!("gold_refex contains reserved token `{t}`")));
        }
        if self.entity.is_empty() || self.entity.split_whitespace().count() != 1 {
            return Err(bad(format!("entity `{}` is not a single token", self.entity)));
        }
        match SlotTag::parse(&self.slot_tag) {
            Some(SlotTag::Entity(_)) => Ok(()),
            _ => Err(bad(format!("slot_tag `{}` is not an entity slot", self.slot_tag))),
        }
    }
}

/// `ENTITY-<k>` or `CONST-<k>`, `k >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlotTag {
    Entity(u32),
    Const(u32),
}

impl SlotTag {
    pub fn parse(token: &str) -> Option<SlotTag> {
        let (ctor, k): (fn(u32) -> SlotTag, &str) = if let Some(k) = token.strip_prefix("ENTITY-") {
            (SlotTag::Entity, k)
        } else {
            let k = token.strip_prefix("CONST-")?;
            (SlotTag::Const, k)
        };
        if k.is_empty() || !k.bytes().all(|b| b.is_ascii_digit()) || k.starts_with('0') {
            return None;
        }
        k.parse().ok().map(ctor)
    }
}

impl fmt::Display for SlotTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotTag::Entity(k) => write!(f, "ENTITY-{k}"),
            SlotTag::Const(k) => write!(f, "CONST-{k}"),
        }
    }
}

/// A delexicalized text whose slots are filled back in at evaluation time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub template_id: String,
    #[serde(with = "tokens_as_string")]
    pub tokens: Vec<String>,
    pub original_text: String,
    pub entity_map: BTreeMap<String, String>,
    pub constant_map: BTreeMap<String, String>,
}

impl Template {
    pub(crate) fn validate(&self) -> Result<()> {
        let bad = |message: String| Error::InvalidTemplate {
            template: self.template_id.clone(),
            message,
        };
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for tok in &self.tokens {
            if let Some(tag) = SlotTag::parse(tok) {
                let in_entities = self.entity_map.contains_key(tok);
                let in_constants = self.constant_map.contains_key(tok);
                match (tag, in_entities, in_constants) {
                    (SlotTag::Entity(_), true, false) | (SlotTag::Const(_), false, true) => {}
                    _ => return Err(bad(format!("slot `{tok}` not mapped exactly once by its class"))),
                }
                *seen.entry(tok.as_str()).or_default() += 1;
            }
        }
        if let Some((tag, _)) = seen.iter().find(|(_, &n)| n > 1) {
            return Err(bad(format!("slot `{tag}` occurs more than once")));
        }
        for key in self.entity_map.keys().chain(self.constant_map.keys()) {
            if !seen.contains_key(key.as_str()) {
                return Err(bad(format!("mapped slot `{key}` does not occur in tokens")));
            }
        }
        Ok(())
    }

    /// Entity slot tags in text order.
    pub fn entity_slots(&self) -> impl Iterator<Item = &str> {
        self.tokens
            .iter()
            .filter(|t| self.entity_map.contains_key(t.as_str()))
            .map(String::as_str)
    }

    /// Fills every slot: entity slots with `refexes`, constant slots with their
    /// source strings. Tokens are joined by single spaces.
    pub fn relexicalize<S: AsRef<str>>(&self, refexes: &HashMap<String, Vec<S>>) -> Result<String> {
        let mut out: Vec<&str> = Vec::with_capacity(self.tokens.len());
        for tok in &self.tokens {
            if self.entity_map.contains_key(tok) {
                let refex = refexes.get(tok).ok_or_else(|| Error::MissingRefex {
                    template: self.template_id.clone(),
                    slot: tok.clone(),
                })?;
                out.extend(refex.iter().map(AsRef::as_ref));
            } else if let Some(c) = self.constant_map.get(tok) {
                out.push(c);
            } else {
                out.push(tok);
            }
        }
        Ok(out.join(" "))
    }
}

/// Lowercases and collapses runs of whitespace.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.jsonl",
            Split::Dev => "dev.jsonl",
            Split::Test => "test.jsonl",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!(
                "unknown split `{other}` (expected train, dev or test)"
            ))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub train: Vec<RefexInstance>,
    pub dev: Vec<RefexInstance>,
    pub test: Vec<RefexInstance>,
    pub templates: BTreeMap<String, Template>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[RefexInstance] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<RefexInstance> {
        match split {
            Split::Train => &mut self.train,
            Split::Dev => &mut self.dev,
            Split::Test => &mut self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn instances(&self) -> impl Iterator<Item = &RefexInstance> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }

    /// Checks every type invariant.
    pub fn validate(&self) -> Result<()> {
        for t in self.templates.values() {
            t.validate()?;
        }
        let mut ids = std::collections::HashSet::new();
        for inst in self.instances() {
            inst.validate()?;
            if !ids.insert(inst.instance_id.as_str()) {
                return Err(Error::DuplicateInstance(inst.instance_id.clone()));
            }
            let template = self
                .templates
                .get(&inst.template_id)
                .ok_or_else(|| Error::DanglingTemplate {
                    instance: inst.instance_id.clone(),
                    template: inst.template_id.clone(),
                })?;
            if !template.entity_map.contains_key(&inst.slot_tag) {
                return Err(Error::InvalidInstance {
                    instance: inst.instance_id.clone(),
                    message: format!(
                        "slot `{}` is not an entity slot of template `{}`",
                        inst.slot_tag, inst.template_id
                    ),
                });
            }
        }
        Ok(())
    }
}
