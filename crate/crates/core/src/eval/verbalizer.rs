use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::LanguageTag;
use crate::error::{Error, Result};

const DEFAULT_VERBALIZERS: &str = include_str!("../../data/default_verbalizers.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerbalizerEntry {
    pub label: String,
    pub surface: String,
}

/// Ordered label → surface mapping. Order decides ties.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<VerbalizerEntry>", into = "Vec<VerbalizerEntry>")]
pub struct Verbalizer {
    entries: Vec<VerbalizerEntry>,
}

impl Verbalizer {
    pub fn new(entries: Vec<VerbalizerEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Invalid("verbalizer has no labels".into()));
        }
        let mut labels = HashSet::new();
        let mut surfaces = HashSet::new();
        for e in &entries {
            if e.surface.is_empty() {
                return Err(Error::Invalid(format!("empty surface for label {:?}", e.label)));
            }
            if !labels.insert(e.label.as_str()) {
                return Err(Error::Invalid(format!("duplicate label {:?}", e.label)));
            }
            if !surfaces.insert(e.surface.as_str()) {
                return Err(Error::Invalid(format!("duplicate surface {:?}", e.surface)));
            }
        }
        Ok(Verbalizer { entries })
    }

    pub fn from_pairs(pairs: &[(&str, &str)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(label, surface)| VerbalizerEntry {
                    label: label.into(),
                    surface: surface.into(),
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[VerbalizerEntry] {
        &self.entries
    }

    pub fn labels(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.label.as_str()).collect()
    }
}

impl TryFrom<Vec<VerbalizerEntry>> for Verbalizer {
    type Error = Error;

    fn try_from(entries: Vec<VerbalizerEntry>) -> Result<Self> {
        Verbalizer::new(entries)
    }
}

impl From<Verbalizer> for Vec<VerbalizerEntry> {
    fn from(v: Verbalizer) -> Self {
        v.entries
    }
}

/// One verbalizer per prompt language, all over the same label set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Verbalizers {
    pub by_lang: BTreeMap<LanguageTag, Verbalizer>,
}

impl Verbalizers {
    pub fn new(by_lang: BTreeMap<LanguageTag, Verbalizer>) -> Result<Self> {
        let mut sets = by_lang.values().map(|v| {
            let mut l = v.labels();
            l.sort_unstable();
            l
        });
        let first = sets.next().ok_or(Error::MissingVerbalizer(String::from("(none)")))?;
        if sets.any(|s| s != first) {
            return Err(Error::Invalid("verbalizers disagree on the label set".into()));
        }
        Ok(Verbalizers { by_lang })
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let by_lang: BTreeMap<LanguageTag, Verbalizer> = serde_json::from_slice(bytes)?;
        Self::new(by_lang)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }

    /// Three-way sentiment for English and Indonesian prompts.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_VERBALIZERS.as_bytes()).expect("built-in verbalizers are valid")
    }

    pub fn builtin_json() -> &'static str {
        DEFAULT_VERBALIZERS
    }

    pub fn get(&self, prompt_lang: &LanguageTag) -> Result<&Verbalizer> {
        self.by_lang
            .get(prompt_lang)
            .ok_or_else(|| Error::MissingVerbalizer(prompt_lang.to_string()))
    }

    /// Labels in the order of the first verbalizer.
    pub fn label_set(&self) -> Vec<String> {
        let v = self.by_lang.values().next().expect("non-empty by construction");
        v.labels().into_iter().map(String::from).collect()
    }
}
